"""Search two fixture images for minimal sufficient explanations.

An explanation is a smallest set of superpixels that keeps the class
score above 90% of the full-image score while everything else is
blurred away. The demo prints every explanation found and writes the
perturbed image for the most compact one, so you can see exactly what
the classifier still gets to look at.
"""

from pathlib import Path

from gepc.backends import warmcool_backend
from gepc.imaging import blur_except, load_image, save_image, slic_segment
from gepc.msx import MsxConfig, find_msxs

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "e2e"
OUT = Path(__file__).resolve().parent / "output"

CFG = MsxConfig(p_h=0.9, beam_width=5, max_subset_size=7, blur_sigma=4.0)


def explain(name):
    image = load_image(FIXTURES / "images" / f"{name}.png")
    seg = slic_segment(image, n_segments=18)
    backend = warmcool_backend(image, seg)
    scores = backend.classify(image)
    predicted = scores.top1()
    print(f"\n{name}: class {predicted} with score {scores.scores[predicted]:.3f}")

    msxs = find_msxs(image, seg, backend, predicted, CFG)
    if not msxs:
        print("  no sufficient subset within the size budget")
        return
    for m in msxs:
        ids = sorted(m.segments)
        print(f"  keep {ids} -> {m.score_ratio:.3f} of the full score")

    OUT.mkdir(exist_ok=True)
    dest = OUT / f"03_{name}_msx.png"
    save_image(blur_except(image, seg, msxs[0].segments, CFG.blur_sigma), dest)
    print(f"  perturbed view of the top explanation: {dest}")


def main():
    for name in ("warm_01", "cool_04"):
        explain(name)


if __name__ == "__main__":
    main()
