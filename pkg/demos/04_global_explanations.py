"""Compress per-image explanations into per-class decision lists.

Runs the library end to end on the 20 fixture images: part labels are
transferred from the gallery, every image is searched for minimal
sufficient explanations, and the training split's explanations are
covered greedily by symbolic rules. Held-out coverage is printed for
the part-based and the relational reading of the same explanations.
"""

from pathlib import Path

from gepc.annotations import PartAnnotation
from gepc.backends import warmcool_backend
from gepc.correspondence import (
    OffsetSpace,
    build_hyperimage,
    match_hyperpixels,
    transfer_part_labels,
)
from gepc.cover import (
    ExplanationFamily,
    ImageExplanations,
    evaluate_coverage,
    greedy_set_cover,
    split_train_test,
)
from gepc.imaging import load_image, slic_segment
from gepc.msx import MsxConfig, find_msxs
from gepc.reporting import rule_label
from gepc.retrieval import GalleryEntry, GalleryIndex, nearest_gallery
from gepc.symbolic import relational_msx, symbolize_msx

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "e2e"
LAYERS = (0, 1)
MSX_CFG = MsxConfig(p_h=0.9, beam_width=5, max_subset_size=7, blur_sigma=4.0)


def build_gallery():
    entries = []
    hyper = {}
    annotations = {}
    for path in sorted((FIXTURES / "gallery").glob("*.png")):
        image = load_image(path)
        backend = warmcool_backend(image)
        entries.append(
            GalleryEntry(
                image_id=path.stem,
                class_id=backend.classify(image).top1(),
                embedding=backend.pooled_embedding(image),
                annotation_path=f"{path.stem}.json",
            )
        )
        hyper[path.stem] = build_hyperimage(backend.extract_features(image, LAYERS))
        annotations[path.stem] = PartAnnotation.load(
            FIXTURES / "annotations" / f"{path.stem}.json"
        )
    return GalleryIndex(entries), hyper, annotations


def explain_image(path, index, hyper, annotations):
    image = load_image(path)
    seg = slic_segment(image, n_segments=18)
    backend = warmcool_backend(image, seg)
    predicted = backend.classify(image).top1()

    gallery_id, _ = nearest_gallery(
        backend.pooled_embedding(image), index, class_filter=predicted
    )[0]
    query_hi = build_hyperimage(backend.extract_features(image, LAYERS))
    matches = match_hyperpixels(query_hi, hyper[gallery_id], OffsetSpace(16), d=1.0)
    labeling = transfer_part_labels(
        seg, query_hi, hyper[gallery_id], annotations[gallery_id], matches
    )

    symbolic, relational = [], []
    for m in find_msxs(image, seg, backend, predicted, MSX_CFG):
        s = symbolize_msx(m, labeling)
        if s is not None and s not in symbolic:
            symbolic.append(s)
        r = relational_msx(m, labeling, seg)
        if r is not None and r not in relational:
            relational.append(r)
    return predicted, ImageExplanations(path.stem, tuple(symbolic), tuple(relational))


def main():
    index, hyper, annotations = build_gallery()
    explanations = {}
    classes = {}
    for path in sorted((FIXTURES / "images").glob("*.png")):
        classes[path.stem], explanations[path.stem] = explain_image(
            path, index, hyper, annotations
        )
    print(f"explained {len(explanations)} images")

    train, test = split_train_test(classes, ratio=0.7, seed=0)
    print(f"split: {len(train)} train / {len(test)} test")

    for mode in ("parts", "relational"):
        print(f"\n=== {mode} mode ===")
        for cls in sorted(set(classes.values())):
            train_expl = [
                explanations[i]
                for i in train
                if classes[i] == cls and explanations[i].of_mode(mode)
            ]
            if not train_expl:
                print(f"class {cls}: no explained training images")
                continue
            dlist = greedy_set_cover(ExplanationFamily.build(train_expl, mode))
            print(f"class {cls} decision list ({len(train_expl)} train images):")
            for rule, count in dlist.entries:
                print(f"  {rule_label(rule):<42s} covers {count} new")

            test_expl = [explanations[i] for i in test if classes[i] == cls]
            if test_expl:
                report = evaluate_coverage(dlist, test_expl, mode)
                print(
                    f"  held-out: {report.covered_proportion:.0%} covered, "
                    f"{report.uncovered_count} uncovered, "
                    f"{report.no_explanation_count} without explanation"
                )


if __name__ == "__main__":
    main()
