"""Segment one fixture image into superpixels and inspect the result.

Writes a boundary overlay next to some terminal statistics so you can
see what the rest of the pipeline works with.
"""

from pathlib import Path

import numpy as np

from gepc.imaging import load_image, save_image, slic_segment

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(__file__).resolve().parent / "output"


def boundary_overlay(image, labels):
    """Paint segment boundaries yellow on a copy of the image."""
    edges = np.zeros(labels.shape, dtype=bool)
    edges[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edges[1:, :] |= labels[1:, :] != labels[:-1, :]
    out = image.copy()
    out[edges] = (1.0, 0.9, 0.1)
    return out


def main():
    path = ROOT / "tests" / "fixtures" / "e2e" / "images" / "warm_02.png"
    image = load_image(path)
    seg = slic_segment(image, n_segments=18)

    print(f"image: {path.name} ({image.shape[1]}x{image.shape[0]})")
    print(f"requested 18 superpixels, got {seg.n_segments}")
    areas = [s.area for s in seg.segments]
    print(f"areas: min {min(areas)}, median {sorted(areas)[len(areas) // 2]}, max {max(areas)}")
    for s in seg.segments[:5]:
        print(
            f"  segment {s.id}: area {s.area:4d}, centroid ({s.cx:5.1f}, {s.cy:5.1f}),"
            f" {len(s.neighbors)} neighbors"
        )
    print("  ...")

    OUT.mkdir(exist_ok=True)
    dest = OUT / "01_boundaries.png"
    save_image(boundary_overlay(image, seg.labels), dest)
    print(f"boundary overlay written to {dest}")


if __name__ == "__main__":
    main()
