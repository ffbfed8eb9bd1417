"""Image I/O, SLIC superpixel segmentation, segment geometry, and blur masking.

Images are float32 arrays of shape (height, width, 3) with intensities in
[0, 1]. Pixel (i, j) covers the unit square [j, j+1) x [i, i+1) of the image
plane, so its center sits at (x, y) = (j + 0.5, i + 0.5); centroids and
hyperpixel coordinates elsewhere in the toolkit follow the same convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage
from scipy import ndimage

from .errors import InvalidInputError

# sRGB (D65) -> XYZ matrix and reference white, standard CIE values.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_WHITE = np.array([0.95047, 1.0, 1.08883], dtype=np.float64)

# Connectivity structure for 4-connected component labeling.
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) float-in-[0,1] contract and return a float32 view."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("image must have at least one pixel")
    if not np.isfinite(arr).all():
        raise InvalidInputError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("image intensities must lie in [0, 1]")
    return arr.astype(np.float32, copy=False)


def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to a float32 RGB array in [0, 1]."""
    with _PILImage.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return (rgb.astype(np.float32) / 255.0).clip(0.0, 1.0)


def save_image(image: np.ndarray, path) -> None:
    arr = validate_image(image)
    rgb = np.round(arr * 255.0).astype(np.uint8)
    _PILImage.fromarray(rgb, mode="RGB").save(path)


def _linear_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    return lo, src - lo


def resize_bilinear(array: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Source coordinate of output pixel o along an axis is
    (o + 0.5) * (in / out) - 0.5, clamped to the valid range. Accepts
    (H, W) or (H, W, C) arrays; returns float32.
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected (H, W[, C]) array, got shape {arr.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidInputError("output dims must be >= 1")
    h, w = arr.shape[:2]
    y0, fy = _linear_coords(h, out_h)
    x0, fx = _linear_coords(w, out_w)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    if arr.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    rows = arr[y0] * (1.0 - fy) + arr[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return out.astype(np.float32)


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Convert an sRGB image in [0, 1] to CIELAB (float64)."""
    rgb = np.asarray(image, dtype=np.float64)
    # Undo sRGB gamma.
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    f = np.where(t > eps, np.cbrt(t), (kappa * t + 16.0) / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass(frozen=True)
class Segment:
    """Geometry of one superpixel: centroid in image coordinates, pixel count, 4-neighbors."""

    id: int
    cx: float
    cy: float
    area: int
    neighbors: tuple[int, ...]


@dataclass(frozen=True)
class SegmentMap:
    """Per-pixel segment ids (0..k-1) plus per-segment geometry."""

    labels: np.ndarray
    segments: tuple[Segment, ...]

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def segment_ids(self) -> frozenset[int]:
        return frozenset(s.id for s in self.segments)

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "labels": [int(v) for v in self.labels.ravel()],
            "segments": [
                {
                    "id": s.id,
                    "cx": s.cx,
                    "cy": s.cy,
                    "area": s.area,
                    "neighbors": list(s.neighbors),
                }
                for s in self.segments
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SegmentMap":
        h, w = int(data["height"]), int(data["width"])
        labels = np.asarray(data["labels"], dtype=np.int32).reshape(h, w)
        segments = tuple(
            Segment(
                id=int(s["id"]),
                cx=float(s["cx"]),
                cy=float(s["cy"]),
                area=int(s["area"]),
                neighbors=tuple(int(n) for n in s["neighbors"]),
            )
            for s in data["segments"]
        )
        return cls(labels=labels, segments=segments)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SegmentMap":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _adjacency_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    h_a, h_b = labels[:, :-1], labels[:, 1:]
    v_a, v_b = labels[:-1, :], labels[1:, :]
    for a, b in ((h_a, h_b), (v_a, v_b)):
        diff = a != b
        if diff.any():
            lo = np.minimum(a[diff], b[diff])
            hi = np.maximum(a[diff], b[diff])
            pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def build_segment_map(labels: np.ndarray) -> SegmentMap:
    """Construct a SegmentMap (geometry + adjacency) from a raw label array.

    Labels must already be 0..k-1 with every id present; connectivity is the
    caller's responsibility (slic_segment enforces it for its own output).
    """
    labels = np.ascontiguousarray(np.asarray(labels, dtype=np.int32))
    if labels.ndim != 2 or labels.size == 0:
        raise InvalidInputError("label array must be non-empty and 2-D")
    k = int(labels.max()) + 1
    counts = np.bincount(labels.ravel(), minlength=k)
    if labels.min() < 0 or (counts == 0).any():
        raise InvalidInputError("segment ids must form 0..k-1 with no gaps")
    ii, jj = np.indices(labels.shape)
    sum_x = np.bincount(labels.ravel(), weights=(jj + 0.5).ravel(), minlength=k)
    sum_y = np.bincount(labels.ravel(), weights=(ii + 0.5).ravel(), minlength=k)
    pairs = _adjacency_pairs(labels)
    neighbor_sets: list[set[int]] = [set() for _ in range(k)]
    for a, b in pairs:
        neighbor_sets[a].add(b)
        neighbor_sets[b].add(a)
    segments = tuple(
        Segment(
            id=i,
            cx=float(sum_x[i] / counts[i]),
            cy=float(sum_y[i] / counts[i]),
            area=int(counts[i]),
            neighbors=tuple(sorted(neighbor_sets[i])),
        )
        for i in range(k)
    )
    return SegmentMap(labels=labels, segments=segments)


def segment_adjacency(seg: SegmentMap) -> set[tuple[int, int]]:
    """All unordered segment pairs sharing a 4-neighbor pixel boundary."""
    return _adjacency_pairs(seg.labels)


def _init_grid(k: int, h: int, w: int) -> tuple[int, int]:
    """Pick a rows x cols seeding grid whose count approximates k.

    Among grids within 15% of the requested count the squarest cells win
    (then wider grids), so e.g. k=2 on a square image seeds two side-by-side
    centers while k=11 avoids a degenerate 1x11 strip.
    """
    tol = math.floor(0.15 * k)
    best = None
    for rows in range(1, min(k, h) + 1):
        cols = min(max(int(round(k / rows)), 1), w)
        err = abs(rows * cols - k)
        aspect = abs(math.log((rows / h) / (cols / w)))
        key = (err > tol, aspect, err, -cols)
        if best is None or key < best[0]:
            best = (key, rows, cols)
    return best[1], best[2]


def _lowest_gradient_shift(lab: np.ndarray, cy: int, cx: int) -> tuple[int, int]:
    """Move a seed to the lowest-gradient pixel in its 3x3 neighborhood."""
    h, w = lab.shape[:2]
    best = None
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y, x = cy + dy, cx + dx
            if not (0 < y < h - 1 and 0 < x < w - 1):
                continue
            g = float(
                np.sum((lab[y, x + 1] - lab[y, x - 1]) ** 2)
                + np.sum((lab[y + 1, x] - lab[y - 1, x]) ** 2)
            )
            if best is None or g < best[0]:
                best = (g, y, x)
    if best is None:
        return cy, cx
    return best[1], best[2]


def slic_segment(
    image: np.ndarray,
    n_segments: int = 49,
    compactness: float = 10.0,
    max_iters: int = 10,
    seed: int = 0,
) -> SegmentMap:
    """Segment an image into roughly n_segments compact superpixels.

    Iterative 5-D clustering over (L, a, b, x, y) with squared distance
    d_lab^2 + (compactness / S)^2 * d_xy^2 where S = sqrt(N / n_segments),
    restricted to a 2S window around each center. Small disconnected
    remnants (< S^2 / 4 pixels) are merged into their largest neighbor,
    further merges keep the segment count within 20% of n_segments, and ids
    are relabeled 0..k-1 in raster order. Fully deterministic; the seed
    argument is accepted for interface stability but the algorithm draws no
    random numbers.
    """
    arr = validate_image(image)
    h, w = arr.shape[:2]
    n_pixels = h * w
    if n_segments < 1 or n_segments > n_pixels:
        raise InvalidInputError(
            f"n_segments must be in [1, {n_pixels}], got {n_segments}"
        )
    if compactness <= 0:
        raise InvalidInputError("compactness must be positive")
    del seed  # deterministic without randomness

    if n_segments == 1:
        return build_segment_map(np.zeros((h, w), dtype=np.int32))

    lab = rgb_to_lab(arr)
    spacing = math.sqrt(n_pixels / n_segments)
    ratio2 = (compactness / spacing) ** 2

    rows, cols = _init_grid(n_segments, h, w)
    centers = []
    for r in range(rows):
        for c in range(cols):
            cy = min(int((r + 0.5) * h / rows), h - 1)
            cx = min(int((c + 0.5) * w / cols), w - 1)
            cy, cx = _lowest_gradient_shift(lab, cy, cx)
            centers.append([lab[cy, cx, 0], lab[cy, cx, 1], lab[cy, cx, 2], cy, cx])
    centers = np.asarray(centers, dtype=np.float64)

    yy, xx = np.indices((h, w))
    half = max(int(round(2.0 * spacing)), 1)
    assign = np.zeros((h, w), dtype=np.int32)
    for _ in range(max(max_iters, 1)):
        best_d = np.full((h, w), np.inf)
        assign.fill(-1)
        for ci in range(len(centers)):
            cl, ca, cb, cy, cx = centers[ci]
            y0, y1 = max(int(cy) - half, 0), min(int(cy) + half + 1, h)
            x0, x1 = max(int(cx) - half, 0), min(int(cx) + half + 1, w)
            win = lab[y0:y1, x0:x1]
            d_lab = (
                (win[..., 0] - cl) ** 2
                + (win[..., 1] - ca) ** 2
                + (win[..., 2] - cb) ** 2
            )
            d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = d_lab + ratio2 * d_xy
            closer = d < best_d[y0:y1, x0:x1]
            best_d[y0:y1, x0:x1][closer] = d[closer]
            assign[y0:y1, x0:x1][closer] = ci
        if (assign < 0).any():
            # Pixels outside every search window: nearest center spatially.
            miss = assign < 0
            my, mx = yy[miss], xx[miss]
            d = (my[:, None] - centers[None, :, 3]) ** 2 + (
                mx[:, None] - centers[None, :, 4]
            ) ** 2
            assign[miss] = np.argmin(d, axis=1)
        flat = assign.ravel()
        counts = np.bincount(flat, minlength=len(centers)).astype(np.float64)
        nonempty = counts > 0
        for dim, values in enumerate(
            (lab[..., 0], lab[..., 1], lab[..., 2], yy, xx)
        ):
            sums = np.bincount(flat, weights=values.ravel(), minlength=len(centers))
            centers[nonempty, dim] = sums[nonempty] / counts[nonempty]

    labels = _enforce_connectivity(assign, n_segments)
    return build_segment_map(labels)


def _enforce_connectivity(assign: np.ndarray, n_segments: int) -> np.ndarray:
    """Split clusters into 4-connected components and absorb small remnants.

    A second merge pass folds the smallest segments into their largest
    neighbors until at most floor(1.15 * n_segments) remain, keeping the
    final count within the 20% contract when clusters fragment.
    """
    h, w = assign.shape
    min_size = (h * w / n_segments) / 4.0

    comp = np.full((h, w), -1, dtype=np.int32)
    n_comp = 0
    for lab_id in range(int(assign.max()) + 1):
        mask = assign == lab_id
        if not mask.any():
            continue
        labeled, n = ndimage.label(mask, structure=_CROSS)
        comp[mask] = labeled[mask] + n_comp - 1
        n_comp += n

    sizes = np.bincount(comp.ravel(), minlength=n_comp).astype(np.int64)
    neighbors: list[set[int]] = [set() for _ in range(n_comp)]
    for a, b in _adjacency_pairs(comp):
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = list(range(n_comp))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    root_sizes = sizes.copy()
    root_neighbors = neighbors

    def merge_into_largest_neighbor(rc: int) -> bool:
        nbr_roots = sorted({find(n) for n in root_neighbors[rc]} - {rc})
        if not nbr_roots:
            return False
        target = max(nbr_roots, key=lambda r: (root_sizes[r], -r))
        parent[rc] = target
        root_sizes[target] += root_sizes[rc]
        merged = root_neighbors[target] | root_neighbors[rc]
        root_neighbors[target] = {n for n in merged if find(n) != target}
        return True

    for c in range(n_comp):
        rc = find(c)
        if root_sizes[rc] >= min_size:
            continue
        merge_into_largest_neighbor(rc)

    live = sorted({find(c) for c in range(n_comp)})
    budget = max(math.floor(1.15 * n_segments), 1)
    while len(live) > budget:
        rc = min(live, key=lambda r: (root_sizes[r], r))
        if not merge_into_largest_neighbor(rc):
            break
        live.remove(rc)

    roots = np.array([find(c) for c in range(n_comp)], dtype=np.int32)
    comp_roots = roots[comp]
    # Relabel surviving roots 0..k-1 in raster order of first appearance.
    order = {}
    for r in comp_roots.ravel():
        if r not in order:
            order[int(r)] = len(order)
    remap = np.zeros(n_comp, dtype=np.int32)
    for r, new in order.items():
        remap[r] = new
    return remap[comp_roots]


def blur_except(
    image: np.ndarray, seg: SegmentMap, keep: frozenset | set, sigma: float
) -> np.ndarray:
    """Blur everything outside the kept segments.

    The whole image is Gaussian-blurred (std sigma, reflect boundary,
    kernel truncated at 4 sigma) and composited under the kept segments,
    whose pixels are returned bit-identical to the input.
    """
    arr = validate_image(image)
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    keep = frozenset(int(k) for k in keep)
    unknown = keep - seg.segment_ids()
    if unknown:
        raise InvalidInputError(f"unknown segment ids in keep set: {sorted(unknown)}")
    if seg.labels.shape != arr.shape[:2]:
        raise InvalidInputError("segment map does not match image dimensions")

    blurred64 = np.stack(
        [
            ndimage.gaussian_filter(
                arr[..., c].astype(np.float64), sigma=sigma, mode="reflect", truncate=4.0
            )
            for c in range(3)
        ],
        axis=-1,
    )
    blurred = np.clip(blurred64, 0.0, 1.0).astype(np.float32)
    if not keep:
        return blurred
    mask = np.isin(seg.labels, sorted(keep))
    return np.where(mask[..., None], arr, blurred)
