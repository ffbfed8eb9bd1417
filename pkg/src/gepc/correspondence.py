"""Hyperpixel correspondence between a query image and an annotated gallery image.

A hyperimage stacks several feature maps into one grid of deep descriptors:
the first (spatially largest) map fixes the grid, every deeper map is
bilinearly upsampled to it, and channels are concatenated.  Matching scores
each query/gallery position pair by clamped cosine similarity raised to an
exponent, then reweights that appearance term by a Hough vote: every pair
deposits its appearance weight into a hard bin over normalized spatial
offsets, and a pair's final confidence is its appearance times the total
vote mass of its own bin.  Part labels travel along the best matches, from
query segment centroids to annotated gallery pixels.
"""

from dataclasses import dataclass

import numpy as np

from .annotations import PartAnnotation, PartLabeling
from .backends import FeatureStack
from .errors import InvalidInputError
from .imaging import SegmentMap, resize_bilinear


@dataclass(frozen=True, eq=False)
class Hyperimage:
    """Stacked multi-layer descriptors on the base grid, one row per position.

    Positions are row-major over the base grid; position p = i * base_w + j
    sits at image coordinates coords[p] = (x, y), the center of base cell
    (i, j) mapped into the source image.
    """

    base_h: int
    base_w: int
    depth: int
    features: np.ndarray
    coords: np.ndarray
    image_height: int
    image_width: int

    def __post_init__(self):
        if self.base_h < 1 or self.base_w < 1 or self.depth < 1:
            raise InvalidInputError("hyperimage dims must be >= 1")
        feats = np.asarray(self.features, dtype=np.float32)
        coords = np.asarray(self.coords, dtype=np.float64)
        n = self.base_h * self.base_w
        if feats.shape != (n, self.depth):
            raise InvalidInputError(
                f"features must have shape {(n, self.depth)}, got {feats.shape}"
            )
        if coords.shape != (n, 2):
            raise InvalidInputError(f"coords must have shape {(n, 2)}, got {coords.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features must be finite")
        if (
            np.any(coords[:, 0] < 0)
            or np.any(coords[:, 0] > self.image_width)
            or np.any(coords[:, 1] < 0)
            or np.any(coords[:, 1] > self.image_height)
        ):
            raise InvalidInputError("coords must lie within image bounds")
        feats.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "coords", coords)

    @property
    def n_positions(self) -> int:
        return self.base_h * self.base_w


@dataclass(frozen=True)
class OffsetSpace:
    """Hard binning of normalized offsets [-1, 1]^2 into bin_count x bin_count cells."""

    bin_count: int = 16

    def __post_init__(self):
        if self.bin_count < 1:
            raise InvalidInputError("bin_count must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.bin_count * self.bin_count

    def bin_index(self, dx, dy):
        """Flat bin index for offsets; values beyond [-1, 1] clamp to edge bins."""
        bx = np.floor((np.asarray(dx, dtype=np.float64) + 1.0) / 2.0 * self.bin_count)
        by = np.floor((np.asarray(dy, dtype=np.float64) + 1.0) / 2.0 * self.bin_count)
        bx = np.clip(bx.astype(np.int64), 0, self.bin_count - 1)
        by = np.clip(by.astype(np.int64), 0, self.bin_count - 1)
        return by * self.bin_count + bx


@dataclass(frozen=True, eq=False)
class MatchTable:
    """Best gallery position and its confidence for every query position."""

    best: np.ndarray
    confidence: np.ndarray
    n_gallery: int

    def __post_init__(self):
        best = np.asarray(self.best, dtype=np.int64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if best.ndim != 1 or best.shape != conf.shape:
            raise InvalidInputError("best and confidence must be equal-length vectors")
        if best.size and (best.min() < 0 or best.max() >= self.n_gallery):
            raise InvalidInputError("best indices must address gallery positions")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0):
            raise InvalidInputError("confidences must be finite and >= 0")
        best.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "best", best)
        object.__setattr__(self, "confidence", conf)

    @property
    def n_query(self) -> int:
        return int(self.best.size)


def build_hyperimage(stack: FeatureStack) -> Hyperimage:
    """Assemble a hyperimage from a feature stack.

    The first layer is the base; every other layer is bilinearly upsampled
    to the base dims and channel-concatenated.  A layer spatially larger
    than the base is rejected.
    """
    base = stack.layers[0]
    base_h, base_w = base.values.shape[:2]
    planes = [base.values]
    for fm in stack.layers[1:]:
        h, w = fm.values.shape[:2]
        if h > base_h or w > base_w:
            raise InvalidInputError(
                f"layer {fm.layer_id} is {h}x{w}, larger than base {base_h}x{base_w}"
            )
        if (h, w) == (base_h, base_w):
            planes.append(fm.values)
        else:
            planes.append(resize_bilinear(fm.values, base_h, base_w))
    features = np.concatenate(planes, axis=2).reshape(base_h * base_w, -1)

    xs = (np.arange(base_w, dtype=np.float64) + 0.5) * (stack.image_width / base_w)
    ys = (np.arange(base_h, dtype=np.float64) + 0.5) * (stack.image_height / base_h)
    grid_x, grid_y = np.meshgrid(xs, ys)
    coords = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
    return Hyperimage(
        base_h=int(base_h),
        base_w=int(base_w),
        depth=int(features.shape[1]),
        features=features,
        coords=coords,
        image_height=stack.image_height,
        image_width=stack.image_width,
    )


def appearance_confidence(f, f_prime, d: float = 1.0) -> float:
    """Clamped cosine similarity raised to d; zero vectors score 0 by convention."""
    a = np.asarray(f, dtype=np.float64)
    b = np.asarray(f_prime, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise InvalidInputError(f"feature dims differ: {a.shape} vs {b.shape}")
    if d <= 0:
        raise InvalidInputError(f"exponent must be positive, got {d}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    cos = float(np.dot(a, b)) / (na * nb)
    return float(max(0.0, cos) ** d)


def _appearance_matrix(query_feats, gallery_feats, d: float) -> np.ndarray:
    def unit_rows(m):
        m = m.astype(np.float64)
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)

    cos = unit_rows(query_feats) @ unit_rows(gallery_feats).T
    np.maximum(cos, 0.0, out=cos)
    if d != 1.0:
        np.power(cos, d, out=cos)
    return cos


def match_hyperpixels(
    query: Hyperimage,
    gallery: Hyperimage,
    offsets: OffsetSpace | None = None,
    d: float = 1.0,
) -> MatchTable:
    """Match every query position to its best gallery position.

    Pair confidence = appearance * vote mass of the pair's offset bin, where
    every pair first deposits its appearance weight into the bin of its
    normalized offset (gallery coord minus query coord, each divided by its
    own image dims).  Ties at the argmax fall to the smallest gallery index.
    """
    if offsets is None:
        offsets = OffsetSpace()
    if query.depth != gallery.depth:
        raise InvalidInputError(
            f"hyperimage depths differ: {query.depth} vs {gallery.depth}"
        )
    if d <= 0:
        raise InvalidInputError(f"exponent must be positive, got {d}")

    appearance = _appearance_matrix(query.features, gallery.features, d)
    qn = query.coords / np.array([query.image_width, query.image_height])
    gn = gallery.coords / np.array([gallery.image_width, gallery.image_height])
    bins = offsets.bin_index(
        gn[None, :, 0] - qn[:, None, 0], gn[None, :, 1] - qn[:, None, 1]
    )
    votes = np.bincount(bins.ravel(), weights=appearance.ravel(), minlength=offsets.n_bins)
    confidence = appearance * votes[bins]
    best = np.argmax(confidence, axis=1)
    return MatchTable(
        best=best,
        confidence=confidence[np.arange(best.size), best],
        n_gallery=gallery.n_positions,
    )


def transfer_part_labels(
    query_seg: SegmentMap,
    query_hi: Hyperimage,
    gallery_hi: Hyperimage,
    gallery_ann: PartAnnotation,
    matches: MatchTable,
) -> PartLabeling:
    """Label each query segment via its centroid's best-matched gallery pixel.

    The segment centroid snaps to the nearest hyperpixel (ties to the smaller
    grid index), its best match gives a gallery image coordinate, and the
    annotation's label there is transferred; coordinates outside every part
    read as "background".
    """
    if (gallery_ann.height, gallery_ann.width) != (
        gallery_hi.image_height,
        gallery_hi.image_width,
    ):
        raise InvalidInputError(
            f"annotation is {gallery_ann.width}x{gallery_ann.height} but gallery "
            f"image is {gallery_hi.image_width}x{gallery_hi.image_height}"
        )
    if (query_seg.height, query_seg.width) != (
        query_hi.image_height,
        query_hi.image_width,
    ):
        raise InvalidInputError(
            f"segment map is {query_seg.width}x{query_seg.height} but query "
            f"image is {query_hi.image_width}x{query_hi.image_height}"
        )
    if matches.n_query != query_hi.n_positions or matches.n_gallery != gallery_hi.n_positions:
        raise InvalidInputError("match table was not built from these hyperimages")

    labels = []
    confidences = []
    for seg in query_seg.segments:
        d2 = (query_hi.coords[:, 0] - seg.cx) ** 2 + (query_hi.coords[:, 1] - seg.cy) ** 2
        p = int(np.argmin(d2))
        p_prime = int(matches.best[p])
        x, y = gallery_hi.coords[p_prime]
        labels.append(gallery_ann.label_at(float(x), float(y)))
        confidences.append(float(matches.confidence[p]))
    return PartLabeling(labels=tuple(labels), confidences=tuple(confidences))


def label_transfer_accuracy(predicted: PartLabeling, truth: PartLabeling) -> float:
    """Fraction of segments whose predicted label equals the true label."""
    if predicted.n_segments != truth.n_segments:
        raise InvalidInputError(
            f"labelings cover {predicted.n_segments} vs {truth.n_segments} segments"
        )
    hits = sum(1 for a, b in zip(predicted.labels, truth.labels) if a == b)
    return hits / predicted.n_segments
