"""Model backends: class scoring, multi-layer features, pooled embeddings.

A backend wraps the classifier under explanation. Three implementations are
provided: a synthetic oracle driven by keep-set rules (for desk tests and
brute-force verification), a precomputed store of tensors keyed by image
content hash, and an ONNX runner (see onnx_backend). All backends are
deterministic and read-only after construction, so concurrent scoring is
safe.
"""

from __future__ import annotations

import abc
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackendError, DegenerateEmbeddingError, InvalidInputError
from .imaging import SegmentMap, build_segment_map, resize_bilinear, rgb_to_lab, validate_image
from .tensorfile import tensor_from_bytes


@dataclass(frozen=True, eq=False)
class ClassScores:
    """Per-class probabilities for class ids 0..C-1; sums to 1 within 1e-5."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidInputError(f"scores must be a non-empty vector, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidInputError("scores contain non-finite values")
        if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
            raise InvalidInputError("scores must lie in [0, 1]")
        if abs(arr.sum() - 1.0) > 1e-5:
            raise InvalidInputError(f"scores sum to {arr.sum()}, expected 1 within 1e-5")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    @property
    def n_classes(self) -> int:
        return int(self.scores.size)

    def top1(self) -> int:
        return int(np.argmax(self.scores))

    def __getitem__(self, class_id: int) -> float:
        return float(self.scores[class_id])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One feature map, row-major (height, width, depth), float32."""

    layer_id: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidInputError(
                f"feature map must be (H, W, D) with all dims >= 1, got shape {arr.shape}"
            )
        object.__setattr__(self, "layer_id", int(self.layer_id))
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """Feature maps ordered shallow to deep, with the source image dims."""

    layers: tuple
    image_height: int
    image_width: int

    def __post_init__(self):
        layers = tuple(self.layers)
        ids = [fm.layer_id for fm in layers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidInputError(f"layer_ids must be strictly increasing, got {ids}")
        if self.image_height < 1 or self.image_width < 1:
            raise InvalidInputError("image dims must be >= 1")
        object.__setattr__(self, "layers", layers)

    @property
    def layer_ids(self) -> tuple:
        return tuple(fm.layer_id for fm in self.layers)

    def layer(self, layer_id: int) -> FeatureMap:
        for fm in self.layers:
            if fm.layer_id == layer_id:
                return fm
        raise InvalidInputError(f"no layer {layer_id} in stack {self.layer_ids}")


class ModelBackend(abc.ABC):
    """Interface every backend satisfies; same image always maps to same outputs."""

    symbolic_mode = False

    @property
    @abc.abstractmethod
    def n_classes(self) -> int: ...

    @property
    @abc.abstractmethod
    def class_names(self) -> tuple: ...

    @property
    @abc.abstractmethod
    def available_layers(self) -> tuple: ...

    @abc.abstractmethod
    def classify(self, image) -> ClassScores: ...

    @abc.abstractmethod
    def extract_features(self, image, layer_ids) -> FeatureStack: ...

    def pooled_embedding(self, image) -> np.ndarray:
        """Global-average-pool the deepest configured layer, L2-normalized."""
        layers = self.available_layers
        if not layers:
            raise InvalidInputError("backend has no feature layers configured")
        deepest = layers[-1]
        stack = self.extract_features(image, [deepest])
        return _gap_normalize(stack.layer(deepest).values)


def _gap_normalize(values: np.ndarray) -> np.ndarray:
    pooled = values.astype(np.float64).mean(axis=(0, 1))
    norm = float(np.linalg.norm(pooled))
    if not np.isfinite(norm) or norm <= 0.0:
        raise DegenerateEmbeddingError(
            "degenerate embedding: feature map pools to the zero vector"
        )
    return (pooled / norm).astype(np.float32)


def _normalize_layer_ids(layer_ids) -> list:
    ids = sorted({int(l) for l in layer_ids})
    if not ids:
        raise InvalidInputError("layer_ids must be non-empty")
    return ids


class KeepRule(abc.ABC):
    """Score in [0, 1] for one class as a function of the kept segment set."""

    @abc.abstractmethod
    def score(self, keep: frozenset, n_segments: int) -> float: ...


@dataclass(frozen=True)
class FractionPresentRule(KeepRule):
    """|keep intersect part_ids| / |part_ids|."""

    part_ids: frozenset

    def __post_init__(self):
        if not self.part_ids:
            raise InvalidInputError("part_ids must be non-empty")
        object.__setattr__(self, "part_ids", frozenset(int(s) for s in self.part_ids))

    def score(self, keep, n_segments):
        return len(keep & self.part_ids) / len(self.part_ids)


@dataclass(frozen=True)
class ContainsAllRule(KeepRule):
    """1.0 when every listed segment is kept, else 0.0."""

    part_ids: frozenset

    def __post_init__(self):
        if not self.part_ids:
            raise InvalidInputError("part_ids must be non-empty")
        object.__setattr__(self, "part_ids", frozenset(int(s) for s in self.part_ids))

    def score(self, keep, n_segments):
        return 1.0 if self.part_ids <= keep else 0.0


class WeightedSegmentsRule(KeepRule):
    """Sum of non-negative per-segment weights over the keep set, capped at 1."""

    def __init__(self, weights):
        items = {int(s): float(w) for s, w in dict(weights).items()}
        if any(w < 0 or not np.isfinite(w) for w in items.values()):
            raise InvalidInputError("weights must be finite and non-negative")
        self._weights = items

    def score(self, keep, n_segments):
        return min(sum(self._weights.get(s, 0.0) for s in sorted(keep)), 1.0)


class RegionCoverageRule(KeepRule):
    """Fraction of a pixel region covered by the kept segments."""

    def __init__(self, region_mask, segment_map: SegmentMap):
        mask = np.asarray(region_mask, dtype=bool)
        if mask.shape != segment_map.labels.shape:
            raise InvalidInputError("region mask dims must match the segment map")
        area = int(mask.sum())
        if area == 0:
            raise InvalidInputError("region mask is empty")
        counts = np.bincount(
            segment_map.labels[mask], minlength=segment_map.n_segments
        )
        self._fractions = counts.astype(np.float64) / area

    def score(self, keep, n_segments):
        if n_segments != self._fractions.size:
            raise InvalidInputError(
                f"rule built for {self._fractions.size} segments, scored with {n_segments}"
            )
        return float(sum(self._fractions[s] for s in sorted(keep)))


class CallableRule(KeepRule):
    """Wraps an arbitrary fn(keep, n_segments) -> float."""

    def __init__(self, fn):
        self._fn = fn

    def score(self, keep, n_segments):
        return self._fn(keep, n_segments)


class SyntheticBackend(ModelBackend):
    """Rule-table oracle over keep sets.

    Classes 0..C-2 are scored by their rules (absent rule scores 0); the
    last class is a residual max(0, 1 - sum), and scores are normalized
    only when the rule sum exceeds 1, so single-rule score ratios stay
    exact. classify() scores the full keep set unless a reference
    image/segmentation pair is configured, in which case the keep set is
    inferred by exact pixel comparison against the reference (blurred
    regions differ, kept regions are bit-identical). In symbolic mode the
    perturbation search is expected to call score_keep directly instead of
    classifying blurred images.
    """

    def __init__(
        self,
        rules,
        n_classes: int,
        n_segments: int,
        *,
        mode: str = "image",
        reference=None,
        features=None,
        class_names=None,
        match_tol: float = 0.0,
        seed: int = 0,
    ):
        if n_classes < 2:
            raise InvalidInputError("n_classes must be >= 2 (last class is the residual)")
        if n_segments < 1:
            raise InvalidInputError("n_segments must be >= 1")
        if mode not in ("image", "symbolic"):
            raise InvalidInputError(f"mode must be 'image' or 'symbolic', got {mode!r}")
        self._rules = {int(c): r for c, r in dict(rules).items()}
        for c in self._rules:
            if not 0 <= c <= n_classes - 2:
                raise InvalidInputError(
                    f"rule class {c} out of range; class {n_classes - 1} is the residual"
                )
        self._n_classes = int(n_classes)
        self._n_segments = int(n_segments)
        self._mode = mode
        self._match_tol = float(match_tol)
        self._seed = int(seed)
        if reference is not None:
            ref_img, ref_seg = reference
            ref_img = validate_image(ref_img)
            if ref_seg.labels.shape != ref_img.shape[:2]:
                raise InvalidInputError("reference segmentation does not match reference image")
            if ref_seg.n_segments != self._n_segments:
                raise InvalidInputError(
                    f"reference has {ref_seg.n_segments} segments, backend declares {n_segments}"
                )
            reference = (ref_img, ref_seg)
        self._reference = reference
        feats = {}
        for lid, spec in dict(features or {}).items():
            feats[int(lid)] = spec if callable(spec) else np.asarray(spec, dtype=np.float32)
        self._features = feats
        if class_names is None:
            class_names = tuple(f"class_{c}" for c in range(self._n_classes))
        self._class_names = tuple(str(n) for n in class_names)
        if len(self._class_names) != self._n_classes:
            raise InvalidInputError("class_names length must equal n_classes")

    @property
    def n_classes(self):
        return self._n_classes

    @property
    def class_names(self):
        return self._class_names

    @property
    def available_layers(self):
        return tuple(sorted(self._features))

    @property
    def n_segments(self):
        return self._n_segments

    @property
    def symbolic_mode(self):
        return self._mode == "symbolic"

    def classify(self, image) -> ClassScores:
        arr = validate_image(image)
        if self._reference is None:
            keep = frozenset(range(self._n_segments))
        else:
            ref_img, ref_seg = self._reference
            if arr.shape != ref_img.shape:
                raise InvalidInputError(
                    f"image shape {arr.shape} does not match reference {ref_img.shape}"
                )
            diff = np.abs(arr - ref_img).max(axis=2)
            seg_max = np.zeros(self._n_segments)
            np.maximum.at(seg_max, ref_seg.labels.ravel(), diff.ravel())
            keep = frozenset(np.flatnonzero(seg_max <= self._match_tol).tolist())
        return self.score_keep(keep)

    def score_keep(self, keep) -> ClassScores:
        """Side channel: score a keep set directly, bypassing pixel space."""
        keep = frozenset(int(s) for s in keep)
        bad = sorted(s for s in keep if not 0 <= s < self._n_segments)
        if bad:
            raise InvalidInputError(f"keep set contains unknown segment ids {bad}")
        raw = []
        for c in range(self._n_classes - 1):
            rule = self._rules.get(c)
            value = float(rule.score(keep, self._n_segments)) if rule else 0.0
            if not np.isfinite(value) or value < -1e-9 or value > 1.0 + 1e-9:
                raise InvalidInputError(
                    f"rule for class {c} returned {value}, expected a value in [0, 1]"
                )
            raw.append(min(max(value, 0.0), 1.0))
        total = sum(raw)
        if total > 1.0:
            scores = [v / total for v in raw] + [0.0]
        else:
            scores = raw + [1.0 - total]
        return ClassScores(np.asarray(scores, dtype=np.float64))

    def extract_features(self, image, layer_ids) -> FeatureStack:
        arr = validate_image(image)
        maps = []
        for lid in _normalize_layer_ids(layer_ids):
            spec = self._features.get(lid)
            if spec is None:
                raise InvalidInputError(
                    f"unknown layer id {lid}; available: {sorted(self._features)}"
                )
            values = spec(arr) if callable(spec) else spec
            maps.append(FeatureMap(lid, values))
        return FeatureStack(tuple(maps), arr.shape[0], arr.shape[1])


def content_key(image) -> str:
    """Content-address an image: sha256 over a fixed header and 8-bit pixels."""
    arr = validate_image(image)
    h, w = arr.shape[:2]
    rgb = np.round(arr * 255.0).astype(np.uint8)
    digest = hashlib.sha256()
    digest.update(b"GEPCIMG")
    digest.update(struct.pack("<II", w, h))
    digest.update(rgb.tobytes(order="C"))
    return digest.hexdigest()


class PrecomputedBackend(ModelBackend):
    """Serves tensors dumped ahead of time, keyed by image content hash.

    The store directory holds manifest.json plus one GPCT file per
    artifact; every read is checked against the manifest's sha256 so
    fixture drift surfaces as an error rather than silently wrong numbers.
    """

    def __init__(self, store_dir):
        self._dir = Path(store_dir)
        manifest_path = self._dir / "manifest.json"
        if not manifest_path.is_file():
            raise BackendError(f"{self._dir}: missing manifest.json")
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise BackendError(f"{manifest_path}: unreadable manifest ({exc})") from exc
        if manifest.get("format") != "gepc-fixture-store" or manifest.get("version") != 1:
            raise BackendError(f"{manifest_path}: not a gepc-fixture-store v1 manifest")
        try:
            self._class_names = tuple(str(n) for n in manifest["class_names"])
            self._layer_ids = tuple(int(l) for l in manifest["layer_ids"])
            self._images = dict(manifest["images"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"{manifest_path}: malformed manifest ({exc})") from exc
        if list(self._layer_ids) != sorted(set(self._layer_ids)):
            raise BackendError(f"{manifest_path}: layer_ids must be strictly increasing")
        if not self._class_names:
            raise BackendError(f"{manifest_path}: class_names is empty")
        self._cache = {}

    @property
    def n_classes(self):
        return len(self._class_names)

    @property
    def class_names(self):
        return self._class_names

    @property
    def available_layers(self):
        return self._layer_ids

    def _artifact(self, key: str, name: str) -> np.ndarray:
        cached = self._cache.get((key, name))
        if cached is not None:
            return cached
        entry = self._images.get(key)
        if entry is None:
            raise BackendError(
                f"{self._dir}: no precomputed tensors for image key {key} in store"
            )
        info = (entry.get("artifacts") or {}).get(name)
        if info is None:
            raise BackendError(f"{self._dir}: image {key} has no '{name}' artifact")
        path = self._dir / info["file"]
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise BackendError(f"{path}: cannot read tensor file ({exc})") from exc
        digest = hashlib.sha256(data).hexdigest()
        if digest != info.get("sha256"):
            raise BackendError(
                f"{path}: sha256 mismatch (manifest {info.get('sha256')}, file {digest})"
            )
        tensor = tensor_from_bytes(data, source=str(path))
        tensor.flags.writeable = False
        self._cache[(key, name)] = tensor
        return tensor

    def classify(self, image) -> ClassScores:
        arr = validate_image(image)
        scores = self._artifact(content_key(arr), "scores")
        if scores.ndim != 1:
            raise BackendError(f"{self._dir}: stored scores must be a vector")
        return ClassScores(scores.astype(np.float64))

    def extract_features(self, image, layer_ids) -> FeatureStack:
        arr = validate_image(image)
        ids = _normalize_layer_ids(layer_ids)
        unknown = [l for l in ids if l not in self._layer_ids]
        if unknown:
            raise InvalidInputError(
                f"unknown layer ids {unknown}; store provides {list(self._layer_ids)}"
            )
        key = content_key(arr)
        maps = [FeatureMap(l, self._artifact(key, f"layer{l}")) for l in ids]
        return FeatureStack(tuple(maps), arr.shape[0], arr.shape[1])

    def pooled_embedding(self, image) -> np.ndarray:
        arr = validate_image(image)
        emb = self._artifact(content_key(arr), "embedding")
        if emb.ndim != 1:
            raise BackendError(f"{self._dir}: stored embedding must be a vector")
        norm = float(np.linalg.norm(emb.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise BackendError(f"{self._dir}: stored embedding has norm {norm}, expected 1")
        return emb


def classify(backend: ModelBackend, image) -> ClassScores:
    return backend.classify(image)


def extract_features(backend: ModelBackend, image, layer_ids) -> FeatureStack:
    return backend.extract_features(image, layer_ids)


def pooled_embedding(backend: ModelBackend, image) -> np.ndarray:
    return backend.pooled_embedding(image)


WARMCOOL_CLASS_NAMES = ("warm", "cool", "other")


def _warmcool_layer(level: int):
    def features(arr: np.ndarray) -> np.ndarray:
        h = max(1, arr.shape[0] >> (level + 2))
        w = max(1, arr.shape[1] >> (level + 2))
        lab = rgb_to_lab(arr) / 100.0
        return resize_bilinear(lab, h, w).astype(np.float32)

    return features


def warmcool_backend(image, seg: SegmentMap | None = None, match_tol: float = 0.0):
    """Reference synthetic recipe: red-vs-blue pixel mass decides the class.

    Class "warm" weights each segment by its share of the image's total
    max(R - B, 0) + max(B - R, 0) mass, "cool" by the B-over-R share, and
    the third class is the residual, so full-image scores are partition
    independent and subset scores are monotone. Features are a Lab pyramid
    at quarter resolution and below (layer ids 0..3). Without a segment
    map the image is treated as a single segment, which is enough for
    classification and embeddings.
    """
    arr = validate_image(image)
    if seg is None:
        seg = build_segment_map(np.zeros(arr.shape[:2], dtype=np.int64))
    warm_px = np.maximum(arr[..., 0].astype(np.float64) - arr[..., 2], 0.0)
    cool_px = np.maximum(arr[..., 2].astype(np.float64) - arr[..., 0], 0.0)
    total = float(warm_px.sum() + cool_px.sum())
    if total <= 0.0:
        raise InvalidInputError("image has no red-blue contrast to classify")
    warm_w = np.bincount(
        seg.labels.ravel(), weights=warm_px.ravel(), minlength=seg.n_segments
    )
    cool_w = np.bincount(
        seg.labels.ravel(), weights=cool_px.ravel(), minlength=seg.n_segments
    )
    rules = {
        0: WeightedSegmentsRule({s: w / total for s, w in enumerate(warm_w)}),
        1: WeightedSegmentsRule({s: w / total for s, w in enumerate(cool_w)}),
    }
    return SyntheticBackend(
        rules,
        n_classes=3,
        n_segments=seg.n_segments,
        mode="image",
        reference=(arr, seg),
        features={level: _warmcool_layer(level) for level in range(4)},
        class_names=WARMCOOL_CLASS_NAMES,
        match_tol=match_tol,
    )
