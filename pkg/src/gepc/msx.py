"""Minimal sufficient explanation (MSX) search.

An MSX of an image for class c is a minimal set of superpixels that, kept
sharp while the rest of the image is blurred, still scores strictly more
than p_h times the class score of the unperturbed image.  Beam search adds
one segment per level to the highest-scoring incomplete subsets; any subset
that reaches sufficiency is greedily reduced until removing any single
segment would break it, and emitted.

Minimality is certified by single-element removal: no subset obtained by
dropping exactly one segment remains sufficient.  For monotone scorers this
coincides with full strict-subset minimality; in general it is a weaker
certificate, and the brute-force enumeration used by the tests measures the
agreement.

Backends flying the symbolic_mode flag are scored through their
score_keep side channel instead of pixel-space blurring, which keeps desk
checks exact; such backends may be searched with image=None, seg=None.
"""

from dataclasses import dataclass

import numpy as np

from .backends import ModelBackend
from .errors import InvalidInputError
from .imaging import SegmentMap, blur_except


@dataclass(frozen=True)
class MsxConfig:
    """Search parameters; p_h is the sufficiency threshold on the score ratio."""

    p_h: float = 0.9
    beam_width: int = 5
    max_subset_size: int = 10
    max_msx_count: int = 20
    blur_sigma: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.p_h <= 1.0:
            raise InvalidInputError(f"p_h must be in (0, 1], got {self.p_h}")
        if self.beam_width < 1:
            raise InvalidInputError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.max_subset_size < 1:
            raise InvalidInputError(
                f"max_subset_size must be >= 1, got {self.max_subset_size}"
            )
        if self.max_msx_count < 1:
            raise InvalidInputError(
                f"max_msx_count must be >= 1, got {self.max_msx_count}"
            )
        if not self.blur_sigma > 0:
            raise InvalidInputError(f"blur_sigma must be positive, got {self.blur_sigma}")


@dataclass(frozen=True)
class Msx:
    """One minimal sufficient explanation: kept segments and the score ratio achieved."""

    segments: frozenset
    score_ratio: float
    class_id: int

    def __post_init__(self):
        segments = frozenset(int(s) for s in self.segments)
        if any(s < 0 for s in segments):
            raise InvalidInputError("segment ids must be non-negative")
        ratio = float(self.score_ratio)
        if not np.isfinite(ratio) or ratio < 0:
            raise InvalidInputError(f"score_ratio must be finite and >= 0, got {ratio}")
        if self.class_id < 0:
            raise InvalidInputError(f"class_id must be non-negative, got {self.class_id}")
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "score_ratio", ratio)

    @property
    def size(self) -> int:
        return len(self.segments)


class _Evaluator:
    """Scores keep sets for one (image, class) pair, caching by keep set."""

    def __init__(self, image, seg, backend: ModelBackend, class_id: int, cfg: MsxConfig):
        if not 0 <= int(class_id) < backend.n_classes:
            raise InvalidInputError(
                f"class_id {class_id} out of range for {backend.n_classes} classes"
            )
        self._backend = backend
        self._class_id = int(class_id)
        self._cfg = cfg
        self._symbolic = bool(backend.symbolic_mode)
        self._image = image
        self._seg = seg
        if self._symbolic:
            self.n_segments = seg.n_segments if seg is not None else backend.n_segments
        else:
            if image is None or not isinstance(seg, SegmentMap):
                raise InvalidInputError(
                    "pixel-space scoring needs both the image and its segment map"
                )
            self.n_segments = seg.n_segments
        self._cache = {}
        if self._symbolic:
            full = backend.score_keep(frozenset(range(self.n_segments)))[self._class_id]
        else:
            full = backend.classify(image)[self._class_id]
        if full <= 0:
            raise InvalidInputError(
                f"class {class_id} scores {full} on the unperturbed image; "
                "sufficiency is undefined"
            )
        self.full_score = full

    def score(self, keep: frozenset) -> float:
        cached = self._cache.get(keep)
        if cached is not None:
            return cached
        if self._symbolic:
            value = self._backend.score_keep(keep)[self._class_id]
        else:
            blurred = blur_except(self._image, self._seg, keep, self._cfg.blur_sigma)
            value = self._backend.classify(blurred)[self._class_id]
        self._cache[keep] = value
        return value

    def ratio(self, keep: frozenset) -> float:
        return self.score(keep) / self.full_score

    def sufficient(self, keep: frozenset) -> bool:
        return self.score(keep) > self._cfg.p_h * self.full_score


def _as_keep(keep) -> frozenset:
    return frozenset(int(s) for s in keep)


def is_sufficient(keep, image, seg, backend, class_id, cfg: MsxConfig):
    """Whether the kept segments preserve > p_h of the full-image class score.

    Returns (sufficient, score_ratio).
    """
    ev = _Evaluator(image, seg, backend, class_id, cfg)
    keep = _as_keep(keep)
    return ev.sufficient(keep), ev.ratio(keep)


def is_minimal(keep, image, seg, backend, class_id, cfg: MsxConfig) -> bool:
    """Single-removal minimality: dropping any one segment breaks sufficiency.

    The keep set itself must be sufficient; an empty sufficient set is
    vacuously minimal.
    """
    ev = _Evaluator(image, seg, backend, class_id, cfg)
    keep = _as_keep(keep)
    if not ev.sufficient(keep):
        raise InvalidInputError("keep set is not sufficient; minimality is undefined")
    return all(not ev.sufficient(keep - {e}) for e in keep)


def _reduce(keep: frozenset, ev: _Evaluator) -> frozenset:
    """Greedily drop single segments while sufficiency holds.

    Among sufficient removals the one with the highest remaining ratio wins;
    ties go to the smallest removed id.
    """
    current = keep
    while True:
        best = None
        for e in sorted(current):
            sub = current - {e}
            if ev.sufficient(sub):
                r = ev.ratio(sub)
                if best is None or r > best[0]:
                    best = (r, sub)
        if best is None:
            return current
        current = best[1]


def find_msxs(image, seg, backend, class_id, cfg: MsxConfig):
    """All MSXs found by beam search, most compact and confident first.

    Each level grows every beam state by one segment; sufficient candidates
    are reduced by single removals and collected, the insufficient rest are
    ranked by score ratio (ties lexicographic) and the top beam_width
    survive.  A collected set strictly containing another collected set is
    dropped, so a wide enough beam leaves exactly the strict-subset-minimal
    sufficient sets.  The result is deduplicated, sorted by
    (size, -score_ratio, ids), and capped at max_msx_count.  No sufficient
    subset within max_subset_size yields an empty list.
    """
    ev = _Evaluator(image, seg, backend, class_id, cfg)
    all_ids = range(ev.n_segments)
    empty = frozenset()
    if ev.sufficient(empty):
        return [Msx(segments=empty, score_ratio=ev.ratio(empty), class_id=class_id)]

    found = {}
    beam = [empty]
    for _ in range(cfg.max_subset_size):
        candidates = {state | {e} for state in beam for e in all_ids if e not in state}
        if not candidates:
            break
        survivors = []
        for cand in sorted(candidates, key=lambda s: tuple(sorted(s))):
            if ev.sufficient(cand):
                reduced = _reduce(cand, ev)
                if reduced not in found:
                    found[reduced] = ev.ratio(reduced)
            else:
                survivors.append(cand)
        survivors.sort(key=lambda s: (-ev.ratio(s), tuple(sorted(s))))
        beam = survivors[: cfg.beam_width]
        if not beam:
            break

    msxs = [
        Msx(segments=s, score_ratio=r, class_id=class_id)
        for s, r in found.items()
        if not any(other < s for other in found)
    ]
    msxs.sort(key=lambda m: (m.size, -m.score_ratio, tuple(sorted(m.segments))))
    return msxs[: cfg.max_msx_count]


def msxs_to_json_dict(image_id, class_id, msxs) -> dict:
    """Serialize one image's MSX list; every record must carry the same class."""
    records = []
    for m in msxs:
        if m.class_id != class_id:
            raise InvalidInputError(
                f"msx for class {m.class_id} cannot be recorded under class {class_id}"
            )
        records.append(
            {"segments": sorted(m.segments), "score_ratio": float(m.score_ratio)}
        )
    return {"image_id": str(image_id), "class_id": int(class_id), "msxs": records}


def msxs_from_json_dict(data: dict):
    """Inverse of msxs_to_json_dict; returns (image_id, class_id, msxs)."""
    class_id = int(data["class_id"])
    msxs = [
        Msx(
            segments=frozenset(int(s) for s in rec["segments"]),
            score_ratio=float(rec["score_ratio"]),
            class_id=class_id,
        )
        for rec in data["msxs"]
    ]
    return str(data["image_id"]), class_id, msxs
