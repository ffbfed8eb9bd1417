"""Part annotations: binary part masks with RLE serialization, per-segment
labelings, and ground-truth extraction by majority vote.

RLE convention: counts of alternating runs over the row-major flattened
mask, starting with a run of zeros (the first count may be 0 when the mask
opens with ones); counts sum to width * height.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .imaging import SegmentMap

BACKGROUND = "background"


def rle_encode(mask) -> list:
    arr = np.asarray(mask, dtype=bool).ravel()
    if arr.size == 0:
        raise InvalidInputError("mask is empty")
    changes = np.flatnonzero(arr[1:] != arr[:-1]) + 1
    bounds = np.concatenate(([0], changes, [arr.size]))
    counts = np.diff(bounds).tolist()
    if arr[0]:
        counts = [0] + counts
    return [int(c) for c in counts]


def rle_decode(counts, height: int, width: int) -> np.ndarray:
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise InvalidInputError("RLE counts must be non-negative")
    if sum(counts) != height * width:
        raise InvalidInputError(
            f"RLE counts sum to {sum(counts)}, expected {height * width}"
        )
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape(height, width)


@dataclass(frozen=True, eq=False)
class PartMask:
    label: str
    mask: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mask, dtype=bool)
        if arr.ndim != 2:
            raise InvalidInputError(f"part mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "mask", arr)
        object.__setattr__(self, "label", str(self.label))


class PartAnnotation:
    """Named, non-overlapping part masks over one image."""

    def __init__(self, image_id, width: int, height: int, parts):
        self.image_id = image_id
        self.width = int(width)
        self.height = int(height)
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("annotation dims must be >= 1")
        parts = tuple(parts)
        seen = set()
        # label grid: -1 background, else part index
        grid = np.full((self.height, self.width), -1, dtype=np.int32)
        for idx, part in enumerate(parts):
            if part.label == BACKGROUND:
                raise InvalidInputError(f"part label {BACKGROUND!r} is reserved")
            if not part.label:
                raise InvalidInputError("part label must be non-empty")
            if part.label in seen:
                raise InvalidInputError(f"duplicate part label {part.label!r}")
            seen.add(part.label)
            if part.mask.shape != (self.height, self.width):
                raise InvalidInputError(
                    f"mask for {part.label!r} has shape {part.mask.shape}, "
                    f"annotation is {self.height}x{self.width}"
                )
            if (grid[part.mask] != -1).any():
                raise InvalidInputError(f"part {part.label!r} overlaps another part")
            grid[part.mask] = idx
        self.parts = parts
        self._grid = grid

    @property
    def labels(self) -> tuple:
        return tuple(p.label for p in self.parts)

    def label_at(self, x: float, y: float) -> str:
        """Part label at image coordinate (x, y); floor to a pixel, clip to bounds."""
        j = min(max(int(np.floor(x)), 0), self.width - 1)
        i = min(max(int(np.floor(y)), 0), self.height - 1)
        idx = self._grid[i, j]
        return BACKGROUND if idx < 0 else self.parts[idx].label

    def label_grid(self) -> np.ndarray:
        """Read-only (H, W) grid of part indices, -1 for background."""
        grid = self._grid.view()
        grid.flags.writeable = False
        return grid

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "parts": [
                {"label": p.label, "mask_rle": rle_encode(p.mask)} for p in self.parts
            ],
        }

    @classmethod
    def from_json_dict(cls, doc) -> "PartAnnotation":
        try:
            width, height = int(doc["width"]), int(doc["height"])
            parts = tuple(
                PartMask(p["label"], rle_decode(p["mask_rle"], height, width))
                for p in doc["parts"]
            )
            return cls(doc["image_id"], width, height, parts)
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed annotation document ({exc})") from exc

    def save(self, path) -> None:
        text = json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    @classmethod
    def load(cls, path) -> "PartAnnotation":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class PartLabeling:
    """Per-segment part labels (segment id = index) with match confidences."""

    labels: tuple
    confidences: tuple

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        confidences = tuple(float(c) for c in self.confidences)
        if not labels:
            raise InvalidInputError("labeling must cover at least one segment")
        if len(labels) != len(confidences):
            raise InvalidInputError(
                f"{len(labels)} labels but {len(confidences)} confidences"
            )
        if any(not np.isfinite(c) or c < 0 for c in confidences):
            raise InvalidInputError("confidences must be finite and >= 0")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "confidences", confidences)

    @property
    def n_segments(self) -> int:
        return len(self.labels)


def ground_truth_labeling(ann: PartAnnotation, seg: SegmentMap) -> PartLabeling:
    """Label each segment by majority pixel vote; any tie for the maximum
    count (including ties with background) resolves to background."""
    if seg.labels.shape != (ann.height, ann.width):
        raise InvalidInputError(
            f"segment map {seg.labels.shape} does not match annotation "
            f"{(ann.height, ann.width)}"
        )
    grid = ann._grid
    n_parts = len(ann.parts)
    labels = []
    for sid in range(seg.n_segments):
        votes = grid[seg.labels == sid]
        counts = np.bincount(votes + 1, minlength=n_parts + 1)
        best = counts.max()
        winners = np.flatnonzero(counts == best)
        if winners.size != 1 or winners[0] == 0:
            labels.append(BACKGROUND)
        else:
            labels.append(ann.parts[winners[0] - 1].label)
    return PartLabeling(tuple(labels), tuple(1.0 for _ in labels))
