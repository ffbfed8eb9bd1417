"""Gallery retrieval: pick the most similar annotated image for a query.

Galleries stay small (a fixed fraction of each class), so ranking is an
exhaustive cosine scan over unit-norm pooled embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class GalleryEntry:
    image_id: object
    class_id: int
    embedding: np.ndarray
    annotation_path: str


class GalleryIndex:
    """Immutable list of annotated gallery entries with unit embeddings."""

    def __init__(self, entries):
        entries = list(entries)
        if not entries:
            raise InvalidInputError("gallery index must contain at least one entry")
        dim = None
        seen = set()
        normalized = []
        for e in entries:
            emb = np.asarray(e.embedding, dtype=np.float64)
            if emb.ndim != 1:
                raise InvalidInputError(f"embedding for {e.image_id!r} is not a vector")
            if dim is None:
                dim = emb.size
            elif emb.size != dim:
                raise InvalidInputError(
                    f"embedding dimension mismatch: {emb.size} vs {dim} for {e.image_id!r}"
                )
            if abs(np.linalg.norm(emb) - 1.0) > 1e-5:
                raise InvalidInputError(
                    f"embedding for {e.image_id!r} is not unit norm"
                )
            if e.image_id in seen:
                raise InvalidInputError(f"duplicate image_id {e.image_id!r}")
            seen.add(e.image_id)
            normalized.append(
                GalleryEntry(e.image_id, int(e.class_id), emb, str(e.annotation_path))
            )
        self.entries = tuple(normalized)
        self.dim = dim
        self._matrix = np.stack([e.embedding for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def entry(self, image_id) -> GalleryEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise InvalidInputError(f"no gallery entry with image_id {image_id!r}")

    def to_json_list(self) -> list:
        return [
            {
                "image_id": e.image_id,
                "class_id": e.class_id,
                "embedding": e.embedding.tolist(),
                "annotation": e.annotation_path,
            }
            for e in self.entries
        ]

    @classmethod
    def from_json_list(cls, rows) -> "GalleryIndex":
        entries = [
            GalleryEntry(
                row["image_id"],
                int(row["class_id"]),
                np.asarray(row["embedding"], dtype=np.float64),
                row["annotation"],
            )
            for row in rows
        ]
        return cls(entries)

    def save(self, path) -> None:
        text = json.dumps(self.to_json_list(), sort_keys=True, indent=2) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    @classmethod
    def load(cls, path) -> "GalleryIndex":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_list(json.load(fh))


def nearest_gallery(query, index: GalleryIndex, class_filter=None, k: int = 1) -> list:
    """Rank gallery entries by cosine similarity to the query embedding.

    Returns up to k (image_id, similarity) pairs, descending similarity,
    ties broken by ascending image_id. The query is normalized first, so
    any positive rescaling of it leaves the ranking unchanged.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != index.dim:
        raise InvalidInputError(
            f"query dimension {q.size} does not match index dimension {index.dim}"
        )
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidInputError("query embedding is zero or non-finite")
    q = q / norm
    if class_filter is None:
        candidates = list(range(len(index.entries)))
    else:
        candidates = [
            i for i, e in enumerate(index.entries) if e.class_id == class_filter
        ]
    if not candidates:
        raise InvalidInputError(f"no gallery candidates for class {class_filter}")
    sims = index._matrix[candidates] @ q
    ranked = sorted(
        zip(candidates, sims), key=lambda r: (-r[1], index.entries[r[0]].image_id)
    )
    return [(index.entries[i].image_id, float(s)) for i, s in ranked[:k]]
