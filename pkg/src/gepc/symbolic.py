"""Symbolic views of MSXs: part conjunctions and spatial relations.

A segment-level MSX becomes a SymbolicMsx by mapping each kept segment to
its transferred part label and deduplicating; "background" is dropped by
default, and an MSX that dissolves entirely into background has no symbolic
form.  A RelationalRule goes one step further and records how the named
parts sit relative to each other, using three predicates: left_of and
above_the compare area-weighted part centroids with a dead zone of tau
pixels (default 2% of image width), adjacent_to fires when any segment of
one part shares a pixel border with any segment of the other.  left_of and
above_the are stored in their computed direction only; adjacent_to is
symmetric and stored once with the part names in lexicographic order.
"""

import itertools
from dataclasses import dataclass

from .annotations import BACKGROUND, PartLabeling
from .errors import InvalidInputError
from .imaging import SegmentMap, segment_adjacency
from .msx import Msx

PREDICATES = ("adjacent_to", "left_of", "above_the")
_SYMMETRIC = frozenset({"adjacent_to"})


@dataclass(frozen=True)
class SymbolicMsx:
    """Deduplicated, sorted part labels of one MSX, read as a conjunction."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(sorted({str(p) for p in self.parts}))
        if not parts:
            raise InvalidInputError("symbolic MSX must name at least one part")
        object.__setattr__(self, "parts", parts)

    def to_json_dict(self) -> dict:
        return {"parts": list(self.parts)}

    @classmethod
    def from_json_dict(cls, data: dict) -> "SymbolicMsx":
        return cls(parts=tuple(data["parts"]))


@dataclass(frozen=True)
class RelationalRule:
    """A set of (part, predicate, part) triples, read as a conjunction."""

    relations: frozenset

    def __post_init__(self):
        normalized = set()
        for triple in self.relations:
            a, pred, b = (str(x) for x in triple)
            if pred not in PREDICATES:
                raise InvalidInputError(f"unknown predicate {pred!r}")
            if a == b:
                raise InvalidInputError(f"relation relates {a!r} to itself")
            if BACKGROUND in (a, b):
                raise InvalidInputError("relations must not involve the background")
            if pred in _SYMMETRIC and a > b:
                a, b = b, a
            normalized.add((a, pred, b))
        if not normalized:
            raise InvalidInputError("relational rule must hold at least one relation")
        object.__setattr__(self, "relations", frozenset(normalized))

    def to_json_dict(self) -> dict:
        return {"relations": [list(t) for t in sorted(self.relations)]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "RelationalRule":
        return cls(relations=frozenset(tuple(t) for t in data["relations"]))


def symbolize_msx(msx: Msx, labeling: PartLabeling, drop_background: bool = True):
    """Part labels of the MSX's segments; None when nothing but background remains."""
    bad = sorted(s for s in msx.segments if s >= labeling.n_segments)
    if bad:
        raise InvalidInputError(f"msx segments {bad} have no label")
    labels = {labeling.labels[s] for s in msx.segments}
    if drop_background:
        labels.discard(BACKGROUND)
    if not labels:
        return None
    return SymbolicMsx(parts=tuple(labels))


def part_centroids(labeling: PartLabeling, seg: SegmentMap) -> dict:
    """Area-weighted centroid (x, y) of every part present in the labeling."""
    if labeling.n_segments != seg.n_segments:
        raise InvalidInputError(
            f"labeling covers {labeling.n_segments} segments, map has {seg.n_segments}"
        )
    sums = {}
    for s in seg.segments:
        label = labeling.labels[s.id]
        acc = sums.setdefault(label, [0.0, 0.0, 0])
        acc[0] += s.cx * s.area
        acc[1] += s.cy * s.area
        acc[2] += s.area
    return {label: (x / n, y / n) for label, (x, y, n) in sums.items()}


def default_tau(seg: SegmentMap) -> float:
    """Dead-zone width for directional predicates: 2% of image width."""
    return 0.02 * seg.width


def relations_of(parts, labeling: PartLabeling, seg: SegmentMap, tau=None) -> frozenset:
    """Spatial triples over every unordered pair of the given parts.

    A left_of B iff centroid_x(A) < centroid_x(B) - tau, A above_the B iff
    centroid_y(A) < centroid_y(B) - tau (y grows downward), adjacent_to iff
    any segments of the two parts share a border.  Background never appears
    in a triple.
    """
    if tau is None:
        tau = default_tau(seg)
    if tau < 0:
        raise InvalidInputError(f"tau must be >= 0, got {tau}")
    parts = {str(p) for p in parts}
    missing = sorted(parts - set(labeling.labels))
    if missing:
        raise InvalidInputError(f"parts absent from the labeling: {missing}")
    parts = sorted(parts - {BACKGROUND})

    centroids = part_centroids(labeling, seg)
    segments_of = {p: [] for p in parts}
    for sid, label in enumerate(labeling.labels):
        if label in segments_of:
            segments_of[label].append(sid)
    adjacency = segment_adjacency(seg)

    out = set()
    for a, b in itertools.combinations(parts, 2):
        ax, ay = centroids[a]
        bx, by = centroids[b]
        if ax < bx - tau:
            out.add((a, "left_of", b))
        elif bx < ax - tau:
            out.add((b, "left_of", a))
        if ay < by - tau:
            out.add((a, "above_the", b))
        elif by < ay - tau:
            out.add((b, "above_the", a))
        if any(
            (min(s, t), max(s, t)) in adjacency
            for s in segments_of[a]
            for t in segments_of[b]
        ):
            out.add((a, "adjacent_to", b))
    return frozenset(out)


def relational_msx(msx: Msx, labeling: PartLabeling, seg: SegmentMap, tau=None):
    """Relational form of one MSX; None when no parts or no relations remain."""
    sym = symbolize_msx(msx, labeling, drop_background=True)
    if sym is None:
        return None
    relations = relations_of(set(sym.parts), labeling, seg, tau)
    if not relations:
        return None
    return RelationalRule(relations=relations)
