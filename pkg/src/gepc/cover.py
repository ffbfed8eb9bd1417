"""Global explanations: greedy set cover over per-image symbolic rules.

Every distinct symbolic (or relational) MSX observed on the training images
becomes one candidate rule.  A rule covers an image when the image owns a
symbolic MSX equal to the rule's part set (parts mode) or an MSX whose
relation set contains the rule's relations (relational mode).  Greedy set
cover then orders the rules into a decision list: each step takes the rule
explaining the most still-unexplained images, ties falling to the smaller
rule and then to its serialized form.  Evaluation attributes each test
image to the first rule in list order that covers it; images matching no
rule count as "uncovered", and images that produced no explanation at all
are kept in a separate "no-explanation" bucket.

Train/test splitting and k-fold assignment are stratified per class and
deterministic for a fixed seed.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .symbolic import RelationalRule, SymbolicMsx

MODES = ("parts", "relational")


def _rule_kind(mode: str):
    if mode == "parts":
        return SymbolicMsx
    if mode == "relational":
        return RelationalRule
    raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")


def _serialize_rule(rule) -> str:
    return json.dumps(rule.to_json_dict(), sort_keys=True)


def _rule_cardinality(rule) -> int:
    if isinstance(rule, SymbolicMsx):
        return len(rule.parts)
    return len(rule.relations)


@dataclass(frozen=True)
class ImageExplanations:
    """One image's explanations in both symbolic forms."""

    image_id: str
    symbolic: tuple
    relational: tuple

    def __post_init__(self):
        if not isinstance(self.image_id, str) or not self.image_id:
            raise InvalidInputError("image_id must be a non-empty string")
        for s in self.symbolic:
            if not isinstance(s, SymbolicMsx):
                raise InvalidInputError("symbolic entries must be SymbolicMsx")
        for r in self.relational:
            if not isinstance(r, RelationalRule):
                raise InvalidInputError("relational entries must be RelationalRule")

    def of_mode(self, mode: str) -> tuple:
        _rule_kind(mode)
        return self.symbolic if mode == "parts" else self.relational


def rule_covers(rule, image_explanations: ImageExplanations, mode: str) -> bool:
    """Parts rules need an exactly equal MSX; relational rules a superset MSX."""
    kind = _rule_kind(mode)
    if not isinstance(rule, kind):
        raise InvalidInputError(
            f"{type(rule).__name__} is not a {mode!r}-mode rule"
        )
    if mode == "parts":
        return any(rule.parts == s.parts for s in image_explanations.symbolic)
    return any(
        rule.relations <= r.relations for r in image_explanations.relational
    )


@dataclass(frozen=True, eq=False)
class ExplanationFamily:
    """Candidate rules with their materialized cover sets over an image universe."""

    universe: frozenset
    rules: tuple
    cover_map: dict
    mode: str

    def __post_init__(self):
        _rule_kind(self.mode)
        if len(set(self.rules)) != len(self.rules):
            raise InvalidInputError("family rules must be distinct")
        if set(self.cover_map) != set(self.rules):
            raise InvalidInputError("cover_map keys must equal the rule list")
        for rule, covered in self.cover_map.items():
            if not covered <= self.universe:
                raise InvalidInputError(
                    f"rule {_serialize_rule(rule)} covers ids outside the universe"
                )

    @classmethod
    def build(cls, explanations, mode: str) -> "ExplanationFamily":
        explanations = list(explanations)
        ids = [e.image_id for e in explanations]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate image ids in explanation list")
        rules = []
        seen = set()
        for e in explanations:
            for rule in e.of_mode(mode):
                if rule not in seen:
                    seen.add(rule)
                    rules.append(rule)
        cover_map = {
            rule: frozenset(
                e.image_id for e in explanations if rule_covers(rule, e, mode)
            )
            for rule in rules
        }
        return cls(
            universe=frozenset(ids),
            rules=tuple(rules),
            cover_map=cover_map,
            mode=mode,
        )


@dataclass(frozen=True)
class DecisionList:
    """Ordered rules with their newly-covered train counts, plus the leftovers."""

    mode: str
    entries: tuple
    uncoverable: frozenset

    def __post_init__(self):
        kind = _rule_kind(self.mode)
        entries = tuple((rule, int(n)) for rule, n in self.entries)
        for rule, n in entries:
            if not isinstance(rule, kind):
                raise InvalidInputError(
                    f"{type(rule).__name__} entry in a {self.mode!r}-mode list"
                )
            if n < 1:
                raise InvalidInputError("every rule must newly cover at least one image")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "uncoverable", frozenset(self.uncoverable))

    @property
    def rules(self) -> tuple:
        return tuple(rule for rule, _ in self.entries)

    def to_json_dict(self, class_id: int) -> dict:
        return {
            "class_id": int(class_id),
            "mode": self.mode,
            "rules": [
                {"rule": rule.to_json_dict(), "train_new_covered": n}
                for rule, n in self.entries
            ],
            "uncoverable": sorted(self.uncoverable),
        }

    @classmethod
    def from_json_dict(cls, data: dict):
        mode = data["mode"]
        kind = _rule_kind(mode)
        entries = tuple(
            (kind.from_json_dict(rec["rule"]), int(rec["train_new_covered"]))
            for rec in data["rules"]
        )
        dlist = cls(
            mode=mode,
            entries=entries,
            uncoverable=frozenset(data["uncoverable"]),
        )
        return int(data["class_id"]), dlist


def greedy_set_cover(family: ExplanationFamily) -> DecisionList:
    """Pick the rule covering the most uncovered images until none helps.

    Ties fall to the smaller rule cardinality, then to the lexically smallest
    serialized rule.  Images no rule covers are reported as uncoverable.
    """
    if not family.universe:
        raise InvalidInputError("cannot cover an empty universe")
    uncovered = set(family.universe)
    entries = []
    while uncovered:
        best = None
        for rule in family.rules:
            gain = len(family.cover_map[rule] & uncovered)
            if gain == 0:
                continue
            key = (-gain, _rule_cardinality(rule), _serialize_rule(rule))
            if best is None or key < best[0]:
                best = (key, rule, gain)
        if best is None:
            break
        _, rule, gain = best
        entries.append((rule, gain))
        uncovered -= family.cover_map[rule]
    return DecisionList(
        mode=family.mode, entries=tuple(entries), uncoverable=frozenset(uncovered)
    )


@dataclass(frozen=True)
class CoverageReport:
    """First-rule attribution counts over one test set."""

    mode: str
    rules: tuple
    rule_counts: tuple
    uncovered_count: int
    no_explanation_count: int
    n_test: int

    def __post_init__(self):
        kind = _rule_kind(self.mode)
        rules = tuple(self.rules)
        counts = tuple(int(n) for n in self.rule_counts)
        for rule in rules:
            if not isinstance(rule, kind):
                raise InvalidInputError(
                    f"{type(rule).__name__} rule in a {self.mode!r}-mode report"
                )
        if len(rules) != len(counts):
            raise InvalidInputError("one count per rule required")
        if any(n < 0 for n in counts) or self.uncovered_count < 0 or self.no_explanation_count < 0:
            raise InvalidInputError("counts must be non-negative")
        if self.n_test < 1:
            raise InvalidInputError("report needs at least one test image")
        if sum(counts) + self.uncovered_count + self.no_explanation_count != self.n_test:
            raise InvalidInputError("bucket counts must partition the test set")
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "rule_counts", counts)

    @property
    def rule_proportions(self) -> tuple:
        return tuple(n / self.n_test for n in self.rule_counts)

    @property
    def uncovered_proportion(self) -> float:
        return self.uncovered_count / self.n_test

    @property
    def no_explanation_proportion(self) -> float:
        return self.no_explanation_count / self.n_test

    @property
    def covered_proportion(self) -> float:
        return sum(self.rule_counts) / self.n_test

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "rules": [rule.to_json_dict() for rule in self.rules],
            "rule_counts": list(self.rule_counts),
            "uncovered_count": self.uncovered_count,
            "no_explanation_count": self.no_explanation_count,
            "n_test": self.n_test,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CoverageReport":
        kind = _rule_kind(data["mode"])
        return cls(
            mode=data["mode"],
            rules=tuple(kind.from_json_dict(r) for r in data["rules"]),
            rule_counts=tuple(data["rule_counts"]),
            uncovered_count=int(data["uncovered_count"]),
            no_explanation_count=int(data["no_explanation_count"]),
            n_test=int(data["n_test"]),
        )


def evaluate_coverage(dlist: DecisionList, test_images, mode: str) -> CoverageReport:
    """Attribute each test image to the first covering rule in list order."""
    if mode != dlist.mode:
        raise InvalidInputError(
            f"evaluating a {dlist.mode!r} decision list in {mode!r} mode"
        )
    test_images = list(test_images)
    if not test_images:
        raise InvalidInputError("test set must not be empty")
    rules = dlist.rules
    counts = [0] * len(rules)
    uncovered = 0
    no_explanation = 0
    for img in test_images:
        if not img.of_mode(mode):
            no_explanation += 1
            continue
        for i, rule in enumerate(rules):
            if rule_covers(rule, img, mode):
                counts[i] += 1
                break
        else:
            uncovered += 1
    return CoverageReport(
        mode=mode,
        rules=rules,
        rule_counts=tuple(counts),
        uncovered_count=uncovered,
        no_explanation_count=no_explanation,
        n_test=len(test_images),
    )


def fold_coverage_stats(reports) -> tuple:
    """Mean and population std of covered_proportion across fold reports."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("fold statistics need at least one report")
    values = [r.covered_proportion for r in reports]
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def _stratify(image_ids) -> dict:
    by_class = {}
    for image_id in sorted(image_ids):
        by_class.setdefault(image_ids[image_id], []).append(image_id)
    return by_class


def split_train_test(image_ids, ratio: float, seed: int):
    """Per-class 70:30-style split; a lone image in a class lands in train."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    by_class = _stratify(image_ids)
    train, test = [], []
    for cls in sorted(by_class):
        members = by_class[cls]
        order = rng.permutation(len(members))
        n_train = int(ratio * len(members) + 0.5)
        n_train = min(max(n_train, 1), len(members))
        for rank, idx in enumerate(order):
            (train if rank < n_train else test).append(members[idx])
    return tuple(sorted(train)), tuple(sorted(test))


def kfold(image_ids, k: int, seed: int):
    """k stratified folds; every class must hold at least k images."""
    if k < 2:
        raise InvalidInputError(f"k must be >= 2, got {k}")
    by_class = _stratify(image_ids)
    for cls, members in sorted(by_class.items()):
        if len(members) < k:
            raise InvalidInputError(
                f"class {cls} has only {len(members)} images, need at least {k}"
            )
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for cls in sorted(by_class):
        members = by_class[cls]
        order = rng.permutation(len(members))
        for rank, idx in enumerate(order):
            folds[rank % k].append(members[idx])
    return tuple(tuple(sorted(f)) for f in folds)
