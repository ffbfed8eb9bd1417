"""Tests for minimal sufficient explanation search."""

import itertools

import numpy as np
import pytest
from scipy import ndimage

from gepc.backends import (
    CallableRule,
    ContainsAllRule,
    FractionPresentRule,
    SyntheticBackend,
    WeightedSegmentsRule,
)
from gepc.errors import InvalidInputError
from gepc.imaging import Segment, SegmentMap
from gepc.msx import (
    Msx,
    MsxConfig,
    find_msxs,
    is_minimal,
    is_sufficient,
    msxs_from_json_dict,
    msxs_to_json_dict,
)


def symbolic(rule, n_segments, n_classes=2):
    return SyntheticBackend(
        {0: rule}, n_classes=n_classes, n_segments=n_segments, mode="symbolic"
    )


def brute_force_msxs(backend, n_segments, class_id, p_h, max_size=None):
    """All minimal sufficient subsets, full strict-subset minimality, by enumeration."""
    full = backend.score_keep(frozenset(range(n_segments)))[class_id]
    assert full > 0
    limit = n_segments if max_size is None else max_size
    sufficient = set()
    for r in range(limit + 1):
        for combo in itertools.combinations(range(n_segments), r):
            keep = frozenset(combo)
            if backend.score_keep(keep)[class_id] > p_h * full:
                sufficient.add(keep)
    return {
        s for s in sufficient if not any(t < s for t in sufficient)
    }


def smooth_image(seed, h=16, w=16):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(2, 2, 0))
    img = img - img.min()
    return (img / img.max()).astype(np.float64)


def quad_segments(h=16, w=16):
    labels = np.zeros((h, w), dtype=np.int32)
    labels[: h // 2, w // 2 :] = 1
    labels[h // 2 :, : w // 2] = 2
    labels[h // 2 :, w // 2 :] = 3
    segments = []
    for sid in range(4):
        ys, xs = np.nonzero(labels == sid)
        segments.append(
            Segment(
                id=sid,
                cx=float(xs.mean() + 0.5),
                cy=float(ys.mean() + 0.5),
                area=int(ys.size),
                neighbors=(),
            )
        )
    return SegmentMap(labels=labels, segments=tuple(segments))


def image_mode_fixture(rule, seed=41):
    img = smooth_image(seed)
    seg = quad_segments()
    backend = SyntheticBackend(
        {0: rule}, n_classes=2, n_segments=4, reference=(img, seg)
    )
    return img, seg, backend


class TestMsxConfig:
    def test_defaults(self):
        cfg = MsxConfig()
        assert cfg.p_h == 0.9
        assert cfg.beam_width == 5
        assert cfg.max_subset_size == 10
        assert cfg.max_msx_count == 20
        assert cfg.blur_sigma == 10.0

    def test_boundary_p_h_one_allowed(self):
        assert MsxConfig(p_h=1.0).p_h == 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p_h": 0.0},
            {"p_h": -0.1},
            {"p_h": 1.2},
            {"beam_width": 0},
            {"max_subset_size": 0},
            {"max_msx_count": 0},
            {"blur_sigma": 0.0},
            {"blur_sigma": -1.0},
        ],
    )
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(InvalidInputError):
            MsxConfig(**kwargs)


class TestMsxType:
    def test_normalizes_segments(self):
        m = Msx(segments=[3, 1, 1], score_ratio=0.95, class_id=0)
        assert m.segments == frozenset({1, 3})
        assert m.size == 2

    def test_empty_segments_allowed(self):
        assert Msx(segments=(), score_ratio=1.0, class_id=0).size == 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"segments": {-1}, "score_ratio": 1.0, "class_id": 0},
            {"segments": {0}, "score_ratio": -0.5, "class_id": 0},
            {"segments": {0}, "score_ratio": float("nan"), "class_id": 0},
            {"segments": {0}, "score_ratio": 1.0, "class_id": -2},
        ],
    )
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(InvalidInputError):
            Msx(**kwargs)


class TestIsSufficientSymbolic:
    def test_full_keep_ratio_one(self):
        backend = symbolic(FractionPresentRule({3}), n_segments=6)
        ok, ratio = is_sufficient(
            frozenset(range(6)), None, None, backend, 0, MsxConfig()
        )
        assert ok is True
        assert ratio == 1.0

    def test_indicator_rule(self):
        backend = symbolic(FractionPresentRule({3}), n_segments=6)
        cfg = MsxConfig()
        ok, ratio = is_sufficient(frozenset({3}), None, None, backend, 0, cfg)
        assert ok is True and ratio == 1.0
        ok, ratio = is_sufficient(frozenset({1, 2}), None, None, backend, 0, cfg)
        assert ok is False and ratio == 0.0

    def test_fraction_rule_two_thirds(self):
        backend = symbolic(FractionPresentRule({1, 2, 4}), n_segments=6)
        ok, ratio = is_sufficient(
            frozenset({1, 2}), None, None, backend, 0, MsxConfig(p_h=0.9)
        )
        assert ok is False
        assert ratio == pytest.approx(2 / 3, abs=1e-12)

    def test_threshold_is_strict(self):
        backend = symbolic(FractionPresentRule(set(range(10))), n_segments=10)
        keep = frozenset(range(9))
        ok, ratio = is_sufficient(keep, None, None, backend, 0, MsxConfig(p_h=0.9))
        assert ratio == pytest.approx(0.9)
        assert ok is False

    def test_zero_full_score_rejected(self):
        backend = symbolic(ContainsAllRule({0, 1}), n_segments=4)
        # Class 1 is the residual; the full image scores 0 there.
        with pytest.raises(InvalidInputError):
            is_sufficient(frozenset({0}), None, None, backend, 1, MsxConfig())

    def test_unknown_segment_ids_rejected(self):
        backend = symbolic(FractionPresentRule({0}), n_segments=4)
        with pytest.raises(InvalidInputError):
            is_sufficient(frozenset({9}), None, None, backend, 0, MsxConfig())

    def test_class_id_out_of_range_rejected(self):
        backend = symbolic(FractionPresentRule({0}), n_segments=4)
        with pytest.raises(InvalidInputError):
            is_sufficient(frozenset({0}), None, None, backend, 5, MsxConfig())


class TestIsSufficientImageMode:
    def test_full_keep_is_identity(self):
        img, seg, backend = image_mode_fixture(FractionPresentRule({0, 3}))
        ok, ratio = is_sufficient(
            frozenset(range(4)), img, seg, backend, 0, MsxConfig()
        )
        assert ok is True and ratio == 1.0

    def test_partial_keep_through_blur(self):
        img, seg, backend = image_mode_fixture(FractionPresentRule({0, 3}))
        cfg = MsxConfig(p_h=0.9)
        ok, ratio = is_sufficient(frozenset({0}), img, seg, backend, 0, cfg)
        assert ok is False and ratio == 0.5
        ok, ratio = is_sufficient(frozenset({0, 3}), img, seg, backend, 0, cfg)
        assert ok is True and ratio == 1.0


class TestIsMinimal:
    def test_sufficient_singleton_is_minimal(self):
        backend = symbolic(FractionPresentRule({3}), n_segments=6)
        assert is_minimal(frozenset({3}), None, None, backend, 0, MsxConfig()) is True

    def test_exact_support_set_minimal_superset_not(self):
        backend = symbolic(FractionPresentRule({1, 2, 4}), n_segments=6)
        cfg = MsxConfig(p_h=0.9)
        assert is_minimal(frozenset({1, 2, 4}), None, None, backend, 0, cfg) is True
        assert is_minimal(frozenset({1, 2, 3, 4}), None, None, backend, 0, cfg) is False

    def test_insufficient_keep_rejected(self):
        backend = symbolic(FractionPresentRule({1, 2, 4}), n_segments=6)
        cfg = MsxConfig(p_h=0.9)
        with pytest.raises(InvalidInputError):
            is_minimal(frozenset({1}), None, None, backend, 0, cfg)
        with pytest.raises(InvalidInputError):
            is_minimal(frozenset(), None, None, backend, 0, cfg)

    def test_empty_set_minimal_when_score_survives_blur(self):
        backend = symbolic(CallableRule(lambda keep, n: 1.0), n_segments=4)
        assert is_minimal(frozenset(), None, None, backend, 0, MsxConfig()) is True


class TestFindMsxsSymbolic:
    def test_indicator_rule_single_msx(self):
        backend = symbolic(FractionPresentRule({3}), n_segments=6)
        out = find_msxs(None, None, backend, 0, MsxConfig())
        assert [m.segments for m in out] == [frozenset({3})]
        assert out[0].score_ratio == 1.0
        assert out[0].class_id == 0

    def test_fraction_rule_exact_support(self):
        backend = symbolic(FractionPresentRule({1, 2, 4}), n_segments=6)
        cfg = MsxConfig(p_h=0.9)
        out = find_msxs(None, None, backend, 0, cfg)
        assert [m.segments for m in out] == [frozenset({1, 2, 4})]
        oracle = brute_force_msxs(backend, 6, 0, 0.9)
        assert {m.segments for m in out} == oracle

    def test_two_disjoint_supports(self):
        rule = CallableRule(
            lambda keep, n: 1.0 if {1, 2} <= keep or {4, 5} <= keep else 0.0
        )
        backend = symbolic(rule, n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=4)
        out = find_msxs(None, None, backend, 0, cfg)
        assert [m.segments for m in out] == [frozenset({1, 2}), frozenset({4, 5})]
        oracle = brute_force_msxs(backend, 6, 0, 0.9)
        assert {m.segments for m in out} == oracle

    def test_oracle_equivalence_random_monotone(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            weights = {i: float(w) for i, w in enumerate(rng.uniform(0.05, 0.4, size=7))}
            backend = symbolic(WeightedSegmentsRule(weights), n_segments=7)
            cfg = MsxConfig(p_h=0.9, beam_width=128, max_subset_size=7, max_msx_count=200)
            out = find_msxs(None, None, backend, 0, cfg)
            oracle = brute_force_msxs(backend, 7, 0, 0.9)
            assert {m.segments for m in out} == oracle, f"seed {seed}"

    def test_oracle_equivalence_non_monotone(self):
        rule = CallableRule(
            lambda keep, n: 1.0 if len(keep) == 2 or len(keep) == n else 0.0
        )
        backend = symbolic(rule, n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=64, max_subset_size=6, max_msx_count=30)
        out = find_msxs(None, None, backend, 0, cfg)
        oracle = brute_force_msxs(backend, 6, 0, 0.9)
        assert {m.segments for m in out} == oracle
        assert len(out) == 15

    def test_emitted_msxs_are_sound(self):
        rule = CallableRule(
            lambda keep, n: 1.0 if len(keep) == 2 or len(keep) == n else 0.0
        )
        backend = symbolic(rule, n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=3)
        for m in find_msxs(None, None, backend, 0, cfg):
            ok, ratio = is_sufficient(m.segments, None, None, backend, 0, cfg)
            assert ok and ratio == m.score_ratio
            assert is_minimal(m.segments, None, None, backend, 0, cfg)

    def test_narrow_beam_finds_subset_of_oracle(self):
        rule = CallableRule(
            lambda keep, n: 1.0 if {1, 2} <= keep or {4, 5} <= keep else 0.0
        )
        backend = symbolic(rule, n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=1)
        out = find_msxs(None, None, backend, 0, cfg)
        oracle = brute_force_msxs(backend, 6, 0, 0.9)
        assert out
        assert {m.segments for m in out} <= oracle

    def test_no_sufficient_subset_returns_empty(self):
        backend = symbolic(ContainsAllRule({0, 1, 2, 3, 4, 5}), n_segments=6)
        cfg = MsxConfig(max_subset_size=3, beam_width=8)
        assert find_msxs(None, None, backend, 0, cfg) == []

    def test_max_msx_count_truncates_in_order(self):
        backend = symbolic(
            CallableRule(lambda keep, n: 1.0 if keep else 0.0), n_segments=6
        )
        cfg = MsxConfig(beam_width=8, max_msx_count=3)
        out = find_msxs(None, None, backend, 0, cfg)
        assert [m.segments for m in out] == [
            frozenset({0}),
            frozenset({1}),
            frozenset({2}),
        ]

    def test_empty_set_msx_when_score_survives(self):
        backend = symbolic(CallableRule(lambda keep, n: 1.0), n_segments=4)
        out = find_msxs(None, None, backend, 0, MsxConfig())
        assert [m.segments for m in out] == [frozenset()]
        assert out[0].score_ratio == 1.0

    def test_sorted_by_size_then_ratio_then_ids(self):
        def scorer(keep, n):
            best = 0.0
            if 0 in keep:
                best = max(best, 0.95)
            if 1 in keep:
                best = max(best, 1.0)
            if {2, 3} <= keep:
                best = max(best, 0.97)
            return best

        backend = symbolic(CallableRule(scorer), n_segments=5)
        cfg = MsxConfig(p_h=0.9, beam_width=16)
        out = find_msxs(None, None, backend, 0, cfg)
        assert [m.segments for m in out] == [
            frozenset({1}),
            frozenset({0}),
            frozenset({2, 3}),
        ]

    def test_duplicate_paths_deduplicated(self):
        backend = symbolic(FractionPresentRule({2}), n_segments=6)
        out = find_msxs(None, None, backend, 0, MsxConfig(beam_width=5))
        assert [m.segments for m in out] == [frozenset({2})]

    def test_deterministic(self):
        rng = np.random.default_rng(77)
        weights = {i: float(w) for i, w in enumerate(rng.uniform(0.1, 0.5, size=6))}
        backend = symbolic(WeightedSegmentsRule(weights), n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=3)
        a = find_msxs(None, None, backend, 0, cfg)
        b = find_msxs(None, None, backend, 0, cfg)
        assert [(m.segments, m.score_ratio) for m in a] == [
            (m.segments, m.score_ratio) for m in b
        ]

    def test_zero_full_score_rejected(self):
        backend = symbolic(ContainsAllRule({0, 1}), n_segments=4)
        with pytest.raises(InvalidInputError):
            find_msxs(None, None, backend, 1, MsxConfig())

    def test_ratios_strictly_above_threshold(self):
        rng = np.random.default_rng(3)
        weights = {i: float(w) for i, w in enumerate(rng.uniform(0.2, 0.5, size=6))}
        backend = symbolic(WeightedSegmentsRule(weights), n_segments=6)
        cfg = MsxConfig(p_h=0.9, beam_width=8)
        for m in find_msxs(None, None, backend, 0, cfg):
            assert m.score_ratio > cfg.p_h


class TestFindMsxsImageMode:
    def test_blur_path_recovers_support(self):
        img, seg, backend = image_mode_fixture(FractionPresentRule({0, 3}))
        cfg = MsxConfig(p_h=0.9, beam_width=4, blur_sigma=3.0)
        out = find_msxs(img, seg, backend, 0, cfg)
        assert [m.segments for m in out] == [frozenset({0, 3})]
        assert out[0].score_ratio == 1.0


class TestMsxJson:
    def test_round_trip(self):
        msxs = [
            Msx(segments={1, 2}, score_ratio=0.95, class_id=2),
            Msx(segments={0}, score_ratio=1.0, class_id=2),
        ]
        data = msxs_to_json_dict("img_7", 2, msxs)
        assert data["image_id"] == "img_7"
        assert data["class_id"] == 2
        assert data["msxs"][0] == {"segments": [1, 2], "score_ratio": 0.95}
        image_id, class_id, back = msxs_from_json_dict(data)
        assert image_id == "img_7"
        assert class_id == 2
        assert [(m.segments, m.score_ratio) for m in back] == [
            (frozenset({1, 2}), 0.95),
            (frozenset({0}), 1.0),
        ]

    def test_class_mismatch_rejected(self):
        msxs = [Msx(segments={1}, score_ratio=1.0, class_id=0)]
        with pytest.raises(InvalidInputError):
            msxs_to_json_dict("x", 1, msxs)
