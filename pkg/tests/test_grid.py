import itertools

import numpy as np
import pytest

from neighborgen.grid import (GridShape, build_mask, build_raster_mask,
                              build_schedule, manhattan_distance,
                              predecessors, serialize_mask,
                              serialize_schedule, step_count, successors,
                              target_table)


def brute_force_order(shape: GridShape):
    """Independent oracle: sort all positions by (distance, lexicographic)."""
    pos = list(itertools.product(*(range(d) for d in shape.dims)))
    return sorted(pos, key=lambda p: (sum(abs(c) for c in p), p))


class TestManhattan:
    def test_identity(self):
        assert manhattan_distance((0, 0), (0, 0)) == 0

    def test_2d(self):
        assert manhattan_distance((0, 0), (2, 1)) == 3

    def test_3d(self):
        assert manhattan_distance((1, 2, 3), (3, 2, 1)) == 4

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            manhattan_distance((0, 0), (0, 0, 0))


class TestGridShape:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            GridShape((4,))
        with pytest.raises(ValueError):
            GridShape((2, 2, 2, 2))
        with pytest.raises(ValueError):
            GridShape((0, 3))

    def test_parse_roundtrip(self):
        for text in ("16x16", "4x16x16", "1x1"):
            assert str(GridShape.parse(text)) == text
        with pytest.raises(ValueError):
            GridShape.parse("axb")


class TestSchedule:
    def test_16x16_steps(self):
        assert build_schedule(GridShape((16, 16))).num_steps == 31

    def test_video_steps(self):
        assert build_schedule(GridShape((4, 16, 16))).num_steps == 34

    def test_single_token(self):
        s = build_schedule(GridShape((1, 1)))
        assert s.num_steps == 1
        assert s.order == ((0, 0),)

    def test_3x3_step_lengths(self):
        s = build_schedule(GridShape((3, 3)))
        assert [length for _, length in s.steps] == [1, 2, 3, 2, 1]

    def test_origin_alone_in_step0(self):
        for dims in ((4, 5), (2, 3, 4)):
            s = build_schedule(GridShape(dims))
            assert s.step_positions(0) == ((0,) * len(dims),)

    @pytest.mark.parametrize("dims", [
        (1, 1), (1, 6), (6, 1), (3, 4), (6, 6), (5, 2),
        (1, 1, 1), (2, 3, 4), (6, 6, 6), (4, 1, 5), (6, 5, 4),
    ])
    def test_matches_brute_force_oracle(self, dims):
        shape = GridShape(dims)
        s = build_schedule(shape)
        assert list(s.order) == brute_force_order(shape)

    def test_oracle_equivalence_all_small_shapes(self):
        for dims in itertools.product(range(1, 7), repeat=2):
            shape = GridShape(dims)
            assert list(build_schedule(shape).order) == brute_force_order(shape)
        rng = np.random.default_rng(0)
        for _ in range(30):
            dims = tuple(int(d) for d in rng.integers(1, 7, size=3))
            shape = GridShape(dims)
            assert list(build_schedule(shape).order) == brute_force_order(shape)

    def test_permutation_property(self):
        # every in-bounds position exactly once, all shapes up to 216 tokens
        for dims in [(6, 6), (12, 18), (6, 6, 6), (2, 9, 12), (1, 216)]:
            shape = GridShape(dims)
            s = build_schedule(shape)
            assert sorted(s.order) == sorted(shape.positions())

    def test_step_of_is_distance(self):
        shape = GridShape((3, 4, 5))
        s = build_schedule(shape)
        origin = (0, 0, 0)
        for p in s.order:
            assert s.step_of[p] == manhattan_distance(p, origin)


class TestStepCount:
    def test_paper_values(self):
        assert step_count(GridShape((16, 16))) == 31
        assert step_count(GridShape((8, 8))) == 15
        assert step_count(GridShape((4, 16, 16))) == 34

    def test_2x2x2_brute_force(self):
        shape = GridShape((2, 2, 2))
        distinct = {sum(p) for p in shape.positions()}
        assert step_count(shape) == len(distinct) == 4

    def test_closed_form_vs_brute_force(self):
        for dims in itertools.product(range(1, 9), repeat=2):
            shape = GridShape(dims)
            max_dist = max(sum(p) for p in shape.positions())
            assert step_count(shape) == max_dist + 1 == sum(dims) - 2 + 1
        rng = np.random.default_rng(1)
        for _ in range(20):
            dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
            shape = GridShape(dims)
            max_dist = max(sum(p) for p in shape.positions())
            assert step_count(shape) == max_dist + 1 == sum(dims) - 3 + 1


class TestPredecessors:
    def test_origin_empty(self):
        assert predecessors((0, 0), GridShape((4, 4))) == []

    def test_interior(self):
        assert predecessors((2, 1), GridShape((4, 4))) == [
            ((1, 1), 0), ((2, 0), 1)]

    def test_single_axis_3d(self):
        assert predecessors((1, 0, 0), GridShape((4, 4, 4))) == [((0, 0, 0), 0)]

    def test_count_and_step_property(self):
        shape = GridShape((4, 5))
        s = build_schedule(shape)
        for p in s.order:
            preds = predecessors(p, shape)
            assert len(preds) == sum(1 for c in p if c > 0)
            if p != (0, 0):
                assert len(preds) >= 1
            for q, axis in preds:
                assert s.step_of[q] == s.step_of[p] - 1
                assert q[axis] == p[axis] - 1


def mask_oracle_allow(schedule, q, k):
    """Direct restatement: condition rules plus step(k) <= step(q)."""
    if q == 0:
        return k == 0
    if k == 0:
        return True
    return (schedule.step_of[schedule.order[k - 1]]
            <= schedule.step_of[schedule.order[q - 1]])


class TestMask:
    def test_1x1(self):
        mask = build_mask(build_schedule(GridShape((1, 1))))
        assert mask.allow.tolist() == [[True, False], [True, True]]

    def test_2x2_structure(self):
        s = build_schedule(GridShape((2, 2)))
        mask = build_mask(s)
        a, b = s.slot_of((0, 1)), s.slot_of((1, 0))
        assert mask.allow[a, b] and mask.allow[b, a]  # same step: mutual
        last = s.slot_of((1, 1))
        assert mask.allow[last].all()
        assert mask.allow[s.slot_of((0, 0))].sum() == 2  # condition + self

    @pytest.mark.parametrize("dims", [(6, 6), (3, 4, 4)])
    def test_exhaustive_oracle(self, dims):
        s = build_schedule(GridShape(dims))
        mask = build_mask(s)
        for q in range(mask.size):
            for k in range(mask.size):
                assert mask.allow[q, k] == mask_oracle_allow(s, q, k), (q, k)

    def test_self_attention_always_allowed(self):
        mask = build_mask(build_schedule(GridShape((4, 5))))
        assert np.diag(mask.allow).all()

    def test_earlier_steps_always_visible(self):
        s = build_schedule(GridShape((5, 5)))
        mask = build_mask(s)
        for q in range(1, mask.size):
            for k in range(1, mask.size):
                if s.step_of[s.order[k - 1]] < s.step_of[s.order[q - 1]]:
                    assert mask.allow[q, k]

    def test_bias_values(self):
        mask = build_mask(build_schedule(GridShape((2, 2))))
        bias = mask.bias()
        assert bias[mask.allow].max() == 0 and bias[mask.allow].min() == 0
        assert (bias[~mask.allow] == -1e9).all()

    def test_raster_mask_causal(self):
        mask = build_raster_mask(4)
        assert mask.allow.tolist() == np.tril(np.ones((5, 5), bool)).tolist() \
            or not mask.allow[0, 1:].any()
        assert mask.allow[0].sum() == 1
        for q in range(1, 5):
            assert mask.allow[q, :q + 1].all()
            assert not mask.allow[q, q + 1:].any()


class TestTargetTable:
    def test_2x2(self):
        s = build_schedule(GridShape((2, 2)))
        table = target_table(s)
        cond = [(src, a, t) for src, a, t in table if src == 0]
        assert len(cond) == 2
        assert all(t == s.slot_of((0, 0)) for _, _, t in cond)
        edges = {(s.order[src - 1], a, s.order[t - 1])
                 for src, a, t in table if src != 0}
        assert edges == {
            ((0, 0), 1, (0, 1)), ((0, 0), 0, (1, 0)),
            ((0, 1), 0, (1, 1)), ((1, 0), 1, (1, 1)),
        }

    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_edge_count_square(self, n):
        s = build_schedule(GridShape((n, n)))
        axis_entries = [e for e in target_table(s) if e[0] != 0]
        assert len(axis_entries) == 2 * n * (n - 1)

    def test_1x1_only_condition_entries(self):
        s = build_schedule(GridShape((1, 1)))
        assert all(src == 0 for src, _, _ in target_table(s))

    def test_no_leakage(self):
        # every target sits exactly one step after its source; a predicted
        # token is never attendable from its predictor's slot
        for dims in ((5, 4), (2, 3, 3)):
            s = build_schedule(GridShape(dims))
            mask = build_mask(s)
            for src, axis, tgt in target_table(s):
                src_step = -1 if src == 0 else s.step_of[s.order[src - 1]]
                assert s.step_of[s.order[tgt - 1]] == src_step + 1
                assert not mask.allow[src, tgt]


class TestSerialization:
    def test_schedule_text(self):
        text = serialize_schedule(build_schedule(GridShape((3, 3))))
        lines = text.strip().split("\n")
        assert lines[0] == "shape=3x3"
        assert lines[1] == "step 0: (0,0)"
        assert lines[2] == "step 1: (0,1) (1,0)"
        assert len(lines) == 6

    def test_mask_text(self):
        text = serialize_mask(build_mask(build_schedule(GridShape((1, 1)))))
        assert text == "10\n11\n"

    def test_deterministic(self):
        a = serialize_schedule(build_schedule(GridShape((2, 5, 3))))
        b = serialize_schedule(build_schedule(GridShape((2, 5, 3))))
        assert a == b
