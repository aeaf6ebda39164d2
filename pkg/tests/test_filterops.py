import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from belltransfer.channels import channels_for, coefficient_products
from belltransfer.errors import (
    AssumptionViolated,
    DuplicateMapping,
    IndexCollision,
    InvalidIndex,
    RatioOutOfRange,
)
from belltransfer.filterops import (
    FilterPlan,
    OperatorMatrix,
    PRINTED_U_SWAPS,
    build_filter,
    build_permutation,
    choose_junk,
    derive_permutation_for_branch,
    dump_operator,
    format_operator,
    load_operator,
    paper_filter_bipartite,
    paper_filter_tripartite,
    printed_permutation,
    ratios_to_least,
    swap_pairs,
    verify_unitary,
)

nonpositive = st.floats(-math.pi / 4 + 1e-3, 0.0)


def dense_deviation(m):
    eye = np.eye(len(m))
    return max(np.abs(m.conj().T @ m - eye).max(), np.abs(m @ m.conj().T - eye).max())


class TestPermutation:
    def test_swap(self):
        op = build_permutation([(1, 0)], 4)
        assert list(op.index_map) == [1, 0, 2, 3]

    def test_apply_routes_amplitude(self):
        op = build_permutation([(5, 2)], 8)
        v = np.zeros(8)
        v[5] = 1
        assert np.flatnonzero(op.apply(v)).tolist() == [2]

    def test_matrix_agrees_with_index_map(self):
        op = build_permutation([(3, 0), (6, 1)], 8)
        v = np.arange(8) + 1j
        np.testing.assert_array_equal(op.matrix @ v, op.apply(v))

    def test_cycle_is_closed(self):
        op = build_permutation([(0, 1), (1, 2)], 4)
        assert sorted(op.index_map) == [0, 1, 2, 3]
        assert verify_unitary(op) == 0.0

    def test_duplicate_target(self):
        with pytest.raises(DuplicateMapping):
            build_permutation([(0, 2), (1, 2)], 4)

    def test_out_of_range(self):
        with pytest.raises(InvalidIndex):
            build_permutation([(0, 9)], 4)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 31), st.integers(0, 31)), max_size=8))
    def test_always_a_permutation(self, pairs):
        froms, tos, clean = set(), set(), []
        for f, t in pairs:
            if f not in froms and t not in tos:
                froms.add(f), tos.add(t), clean.append((f, t))
        op = build_permutation(clean, 32)
        assert sorted(op.index_map) == list(range(32))
        for f, t in clean:
            assert op.index_map[f] == t


class TestDerivePermutation:
    def test_labels_and_indices_agree(self):
        a = derive_permutation_for_branch(["000001", "010010"], ["000000", "000010"])
        b = derive_permutation_for_branch([1, 18], [0, 2])
        assert a == b == [(1, 0), (18, 2)]

    def test_in_place_entries_dropped(self):
        assert derive_permutation_for_branch([3, 4], [3, 5]) == [(4, 5)]

    def test_identity_is_empty(self):
        assert derive_permutation_for_branch([1, 2], [1, 2]) == []

    def test_length_mismatch(self):
        with pytest.raises(InvalidIndex):
            derive_permutation_for_branch([1], [1, 2])

    def test_bipartite_printed_pairs(self):
        # measured terms |0 c2 AB> -> |00 0 b 0 x> ordering, zero-based
        survivors = [1, 18, 13, 30]
        targets = [0, 2, 4, 6]
        pairs = swap_pairs(derive_permutation_for_branch(survivors, targets))
        assert pairs == {(1, 2), (3, 19), (5, 14), (7, 31)} == set(PRINTED_U_SWAPS[2])

    def test_swap_pairs_zero_based(self):
        assert swap_pairs([(1, 0)], one_based=False) == {(0, 1)}


class TestFilter:
    def test_ratios_to_least(self):
        ratios, least = ratios_to_least([0.5, 0.25, -0.5])
        assert least == 1
        assert ratios[least] == 1.0
        np.testing.assert_allclose(ratios, [0.5, 1.0, -0.5])

    def test_zero_coefficient(self):
        with pytest.raises(RatioOutOfRange):
            ratios_to_least([1.0, 0.0])

    def test_plan_rejects_big_ratio(self):
        with pytest.raises(RatioOutOfRange):
            FilterPlan((0,), (1.5,), (1,))

    def test_plan_rejects_collision(self):
        with pytest.raises(IndexCollision):
            FilterPlan((0, 1), (1, 1), (1, 2))

    def test_choose_junk(self):
        assert choose_junk(3, [0, 2, 4], 8) == [1, 3, 5]
        with pytest.raises(IndexCollision):
            choose_junk(3, [0, 1], 4)

    def test_filter_rescales_retained(self):
        plan = FilterPlan((0, 2), (0.5, -0.3j), (1, 3))
        f = build_filter(plan, 4)
        v = np.array([1, 0, 1, 0], dtype=complex)
        out = f.apply(v)
        np.testing.assert_allclose(out[[0, 2]], [0.5, -0.3j])
        np.testing.assert_allclose(out, f.entries @ v)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.complex_numbers(max_magnitude=1.0, allow_nan=False), min_size=1, max_size=6))
    def test_filter_unitary(self, ratios):
        n = len(ratios)
        f = build_filter(FilterPlan(tuple(range(n)), tuple(ratios), tuple(range(n, 2 * n))), 16)
        assert verify_unitary(f) <= 1e-12
        assert dense_deviation(f.entries) <= 1e-12

    def test_generic_path_flags_non_unitary(self):
        op = OperatorMatrix.from_dense(np.diag([1.0, 0.5]))
        assert verify_unitary(op) == pytest.approx(0.75)


class TestPrintedOperators:
    def test_bipartite_u_swaps(self):
        u = printed_permutation(2)
        for i, j in PRINTED_U_SWAPS[2]:
            assert u.index_map[i - 1] == j - 1 and u.index_map[j - 1] == i - 1

    @settings(max_examples=25, deadline=None)
    @given(nonpositive, nonpositive)
    def test_bipartite_f_unitary(self, x, y):
        f = paper_filter_bipartite(coefficient_products(channels_for((x, y))))
        assert verify_unitary(f) <= 1e-12
        assert dense_deviation(f.entries) <= 1e-12

    def test_bipartite_f_elements(self):
        m = coefficient_products(channels_for((-0.3, -0.1)))
        f = paper_filter_bipartite(m).entries
        r2 = m.values[0] / m.values[1]
        assert f[2, 2] == pytest.approx(r2)
        assert f[2, 8] == pytest.approx(math.sqrt(1 - abs(r2) ** 2))
        assert f[7, 2] == pytest.approx(-math.sqrt(1 - abs(r2) ** 2))
        assert f[7, 8] == pytest.approx(np.conj(r2))
        assert f[10, 7] == 1 and f[0, 0] == 1 and f[7, 7] == 0

    def test_tripartite_literal_not_unitary(self):
        f = paper_filter_tripartite(coefficient_products(channels_for((-0.2, -0.2, -0.2))))
        assert verify_unitary(f) > 1e-3

    def test_tripartite_literal_defect_vanishes_at_zero(self):
        # misplaced ratio is 1 there; only the rounding residue of q remains
        f = paper_filter_tripartite(coefficient_products(channels_for((0.0, 0.0, 0.0))))
        assert verify_unitary(f) < 1e-6

    def test_outside_regime(self):
        with pytest.raises(AssumptionViolated):
            paper_filter_bipartite(coefficient_products(channels_for((0.1, 0.1))))


class TestTextFormat:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        op = OperatorMatrix.from_dense(m)
        np.testing.assert_array_equal(load_operator(format_operator(op)), m)

    def test_row_per_line(self):
        buf = io.StringIO()
        dump_operator(printed_permutation(2), buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 64 and all(len(line.split()) == 64 for line in lines)
        assert lines[0].split()[1] == "1.0000000000000000e+00+0.0000000000000000e+00i"
