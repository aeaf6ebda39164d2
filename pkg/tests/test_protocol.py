import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from belltransfer.channels import channels_for, coefficient_products, make_channel
from belltransfer.errors import AssumptionViolated, DegenerateChannel, DimensionMismatch, NotNormalized
from belltransfer.protocol import (
    BELL_LABELS,
    BELL_OUTCOMES,
    InputState,
    bell_measure_pair,
    branch_operators,
    branch_structure,
    compose_correlated_state,
    paper_trace,
    physical_layout,
    run_full_protocol,
)
from belltransfer.statevec import (
    apply_operator,
    apply_projector,
    basis_index,
    extract_qubits,
    fidelity,
    tensor,
)
from oracles import closed_form, optimal_success_probability

inside = st.floats(-math.pi / 4 + 0.01, math.pi / 4 - 0.01)


def rand_input(k, seed):
    return InputState.random(k, np.random.default_rng(seed))


def reference_branches(state, deltas):
    """One Bell measurement at a time, then the per-branch U, F and P_s."""
    k = state.k
    channels = channels_for(deltas)
    full = tensor([state.state] + [make_channel(c) for c in channels])
    leaves = [((), 1.0, full)]
    for i in range(k):
        nxt = []
        for bits, p, psi in leaves:
            for o in bell_measure_pair(psi, (i, k + 2 * i)):
                if o.probability > 0:
                    nxt.append((bits + (o.bits,), p * o.probability, o.state))
        leaves = nxt
    receivers, success = physical_layout(k)
    out = {}
    for bits, p, psi in leaves:
        u, f, ps = branch_operators(channels, bits)
        kept = apply_projector(apply_operator(apply_operator(psi, u), f), ps)
        p_keep = kept.norm_tracked**2
        recv = extract_qubits(kept, receivers, ps).normalized()
        out[bits] = (p, p * p_keep, fidelity(recv, state.state))
    return out


class TestInputState:
    def test_renormalizes_within_tolerance(self):
        s = InputState(np.array([1.0, 1e-10]))
        assert np.linalg.norm(s.coefficients) == 1.0 or abs(np.linalg.norm(s.coefficients) - 1) < 1e-15

    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalized):
            InputState(np.array([1.0, 1.0]))

    def test_rejects_bad_length(self):
        with pytest.raises(DimensionMismatch):
            InputState(np.ones(3) / math.sqrt(3))

    def test_random_is_seeded(self):
        np.testing.assert_array_equal(rand_input(2, 4).coefficients, rand_input(2, 4).coefficients)


class TestComposite:
    def test_support_bipartite(self):
        c = rand_input(2, 0)
        s = compose_correlated_state(c, channels_for((-0.2, -0.1)))
        assert [i + 1 for i in s.support(1e-14)] == [2, 19, 46, 63]

    def test_amplitudes_are_products(self):
        c = rand_input(2, 1)
        ch = channels_for((-0.2, -0.1))
        m = coefficient_products(ch)
        s = compose_correlated_state(c, ch)
        np.testing.assert_allclose(s.amplitudes[s.support(1e-14)], c.coefficients * m.values, atol=1e-15)

    def test_mismatched_channels(self):
        with pytest.raises(DimensionMismatch):
            compose_correlated_state(rand_input(2, 0), channels_for((0.0, 0.0, 0.0)))


class TestPaperTrace:
    def test_bipartite_stage_supports(self):
        t = paper_trace(rand_input(2, 2), channels_for((-math.pi / 12,) * 2))
        one_based = lambda name: [i + 1 for i in t.stage(name).support(1e-14)]
        assert one_based("post_M") == [2, 14, 19, 31]
        assert one_based("post_U") == [1, 3, 5, 7]
        assert one_based("post_Ps") == [1, 3, 5, 7]

    def test_post_m_literal_amplitudes(self):
        c = rand_input(2, 3)
        ch = channels_for((-0.3, -0.1))
        m = coefficient_products(ch)
        t = paper_trace(c, ch)
        post_m = t.stage("post_M").amplitudes
        np.testing.assert_allclose(post_m[t.survivors], c.coefficients * m.values, atol=1e-14)

    @pytest.mark.parametrize("k", [2, 3])
    def test_post_f_is_least_times_c(self, k):
        c = rand_input(k, 5)
        ch = channels_for((-0.25,) + (-0.1,) * (k - 1))
        t = paper_trace(c, ch)
        post_f = t.stage("post_F").amplitudes
        np.testing.assert_allclose(post_f[t.targets], t.coefficients.values[0] * c.coefficients, atol=1e-12)

    def test_zero_departure_post_f(self):
        c = rand_input(2, 6)
        t = paper_trace(c, channels_for((0.0, 0.0)))
        np.testing.assert_allclose(t.stage("post_F").amplitudes[[0, 2, 4, 6]], 0.5 * c.coefficients, atol=1e-12)

    def test_tripartite_receivers_and_targets(self):
        t = paper_trace(rand_input(3, 7), channels_for((-0.2, -0.2, -0.2)))
        assert t.targets == [basis_index(s) for s in (
            "000000100", "000000110", "000001100", "000001110",
            "000100100", "000100110", "000101100", "000101110",
        )]
        assert t.fidelity == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("k", [2, 3])
    def test_total_probability(self, k):
        deltas = (-math.pi / 12,) * k
        t = paper_trace(rand_input(k, 8), channels_for(deltas))
        assert t.total_probability == pytest.approx(closed_form(deltas), abs=1e-12)

    def test_outside_regime(self):
        with pytest.raises(AssumptionViolated):
            paper_trace(rand_input(2, 0), channels_for((0.1, 0.1)))


class TestBranchStructure:
    @pytest.mark.parametrize("bits", list(itertools.product(BELL_OUTCOMES, repeat=2)))
    def test_survivors_match_reference(self, bits):
        channels = channels_for((-0.2, 0.3))
        state = rand_input(2, 11)
        full = tensor([state.state] + [make_channel(c) for c in channels])
        psi = full
        for i, b in enumerate(bits):
            psi = next(o.state for o in bell_measure_pair(psi, (i, 2 + 2 * i)) if o.bits == b)
        survivors, _, coeffs = branch_structure(channels, bits)
        assert sorted(psi.support(1e-14)) == sorted(survivors)
        # amplitudes proportional to c_x * e_x with one common factor
        ratio = psi.amplitudes[survivors] / (state.coefficients * coeffs)
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)

    def test_bell_outcomes_sum_to_one(self):
        s = tensor([rand_input(1, 1).state, make_channel(channels_for((0.2,))[0])])
        assert sum(o.probability for o in bell_measure_pair(s, (0, 1))) == pytest.approx(1.0)


class TestFullProtocol:
    @pytest.mark.parametrize("deltas", [(-0.2, 0.3), (0.0, 0.0), (0.5, -0.7), (0.1, -0.2, 0.3)])
    def test_batched_matches_reference(self, deltas):
        state = rand_input(len(deltas), 12)
        report = run_full_protocol(state, channels_for(deltas))
        ref = reference_branches(state, deltas)
        assert len(report.branches) == len(ref) == 4 ** len(deltas)
        by_label = {"/".join(BELL_LABELS[b] for b in bits): v for bits, v in ref.items()}
        for b in report.branches:
            p_out, p_branch, fid = by_label[b.outcome_label]
            assert b.outcome_probability == pytest.approx(p_out, abs=1e-12)
            assert b.branch_probability == pytest.approx(p_branch, abs=1e-12)
            assert b.fidelity == pytest.approx(fid, abs=1e-12)

    @pytest.mark.parametrize(
        "deltas", [(0.0, 0.0), (-math.pi / 12,) * 2, (0.3, -0.2), (0.7, 0.1), (0.1, 0.2, -0.3), (-0.6, 0.0, 0.4)]
    )
    def test_matches_independent_oracle(self, deltas):
        report = run_full_protocol(rand_input(len(deltas), 13), channels_for(deltas))
        assert report.p_simulated == pytest.approx(optimal_success_probability(deltas), abs=1e-12)
        assert report.p_analytic == pytest.approx(closed_form(deltas), abs=1e-12)

    def test_outcome_mass(self):
        report = run_full_protocol(rand_input(2, 14), channels_for((0.4, -0.3)))
        assert report.outcome_mass == pytest.approx(1.0, abs=1e-12)
        assert report.failure_mass == pytest.approx(1 - report.p_simulated, abs=1e-12)
        assert report.violations() == []

    def test_degenerate(self):
        with pytest.raises(DegenerateChannel):
            run_full_protocol(rand_input(2, 0), channels_for((math.pi / 4, 0.0)))

    @settings(max_examples=30, deadline=None)
    @given(inside, inside, st.integers(0, 2**20))
    def test_fidelity_and_law(self, x, y, seed):
        report = run_full_protocol(rand_input(2, seed), channels_for((x, y)))
        assert report.violations() == []
        assert all(b.fidelity >= 1 - 1e-12 for b in report.branches if b.succeeded)

    @settings(max_examples=20, deadline=None)
    @given(inside, inside, inside)
    def test_input_independent(self, x, y, z):
        ch = channels_for((x, y, z))
        p = [run_full_protocol(rand_input(3, s), ch).p_simulated for s in (1, 2)]
        assert p[0] == pytest.approx(p[1], abs=1e-10)


def test_physical_layout():
    receivers, ps = physical_layout(2)
    assert receivers == [3, 5]
    assert dict(ps.constrained_qubits) == {0: 0, 1: 0, 2: 0, 4: 0}

