"""
End-to-end transfer of a k-qubit message through k imperfect Bell channels.

Two pipelines share one qubit layout: message qubits ``0..k-1`` followed by
one ``(sender, receiver)`` pair per channel at ``(k+2i, k+2i+1)``.

``paper_trace``
    Follows the printed derivation on its single displayed branch: the
    correlated composite state, a Bell operation on qubit 0, the ``M``
    projection, the routing permutation ``U``, the filter ``F`` and the final
    projector ``P_s``. Stage vectors keep the printed (unnormalized) scale.

``run_full_protocol``
    Physical version: a genuine tensor product of message and channels,
    Bell measurements on every (message, sender) pair, and a per-branch
    permutation, filter and post-selection. Summing the successful branches
    is a brute-force oracle for ``2**k * min|m|**2``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .channels import (
    ChannelSpec,
    CoefficientProducts,
    Parity,
    coefficient_products,
    make_channel,
)
from .errors import DimensionMismatch, InvariantViolation, NotNormalized
from .filterops import (
    UNITARY_ATOL,
    FilterPlan,
    OperatorMatrix,
    build_filter,
    build_permutation,
    choose_junk,
    derive_permutation_for_branch,
    paper_filter_bipartite,
    printed_permutation,
    ratios_to_least,
    require_first_least,
    verify_unitary,
)
from .statevec import (
    BELL_OPERATION,
    CNOT,
    NORM_ATOL,
    ProjectorSpec,
    StateVector,
    apply_gate,
    apply_operator,
    apply_projector,
    basis_label,
    extract_qubits,
    fidelity,
    project,
    tensor,
)

SIM_ATOL = 1e-10
FIDELITY_ATOL = 1e-12
MASS_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class InputState:
    """Message amplitudes ``c_1 .. c_(2**k)``; stored renormalized."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.complex128).reshape(-1)
        k = c.size.bit_length() - 1
        if c.size < 2 or 2**k != c.size:
            raise DimensionMismatch(f"{c.size} coefficients is not 2**k")
        norm = float(np.linalg.norm(c))
        if abs(norm**2 - 1) > NORM_ATOL:
            raise NotNormalized(f"sum |c_i|^2 = {norm**2!r}")
        c = c / norm
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> InputState:
        c = rng.normal(size=2**k) + 1j * rng.normal(size=2**k)
        return cls(c / np.linalg.norm(c))

    @property
    def k(self) -> int:
        return self.coefficients.size.bit_length() - 1

    @property
    def state(self) -> StateVector:
        return StateVector(self.coefficients)


def _check_channels(input: InputState, channels: Sequence[ChannelSpec]) -> CoefficientProducts:
    if input.k != len(channels):
        raise DimensionMismatch(f"{input.k}-qubit message needs {input.k} channels, got {len(channels)}")
    return coefficient_products(channels)


def compose_correlated_state(input: InputState, channels: Sequence[ChannelSpec]) -> StateVector:
    """The ``2**k``-term correlated state: message label ``x`` paired with the
    ``a``- or ``b``-term ket of channel ``i`` according to bit ``i`` of ``x``.

    Amplitudes are ``m_x c_x``; the result is generally unnormalized.
    """
    m = _check_channels(input, channels)
    k = input.k
    terms = {}
    for x in range(2**k):
        bits = basis_label(x, k)
        kets = "".join(ch.kets()[int(b)] for ch, b in zip(channels, bits))
        terms[bits + kets] = m.values[x] * input.coefficients[x]
    return StateVector.from_terms(3 * k, terms)


# -- printed single-branch trace ---------------------------------------------


@dataclass(frozen=True)
class TraceLayout:
    receivers: tuple[int, ...]
    pinned: tuple[tuple[int, int], ...]

    def target(self, x: int, k: int) -> int:
        bits = dict(self.pinned)
        bits.update(zip(self.receivers, map(int, basis_label(x, k))))
        return int("".join(str(bits[q]) for q in range(3 * k)), 2)

    @property
    def projector(self) -> ProjectorSpec:
        return ProjectorSpec(self.pinned)


# where the printed final states park the message, and what P_s pins
TRACE_LAYOUTS = {
    2: TraceLayout(receivers=(3, 4), pinned=((0, 0), (1, 0), (2, 0), (5, 0))),
    3: TraceLayout(
        receivers=(3, 5, 7),
        pinned=((0, 0), (1, 0), (2, 0), (4, 0), (6, 1), (8, 0)),
    ),
}


@dataclass(frozen=True, eq=False)
class TraceStage:
    name: str
    state: StateVector
    note: str = ""


@dataclass(eq=False)
class TraceReport:
    k: int
    deltas: tuple[float, ...]
    coefficients: CoefficientProducts
    stages: list[TraceStage]
    survivors: list[int]
    targets: list[int]
    mapping: list[tuple[int, int]]
    single_branch_probability: float
    total_probability: float
    receiver_state: StateVector
    fidelity: float
    ledger: list = field(default_factory=list)

    def stage(self, name: str) -> StateVector:
        for s in self.stages:
            if s.name == name:
                return s.state
        raise KeyError(name)


def trace_survivors(channels: Sequence[ChannelSpec]) -> list[int]:
    """Positions of the ``2**k`` correlated terms after ``M`` pins qubit 0 to 0."""
    k = len(channels)
    out = []
    for x in range(2**k):
        bits = basis_label(x, k)
        kets = "".join(ch.kets()[int(b)] for ch, b in zip(channels, bits))
        out.append(int("0" + bits[1:] + kets, 2))
    return out


def trace_operators(channels: Sequence[ChannelSpec]):
    """``(U, F, survivors, targets, mapping)`` used by :func:`paper_trace`.

    For k = 2 these are the printed matrices. The printed tripartite ``U``
    and ``F`` are mutually inconsistent, so for k = 3 derived ones govern.
    """
    k = len(channels)
    if k not in TRACE_LAYOUTS:
        raise DimensionMismatch("the printed derivation covers k = 2 and k = 3 only")
    m = coefficient_products(channels)
    require_first_least(m)
    layout = TRACE_LAYOUTS[k]
    dim = 2 ** (3 * k)
    survivors = trace_survivors(channels)
    targets = [layout.target(x, k) for x in range(2**k)]
    mapping = derive_permutation_for_branch(survivors, targets)
    if k == 2:
        return printed_permutation(2), paper_filter_bipartite(m), survivors, targets, mapping
    u = build_permutation(mapping, dim)
    ratios = m.values[0] / m.values
    plan = FilterPlan(targets, ratios, choose_junk(len(targets), targets, dim))
    return u, build_filter(plan, dim), survivors, targets, mapping


def paper_trace(input: InputState, channels: Sequence[ChannelSpec]) -> TraceReport:
    k = input.k
    if k not in TRACE_LAYOUTS:
        raise DimensionMismatch("the printed derivation covers k = 2 and k = 3 only")
    m = _check_channels(input, channels)
    require_first_least(m)
    layout = TRACE_LAYOUTS[k]

    composite = compose_correlated_state(input, channels)
    bell = apply_gate(composite, BELL_OPERATION, [0])
    # M with normalization constant sqrt(2): undoes the Bell operation's 1/sqrt(2)
    post_m = apply_projector(bell, ProjectorSpec(((0, 0),))).scaled(math.sqrt(2))

    u, f, survivors, targets, mapping = trace_operators(channels)
    post_u = apply_operator(post_m, u)
    post_f = apply_operator(post_u, f)
    post_ps = apply_projector(post_f, layout.projector)

    receiver = extract_qubits(post_ps, layout.receivers, layout.projector)
    single = post_ps.norm_tracked**2
    stages = [
        TraceStage("composite", composite, "correlated message-channel state"),
        TraceStage("bell_operation", bell, "Bell operation on qubit 0"),
        TraceStage("post_M", post_m, "qubit 0 projected onto |0>"),
        TraceStage("post_U", post_u, "after the routing permutation"),
        TraceStage("post_F", post_f, "after the filter"),
        TraceStage("post_Ps", post_ps, "after the success projector"),
    ]
    return TraceReport(
        k=k,
        deltas=tuple(ch.departure for ch in channels),
        coefficients=m,
        stages=stages,
        survivors=survivors,
        targets=targets,
        mapping=mapping,
        single_branch_probability=single,
        total_probability=2**k * single,
        receiver_state=receiver.normalized(),
        fidelity=fidelity(receiver.normalized(), input.state),
    )


# -- physical branch enumeration ---------------------------------------------

# (z, s): z from the Bell operation on the message qubit, s the sender parity bit
BELL_OUTCOMES = ((0, 0), (1, 0), (0, 1), (1, 1))
BELL_LABELS = {(0, 0): "phi+", (1, 0): "phi-", (0, 1): "psi+", (1, 1): "psi-"}


@dataclass(frozen=True, eq=False)
class BellOutcome:
    label: str
    bits: tuple[int, int]
    probability: float
    state: StateVector


def bell_measure_pair(state: StateVector, pair: tuple[int, int]) -> list[BellOutcome]:
    """Bell-basis measurement of ``pair`` via CNOT then the Bell operation.

    Conditional states are left in the rotated frame, i.e. the measured
    qubits read ``|z s>``.
    """
    q0, q1 = pair
    rotated = apply_gate(state, CNOT, [q0, q1])
    rotated = apply_gate(rotated, BELL_OPERATION, [q0])
    out = []
    for z, s in BELL_OUTCOMES:
        prob, post = project(rotated, ProjectorSpec(((q0, z), (q1, s))))
        out.append(BellOutcome(BELL_LABELS[(z, s)], (z, s), prob, post))
    return out


def physical_layout(k: int) -> tuple[list[int], ProjectorSpec]:
    receivers = [k + 2 * i + 1 for i in range(k)]
    pinned = [(q, 0) for q in range(3 * k) if q not in receivers]
    return receivers, ProjectorSpec(tuple(pinned))


def branch_structure(
    channels: Sequence[ChannelSpec], outcome_bits: Sequence[tuple[int, int]]
) -> tuple[list[int], list[int], np.ndarray]:
    """Survivor positions, target positions and effective coefficients of one branch.

    Message component ``x`` lands on message bits ``z``, sender bits ``s`` and
    receiver bits ``x ^ s ^ parity``, with amplitude proportional to
    ``prod_i (-1)**(z_i x_i) * coef_i(x_i ^ s_i)``. Its target has every
    non-receiver qubit at 0 and receiver bits ``x``.
    """
    parities = tuple(ch.parity for ch in channels)
    survivors, targets, signs, sender_bits = _branch_layout(parities, tuple(map(tuple, outcome_bits)))
    table = np.array([[ch.a, ch.signed_b] for ch in channels])
    picked = table[np.arange(len(channels)), sender_bits]
    return list(survivors), list(targets), signs * np.prod(picked, axis=1)


@lru_cache(maxsize=4096)
def _branch_layout(parities: tuple[Parity, ...], outcome_bits: tuple[tuple[int, int], ...]):
    k = len(parities)
    n = 3 * k
    survivors, targets, signs, sender_bits = [], [], [], []
    for x in range(2**k):
        xb = [int(b) for b in basis_label(x, k)]
        src = [0] * n
        dst = [0] * n
        sign = 1
        senders = []
        for i, (parity, (z, s), xi) in enumerate(zip(parities, outcome_bits, xb)):
            sender_bit = xi ^ s
            src[i] = z
            src[k + 2 * i] = s
            src[k + 2 * i + 1] = sender_bit ^ (parity is Parity.ANTICORRELATED)
            dst[k + 2 * i + 1] = xi
            sign *= (-1) ** (z * xi)
            senders.append(sender_bit)
        survivors.append(int("".join(map(str, src)), 2))
        targets.append(int("".join(map(str, dst)), 2))
        signs.append(sign)
        sender_bits.append(senders)
    return tuple(survivors), tuple(targets), np.array(signs), np.array(sender_bits)


def branch_operators(
    channels: Sequence[ChannelSpec], outcome_bits: Sequence[tuple[int, int]]
) -> tuple[OperatorMatrix, OperatorMatrix, ProjectorSpec]:
    """Constructive ``U``, ``F`` and success projector for one branch."""
    k = len(channels)
    dim = 2 ** (3 * k)
    survivors, targets, coeffs = branch_structure(channels, outcome_bits)
    u = build_permutation(derive_permutation_for_branch(survivors, targets), dim)
    ratios, _ = ratios_to_least(coeffs)
    f = build_filter(FilterPlan(targets, ratios, choose_junk(len(targets), targets, dim)), dim)
    return u, f, physical_layout(k)[1]


@dataclass(frozen=True, eq=False)
class _BranchTables:
    """Everything about the 4**k branches that does not depend on departures."""

    labels: tuple[str, ...]
    outcome_bits: tuple[tuple[tuple[int, int], ...], ...]
    masks: np.ndarray  # (branches, dim) measured bits match the outcome
    routes: np.ndarray  # (branches, dim) permutation index maps
    targets: np.ndarray  # (2**k,) positions of message components after U
    junk: np.ndarray  # (2**k,) leakage slots for the filter
    success: np.ndarray  # (2**k,) P_s subspace in receiver order
    signs: np.ndarray  # (branches, 2**k)
    sender_bits: np.ndarray  # (branches, 2**k, k)


@lru_cache(maxsize=64)
def _branch_tables(parities: tuple[Parity, ...]) -> _BranchTables:
    k = len(parities)
    n = 3 * k
    dim = 2**n
    idx = np.arange(dim)
    success_idx = np.flatnonzero(physical_layout(k)[1].mask(n))
    labels, all_bits, masks, routes, signs, senders = [], [], [], [], [], []
    targets = None
    for bits in itertools.product(BELL_OUTCOMES, repeat=k):
        keep = np.ones(dim, dtype=bool)
        for i, (z, s) in enumerate(bits):
            keep &= ((idx >> (n - 1 - i)) & 1) == z
            keep &= ((idx >> (n - 1 - (k + 2 * i))) & 1) == s
        survivors, tgt, sign, sender = _branch_layout(parities, bits)
        u = build_permutation(derive_permutation_for_branch(survivors, tgt), dim)
        if verify_unitary(u) > UNITARY_ATOL:
            raise InvariantViolation(f"routing for {bits} is not a permutation")
        labels.append("/".join(BELL_LABELS[b] for b in bits))
        all_bits.append(bits)
        masks.append(keep)
        routes.append(u.index_map)
        signs.append(sign)
        senders.append(sender)
        targets = np.array(tgt)
    # the success subspace is exactly the target set, ordered by message label
    if not np.array_equal(success_idx, targets):
        raise InvariantViolation("success subspace differs from the routing targets")
    junk = np.array(choose_junk(targets.size, targets, dim))
    return _BranchTables(
        tuple(labels), tuple(all_bits), np.array(masks), np.array(routes),
        targets, junk, success_idx, np.array(signs), np.array(senders),
    )


@dataclass(frozen=True, eq=False)
class BranchOutcome:
    outcome_label: str
    outcome_probability: float
    branch_probability: float
    receiver_state: StateVector | None
    fidelity: float | None

    @property
    def succeeded(self) -> bool:
        return self.branch_probability > 0.0


@dataclass(eq=False)
class TransferReport:
    k: int
    deltas: tuple[float, ...]
    p_analytic: float
    p_simulated: float
    min_fidelity: float | None
    branches: list[BranchOutcome]
    discrepancies: list = field(default_factory=list)

    @property
    def outcome_mass(self) -> float:
        return math.fsum(b.outcome_probability for b in self.branches)

    @property
    def failure_mass(self) -> float:
        return self.outcome_mass - self.p_simulated

    def violations(self, tolerance: float = SIM_ATOL) -> list[str]:
        out = []
        if abs(self.p_simulated - self.p_analytic) > tolerance:
            out.append(f"p_simulated {self.p_simulated!r} != p_analytic {self.p_analytic!r}")
        if self.p_simulated > 0 and (self.min_fidelity or 0.0) < 1 - FIDELITY_ATOL:
            out.append(f"min_fidelity {self.min_fidelity!r} < 1")
        if abs(self.outcome_mass - 1) > MASS_ATOL:
            out.append(f"branch probabilities sum to {self.outcome_mass!r}")
        return out


def run_full_protocol(
    input: InputState, channels: Sequence[ChannelSpec], check_unitarity: bool = True
) -> TransferReport:
    """Enumerate every Bell outcome and post-select each branch.

    All pairs are rotated into the computational basis first (CNOT then the
    Bell operation); each branch is then the slice with matching measured
    bits. Branches are processed together as rows of one array, each with
    its own permutation and filter ratios.
    """
    m = _check_channels(input, channels)
    k = input.k
    tables = _branch_tables(tuple(ch.parity for ch in channels))

    rotated = tensor([input.state] + [make_channel(ch) for ch in channels])
    for i in range(k):
        rotated = apply_gate(rotated, CNOT, [i, k + 2 * i])
        rotated = apply_gate(rotated, BELL_OPERATION, [i])

    leaves = np.where(tables.masks, rotated.amplitudes, 0)
    p_outcome = np.einsum("bd,bd->b", leaves.conj(), leaves).real
    rows = np.arange(leaves.shape[0])[:, None]
    routed = np.empty_like(leaves)
    routed[rows, tables.routes] = leaves

    coef_table = np.array([[ch.a, ch.signed_b] for ch in channels])
    picked = coef_table[np.arange(k), tables.sender_bits]
    coeffs = tables.signs * np.prod(picked, axis=-1)
    least = np.argmin(np.abs(coeffs), axis=1)
    ratios = (coeffs[rows[:, 0], least][:, None] / coeffs).astype(complex)
    ratios[rows[:, 0], least] = 1.0
    comp = np.sqrt(np.clip(1 - np.abs(ratios) ** 2, 0, None))
    if check_unitarity:
        dev = float(np.max(np.abs(np.abs(ratios) ** 2 + comp**2 - 1)))
        if dev > UNITARY_ATOL or np.any(np.abs(ratios) > 1 + 1e-12):
            raise InvariantViolation(f"filter deviates from unitary by {dev}")
    vs, vt = routed[:, tables.targets], routed[:, tables.junk]
    routed[:, tables.targets] = ratios * vs + comp * vt
    routed[:, tables.junk] = -comp * vs + np.conj(ratios) * vt

    kept = routed[:, tables.success]
    p_joint = np.einsum("bd,bd->b", kept.conj(), kept).real
    branches = []
    for b, label in enumerate(tables.labels):
        if p_joint[b] == 0.0:
            branches.append(BranchOutcome(label, float(p_outcome[b]), 0.0, None, None))
            continue
        receiver = StateVector(kept[b] / math.sqrt(p_joint[b]))
        branches.append(
            BranchOutcome(label, float(p_outcome[b]), float(p_joint[b]), receiver, fidelity(receiver, input.state))
        )

    fids = [b.fidelity for b in branches if b.succeeded]
    return TransferReport(
        k=k,
        deltas=tuple(ch.departure for ch in channels),
        p_analytic=float(2**k * m.least_value**2),
        p_simulated=math.fsum(b.branch_probability for b in branches),
        min_fidelity=min(fids) if fids else None,
        branches=branches,
    )
