"""
Dense state-vector algebra over qubit registers.

Ordering convention: qubit 0 is the most significant bit, so the basis label
``b0 b1 ... b(n-1)`` sits at zero-based index ``sum(b_k * 2**(n-1-k))``.
Printed 1-based matrix indices are that value plus one.

All values are immutable; every operation returns a new :class:`StateVector`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidIndex, NotNormalized

if TYPE_CHECKING:
    from .filterops import OperatorMatrix

NORM_ATOL = 1e-9

_SQRT2_INV = 1 / np.sqrt(2)
# |0> -> (|0>+|1>)/sqrt2, |1> -> (|0>-|1>)/sqrt2
BELL_OPERATION = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV
IDENTITY_2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def basis_index(label: str) -> int:
    """Zero-based index of a bit-string label (qubit 0 leftmost)."""
    label = label.replace(" ", "")
    if not label or set(label) - {"0", "1"}:
        raise InvalidIndex(f"not a basis label: {label!r}")
    return int(label, 2)


def basis_label(index: int, num_qubits: int) -> str:
    if not 0 <= index < 2**num_qubits:
        raise InvalidIndex(f"index {index} out of range for {num_qubits} qubits")
    return format(index, f"0{num_qubits}b")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes over ``num_qubits`` qubits.

    ``norm_tracked`` is the 2-norm of the stored amplitudes. Protocol stages
    that reproduce unnormalized printed expressions carry it explicitly;
    physical states have ``norm_tracked == 1``.
    """

    amplitudes: np.ndarray
    num_qubits: int = field(init=False)
    norm_tracked: float = field(init=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        n = int(amps.size).bit_length() - 1
        if amps.size < 2 or 2**n != amps.size:
            raise DimensionMismatch(f"length {amps.size} is not 2**n with n >= 1")
        norm = math.sqrt(np.vdot(amps, amps).real)
        # a finite sum of squares rules out NaN/Inf entries
        if not math.isfinite(norm):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", _frozen(amps))
        object.__setattr__(self, "num_qubits", n)
        object.__setattr__(self, "norm_tracked", norm)

    @classmethod
    def basis(cls, label: str) -> StateVector:
        label = label.replace(" ", "")
        amps = np.zeros(2 ** len(label), dtype=complex)
        amps[basis_index(label)] = 1.0
        return cls(amps)

    @classmethod
    def from_terms(cls, num_qubits: int, terms: dict[str, complex]) -> StateVector:
        """Build from ``{label: amplitude}``; no normalization applied."""
        amps = np.zeros(2**num_qubits, dtype=complex)
        for label, value in terms.items():
            idx = basis_index(label)
            if idx >= amps.size or len(label.replace(" ", "")) != num_qubits:
                raise InvalidIndex(f"label {label!r} does not fit {num_qubits} qubits")
            amps[idx] += value
        return cls(amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def is_empty(self) -> bool:
        return self.norm_tracked == 0.0

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm_tracked - 1.0) <= NORM_ATOL

    def normalized(self) -> StateVector:
        if self.is_empty:
            raise NotNormalized("cannot normalize the zero vector")
        return StateVector(self.amplitudes / self.norm_tracked)

    def scaled(self, factor: complex) -> StateVector:
        return StateVector(self.amplitudes * factor)

    def support(self, atol: float = 0.0) -> list[int]:
        """Zero-based indices whose amplitude magnitude exceeds ``atol``."""
        return [int(i) for i in np.flatnonzero(np.abs(self.amplitudes) > atol)]

    def terms(self, atol: float = 0.0) -> dict[str, complex]:
        n = self.num_qubits
        return {basis_label(i, n): complex(self.amplitudes[i]) for i in self.support(atol)}

    def __repr__(self):
        shown = ", ".join(f"{v:.4g}|{k}>" for k, v in list(self.terms(1e-12).items())[:8])
        return f"StateVector(n={self.num_qubits}, norm={self.norm_tracked:.6g}, [{shown}])"


@dataclass(frozen=True)
class ProjectorSpec:
    """Projector fixing ``qubit -> bit`` on the listed qubits, identity elsewhere."""

    constrained_qubits: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(q), int(b)) for q, b in self.constrained_qubits)
        qubits = [q for q, _ in pairs]
        if len(set(qubits)) != len(qubits):
            raise InvalidIndex(f"repeated qubit in projector {pairs}")
        if any(b not in (0, 1) for _, b in pairs) or any(q < 0 for q in qubits):
            raise InvalidIndex(f"bad projector constraints {pairs}")
        object.__setattr__(self, "constrained_qubits", pairs)

    @classmethod
    def from_bits(cls, qubits: Sequence[int], bits: Sequence[int]) -> ProjectorSpec:
        return cls(tuple(zip(qubits, bits)))

    def validate(self, num_qubits: int) -> None:
        for q, _ in self.constrained_qubits:
            if q >= num_qubits:
                raise InvalidIndex(f"qubit {q} outside a {num_qubits}-qubit register")

    def mask(self, num_qubits: int) -> np.ndarray:
        """Boolean mask over basis indices inside the projected subspace."""
        self.validate(num_qubits)
        return _subspace_mask(self.constrained_qubits, num_qubits)


@lru_cache(maxsize=1024)
def _subspace_mask(constraints: tuple[tuple[int, int], ...], num_qubits: int) -> np.ndarray:
    idx = np.arange(2**num_qubits)
    keep = np.ones(idx.size, dtype=bool)
    for q, b in constraints:
        keep &= ((idx >> (num_qubits - 1 - q)) & 1) == b
    return _frozen(keep)


def tensor(parts: Iterable[StateVector]) -> StateVector:
    parts = list(parts)
    if not parts:
        raise DimensionMismatch("tensor of an empty list")
    return StateVector(reduce(np.kron, (p.amplitudes for p in parts)))


def apply_gate(state: StateVector, gate: np.ndarray, targets: Sequence[int]) -> StateVector:
    """Apply a 2**t x 2**t gate to ``targets`` (first target = most significant gate bit)."""
    gate = np.asarray(gate, dtype=complex)
    targets = [int(t) for t in targets]
    n = state.num_qubits
    t = len(targets)
    if len(set(targets)) != t or any(not 0 <= q < n for q in targets):
        raise DimensionMismatch(f"bad targets {targets} for {n} qubits")
    if gate.shape != (2**t, 2**t):
        raise DimensionMismatch(f"gate shape {gate.shape} does not match {t} targets")
    psi = state.amplitudes.reshape([2] * n)
    psi = np.moveaxis(psi, targets, range(t))
    psi = (gate @ psi.reshape(2**t, -1)).reshape([2] * n)
    psi = np.moveaxis(psi, range(t), targets)
    return StateVector(psi.reshape(-1))


def apply_operator(state: StateVector, op: OperatorMatrix) -> StateVector:
    if op.dim != state.dim:
        raise DimensionMismatch(f"operator dim {op.dim} vs state dim {state.dim}")
    return StateVector(op.apply(state.amplitudes))


def apply_projector(state: StateVector, proj: ProjectorSpec) -> StateVector:
    """Unnormalized image ``P|v>``."""
    keep = proj.mask(state.num_qubits)
    return StateVector(np.where(keep, state.amplitudes, 0))


def project(state: StateVector, proj: ProjectorSpec) -> tuple[float, StateVector]:
    """Born-rule projection.

    Returns the probability relative to the input's own norm and the
    renormalized post-measurement state. A zero-probability outcome returns
    ``(0.0, zero vector)``; check ``post.is_empty``.
    """
    total = state.norm_tracked**2
    image = apply_projector(state, proj)
    if total == 0.0:
        return 0.0, image
    prob = image.norm_tracked**2 / total
    if image.is_empty:
        return 0.0, image
    return prob, image.normalized()


def fidelity(s1: StateVector, s2: StateVector) -> float:
    """``|<s1|s2>|**2`` for normalized states."""
    if s1.dim != s2.dim:
        raise DimensionMismatch(f"{s1.num_qubits} vs {s2.num_qubits} qubits")
    for s in (s1, s2):
        if not s.is_normalized:
            raise NotNormalized(f"norm {s.norm_tracked!r} deviates from 1")
    return float(min(1.0, abs(np.vdot(s1.amplitudes, s2.amplitudes)) ** 2))


def extract_qubits(state: StateVector, qubits: Sequence[int], fixed: ProjectorSpec) -> StateVector:
    """Amplitudes on ``qubits`` with every other qubit pinned by ``fixed``.

    ``fixed`` must constrain exactly the complement of ``qubits``; the result
    lives on ``len(qubits)`` qubits in the listed order and is unnormalized.
    """
    n = state.num_qubits
    pinned = dict(fixed.constrained_qubits)
    if set(pinned) | set(qubits) != set(range(n)) or set(pinned) & set(qubits):
        raise DimensionMismatch("qubits and pinned bits must partition the register")
    psi = state.amplitudes.reshape([2] * n)
    index = tuple(pinned.get(q, slice(None)) for q in range(n))
    free = [q for q in range(n) if q not in pinned]
    sub = psi[index]
    order = [free.index(q) for q in qubits]
    return StateVector(np.transpose(sub, order).reshape(-1))
