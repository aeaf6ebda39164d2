"""
Corrective operators: the routing permutation ``U`` and the filtering unitary ``F``.

Both are built two ways. *Constructive* builders derive the operator from
what it must do to a given branch state. *Literal* builders transcribe the
published element lists (1-based indices) so they can be checked against the
constructive ones.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .channels import CoefficientProducts
from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    DuplicateMapping,
    IndexCollision,
    InvalidIndex,
    RatioOutOfRange,
)
from .statevec import basis_index

UNITARY_ATOL = 1e-12
RATIO_ATOL = 1e-12


class OperatorKind(enum.Enum):
    PERMUTATION = "permutation"
    FILTER = "filter"
    GENERAL = "general"


class Provenance(enum.Enum):
    CONSTRUCTIVE = "constructive"
    PAPER_LITERAL = "paper_literal"


@dataclass(frozen=True, eq=False)
class _Blocks:
    retained: np.ndarray
    junk: np.ndarray
    ratios: np.ndarray
    compensators: np.ndarray


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Square operator on ``dim`` basis states.

    Exactly one backing representation is set: an index map for permutations
    (``index_map[j]`` is the image of basis state ``j``), disjoint 2x2 blocks
    for constructive filters, or a sparse matrix for everything else. The
    dense ``entries`` view is built on demand.
    """

    dim: int
    kind: OperatorKind = OperatorKind.GENERAL
    provenance: Provenance = Provenance.CONSTRUCTIVE
    index_map: np.ndarray | None = None
    blocks: _Blocks | None = None
    sparse: sp.csr_array | None = None

    @classmethod
    def from_dense(cls, entries, kind=OperatorKind.GENERAL, provenance=Provenance.CONSTRUCTIVE):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {entries.shape}")
        return cls(entries.shape[0], kind, provenance, sparse=sp.csr_array(entries))

    @cached_property
    def matrix(self) -> sp.csr_array:
        if self.sparse is not None:
            return self.sparse
        if self.index_map is not None:
            cols = np.arange(self.dim)
            return sp.csr_array(
                (np.ones(self.dim, dtype=complex), (self.index_map, cols)),
                shape=(self.dim, self.dim),
            )
        b = self.blocks
        untouched = np.setdiff1d(np.arange(self.dim), np.concatenate([b.retained, b.junk]))
        rows = np.concatenate([untouched, b.retained, b.retained, b.junk, b.junk])
        cols = np.concatenate([untouched, b.retained, b.junk, b.retained, b.junk])
        vals = np.concatenate([
            np.ones(untouched.size, dtype=complex),
            b.ratios,
            b.compensators,
            -b.compensators,
            np.conj(b.ratios),
        ])
        return sp.csr_array((vals, (rows, cols)), shape=(self.dim, self.dim))

    @property
    def entries(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"vector shape {vec.shape} vs operator dim {self.dim}")
        if self.index_map is not None:
            out = np.empty_like(vec)
            out[self.index_map] = vec
            return out
        if self.blocks is not None:
            b = self.blocks
            out = vec.copy()
            vs, vt = vec[b.retained], vec[b.junk]
            out[b.retained] = b.ratios * vs + b.compensators * vt
            out[b.junk] = -b.compensators * vs + np.conj(b.ratios) * vt
            return out
        return self.matrix @ vec


def verify_unitary(op: OperatorMatrix) -> float:
    """Largest absolute entry of ``O^H O - I`` and ``O O^H - I``."""
    if op.index_map is not None and np.unique(op.index_map).size == op.dim:
        return 0.0
    if op.blocks is not None:
        # disjoint [[r, q], [-q, r*]] blocks: off-diagonal terms cancel exactly
        b = op.blocks
        if not b.ratios.size:
            return 0.0
        return float(np.max(np.abs(np.abs(b.ratios) ** 2 + np.abs(b.compensators) ** 2 - 1)))
    m = op.matrix
    eye = sp.identity(op.dim, dtype=complex, format="csr")
    worst = 0.0
    for prod in (m.conj().T @ m, m @ m.conj().T):
        diff = sp.csr_array(prod - eye)
        if diff.nnz:
            worst = max(worst, float(np.max(np.abs(diff.data))))
    return worst


# -- permutations -------------------------------------------------------------


def build_permutation(mapping: Iterable[tuple[int, int]], dim: int) -> OperatorMatrix:
    """Permutation sending each ``from`` index to its ``to`` index.

    Unlisted states that are displaced are sent back along the freed slots in
    listing order; for a set of disjoint pairs this makes every pair a swap.
    """
    pairs = [(int(f), int(t)) for f, t in mapping]
    for f, t in pairs:
        if not (0 <= f < dim and 0 <= t < dim):
            raise InvalidIndex(f"mapping {f}->{t} outside dimension {dim}")
    froms = [f for f, _ in pairs]
    tos = [t for _, t in pairs]
    if len(set(froms)) != len(froms) or len(set(tos)) != len(tos):
        raise DuplicateMapping(f"mapping is not injective: {pairs}")
    perm = np.arange(dim)
    for f, t in pairs:
        perm[f] = t
    from_set, to_set = set(froms), set(tos)
    displaced = [t for t in tos if t not in from_set]
    freed = [f for f in froms if f not in to_set]
    for src, dst in zip(displaced, freed):
        perm[src] = dst
    perm.setflags(write=False)
    return OperatorMatrix(dim, OperatorKind.PERMUTATION, index_map=perm)


def _as_index(label) -> int:
    if isinstance(label, str):
        return basis_index(label)
    if int(label) < 0:
        raise InvalidIndex(f"negative basis index {label}")
    return int(label)


def derive_permutation_for_branch(
    surviving_states: Sequence, targets: Sequence
) -> list[tuple[int, int]]:
    """Mapping that routes each surviving basis state onto its target.

    Labels may be bit strings or zero-based indices. Entries already in place
    are dropped, so identical lists give an empty mapping.
    """
    if len(surviving_states) != len(targets):
        raise InvalidIndex("survivors and targets differ in length")
    src = [_as_index(s) for s in surviving_states]
    dst = [_as_index(t) for t in targets]
    if len(set(src)) != len(src) or len(set(dst)) != len(dst):
        raise InvalidIndex("survivors and targets must each be distinct")
    return [(s, t) for s, t in zip(src, dst) if s != t]


def swap_pairs(mapping: Iterable[tuple[int, int]], one_based: bool = True) -> set[tuple[int, int]]:
    shift = 1 if one_based else 0
    return {tuple(sorted((f + shift, t + shift))) for f, t in mapping}


# -- filters ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FilterPlan:
    """Retained index ``s_i`` is rescaled by ``ratios[i]``, leaking into ``junk[i]``."""

    retained: tuple[int, ...]
    ratios: tuple[complex, ...]
    junk: tuple[int, ...]

    def __post_init__(self):
        retained = tuple(int(i) for i in self.retained)
        junk = tuple(int(i) for i in self.junk)
        ratios = tuple(complex(r) for r in self.ratios)
        if not (len(retained) == len(ratios) == len(junk)):
            raise DimensionMismatch("retained, ratios and junk must have equal length")
        if any(i < 0 for i in retained + junk):
            raise InvalidIndex("negative index in filter plan")
        if len(set(retained + junk)) != len(retained) + len(junk):
            raise IndexCollision(f"filter indices collide: retained={retained} junk={junk}")
        for r in ratios:
            if abs(r) > 1 + RATIO_ATOL:
                raise RatioOutOfRange(f"|ratio| = {abs(r)!r} exceeds 1")
        object.__setattr__(self, "retained", retained)
        object.__setattr__(self, "junk", junk)
        object.__setattr__(self, "ratios", ratios)


def ratios_to_least(coefficients: Sequence[complex]) -> tuple[np.ndarray, int]:
    """``least / c_i`` for every coefficient; the least one gets exactly 1."""
    c = np.asarray(coefficients, dtype=complex)
    if np.any(c == 0):
        raise RatioOutOfRange("zero coefficient has no finite ratio")
    least = int(np.argmin(np.abs(c)))
    ratios = c[least] / c
    ratios[least] = 1.0
    return ratios, least


def choose_junk(count: int, occupied: Iterable[int], dim: int) -> list[int]:
    """Lowest ``count`` indices not in ``occupied``."""
    taken = set(int(i) for i in occupied)
    out = []
    for i in range(dim):
        if len(out) == count:
            break
        if i not in taken:
            out.append(i)
    if len(out) < count:
        raise IndexCollision(f"only {len(out)} free indices for {count} junk slots")
    return out


def build_filter(plan: FilterPlan, dim: int) -> OperatorMatrix:
    """Unitary with a ``[[r, q], [-q, r*]]`` block on each ``(retained, junk)`` pair."""
    if plan.retained and max(plan.retained + plan.junk) >= dim:
        raise InvalidIndex(f"filter plan does not fit dimension {dim}")
    r = np.array(plan.ratios, dtype=complex)
    mag = np.abs(r)
    over = mag > 1
    r[over] /= mag[over]
    q = np.sqrt(np.clip(1 - np.abs(r) ** 2, 0, None)).astype(complex)
    blocks = _Blocks(
        np.array(plan.retained, dtype=np.intp),
        np.array(plan.junk, dtype=np.intp),
        r,
        q,
    )
    return OperatorMatrix(dim, OperatorKind.FILTER, blocks=blocks)


# -- printed operators --------------------------------------------------------

PRINTED_U_SWAPS = {
    2: ((1, 2), (3, 19), (5, 14), (7, 31)),
    3: ((7, 72), (13, 137), (15, 204), (37, 307), (39, 366), (45, 441), (47, 508)),
}


def _printed_filter_table(ratio_rows, junk_start):
    """Element list of the printed filter, as (row, col, token, coefficient number).

    Tokens: ``r`` ratio, ``q`` compensator, ``-q``, ``rc`` conjugated ratio,
    ``0`` and ``1`` constants. Pattern: block ``j`` couples retained row
    ``s_j`` to junk column ``junk_start+j+1`` and junk row ``junk_start+j``;
    the last junk row closes the cycle at column ``junk_start``.
    """
    table = []
    for j, (diag, s, coeff) in enumerate(ratio_rows):
        table.append((diag, diag, "r", coeff))
        row_j, col_j = junk_start + j, junk_start + j + 1
        table += [
            (s, col_j, "q", coeff),
            (row_j, s, "-q", coeff),
            (row_j, col_j, "rc", coeff),
        ]
    n = len(ratio_rows)
    table += [(junk_start + j, junk_start + j, "0", None) for j in range(n + 1)]
    table.append((junk_start + n, junk_start, "1", None))
    return tuple(table)


# (diagonal position of the ratio, retained row of its block, m index), 1-based
PRINTED_F_TABLES = {
    2: _printed_filter_table([(3, 3, 2), (5, 5, 3), (7, 7, 4)], junk_start=8),
    3: _printed_filter_table(
        [(7, 7, 2), (13, 13, 3), (17, 15, 4), (37, 37, 5), (39, 39, 6), (45, 45, 7), (47, 47, 8)],
        junk_start=64,
    ),
}


def printed_permutation(k: int) -> OperatorMatrix:
    pairs = [(i - 1, j - 1) for i, j in PRINTED_U_SWAPS[k]]
    op = build_permutation(pairs, 2 ** (3 * k))
    return OperatorMatrix(op.dim, op.kind, Provenance.PAPER_LITERAL, index_map=op.index_map)


def require_first_least(m: CoefficientProducts) -> None:
    mags = np.abs(m.values)
    if mags[0] > mags.min() * (1 + 1e-12):
        raise AssumptionViolated(
            f"m_1 = {m.values[0]:.6g} is not the least coefficient "
            f"(m_{m.least_index + 1} = {m.least_value:.6g})"
        )


def _literal_filter(m: CoefficientProducts, k: int) -> OperatorMatrix:
    if m.k != k:
        raise DimensionMismatch(f"expected {k} channels, got {m.k}")
    require_first_least(m)
    dim = 2 ** (3 * k)
    ratio = {i + 1: m.values[0] / v for i, v in enumerate(m.values)}
    f = np.eye(dim, dtype=complex)
    for row, col, token, coeff in PRINTED_F_TABLES[k]:
        if token in ("0", "1"):
            value = float(token)
        else:
            r = ratio[coeff]
            q = np.sqrt(max(0.0, 1 - abs(r) ** 2))
            value = {"r": r, "q": q, "-q": -q, "rc": np.conj(r)}[token]
        f[row - 1, col - 1] = value
    return OperatorMatrix.from_dense(f, OperatorKind.FILTER, Provenance.PAPER_LITERAL)


def paper_filter_bipartite(m: CoefficientProducts) -> OperatorMatrix:
    """The 64x64 filter exactly as its element list is printed."""
    return _literal_filter(m, 2)


def paper_filter_tripartite(m: CoefficientProducts) -> OperatorMatrix:
    """The 512x512 filter as printed.

    Not unitary away from zero departure: the ratio for ``m_4`` sits on the
    diagonal at 17 while its compensators use row/column 15.
    """
    return _literal_filter(m, 3)


# -- text dump ----------------------------------------------------------------


def _fmt(z: complex) -> str:
    return f"{z.real:.16e}{z.imag:+.16e}i"


def dump_operator(op: OperatorMatrix, fh: TextIO) -> None:
    """One matrix row per line, entries ``re+imi`` with 17 significant digits."""
    dense = op.entries
    for row in dense:
        fh.write(" ".join(_fmt(z) for z in row))
        fh.write("\n")


def format_operator(op: OperatorMatrix) -> str:
    buf = io.StringIO()
    dump_operator(op, buf)
    return buf.getvalue()


def load_operator(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    return np.array([[complex(tok[:-1] + "j") for tok in row] for row in rows], dtype=complex)
