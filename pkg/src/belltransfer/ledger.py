"""
Discrepancy ledger: where the printed derivation and the computed one differ.

Each check transcribes a printed quantity (kets, coefficient lists, operator
element positions), recomputes it, and emits one :class:`LedgerEntry` per
location that disagrees. Nothing is listed by hand; an entry exists only if
the comparison fails.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .channels import channels_for, coefficient_products
from .filterops import (
    PRINTED_F_TABLES,
    PRINTED_U_SWAPS,
    paper_filter_tripartite,
    printed_permutation,
    swap_pairs,
    verify_unitary,
)
from .errors import InvariantViolation
from .protocol import InputState, paper_trace
from .statevec import basis_label

DEFAULT_DELTAS = {2: (-math.pi / 12,) * 2, 3: (-math.pi / 12,) * 3}

# post-measurement kets of the bipartite branch, grouped (12)(A)(B)
PRINTED_POST_M_KETS = ("00 00 01", "01 00 10", "00 11 00", "01 11 10")
# tripartite final kets, grouped (123)(A)(B)(C)
PRINTED_FINAL_KETS = (
    "000 00 01 00", "000 00 01 10", "000 00 11 00", "000 00 11 10",
    "000 10 01 00", "000 10 01 10", "000 10 11 00", "000 10 11 10",
)
PRINTED_M_FACTORS = {
    2: ("aA aB", "aA bB", "bA aB", "bA bB"),
    3: (
        "aA aB aC", "aA aB bC", "aA bB bC", "aA bB bC",
        "bA aB aC", "bA aB bC", "bA bB aC", "bA bB bC",
    ),
}


@dataclass(frozen=True)
class LedgerEntry:
    location: str
    printed: str
    derived: str
    severity: str  # "typo" or "inconsistency"
    k: int

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self):
        return f"[{self.severity}] {self.location}\n    printed: {self.printed}\n    derived: {self.derived}"


def _grouped(index: int, k: int) -> str:
    bits = basis_label(index, 3 * k)
    return " ".join([bits[:k]] + [bits[k + 2 * i : k + 2 * i + 2] for i in range(k)])


def _ket(grouped: str) -> str:
    return "".join(f"|{part}>" for part in grouped.split())


def _uniform(k: int) -> InputState:
    return InputState(np.full(2**k, 2 ** (-k / 2)))


def check_post_measurement_kets(deltas: Sequence[float]) -> list[LedgerEntry]:
    trace = paper_trace(_uniform(2), channels_for(deltas))
    support = set(trace.stage("post_M").support(1e-14))
    derived = []
    for x, pos in enumerate(trace.survivors):
        if pos not in support:
            raise InvariantViolation(f"term c{x + 1} missing from the post-measurement state")
        derived.append(_grouped(pos, 2))
    bad = [x for x, (p, d) in enumerate(zip(PRINTED_POST_M_KETS, derived)) if p != d]
    if not bad:
        return []
    terms = ", ".join(f"c{x + 1}" for x in bad)
    return [LedgerEntry(
        location=f"bipartite post-measurement state, ket of term {terms}",
        printed="; ".join(f"c{x + 1} {_ket(PRINTED_POST_M_KETS[x])}" for x in bad),
        derived="; ".join(f"c{x + 1} {_ket(derived[x])}" for x in bad)
        + " (the Bell operation leaves channel B untouched)",
        severity="typo",
        k=2,
    )]


def check_routing(deltas: Sequence[float], k: int) -> list[LedgerEntry]:
    """Does the printed ``U`` carry the measured terms onto the printed final kets?"""
    trace = paper_trace(_uniform(k), channels_for(deltas))
    printed_u = printed_permutation(k).index_map
    printed_targets = PRINTED_FINAL_KETS if k == 3 else None
    bad = []
    for x, pos in enumerate(trace.survivors):
        landed = _grouped(int(printed_u[pos]), k)
        wanted = printed_targets[x] if printed_targets else _grouped(trace.targets[x], k)
        if landed != wanted or _grouped(trace.targets[x], k) != wanted:
            bad.append((x, landed, wanted))
    derived_swaps = swap_pairs(trace.mapping)
    printed_swaps = set(PRINTED_U_SWAPS[k])
    if not bad and derived_swaps == printed_swaps:
        return []
    extra = sorted(printed_swaps - derived_swaps)
    needed = sorted(derived_swaps - printed_swaps)
    which = ", ".join(f"c{x + 1}" for x, _, _ in bad)
    derived = (
        "printed U leaves " + "; ".join(f"c{x + 1} at {_ket(l)}" for x, l, _ in bad)
        + f"; swaps reaching the printed kets are {needed} instead of {extra}"
    )
    if k == 3:
        derived += "; B-ket |11> is outside channel B's support {|01>,|10>} and arises only through U"
    return [LedgerEntry(
        location=f"{'tripartite' if k == 3 else 'bipartite'} final state kets for {which} / routing U",
        printed="; ".join(f"c{x + 1} {_ket(w)}" for x, _, w in bad) + f" via swaps {extra}",
        derived=derived,
        severity="inconsistency",
        k=k,
    )]


def check_coefficient_list(deltas: Sequence[float], k: int) -> list[LedgerEntry]:
    derived = coefficient_products(channels_for(deltas)).factors
    bad = [i for i, (p, d) in enumerate(zip(PRINTED_M_FACTORS[k], derived)) if p != d]
    if not bad:
        return []
    return [LedgerEntry(
        location=f"{'tripartite' if k == 3 else 'bipartite'} coefficient list, "
        + ", ".join(f"m{i + 1}" for i in bad),
        printed="; ".join(f"m{i + 1} = {PRINTED_M_FACTORS[k][i]}" for i in bad)
        + " (duplicates the next entry)",
        derived="; ".join(f"m{i + 1} = {derived[i]}" for i in bad),
        severity="typo",
        k=k,
    )]


def check_filter_positions(deltas: Sequence[float], k: int) -> list[LedgerEntry]:
    """Every ratio and compensator of the printed ``F`` must sit on the row of its term."""
    trace = paper_trace(_uniform(k), channels_for(deltas))
    home = {x + 1: t + 1 for x, t in enumerate(trace.targets)}
    bad = []
    for row, col, token, coeff in PRINTED_F_TABLES[k]:
        if token == "r" and (row != home[coeff] or col != home[coeff]):
            bad.append(f"F[{row},{col}] = m1/m{coeff}")
    if not bad:
        return []
    m = coefficient_products(channels_for(deltas))
    literal = paper_filter_tripartite(m) if k == 3 else None
    dev = verify_unitary(literal) if literal is not None else float("nan")
    moved = [b.split(" = ")[1] for b in bad]
    fixed = [f"F[{home[int(r.split('m')[-1])]},{home[int(r.split('m')[-1])]}] = {r}" for r in moved]
    return [LedgerEntry(
        location=f"{'tripartite' if k == 3 else 'bipartite'} filter F, diagonal ratio position",
        printed="; ".join(bad),
        derived="; ".join(fixed)
        + f", matching its compensator entries; literal matrix unitarity deviation "
        f"{dev:.3e} at departures {tuple(round(d, 6) for d in deltas)}",
        severity="inconsistency",
        k=k,
    )]


def build_ledger(deltas2: Sequence[float] | None = None, deltas3: Sequence[float] | None = None) -> list[LedgerEntry]:
    """All discrepancies, computed at departures inside the printed regime."""
    d2 = tuple(deltas2) if deltas2 is not None else DEFAULT_DELTAS[2]
    d3 = tuple(deltas3) if deltas3 is not None else DEFAULT_DELTAS[3]
    entries = check_post_measurement_kets(d2)
    entries += check_routing(d2, 2)
    entries += check_coefficient_list(d2, 2)
    entries += check_filter_positions(d2, 2)
    entries += check_routing(d3, 3)
    entries += check_coefficient_list(d3, 3)
    entries += check_filter_positions(d3, 3)
    return entries


def ledger_for(k: int, deltas: Sequence[float] | None = None) -> list[LedgerEntry]:
    """Entries concerning the ``k``-channel derivation.

    ``deltas`` is used when it lies in the printed regime; otherwise the
    defaults are used, since the printed operators are undefined there.
    """
    if k not in (2, 3):
        return []
    chosen = DEFAULT_DELTAS[k]
    if deltas is not None and all(d <= 0 for d in deltas) and all(d > -math.pi / 4 for d in deltas):
        chosen = tuple(deltas)
    kwargs = {"deltas2": chosen} if k == 2 else {"deltas3": chosen}
    return [e for e in build_ledger(**kwargs) if e.k == k]
