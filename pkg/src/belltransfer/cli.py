"""
Command-line interface: ``transfer``, ``trace``, ``sweep`` and ``verify``.

Exit codes: 0 all invariants hold, 1 usage error, 2 domain error or
invariant violation. Angles are radians.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .channels import channels_for, coefficient_products
from .errors import BellTransferError
from .filterops import (
    UNITARY_ATOL,
    PRINTED_U_SWAPS,
    dump_operator,
    paper_filter_bipartite,
    paper_filter_tripartite,
    printed_permutation,
    swap_pairs,
    verify_unitary,
)
from .ledger import DEFAULT_DELTAS, LedgerEntry, build_ledger, ledger_for
from .protocol import SIM_ATOL, InputState, TransferReport, paper_trace, run_full_protocol, trace_operators
from .sweep import Axis, GridSpec, InputMode, run_sweep, write_csv

AMPLITUDE_ATOL = 1e-14
CONFIG_KEYS = {
    "k", "delta", "input", "seed", "grid", "out", "tolerance", "analytic_only", "dump_operators",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- configuration ------------------------------------------------------------


def parse_deltas(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--delta expects comma-separated radians, got {text!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise UsageError("--delta values must be finite")
    return values


def parse_complex(token: str) -> complex:
    """``re`` or ``re:im``."""
    parts = token.strip().split(":")
    if len(parts) > 2:
        raise UsageError(f"bad amplitude {token!r}; expected re[:im]")
    try:
        return complex(float(parts[0]), float(parts[1]) if len(parts) == 2 else 0.0)
    except ValueError:
        raise UsageError(f"bad amplitude {token!r}; expected re[:im]") from None


def parse_input(text: str) -> tuple[complex, ...]:
    return tuple(parse_complex(t) for t in text.split(","))


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: expected 'key = value' with a known key, got {line!r}")
        out[key] = value.strip()
    return out


@dataclass
class RunConfig:
    command: str
    k: int | None = None
    deltas: tuple[float, ...] | None = None
    coefficients: tuple[complex, ...] | None = None
    seed: int | None = None
    grid: tuple[str, ...] = ()
    out: str | None = None
    tolerance: float = SIM_ATOL
    analytic_only: bool = False
    dump_operators: str | None = None
    extras: dict = field(default_factory=dict)

    def resolved_k(self, default: int = 2) -> int:
        k = self.k
        if k is None:
            k = len(self.deltas) if self.deltas else (len(self.grid) if len(self.grid) > 1 else default)
        if k < 1:
            raise UsageError("--k must be positive")
        if self.deltas is not None and len(self.deltas) != k:
            raise UsageError(f"--delta has {len(self.deltas)} values for k = {k}")
        return k

    def resolved_deltas(self, k: int) -> tuple[float, ...]:
        return self.deltas if self.deltas is not None else (0.0,) * k

    def input_state(self, k: int) -> InputState:
        if self.coefficients is not None:
            if len(self.coefficients) != 2**k:
                raise UsageError(f"--input needs {2**k} amplitudes for k = {k}")
            try:
                return InputState(np.array(self.coefficients))
            except BellTransferError as exc:
                raise UsageError(f"--input: {exc}") from None
        rng = np.random.default_rng(self.seed if self.seed is not None else 0)
        return InputState.random(k, rng)


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    # flags override the file
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    cfg = RunConfig(args.command)
    try:
        if "k" in values:
            cfg.k = int(values["k"])
        if "seed" in values:
            cfg.seed = int(values["seed"])
        if "tolerance" in values:
            cfg.tolerance = float(values["tolerance"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not cfg.tolerance > 0:
        raise UsageError("--tolerance must be positive")
    if "delta" in values:
        cfg.deltas = parse_deltas(values["delta"])
    if "input" in values:
        cfg.coefficients = parse_input(values["input"])
    if "grid" in values:
        grid = values["grid"]
        cfg.grid = tuple(grid) if isinstance(grid, list) else tuple(grid.split())
    cfg.out = values.get("out")
    analytic = values.get("analytic_only", False)
    cfg.analytic_only = analytic is True or str(analytic).lower() in ("1", "true", "yes")
    dump = values.get("dump_operators")
    cfg.dump_operators = None if dump in (None, "", "false") else str(dump)
    return cfg


# -- output -------------------------------------------------------------------


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(payload) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _num(x):
    return None if x is None else float(x)


def ledger_json(entries: Sequence[LedgerEntry]) -> list[dict]:
    return [
        {"location": e.location, "printed": e.printed, "derived": e.derived, "severity": e.severity}
        for e in entries
    ]


def transfer_json(report: TransferReport, ledger: Sequence[LedgerEntry]) -> dict:
    return {
        "k": report.k,
        "deltas": list(report.deltas),
        "p_analytic": report.p_analytic,
        "p_simulated": report.p_simulated,
        "min_fidelity": _num(report.min_fidelity),
        "branches": [
            {
                "outcome": b.outcome_label,
                "outcome_probability": b.outcome_probability,
                "branch_probability": b.branch_probability,
                "fidelity": _num(b.fidelity),
            }
            for b in report.branches
        ],
        "ledger": ledger_json(ledger),
        "violations": report.violations(),
        "version": __version__,
    }


def stage_json(name: str, state, note: str) -> dict:
    n = state.num_qubits
    amps = [
        {
            "index": i,
            "index1": i + 1,
            "label": format(i, f"0{n}b"),
            "re": float(state.amplitudes[i].real),
            "im": float(state.amplitudes[i].imag),
        }
        for i in state.support(AMPLITUDE_ATOL)
    ]
    return {"name": name, "note": note, "norm": state.norm_tracked, "amplitudes": amps}


# -- commands -----------------------------------------------------------------


def cmd_transfer(cfg: RunConfig) -> int:
    k = cfg.resolved_k()
    deltas = cfg.resolved_deltas(k)
    state = cfg.input_state(k)
    report = run_full_protocol(state, channels_for(deltas))
    bad = report.violations(cfg.tolerance)
    payload = transfer_json(report, ledger_for(k, deltas))
    payload["violations"] = bad
    _emit(_json(payload), cfg.out)
    for msg in bad:
        print(f"invariant violated: {msg}", file=sys.stderr)
    return 2 if bad else 0


def cmd_trace(cfg: RunConfig) -> int:
    k = cfg.resolved_k()
    deltas = cfg.deltas if cfg.deltas is not None else DEFAULT_DELTAS.get(k, (0.0,) * k)
    if cfg.coefficients is None and cfg.seed is None:
        state = InputState(np.full(2**k, 2 ** (-k / 2)))
    else:
        state = cfg.input_state(k)
    trace = paper_trace(state, channels_for(deltas))
    payload = {
        "k": k,
        "deltas": list(deltas),
        "coefficients": [{"re": float(c.real), "im": float(c.imag)} for c in state.coefficients],
        "stages": [stage_json(s.name, s.state, s.note) for s in trace.stages],
        "single_branch_probability": trace.single_branch_probability,
        "total_probability": trace.total_probability,
        "fidelity": trace.fidelity,
        "ledger": ledger_json(ledger_for(k, deltas)),
        "version": __version__,
    }
    _emit(_json(payload), cfg.out)
    return 0


def grid_spec(cfg: RunConfig) -> GridSpec:
    k = cfg.resolved_k()
    if k not in (2, 3):
        raise UsageError("sweeps support k = 2 or 3")
    try:
        if not cfg.grid:
            axes = GridSpec.default(k).axes
        elif len(cfg.grid) == 1:
            axes = (Axis.parse(cfg.grid[0]),) * k
        elif len(cfg.grid) == k:
            axes = tuple(Axis.parse(g) for g in cfg.grid)
        else:
            raise UsageError(f"--grid given {len(cfg.grid)} axes for k = {k}")
        if cfg.analytic_only:
            return GridSpec(axes, InputMode.ANALYTIC)
        if cfg.coefficients is not None:
            return GridSpec(axes, InputMode.FIXED, coefficients=cfg.input_state(k).coefficients.tolist())
        return GridSpec(axes, InputMode.SEED, seed=cfg.seed if cfg.seed is not None else 0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_sweep(cfg: RunConfig) -> int:
    grid = grid_spec(cfg)
    rows = run_sweep(grid)
    if cfg.out:
        with open(cfg.out, "w", newline="\n") as fh:
            write_csv(rows, grid, fh)
    else:
        write_csv(rows, grid, sys.stdout)
    bad = [
        r for r in rows
        if r.p_simulated is not None and abs(r.p_simulated - r.p_analytic) > cfg.tolerance
    ]
    for r in bad:
        print(f"invariant violated at {r.deltas}: p_simulated {r.p_simulated!r} vs {r.p_analytic!r}", file=sys.stderr)
    return 2 if bad else 0


def _dump(directory: str, name: str, op) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / f"{name}.txt", "w", newline="\n") as fh:
        dump_operator(op, fh)


def cmd_verify(cfg: RunConfig) -> int:
    """Operator checks plus the ledger; PASS means every constructive check holds."""
    d2 = DEFAULT_DELTAS[2]
    d3 = DEFAULT_DELTAS[3]
    if cfg.deltas is not None:
        if len(cfg.deltas) == 2:
            d2 = cfg.deltas
        elif len(cfg.deltas) == 3:
            d3 = cfg.deltas
        else:
            raise UsageError("verify takes 2 or 3 departures")
    checks: list[tuple[str, bool, str]] = []

    ch2, ch3 = channels_for(d2), channels_for(d3)
    u2, f2, _, _, mapping2 = trace_operators(ch2)
    derived2 = swap_pairs(mapping2)
    checks.append((
        "bipartite U swap pairs", derived2 == set(PRINTED_U_SWAPS[2]),
        " ".join(str(p) for p in sorted(derived2)),
    ))
    dev = verify_unitary(f2)
    checks.append(("bipartite printed F unitary", dev <= UNITARY_ATOL, f"deviation {dev:.2e}"))
    u3, f3, _, _, _ = trace_operators(ch3)
    dev = verify_unitary(f3)
    checks.append(("tripartite constructive F unitary", dev <= UNITARY_ATOL, f"deviation {dev:.2e}"))
    literal3 = paper_filter_tripartite(coefficient_products(ch3))
    checks.append((
        "tripartite printed F unitary (informational)", True,
        f"deviation {verify_unitary(literal3):.2e}",
    ))
    for deltas in (d2, d3):
        k = len(deltas)
        state = InputState(np.full(2**k, 2 ** (-k / 2)))
        report = run_full_protocol(state, channels_for(deltas))
        bad = report.violations(cfg.tolerance)
        checks.append((
            f"k={k} branch enumeration", not bad,
            f"p_simulated {report.p_simulated:.12f} p_analytic {report.p_analytic:.12f}"
            + (f" ({'; '.join(bad)})" if bad else ""),
        ))
        trace = paper_trace(state, channels_for(deltas))
        ok = abs(trace.total_probability - report.p_analytic) <= cfg.tolerance
        checks.append((
            f"k={k} traced branch", ok and trace.fidelity >= 1 - 1e-12,
            f"2^k x single branch {trace.total_probability:.12f} fidelity {trace.fidelity:.15f}",
        ))

    ledger = build_ledger(d2, d3)
    lines = [f"belltransfer {__version__} verify"]
    for name, ok, detail in checks:
        lines.append(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    lines.append(f"ledger: {len(ledger)} entries")
    for n, entry in enumerate(ledger, 1):
        lines.append(f"{n}. {entry}")
    passed = all(ok for _, ok, _ in checks)
    lines.append("PASS" if passed else "FAIL")
    _emit("\n".join(lines) + "\n", cfg.out)

    if cfg.dump_operators:
        _dump(cfg.dump_operators, "bipartite_U", printed_permutation(2))
        _dump(cfg.dump_operators, "bipartite_F", paper_filter_bipartite(coefficient_products(ch2)))
        _dump(cfg.dump_operators, "tripartite_U_printed", printed_permutation(3))
        _dump(cfg.dump_operators, "tripartite_U_derived", u3)
        _dump(cfg.dump_operators, "tripartite_F_printed", literal3)
        _dump(cfg.dump_operators, "tripartite_F_constructive", f3)
    return 0 if passed else 2


COMMANDS = {"transfer": cmd_transfer, "trace": cmd_trace, "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--k", type=int, help="number of message qubits / channels")
    common.add_argument("--delta", help="comma-separated channel departures, radians")
    common.add_argument("--input", help="comma-separated message amplitudes, each re[:im]")
    common.add_argument("--seed", type=int, help="seed for a random message")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--tolerance", type=float, help=f"probability tolerance (default {SIM_ATOL:g})")

    parser = _Parser(prog="belltransfer", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("transfer", parents=[common], help="run every Bell-outcome branch, JSON report")
    sub.add_parser("trace", parents=[common], help="staged state of the printed single-branch derivation")
    sweep = sub.add_parser("sweep", parents=[common], help="success probability over a departure grid, CSV")
    sweep.add_argument("--grid", action="append", help="min:max:steps; once for all axes or once per axis")
    sweep.add_argument("--analytic-only", action="store_true", help="skip the branch simulation")
    verify = sub.add_parser("verify", parents=[common], help="operator checks and the discrepancy ledger")
    verify.add_argument(
        "--dump-operators", nargs="?", const="operators", metavar="DIR",
        help="write the operators as text matrices into DIR (default ./operators)",
    )
    return parser


VALUE_FLAGS = {"--delta", "--input", "--grid"}


def _join_negative_values(argv: Sequence[str]) -> list[str]:
    """``--delta -0.26,-0.26`` -> ``--delta=-0.26,-0.26``; argparse would read a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if tok in VALUE_FLAGS and nxt and nxt.startswith("-") and nxt[1:2] in set("0123456789."):
            out.append(f"{tok}={nxt}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(sys.argv[1:] if argv is None else list(argv)))
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"belltransfer: error: {exc}", file=sys.stderr)
        return 1
    except BellTransferError as exc:
        print(f"belltransfer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
