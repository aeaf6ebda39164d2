"""Grid evaluation of success probability and branch fidelity over departure angles."""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from . import __version__
from .channels import ChannelSpec, analytic_success_probability, channel_template
from .protocol import InputState, run_full_protocol

EDGE = math.pi / 4 - 0.01
DEFAULT_STEPS = 91
THREADS_ENV = "BELLTRANSFER_THREADS"


class InputMode(enum.Enum):
    FIXED = "fixed"
    SEED = "seed"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class Axis:
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if not self.steps >= 2:
            raise ValueError(f"axis needs at least 2 steps, got {self.steps}")
        if not self.min < self.max:
            raise ValueError(f"axis min {self.min} must be below max {self.max}")
        if not (-math.pi / 4 < self.min and self.max < math.pi / 4):
            raise ValueError(f"axis [{self.min}, {self.max}] must lie inside (-pi/4, pi/4)")

    @classmethod
    def parse(cls, text: str) -> Axis:
        """``min:max:steps``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid axis must be min:max:steps, got {text!r}")
        return cls(float(parts[0]), float(parts[1]), int(parts[2]))

    def points(self) -> np.ndarray:
        # weighted form keeps symmetric ranges exactly symmetric
        n = self.steps - 1
        return np.array([((n - i) * self.min + i * self.max) / n for i in range(self.steps)])

    def __str__(self):
        return f"{self.min!r}:{self.max!r}:{self.steps}"


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[Axis, ...]
    input_mode: InputMode = InputMode.SEED
    seed: int = 0
    coefficients: tuple[complex, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if self.k not in (2, 3):
            raise ValueError(f"sweeps support k = 2 or 3, got {self.k}")
        if self.input_mode is InputMode.FIXED:
            if self.coefficients is None or len(self.coefficients) != 2**self.k:
                raise ValueError(f"fixed input needs {2**self.k} coefficients")
            InputState(np.asarray(self.coefficients, dtype=complex))

    @property
    def k(self) -> int:
        return len(self.axes)

    @classmethod
    def default(cls, k: int = 2, **kwargs) -> GridSpec:
        return cls(tuple(Axis(-EDGE, EDGE, DEFAULT_STEPS) for _ in range(k)), **kwargs)

    @property
    def size(self) -> int:
        return math.prod(a.steps for a in self.axes)

    def points(self) -> np.ndarray:
        """``(size, k)`` departures in row-major order (last axis fastest)."""
        mesh = np.meshgrid(*(a.points() for a in self.axes), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True)
class SweepRow:
    deltas: tuple[float, ...]
    p_analytic: float
    p_simulated: float | None = None
    fidelity_min: float | None = None


def thread_count(points: int) -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    cap = int(raw)
    if cap < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0")
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, points))


def _evaluate(grid: GridSpec, template: Sequence[ChannelSpec], deltas, seq) -> SweepRow:
    channels = [c.with_departure(float(d)) for c, d in zip(template, deltas)]
    p_analytic = analytic_success_probability(channels)
    key = tuple(float(d) for d in deltas)
    if grid.input_mode is InputMode.ANALYTIC:
        return SweepRow(key, p_analytic)
    if grid.input_mode is InputMode.FIXED:
        state = InputState(np.asarray(grid.coefficients, dtype=complex))
    else:
        state = InputState.random(grid.k, np.random.default_rng(seq))
    report = run_full_protocol(state, channels)
    return SweepRow(key, p_analytic, report.p_simulated, report.min_fidelity)


def run_sweep(grid: GridSpec, template: Sequence[ChannelSpec] | None = None) -> list[SweepRow]:
    """Evaluate every grid point; row order and values do not depend on the thread count."""
    template = list(template) if template is not None else channel_template(grid.k)
    if len(template) != grid.k:
        raise ValueError(f"template has {len(template)} channels for a {grid.k}-axis grid")
    points = grid.points()
    # one child seed per point, so each row is reproducible on its own
    seqs = np.random.SeedSequence(grid.seed).spawn(len(points))
    workers = thread_count(len(points))
    if workers == 1:
        return [_evaluate(grid, template, d, s) for d, s in zip(points, seqs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda args: _evaluate(grid, template, *args), zip(points, seqs)))


def format_number(x: float) -> str:
    """Positional decimal carrying at least 12 significant digits."""
    if x == 0:
        return "0.000000000000"
    decimals = max(12, 11 - math.floor(math.log10(abs(x))))
    return f"{x:.{decimals}f}"


def header(grid: GridSpec) -> str:
    names = ["delta_a", "delta_b", "delta_c"][: grid.k] + ["p_analytic"]
    if grid.input_mode is not InputMode.ANALYTIC:
        names += ["p_simulated", "fidelity_min"]
    return ",".join(names)


def metadata(grid: GridSpec) -> str:
    grid_text = " ".join(str(a) for a in grid.axes)
    seed = grid.seed if grid.input_mode is InputMode.SEED else "none"
    return f"# belltransfer {__version__} k={grid.k} grid={grid_text} input={grid.input_mode.value} seed={seed}"


def write_csv(rows: Sequence[SweepRow], grid: GridSpec, fh: TextIO) -> None:
    lines = [metadata(grid), header(grid)]
    for row in rows:
        fields = list(row.deltas) + [row.p_analytic]
        if grid.input_mode is not InputMode.ANALYTIC:
            fields += [row.p_simulated, row.fidelity_min]
        lines.append(",".join(format_number(v) for v in fields))
    fh.write("\n".join(lines) + "\n")
