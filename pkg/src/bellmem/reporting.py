"""Batch and sweep drivers with deterministic seeding and CSV output.

Seed derivation (stable across versions of this package and of numpy, since
``SeedSequence`` hashing is part of numpy's documented reproducibility
contract):

* run ``r`` of a batch:        ``SeedSequence(master, spawn_key=(r,))``
* run ``r`` of sweep cell i,j: ``SeedSequence(master, spawn_key=(i, j, r))``

The first 63 bits of ``generate_state(2, uint32)`` become ``RunConfig.seed``.
Seeds depend only on coordinates, never on execution order, so results do not
change with the worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UndefinedEstimateError
from .harness import CELLS, ChshEstimate, RunConfig, TallyMatrix, run_experiment

HIST_RANGE = (1.5, 2.5)
HIST_BINS = 100


def derive_seed(master: int, *coords: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(c) for c in coords))
    lo, hi = ss.generate_state(2, np.uint32)
    return (int(hi) & 0x7FFFFFFF) << 32 | int(lo)


def _run_job(job):
    cfg, memoryless = job
    result = run_experiment(cfg, memoryless=memoryless)
    return result.tally, result.estimate, result.undefined_cells


def _map(jobs, workers: int):
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass(frozen=True)
class RunRow:
    seed: int
    n_events: int
    tally: TallyMatrix
    estimate: ChshEstimate


RUN_CSV_HEADER = (
    ["run_seed", "n_events"]
    + [f"n{i}{j}" for i, j in CELLS]
    + [f"m{i}{j}" for i, j in CELLS]
    + [f"P{i}{j}" for i, j in CELLS]
    + ["C", "se_C"]
)


def run_rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_CSV_HEADER)
    for r in rows:
        counts, mism = r.tally.counts, r.tally.mismatches
        w.writerow(
            [r.seed, r.n_events]
            + [int(counts[i - 1, j - 1]) for i, j in CELLS]
            + [int(mism[i - 1, j - 1]) for i, j in CELLS]
            + [repr(r.estimate.p(i, j)) for i, j in CELLS]
            + [repr(r.estimate.C), repr(r.estimate.se_C)]
        )
    return buf.getvalue()


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def of(cls, values, bins: int = HIST_BINS, value_range=HIST_RANGE) -> Histogram:
        """Uniform bins; values outside the range are counted in the end bins."""
        lo, hi = value_range
        if not hi > lo or bins < 1:
            raise ConfigError(f"bad histogram range {value_range} or bin count {bins}")
        edges = np.linspace(lo, hi, bins + 1)
        clipped = np.clip(np.asarray(values, dtype=float), lo, hi)
        counts, _ = np.histogram(clipped, bins=edges)
        return cls(edges, counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(n)])
        return buf.getvalue()


def mean_sem(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return math.nan, math.nan
    sem = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return float(v.mean()), sem


@dataclass
class BatchResult:
    runs: list[RunRow]
    histogram: Histogram

    @property
    def c_values(self) -> np.ndarray:
        return np.array([r.estimate.C for r in self.runs])

    @property
    def pooled(self) -> TallyMatrix:
        total = TallyMatrix()
        for r in self.runs:
            total = total + r.tally
        return total

    def mean_sem(self) -> tuple[float, float]:
        return mean_sem(self.c_values)


def run_batch(
    cfg: RunConfig,
    n_runs: int,
    master_seed: int | None = None,
    *,
    bins: int = HIST_BINS,
    value_range=HIST_RANGE,
    workers: int = 1,
    memoryless: bool = False,
) -> BatchResult:
    """Independent runs of ``cfg`` (fresh table and switch-on state each).

    ``master_seed`` defaults to ``cfg.seed``. A run whose CHSH estimate is
    undefined aborts the batch with its seed named.
    """
    if n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {n_runs}")
    master = cfg.seed if master_seed is None else master_seed
    configs = [cfg.with_(seed=derive_seed(master, r)) for r in range(n_runs)]
    results = _map([(c, memoryless) for c in configs], workers)
    rows = []
    for c, (tally, estimate, undefined) in zip(configs, results):
        if estimate is None:
            raise UndefinedEstimateError(
                f"run with seed {c.seed} left cells {list(undefined)} empty", undefined
            )
        rows.append(RunRow(c.seed, c.n_events, tally, estimate))
    hist = Histogram.of([r.estimate.C for r in rows], bins, value_range)
    return BatchResult(rows, hist)


@dataclass(frozen=True)
class SweepCell:
    i: int
    j: int
    p_s: float
    p_d: float
    mean_C: float
    sem: float
    n_runs: int
    error: str | None = None

    @property
    def violating(self) -> bool:
        return self.error is None and self.mean_C - 3 * self.sem > 2


@dataclass
class SweepGrid:
    ps_values: list[float]
    pd_values: list[float]
    runs_per_cell: int
    cells: list[SweepCell] = field(default_factory=list)

    def cell(self, i: int, j: int) -> SweepCell:
        return self.cells[i * len(self.pd_values) + j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ps", "pd", "mean_C", "sem", "violating"])
        for c in self.cells:
            w.writerow([repr(c.p_s), repr(c.p_d), repr(c.mean_C), repr(c.sem), int(c.violating)])
        return buf.getvalue()


def log_grid(lo: float, hi: float, n: int) -> list[float]:
    return [float(x) for x in np.geomspace(lo, hi, n)]


def sweep(
    ps_values,
    pd_values,
    base_cfg: RunConfig,
    runs_per_cell: int,
    master_seed: int | None = None,
    *,
    workers: int = 1,
) -> SweepGrid:
    """Mean C and SEM over ``runs_per_cell`` runs for every (p_s, p_d) pair.

    A cell with any undefined run is recorded with its error and NaN statistics;
    the rest of the grid is still computed.
    """
    ps_values = [float(p) for p in ps_values]
    pd_values = [float(p) for p in pd_values]
    for p in ps_values + pd_values:
        if not 0 < p <= 1:
            raise ConfigError(f"sweep probabilities must lie in (0, 1], got {p}")
    if runs_per_cell < 1:
        raise ConfigError(f"runs_per_cell must be >= 1, got {runs_per_cell}")
    master = base_cfg.seed if master_seed is None else master_seed
    coords = [(i, j) for i in range(len(ps_values)) for j in range(len(pd_values))]
    configs = [
        base_cfg.with_(p_s=ps_values[i], p_d=pd_values[j], seed=derive_seed(master, i, j, r))
        for i, j in coords
        for r in range(runs_per_cell)
    ]
    results = _map([(c, False) for c in configs], workers)
    grid = SweepGrid(ps_values, pd_values, runs_per_cell)
    for k, (i, j) in enumerate(coords):
        chunk = results[k * runs_per_cell : (k + 1) * runs_per_cell]
        seeds = [c.seed for c in configs[k * runs_per_cell : (k + 1) * runs_per_cell]]
        bad = [s for s, (_, est, _) in zip(seeds, chunk) if est is None]
        if bad:
            cell = SweepCell(i, j, ps_values[i], pd_values[j], math.nan, math.nan,
                             runs_per_cell, f"undefined estimate for seeds {bad}")
        else:
            m, s = mean_sem([est.C for _, est, _ in chunk])
            cell = SweepCell(i, j, ps_values[i], pd_values[j], m, s, runs_per_cell)
        grid.cells.append(cell)
    return grid
