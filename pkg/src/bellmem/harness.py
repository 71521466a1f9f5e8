"""Per-run event loop, tallies, CHSH estimate and locality audits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import ConfigError, UndefinedEstimateError
from .experimenter import DEFAULT_ALPHA, SettingSchedule, SwitchPolicy, generate_schedule
from .machines import DetectorState, draw_commands
from .table import DEFAULT_TABLE_LEN, LookupTable, build_table, check_probability, counter_sequence

CELLS = ((1, 1), (1, 2), (2, 1), (2, 2))
STREAM_NAMES = ("table", "commands", "experimenter", "initial")


class RunStreams(NamedTuple):
    table: np.random.Generator
    commands: np.random.Generator
    experimenter: np.random.Generator
    initial: np.random.Generator


@dataclass(frozen=True)
class RunConfig:
    table_len: int = DEFAULT_TABLE_LEN
    p_t: float = 0.9
    p_s: float = 0.1
    p_d: float = 0.01
    alpha: float = DEFAULT_ALPHA
    n_events: int = 1_000_000
    seed: int = 0
    force_change: bool = False

    def __post_init__(self):
        if int(self.table_len) != self.table_len or self.table_len < 3:
            raise ConfigError(f"table length must be an integer >= 3, got {self.table_len}")
        if int(self.n_events) != self.n_events or self.n_events < 1:
            raise ConfigError(f"n_events must be an integer >= 1, got {self.n_events}")
        for name in ("p_t", "p_s", "p_d"):
            check_probability(name, getattr(self, name))
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def policy(self) -> SwitchPolicy:
        return SwitchPolicy(self.p_d, self.p_s, self.alpha, self.force_change)

    def streams(self) -> RunStreams:
        """Independent generators for table, commands, experimenter and initial state.

        Stream ``k`` is seeded from ``SeedSequence(seed).spawn(4)[k]`` in the
        order of :data:`STREAM_NAMES`.
        """
        children = np.random.SeedSequence(int(self.seed)).spawn(len(STREAM_NAMES))
        return RunStreams(*(np.random.default_rng(s) for s in children))

    def with_(self, **changes) -> RunConfig:
        return replace(self, **changes)


@dataclass
class TallyMatrix:
    """Event counts for one run (or a pooled set of runs).

    Arrays are indexed by setting minus one: ``counts[i - 1, j - 1]`` is the
    number of events under (A_i, B_j) and ``joint[i - 1, j - 1, x_a, x_b]``
    the number with outputs (x_a, x_b).
    """

    joint: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 2), dtype=np.int64))

    @classmethod
    def from_outputs(cls, sched_a, sched_b, out_a, out_b) -> TallyMatrix:
        idx = (
            8 * (np.asarray(sched_a, dtype=np.int64) - 1)
            + 4 * (np.asarray(sched_b, dtype=np.int64) - 1)
            + 2 * np.asarray(out_a, dtype=np.int64)
            + np.asarray(out_b, dtype=np.int64)
        )
        return cls(np.bincount(idx, minlength=16).reshape(2, 2, 2, 2))

    @property
    def counts(self) -> np.ndarray:
        return self.joint.sum(axis=(2, 3))

    @property
    def mismatches(self) -> np.ndarray:
        return self.joint[:, :, 0, 1] + self.joint[:, :, 1, 0]

    @property
    def ones_a(self) -> np.ndarray:
        return self.joint[:, :, 1, :].sum(axis=(1, 2))

    @property
    def ones_b(self) -> np.ndarray:
        return self.joint[:, :, :, 1].sum(axis=(0, 2))

    @property
    def exposure_a(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def exposure_b(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n_events(self) -> int:
        return int(self.joint.sum())

    def __add__(self, other: TallyMatrix) -> TallyMatrix:
        return TallyMatrix(self.joint + other.joint)

    def __eq__(self, other):
        if not isinstance(other, TallyMatrix):
            return NotImplemented
        return np.array_equal(self.joint, other.joint)


def _binomial_se(k, n):
    p = k / n
    return np.sqrt(p * (1 - p) / n)


@dataclass(frozen=True)
class ChshEstimate:
    P: np.ndarray  # P[i-1, j-1]: mismatch fraction under (A_i, B_j)
    C: float
    se: np.ndarray
    se_C: float

    def p(self, i: int, j: int) -> float:
        return float(self.P[i - 1, j - 1])


def chsh(tally: TallyMatrix) -> ChshEstimate:
    """Mismatch fractions and C = P11 + P12 + P21 - P22 with binomial errors."""
    counts = tally.counts
    empty = [(i, j) for i, j in CELLS if counts[i - 1, j - 1] == 0]
    if empty:
        names = ", ".join(f"(A{i},B{j})" for i, j in empty)
        raise UndefinedEstimateError(f"no events under {names}; CHSH is undefined", empty)
    P = tally.mismatches / counts
    se = _binomial_se(tally.mismatches, counts)
    C = P[0, 0] + P[0, 1] + P[1, 0] - P[1, 1]
    se_C = math.sqrt(float((se**2).sum()))
    return ChshEstimate(P, float(C), se, se_C)


@dataclass(frozen=True)
class Marginals:
    """Per-setting fraction of 1 outputs; NaN where a setting saw no events."""

    ones_a: np.ndarray
    se_a: np.ndarray
    ones_b: np.ndarray
    se_b: np.ndarray

    def values(self) -> dict[str, float]:
        return {
            "A1": float(self.ones_a[0]),
            "A2": float(self.ones_a[1]),
            "B1": float(self.ones_b[0]),
            "B2": float(self.ones_b[1]),
        }

    def errors(self) -> dict[str, float]:
        return {
            "A1": float(self.se_a[0]),
            "A2": float(self.se_a[1]),
            "B1": float(self.se_b[0]),
            "B2": float(self.se_b[1]),
        }


def marginals(tally: TallyMatrix) -> Marginals:
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = tally.ones_a / tally.exposure_a
        fb = tally.ones_b / tally.exposure_b
        sa = _binomial_se(tally.ones_a, tally.exposure_a)
        sb = _binomial_se(tally.ones_b, tally.exposure_b)
    return Marginals(fa, sa, fb, sb)


@dataclass(frozen=True)
class FactorizationDeviation:
    """max |P(x_A, x_B) - P(x_A) P(x_B)| per pair, with a delta-method error."""

    deviation: np.ndarray
    se: np.ndarray

    def at(self, i: int, j: int) -> tuple[float, float]:
        return float(self.deviation[i - 1, j - 1]), float(self.se[i - 1, j - 1])


def factorization_deviation(tally: TallyMatrix) -> FactorizationDeviation:
    """Distance of each pair's joint outcome law from the product of its marginals.

    For binary outcomes all four cells deviate by the same amount, the
    covariance ``d = p11 - pA * pB``. Its standard error comes from the
    multinomial covariance propagated through the gradient of ``d``.
    """
    dev = np.full((2, 2), np.nan)
    se = np.full((2, 2), np.nan)
    for i, j in CELLS:
        cell = tally.joint[i - 1, j - 1].astype(float)
        n = cell.sum()
        if n == 0:
            continue
        p = cell / n
        pa = p[1, :].sum()
        pb = p[:, 1].sum()
        diff = np.abs(p - np.outer([1 - pa, pa], [1 - pb, pb]))
        dev[i - 1, j - 1] = diff.max()
        # d = p11 - (p10 + p11)(p01 + p11), flattened as (p00, p01, p10, p11)
        grad = np.array([0.0, -pa, -pb, 1.0 - pa - pb])
        flat = p.ravel()
        var = (grad**2 * flat).sum() - (grad @ flat) ** 2
        se[i - 1, j - 1] = math.sqrt(max(var, 0.0) / n)
    return FactorizationDeviation(dev, se)


def default_schedule(cfg: RunConfig) -> SettingSchedule:
    """The switching list ``run_experiment(cfg)`` generates for itself."""
    return generate_schedule(cfg.n_events, cfg.policy, cfg.streams().experimenter)


@dataclass(frozen=True)
class InitialState:
    c: int
    m_a: int
    m_b: int


def draw_initial_state(table_len: int, rng: np.random.Generator) -> InitialState:
    """Switch-on values for the counter and both memories, uniform on [2, L]."""
    c, m_a, m_b = rng.integers(2, table_len + 1, size=3)
    return InitialState(int(c), int(m_a), int(m_b))


@dataclass
class RunResult:
    config: RunConfig
    table: LookupTable
    schedule: SettingSchedule
    initial: InitialState
    commands: np.ndarray
    out_a: np.ndarray
    out_b: np.ndarray
    tally: TallyMatrix
    estimate: ChshEstimate | None
    undefined_cells: tuple
    final_c: int
    detector_a: DetectorState
    detector_b: DetectorState

    def require_estimate(self) -> ChshEstimate:
        if self.estimate is None:
            return chsh(self.tally)  # raises with the empty cells named
        return self.estimate

    def trace_csv(self) -> str:
        """Per-event records: event, c, command, a, b, out_a, out_b."""
        c = counter_sequence(self.initial.c, len(self.commands), self.table.length)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event", "c", "command", "a", "b", "out_a", "out_b"])
        labels = ("inactive", "A", "B")
        for k, row in enumerate(
            zip(
                c.tolist(),
                self.commands.tolist(),
                self.schedule.a.tolist(),
                self.schedule.b.tolist(),
                self.out_a.tolist(),
                self.out_b.tolist(),
            )
        ):
            w.writerow([k, row[0], labels[row[1]], *row[2:]])
        return buf.getvalue()


def run_experiment(
    cfg: RunConfig,
    schedule: SettingSchedule | None = None,
    *,
    memoryless: bool = False,
) -> RunResult:
    """Switch on, run ``cfg.n_events`` emissions, switch off and tally.

    Passing ``schedule`` replaces the experimenter's generated switching list;
    all other streams are unaffected. ``memoryless`` swaps in the control
    detectors that ignore memory and commands.
    """
    streams = cfg.streams()
    table = build_table(cfg.table_len, cfg.p_t, streams.table)
    initial = draw_initial_state(cfg.table_len, streams.initial)
    commands = draw_commands(cfg.n_events, cfg.p_s, streams.commands)
    if schedule is None:
        schedule = generate_schedule(cfg.n_events, cfg.policy, streams.experimenter)
    elif len(schedule) != cfg.n_events:
        raise ConfigError(f"schedule has {len(schedule)} events, config expects {cfg.n_events}")
    mode = _kernels.MODE_MEMORYLESS if memoryless else _kernels.MODE_MEMORY
    out_a, out_b, c, m_a, m_b = _kernels.event_loop(
        table.bits, initial.c, initial.m_a, initial.m_b, schedule.a, schedule.b, commands, mode
    )
    tally = TallyMatrix.from_outputs(schedule.a, schedule.b, out_a, out_b)
    try:
        estimate, undefined = chsh(tally), ()
    except UndefinedEstimateError as exc:
        estimate, undefined = None, exc.cells
    return RunResult(
        config=cfg,
        table=table,
        schedule=schedule,
        initial=initial,
        commands=commands,
        out_a=out_a,
        out_b=out_b,
        tally=tally,
        estimate=estimate,
        undefined_cells=undefined,
        final_c=int(c),
        detector_a=DetectorState("A", int(schedule.a[-1]), int(m_a)),
        detector_b=DetectorState("B", int(schedule.b[-1]), int(m_b)),
    )


@dataclass(frozen=True)
class AuditReport:
    a_identical: bool
    b_identical: bool
    first_a_difference: int | None
    first_b_difference: int | None
    a_settings_changed: bool
    b_settings_changed: bool
    n_events: int

    @property
    def passed(self) -> bool:
        """Each side's outputs changed only if that side's own settings changed."""
        return (self.a_settings_changed or self.a_identical) and (
            self.b_settings_changed or self.b_identical
        )


def _first_difference(x: np.ndarray, y: np.ndarray) -> int | None:
    diff = np.flatnonzero(x != y)
    return int(diff[0]) if len(diff) else None


def no_signalling_audit(
    cfg: RunConfig,
    alternate_b_schedule=None,
    alternate_a_schedule=None,
) -> AuditReport:
    """Replay a run with one side's settings changed and compare outputs.

    The alternates are per-event setting sequences (arrays of 1/2, or a
    :class:`SettingSchedule` whose matching column is used). Seeds, table,
    commands and the untouched side's settings are held fixed. Changing
    only B's settings must leave A's output sequence bit-identical, and
    vice versa.
    """
    base_sched = default_schedule(cfg)

    def column(alt, side):
        if alt is None:
            return None
        if isinstance(alt, SettingSchedule):
            return alt.a if side == "A" else alt.b
        return np.asarray(alt)

    alt_a = column(alternate_a_schedule, "A")
    alt_b = column(alternate_b_schedule, "B")
    for name, alt in (("A", alt_a), ("B", alt_b)):
        if alt is not None and len(alt) != cfg.n_events:
            raise ConfigError(
                f"alternate {name} schedule has {len(alt)} events, run has {cfg.n_events}"
            )
    alt_sched = base_sched.replace(a=alt_a, b=alt_b)
    base = run_experiment(cfg, base_sched)
    other = run_experiment(cfg, alt_sched)
    fa = _first_difference(base.out_a, other.out_a)
    fb = _first_difference(base.out_b, other.out_b)
    return AuditReport(
        a_identical=fa is None,
        b_identical=fb is None,
        first_a_difference=fa,
        first_b_difference=fb,
        a_settings_changed=not np.array_equal(base_sched.a, alt_sched.a),
        b_settings_changed=not np.array_equal(base_sched.b, alt_sched.b),
        n_events=cfg.n_events,
    )
