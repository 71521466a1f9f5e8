"""Setting-switching experimenter with asymmetric dwell times.

The experimenter leaves a mixed pairing (A1,B2)/(A2,B1) with probability
``p_d`` per event and a same-index pairing (A1,B1)/(A2,B2) with probability
``min(alpha * p_s, 1)``. Leaving means redrawing both settings uniformly, so a
redraw can reproduce the current pair. Nothing here sees the source, the
table or the detector outputs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError
from .table import check_probability

DEFAULT_ALPHA = 2.0


@dataclass(frozen=True)
class SettingPair:
    a: int
    b: int

    def __post_init__(self):
        if self.a not in (1, 2) or self.b not in (1, 2):
            raise ValueError(f"settings must be 1 or 2, got ({self.a}, {self.b})")

    @property
    def mixed(self) -> bool:
        return self.a != self.b

    @property
    def code(self) -> int:
        return 2 * (self.a - 1) + (self.b - 1)

    @classmethod
    def from_code(cls, code: int) -> SettingPair:
        return cls(1 + (int(code) >> 1), 1 + (int(code) & 1))


ALL_PAIRS = tuple(SettingPair.from_code(k) for k in range(4))


@dataclass(frozen=True)
class SwitchPolicy:
    p_d: float
    p_s: float
    alpha: float = DEFAULT_ALPHA
    force_change: bool = False

    def __post_init__(self):
        check_probability("p_d", self.p_d)
        check_probability("p_s", self.p_s)
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def p_same(self) -> float:
        """Switch probability out of a same-index pairing, clamped to 1."""
        return min(self.alpha * self.p_s, 1.0)

    def switch_probability(self, pair: SettingPair) -> float:
        return self.p_d if pair.mixed else self.p_same


def _redraw(current: SettingPair, u_a: float, u_b: float, force_change: bool) -> SettingPair:
    if force_change:
        off = min(1 + int(u_a * 3.0), 3)
        return SettingPair.from_code((current.code + off) & 3)
    return SettingPair(1 if u_a < 0.5 else 2, 1 if u_b < 0.5 else 2)


def next_pair(current: SettingPair, policy: SwitchPolicy, rng: np.random.Generator) -> SettingPair:
    """One experimenter decision. Always consumes three uniform draws."""
    u, u_a, u_b = rng.random(3)
    if u < policy.switch_probability(current):
        return _redraw(current, u_a, u_b, policy.force_change)
    return current


@dataclass(frozen=True, eq=False)
class SettingSchedule:
    """Per-event settings for A and B, as two int8 arrays of 1s and 2s."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.int8)
        b = np.ascontiguousarray(self.b, dtype=np.int8)
        if a.ndim != 1 or a.shape != b.shape or len(a) == 0:
            raise ConfigError("schedule arrays must be 1-d, non-empty and of equal length")
        if not (np.isin(a, (1, 2)).all() and np.isin(b, (1, 2)).all()):
            raise ConfigError("schedule settings must be 1 or 2")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_pairs(cls, pairs) -> SettingSchedule:
        pairs = list(pairs)
        return cls(np.array([p.a for p in pairs]), np.array([p.b for p in pairs]))

    @classmethod
    def from_codes(cls, codes: np.ndarray) -> SettingSchedule:
        codes = np.asarray(codes)
        return cls(1 + (codes >> 1), 1 + (codes & 1))

    @property
    def codes(self) -> np.ndarray:
        return 2 * (self.a.astype(np.int64) - 1) + (self.b - 1)

    def __len__(self) -> int:
        return len(self.a)

    def __getitem__(self, k: int) -> SettingPair:
        return SettingPair(int(self.a[k]), int(self.b[k]))

    def __eq__(self, other):
        if not isinstance(other, SettingSchedule):
            return NotImplemented
        return np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)

    __hash__ = None

    def with_flip(self, index: int, detector: str) -> SettingSchedule:
        """Copy with one detector's setting toggled (1 <-> 2) at ``index``."""
        a, b = self.a.copy(), self.b.copy()
        target = a if detector == "A" else b
        target[index] = 3 - target[index]
        return SettingSchedule(a, b)

    def replace(self, *, a=None, b=None) -> SettingSchedule:
        """Copy with A's or B's column swapped for another schedule's."""
        new_a = self.a if a is None else np.asarray(a)
        new_b = self.b if b is None else np.asarray(b)
        if len(new_a) != len(new_b):
            raise ConfigError(f"schedule lengths differ: {len(new_a)} vs {len(new_b)}")
        return SettingSchedule(new_a, new_b)

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event", "a", "b"])
        for k, (x, y) in enumerate(zip(self.a.tolist(), self.b.tolist())):
            w.writerow([k, x, y])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> SettingSchedule:
        """Read ``event,a,b`` rows from a path or an open text stream."""
        if isinstance(source, (str, Path)):
            with open(source, newline="") as fh:
                return cls.from_csv(fh)
        rows = list(csv.DictReader(source))
        if not rows:
            raise ConfigError("schedule CSV has no rows")
        try:
            events = [int(r["event"]) for r in rows]
            a = [int(r["a"]) for r in rows]
            b = [int(r["b"]) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed schedule CSV: {exc}") from None
        if events != list(range(len(rows))):
            raise ConfigError("schedule CSV events must be 0, 1, 2, ... in order")
        return cls(np.array(a), np.array(b))


def generate_schedule(
    n_events: int,
    policy: SwitchPolicy,
    rng: np.random.Generator,
    initial: SettingPair | None = None,
) -> SettingSchedule:
    """Pre-generate the switching list for a run.

    Draw order: one integer for the initial pair (only when ``initial`` is
    None), then three uniforms per subsequent event, the same stream
    :func:`next_pair` would consume step by step.
    """
    if n_events < 1:
        raise ConfigError(f"n_events must be >= 1, got {n_events}")
    if initial is None:
        initial = SettingPair.from_code(rng.integers(0, 4))
    draws = rng.random((n_events - 1, 3))
    codes = _kernels.schedule_loop(
        initial.code, n_events, policy.p_d, policy.p_same, policy.force_change, draws
    )
    return SettingSchedule.from_codes(codes)


@dataclass(frozen=True)
class DwellStats:
    mean_same: float
    mean_mixed: float
    n_dwells_same: int
    n_dwells_mixed: int
    occupancy: dict  # SettingPair -> fraction of events


def dwell_statistics(schedule: SettingSchedule) -> DwellStats:
    """Run lengths of identical consecutive pairs, grouped by pair class.

    A redraw that lands on the same pair does not end a dwell, since the
    schedule cannot distinguish it from staying put. A class with no dwells
    reports NaN.
    """
    codes = schedule.codes
    n = len(codes)
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    lengths = np.diff(np.r_[starts, n])
    run_codes = codes[starts]
    mixed = (run_codes == 1) | (run_codes == 2)
    same_len, mixed_len = lengths[~mixed], lengths[mixed]
    occ = np.bincount(codes, minlength=4) / n
    return DwellStats(
        mean_same=float(same_len.mean()) if len(same_len) else float("nan"),
        mean_mixed=float(mixed_len.mean()) if len(mixed_len) else float("nan"),
        n_dwells_same=len(same_len),
        n_dwells_mixed=len(mixed_len),
        occupancy={p: float(occ[p.code]) for p in ALL_PAIRS},
    )
