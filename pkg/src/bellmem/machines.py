"""Source, eventron and detector state machines.

These are the readable, per-event versions of the apparatus. The compiled
loop in :mod:`bellmem._kernels` runs the same rules in bulk and is checked
against these step functions bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .table import LookupTable, advance_index, check_probability


class SetMemoryCommand(enum.IntEnum):
    INACTIVE = 0
    FOR_A = 1
    FOR_B = 2

    def targets(self, detector_id: str) -> bool:
        return (self is SetMemoryCommand.FOR_A and detector_id == "A") or (
            self is SetMemoryCommand.FOR_B and detector_id == "B"
        )


@dataclass(frozen=True)
class Eventron:
    c: int
    table: LookupTable
    command: SetMemoryCommand


@dataclass
class SourceState:
    c: int
    table: LookupTable
    p_s: float
    rng: np.random.Generator

    def __post_init__(self):
        self.p_s = check_probability("p_s", self.p_s)


@dataclass
class DetectorState:
    id: str
    setting: int
    m: int

    def __post_init__(self):
        if self.id not in ("A", "B"):
            raise ValueError(f"detector id must be 'A' or 'B', got {self.id!r}")
        if self.setting not in (1, 2):
            raise ValueError(f"setting must be 1 or 2, got {self.setting!r}")


def command_from_draws(u_active: float, u_dest: float, p_s: float) -> SetMemoryCommand:
    if u_active < p_s:
        return SetMemoryCommand.FOR_A if u_dest < 0.5 else SetMemoryCommand.FOR_B
    return SetMemoryCommand.INACTIVE


def emit_pair(s: SourceState) -> tuple[Eventron, Eventron]:
    """Advance the counter, tag the emission, and return two equal eventrons.

    Uses two uniform draws per emission (activity, then destination), drawn
    even when the command ends up inactive so the stream stays aligned with
    :func:`draw_commands`.
    """
    s.c = advance_index(s.c, s.table.length)
    u_active, u_dest = s.rng.random(2)
    e = Eventron(s.c, s.table, command_from_draws(u_active, u_dest, s.p_s))
    return e, e


def draw_commands(n: int, p_s: float, rng: np.random.Generator) -> np.ndarray:
    """Commands for ``n`` emissions at once, equal to ``n`` calls of emit_pair."""
    u = rng.random((n, 2))
    active = u[:, 0] < p_s
    cmds = np.where(u[:, 1] < 0.5, SetMemoryCommand.FOR_A, SetMemoryCommand.FOR_B)
    return np.where(active, cmds, SetMemoryCommand.INACTIVE).astype(np.int8)


def detect_setting1(d: DetectorState, e: Eventron) -> int:
    # order matters: set-memory, lookup, advance
    if e.command.targets(d.id):
        d.m = e.c
    out = e.table[d.m]
    d.m = advance_index(d.m, e.table.length)
    return out


def detect_setting2(d: DetectorState, e: Eventron) -> int:
    if e.c < 2:
        raise AssertionError(f"eventron counter {e.c} leaves no entry c - 1")
    return e.table[e.c - 1]


def detect(d: DetectorState, e: Eventron) -> int:
    if d.setting == 1:
        return detect_setting1(d, e)
    return detect_setting2(d, e)


def detect_memoryless(setting: int, e: Eventron) -> int:
    """Control detector: a pure function of the eventron and the setting."""
    return e.table[e.c] if setting == 1 else e.table[e.c - 1]
