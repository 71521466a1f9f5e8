"""Control models: deterministic local strategies, a memoryless apparatus,
and a source that cycles through fixed instruction sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError
from .harness import CELLS, ChshEstimate, RunConfig, TallyMatrix, chsh, run_experiment


@dataclass(frozen=True)
class DeterministicStrategy:
    a1: int
    a2: int
    b1: int
    b2: int

    def output(self, detector: str, setting: int) -> int:
        return getattr(self, f"{detector.lower()}{setting}")

    def mismatch(self, i: int, j: int) -> int:
        return int(self.output("A", i) != self.output("B", j))

    def chsh(self) -> int:
        return self.mismatch(1, 1) + self.mismatch(1, 2) + self.mismatch(2, 1) - self.mismatch(2, 2)


def max_deterministic_chsh() -> tuple[int, list[DeterministicStrategy]]:
    """Enumerate all 16 output assignments; return the best C and every maximizer."""
    strategies = [DeterministicStrategy(*bits) for bits in itertools.product((0, 1), repeat=4)]
    values = [s.chsh() for s in strategies]
    best = max(values)
    return best, [s for s, v in zip(strategies, values) if v == best]


def run_memoryless_control(cfg: RunConfig) -> ChshEstimate:
    """Same streams and schedule as the main apparatus, detectors without memory."""
    return run_experiment(cfg, memoryless=True).require_estimate()


# (A1, A2, B1, B2) instruction quadruples, emitted in this order
STRAWMAN_CYCLE = ((1, 0, 0, 1), (0, 1, 0, 1), (0, 0, 1, 1), (1, 0, 1, 0))
STRAWMAN_PAIRINGS = ((1, 1), (1, 2), (2, 1), (2, 2))
# Values asserted in prose for 0..3 steps out of sync, and for the average.
STRAWMAN_CLAIMED = {0: 3, 1: 1, 2: 2, 3: 2}
STRAWMAN_CLAIMED_AVERAGE = 2


def strawman_outputs(phase: int, n_cycles: int = 1):
    """Settings and outputs when the pairing loop lags the source by ``phase``.

    At step ``k`` the experimenters use pairing ``k mod 4`` while the source
    emits quadruple ``(k + phase) mod 4``.
    """
    if phase not in (0, 1, 2, 3):
        raise ConfigError(f"phase must be 0, 1, 2 or 3, got {phase}")
    if n_cycles < 1:
        raise ConfigError(f"n_cycles must be >= 1, got {n_cycles}")
    sa, sb, xa, xb = [], [], [], []
    for k in range(4 * n_cycles):
        i, j = STRAWMAN_PAIRINGS[k % 4]
        a1, a2, b1, b2 = STRAWMAN_CYCLE[(k + phase) % 4]
        sa.append(i)
        sb.append(j)
        xa.append(a1 if i == 1 else a2)
        xb.append(b1 if j == 1 else b2)
    return sa, sb, xa, xb


def run_strawman(phase: int, n_cycles: int = 1) -> ChshEstimate:
    return chsh(TallyMatrix.from_outputs(*strawman_outputs(phase, n_cycles)))


def strawman_exact(phase: int) -> Fraction:
    t = TallyMatrix.from_outputs(*strawman_outputs(phase))
    P = {(i, j): Fraction(int(t.mismatches[i - 1, j - 1]), int(t.counts[i - 1, j - 1])) for i, j in CELLS}
    return P[1, 1] + P[1, 2] + P[2, 1] - P[2, 2]


@dataclass(frozen=True)
class StrawmanReport:
    values: dict  # phase -> Fraction
    average: Fraction
    claimed: dict
    claimed_average: int

    @property
    def discrepancies(self) -> dict:
        """Phases (and "average") where the enumeration differs from the claim."""
        out = {p: (v, self.claimed[p]) for p, v in self.values.items() if v != self.claimed[p]}
        if self.average != self.claimed_average:
            out["average"] = (self.average, self.claimed_average)
        return out

    def lines(self) -> list[str]:
        rows = []
        for p, v in self.values.items():
            flag = "" if v == self.claimed[p] else f"  DISCREPANCY (claimed {self.claimed[p]})"
            rows.append(f"phase {p}: C = {v}{flag}")
        flag = "" if self.average == self.claimed_average else (
            f"  DISCREPANCY (claimed {self.claimed_average})"
        )
        rows.append(f"average: C = {self.average}{flag}")
        return rows


def strawman_phase_average() -> StrawmanReport:
    values = {p: strawman_exact(p) for p in range(4)}
    avg = sum(values.values(), Fraction(0)) / 4
    return StrawmanReport(values, avg, dict(STRAWMAN_CLAIMED), STRAWMAN_CLAIMED_AVERAGE)
