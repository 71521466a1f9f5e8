"""Binary lookup table shared by source and detectors.

Indices are 1-based throughout the public API. Advancing an index past the
end of the table wraps it to 2, never 1, so that ``t[k - 1]`` is always a
valid entry for any index produced by advancement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_TABLE_LEN = 10_000


@dataclass(frozen=True, eq=False)
class LookupTable:
    """Immutable bit table with 1-based indexing.

    ``bits`` holds ``L + 1`` uint8 values; slot 0 is padding so that the
    compiled event loop can index with the same numbers the API uses.
    """

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.dtype != np.uint8 or self.bits.ndim != 1:
            raise ConfigError("table storage must be a 1-d uint8 array")
        if len(self.bits) - 1 < 3:
            raise ConfigError(f"table length must be >= 3, got {len(self.bits) - 1}")
        if np.any(self.bits[1:] > 1):
            raise ConfigError("table entries must be 0 or 1")
        self.bits.flags.writeable = False

    @classmethod
    def from_entries(cls, entries) -> LookupTable:
        """Build from a sequence of bits ``t[1], ..., t[L]``."""
        arr = np.asarray(list(entries) if not isinstance(entries, np.ndarray) else entries)
        bits = np.zeros(len(arr) + 1, dtype=np.uint8)
        bits[1:] = arr
        return cls(bits)

    @classmethod
    def from_string(cls, text: str) -> LookupTable:
        return cls.from_entries([int(ch) for ch in text.strip()])

    @property
    def length(self) -> int:
        return len(self.bits) - 1

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, k: int) -> int:
        if not 1 <= k <= self.length:
            raise IndexError(f"table index {k} outside [1, {self.length}]")
        return int(self.bits[k])

    @property
    def entries(self) -> np.ndarray:
        """Read-only view of ``t[1..L]``."""
        return self.bits[1:]

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.entries)

    def __eq__(self, other):
        if not isinstance(other, LookupTable):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


def check_probability(name: str, p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {p}")
    return p


def build_table(length: int, p_t: float, rng: np.random.Generator) -> LookupTable:
    """Draw a table whose successive entries differ with probability ``p_t``.

    ``t[1]`` is a fair coin. Consumes exactly one integer draw followed by
    ``length - 1`` uniform doubles from ``rng``.
    """
    if int(length) != length or length < 3:
        raise ConfigError(f"table length must be an integer >= 3, got {length}")
    length = int(length)
    p_t = check_probability("p_t", p_t)
    first = rng.integers(0, 2)
    flips = rng.random(length - 1) < p_t
    bits = np.empty(length + 1, dtype=np.uint8)
    bits[0] = 0
    bits[1] = first
    bits[2:] = (first + np.cumsum(flips)) & 1
    return LookupTable(bits)


def advance_index(k: int, length: int) -> int:
    """Increment a table index, wrapping past the end to 2."""
    k += 1
    return k if k <= length else 2


def counter_sequence(start: int, n: int, length: int) -> np.ndarray:
    """The values of an index after 1, 2, ..., n advances from ``start``.

    Advancement is a cyclic shift on [2, L] with period L - 1. ``start`` may
    be 1; it advances to 2 like any other index.
    """
    steps = np.arange(1, n + 1, dtype=np.int64)
    if start == 1:
        return 2 + (steps - 1) % (length - 1)
    return 2 + (start - 2 + steps) % (length - 1)


def adjacency_flip_fraction(table: LookupTable) -> float:
    e = table.entries
    return float(np.count_nonzero(e[1:] != e[:-1])) / (len(e) - 1)
