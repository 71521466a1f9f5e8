"""Compiled inner loops. Pair codes are ``2 * (a - 1) + (b - 1)``."""

import numba
import numpy as np

MODE_MEMORY = 0
MODE_MEMORYLESS = 1


@numba.njit(cache=True)
def schedule_loop(initial_code, n, p_mixed, p_same, force_change, draws):
    codes = np.empty(n, dtype=np.int8)
    cur = initial_code
    codes[0] = cur
    for k in range(1, n):
        a = cur >> 1
        b = cur & 1
        p = p_mixed if a != b else p_same
        if draws[k - 1, 0] < p:
            if force_change:
                # one of the three other pairs, uniformly
                off = 1 + int(draws[k - 1, 1] * 3.0)
                if off > 3:
                    off = 3
                cur = (cur + off) & 3
            else:
                na = 1 if draws[k - 1, 1] >= 0.5 else 0
                nb = 1 if draws[k - 1, 2] >= 0.5 else 0
                cur = (na << 1) | nb
        codes[k] = cur
    return codes


@numba.njit(cache=True)
def event_loop(bits, c0, m_a0, m_b0, sched_a, sched_b, cmds, mode):
    """Run the apparatus over ``len(cmds)`` emissions.

    ``bits`` is 1-based (slot 0 unused); ``sched_a``/``sched_b`` hold settings
    1 or 2; ``cmds`` holds 0 (inactive), 1 (for A), 2 (for B).
    """
    length = bits.shape[0] - 1
    n = cmds.shape[0]
    out_a = np.empty(n, dtype=np.uint8)
    out_b = np.empty(n, dtype=np.uint8)
    c = c0
    m_a = m_a0
    m_b = m_b0
    for k in range(n):
        c += 1
        if c > length:
            c = 2
        cmd = cmds[k]
        if mode == MODE_MEMORYLESS:
            out_a[k] = bits[c] if sched_a[k] == 1 else bits[c - 1]
            out_b[k] = bits[c] if sched_b[k] == 1 else bits[c - 1]
            continue
        if sched_a[k] == 1:
            if cmd == 1:
                m_a = c
            out_a[k] = bits[m_a]
            m_a += 1
            if m_a > length:
                m_a = 2
        else:
            out_a[k] = bits[c - 1]
        if sched_b[k] == 1:
            if cmd == 2:
                m_b = c
            out_b[k] = bits[m_b]
            m_b += 1
            if m_b > length:
                m_b = 2
        else:
            out_b[k] = bits[c - 1]
    return out_a, out_b, c, m_a, m_b
