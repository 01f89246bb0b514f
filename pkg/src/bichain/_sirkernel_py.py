"""NumPy implementation of the SIR double-precision fast path.

Fallback twin of the compiled ``bichain._sirkernel`` extension;
``bichain.sir`` picks whichever imports. Both walk the state space in strata
of constant S+I (reverse colexicographic order), filling each stratum's
transition rows from the previous one via the alpha recurrence and solving
the hitting-time equations for a stratum as soon as its rows exist, so only
two strata are alive at any time.

States are ``(m1, m2, m3)`` with ``m2`` derived; a stratum ``M = m1 + m2``
fixes ``m3 = N - M``. The row block of a source state is indexed
``[n1, d]`` with ``d = n3 - m3``; the only cross-block dependency is on the
``(m1-1, m2, m3+1)`` block one stratum down, so blocks within a stratum are
independent and vectorize cleanly.
"""

from __future__ import annotations

import math

import numpy as np

IMPL = "python"


def _log_factorials(n: int) -> np.ndarray:
    lf = np.zeros(n + 1)
    if n >= 1:
        lf[1:] = np.cumsum(np.log(np.arange(1, n + 1, dtype=np.float64)))
    return lf


def _binom_pmf_vector(n: int, log_p, log_q, lf: np.ndarray) -> np.ndarray:
    """B(j; n, p) for j = 0..n, from log p and log(1-p); None = degenerate."""
    out = np.zeros(n + 1)
    if log_p is None:
        out[0] = 1.0
        return out
    if log_q is None:
        out[n] = 1.0
        return out
    j = np.arange(n + 1)
    logpmf = lf[n] - lf[j] - lf[n - j] + j * log_p + (n - j) * log_q
    np.exp(logpmf, out=out)
    return out


def _success_logs(stay_log: float):
    """(log p, log(1-p)) for p = 1 - exp(stay_log); None marks p = 0 or 1."""
    s = -math.expm1(stay_log)  # success probability
    if s <= 0.0:
        return None, stay_log
    if s >= 1.0:
        return 0.0, None
    return math.log(s), stay_log


def strata_blocks(N: int, e_beta: float, e_gamma: float):
    """Yield ``(M, m3, blocks)`` strata ascending; ``blocks[m2]`` is the
    ``(m1+1, m2+1)`` transition row of source ``(M-m2, m2, N-M)``."""
    if not (0.0 < e_beta <= 1.0):
        raise ValueError("e_beta must lie in (0, 1]")
    if not (0.0 < e_gamma <= 1.0):
        raise ValueError("e_gamma must lie in (0, 1]")
    lf = _log_factorials(N)
    lb = math.log(e_beta)
    # Recovery pmf rows B(d; m2, 1-e_gamma) depend on m2 only.
    lg_p, lg_q = _success_logs(math.log(e_gamma))
    gamma_rows = [_binom_pmf_vector(m2, lg_p, lg_q, lf) for m2 in range(N + 1)]

    prev: dict[int, np.ndarray] = {}
    for M in range(1, N + 1):
        m3 = N - M
        cur: dict[int, np.ndarray] = {}
        for m2 in range(1, M + 1):
            m1 = M - m2
            leb2 = m2 * lb  # log e_beta^{m2}, the per-susceptible stay log
            eb2 = math.exp(leb2)
            egm2 = e_gamma**m2
            block = np.empty((m1 + 1, m2 + 1))
            # Interior cells from the block one stratum down.
            if m1 >= 1:
                P = prev[m2]
                s = -math.expm1(leb2)
                c = (1.0 - e_gamma) * s / e_gamma
                rowfac = m1 / np.arange(m1, 0, -1, dtype=np.float64)  # m1/(m1-n1)
                d = np.arange(1, m2 + 1, dtype=np.float64)
                colfac = (m2 - d + 1.0) / d
                block[:m1, 1:] = (c * rowfac)[:, None] * colfac[None, :] * P[:, :m2]
            # Edge n1 = m1: no infections; recoveries direct.
            block[m1, :] = math.exp(m1 * leb2) * gamma_rows[m2]
            # Edge d = 0: no recoveries; infections direct.
            sb_p, sb_q = _success_logs(leb2)
            scol = _binom_pmf_vector(m1, sb_p, sb_q, lf)
            block[:, 0] = scol[::-1] * egm2
            cur[m2] = block
        yield M, m3, cur
        prev = cur


def eoe_double(N: int, e_beta: float, e_gamma: float) -> np.ndarray:
    """Expected end-of-epidemic times; ``result[m1, m3]`` with m2 derived.

    Requires ``e_gamma < 1`` (otherwise infectious individuals never recover
    and no state with m2 > 0 is absorbing).
    """
    if not (0.0 < e_gamma < 1.0):
        raise ValueError("eoe needs e_gamma in (0, 1)")
    kmat = np.zeros((N + 1, N + 1))
    for M, m3, blocks in strata_blocks(N, e_beta, e_gamma):
        # Solve the stratum in m1-ascending order: same-stratum successors
        # have strictly smaller n1 and are already done.
        for m2 in range(M, 0, -1):
            m1 = M - m2
            X = blocks[m2]
            kwin = kmat[0 : m1 + 1, m3 : m3 + m2 + 1]
            acc = 1.0 + float(np.sum(X * kwin))
            kmat[m1, m3] = acc / (1.0 - X[m1, 0])
    return kmat
