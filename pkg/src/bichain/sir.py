"""Closed-form fast path for SIR-shaped chains.

A chain with three compartments, an infection transfer whose rate is linear
in the infectious count, and a constant recovery transfer admits a much
cheaper analysis than witness enumeration: every transition probability is a
product of two binomial pmf values, and the transition rows of neighbouring
states are related by a multiplicative recurrence. This module exploits that
to build the full quartic-size transition table and to solve expected
end-of-epidemic times by streaming over strata of constant S+I, touching
each table entry once and keeping only two strata in memory.

States are written ``(m1, m2, m3)`` for (susceptible, infectious, removed);
``m2`` is derived from the population size, so ``(m1, m3)`` identifies a
state. ``e_beta`` and ``e_gamma`` are the per-contact and per-recovery stay
probabilities: one susceptible stays with probability ``e_beta ** m2``, one
infectious stays with probability ``e_gamma``.

The double-precision end-of-epidemic solve runs in the compiled extension
when available and in a NumPy twin otherwise; ``KERNEL_IMPL`` names the one
in use. Exact mode is pure Python over ``fractions.Fraction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError, InvariantError, ModelError, ResourceCapError
from .model import BinomialChain
from .reach import HittingTimes
from .semantics import NumericBackend, RATIONAL, binom_pmf, ensure_exp_table

try:
    from . import _sirkernel as _kernel
except ImportError:  # pragma: no cover - depends on build environment
    from . import _sirkernel_py as _kernel

from . import _sirkernel_py

KERNEL_IMPL = _kernel.IMPL

DEFAULT_EXACT_POPULATION_CAP = 64
DEFAULT_DOUBLE_POPULATION_CAP = 400
DEFAULT_TABLE_POPULATION_CAP = 128

_ZERO = Fraction(0)
_ONE = Fraction(1)


@dataclass(frozen=True)
class SirChain:
    """An SIR chain reduced to its four defining numbers.

    ``e_beta`` and ``e_gamma`` are stay probabilities in (0, 1] and may be
    `Fraction` (exact analysis) or `float` (double analysis). ``e_gamma = 1``
    is accepted here but rejected by the end-of-epidemic solve, since then no
    state with infectious individuals is absorbing.
    """

    s0: int
    i0: int
    r0: int
    e_beta: Fraction | float
    e_gamma: Fraction | float

    def __post_init__(self) -> None:
        for name in ("s0", "i0", "r0"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ModelError(f"{name} must be a nonnegative integer")
        for name in ("e_beta", "e_gamma"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ModelError(f"{name} must lie in (0, 1], got {v!r}")

    @property
    def population(self) -> int:
        return self.s0 + self.i0 + self.r0

    @property
    def initial(self) -> tuple[int, int, int]:
        return (self.s0, self.i0, self.r0)

    def _exact_rates(self) -> tuple[Fraction, Fraction]:
        if not (isinstance(self.e_beta, Fraction)
                and isinstance(self.e_gamma, Fraction)):
            raise DomainError(
                "exact analysis needs Fraction e_beta and e_gamma")
        return self.e_beta, self.e_gamma


def sir_states(population: int) -> tuple[tuple[int, int, int], ...]:
    """All states of the given population, colexicographically ascending
    (m3 ascending, then m1 descending)."""
    out = []
    for m3 in range(population + 1):
        for m1 in range(population - m3, -1, -1):
            out.append((m1, population - m3 - m1, m3))
    return tuple(out)


def sir_successor_ok(m: tuple[int, int, int], n: tuple[int, int, int]) -> bool:
    """Whether a single step from ``m`` can reach ``n``: susceptibles never
    increase and removals grow by at most the infectious count."""
    if sum(m) != sum(n) or any(x < 0 for x in m) or any(x < 0 for x in n):
        return False
    return n[0] <= m[0] and m[2] <= n[2] <= m[1] + m[2]


def sir_direct_prob(chain: SirChain, m: tuple[int, int, int],
                    n: tuple[int, int, int]):
    """One-step probability as a product of two binomial pmf values."""
    if sum(m) != chain.population:
        raise DomainError("source state does not match the chain population")
    if not sir_successor_ok(m, n):
        raise DomainError(f"{n} is not a one-step successor of {m}")
    eb, eg = chain.e_beta, chain.e_gamma
    m1, m2, _ = m
    infected = m1 - n[0]
    recovered = n[2] - m[2]
    return (binom_pmf(infected, m1, 1 - eb**m2)
            * binom_pmf(recovered, m2, 1 - eg))


def alpha(chain: SirChain, m: tuple[int, int, int],
          n: tuple[int, int, int]):
    """Ratio X(m, n) / X((m1-1, m2, m3+1), n) linking the transition row of
    ``m`` to the row of its neighbour one stratum down, at the same target.

    Defined for interior targets only: at least one infection (n1 < m1) and
    at least one recovery (m3 < n3 <= m2 + m3).
    """
    m1, m2, m3 = m
    n1, _, n3 = n
    if not sir_successor_ok(m, n):
        raise DomainError(f"{n} is not a one-step successor of {m}")
    if n1 >= m1 or n3 <= m3:
        raise DomainError("alpha needs an interior target: n1 < m1 and n3 > m3")
    eb, eg = chain.e_beta, chain.e_gamma
    num = m1 * (m2 - n3 + m3 + 1) * (1 - eg) * (1 - eb**m2)
    den = (n3 - m3) * (m1 - n1) * eg
    return num / den


@dataclass(frozen=True)
class TransitionTable:
    """Materialized one-step transition rows of an SIR chain.

    Rows exist for every state with ``m2 >= 1``; states with no infectious
    individuals are absorbing and implicitly carry a unit diagonal. A row is
    a ``(m1+1) x (m2+1)`` block indexed by the new susceptible count and the
    number of recoveries.
    """

    population: int
    exact: bool
    rows: dict[tuple[int, int], object]

    def block(self, m: tuple[int, int, int]):
        """The raw row block of a transient source state."""
        if m[1] == 0:
            raise DomainError(f"{m} is absorbing; no row is stored")
        return self.rows[(m[0], m[2])]

    def prob(self, m: tuple[int, int, int], n: tuple[int, int, int]):
        """X(m, n); zero when ``n`` is not a one-step successor."""
        if sum(m) != self.population:
            raise DomainError("source state does not match the table")
        zero = _ZERO if self.exact else 0.0
        one = _ONE if self.exact else 1.0
        if m[1] == 0:
            return one if n == m else zero
        if not sir_successor_ok(m, n):
            return zero
        block = self.rows[(m[0], m[2])]
        return block[n[0]][n[2] - m[2]] if self.exact else block[n[0], n[2] - m[2]]

    def states(self) -> tuple[tuple[int, int, int], ...]:
        return sir_states(self.population)


def _exact_binom_row(n: int, p: Fraction) -> list[Fraction]:
    return [binom_pmf(j, n, p) for j in range(n + 1)]


def _exact_strata(population: int, eb: Fraction, eg: Fraction):
    """Yield ``(M, m3, blocks)`` strata ascending, blocks keyed by m2; the
    exact twin of the kernel's traversal."""
    gamma_rows: dict[int, list[Fraction]] = {}
    one_minus_eg = 1 - eg
    prev: dict[int, list[list[Fraction]]] = {}
    for M in range(1, population + 1):
        m3 = population - M
        cur: dict[int, list[list[Fraction]]] = {}
        for m2 in range(1, M + 1):
            m1 = M - m2
            eb2 = eb**m2
            egm2 = eg**m2
            block = [[_ZERO] * (m2 + 1) for _ in range(m1 + 1)]
            # Interior cells from the (m1-1, m2, m3+1) block one stratum down.
            if m1 >= 1:
                pblock = prev[m2]
                c = one_minus_eg * (1 - eb2) / eg
                for n1 in range(m1):
                    rf = c * Fraction(m1, m1 - n1)
                    prow = pblock[n1]
                    row = block[n1]
                    for d in range(1, m2 + 1):
                        row[d] = rf * Fraction(m2 - d + 1, d) * prow[d - 1]
            # Edge n1 = m1: no infections; recoveries direct.
            if m2 not in gamma_rows:
                gamma_rows[m2] = _exact_binom_row(m2, one_minus_eg)
            base = eb2**m1
            block[m1] = [base * g for g in gamma_rows[m2]]
            # Edge d = 0: no recoveries; infections direct.
            scol = _exact_binom_row(m1, 1 - eb2)
            for n1 in range(m1 + 1):
                block[n1][0] = scol[m1 - n1] * egm2
            cur[m2] = block
        yield M, m3, cur
        prev = cur


def _check_population_cap(population: int, cap: int | None, default: int,
                          what: str) -> None:
    limit = default if cap is None else cap
    if population > limit:
        raise ResourceCapError(
            f"population {population} exceeds the {what} cap {limit}; "
            f"raise max_population to proceed")


def dp_transition_table(chain: SirChain,
                        backend: NumericBackend = RATIONAL,
                        max_population: int | None = None) -> TransitionTable:
    """Build the full transition table by the stratum recurrence.

    Every stored row is validated to sum to one (exactly in rational mode,
    to 1e-9 in double mode).
    """
    N = chain.population
    exact = backend.mode == "rational"
    if exact:
        eb, eg = chain._exact_rates()
        _check_population_cap(N, max_population,
                              DEFAULT_EXACT_POPULATION_CAP, "exact table")
        strata = _exact_strata(N, eb, eg)
    else:
        _check_population_cap(N, max_population,
                              DEFAULT_TABLE_POPULATION_CAP, "double table")
        strata = _sirkernel_py.strata_blocks(
            N, float(chain.e_beta), float(chain.e_gamma))
    rows: dict[tuple[int, int], object] = {}
    for M, m3, blocks in strata:
        for m2, block in blocks.items():
            m1 = M - m2
            total = sum(sum(r) for r in block) if exact else float(block.sum())
            if exact:
                if total != 1:
                    raise InvariantError(
                        f"row of {(m1, m2, m3)} sums to {total}, not 1")
            elif abs(total - 1.0) > 1e-9:
                raise InvariantError(
                    f"row of {(m1, m2, m3)} sums to {total!r}")
            rows[(m1, m3)] = block
    return TransitionTable(population=N, exact=exact, rows=rows)


def sir_expected_eoe(chain: SirChain,
                     backend: NumericBackend = RATIONAL,
                     max_population: int | None = None) -> HittingTimes:
    """Expected steps until no infectious individuals remain, for every
    state, via the streaming stratum solve.

    Raises `InvariantError` when ``e_gamma = 1``: recovery then never
    happens and the epidemic cannot end from any state with m2 > 0.
    """
    N = chain.population
    if chain.e_gamma >= 1:
        raise InvariantError(
            "e_gamma = 1 gives transient states self-loop probability 1")
    exact = backend.mode == "rational"
    if exact:
        eb, eg = chain._exact_rates()
        _check_population_cap(N, max_population,
                              DEFAULT_EXACT_POPULATION_CAP, "exact eoe")
        values = _exact_eoe(N, eb, eg)
    else:
        _check_population_cap(N, max_population,
                              DEFAULT_DOUBLE_POPULATION_CAP, "double eoe")
        kmat = _kernel.eoe_double(N, float(chain.e_beta), float(chain.e_gamma))
        values = {}
        for m3 in range(N + 1):
            for m1 in range(N - m3 + 1):
                values[(m1, m3)] = float(kmat[m1, m3])
    states = sir_states(N)
    ordered = tuple(values[(m[0], m[2])] for m in states)
    return HittingTimes(states=states, values=ordered,
                        initial=values[(chain.s0, chain.r0)])


def _exact_eoe(N: int, eb: Fraction, eg: Fraction) -> dict[tuple[int, int], Fraction]:
    values: dict[tuple[int, int], Fraction] = {
        (m1, N - m1): _ZERO for m1 in range(N + 1)}
    for M, m3, blocks in _exact_strata(N, eb, eg):
        # Solve the stratum in m1-ascending order: same-stratum successors
        # have strictly smaller n1 and are already done.
        for m2 in range(M, 0, -1):
            m1 = M - m2
            block = blocks[m2]
            acc = _ONE
            for n1 in range(m1 + 1):
                row = block[n1]
                for d in range(m2 + 1):
                    if n1 == m1 and d == 0:
                        continue
                    p = row[d]
                    if p:
                        acc += p * values[(n1, m3 + d)]
            diag = block[m1][0]
            values[(m1, m3)] = acc / (1 - diag)
    return values


def is_sir_shape(chain: BinomialChain) -> bool:
    """Structural test for the fast path: three compartments, an infection
    edge 0->1 whose rate is linear in compartment 1 with no offset, and a
    constant recovery edge 1->2."""
    if chain.k != 3 or set(chain.support_pairs) != {(0, 1), (1, 2)}:
        return False
    t01 = chain.transfer(0, 1)
    t12 = chain.transfer(1, 2)
    return (t01.offset == 0 and t01.coeff_support() == (1,)
            and t12.is_constant)


def sir_from_chain(chain: BinomialChain,
                   backend: NumericBackend = RATIONAL) -> SirChain:
    """Extract the four defining numbers from an SIR-shaped chain.

    In rational mode the stay probabilities come from the chain's
    exponential table (synthesized at the backend's error exponent when
    absent); in double mode they are computed directly from the rates.
    """
    if not is_sir_shape(chain):
        raise ModelError("chain does not have the SIR shape")
    s0, i0, r0 = chain.initial
    if backend.mode == "rational":
        chain = ensure_exp_table(chain, backend.error_exponent)
        table = chain.exp_table
        if table.value(0, 1, None) != 1:
            raise ModelError(
                "fast path needs the infection offset entry to be exactly 1")
        e_beta = table.value(0, 1, 1)
        e_gamma = table.value(1, 2, None)
    else:
        e_beta = math.exp(-float(chain.transfer(0, 1).coeffs[1]))
        e_gamma = math.exp(-float(chain.transfer(1, 2).offset))
    if not 0 < e_beta <= 1 or not 0 < e_gamma <= 1:
        raise ModelError("stay probabilities must lie in (0, 1]")
    return SirChain(s0=s0, i0=i0, r0=r0, e_beta=e_beta, e_gamma=e_gamma)
