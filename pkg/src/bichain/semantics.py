"""One-step semantics of binomial chains.

A step from state ``u`` draws, for each support pair ``(i, j)``, a binomial
count ``M_ij ~ Bin(u_i, 1 - exp(-T_ij(u)))`` of individuals moving from
compartment ``i`` to ``j``, then applies all moves simultaneously, clamping
each compartment at zero. This module enumerates witness matrices ``M``,
evaluates transition probabilities exactly (rational) or in double precision,
approximates the exponentials by Taylor truncation, and samples steps.

The exact backend never evaluates a transcendental function: every
``exp(-x)`` it needs is a rational from the chain's :class:`~bichain.model.ExpTable`,
either user-supplied or synthesized here via :func:`taylor_exp_neg`.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

from .errors import (
    DomainError,
    MissingExponentialError,
    ResourceCapError,
)
from .model import BinomialChain, ExpTable, LinearFn

__all__ = [
    "NumericBackend",
    "RATIONAL",
    "DOUBLE",
    "WitnessMatrix",
    "binom_pmf",
    "success_prob",
    "apply_witness",
    "enumerate_witnesses",
    "transition_prob",
    "successors",
    "can_transition",
    "sample_transition",
    "taylor_series",
    "taylor_exp_neg",
    "taylor_one_minus_exp_neg",
    "synthesize_exp_table",
    "ensure_exp_table",
    "DEFAULT_WITNESS_CAP",
]

Probability = Union[Fraction, float]

DEFAULT_WITNESS_CAP = 10**7
DEFAULT_TAYLOR_TERM_CAP = 10**6
DEFAULT_ERROR_EXPONENT = 64


@dataclass(frozen=True)
class NumericBackend:
    """Selects exact-rational or double-precision arithmetic.

    ``error_exponent`` only matters in rational mode: exponentials synthesized
    for a chain without an explicit table are accurate to ``2**-error_exponent``.
    """

    mode: str
    error_exponent: int = DEFAULT_ERROR_EXPONENT

    def __post_init__(self) -> None:
        if self.mode not in ("rational", "double"):
            raise DomainError(f"unknown backend mode {self.mode!r}")
        if self.mode == "rational" and self.error_exponent < 1:
            raise DomainError("error_exponent must be >= 1 in rational mode")

    @property
    def is_exact(self) -> bool:
        return self.mode == "rational"


RATIONAL = NumericBackend("rational")
DOUBLE = NumericBackend("double")


@dataclass(frozen=True)
class WitnessMatrix:
    """Sparse nonnegative integer matrix over the chain's support pairs.

    ``counts[t]`` is the number of individuals moved along ``support[t]``;
    entries off the support are implicitly zero.
    """

    support: tuple[tuple[int, int], ...]
    counts: tuple[int, ...]

    def entry(self, i: int, j: int) -> int:
        try:
            return self.counts[self.support.index((i, j))]
        except ValueError:
            return 0

    def items(self) -> Iterator[tuple[tuple[int, int], int]]:
        return zip(self.support, self.counts)

    def is_zero(self) -> bool:
        return not any(self.counts)


def binom_pmf(m: int, n: int, p: Probability) -> Probability:
    """Binomial probability mass ``C(n,m) p^m (1-p)^(n-m)`` with ``0^0 = 1``.

    Exact when ``p`` is a Fraction, double precision when it is a float.

    Raises
    ------
    DomainError
        If ``m`` is outside ``0..n`` or ``p`` outside ``[0, 1]``.
    """
    if not (0 <= m <= n):
        raise DomainError(f"binom_pmf: need 0 <= m <= n, got m={m}, n={n}")
    if not (0 <= p <= 1):
        raise DomainError(f"binom_pmf: p={p} outside [0, 1]")
    return math.comb(n, m) * p**m * (1 - p) ** (n - m)


def _table(chain: BinomialChain) -> ExpTable:
    if chain.exp_table is None:
        raise MissingExponentialError(
            "exact mode needs an exp_table; supply one in the model file or "
            "synthesize it (semantics.ensure_exp_table)"
        )
    return chain.exp_table


def success_prob(
    chain: BinomialChain, i: int, j: int, u, backend: NumericBackend = RATIONAL
) -> Probability:
    """Per-individual success probability ``1 - exp(-T_ij(u))`` at state ``u``.

    In rational mode the exponential is assembled from the chain's table as
    ``exp(-offset) * prod_l exp(-coeff_l)^(u_l)``, staying in Q. In double
    mode it is evaluated directly with ``math.exp``.

    Raises
    ------
    DomainError
        If ``(i, j)`` is not a support pair.
    MissingExponentialError
        Rational mode without an exp_table.
    """
    fn = chain.transfer(i, j)
    if fn is None:
        raise DomainError(f"({i},{j}) is not in the support of the chain")
    if backend.is_exact:
        table = _table(chain)
        stay = table.value(i, j, None)
        for l in fn.coeff_support():
            stay *= table.value(i, j, l) ** u[l]
        return 1 - stay
    return 1.0 - math.exp(-float(fn(u)))


def apply_witness(u, M: WitnessMatrix) -> tuple[int, ...]:
    """Resulting state: ``w_j = max(0, u_j + inflow_j - outflow_j)``.

    The clamp at zero realizes the convention that a compartment overdrawn by
    simultaneous transfers empties instead of going negative.
    """
    delta = [0] * len(u)
    for (i, j), m in M.items():
        delta[i] -= m
        delta[j] += m
    return tuple(max(0, x + d) for x, d in zip(u, delta))


def _witness_count(chain: BinomialChain, u, cap: int) -> int:
    total = 1
    for i, _ in chain.support_pairs:
        total *= u[i] + 1
        if total > cap:
            raise ResourceCapError(
                f"witness enumeration for state {tuple(u)} exceeds the cap of {cap}"
            )
    return total


def enumerate_witnesses(
    chain: BinomialChain, u, max_witnesses: int = DEFAULT_WITNESS_CAP
) -> Iterator[tuple[WitnessMatrix, tuple[int, ...]]]:
    """Yield every witness matrix for source state ``u`` with its target.

    Entries range over ``0..u_i`` per support pair ``(i, j)``; the stream is
    ordered row-major over the support with per-entry values ascending, so it
    is deterministic and duplicate-free. The total count is
    ``prod (u_i + 1)`` over support pairs; if it exceeds ``max_witnesses``
    the call fails upfront with a resource error.
    """
    _witness_count(chain, u, max_witnesses)
    pairs = chain.support_pairs
    bounds = [u[i] + 1 for i, _ in pairs]
    counts = [0] * len(pairs)
    while True:
        M = WitnessMatrix(pairs, tuple(counts))
        yield M, apply_witness(u, M)
        t = len(counts) - 1
        while t >= 0 and counts[t] + 1 == bounds[t]:
            counts[t] = 0
            t -= 1
        if t < 0:
            return
        counts[t] += 1


def _pair_pmfs(chain, u, backend, witness_cap):
    """Per support pair: list of (count, pmf) with zero-mass counts dropped."""
    _witness_count(chain, u, witness_cap)
    pmfs = []
    for i, j in chain.support_pairs:
        p = success_prob(chain, i, j, u, backend)
        n = u[i]
        row = [(m, v) for m in range(n + 1) if (v := binom_pmf(m, n, p)) != 0]
        pmfs.append((i, j, row))
    return pmfs


def successors(
    chain: BinomialChain,
    u,
    backend: NumericBackend = RATIONAL,
    witness_cap: int = DEFAULT_WITNESS_CAP,
) -> dict[tuple[int, ...], Probability]:
    """Full one-step distribution from ``u`` as a dict ``state -> probability``.

    Witnesses with probability zero are skipped; witnesses clamping to the
    same target state have their probabilities summed. In rational mode the
    values sum to 1 exactly.
    """
    pmfs = _pair_pmfs(chain, u, backend, witness_cap)
    k = chain.k
    acc: dict[tuple[int, ...], Probability] = {}
    delta = [0] * k
    one = Fraction(1) if backend.is_exact else 1.0

    def rec(t: int, prob: Probability) -> None:
        if t == len(pmfs):
            w = tuple(x + d if x + d > 0 else 0 for x, d in zip(u, delta))
            if w in acc:
                acc[w] += prob
            else:
                acc[w] = prob
            return
        i, j, row = pmfs[t]
        for m, v in row:
            delta[i] -= m
            delta[j] += m
            rec(t + 1, prob * v)
            delta[i] += m
            delta[j] -= m

    rec(0, one)
    return acc


def transition_prob(
    chain: BinomialChain,
    u,
    w,
    backend: NumericBackend = RATIONAL,
    witness_cap: int = DEFAULT_WITNESS_CAP,
) -> Probability:
    """Probability of stepping from ``u`` to exactly ``w``.

    Sums the product of binomial masses over all witnesses whose clamped
    result is ``w``; zero when no witness reaches ``w``.
    """
    dist = successors(chain, u, backend, witness_cap)
    zero = Fraction(0) if backend.is_exact else 0.0
    return dist.get(tuple(w), zero)


def can_transition(chain: BinomialChain, u, w) -> bool:
    """Whether ``u -> w`` has positive probability, decided structurally.

    Holds iff some witness for ``u`` maps to ``w`` using only pairs with
    ``T_ij(u) > 0`` (a zero-rate pair cannot move anyone). Independent of the
    numeric backend.
    """
    pairs = chain.support_pairs
    w = tuple(w)
    bounds = []
    for i, j in pairs:
        fn = chain.transfers[(i, j)]
        bounds.append(u[i] if fn(u) > 0 else 0)
    k = chain.k
    delta = [0] * k

    def rec(t: int) -> bool:
        if t == len(pairs):
            return all(
                max(0, x + d) == target for x, d, target in zip(u, delta, w)
            )
        i, j = pairs[t]
        for m in range(bounds[t] + 1):
            delta[i] -= m
            delta[j] += m
            if rec(t + 1):
                return True
            delta[i] += m
            delta[j] -= m
        return False

    return rec(0)


def _binomial_draw(rng: random.Random, n: int, p: float) -> int:
    # Inversion: walk the CDF from m=0 using the pmf ratio recurrence.
    if n == 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0 - p
    c = q**n
    ratio = p / q
    x = rng.random()
    m = 0
    acc = c
    while x > acc and m < n:
        m += 1
        c *= ratio * (n - m + 1) / m
        acc += c
    return m


def sample_transition(
    chain: BinomialChain,
    u,
    rng: Union[int, random.Random],
    backend: NumericBackend = DOUBLE,
) -> tuple[int, ...]:
    """Sample one step from ``u``; deterministic given the seed.

    ``rng`` is either a 64-bit seed or a ``random.Random`` to draw from (the
    latter lets trajectory simulations share one stream). The generator is
    Mersenne Twister as implemented by the stdlib; binomials are drawn by CDF
    inversion, so traces are reproducible byte-for-byte across platforms.
    Success probabilities are converted to float for the draw regardless of
    backend.
    """
    if isinstance(rng, int):
        rng = random.Random(rng)
    pairs = chain.support_pairs
    counts = []
    for i, j in pairs:
        p = float(success_prob(chain, i, j, u, backend))
        counts.append(_binomial_draw(rng, u[i], p))
    return apply_witness(u, WitnessMatrix(pairs, tuple(counts)))


def taylor_series(a: int, b: int, terms: int) -> Fraction:
    """Partial sum ``sum_{i=0}^{terms} (-a/b)^i / i!`` as an exact rational."""
    x = Fraction(a, b)
    term = Fraction(1)
    total = Fraction(1)
    for i in range(1, terms + 1):
        term *= -x / i
        total += term
    return total


def taylor_exp_neg(
    a: int, b: int, r: int, max_terms: int = DEFAULT_TAYLOR_TERM_CAP
) -> Fraction:
    """Rational approximation of ``exp(-a/b)`` with error at most ``2**-r``.

    Truncates the Taylor series after ``k = 2*a**2 + r`` terms, which is
    enough for the stated bound for any positive integers ``a, b``.

    Raises
    ------
    DomainError
        Unless ``a, b, r >= 1``.
    ResourceCapError
        If ``k`` exceeds ``max_terms``.
    """
    for name, v in (("a", a), ("b", b), ("r", r)):
        if not isinstance(v, int) or v < 1:
            raise DomainError(f"taylor_exp_neg: {name} must be a positive integer, got {v!r}")
    k = 2 * a * a + r
    if k > max_terms:
        raise ResourceCapError(f"taylor_exp_neg: k = {k} terms exceeds the cap of {max_terms}")
    return taylor_series(a, b, k)


def taylor_one_minus_exp_neg(
    a: int, b: int, r: int, max_terms: int = DEFAULT_TAYLOR_TERM_CAP
) -> Fraction:
    """Complement ``1 - exp(-a/b)`` to the same ``2**-r`` accuracy."""
    return 1 - taylor_exp_neg(a, b, r, max_terms)


def _exp_neg_rational(x: Fraction, r: int, max_terms: int) -> Fraction:
    if x == 0:
        return Fraction(1)
    v = taylor_exp_neg(x.numerator, x.denominator, r, max_terms)
    # exp(-x) lies in [0, 1]; clamping can only shrink the error.
    return min(Fraction(1), max(Fraction(0), v))


def synthesize_exp_table(
    chain: BinomialChain, r: int = DEFAULT_ERROR_EXPONENT, max_terms: int = DEFAULT_TAYLOR_TERM_CAP
) -> ExpTable:
    """Build the exponential table the rational backend needs via Taylor.

    One entry per support pair for the offset and one per nonzero
    coefficient, each within ``2**-r`` of the true exponential and clamped
    into ``[0, 1]``.
    """
    entries: dict[tuple[int, int, int | None], Fraction] = {}
    for (i, j), fn in chain.transfers.items():
        entries[(i, j, None)] = _exp_neg_rational(fn.offset, r, max_terms)
        for l in fn.coeff_support():
            entries[(i, j, l)] = _exp_neg_rational(fn.coeffs[l], r, max_terms)
    return ExpTable(entries, r)


def ensure_exp_table(
    chain: BinomialChain, r: int = DEFAULT_ERROR_EXPONENT
) -> BinomialChain:
    """Return ``chain`` unchanged if it has a table, else with one synthesized."""
    if chain.exp_table is not None:
        return chain
    return chain.with_exp_table(synthesize_exp_table(chain, r))
