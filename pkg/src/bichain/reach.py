"""Reachability and hitting-time analysis for acyclic binomial chains.

An acyclic chain induces a finite absorbing Markov chain: every transition
moves strictly down a lexicographic order on topologically permuted
coordinates, so sorting states descending by that order makes ``I - Q`` upper
triangular and lets expected hitting times and until-probabilities fall out
of a single back-substitution pass, exactly in rational mode.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

from .errors import (
    InvariantError,
    ModelError,
    NonAbsorbingError,
    PredicateError,
    ResourceCapError,
)
from .model import BinomialChain, is_acyclic, is_closed, topo_order
from .semantics import (
    DOUBLE,
    RATIONAL,
    DEFAULT_WITNESS_CAP,
    NumericBackend,
    _binomial_draw,
    ensure_exp_table,
    success_prob,
    successors,
)

__all__ = [
    "ExplicitChain",
    "HittingTimes",
    "build_reachable",
    "sort_canonical",
    "check_absorbing",
    "expected_hitting_times",
    "until_probability",
    "monte_carlo_hitting",
    "parse_predicate",
    "DEFAULT_STATE_CAP",
]

logger = logging.getLogger(__name__)

Probability = Union[Fraction, float]
State = tuple[int, ...]

DEFAULT_STATE_CAP = 10**7
DEFAULT_TRAJECTORY_CAP = 10**6


@dataclass(frozen=True)
class ExplicitChain:
    """Materialized reachable Markov chain of a binomial chain.

    ``trans[s]`` lists ``(target position, probability)`` pairs sorted by
    target; rows sum to 1 (exactly in rational mode). ``lex_positions`` is
    the topological position of each compartment, fixing the order used by
    :func:`sort_canonical`.
    """

    states: tuple[State, ...]
    index: dict[State, int]
    trans: tuple[tuple[tuple[int, Probability], ...], ...]
    absorbing: frozenset[int]
    initial: int
    backend: NumericBackend
    lex_positions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.states)

    def lex_key(self, u: State) -> State:
        """State coordinates permuted into topological position order."""
        key = [0] * len(u)
        for comp, pos in enumerate(self.lex_positions):
            key[pos] = u[comp]
        return tuple(key)


@dataclass(frozen=True)
class HittingTimes:
    """Expected steps to absorption, aligned with an ExplicitChain's states."""

    states: tuple[State, ...]
    values: tuple[Probability, ...]
    initial: Probability

    def value(self, state) -> Probability:
        return self.values[self.states.index(tuple(state))]


def build_reachable(
    chain: BinomialChain,
    backend: NumericBackend = RATIONAL,
    state_cap: int = DEFAULT_STATE_CAP,
    witness_cap: int = DEFAULT_WITNESS_CAP,
) -> ExplicitChain:
    """Breadth-first closure of the initial state under positive-probability steps.

    Requires an acyclic chain; the closure is then finite. Each discovered
    transition is checked against the one-step order bounds (targets never
    exceed the source lexicographically, and the 1-norm grows at most by a
    factor ``k``; closed chains preserve it exactly); a violation means a
    bug, not bad input.

    Raises
    ------
    ModelError
        Non-acyclic input.
    ResourceCapError
        More than ``state_cap`` states or ``witness_cap`` witnesses per state.
    """
    if not is_acyclic(chain):
        raise ModelError("build_reachable needs an acyclic chain")
    if backend.is_exact:
        chain = ensure_exp_table(chain, backend.error_exponent)
    pi = topo_order(chain)
    k = chain.k
    logger.debug(
        "reachability bound for k=%d is %d^(2^%d) states; using cap %d",
        k, k, k * k, state_cap,
    )

    def lex_key(u: State) -> State:
        key = [0] * k
        for comp, pos in enumerate(pi):
            key[pos] = u[comp]
        return tuple(key)

    closed = is_closed(chain)
    init = tuple(chain.initial)
    states: list[State] = [init]
    index: dict[State, int] = {init: 0}
    rows: list[tuple[tuple[int, Probability], ...]] = []
    absorbing: set[int] = set()
    frontier = 0
    while frontier < len(states):
        u = states[frontier]
        dist = successors(chain, u, backend, witness_cap)
        dist = {w: p for w, p in dist.items() if p != 0}
        if set(dist) == {u}:
            absorbing.add(frontier)
        norm_u = sum(u)
        key_u = lex_key(u)
        row = []
        for w, p in dist.items():
            if w != u:
                if not lex_key(w) < key_u:
                    raise InvariantError(f"transition {u} -> {w} moves up the state order")
                norm_w = sum(w)
                if norm_w > norm_u * k:
                    raise InvariantError(f"transition {u} -> {w} breaks the 1-norm bound")
                if closed and norm_w != norm_u:
                    raise InvariantError(f"closed chain changed population: {u} -> {w}")
            if w not in index:
                if len(states) >= state_cap:
                    raise ResourceCapError(f"reachable state count exceeds the cap of {state_cap}")
                index[w] = len(states)
                states.append(w)
            row.append((index[w], p))
        row.sort()
        rows.append(tuple(row))
        frontier += 1
    return ExplicitChain(
        states=tuple(states),
        index=index,
        trans=tuple(rows),
        absorbing=frozenset(absorbing),
        initial=0,
        backend=backend,
        lex_positions=pi,
    )


def sort_canonical(ec: ExplicitChain) -> ExplicitChain:
    """Reorder states: transient first, each block descending lexicographically.

    With transitions only moving down the order, the transient block of
    ``I - P`` becomes upper triangular with diagonal ``1 - P(u, u) > 0``;
    this is checked and a violation raises :class:`InvariantError`.
    """
    n = len(ec.states)
    transient = [s for s in range(n) if s not in ec.absorbing]
    absorbing = [s for s in range(n) if s in ec.absorbing]
    key = lambda s: ec.lex_key(ec.states[s])
    transient.sort(key=key, reverse=True)
    absorbing.sort(key=key, reverse=True)
    order = transient + absorbing
    old_to_new = {old: new for new, old in enumerate(order)}
    states = tuple(ec.states[old] for old in order)
    trans = tuple(
        tuple(sorted((old_to_new[t], p) for t, p in ec.trans[old])) for old in order
    )
    for s in range(len(transient)):
        for t, _ in trans[s]:
            if t < s:
                raise InvariantError(
                    f"transition {states[s]} -> {states[t]} below the diagonal"
                )
    return ExplicitChain(
        states=states,
        index={u: s for s, u in enumerate(states)},
        trans=trans,
        absorbing=frozenset(old_to_new[s] for s in ec.absorbing),
        initial=old_to_new[ec.initial],
        backend=ec.backend,
        lex_positions=ec.lex_positions,
    )


def check_absorbing(ec: ExplicitChain) -> bool:
    """Whether the absorbing set is nonempty and reachable from every state."""
    if not ec.absorbing:
        return False
    n = len(ec.states)
    preds: list[list[int]] = [[] for _ in range(n)]
    for s, row in enumerate(ec.trans):
        for t, _ in row:
            if t != s:
                preds[t].append(s)
    seen = set(ec.absorbing)
    stack = list(ec.absorbing)
    while stack:
        t = stack.pop()
        for s in preds[t]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return len(seen) == n


def _self_loop(ec: ExplicitChain, s: int) -> Probability:
    for t, p in ec.trans[s]:
        if t == s:
            return p
    return Fraction(0) if ec.backend.is_exact else 0.0


def expected_hitting_times(ec: ExplicitChain) -> HittingTimes:
    """Expected number of steps to reach the absorbing set, per state.

    Solves ``(I - Q) x = 1`` over the transient block by back substitution
    on the canonical order; absorbing states get 0. Exact in rational mode.

    Raises
    ------
    NonAbsorbingError
        Some state cannot reach the absorbing set.
    InvariantError
        A transient state carries self-loop probability 1.
    """
    if not check_absorbing(ec):
        raise NonAbsorbingError("chain does not reach an absorbing state from every state")
    canon = sort_canonical(ec)
    one = Fraction(1) if ec.backend.is_exact else 1.0
    zero = Fraction(0) if ec.backend.is_exact else 0.0
    n = len(canon.states)
    values: list[Probability] = [zero] * n
    for s in range(n - 1, -1, -1):
        if s in canon.absorbing:
            continue
        diag = zero
        acc = one
        for t, p in canon.trans[s]:
            if t == s:
                diag = p
            else:
                acc += p * values[t]
        denom = one - diag
        if denom == 0:
            raise InvariantError(
                f"transient state {canon.states[s]} has self-loop probability 1"
            )
        values[s] = acc / denom
    by_state = {canon.states[s]: values[s] for s in range(n)}
    ordered = tuple(by_state[u] for u in ec.states)
    return HittingTimes(states=ec.states, values=ordered, initial=ordered[ec.initial])


def until_probability(
    ec: ExplicitChain,
    safe: Callable[[State], bool],
    target: Callable[[State], bool],
) -> Probability:
    """Probability of staying in ``safe`` states until hitting ``target``.

    Target states count immediately (their own safety is irrelevant); leaving
    the safe set first loses. Solved by the same back substitution as the
    hitting times, so the result is exact in rational mode.
    """
    canon = sort_canonical(ec)
    one = Fraction(1) if ec.backend.is_exact else 1.0
    zero = Fraction(0) if ec.backend.is_exact else 0.0
    n = len(canon.states)
    values: list[Probability] = [zero] * n
    for s in range(n - 1, -1, -1):
        u = canon.states[s]
        if target(u):
            values[s] = one
        elif not safe(u) or s in canon.absorbing:
            values[s] = zero
        else:
            diag = zero
            acc = zero
            for t, p in canon.trans[s]:
                if t == s:
                    diag = p
                else:
                    acc += p * values[t]
            denom = one - diag
            if denom == 0:
                raise InvariantError(
                    f"transient state {u} has self-loop probability 1"
                )
            values[s] = acc / denom
    return values[canon.initial]


def monte_carlo_hitting(
    chain: BinomialChain,
    runs: int,
    seed: int,
    backend: NumericBackend = DOUBLE,
    max_steps: int = DEFAULT_TRAJECTORY_CAP,
) -> tuple[float, float]:
    """Empirical mean steps to absorption with a 95% normal-approximation CI.

    Simulates ``runs`` trajectories from the initial state with one Mersenne
    Twister stream seeded by ``seed``, so results are reproducible. The
    backend picks where the success probabilities come from (the exp table in
    rational mode, the rates in double mode); draws are float either way.

    Returns ``(mean, half_width)``. A trajectory exceeding ``max_steps``
    raises :class:`ResourceCapError`; suspect a non-terminating model.
    """
    if runs < 1:
        raise ResourceCapError("runs must be >= 1")
    if backend.is_exact:
        chain = ensure_exp_table(chain, backend.error_exponent)
    if not is_acyclic(chain):
        raise ModelError("monte_carlo_hitting needs an acyclic chain")
    rng = random.Random(seed)
    pairs = chain.support_pairs
    k = chain.k
    # state -> tuple of per-pair float success probabilities, or None if
    # the state is absorbing (every pair has an empty source or rate zero).
    cache: dict[State, tuple[float, ...] | None] = {}

    def probs_at(u: State):
        got = cache.get(u, False)
        if got is not False:
            return got
        ps = tuple(float(success_prob(chain, i, j, u, backend)) for i, j in pairs)
        entry = None if all(u[i] == 0 or p == 0.0 for (i, _), p in zip(pairs, ps)) else ps
        cache[u] = entry
        return entry

    counts = []
    for _ in range(runs):
        u = tuple(chain.initial)
        steps = 0
        while True:
            ps = probs_at(u)
            if ps is None:
                break
            if steps >= max_steps:
                raise ResourceCapError(
                    f"trajectory exceeded {max_steps} steps without absorbing"
                )
            delta = [0] * k
            for (i, j), p in zip(pairs, ps):
                m = _binomial_draw(rng, u[i], p)
                delta[i] -= m
                delta[j] += m
            u = tuple(x + d if x + d > 0 else 0 for x, d in zip(u, delta))
            steps += 1
        counts.append(steps)
    mean = sum(counts) / runs
    if runs == 1:
        return mean, 0.0
    var = sum((c - mean) ** 2 for c in counts) / (runs - 1)
    return mean, 1.96 * math.sqrt(var / runs)


# ---------------------------------------------------------------------------
# Predicate mini-language: conjunctions of linear comparisons over
# compartment names and the constant N0, e.g. "S >= 2 && I + R != N0".

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|!=|=|<|>)|(?P<and>&&)|(?P<plus>\+)|(?P<minus>-)|(?P<star>\*))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == m.start():
            rest = text[pos:].strip()
            if not rest:
                break
            raise PredicateError(f"predicate: unexpected character at {text[pos:]!r}")
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
    tokens.append(("end", ""))
    return tokens


class _LinParser:
    """Recursive descent over: conj := cmp ('&&' cmp)*; cmp := expr OP expr."""

    def __init__(self, text: str, names: tuple[str, ...], n0: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.names = names
        self.n0 = n0
        self.text = text

    def peek(self):
        return self.tokens[self.pos][0]

    def take(self, kind):
        if self.tokens[self.pos][0] != kind:
            raise PredicateError(
                f"predicate {self.text!r}: expected {kind}, got {self.tokens[self.pos][1]!r}"
            )
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok[1]

    def term(self, coeffs, const, sign):
        # term := num ['*'? name] | name
        if self.peek() == "num":
            value = int(self.take("num"))
            if self.peek() == "star":
                self.take("star")
                name = self.take("name")
                self.add_name(coeffs, name, sign * value)
                return const
            if self.peek() == "name":
                name = self.take("name")
                self.add_name(coeffs, name, sign * value)
                return const
            return const + sign * value
        name = self.take("name")
        self.add_name(coeffs, name, sign)
        return const

    def add_name(self, coeffs, name, value):
        if name == "N0":
            # N0 is a constant, folded in by the caller via a sentinel slot.
            coeffs[-1] += value
            return
        try:
            coeffs[self.names.index(name)] += value
        except ValueError:
            raise PredicateError(
                f"predicate {self.text!r}: unknown compartment {name!r}"
            ) from None

    def expr(self):
        # coeffs has one extra slot at the end for the N0 multiplier.
        coeffs = [0] * (len(self.names) + 1)
        const = 0
        sign = 1
        if self.peek() == "minus":
            self.take("minus")
            sign = -1
        elif self.peek() == "plus":
            self.take("plus")
        const = self.term(coeffs, const, sign)
        while self.peek() in ("plus", "minus"):
            sign = 1 if self.take(self.peek()) == "+" else -1
            const = self.term(coeffs, const, sign)
        return coeffs, const

    def comparison(self):
        lc, lconst = self.expr()
        op = self.take("op")
        rc, rconst = self.expr()
        coeffs = [a - b for a, b in zip(lc, rc)]
        const = lconst - rconst + coeffs[-1] * self.n0
        body = coeffs[:-1]
        test = {
            "=": lambda v: v == 0,
            "!=": lambda v: v != 0,
            "<=": lambda v: v <= 0,
            ">=": lambda v: v >= 0,
            "<": lambda v: v < 0,
            ">": lambda v: v > 0,
        }[op]
        return body, const, test

    def parse(self):
        comps = [self.comparison()]
        while self.peek() == "and":
            self.take("and")
            comps.append(self.comparison())
        self.take("end")
        return comps


def parse_predicate(
    text: str, names: tuple[str, ...], n0: int
) -> Callable[[State], bool]:
    """Compile a predicate string into a function on state vectors.

    Grammar: comparisons ``expr OP expr`` with ``OP`` one of
    ``= != <= >= < >``, expressions integer-coefficient linear combinations
    of compartment names and the constant ``N0`` (value ``n0``), joined by
    ``&&``.
    """
    comps = _LinParser(text, tuple(names), n0).parse()

    def predicate(state: State) -> bool:
        for coeffs, const, test in comps:
            v = const
            for c, x in zip(coeffs, state):
                if c:
                    v += c * x
            if not test(v):
                return False
        return True

    predicate.source = text  # type: ignore[attr-defined]
    return predicate
