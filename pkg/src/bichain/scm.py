"""Stochastic counter machines: IR, gadgets, compilation, interpreter.

A counter machine here is a finite control graph over named nonnegative
integer counters. Transitions carry a linear guard (A c <= b), an affine
update (U c + r), and a rational probability; rewards are earned per visit
to a control state while a guard holds. The machine classes built by this
module simulate a binomial chain: one full tour of the main cycle performs
one chain step, with transfers accumulated in auxiliary counters and applied
in a single update on the return-to-main transition.

Clamping is the one piece of chain semantics a linear update cannot express:
when accumulated outflows of a compartment exceed its stock, the compiled
machine moves to a dedicated error state instead. Analyses that condition on
avoiding the error state (or models whose structure makes clamping
impossible, such as any chain with at most one outflow per compartment)
are unaffected.

The interpreter doubles as the verification oracle: exhaustive first-hit
distributions, budgeted validation of determinism and probability closure,
and seeded simulation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DomainError, InvariantError, ModelError, ResourceCapError
from .model import BinomialChain, is_acyclic

_ZERO = Fraction(0)
_ONE = Fraction(1)

DEFAULT_VALIDATION_BUDGET = 20_000
DEFAULT_DISTRIBUTION_BUDGET = 1_000_000
DEFAULT_SIMULATION_STEPS = 1_000_000


def _as_fraction_row(row, width: int, what: str) -> tuple[Fraction, ...]:
    got = tuple(Fraction(x) for x in row)
    if len(got) != width:
        raise ModelError(f"{what}: expected {width} entries, got {len(got)}")
    return got


@dataclass(frozen=True)
class Guard:
    """Conjunction of linear inequalities A c <= b over the counters."""

    rows: tuple[tuple[Fraction, ...], ...]
    bounds: tuple[Fraction, ...]
    _packed: tuple = field(init=False, repr=False, compare=False,
                           default=())

    def __post_init__(self) -> None:
        if len(self.rows) != len(self.bounds):
            raise ModelError("guard: one bound per row required")
        packed = tuple(
            (tuple((j, a) for j, a in enumerate(row) if a), b)
            for row, b in zip(self.rows, self.bounds)
        )
        object.__setattr__(self, "_packed", packed)

    @staticmethod
    def true() -> "Guard":
        return Guard(rows=(), bounds=())

    @staticmethod
    def counter_ge(n: int, idx: int, const) -> "Guard":
        row = [_ZERO] * n
        row[idx] = Fraction(-1)
        return Guard(rows=(tuple(row),), bounds=(Fraction(-const),))

    @staticmethod
    def counter_le(n: int, idx: int, const) -> "Guard":
        row = [_ZERO] * n
        row[idx] = _ONE
        return Guard(rows=(tuple(row),), bounds=(Fraction(const),))

    @staticmethod
    def sum_ge(n: int, idxs, const) -> "Guard":
        row = [_ZERO] * n
        for i in idxs:
            row[i] = Fraction(-1)
        return Guard(rows=(tuple(row),), bounds=(Fraction(-const),))

    def conjoin(self, other: "Guard") -> "Guard":
        return Guard(rows=self.rows + other.rows,
                     bounds=self.bounds + other.bounds)

    def satisfied(self, c) -> bool:
        return all(
            sum(a * c[j] for j, a in terms) <= b
            for terms, b in self._packed
        )

    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0


@dataclass(frozen=True)
class Update:
    """Affine counter update c -> U c + r."""

    matrix: tuple[tuple[Fraction, ...], ...]
    shift: tuple[Fraction, ...]
    _active: tuple = field(init=False, repr=False, compare=False,
                           default=())

    def __post_init__(self) -> None:
        # Rows that differ from the identity, in sparse form; identity rows
        # copy their counter through untouched.
        active = []
        for i, (row, r) in enumerate(zip(self.matrix, self.shift)):
            if r == 0 and all(
                    a == (1 if j == i else 0) for j, a in enumerate(row)):
                continue
            terms = tuple((j, a) for j, a in enumerate(row) if a)
            active.append((i, terms, r))
        object.__setattr__(self, "_active", tuple(active))

    @staticmethod
    def identity(n: int) -> "Update":
        return Update(
            matrix=tuple(
                tuple(_ONE if i == j else _ZERO for j in range(n))
                for i in range(n)
            ),
            shift=(_ZERO,) * n,
        )

    def assign_copy(self, dst: int, src: int) -> "Update":
        """Replace row dst so the new value of dst is the old value of src."""
        rows = list(self.matrix)
        rows[dst] = tuple(
            _ONE if j == src else _ZERO for j in range(len(self.shift)))
        shift = list(self.shift)
        shift[dst] = _ZERO
        return Update(matrix=tuple(rows), shift=tuple(shift))

    def assign_zero(self, dst: int) -> "Update":
        rows = list(self.matrix)
        rows[dst] = (_ZERO,) * len(self.shift)
        shift = list(self.shift)
        shift[dst] = _ZERO
        return Update(matrix=tuple(rows), shift=tuple(shift))

    def add_const(self, dst: int, delta) -> "Update":
        shift = list(self.shift)
        shift[dst] = shift[dst] + Fraction(delta)
        return Update(matrix=self.matrix, shift=tuple(shift))

    def add_row(self, dst: int, coeffs: dict) -> "Update":
        """Add coeff * counter terms onto row dst."""
        rows = list(self.matrix)
        row = list(rows[dst])
        for src, coeff in coeffs.items():
            row[src] = row[src] + Fraction(coeff)
        rows[dst] = tuple(row)
        return Update(matrix=tuple(rows), shift=self.shift)

    def apply(self, c: tuple[int, ...]) -> tuple[int, ...]:
        """Successor valuation; interpretation-time nonnegativity check."""
        out = list(c)
        for i, terms, r in self._active:
            v = sum(a * c[j] for j, a in terms) + r
            if v.denominator != 1 or v < 0:
                raise InvariantError(
                    f"update produced non-counter value {v} from {c}")
            out[i] = int(v)
        return tuple(out)

    def width(self) -> int:
        return len(self.shift)


@dataclass(frozen=True)
class Transition:
    source: str
    guard: Guard
    update: Update
    target: str
    probability: Fraction


@dataclass(frozen=True)
class Reward:
    """Earned once per visit to ``state`` while the guard holds.

    The control-state pin is what lets a reward fire exactly once per main
    cycle; a guard alone sees only counters and cannot tell the main state
    from the middle of a count-down loop.
    """

    state: str
    guard: Guard
    value: Fraction


@dataclass(frozen=True)
class Scm:
    """A stochastic counter machine.

    Determinism and probability closure are semantic invariants checked on
    explored configurations by :func:`validate_scm`, not at construction.
    """

    states: tuple[str, ...]
    q0: str
    c0: tuple[int, ...]
    counters: tuple[str, ...]
    transitions: tuple[Transition, ...]
    rewards: tuple[Reward, ...] = ()
    _by_source: dict = field(init=False, repr=False, compare=False,
                             default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.counters)
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate control-state labels")
        if len(set(self.counters)) != n:
            raise ModelError("duplicate counter names")
        if self.q0 not in self.states:
            raise ModelError(f"initial state {self.q0!r} is not declared")
        if len(self.c0) != n:
            raise ModelError("initial valuation width mismatch")
        if any(not isinstance(v, int) or v < 0 for v in self.c0):
            raise ModelError("initial valuation must be nonnegative integers")
        for t in self.transitions:
            if t.source not in self.states or t.target not in self.states:
                raise ModelError(
                    f"transition {t.source!r}->{t.target!r} uses undeclared states")
            if t.guard.rows and t.guard.width() != n:
                raise ModelError("guard width mismatch")
            if t.update.width() != n:
                raise ModelError("update width mismatch")
            if not 0 < t.probability <= 1:
                raise ModelError("transition probability must lie in (0, 1]")
        for r in self.rewards:
            if r.state not in self.states:
                raise ModelError(f"reward pins undeclared state {r.state!r}")
            if r.guard.rows and r.guard.width() != n:
                raise ModelError("reward guard width mismatch")
        for t in self.transitions:
            self._by_source.setdefault(t.source, []).append(t)

    def counter_index(self, name: str) -> int:
        try:
            return self.counters.index(name)
        except ValueError:
            raise ModelError(f"unknown counter {name!r}") from None

    @property
    def initial_configuration(self) -> tuple[str, tuple[int, ...]]:
        return (self.q0, self.c0)


def enabled(m: Scm, config) -> list[Transition]:
    q, c = config
    return [t for t in m._by_source.get(q, ())
            if t.guard.satisfied(c)]


def step_distribution(m: Scm, config) -> list[tuple[tuple, Fraction]]:
    """Successor configurations of one micro-step with probabilities."""
    return [((t.target, t.update.apply(config[1])), t.probability)
            for t in enabled(m, config)]


def reward_at(m: Scm, config) -> Fraction:
    q, c = config
    return sum(
        (r.value for r in m.rewards if r.state == q and r.guard.satisfied(c)),
        _ZERO,
    )


@dataclass(frozen=True)
class ValidationReport:
    explored: int
    complete: bool
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.complete and not self.violations


def validate_scm(m: Scm, budget: int = DEFAULT_VALIDATION_BUDGET) -> ValidationReport:
    """Explore configurations breadth-first from the initial one, checking
    determinism and probability closure at each; stops at the budget and
    reports partially in that case."""
    seen = {m.initial_configuration}
    frontier = [m.initial_configuration]
    violations: list[str] = []
    explored = 0
    complete = True
    while explored < len(frontier):
        if explored >= budget:
            complete = False
            break
        config = frontier[explored]
        explored += 1
        acts = enabled(m, config)
        total = sum((t.probability for t in acts), _ZERO)
        if total != 1:
            violations.append(
                f"closure: probabilities sum to {total} at {config}")
        succs: dict[tuple, Transition] = {}
        for t in acts:
            nxt = (t.target, t.update.apply(config[1]))
            if nxt in succs and succs[nxt] is not t:
                violations.append(
                    f"determinism: two transitions reach {nxt} from {config}")
            succs[nxt] = t
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return ValidationReport(explored=explored, complete=complete,
                            violations=tuple(violations))


@dataclass(frozen=True)
class Distribution:
    """First-hit distribution over stop configurations.

    ``deficit`` is the probability mass trapped in sink configurations that
    can never reach the stop set (a probability-one self-loop outside it).
    """

    masses: dict
    deficit: Fraction

    def total(self) -> Fraction:
        return sum(self.masses.values(), _ZERO) + self.deficit

    def on_counters(self) -> dict:
        """Project configuration masses onto counter valuations."""
        out: dict = {}
        for (q, c), p in self.masses.items():
            out[c] = out.get(c, _ZERO) + p
        return out


def scm_distribution(m: Scm, config, stop_states,
                     budget: int = DEFAULT_DISTRIBUTION_BUDGET) -> Distribution:
    """Exact first-hit distribution over the stop control states.

    The source configuration itself never counts as a hit, so stopping at
    the source's own control state measures re-entry. Raises
    `ResourceCapError` when the budget runs out with live mass left.
    """
    stop = frozenset(stop_states)
    unknown = stop - set(m.states)
    if unknown:
        raise ModelError(f"stop set names undeclared states {sorted(unknown)}")
    masses: dict = {}
    deficit = _ZERO
    frontier: dict = {(config[0], tuple(config[1])): _ONE}
    expansions = 0
    while frontier:
        if expansions >= budget:
            raise ResourceCapError(
                f"distribution budget {budget} exhausted with "
                f"{len(frontier)} live configurations")
        nxt: dict = {}
        for cfg, mass in frontier.items():
            expansions += 1
            moves = step_distribution(m, cfg)
            if not moves:
                raise InvariantError(f"no transition enabled at {cfg}")
            pure_self = len(moves) == 1 and moves[0][0] == cfg
            for succ, p in moves:
                share = mass * p
                if succ[0] in stop:
                    masses[succ] = masses.get(succ, _ZERO) + share
                elif pure_self:
                    # Probability-one self-loop outside the stop set: sink.
                    deficit += share
                else:
                    nxt[succ] = nxt.get(succ, _ZERO) + share
        frontier = nxt
    return Distribution(masses=masses, deficit=deficit)


@dataclass(frozen=True)
class Trace:
    configurations: tuple
    reward: Fraction
    stopped: bool

    @property
    def steps(self) -> int:
        return len(self.configurations) - 1


def scm_simulate(m: Scm, seed, max_steps: int = DEFAULT_SIMULATION_STEPS,
                 stop=None) -> Trace:
    """Simulate micro-steps from the initial configuration.

    ``stop`` is a set of control states or a predicate over configurations,
    checked after each step (never on the initial configuration). Rewards
    accumulate per visited configuration, the final one included. Raises
    `ResourceCapError` if the stop condition is not met in ``max_steps``.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    if stop is None or callable(stop):
        stopping = stop
    else:
        states = frozenset(stop)

        def stopping(cfg):
            return cfg[0] in states

    config = m.initial_configuration
    trace = [config]
    total = reward_at(m, config)
    for _ in range(max_steps):
        moves = step_distribution(m, config)
        if not moves:
            raise InvariantError(f"no transition enabled at {config}")
        x = Fraction(rng.random())
        acc = _ZERO
        chosen = moves[-1][0]
        for succ, p in moves:
            acc += p
            if x < acc:
                chosen = succ
                break
        config = chosen
        trace.append(config)
        total += reward_at(m, config)
        if stopping is not None and stopping(config):
            return Trace(configurations=tuple(trace), reward=total,
                         stopped=True)
    if stopping is None:
        return Trace(configurations=tuple(trace), reward=total, stopped=False)
    raise ResourceCapError(f"stop condition not reached in {max_steps} steps")


def build_binomial_gadget(p, counters=("n", "result", "work")) -> Scm:
    """Three-state machine putting a Binomial(n, p) draw into ``result``.

    From q0 the count is copied into the work counter and the result is
    zeroed; q1 runs one Bernoulli trial per work unit; q2 is reached when
    the work counter is empty, with the source count intact.
    """
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise DomainError("p must lie in [0, 1]")
    if len(counters) != 3:
        raise ModelError("binomial gadget uses exactly three counters")
    n = 3
    ident = Update.identity(n)
    ts = [
        Transition("q0", Guard.true(),
                   ident.assign_copy(2, 0).assign_zero(1), "q1", _ONE),
    ]
    busy = Guard.counter_ge(n, 2, 1)
    if p > 0:
        ts.append(Transition("q1", busy,
                             ident.add_const(1, 1).add_const(2, -1),
                             "q1", p))
    if p < 1:
        ts.append(Transition("q1", busy, ident.add_const(2, -1),
                             "q1", 1 - p))
    ts.append(Transition("q1", Guard.counter_le(n, 2, 0), ident, "q2", _ONE))
    ts.append(Transition("q2", Guard.true(), ident, "q2", _ONE))
    return Scm(states=("q0", "q1", "q2"), q0="q0", c0=(0, 0, 0),
               counters=tuple(counters), transitions=tuple(ts))


def build_bernoulli_gadget(ps, counters=None) -> Scm:
    """Count-down chain realizing a parametric Bernoulli trial.

    ``ps = (p0, p1, .., pk)``: the trial survives an initial Bernoulli with
    probability p0 and then one Bernoulli per unit of the l-th counter with
    probability pl, counting the counters down destructively. Terminal qy is
    reached iff every trial survives, so with probability
    ``p0 * prod_l pl**cl``; any failure jumps to qx and increments the last
    counter.
    """
    ps = tuple(Fraction(p) for p in ps)
    if not ps:
        raise ModelError("need at least the stage-free probability p0")
    if any(not 0 <= p <= 1 for p in ps):
        raise DomainError("each probability must lie in [0, 1]")
    k = len(ps) - 1
    if counters is None:
        counters = tuple(f"c{l}" for l in range(1, k + 1)) + ("result",)
    if len(counters) != k + 1:
        raise ModelError(f"expected {k + 1} counters")
    n = k + 1
    res = n - 1
    ident = Update.identity(n)
    fail = ident.add_const(res, 1)
    stages = tuple(f"s{l}" for l in range(1, k + 1))
    after = stages + ("qy",)

    ts = []
    p0 = ps[0]
    if p0 > 0:
        ts.append(Transition("q0", Guard.true(), ident, after[0], p0))
    if p0 < 1:
        ts.append(Transition("q0", Guard.true(), fail, "qx", 1 - p0))
    for l in range(1, k + 1):
        state = stages[l - 1]
        pl = ps[l]
        cidx = l - 1
        busy = Guard.counter_ge(n, cidx, 1)
        if pl > 0:
            ts.append(Transition(state, busy, ident.add_const(cidx, -1),
                                 state, pl))
        if pl < 1:
            ts.append(Transition(state, busy, fail, "qx", 1 - pl))
        ts.append(Transition(state, Guard.counter_le(n, cidx, 0), ident,
                             after[l], _ONE))
    for terminal in ("qx", "qy"):
        ts.append(Transition(terminal, Guard.true(), ident, terminal, _ONE))
    return Scm(states=("q0",) + stages + ("qx", "qy"), q0="q0",
               c0=(0,) * n, counters=tuple(counters), transitions=tuple(ts))


MAIN_STATE = "main"
ERROR_STATE = "err"


def _fresh(name: str, taken: set[str]) -> str:
    while name in taken:
        name = "_" + name
    taken.add(name)
    return name


def absorbing_guard_support(chain: BinomialChain) -> tuple[int, ...]:
    """Compartments whose joint emptiness stops the chain: every coefficient
    support plus the source of every constant-offset transfer.

    When they are all zero, each transfer either has a zero rate or an empty
    source, so no step moves anything. (The converse can fail for a transfer
    whose rate outlives its source compartment; the epidemic-style models
    this compiler targets do not do that.)
    """
    out: set[int] = set()
    for (i, j), fn in sorted(chain.transfers.items()):
        out.update(fn.coeff_support())
        if fn.offset > 0:
            out.add(i)
    return tuple(sorted(out))


def compile_bc_to_scm(chain: BinomialChain) -> Scm:
    """Compile an acyclic chain into a counter machine.

    One main-cycle tour performs one chain step: each transfer pair runs a
    count-down loop over its source compartment, accumulating fired
    transfers in a per-pair auxiliary counter; the single return-to-main
    transition applies every accumulated transfer at once and zeroes the
    auxiliaries. A chain state corresponds to the main control state with
    matching compartment counters and zeroed auxiliaries.

    Machine size depends only on the transfer structure, never on
    populations. Transfers whose success probability depends on counters
    get one trial stage per coefficient compartment; constant-probability
    transfers run a plain binomial count-down.
    """
    if not is_acyclic(chain):
        raise ModelError("compilation needs an acyclic chain")
    if chain.exp_table is None:
        raise ModelError("compilation needs an exponential table; "
                         "synthesize one first")
    table = chain.exp_table
    pairs = chain.support_pairs
    k = chain.k

    taken = set(chain.names)
    counters = list(chain.names)
    acc = []
    for p, _ in enumerate(pairs):
        name = _fresh(f"acc{p}", taken)
        acc.append(len(counters))
        counters.append(name)
    l0 = len(counters)
    counters.append(_fresh("l0", taken))
    l1 = len(counters)
    counters.append(_fresh("l1", taken))
    n = len(counters)

    ident = Update.identity(n)
    states = [MAIN_STATE, ERROR_STATE]
    ts: list[Transition] = []

    # Entry transition of pair p: copy the source count into the outer loop
    # counter. Pair 0 enters straight from main; later pairs get an init
    # state so the previous pair's exit stays update-free.
    entries: list[str] = []
    exits: list[tuple[str, Guard]] = []
    for p, (i, j) in enumerate(pairs):
        fn = chain.transfers[(i, j)]
        coeff_sup = fn.coeff_support()
        p0 = table.value(i, j, None)
        loop = f"loop{p}"
        states.append(loop)
        setup = ident.assign_copy(l0, i)
        if p == 0:
            ts.append(Transition(MAIN_STATE, Guard.true(), setup, loop, _ONE))
        else:
            init = f"init{p}"
            states.append(init)
            entries.append(init)
            ts.append(Transition(init, Guard.true(), setup, loop, _ONE))
        busy = Guard.counter_ge(n, l0, 1)
        done = Guard.counter_le(n, l0, 0)
        fire = ident.add_const(acc[p], 1).add_const(l0, -1)
        if not coeff_sup:
            # Constant success probability: plain binomial count-down.
            if p0 > 0:
                ts.append(Transition(loop, busy, ident.add_const(l0, -1),
                                     loop, p0))
            if p0 < 1:
                ts.append(Transition(loop, busy, fire, loop, 1 - p0))
        else:
            # Per-individual parametric trial over the coefficient
            # compartments; stage l counts down a copy of compartment l.
            stage_names = [f"trial{p}_{l}" for l in coeff_sup]
            states.extend(stage_names)
            first_setup = ident.assign_copy(l1, coeff_sup[0])
            if p0 > 0:
                ts.append(Transition(loop, busy, first_setup,
                                     stage_names[0], p0))
            if p0 < 1:
                ts.append(Transition(loop, busy, fire, loop, 1 - p0))
            for s, l in enumerate(coeff_sup):
                state = stage_names[s]
                pl = table.value(i, j, l)
                sbusy = Guard.counter_ge(n, l1, 1)
                sdone = Guard.counter_le(n, l1, 0)
                if pl > 0:
                    ts.append(Transition(state, sbusy,
                                         ident.add_const(l1, -1), state, pl))
                if pl < 1:
                    ts.append(Transition(state, sbusy, fire, loop, 1 - pl))
                if s + 1 < len(coeff_sup):
                    survive = ident.assign_copy(l1, coeff_sup[s + 1])
                    ts.append(Transition(state, sdone, survive,
                                         stage_names[s + 1], _ONE))
                else:
                    ts.append(Transition(state, sdone,
                                         ident.add_const(l0, -1), loop, _ONE))
        exits.append((loop, done))

    if pairs:
        # Chain the pair phases together.
        for p in range(len(pairs) - 1):
            src, g = exits[p]
            ts.append(Transition(src, g, ident, entries[p], _ONE))
        # The last exit applies every accumulated transfer and zeroes the
        # auxiliaries; clamping would need a max(0, .) update, so valuations
        # that would go negative move to the error state instead.
        apply = ident
        for p, (i, j) in enumerate(pairs):
            apply = apply.add_row(i, {acc[p]: -1}).add_row(j, {acc[p]: 1})
        for p, _ in enumerate(pairs):
            apply = apply.assign_zero(acc[p])
        apply = apply.assign_zero(l0).assign_zero(l1)
        guarded = sorted({i for i, _ in pairs})
        safe_rows = []
        safe_bounds = []
        for v in guarded:
            row = [_ZERO] * n
            row[v] = Fraction(-1)
            for p, (i, j) in enumerate(pairs):
                if i == v:
                    row[acc[p]] += 1
                if j == v:
                    row[acc[p]] -= 1
            safe_rows.append(tuple(row))
            safe_bounds.append(_ZERO)
        src, g = exits[-1]
        ts.append(Transition(src, g.conjoin(
            Guard(rows=tuple(safe_rows), bounds=tuple(safe_bounds))),
            apply, MAIN_STATE, _ONE))
        # First-violation split: exactly one error transition enabled for
        # any valuation the safe guard rejects.
        for idx, v in enumerate(guarded):
            neg_row = tuple(-a for a in safe_rows[idx])
            bad = Guard(rows=(neg_row,), bounds=(Fraction(-1),))
            prior = Guard(rows=tuple(safe_rows[:idx]),
                          bounds=tuple(safe_bounds[:idx]))
            ts.append(Transition(src, g.conjoin(bad).conjoin(prior),
                                 ident, ERROR_STATE, _ONE))
    else:
        ts.append(Transition(MAIN_STATE, Guard.true(), ident,
                             MAIN_STATE, _ONE))
    ts.append(Transition(ERROR_STATE, Guard.true(), ident, ERROR_STATE, _ONE))

    support = absorbing_guard_support(chain)
    rewards = ()
    if support:
        rewards = (Reward(state=MAIN_STATE,
                          guard=Guard.sum_ge(n, support, 1),
                          value=_ONE),)
    c0 = tuple(chain.initial) + (0,) * (n - k)
    return Scm(states=tuple(states), q0=MAIN_STATE, c0=c0,
               counters=tuple(counters), transitions=tuple(ts),
               rewards=rewards)


def chain_configuration(m: Scm, chain: BinomialChain, state) -> tuple:
    """The machine configuration representing a chain state: main control
    state, matching compartment counters, zeroed auxiliaries."""
    state = tuple(state)
    if len(state) != chain.k:
        raise DomainError("state width does not match the chain")
    return (MAIN_STATE, state + (0,) * (len(m.counters) - chain.k))


def main_cycle_distribution(m: Scm, chain: BinomialChain, state,
                            budget: int = DEFAULT_DISTRIBUTION_BUDGET) -> Distribution:
    """First-hit distribution over main-state re-entry from a chain state;
    the counter projection restricted to compartments is one chain step.
    Mass in the deficit is exactly the probability of clamping."""
    return scm_distribution(m, chain_configuration(m, chain, state),
                            (MAIN_STATE,), budget=budget)


def measure_dilation(m: Scm, chain: BinomialChain, state,
                     budget: int = DEFAULT_DISTRIBUTION_BUDGET) -> int:
    """Largest number of micro-steps one main cycle can take from a chain
    state; the per-model step dilation is the maximum over its states."""
    stop = frozenset((MAIN_STATE, ERROR_STATE))
    frontier = {chain_configuration(m, chain, state)}
    depth = 0
    expansions = 0
    while frontier:
        nxt = set()
        for cfg in frontier:
            expansions += 1
            if expansions > budget:
                raise ResourceCapError(f"dilation budget {budget} exhausted")
            for succ, _ in step_distribution(m, cfg):
                if succ[0] not in stop:
                    nxt.add(succ)
        depth += 1
        frontier = nxt
    return depth


def dump_scm(m: Scm) -> str:
    """Deterministic text rendering for golden comparisons: states
    alphabetical, transitions sorted by (source, target, probability)."""
    out = []
    out.append("counters " + " ".join(m.counters))
    out.append("init " + " ".join(str(v) for v in m.c0))
    for q in sorted(m.states):
        mark = " *" if q == m.q0 else ""
        out.append(f"state {q}{mark}")
    for t in sorted(m.transitions,
                    key=lambda t: (t.source, t.target, t.probability)):
        g = _render_guard(t.guard, m.counters)
        u = _render_update(t.update, m.counters)
        p = _render_fraction(t.probability)
        out.append(f"trans {t.source} -> {t.target} @ {p} [{g}] {{{u}}}")
    for r in sorted(m.rewards, key=lambda r: (r.state, r.value)):
        g = _render_guard(r.guard, m.counters)
        out.append(f"reward {r.state} [{g}] {_render_fraction(r.value)}")
    return "\n".join(out) + "\n"


def _render_fraction(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _render_linear(coeffs, names) -> str:
    parts = []
    for a, name in zip(coeffs, names):
        if a == 0:
            continue
        if a == 1:
            parts.append(f"+ {name}")
        elif a == -1:
            parts.append(f"- {name}")
        elif a > 0:
            parts.append(f"+ {_render_fraction(a)}*{name}")
        else:
            parts.append(f"- {_render_fraction(-a)}*{name}")
    if not parts:
        return "0"
    head = parts[0]
    head = head[2:] if head.startswith("+ ") else "-" + head[2:]
    return " ".join([head] + parts[1:])


def _render_guard(g: Guard, names) -> str:
    if not g.rows:
        return "true"
    return " & ".join(
        f"{_render_linear(row, names)} <= {_render_fraction(b)}"
        for row, b in zip(g.rows, g.bounds)
    )


def _render_update(u: Update, names) -> str:
    n = len(names)
    parts = []
    for i in range(n):
        row = u.matrix[i]
        r = u.shift[i]
        identity = r == 0 and all(
            row[j] == (1 if j == i else 0) for j in range(n))
        if identity:
            continue
        expr = _render_linear(row, names)
        if r != 0:
            sign = "+" if r > 0 else "-"
            expr = f"{expr} {sign} {_render_fraction(abs(r))}"
        parts.append(f"{names[i]}' = {expr}")
    return "; ".join(parts) if parts else "id"
