"""PRISM-language export of counter machines and the standard property set.

A machine is rendered as a discrete-time Markov chain in the PRISM input
language: one module holding an integer location variable ``loc`` (control
states numbered in declaration order), one bounded integer variable per
counter, and one guarded command per (control state, guard) group, whose
alternatives are the machine's transitions. Probabilities appear as named
rational constants, never decimals, so the file commits to no rounding.
Machine rewards become a state-reward structure named ``time_step``; for a
compiled chain it pays 1 per simulated chain step before absorption.

Counter variables need explicit upper bounds. For a closed chain the total
population is invariant, so it bounds every counter; for an acyclic chain
each step multiplies the 1-norm by at most the number of compartments, and
growth can only happen along support edges, so population times ``k`` to the
longest-path depth is a certified bound. Anything else needs an explicit
user bound.

Counter names that collide with language keywords (the SIR compartments
``S``, ``I``, ``R`` all do) or with names this encoding reserves are
suffixed with underscores until free; the mangling depends only on the
preceding names, so compartments keep the same variable names whether
rendered from a chain or from a machine extending it.

Output is a pure function of the inputs: identical arguments yield
byte-identical text.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction

from .errors import DomainError, ModelError
from .model import BinomialChain, is_acyclic, is_closed, topo_order
from .scm import Scm, Transition, absorbing_guard_support

__all__ = [
    "export_prism",
    "emit_properties",
    "certified_counter_bound",
    "PROPERTY_KINDS",
    "PRISM_INT_MAX",
    "ERROR_LOCATION",
]

# Largest bound a PRISM integer variable can carry.
PRISM_INT_MAX = 2**31 - 1

# compile_bc_to_scm declares the error state second, so the location
# variable encodes it as 1; the PopInc property relies on this.
ERROR_LOCATION = 1

PROPERTY_KINDS = ("PopInc", "OS", "EoE")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# Probability constants are named p0, p1, ..; counters may not shadow them.
_PROB_NAME_RE = re.compile(r"p\d+\Z")

# Reserved words of the PRISM language, plus the location variable this
# encoding adds.
_RESERVED = frozenset(
    """A bool clock const ctmc C double dtmc E endinit endinvariant endmodule
    endrewards endsystem false formula filter func F global G init invariant
    I int label max mdp min module X nondeterministic Pmax Pmin P
    probabilistic prob pta rate rewards Rmax Rmin R S stochastic system true
    U W loc""".split()
)


def _prism_names(counters) -> tuple[str, ...]:
    """Collision-free PRISM identifiers for the counters, order-preserving.

    Each name must already be an identifier; reserved or clashing names get
    underscores appended. Earlier names never depend on later ones.
    """
    out: list[str] = []
    used: set[str] = set()
    for name in counters:
        if not _IDENT_RE.fullmatch(name):
            raise ModelError(f"counter {name!r} is not a PRISM identifier")
        new = name
        while new in _RESERVED or new in used or _PROB_NAME_RE.fullmatch(new):
            new = new + "_"
        out.append(new)
        used.add(new)
    return tuple(out)


def _dag_depth(chain: BinomialChain) -> int:
    """Length in edges of the longest path through the support DAG."""
    pi = topo_order(chain)
    order = sorted(range(chain.k), key=lambda i: pi[i])
    out: dict[int, list[int]] = {}
    for i, j in chain.support_pairs:
        out.setdefault(i, []).append(j)
    depth = [0] * chain.k
    for i in order:
        for j in out.get(i, ()):
            if depth[i] + 1 > depth[j]:
                depth[j] = depth[i] + 1
    return max(depth, default=0)


def certified_counter_bound(chain: BinomialChain) -> int:
    """A proven upper bound on every counter of the compiled machine.

    Closed chains preserve the total population, so it bounds each
    compartment forever, and the auxiliary counters only ever copy or count
    down compartment values. For an acyclic chain the potential argument
    runs over the support DAG: an individual drawn along several edges at
    once multiplies into at most ``k - 1`` copies, each strictly deeper, so
    the population never exceeds its initial value times ``k`` to the
    longest-path depth.

    Raises
    ------
    DomainError
        The chain is neither closed nor acyclic, so neither argument
        applies.
    """
    total = sum(chain.initial)
    if is_closed(chain):
        return total
    if is_acyclic(chain):
        return total * chain.k ** _dag_depth(chain)
    raise DomainError(
        "counter bounds cannot be certified: the chain is neither closed nor acyclic"
    )


def _resolve_bound(m: Scm, bound, chain) -> int:
    if bound is not None:
        if not isinstance(bound, int) or isinstance(bound, bool) or bound < 0:
            raise DomainError("bound must be a nonnegative integer")
        if bound > PRISM_INT_MAX:
            raise DomainError(
                f"bound {bound} exceeds the representable range {PRISM_INT_MAX}"
            )
        high = [v for v in m.c0 if v > bound]
        if high:
            raise DomainError(
                f"initial counter value {max(high)} exceeds the bound {bound}"
            )
        return bound
    if chain is None:
        raise DomainError(
            "counter bounds cannot be certified without the source chain; "
            "pass an explicit bound"
        )
    cert = certified_counter_bound(chain)
    if cert > PRISM_INT_MAX:
        raise DomainError(
            f"certified counter bound {cert} exceeds the representable "
            f"range {PRISM_INT_MAX}; pass an explicit bound"
        )
    return cert


def _rational_text(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _terms_text(pairs) -> str:
    return "+".join(name if a == 1 else f"{a}*{name}" for a, name in pairs)


def _guard_rows(guard, names) -> list[str]:
    """Each inequality rendered with positive terms on both sides.

    A row sum(a_j c_j) <= b is scaled to integers, then negative terms move
    to the right-hand side, so count-down guards read naturally
    (``l0>=1``, ``acc0<=S_``).
    """
    out = []
    for row, b in zip(guard.rows, guard.bounds):
        den = math.lcm(b.denominator, *(a.denominator for a in row))
        scaled = [int(a * den) for a in row]
        bb = int(b * den)
        pos = [(a, names[j]) for j, a in enumerate(scaled) if a > 0]
        neg = [(-a, names[j]) for j, a in enumerate(scaled) if a < 0]
        if not pos and not neg:
            out.append("true" if bb >= 0 else "false")
        elif not pos:
            out.append(f"{_terms_text(neg)}>={-bb}")
        else:
            rhs = _terms_text(neg)
            if bb > 0:
                rhs = f"{rhs}+{bb}" if rhs else str(bb)
            elif bb < 0:
                rhs = f"{rhs}-{-bb}"
            elif not rhs:
                rhs = "0"
            out.append(f"{_terms_text(pos)}<={rhs}")
    return out


def _expr_text(terms, shift: Fraction, names, where: str) -> str:
    out = ""
    for j, a in terms:
        if a.denominator != 1:
            raise ModelError(f"{where}: non-integer coefficient {a} on {names[j]}")
        ai = int(a)
        mag = abs(ai)
        term = names[j] if mag == 1 else f"{mag}*{names[j]}"
        if not out:
            out = term if ai > 0 else f"-{term}"
        else:
            out += ("+" if ai > 0 else "-") + term
    if shift.denominator != 1:
        raise ModelError(f"{where}: non-integer shift {shift}")
    si = int(shift)
    if si:
        if not out:
            out = str(si)
        else:
            out += f"+{si}" if si > 0 else f"-{-si}"
    return out or "0"


def _update_text(t: Transition, names, loc_target: int) -> str:
    parts = [f"(loc'={loc_target})"]
    where = f"update on {t.source}->{t.target}"
    for i, terms, r in t.update._active:
        parts.append(f"({names[i]}'={_expr_text(terms, r, names, where)})")
    return " & ".join(parts)


def _grouped_commands(m: Scm):
    """Transitions grouped by (source state, guard), first-appearance order."""
    groups: dict = {}
    order = []
    for t in m.transitions:
        key = (t.source, t.guard)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(t)
    return [(src, g, groups[(src, g)]) for src, g in order]


def export_prism(m: Scm, bound: int | None = None,
                 chain: BinomialChain | None = None) -> str:
    """Render a counter machine as a PRISM DTMC model file.

    Each (control state, guard) family of transitions becomes one guarded
    command whose alternatives carry the family's probabilities; families
    must therefore sum to one, which holds by construction for compiled
    machines (guards out of one state are mutually exclusive, so each family
    is the whole enabled set). A probability-one family renders as a single
    unprefixed update. Machine rewards become the ``time_step`` reward
    structure; no structure is emitted for a reward-free machine.

    Parameters
    ----------
    m : Scm
        The machine to render, typically from
        :func:`~bichain.scm.compile_bc_to_scm` and validated by
        :func:`~bichain.scm.validate_scm`.
    bound : int, optional
        Upper bound for every counter variable. When absent it is certified
        from ``chain``. An explicit bound overrides certification; a bound
        below the values the machine actually reaches makes the rendered
        model reject those runs, so under-capping is the caller's call.
    chain : BinomialChain, optional
        The chain the machine was compiled from; enables the certified
        default bound and is checked to match the machine's leading
        counters.

    Returns
    -------
    str
        The model text. Deterministic: equal inputs give byte-equal output.

    Raises
    ------
    DomainError
        No bound given and none certifiable, or a bound outside the
        representable integer range, or below an initial counter value.
    ModelError
        Counters that cannot be named in PRISM, a transition family whose
        probabilities do not sum to one, non-integer update arithmetic, or
        a ``chain`` the machine does not extend.
    """
    names = _prism_names(m.counters)
    if chain is not None:
        k = chain.k
        if tuple(m.counters[:k]) != chain.names or tuple(m.c0[:k]) != chain.initial:
            raise ModelError("machine counters do not extend the chain's compartments")
    limit = _resolve_bound(m, bound, chain)
    loc_of = {q: i for i, q in enumerate(m.states)}
    groups = _grouped_commands(m)

    const_of: dict[Fraction, str] = {}
    for src, guard, family in groups:
        total = sum((t.probability for t in family), Fraction(0))
        if total != 1:
            raise ModelError(
                f"transitions from {src!r} under one guard have probability "
                f"{total}; the exporter needs guard-partitioned families"
            )
        for t in family:
            if t.probability != 1 and t.probability not in const_of:
                const_of[t.probability] = f"p{len(const_of)}"

    lines = ["dtmc", ""]
    for i, q in enumerate(m.states):
        lines.append(f"// loc {i}: {q}")
    lines.append("")
    if const_of:
        for p, cname in const_of.items():
            lines.append(f"const double {cname} = {p.numerator}/{p.denominator};")
        lines.append("")
    lines.append("module bc")
    lines.append(f"  loc : [0..{len(m.states) - 1}] init {loc_of[m.q0]};")
    for cname, v in zip(names, m.c0):
        lines.append(f"  {cname} : [0..{limit}] init {v};")
    lines.append("")
    for src, guard, family in groups:
        gtxt = " & ".join([f"loc={loc_of[src]}"] + _guard_rows(guard, names))
        alts = []
        for t in family:
            utxt = _update_text(t, names, loc_of[t.target])
            alts.append(utxt if t.probability == 1 else
                        f"{const_of[t.probability]} : {utxt}")
        lines.append(f"  [] {gtxt} -> {' + '.join(alts)};")
    lines.append("endmodule")
    if m.rewards:
        lines.append("")
        lines.append('rewards "time_step"')
        for r in m.rewards:
            gtxt = " & ".join([f"loc={loc_of[r.state]}"] + _guard_rows(r.guard, names))
            lines.append(f"  {gtxt} : {_rational_text(r.value)};")
        lines.append("endrewards")
    return "\n".join(lines) + "\n"


def _depletion_sum(chain: BinomialChain, names, target) -> str:
    if target is None:
        idxs = absorbing_guard_support(chain)
        if not idxs:
            raise DomainError(
                "the chain has an empty support; pass the target compartments explicitly"
            )
    else:
        idxs = tuple(sorted({chain.index_of(n) for n in target}))
        if not idxs:
            raise DomainError("the target compartment list is empty")
    return "+".join(names[l] for l in idxs)


def emit_properties(chain: BinomialChain, kinds=PROPERTY_KINDS,
                    target=None) -> str:
    """Property-file text for the standard queries against an exported chain.

    Three kinds are understood, all phrased over the variable names the
    export gives the chain's compartments:

    ``PopInc``
        Probability of avoiding the error location (entered exactly when a
        step would change the population) until the depletion predicate
        holds. On a closed chain the error location is unreachable and the
        value is the probability of termination.
    ``OS``
        Probability that the source of the first transfer never drops below
        its initial count until its target soaks up all of it in one shot.
    ``EoE``
        Expected accumulated ``time_step`` reward until depletion: the
        expected number of chain steps before nothing can move any more.

    The depletion predicate sums the compartments that keep the chain
    alive (every coefficient support plus sources of constant-rate
    transfers); ``target`` overrides them with explicit compartment names.

    Parameters
    ----------
    chain : BinomialChain
        The chain the machine was compiled from.
    kinds : str or iterable of str
        Property kinds to emit, in order; one line each.
    target : iterable of str, optional
        Compartment names replacing the derived depletion set in ``PopInc``
        and ``EoE``.

    Raises
    ------
    DomainError
        Unknown kind, or no depletion predicate exists (empty support and
        no explicit target), or ``OS`` on a chain without transfers.
    ModelError
        ``target`` names an unknown compartment.
    """
    if isinstance(kinds, str):
        kinds = (kinds,)
    names = _prism_names(chain.names)
    lines = []
    for kind in kinds:
        if kind == "PopInc":
            stop = _depletion_sum(chain, names, target)
            lines.append(f'"PopInc": P=? [ (loc!={ERROR_LOCATION}) U ({stop}=0) ];')
        elif kind == "OS":
            if not chain.support_pairs:
                raise DomainError("the one-shot query needs at least one transfer")
            i, j = chain.support_pairs[0]
            si, dj = chain.initial[i], chain.initial[j]
            lines.append(
                f'"OS": P=? [ ({names[i]}>={si}) U ({names[j]}={si + dj}) ];')
        elif kind == "EoE":
            stop = _depletion_sum(chain, names, target)
            lines.append(f'"EoE": R{{"time_step"}}=? [ F ({stop}=0) ];')
        else:
            raise DomainError(f"unknown property kind {kind!r}")
    return "\n".join(lines) + "\n"
