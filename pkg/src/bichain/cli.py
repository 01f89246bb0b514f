"""Command-line front end.

Ties the library together behind six subcommands:

``validate``
    Parse a model file and report its structural classification.
``eoe``
    Expected number of steps until the chain cannot move any more.
``prob``
    Until-probability for safe/target predicates over compartment counts.
``simulate``
    Trajectory sampling: mean steps, confidence interval, final-state
    histogram.
``export``
    Model-checker artifacts: a DTMC module file plus a property file.
``approx-exp``
    Certified rational approximation of ``exp(-a/b)``.

Every command is deterministic given its flags and seed. Exit codes: 0 on
success, 2 for input errors (bad files, predicates, flags), 3 when a
resource cap stops the computation, and 4 when an internal invariant check
fails. Output is human-oriented text by default; ``--machine-output``
switches to ``key=value`` lines with rationals exact and doubles at 17
significant digits.
"""

import argparse
import random
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from . import prism
from .errors import (
    BichainError,
    DomainError,
    InvariantError,
    ResourceCapError,
)
from .model import (
    format_rational,
    is_acyclic,
    is_closed,
    is_simple,
    parse_model,
    topo_order,
)
from .reach import (
    DEFAULT_STATE_CAP,
    DEFAULT_TRAJECTORY_CAP,
    build_reachable,
    expected_hitting_times,
    parse_predicate,
    until_probability,
)
from .scm import compile_bc_to_scm
from .semantics import (
    DEFAULT_ERROR_EXPONENT,
    DEFAULT_WITNESS_CAP,
    DOUBLE,
    NumericBackend,
    ensure_exp_table,
    sample_transition,
    success_prob,
    taylor_exp_neg,
)
from .sir import is_sir_shape, sir_expected_eoe, sir_from_chain

__all__ = ["RunConfig", "main"]


@dataclass(frozen=True)
class RunConfig:
    """Validated run-time knobs shared by the computing subcommands."""

    engine: str = "auto"
    backend_mode: str = "rational"
    error_exponent: int = DEFAULT_ERROR_EXPONENT
    state_cap: int = DEFAULT_STATE_CAP
    witness_cap: int = DEFAULT_WITNESS_CAP
    seed: int = 0
    runs: int = 1000
    out_model: str | None = None
    out_props: str | None = None

    def __post_init__(self) -> None:
        if self.engine not in ("auto", "sir", "general"):
            raise DomainError(f"unknown engine {self.engine!r}")
        if self.error_exponent < 1:
            raise DomainError("error exponent must be >= 1")
        if self.state_cap < 1 or self.witness_cap < 1:
            raise DomainError("caps must be positive")
        if self.runs < 1:
            raise DomainError("run count must be positive")

    @property
    def backend(self) -> NumericBackend:
        if self.backend_mode == "double":
            return DOUBLE
        return NumericBackend("rational", self.error_exponent)


def _config(args: argparse.Namespace) -> RunConfig:
    fields = {
        name: getattr(args, name)
        for name in (
            "engine", "backend_mode", "error_exponent", "state_cap",
            "witness_cap", "seed", "runs", "out_model", "out_props",
        )
        if hasattr(args, name)
    }
    return RunConfig(**fields)


class _Printer:
    """One report writer for both output styles.

    Machine style is one ``key=value`` line per field; human style is
    ``key: value`` with optional indentation for table rows.
    """

    def __init__(self, machine: bool):
        self.machine = machine

    def field(self, key: str, value, human_key: str | None = None) -> None:
        if self.machine:
            print(f"{key}={value}")
        else:
            print(f"{human_key or key}: {value}")

    def line(self, text: str) -> None:
        if not self.machine:
            print(text)

    def row(self, key: str, value, human_key: str | None = None) -> None:
        if self.machine:
            print(f"{key}={value}")
        else:
            print(f"  {human_key or key}: {value}")


def _number(value) -> str:
    """Exact text for rationals, 17 significant digits for doubles."""
    if isinstance(value, Fraction):
        return format_rational(value)
    return "%.17g" % value


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DomainError(f"cannot read model file: {e}") from None
    return parse_model(text)


def _yn(flag: bool) -> str:
    return "yes" if flag else "no"


def cmd_validate(args: argparse.Namespace) -> None:
    chain = _load(args.model)
    out = _Printer(args.machine_output)
    names = chain.names
    sep = "," if out.machine else ", "
    out.field("model", args.model)
    out.field("compartments", sep.join(names))
    out.field("population", sum(chain.initial))
    simple, closed, acyclic = is_simple(chain), is_closed(chain), is_acyclic(chain)
    if out.machine:
        out.field("closed", _yn(closed))
        out.field("acyclic", _yn(acyclic))
        out.field("simple", _yn(simple))
    else:
        print(f"closed: {_yn(closed)}, acyclic: {_yn(acyclic)}, "
              f"simple: {_yn(simple)}")
    edges = sep.join(f"{names[i]}->{names[j]}" for i, j in chain.support_pairs)
    out.field("support", edges or "(none)", "support graph")
    if acyclic:
        pi = topo_order(chain)
        order = sorted(range(chain.k), key=lambda c: pi[c])
        out.field("topo", sep.join(names[c] for c in order), "topo order")


def cmd_eoe(args: argparse.Namespace) -> None:
    cfg = _config(args)
    chain = _load(args.model)
    out = _Printer(args.machine_output)
    engine = cfg.engine
    if engine == "auto":
        engine = "sir" if is_sir_shape(chain) else "general"
    if engine == "sir":
        times = sir_expected_eoe(sir_from_chain(chain, cfg.backend), cfg.backend)
    else:
        ec = build_reachable(chain, cfg.backend,
                             state_cap=cfg.state_cap,
                             witness_cap=cfg.witness_cap)
        times = expected_hitting_times(ec)
    out.field("engine", engine)
    out.field("backend", cfg.backend.mode)
    out.field("eoe", _number(times.initial), "expected steps")
    if args.table:
        out.line("per-state expected steps:")
        for state, value in zip(times.states, times.values):
            key = "eoe[" + ",".join(str(x) for x in state) + "]"
            out.row(key, _number(value), str(state))


def cmd_prob(args: argparse.Namespace) -> None:
    cfg = _config(args)
    chain = _load(args.model)
    out = _Printer(args.machine_output)
    n0 = sum(chain.initial)
    target = parse_predicate(args.target, chain.names, n0)
    if args.safe is None:
        safe = lambda u: True
    else:
        safe = parse_predicate(args.safe, chain.names, n0)
    ec = build_reachable(chain, cfg.backend,
                         state_cap=cfg.state_cap,
                         witness_cap=cfg.witness_cap)
    out.field("backend", cfg.backend.mode)
    out.field("probability", _number(until_probability(ec, safe, target)))


def cmd_simulate(args: argparse.Namespace) -> None:
    cfg = _config(args)
    chain = _load(args.model)
    out = _Printer(args.machine_output)
    rng = random.Random(cfg.seed)
    backend = cfg.backend
    if backend.is_exact:
        chain = ensure_exp_table(chain, cfg.error_exponent)
    pairs = chain.support_pairs
    # state -> True iff no transfer can fire; probability lookups are cached
    # because trajectories revisit few distinct states.
    stuck_cache: dict = {}

    def stuck(u) -> bool:
        got = stuck_cache.get(u)
        if got is None:
            got = all(
                u[i] == 0 or success_prob(chain, i, j, u, backend) == 0
                for i, j in pairs
            )
            stuck_cache[u] = got
        return got

    counts = []
    finals: dict = {}
    for _ in range(cfg.runs):
        u = tuple(chain.initial)
        steps = 0
        while not stuck(u):
            if steps >= DEFAULT_TRAJECTORY_CAP:
                raise ResourceCapError(
                    f"trajectory exceeded {DEFAULT_TRAJECTORY_CAP} steps "
                    "without absorbing")
            u = sample_transition(chain, u, rng, backend)
            steps += 1
        counts.append(steps)
        finals[u] = finals.get(u, 0) + 1
    mean = sum(counts) / cfg.runs
    if cfg.runs > 1:
        var = sum((c - mean) ** 2 for c in counts) / (cfg.runs - 1)
        half = 1.96 * (var / cfg.runs) ** 0.5
    else:
        half = 0.0
    out.field("runs", cfg.runs)
    out.field("seed", cfg.seed)
    out.field("mean", _number(mean), "mean steps")
    out.field("ci95", _number(half), "ci95 half-width")
    out.line("final states:")
    for state in sorted(finals):
        key = "final[" + ",".join(str(x) for x in state) + "]"
        mass = Fraction(finals[state], cfg.runs)
        out.row(key, _number(mass), f"{state}: {finals[state]} runs, mass")


def cmd_export(args: argparse.Namespace) -> None:
    cfg = _config(args)
    chain = _load(args.model)
    out = _Printer(args.machine_output)
    machine = compile_bc_to_scm(chain)
    bound = args.bound
    if bound is None:
        bound = prism.certified_counter_bound(chain)
    model_text = prism.export_prism(machine, bound=bound, chain=chain)
    kinds = tuple(args.properties) if args.properties else prism.PROPERTY_KINDS
    props_text = prism.emit_properties(chain, kinds)
    stem = Path(args.model)
    model_path = Path(cfg.out_model) if cfg.out_model else stem.with_suffix(".prism")
    props_path = Path(cfg.out_props) if cfg.out_props else stem.with_suffix(".props")
    model_path.write_text(model_text)
    props_path.write_text(props_text)
    out.field("model", model_path, "model file")
    out.field("properties", props_path, "property file")
    out.field("bound", bound, "counter bound")


def cmd_approx_exp(args: argparse.Namespace) -> None:
    out = _Printer(args.machine_output)
    value = taylor_exp_neg(args.a, args.b, args.r)
    out.field("value", format_rational(value),
              f"exp(-{args.a}/{args.b})")
    out.field("error_exponent", args.r, "error bound exponent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bichain",
        description="Analyze Markov binomial chains: classify, compute "
                    "expected termination time, evaluate until-probabilities, "
                    "simulate, and export model-checker artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def machine_flag(p):
        p.add_argument("--machine-output", action="store_true",
                       help="line-oriented key=value output")

    def model_arg(p):
        p.add_argument("model", help="model file (JSON)")

    def numeric_flags(p):
        p.add_argument("--backend", dest="backend_mode",
                       choices=("rational", "double"), default="rational",
                       help="exact rational arithmetic or double precision")
        p.add_argument("--error-exponent", type=int, metavar="R",
                       default=DEFAULT_ERROR_EXPONENT,
                       help="synthesized exponentials are accurate to 2**-R")

    def cap_flags(p):
        p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP,
                       help="abort after this many reachable states "
                            "(general engine)")
        p.add_argument("--witness-cap", type=int, default=DEFAULT_WITNESS_CAP,
                       help="abort when one state has more witnesses than this")

    p = sub.add_parser("validate",
                       help="parse a model and report its classification")
    model_arg(p)
    machine_flag(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eoe", help="expected number of steps to termination")
    model_arg(p)
    p.add_argument("--engine", choices=("auto", "sir", "general"),
                   default="auto",
                   help="fast path for SIR-shaped chains or the general "
                        "reachability pipeline")
    numeric_flags(p)
    cap_flags(p)
    p.add_argument("--table", action="store_true",
                   help="also print the per-state expected steps")
    machine_flag(p)
    p.set_defaults(func=cmd_eoe)

    p = sub.add_parser("prob",
                       help="probability of staying safe until the target")
    model_arg(p)
    p.add_argument("--target", required=True, metavar="PRED",
                   help='target predicate, e.g. "I = 0 && R >= 3"')
    p.add_argument("--safe", metavar="PRED",
                   help="safe predicate; default is everywhere-safe")
    numeric_flags(p)
    cap_flags(p)
    machine_flag(p)
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("simulate", help="sample trajectories and summarize")
    model_arg(p)
    p.add_argument("--runs", type=int, default=1000,
                   help="number of trajectories")
    p.add_argument("--seed", type=int, default=0,
                   help="Mersenne Twister seed; runs share one stream")
    numeric_flags(p)
    machine_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="write model-checker input files")
    model_arg(p)
    p.add_argument("--out-model", metavar="PATH",
                   help="DTMC module file (default: model path with .prism)")
    p.add_argument("--out-props", metavar="PATH",
                   help="property file (default: model path with .props)")
    p.add_argument("--properties", nargs="+", metavar="KIND",
                   help="property kinds to emit (default: %s)"
                        % " ".join(prism.PROPERTY_KINDS))
    p.add_argument("--bound", type=int,
                   help="counter bound override; default is certified from "
                        "the model")
    machine_flag(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("approx-exp",
                       help="certified rational approximation of exp(-a/b)")
    p.add_argument("a", type=int)
    p.add_argument("b", type=int)
    p.add_argument("r", type=int,
                   help="accuracy exponent: the error is at most 2**-r")
    machine_flag(p)
    p.set_defaults(func=cmd_approx_exp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ResourceCapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except InvariantError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except BichainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
