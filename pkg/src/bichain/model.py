"""Binomial-chain models: affine transfer functions, chain structure, parsing.

A chain couples ``k`` named compartments holding individuals with a sparse
matrix of nonnegative affine transfer functions. The transfer entry ``(i, j)``
drives a binomial draw moving individuals from compartment ``i`` to ``j``;
absent entries mean "no transfer". This module owns the data types, the JSON
model-file format, and the structural classifications (simple, closed,
acyclic) that the analysis modules dispatch on.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

from .errors import ModelError, ModelSyntaxError, ModelWarning, DomainError

__all__ = [
    "LinearFn",
    "ExpTable",
    "BinomialChain",
    "parse_model",
    "serialize_model",
    "support",
    "is_simple",
    "is_closed",
    "is_acyclic",
    "topo_order",
]

_RATIONAL_RE = re.compile(r"(-?\d+)(?:/([1-9]\d*))?")


def parse_rational(text: str, where: str = "value") -> Fraction:
    """Parse ``"p/q"`` or ``"n"`` (decimal integers, q > 0) into a Fraction."""
    if not isinstance(text, str) or not _RATIONAL_RE.fullmatch(text):
        raise ModelSyntaxError(f"{where}: expected a rational string 'p/q' or 'n', got {text!r}")
    return Fraction(text)


def format_rational(x: Fraction) -> str:
    """Render a Fraction in the model-file syntax ("p/q", or "n" for integers)."""
    return str(x)


@dataclass(frozen=True)
class LinearFn:
    """Nonnegative affine function ``f(u) = sum_l coeffs[l] * u[l] + offset``.

    A present transfer entry is never identically zero; the zero function is
    represented by absence.
    """

    coeffs: tuple[Fraction, ...]
    offset: Fraction

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.coeffs) or self.offset < 0:
            raise ModelError("transfer function coefficients and offset must be nonnegative")
        if self.offset == 0 and not any(self.coeffs):
            raise ModelError("all-zero transfer function; omit the entry instead")

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def __call__(self, u) -> Fraction:
        return sum((c * x for c, x in zip(self.coeffs, u)), self.offset)

    def coeff_support(self) -> tuple[int, ...]:
        """Indices of compartments with a nonzero coefficient, ascending."""
        return tuple(l for l, c in enumerate(self.coeffs) if c != 0)

    @property
    def is_constant(self) -> bool:
        return not any(self.coeffs)


# Key used for the constant term in exp-table entries and model files.
OFFSET_VAR = "offset"


@dataclass(frozen=True)
class ExpTable:
    """Exact rational values for the exponentials the step semantics needs.

    For each support pair ``(i, j)`` the table stores ``exp(-offset)`` under
    variable ``None`` and ``exp(-coeff_l)`` under each compartment index ``l``
    with a nonzero coefficient. ``error_exponent`` records the accuracy
    ``2**-r`` the values were synthesized at, or ``None`` for user-supplied
    values whose provenance the file does not state.
    """

    entries: dict[tuple[int, int, int | None], Fraction]
    error_exponent: int | None = None

    def __post_init__(self) -> None:
        for key, value in self.entries.items():
            if not (0 <= value <= 1):
                raise ModelError(f"exp-table entry {key} must lie in [0, 1], got {value}")
        if self.error_exponent is not None and self.error_exponent < 1:
            raise ModelError("exp-table error_exponent must be >= 1")

    def value(self, i: int, j: int, var: int | None) -> Fraction:
        return self.entries[(i, j, var)]


@dataclass(frozen=True)
class BinomialChain:
    """A binomial chain: named compartments, initial counts, transfer matrix.

    Parameters
    ----------
    names : tuple of str
        Compartment names; order fixes the 0-based internal indexing.
    initial : tuple of int
        Initial count per compartment, aligned with ``names``.
    transfers : dict
        Sparse transfer matrix mapping index pairs ``(i, j)`` to
        :class:`LinearFn`. Treat as read-only.
    exp_table : ExpTable, optional
        Exact exponentials for the rational backend; synthesized on demand
        when absent.
    """

    names: tuple[str, ...]
    initial: tuple[int, ...]
    transfers: dict[tuple[int, int], LinearFn] = field(default_factory=dict)
    exp_table: ExpTable | None = None

    def __post_init__(self) -> None:
        k = len(self.names)
        if k == 0:
            raise ModelError("a chain needs at least one compartment")
        if len(set(self.names)) != k:
            raise ModelError("compartment names must be unique")
        if len(self.initial) != k:
            raise ModelError("initial vector length must match the number of compartments")
        if any((not isinstance(v, int)) or v < 0 for v in self.initial):
            raise ModelError("initial counts must be nonnegative integers")
        for (i, j), fn in self.transfers.items():
            if not (0 <= i < k and 0 <= j < k):
                raise ModelError(f"transfer ({i},{j}) is out of range for k={k}")
            if fn.arity != k:
                raise ModelError(f"transfer ({i},{j}) has arity {fn.arity}, expected {k}")
            if i == j:
                warnings.warn(
                    f"transfer on the diagonal ({self.names[i]}->{self.names[j]}): "
                    "the chain cannot be acyclic",
                    ModelWarning,
                    stacklevel=2,
                )
        if self.exp_table is not None:
            _check_table_matches(self)

    @property
    def k(self) -> int:
        return len(self.names)

    @cached_property
    def support_pairs(self) -> tuple[tuple[int, int], ...]:
        """Support pairs in row-major order; the canonical iteration order."""
        return tuple(sorted(self.transfers))

    def transfer(self, i: int, j: int) -> LinearFn | None:
        return self.transfers.get((i, j))

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ModelError(f"unknown compartment {name!r}") from None

    def with_exp_table(self, table: ExpTable) -> "BinomialChain":
        return BinomialChain(self.names, self.initial, self.transfers, table)


def _check_table_matches(chain: BinomialChain) -> None:
    """The table must cover exactly the exponentials the chain can ask for."""
    table = chain.exp_table
    required: set[tuple[int, int, int | None]] = set()
    for (i, j), fn in chain.transfers.items():
        required.add((i, j, None))
        for l in fn.coeff_support():
            required.add((i, j, l))
    have = set(table.entries)
    key = lambda t: (t[0], t[1], -1 if t[2] is None else t[2])
    missing = sorted(required - have, key=key)
    extra = sorted(have - required, key=key)
    if missing:
        raise ModelError(f"exp_table is missing entries for {missing}")
    if extra:
        raise ModelError(f"exp_table has entries outside the support: {extra}")


def support(chain: BinomialChain) -> set[tuple[int, int]]:
    """The set of index pairs with a (necessarily nonzero) transfer entry."""
    return set(chain.transfers)


def is_simple(chain: BinomialChain) -> bool:
    """True iff every transfer rate depends on its source compartment only."""
    return all(
        set(fn.coeff_support()) <= {i} for (i, j), fn in chain.transfers.items()
    )


def is_closed(chain: BinomialChain) -> bool:
    """True iff no row of the transfer matrix has two support entries.

    Closed chains move each individual along at most one edge per step, so
    the total population is preserved by every transition.
    """
    rows: set[int] = set()
    for i, _ in chain.transfers:
        if i in rows:
            return False
        rows.add(i)
    return True


def is_acyclic(chain: BinomialChain) -> bool:
    """True iff the Boolean support graph has no directed cycle.

    A diagonal entry is a self-loop and therefore a cycle.
    """
    try:
        topo_order(chain)
    except DomainError:
        return False
    return True


def topo_order(chain: BinomialChain) -> tuple[int, ...]:
    """Topological position of each compartment in the support DAG.

    Returns ``pi`` with ``pi[i] < pi[j]`` for every support pair ``(i, j)``.
    Kahn's algorithm with the smallest original index chosen first, so the
    result is stable: compartments not ordered by the DAG keep their file
    order.

    Raises
    ------
    DomainError
        If the support graph has a directed cycle.
    """
    k = chain.k
    indegree = [0] * k
    out: list[list[int]] = [[] for _ in range(k)]
    for i, j in chain.support_pairs:
        if i == j:
            raise DomainError("support graph has a self-loop; no topological order")
        out[i].append(j)
        indegree[j] += 1
    import heapq

    ready = [i for i in range(k) if indegree[i] == 0]
    heapq.heapify(ready)
    pi = [-1] * k
    pos = 0
    while ready:
        i = heapq.heappop(ready)
        pi[i] = pos
        pos += 1
        for j in out[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(ready, j)
    if pos != k:
        raise DomainError("support graph has a directed cycle; no topological order")
    return tuple(pi)


_TOP_KEYS = {"compartments", "initial", "transfers", "exp_table"}
_TRANSFER_KEYS = {"from", "to", "coeffs", "offset"}


def parse_model(text: str) -> BinomialChain:
    """Parse a UTF-8 JSON model file into a :class:`BinomialChain`.

    The format names compartments, gives integer initial counts keyed by
    name, and lists transfers as ``{"from", "to", "coeffs", "offset"}``
    records with rationals written ``"p/q"`` or ``"n"``. An optional
    ``exp_table`` maps ``"From->To:var"`` keys (``var`` a compartment name or
    ``"offset"``) to rational exponential values, with an optional
    ``error_exponent``. Unknown keys anywhere are rejected.

    Raises
    ------
    ModelSyntaxError
        Malformed JSON or rational literals, with position information.
    ModelError
        Structurally invalid models (unknown names, negative rates,
        duplicate or all-zero transfers, inconsistent exp_table).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelSyntaxError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ModelError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("compartments", "initial", "transfers"):
        if key not in doc:
            raise ModelError(f"missing required key {key!r}")

    names_raw = doc["compartments"]
    if (
        not isinstance(names_raw, list)
        or not names_raw
        or not all(isinstance(n, str) and n for n in names_raw)
    ):
        raise ModelError("compartments: expected a nonempty list of nonempty strings")
    names = tuple(names_raw)
    if len(set(names)) != len(names):
        raise ModelError("compartments: names must be unique")
    index = {n: i for i, n in enumerate(names)}

    initial_raw = doc["initial"]
    if not isinstance(initial_raw, dict):
        raise ModelError("initial: expected an object keyed by compartment name")
    unknown = set(initial_raw) - set(names)
    if unknown:
        raise ModelError(f"initial: unknown compartments {sorted(unknown)}")
    missing = set(names) - set(initial_raw)
    if missing:
        raise ModelError(f"initial: missing compartments {sorted(missing)}")
    initial: list[int] = []
    for n in names:
        v = initial_raw[n]
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ModelError(f"initial[{n!r}]: expected a nonnegative integer, got {v!r}")
        initial.append(v)

    transfers_raw = doc["transfers"]
    if not isinstance(transfers_raw, list):
        raise ModelError("transfers: expected a list of transfer records")
    transfers: dict[tuple[int, int], LinearFn] = {}
    k = len(names)
    for rec in transfers_raw:
        if not isinstance(rec, dict):
            raise ModelError("transfers: each entry must be an object")
        unknown = set(rec) - _TRANSFER_KEYS
        if unknown:
            raise ModelError(f"transfers: unknown keys {sorted(unknown)}")
        try:
            src, dst = rec["from"], rec["to"]
        except KeyError as e:
            raise ModelError(f"transfers: missing key {e.args[0]!r}") from None
        for n in (src, dst):
            if n not in index:
                raise ModelError(f"transfers: unknown compartment {n!r}")
        i, j = index[src], index[dst]
        if (i, j) in transfers:
            raise ModelError(f"transfers: duplicate entry {src}->{dst}")
        coeffs_raw = rec.get("coeffs", {})
        if not isinstance(coeffs_raw, dict):
            raise ModelError(f"transfers {src}->{dst}: coeffs must be an object")
        unknown = set(coeffs_raw) - set(names)
        if unknown:
            raise ModelError(f"transfers {src}->{dst}: unknown compartments in coeffs: {sorted(unknown)}")
        coeffs = [Fraction(0)] * k
        for n, s in coeffs_raw.items():
            coeffs[index[n]] = parse_rational(s, f"transfers {src}->{dst} coeffs[{n!r}]")
        offset = parse_rational(rec.get("offset", "0"), f"transfers {src}->{dst} offset")
        if any(c < 0 for c in coeffs) or offset < 0:
            raise ModelError(f"transfers {src}->{dst}: rates must be nonnegative")
        if offset == 0 and not any(coeffs):
            raise ModelError(f"transfers {src}->{dst}: all-zero transfer; omit the entry instead")
        transfers[(i, j)] = LinearFn(tuple(coeffs), offset)

    table = None
    if "exp_table" in doc:
        table = _parse_exp_table(doc["exp_table"], names, index)

    return BinomialChain(names, tuple(initial), transfers, table)


_EXP_KEY_RE = re.compile(r"(.+)->(.+):(.+)")


def _parse_exp_table(raw, names, index) -> ExpTable:
    if not isinstance(raw, dict):
        raise ModelError("exp_table: expected an object")
    entries: dict[tuple[int, int, int | None], Fraction] = {}
    error_exponent = None
    for key, value in raw.items():
        if key == "error_exponent":
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ModelError("exp_table.error_exponent: expected a positive integer")
            error_exponent = value
            continue
        m = _EXP_KEY_RE.fullmatch(key)
        if not m:
            raise ModelError(f"exp_table: unknown key {key!r}; expected 'From->To:var'")
        src, dst, var = m.groups()
        for n in (src, dst):
            if n not in index:
                raise ModelError(f"exp_table[{key!r}]: unknown compartment {n!r}")
        if var == OFFSET_VAR:
            l: int | None = None
        elif var in index:
            l = index[var]
        else:
            raise ModelError(f"exp_table[{key!r}]: var must be a compartment name or 'offset'")
        triple = (index[src], index[dst], l)
        if triple in entries:
            raise ModelError(f"exp_table: duplicate entry {key!r}")
        v = parse_rational(value, f"exp_table[{key!r}]")
        if not (0 <= v <= 1):
            raise ModelError(f"exp_table[{key!r}]: value must lie in [0, 1]")
        entries[triple] = v
    return ExpTable(entries, error_exponent)


def serialize_model(chain: BinomialChain) -> str:
    """Render a chain back into the model-file format.

    The output is canonical: transfers row-major, coefficient maps in
    compartment order with zero coefficients dropped, exp-table entries with
    the offset value first. Parsing the result yields a chain equal to the
    input.
    """
    doc: dict = {
        "compartments": list(chain.names),
        "initial": {n: v for n, v in zip(chain.names, chain.initial)},
    }
    transfers = []
    for i, j in chain.support_pairs:
        fn = chain.transfers[(i, j)]
        rec = {
            "from": chain.names[i],
            "to": chain.names[j],
            "coeffs": {chain.names[l]: format_rational(fn.coeffs[l]) for l in fn.coeff_support()},
            "offset": format_rational(fn.offset),
        }
        transfers.append(rec)
    doc["transfers"] = transfers
    if chain.exp_table is not None:
        table: dict = {}
        for i, j, l in sorted(
            chain.exp_table.entries, key=lambda t: (t[0], t[1], -1 if t[2] is None else t[2])
        ):
            var = OFFSET_VAR if l is None else chain.names[l]
            key = f"{chain.names[i]}->{chain.names[j]}:{var}"
            table[key] = format_rational(chain.exp_table.entries[(i, j, l)])
        if chain.exp_table.error_exponent is not None:
            table["error_exponent"] = chain.exp_table.error_exponent
        doc["exp_table"] = table
    return json.dumps(doc, indent=2) + "\n"
