"""Analysis toolkit for Markov binomial chains.

Compartment models with binomially distributed transfers: exact-rational and
double-precision step semantics, reachability and expected hitting times for
acyclic chains, a fast dynamic-programming engine for SIR-shaped models,
compilation to stochastic counter machines, and PRISM export.
"""

from .model import BinomialChain, ExpTable, LinearFn, parse_model, serialize_model

__version__ = "0.1.0"

__all__ = [
    "BinomialChain",
    "ExpTable",
    "LinearFn",
    "parse_model",
    "serialize_model",
    "__version__",
]
