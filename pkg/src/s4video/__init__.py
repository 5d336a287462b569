"""Sequence modeling with structured state-space layers on long token streams.

Submodules load lazily so the CLI can pin BLAS thread counts before numpy is
first imported.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("tensor", "gradcheck", "stf", "ssm", "model", "training",
               "data", "bench", "cli")

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
