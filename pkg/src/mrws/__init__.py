"""Least gradient problems on finite metric random walk spaces.

Submodules are imported on first attribute access so that the command-line
entry point can cap BLAS threads before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "calculus", "calibration", "cli", "counterexamples", "errors", "io", "least_gradient",
    "lp", "maxflow", "plaplace", "poincare", "space",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
