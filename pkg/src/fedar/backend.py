"""Kernel backend selection.

The hot training loop exists twice: a numba-jitted kernel and a pure-numpy
fallback. ``FEDAR_BACKEND`` picks one:

* ``auto`` (default): numba when importable, numpy otherwise
* ``numba``: require the jitted kernel, fail loudly if numba is missing
* ``numpy``: force the fallback (useful for debugging and benchmarking)

Resolution happens once, lazily, on first kernel use.
"""

import importlib
import os

from .errors import ConfigError

ENV_VAR = "FEDAR_BACKEND"

_active = None


def _resolve():
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ConfigError(
            f"{ENV_VAR}: unknown backend {choice!r} (expected auto, numba, or numpy)"
        )
    if choice == "numpy":
        return importlib.import_module("fedar.kernels_numpy")
    try:
        return importlib.import_module("fedar.kernels_numba")
    except ImportError:
        if choice == "numba":
            raise ConfigError(f"{ENV_VAR}=numba but numba is not importable")
        return importlib.import_module("fedar.kernels_numpy")


def kernels():
    """The active kernel module (resolved once per process)."""
    global _active
    if _active is None:
        _active = _resolve()
    return _active


def backend_name() -> str:
    return kernels().BACKEND_NAME


def local_sgd(W, b, X, y, batch_size, epochs, eta):
    return kernels().local_sgd(W, b, X, y, batch_size, epochs, eta)
