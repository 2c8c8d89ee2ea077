"""Backend switch for the image kernels.

Numba-compiled kernels are used when numba imports cleanly and the
``FSENET_DISABLE_NUMBA`` environment variable is unset (or falsy). Setting it
to ``1`` forces the pure-numpy path everywhere, which is handy for debugging
and for platforms without an LLVM toolchain.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_disabled():
    return os.environ.get("FSENET_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
