"""Numba availability and backend selection.

The hot kernels in :mod:`daftir.kernels` exist twice: a ``@njit`` version and
a pure-numpy version. Which one the public entry points dispatch to is decided
once at import time:

* ``DAFT_DISABLE_NUMBA=1`` forces the numpy path.
* If numba cannot be imported the numpy path is used silently.
* ``DAFT_NUM_THREADS`` caps numba's worker threads.
* numba's threading layer defaults to ``workqueue`` unless
  ``NUMBA_THREADING_LAYER`` is set.
"""
from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

_FALSY = {"", "0", "false", "no", "off"}


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba  # type: ignore

    NUMBA_INSTALLED = True
    # Probing the TBB layer warns on mismatched TBB builds; the built-in
    # workqueue layer is always present. An explicit NUMBA_THREADING_LAYER wins.
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
except Exception:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_INSTALLED = False

USE_NUMBA = NUMBA_INSTALLED and not _env_flag("DAFT_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise an identity decorator.

    Compiled variants are always built when numba is importable (even if the
    numpy backend is selected) so tests and benchmarks can compare the two.
    """
    if NUMBA_INSTALLED:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


if NUMBA_INSTALLED:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def configure_threads() -> int:
    """Apply ``DAFT_NUM_THREADS`` to numba and return the thread count in use."""
    if not NUMBA_INSTALLED:
        return 1
    raw = os.environ.get("DAFT_NUM_THREADS")
    if raw:
        try:
            wanted = int(raw)
        except ValueError:
            log.warning("ignoring non-integer DAFT_NUM_THREADS=%r", raw)
        else:
            cap = numba.config.NUMBA_NUM_THREADS
            numba.set_num_threads(max(1, min(wanted, cap)))
    return numba.get_num_threads()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
