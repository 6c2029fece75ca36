"""Numba toggle.

Hot kernels are decorated with :func:`njit` from this module.  Setting
``PISTONSIM_DISABLE_NUMBA=1`` in the environment (before import) swaps the
decorator for an identity wrapper, so the very same functions run as plain
Python/numpy.  Results agree between the two paths; only speed differs.

Compiled kernels are cached on disk.  Numba only invalidates a cache entry
when its own source file changes, not when a kernel it calls from another
module does; ``PISTONSIM_NUMBA_CACHE=0`` turns the cache off while editing
kernels.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("PISTONSIM_DISABLE_NUMBA", "").strip().lower()
NUMBA_ENABLED = _FLAG not in ("1", "true", "yes", "on")
_CACHE = os.environ.get("PISTONSIM_NUMBA_CACHE", "1").strip().lower() not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        import numba as _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", _CACHE)
        if len(args) == 1 and callable(args[0]):
            return _numba.njit(**kwargs)(args[0])
        return _numba.njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrapper(f):
            return f

        return wrapper


__all__ = ["NUMBA_ENABLED", "njit"]
