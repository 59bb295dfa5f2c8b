"""Numba switch.

Every hot kernel exists twice: an explicit-loop body compiled with
``numba.njit`` and a vectorized numpy twin. ``jit_or`` picks one at import
time. Set ``GRASPVAE_DISABLE_JIT=1`` to force the numpy twins.
"""
import os

DISABLED = os.environ.get("GRASPVAE_DISABLE_JIT", "0").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def jit_or(fallback):
    """Compile the decorated loop kernel, or return ``fallback`` when jit is off."""

    def decorate(loop_fn):
        if USE_NUMBA:
            return numba.njit(cache=True)(loop_fn)
        return fallback

    return decorate


def compile_loop(loop_fn):
    """Always-compiled version of a loop kernel (benchmarks and twin tests)."""
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=True)(loop_fn)
