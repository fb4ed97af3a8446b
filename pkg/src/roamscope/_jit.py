"""JIT plumbing: numba when available, pure-Python fallback otherwise.

Set ROAMSCOPE_DISABLE_JIT=1 to force the pure-Python/NumPy path (identical
algorithms, interpreted; roughly two orders of magnitude slower on grid
sweeps). `benchmarks/bench_kernels.py` compares the two paths.
"""

import os

DISABLE_JIT = os.environ.get("ROAMSCOPE_DISABLE_JIT", "").strip().lower() in (
    "1", "true", "yes", "on",
)

_have_numba = False
if not DISABLE_JIT:
    try:
        import numba as _numba
        _have_numba = True
    except ImportError:
        _have_numba = False

JIT_ENABLED = _have_numba


if JIT_ENABLED:
    from numba import njit, prange

    def set_threads(n):
        if n is not None and n > 0:
            _numba.set_num_threads(min(n, _numba.config.NUMBA_NUM_THREADS))

    def max_threads():
        return _numba.config.NUMBA_NUM_THREADS
else:
    def njit(*args, **kwargs):
        """Identity decorator standing in for numba.njit."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range

    def set_threads(n):
        pass

    def max_threads():
        return 1
