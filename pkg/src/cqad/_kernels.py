"""Hot loops over resonance-condition tables.

Each kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version.  Both produce identical results (same arithmetic, same tie-breaking),
so callers never need to know which one ran.  Set ``CQAD_DISABLE_NUMBA=1``
to force the numpy path, e.g. on platforms without an LLVM toolchain.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("CQAD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:  # pragma: no cover - exercised implicitly by whichever path is active
    if _DISABLE:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

# chunk size for the numpy path; keeps the (P, Q) temporaries small
_CHUNK = 256


def _min_detuning_numpy(target, table, self_idx):
    """For every target spacing, the closest other entry of ``table``.

    Returns (per-target minimum, per-target argmin).  ``self_idx[p]`` is the
    row of ``table`` that *is* target p (excluded), or -1.
    Ties resolve to the lowest table index.
    """
    p = target.shape[0]
    best = np.full(p, np.inf)
    arg = np.full(p, -1, dtype=np.int64)
    for lo in range(0, p, _CHUNK):
        hi = min(lo + _CHUNK, p)
        d = np.abs(target[lo:hi, None] - table[None, :])
        rows = np.arange(hi - lo)
        own = self_idx[lo:hi]
        mask = own >= 0
        d[rows[mask], own[mask]] = np.inf
        a = np.argmin(d, axis=1)
        best[lo:hi] = d[rows, a]
        arg[lo:hi] = np.where(np.isfinite(best[lo:hi]), a, -1)
    return best, arg


def _crowding_sums_numpy(target, table, self_idx, scale, degenerate_tol):
    """sum_q (scale / (target_p - table_q))^2 over q != self, per target."""
    p = target.shape[0]
    out = np.zeros(p)
    for lo in range(0, p, _CHUNK):
        hi = min(lo + _CHUNK, p)
        d = np.abs(target[lo:hi, None] - table[None, :])
        rows = np.arange(hi - lo)
        own = self_idx[lo:hi]
        mask = own >= 0
        d[rows[mask], own[mask]] = np.inf
        with np.errstate(divide="ignore"):
            terms = np.where(d <= degenerate_tol, np.inf, (scale / d) ** 2)
        out[lo:hi] = terms.sum(axis=1)
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _min_detuning_numba(target, table, self_idx):
        p = target.shape[0]
        q = table.shape[0]
        best = np.full(p, np.inf)
        arg = np.full(p, -1, dtype=np.int64)
        for i in range(p):
            b = np.inf
            a = -1
            for j in range(q):
                if j == self_idx[i]:
                    continue
                d = abs(target[i] - table[j])
                if d < b:
                    b = d
                    a = j
            best[i] = b
            arg[i] = a
        return best, arg

    @njit(cache=True)
    def _crowding_sums_numba(target, table, self_idx, scale, degenerate_tol):
        p = target.shape[0]
        q = table.shape[0]
        out = np.zeros(p)
        for i in range(p):
            s = 0.0
            for j in range(q):
                if j == self_idx[i]:
                    continue
                d = abs(target[i] - table[j])
                if d <= degenerate_tol:
                    s = np.inf
                    break
                s += (scale / d) ** 2
            out[i] = s
        return out


def min_detuning(target, table, self_idx, use_numba: bool | None = None):
    target = np.ascontiguousarray(target, dtype=np.float64)
    table = np.ascontiguousarray(table, dtype=np.float64)
    self_idx = np.ascontiguousarray(self_idx, dtype=np.int64)
    if (HAVE_NUMBA if use_numba is None else use_numba and HAVE_NUMBA):
        return _min_detuning_numba(target, table, self_idx)
    return _min_detuning_numpy(target, table, self_idx)


def crowding_sums(target, table, self_idx, scale: float, degenerate_tol: float = 0.0,
                  use_numba: bool | None = None):
    target = np.ascontiguousarray(target, dtype=np.float64)
    table = np.ascontiguousarray(table, dtype=np.float64)
    self_idx = np.ascontiguousarray(self_idx, dtype=np.int64)
    if (HAVE_NUMBA if use_numba is None else use_numba and HAVE_NUMBA):
        return _crowding_sums_numba(target, table, self_idx, float(scale), float(degenerate_tol))
    return _crowding_sums_numpy(target, table, self_idx, float(scale), float(degenerate_tol))


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
