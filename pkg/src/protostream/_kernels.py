"""Hot inner loops with numba-jitted and pure-numpy implementations.

The per-instance decision loop is inherently sequential (every novelty
mutates the prototype set that later instances are scored against), so it
cannot be expressed as one matrix product. The jitted kernel makes long
streams cheap; the numpy path keeps the package usable without a working
numba install.

Backend selection: set PROTOSTREAM_BACKEND=numpy to force the fallback,
PROTOSTREAM_BACKEND=numba to require the jit (raises if unavailable).
Default is numba when importable. benchmarks/bench_decide.py compares the
two paths.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_VAR = "PROTOSTREAM_BACKEND"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def active_backend() -> str:
    """Resolve the backend name from the environment ('numba' or 'numpy')."""
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice not in ("", "auto"):
        raise ValueError(f"{_ENV_VAR} must be 'numba', 'numpy' or 'auto', got {choice!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


def _decide_batch_numpy(feats, protos, n_protos, tau):
    n = feats.shape[0]
    assigned = np.empty(n, dtype=np.int64)
    s_max = np.empty(n, dtype=np.float64)
    created = np.zeros(n, dtype=np.bool_)
    p = n_protos
    for i in range(n):
        scores = protos[:p] @ feats[i]
        j = int(np.argmax(scores))  # argmax takes the first maximum: lowest slot wins ties
        best = min(max(float(scores[j]), -1.0), 1.0)
        if best >= tau:
            assigned[i] = j
            s_max[i] = best
        else:
            protos[p] = feats[i]
            assigned[i] = p
            s_max[i] = best
            created[i] = True
            p += 1
    return assigned, s_max, created, p


if _HAVE_NUMBA:

    @njit(cache=True)
    def _decide_batch_numba(feats, protos, n_protos, tau):  # pragma: no cover - jitted
        n = feats.shape[0]
        d = feats.shape[1]
        assigned = np.empty(n, dtype=np.int64)
        s_max = np.empty(n, dtype=np.float64)
        created = np.zeros(n, dtype=np.bool_)
        p = n_protos
        for i in range(n):
            # np.dot on the contiguous prototype block lowers to BLAS dgemv;
            # the jit only removes the per-instance interpreter overhead
            scores = np.dot(protos[:p], feats[i])
            best = -2.0
            arg = 0
            for j in range(p):
                if scores[j] > best:  # strict: first maximum wins ties
                    best = scores[j]
                    arg = j
            if best > 1.0:
                best = 1.0
            elif best < -1.0:
                best = -1.0
            if best >= tau:
                assigned[i] = arg
                s_max[i] = best
            else:
                for k in range(d):
                    protos[p, k] = feats[i, k]
                assigned[i] = p
                s_max[i] = best
                created[i] = True
                p += 1
        return assigned, s_max, created, p


def decide_batch(feats: np.ndarray, protos: np.ndarray, n_protos: int, tau: float):
    """Sequential nearest-prototype decisions over one batch.

    ``protos`` is a preallocated (capacity, d) buffer whose first
    ``n_protos`` rows hold the current memory; rows are appended in place
    for every instance whose best cosine falls below ``tau``. Capacity must
    be at least ``n_protos + len(feats)``.

    Returns (assigned_slot, s_max, created, new_n_protos). Slots index into
    the buffer; tie-breaking is by lowest slot.
    """
    if protos.shape[0] < n_protos + feats.shape[0]:
        raise ValueError("prototype buffer too small for worst-case growth")
    if active_backend() == "numba":
        return _decide_batch_numba(feats, protos, n_protos, tau)
    return _decide_batch_numpy(feats, protos, n_protos, tau)
