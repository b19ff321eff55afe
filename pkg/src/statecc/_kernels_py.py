"""NumPy implementation of the waterfilling kernels.

Same contract and iteration as the compiled module; used when the extension
is not built.
"""

import numpy as np


def waterfill_levels(inv_gains, lam, tol=1e-12, max_iter=100):
    a = np.ascontiguousarray(inv_gains, dtype=np.float64)
    m = a.shape[1]
    x = np.maximum(1.0 / lam - a.min(axis=1), m / lam - a.max(axis=1))
    active = np.arange(a.shape[0])
    for _ in range(max_iter):
        s = 1.0 / (x[active, None] + a[active])
        f = s.sum(axis=1) - lam
        done = np.abs(f) <= tol
        step = f / (s * s).sum(axis=1)
        x[active[~done]] += step[~done]
        active = active[~done]
        if active.size == 0:
            break
    return x


def waterfill_power(inv_gains, lam, tol=1e-12, max_iter=100):
    a = np.ascontiguousarray(inv_gains, dtype=np.float64)
    out = np.zeros(a.shape[0])
    live = (1.0 / a).sum(axis=1) > lam
    if live.any():
        out[live] = np.maximum(waterfill_levels(a[live], lam, tol, max_iter), 0.0)
    return out
