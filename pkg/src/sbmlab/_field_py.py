"""Numpy fallback for the compiled squared-exponential pivoted Cholesky."""
from __future__ import annotations

import numpy as np


def pivoted_se(x, variance, inv2l2, thresh, Lt, d):
    m = x.shape[0]
    cap = Lt.shape[0]
    d[:] = variance
    r = 0
    while r < m:
        p = int(np.argmax(d))
        dp = d[p]
        if dp <= thresh:
            break
        if r == cap:
            return -1
        diff = x - x[p]
        col = variance * np.exp(-diff * diff * inv2l2)
        if r:
            col -= Lt[:r, p] @ Lt[:r]
        Lt[r] = col / np.sqrt(dp)
        d -= Lt[r] * Lt[r]
        d[p] = 0.0
        r += 1
    return r
