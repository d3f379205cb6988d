"""Numba-jitted training kernel.

Same contract as :mod:`fedar.kernels_numpy`. The whole epoch/batch loop is
compiled so the per-step Python overhead disappears; the two matmuls go
through ``np.dot`` (BLAS) while softmax and the parameter update are plain
loops. ``nogil`` lets client updates run concurrently under threads.
"""

import math

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True, nogil=True)
def _local_sgd(W, b, X, y, batch_size, epochs, eta):
    n = X.shape[0]
    F = W.shape[0]
    C = W.shape[1]
    W = W.copy()
    b = b.copy()
    for _ in range(epochs):
        start = 0
        while start < n:
            stop = min(start + batch_size, n)
            bs = stop - start
            Xb = X[start:stop]
            logits = np.dot(Xb, W)
            delta = np.empty((bs, C))
            for i in range(bs):
                m = logits[i, 0] + b[0]
                for c in range(1, C):
                    v = logits[i, c] + b[c]
                    if v > m:
                        m = v
                s = 0.0
                for c in range(C):
                    e = math.exp(logits[i, c] + b[c] - m)
                    delta[i, c] = e
                    s += e
                for c in range(C):
                    delta[i, c] /= s
                delta[i, y[start + i]] -= 1.0
            scale = eta / bs
            dW = np.dot(Xb.T, delta)
            for k in range(F):
                for c in range(C):
                    W[k, c] -= scale * dW[k, c]
            for c in range(C):
                s = 0.0
                for i in range(bs):
                    s += delta[i, c]
                b[c] -= scale * s
            start = stop
    return W, b


def local_sgd(W, b, X, y, batch_size, epochs, eta):
    """Thin wrapper enforcing the dtypes the jitted kernel was compiled for."""
    return _local_sgd(
        np.ascontiguousarray(W, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.int64),
        batch_size,
        epochs,
        eta,
    )
