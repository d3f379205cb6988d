"""Pure-numpy reference implementation of the hot training kernel.

This is the fallback path used when numba is unavailable or when
``FEDAR_BACKEND=numpy`` is set. Semantics must stay in lockstep with
:mod:`fedar.kernels_numba`; both run the same batch slicing, the same
stable softmax, and the same update order, so results agree to float
rounding.
"""

import numpy as np

BACKEND_NAME = "numpy"


def local_sgd(W, b, X, y, batch_size, epochs, eta):
    """Run ``epochs`` passes of minibatch SGD over pre-shuffled data.

    ``X``/``y`` are already in training order; batches are the contiguous
    slices ``[0:B), [B:2B), ...`` with the short final batch kept. The same
    slices are reused every epoch. Returns updated copies of ``W`` and ``b``.
    """
    W = W.copy()
    b = b.copy()
    n = X.shape[0]
    for _ in range(epochs):
        start = 0
        while start < n:
            stop = min(start + batch_size, n)
            Xb = X[start:stop]
            yb = y[start:stop]
            bs = stop - start
            logits = Xb @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            np.exp(logits, out=logits)
            logits /= logits.sum(axis=1, keepdims=True)
            logits[np.arange(bs), yb] -= 1.0  # now P - onehot(y)
            scale = eta / bs
            W -= scale * (Xb.T @ logits)
            b -= scale * logits.sum(axis=0)
            start = stop
    return W, b
