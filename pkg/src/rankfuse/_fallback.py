"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Results agree with the compiled path exactly for the integer outputs and to
rounding for accumulated sums.
"""

import numpy as np


def rank_hinge(scores):
    s = np.ascontiguousarray(scores, dtype=np.float64)
    n = s.shape[0]
    # margins[q, t] = 1 - s[q] + s[t], kept only for q > t
    margins = 1.0 - s[:, None] + s[None, :]
    active = np.tril(margins > 0.0, k=-1)
    total = float(margins[active].sum()) if n > 1 else 0.0
    coef = active.sum(axis=1).astype(np.float64) - active.sum(axis=0)
    return total, coef


def maxpool2x2_forward(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    candidates = np.stack(
        [x[:, :-1, :-1], x[:, :-1, 1:], x[:, 1:, :-1], x[:, 1:, 1:]], axis=0
    )
    idx = np.argmax(candidates, axis=0).astype(np.int8)
    out = np.take_along_axis(candidates, idx[None].astype(np.intp), axis=0)[0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(grad_out, idx):
    n, ow, oh, c = grad_out.shape
    grad = np.zeros((n, ow + 1, oh + 1, c), dtype=np.float64)
    for k, (da, db) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        grad[:, da:da + ow, db:db + oh] += np.where(idx == k, grad_out, 0.0)
    return grad
