"""Pure-numpy kernel fallback.

The per-example path loops over batch rows in Python, one backward pass per
row, exactly mirroring the compiled kernel's arithmetic. Correctness
reference for `_core` and the backend of last resort.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def per_example_clipped_sum(weights, biases, acts, seeds, clip_bound):
    """Sum of per-row gradients, each L2-clipped to ``clip_bound``.

    Row ``j``'s gradient is ``seeds[j] * d(logit_j)/d(params)``, obtained by
    a backward pass through the cached activations ``acts`` (``acts[0]`` is
    the input batch, ``acts[l]`` the post-rectifier output of hidden layer
    ``l``). Returns ``(weight_sums, bias_sums, per_row_norms)``.
    """
    n_layers = len(weights)
    n = acts[0].shape[0]
    out_w = [np.zeros_like(w) for w in weights]
    out_b = [np.zeros_like(b) for b in biases]
    norms = np.empty(n, dtype=np.float64)

    for j in range(n):
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        delta = np.array([seeds[j]], dtype=np.float64)
        sq = 0.0
        for layer in range(n_layers - 1, -1, -1):
            a = acts[layer][j]
            gw = np.outer(a, delta)
            gb = delta.copy()
            grads_w[layer] = gw
            grads_b[layer] = gb
            sq += float(np.dot(gw.ravel(), gw.ravel())) + float(np.dot(gb, gb))
            if layer > 0:
                delta = (weights[layer] @ delta) * (a > 0.0)
        norm = np.sqrt(sq)
        norms[j] = norm
        scale = 1.0 if norm <= clip_bound else clip_bound / norm
        for layer in range(n_layers):
            out_w[layer] += scale * grads_w[layer]
            out_b[layer] += scale * grads_b[layer]

    return out_w, out_b, norms
