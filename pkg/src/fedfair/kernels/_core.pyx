# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-example gradient kernel.

Same contract as ``reference.per_example_clipped_sum``: one backward pass
per batch row through cached activations, L2 clip per row, accumulate.
The row loop and all layer loops run in C.
"""

from libc.math cimport sqrt

import numpy as np

BACKEND_NAME = "c"


def per_example_clipped_sum(list weights, list biases, list acts, seeds, double clip_bound):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t n = (<object> acts[0]).shape[0]
    cdef Py_ssize_t max_width = 0
    cdef Py_ssize_t layer, j, u, v, din, dout

    cdef double[::1] seed_view = np.ascontiguousarray(seeds, dtype=np.float64)

    # Per-layer C views of inputs and accumulators.
    w_views = []
    act_views = []
    out_w = []
    out_b = []
    row_w = []
    row_b = []
    for layer in range(n_layers):
        w = np.ascontiguousarray(weights[layer], dtype=np.float64)
        w_views.append(w)
        out_w.append(np.zeros_like(w))
        out_b.append(np.zeros(w.shape[1], dtype=np.float64))
        row_w.append(np.empty_like(w))
        row_b.append(np.empty(w.shape[1], dtype=np.float64))
        if w.shape[0] > max_width:
            max_width = w.shape[0]
        if w.shape[1] > max_width:
            max_width = w.shape[1]
        act_views.append(np.ascontiguousarray(acts[layer], dtype=np.float64))

    cdef double[::1] norms = np.empty(n, dtype=np.float64)
    cdef double[::1] delta = np.empty(max_width, dtype=np.float64)
    cdef double[::1] delta_next = np.empty(max_width, dtype=np.float64)

    cdef double[:, ::1] wv, av, gw, ow
    cdef double[::1] gb, ob
    cdef double sq, norm, scale, dv, s, acc

    for j in range(n):
        delta[0] = seed_view[j]
        dout = 1
        sq = 0.0
        for layer in range(n_layers - 1, -1, -1):
            wv = w_views[layer]
            av = act_views[layer]
            gw = row_w[layer]
            gb = row_b[layer]
            din = wv.shape[0]
            # Per-row gradient of this layer: outer(activation_in, delta).
            for v in range(dout):
                dv = delta[v]
                gb[v] = dv
                sq += dv * dv
            for u in range(din):
                s = av[j, u]
                for v in range(dout):
                    dv = s * delta[v]
                    gw[u, v] = dv
                    sq += dv * dv
            if layer > 0:
                # delta_in = (W @ delta) masked by the rectifier gate.
                for u in range(din):
                    if av[j, u] > 0.0:
                        acc = 0.0
                        for v in range(dout):
                            acc += wv[u, v] * delta[v]
                        delta_next[u] = acc
                    else:
                        delta_next[u] = 0.0
                for u in range(din):
                    delta[u] = delta_next[u]
                dout = din
        norm = sqrt(sq)
        norms[j] = norm
        scale = 1.0 if norm <= clip_bound else clip_bound / norm
        for layer in range(n_layers):
            gw = row_w[layer]
            gb = row_b[layer]
            ow = out_w[layer]
            ob = out_b[layer]
            din = gw.shape[0]
            dout = gw.shape[1]
            for u in range(din):
                for v in range(dout):
                    ow[u, v] += scale * gw[u, v]
            for v in range(dout):
                ob[v] += scale * gb[v]

    return out_w, out_b, np.asarray(norms)
