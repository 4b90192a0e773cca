"""Compiled skip-gram negative-sampling loop.

All updates use values read before the step (true simultaneous gradient), so
one pair update here equals :func:`profvec.embed.sgns_step` bit for bit.
"""

import numpy as np
from numba import njit

_LCG_MUL = np.uint64(25214903917)
_LCG_ADD = np.uint64(11)
_MAX_REDRAWS = 100


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def pair_update(w_in, w_out, center, targets, labels, n_targets, lr, grads, neu1e):
    """Apply one SGNS step for ``center`` against ``targets[:n_targets]``.

    Returns False if a touched row became non-finite.
    """
    k = w_in.shape[1]
    for j in range(n_targets):
        t = targets[j]
        dot = 0.0
        for d in range(k):
            dot += w_in[center, d] * w_out[t, d]
        grads[j] = (labels[j] - _sigmoid(dot)) * lr
    for d in range(k):
        neu1e[d] = 0.0
    for j in range(n_targets):
        t = targets[j]
        g = grads[j]
        for d in range(k):
            neu1e[d] += g * w_out[t, d]
    for j in range(n_targets):
        t = targets[j]
        g = grads[j]
        for d in range(k):
            w_out[t, d] += g * w_in[center, d]
    ok = True
    for d in range(k):
        w_in[center, d] += neu1e[d]
        if not np.isfinite(w_in[center, d]):
            ok = False
    for j in range(n_targets):
        t = targets[j]
        for d in range(k):
            if not np.isfinite(w_out[t, d]):
                ok = False
    return ok


@njit(cache=True, nogil=True)
def train_chunk(w_in, w_out, tokens, offsets, table, window, negatives, epochs,
                initial_lr, total_work, dynamic_window, seed, status):
    """Train over the streams ``tokens[offsets[i]:offsets[i+1]]``.

    ``total_work`` is the scheduled pair count (fixed window) or center count
    (dynamic window) for this chunk across all epochs. ``status`` receives
    ``[ok, pairs_done, bad_center_position]``.
    """
    k = w_in.shape[1]
    targets = np.empty(negatives + 1, dtype=np.int64)
    labels = np.zeros(negatives + 1, dtype=np.float64)
    labels[0] = 1.0
    grads = np.empty(negatives + 1, dtype=np.float64)
    neu1e = np.empty(k, dtype=np.float64)
    rnd = np.uint64(seed)
    table_size = np.uint64(table.shape[0])
    min_lr = initial_lr * 1e-4
    work_done = 0
    pairs = 0
    n_streams = offsets.shape[0] - 1
    for _ in range(epochs):
        for s in range(n_streams):
            start = offsets[s]
            stop = offsets[s + 1]
            for pos in range(start, stop):
                center = tokens[pos]
                reach = window
                if dynamic_window:
                    rnd = rnd * _LCG_MUL + _LCG_ADD
                    reach = window - np.int64(rnd % np.uint64(window))
                lo = max(start, pos - reach)
                hi = min(stop - 1, pos + reach)
                for cpos in range(lo, hi + 1):
                    if cpos == pos:
                        continue
                    lr = initial_lr * (1.0 - work_done / total_work)
                    if lr < min_lr:
                        lr = min_lr
                    context = tokens[cpos]
                    targets[0] = context
                    n_t = 1
                    for _n in range(negatives):
                        for _attempt in range(_MAX_REDRAWS):
                            rnd = rnd * _LCG_MUL + _LCG_ADD
                            cand = table[(rnd >> np.uint64(16)) % table_size]
                            if cand != context:
                                targets[n_t] = cand
                                labels[n_t] = 0.0
                                n_t += 1
                                break
                    if not pair_update(w_in, w_out, center, targets, labels, n_t, lr, grads, neu1e):
                        status[0] = 0
                        status[1] = pairs
                        status[2] = pos
                        return
                    pairs += 1
                    if not dynamic_window:
                        work_done += 1
                if dynamic_window:
                    work_done += 1
    status[0] = 1
    status[1] = pairs
    status[2] = -1
