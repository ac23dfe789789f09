"""Independent reference implementations used only by the tests.

Deliberately naive: explicit loops, no vectorization shared with the
package code.
"""

import numpy as np


def conv2d_loops(x, w, b):
    n, c, h, length = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    y = np.zeros((n, o, h, length))
    for ni in range(n):
        for oi in range(o):
            for hi in range(h):
                for li in range(length):
                    acc = b[oi]
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                hh, ll = hi + i - ph, li + j - pw
                                if 0 <= hh < h and 0 <= ll < length:
                                    acc += x[ni, ci, hh, ll] * w[oi, ci, i, j]
                    y[ni, oi, hi, li] = acc
    return y


def transposed_conv_loops(x, w, b):
    """Scatter-accumulate: each input cell paints a 1 x k patch of outputs."""
    n, c, h, length = x.shape
    o, _, _, k = w.shape
    y = np.zeros((n, o, h, length * k))
    for oi in range(o):
        y[:, oi] += b[oi]
    for ni in range(n):
        for ci in range(c):
            for hi in range(h):
                for li in range(length):
                    for oi in range(o):
                        for j in range(k):
                            y[ni, oi, hi, li * k + j] += x[ni, ci, hi, li] * w[oi, ci, 0, j]
    return y


def maxpool_loops(x, k):
    n, c, h, length = x.shape
    y = np.zeros((n, c, h, length // k))
    arg = np.zeros((n, c, h, length // k), dtype=int)
    for ni in range(n):
        for ci in range(c):
            for hi in range(h):
                for p in range(length // k):
                    best, bi = -np.inf, -1
                    for j in range(k):
                        v = x[ni, ci, hi, p * k + j]
                        if v > best:
                            best, bi = v, j
                    y[ni, ci, hi, p] = best
                    arg[ni, ci, hi, p] = bi
    return y, arg


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every element of ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


# ---------------------------------------------------------------------------
# metric oracles: element-by-element scans
# ---------------------------------------------------------------------------

def runs_naive(labels):
    runs = []
    for i, v in enumerate(labels):
        if runs and runs[-1][0] == v:
            runs[-1][2] += 1
        else:
            runs.append([int(v), i, 1])
    return [tuple(r) for r in runs]


def accuracy_naive(pred, truth):
    same = 0
    for a, b in zip(pred, truth):
        same += a == b
    return 100.0 * same / len(truth)


def duration_errors_naive(pred, truth, rate_hz):
    ms = 1000.0 / rate_hz
    p_runs = runs_naive(pred)
    t_runs = runs_naive(truth)
    errs = {0: [], 1: []}
    for phase, start, length in t_runs[1:-1]:
        best, best_len = 0, None
        for pp, ps, pl in p_runs:
            if pp != phase:
                continue
            ov = 0
            for i in range(start, start + length):
                if ps <= i < ps + pl:
                    ov += 1
            if ov > best:
                best, best_len = ov, pl
        errs[phase].append(abs(length - best_len) * ms if best_len is not None else length * ms)
    return errs


def mean_std_naive(values):
    if not values:
        return 0.0, 0.0
    m = sum(values) / len(values)
    var = sum((v - m) ** 2 for v in values) / len(values)
    return m, var ** 0.5


def stride_naive(pred, truth, rate_hz, tol_ms=50.0):
    def onsets(seq):
        return [i for i in range(1, len(seq)) if seq[i] == 0 and seq[i - 1] == 1]

    t_on, p_on = onsets(truth), onsets(pred)
    total = len(t_on) - 1 if len(t_on) > 1 else 0
    hit = 0
    for t in t_on[:-1]:
        near = [p for p in p_on if abs(p - t) * 1000.0 / rate_hz <= tol_ms + 1e-9]
        hit += len(near) == 1
    return hit, total
