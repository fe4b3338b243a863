"""Slow reference implementations written with plain loops and ``math``.

They share no code with the package and exist only to cross-check it.
"""
import math

import numpy as np


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def lstm_loop(frames, w, u, b):
    """frames: list of length-D vectors; gate blocks i, f, g, o. Returns list of H-vectors."""
    hid = len(u[0])
    h = [0.0] * hid
    c = [0.0] * hid
    out = []
    for x in frames:
        z = []
        for r in range(4 * hid):
            acc = b[r]
            for j, xv in enumerate(x):
                acc += w[r][j] * xv
            for j, hv in enumerate(h):
                acc += u[r][j] * hv
            z.append(acc)
        new_c, new_h = [], []
        for k in range(hid):
            i = _sig(z[k])
            f = _sig(z[hid + k])
            g = math.tanh(z[2 * hid + k])
            o = _sig(z[3 * hid + k])
            ck = f * c[k] + i * g
            new_c.append(ck)
            new_h.append(o * math.tanh(ck))
        c, h = new_c, new_h
        out.append(h)
    return out


def blstm_loop(spec, p):
    """spec: (F, T) array; p: name -> ndarray. Returns (2H, T) array."""
    frames = [list(map(float, spec[:, t])) for t in range(spec.shape[1])]
    as_list = lambda a: a.tolist()  # noqa: E731
    fwd = lstm_loop(frames, as_list(p["blstm.fwd.W"]), as_list(p["blstm.fwd.U"]), as_list(p["blstm.fwd.b"]))
    bwd = lstm_loop(frames[::-1], as_list(p["blstm.bwd.W"]), as_list(p["blstm.bwd.U"]), as_list(p["blstm.bwd.b"]))
    bwd = bwd[::-1]
    t = len(frames)
    return np.array([[*fwd[i], *bwd[i]] for i in range(t)]).T


def attention_loop(h, w_t, w_tp, b_t, w_a, b_a):
    """h: (C, T). Double loop over frame pairs. Returns (C, T)."""
    c_dim, t_len = h.shape
    a_dim = w_t.shape[1]
    out = np.zeros_like(h, dtype=float)
    for t in range(t_len):
        scores = []
        for tp in range(t_len):
            e = b_a[0]
            for k in range(a_dim):
                acc = b_t[k]
                for c in range(c_dim):
                    acc += h[c, t] * w_t[c, k] + h[c, tp] * w_tp[c, k]
                e += w_a[0, k] * math.tanh(acc)
            scores.append(_sig(e))
        m = max(scores)
        ex = [math.exp(s - m) for s in scores]
        total = sum(ex)
        for tp in range(t_len):
            a = ex[tp] / total
            for c in range(c_dim):
                out[c, t] += a * h[c, tp]
    return out


def conv_loop(x, kernels, bias):
    """x: (C_in, T), kernels (N, C_in, 3): zero-padded 'same' convolution, (N, T)."""
    c_in, t_len = x.shape
    out = np.zeros((kernels.shape[0], t_len))
    for n in range(kernels.shape[0]):
        for t in range(t_len):
            acc = bias[n]
            for c in range(c_in):
                for k in range(3):
                    src = t + k - 1
                    if 0 <= src < t_len:
                        acc += kernels[n, c, k] * x[c, src]
            out[n, t] = acc
    return out


def average_ranks(values):
    """Rank 1..n with tied groups sharing the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson_direct(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(v * v for v in x)
    syy = sum(v * v for v in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def f1_sweep(scores, flags):
    """Best F1 over every threshold equal to a score value above the minimum."""
    best = -1.0
    lo = min(scores)
    for thr in sorted(set(scores)):
        if thr == lo:
            continue
        tp = sum(1 for s, f in zip(scores, flags) if s >= thr and f)
        fp = sum(1 for s, f in zip(scores, flags) if s >= thr and not f)
        fn = sum(1 for s, f in zip(scores, flags) if s < thr and f)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        best = max(best, 2 * p * r / (p + r) if p + r else 0.0)
    return best


def low_runs(values, threshold, min_len):
    """Inclusive [start, end] runs with value < threshold, by a plain scan."""
    runs, start = [], None
    for i, v in enumerate(list(values) + [float("inf")]):
        if v < threshold and start is None:
            start = i
        elif not v < threshold and start is not None:
            if i - start >= min_len:
                runs.append((start, i - 1))
            start = None
    return runs
