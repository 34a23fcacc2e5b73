"""Pure-Python versions of the per-series kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``TCFORENSICS_PURE_PYTHON=1`` is set. Every function mirrors the Cython
implementation operation-for-operation so both backends agree bit-for-bit
on the same input.
"""

import math

import numpy as np


def interarrival(timestamps):
    ts = np.asarray(timestamps, dtype=np.int64).tolist()
    out = []
    dropped = 0
    for i in range(1, len(ts)):
        d = ts[i] - ts[i - 1]
        if d > 0:
            out.append(d)
        else:
            dropped += 1
    return np.array(out, dtype=np.int64), dropped


def group_starts(sorted_values, k1):
    v = np.asarray(sorted_values, dtype=np.int64).tolist()
    if not v:
        return np.zeros(0, dtype=np.int64)
    starts = [0]
    for i in range(1, len(v)):
        if abs(v[i] - v[i - 1]) / float(v[i - 1]) > k1:
            starts.append(i)
    return np.array(starts, dtype=np.int64)


def ols_slope(values):
    v = np.asarray(values, dtype=np.int64).tolist()
    n = len(v)
    if n < 2:
        return 0.0
    c = (n - 1) / 2.0
    s = 0.0
    w = 0.0
    for i in range(n):
        x = float(v[i])
        s += x
        w += (i - c) * x
    return abs(12.0 * w / (s * (n + 1)))


def epsilon_fraction(sorted_values, eps):
    v = np.asarray(sorted_values, dtype=np.int64).tolist()
    n = len(v)
    if n < 2:
        return float("nan")
    hits = 0
    for i in range(n - 1):
        if abs(v[i + 1] - v[i]) / float(v[i]) < eps:
            hits += 1
    return hits / float(n - 1)


def window_sigmas(values, window):
    v = np.asarray(values, dtype=np.int64).tolist()
    n_win = len(v) // window
    out = []
    for w in range(n_win):
        chunk = v[w * window:(w + 1) * window]
        m = 0.0
        for x in chunk:
            m += x
        m /= window
        acc = 0.0
        for x in chunk:
            acc += (x - m) * (x - m)
        out.append(math.sqrt(acc / window))
    return np.array(out, dtype=np.float64)


def regularity(values, window, cap):
    sig = window_sigmas(values, window).tolist()
    d = []
    for i in range(len(sig)):
        for j in range(i + 1, len(sig)):
            a = sig[i]
            b = sig[j]
            if a == 0.0 and b == 0.0:
                d.append(0.0)
            elif a == 0.0 or b == 0.0:
                d.append(cap)
            else:
                d.append(abs(a - b) / a)
    if not d:
        return float("nan")
    m = 0.0
    for x in d:
        m += x
    m /= len(d)
    acc = 0.0
    for x in d:
        acc += (x - m) * (x - m)
    return math.sqrt(acc / len(d))
