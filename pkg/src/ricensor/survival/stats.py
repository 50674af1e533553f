"""Two-sample rank statistics: log-rank and Kolmogorov-Smirnov.

The ``*_batch`` functions take ``(k, n)`` arrays, one dataset per row, and
are what the permutation engine calls. The scalar wrappers validate inputs.
"""

from __future__ import annotations

import numpy as np


def _as_rows(*arrays):
    out = [np.atleast_2d(np.asarray(a)) for a in arrays]
    shape = out[0].shape
    if any(a.shape != shape for a in out):
        raise ValueError("input arrays must have the same shape")
    return out


def logrank_batch(times, events, group) -> tuple[np.ndarray, np.ndarray]:
    """Log-rank chi-square for each row; returns ``(stat, zero_variance)``.

    ``stat = (sum_k O1_k - E1_k)^2 / sum_k V_k`` over distinct event times,
    with the hypergeometric variance (tie corrected). Rows with zero total
    variance get statistic 0 and are flagged.
    """
    times, events, group = _as_rows(times, events, group)
    k, n = times.shape
    order = np.argsort(times, axis=1, kind="stable")
    t = np.take_along_axis(times, order, axis=1)
    e = np.take_along_axis(events, order, axis=1).astype(np.float64)
    g = np.take_along_axis(group, order, axis=1).astype(np.float64)

    start = np.ones((k, n), dtype=bool)
    start[:, 1:] = t[:, 1:] != t[:, :-1]
    flat_start = np.flatnonzero(start.ravel())
    seg = np.cumsum(start.ravel()) - 1
    d = np.bincount(seg, weights=e.ravel())
    d1 = np.bincount(seg, weights=(e * g).ravel())

    pos = flat_start % n
    row = flat_start // n
    n1 = g.sum(axis=1)
    before1 = (np.cumsum(g, axis=1) - g).ravel()[flat_start]
    r = (n - pos).astype(np.float64)
    r1 = n1[row] - before1

    frac = r1 / r
    expected = d * frac
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(r > 1, d * frac * (1.0 - frac) * (r - d) / (r - 1.0), 0.0)
    u = np.bincount(row, weights=d1 - expected, minlength=k)
    v = np.bincount(row, weights=var, minlength=k)
    zero = v <= 1e-300
    stat = np.zeros(k)
    stat[~zero] = u[~zero] ** 2 / v[~zero]
    return stat, zero


def logrank(times, events, group) -> float:
    """Two-sample log-rank chi-square statistic (larger is more extreme)."""
    times = np.asarray(times, dtype=np.float64)
    group = np.asarray(group)
    if times.ndim != 1:
        raise ValueError("logrank expects 1-d inputs")
    if group.all() or not group.any():
        raise ValueError("both groups must be nonempty")
    stat, _ = logrank_batch(times, np.asarray(events), group)
    return float(stat[0])


def ks_batch(values, group) -> np.ndarray:
    """Sup-distance between the two group ECDFs, row by row."""
    values, group = _as_rows(values, group)
    k, n = values.shape
    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    g = np.take_along_axis(group, order, axis=1).astype(np.float64)
    n1 = g.sum(axis=1, keepdims=True)
    n0 = n - n1
    diff = np.cumsum(g, axis=1) / n1 - np.cumsum(1.0 - g, axis=1) / n0
    # only compare ECDFs after the last of a run of tied values
    end = np.ones((k, n), dtype=bool)
    end[:, :-1] = v[:, :-1] != v[:, 1:]
    return np.where(end, np.abs(diff), 0.0).max(axis=1)


def ks_stat(values, group, events=None) -> float:
    """Two-sample Kolmogorov-Smirnov statistic for uncensored data."""
    values = np.asarray(values, dtype=np.float64)
    group = np.asarray(group)
    if events is not None and not np.all(np.asarray(events) == 1):
        raise ValueError("the KS statistic is only defined for uncensored data")
    if group.all() or not group.any():
        raise ValueError("both groups must be nonempty")
    return float(ks_batch(values, group)[0])
