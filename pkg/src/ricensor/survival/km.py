"""Kaplan-Meier distribution functions and inverse-CDF sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepCdf:
    """Right-continuous step distribution function.

    ``values[k]`` is the CDF on ``[jump_times[k], jump_times[k + 1])``. The
    CDF is 0 before the first jump and ``terminal_value`` after the last one;
    ``terminal_value < 1`` when the largest observation was censored.
    """

    jump_times: np.ndarray
    values: np.ndarray
    degenerate: bool = False

    @property
    def terminal_value(self) -> float:
        return float(self.values[-1]) if self.values.size else 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = np.searchsorted(self.jump_times, x, side="right")
        padded = np.concatenate([[0.0], self.values])
        out = padded[k]
        return out if out.ndim else float(out)

    def inverse(self, u):
        """Generalized inverse: smallest jump time whose CDF value is ``>= u``.

        Only meaningful for ``0 < u <= terminal_value``.
        """
        u = np.asarray(u, dtype=np.float64)
        k = np.searchsorted(self.values, u, side="left")
        if np.any(k >= self.jump_times.size):
            raise ValueError("u exceeds the terminal value of the distribution")
        out = self.jump_times[k]
        return out if out.ndim else float(out)


def km_cdf(times, events) -> StepCdf:
    """Product-limit estimate of the distribution function ``1 - S(t)``.

    At tied times events are processed before censorings, so censored
    individuals at ``t`` are still at risk for events at ``t``. With no events
    the result has no jumps and is flagged ``degenerate``.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if times.shape != events.shape or times.ndim != 1:
        raise ValueError("times and events must be 1-d arrays of equal length")
    if not np.all(times > 0):
        raise ValueError("times must be strictly positive")
    ev = events.astype(bool)
    if not ev.any():
        return StepCdf(np.empty(0), np.empty(0), degenerate=True)
    ts = np.sort(times)
    uniq, d = np.unique(times[ev], return_counts=True)
    at_risk = ts.size - np.searchsorted(ts, uniq, side="left")
    surv = np.cumprod(1.0 - d / at_risk)
    return StepCdf(uniq, 1.0 - surv)


@dataclass(frozen=True)
class ArmCensoring:
    """Censoring-time distribution for one treatment arm."""

    cdf: StepCdf
    y_max: float
    max_is_censoring: bool


def km_censoring_by_group(Y, D, Z) -> tuple[ArmCensoring, ArmCensoring]:
    """Arm-specific KM estimates of the censoring distribution.

    Built on the observed times with indicators ``1 - D``. Returns the
    ``(Z=0, Z=1)`` pair.
    """
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D).astype(bool)
    Z = np.asarray(Z).astype(bool)
    arms = []
    for arm in (False, True):
        sel = Z == arm
        if not sel.any():
            raise ValueError(f"treatment arm Z={int(arm)} is empty")
        y, d = Y[sel], D[sel]
        cdf = km_cdf(y, ~d)
        y_max = float(y.max())
        arms.append(ArmCensoring(cdf, y_max, bool(np.any(~d[y == y_max]))))
    return arms[0], arms[1]


def sample_truncated(cdf: StepCdf, lower, cap, u):
    """Draw from ``cdf`` restricted to ``(lower, inf)`` with a cap.

    A uniform ``u`` in ``(0, 1]`` is mapped to ``u' = F(lower) + u (1 - F(lower))``;
    the draw is ``F^{-1}(u')`` when ``u' <= F(cap)`` and ``cap`` otherwise.
    Broadcasts over ``lower``, ``cap`` and ``u``.
    """
    lower = np.asarray(lower, dtype=np.float64)
    cap = np.asarray(cap, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    lower, cap, u = np.broadcast_arrays(lower, cap, u)
    f_lo = cdf(lower)
    uu = f_lo + u * (1.0 - f_lo)
    # no mass above lower: fall back to the cap
    inside = (uu <= cdf(cap)) & (f_lo < 1.0)
    out = cap.astype(np.float64, copy=True)
    if np.any(inside):
        k = np.searchsorted(cdf.values, uu[inside], side="left")
        out[inside] = cdf.jump_times[k]
    return out if out.ndim else float(out)
