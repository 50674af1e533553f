"""Confidence sets for ``(delta, tau)`` by inverting permutation tests on a grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seeding
from .causal import CausalModel, Theta
from .interference import InterferenceMatrix
from .randomize import Method, ObservedData, StatKind, run_test


def parse_axis(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive stop) or a comma-separated list of values."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid axis {text!r} is not start:stop:step")
        start, stop, step = map(float, parts)
        if step <= 0 or stop < start:
            raise ValueError(f"grid axis {text!r} needs step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        # round away the accumulated binary error of start + i * step
        return np.round(start + step * np.arange(count), 12)
    values = np.array([float(v) for v in text.split(",") if v.strip()])
    if values.size == 0:
        raise ValueError("empty grid axis")
    return np.unique(values)


@dataclass
class PvalueGrid:
    """P-values over ``delta_values x tau_values`` (rows index delta)."""

    delta_values: np.ndarray
    tau_values: np.ndarray
    pvalues: np.ndarray
    alpha: float
    method: str = Method.IPZ.value
    stat: str = StatKind.LRAFT.value
    draws: int = 0
    seed: int = 0
    model: str = ""
    errors: dict[tuple[int, int], str] = field(default_factory=dict)
    nonconverged_fits: int = 0

    def __post_init__(self) -> None:
        self.delta_values = np.asarray(self.delta_values, dtype=np.float64)
        self.tau_values = np.asarray(self.tau_values, dtype=np.float64)
        self.pvalues = np.asarray(self.pvalues, dtype=np.float64)
        if self.pvalues.shape != (self.delta_values.size, self.tau_values.size):
            raise ValueError("p-value matrix does not match the grid axes")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def included(self, alpha: float | None = None) -> np.ndarray:
        """Boolean mask of the ``1 - alpha`` confidence set (failed points excluded)."""
        a = self.alpha if alpha is None else alpha
        with np.errstate(invalid="ignore"):
            return np.nan_to_num(self.pvalues, nan=-1.0) >= a

    def confidence_set(self, alpha: float | None = None) -> list[tuple[float, float]]:
        i, j = np.nonzero(self.included(alpha))
        return [(float(self.delta_values[a]), float(self.tau_values[b])) for a, b in zip(i, j)]

    @property
    def poor_fit(self) -> bool:
        """True when no grid point reaches ``alpha``: the model fits badly."""
        return not self.included().any()

    def rows(self):
        for a, d in enumerate(self.delta_values):
            for b, t in enumerate(self.tau_values):
                yield float(d), float(t), float(self.pvalues[a, b])


def grid_seed(master: int, delta_index: int, tau_index: int) -> int:
    return seeding.derive_seed(master, delta_index, tau_index)


def invert(
    data: ObservedData,
    A: InterferenceMatrix,
    model: CausalModel,
    stat: StatKind | str,
    delta_values: Sequence[float],
    tau_values: Sequence[float],
    C: int,
    alpha: float,
    seed: int,
    method: Method | str = Method.IPZ,
    workers: int = 1,
) -> PvalueGrid:
    """Run a test at every grid point; point ``(a, b)`` uses ``grid_seed(seed, a, b)``.

    Points whose test fails are stored as ``nan`` with the error message and
    never enter the confidence set.
    """
    stat = StatKind(stat)
    deltas = np.asarray(delta_values, dtype=np.float64)
    taus = np.asarray(tau_values, dtype=np.float64)
    if deltas.size == 0 or taus.size == 0:
        raise ValueError("grid axes must be nonempty")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    pv = np.full((deltas.size, taus.size), np.nan)
    errors: dict[tuple[int, int], str] = {}
    nonconv = 0
    for a, d0 in enumerate(deltas):
        for b, t0 in enumerate(taus):
            try:
                res = run_test(
                    data, A, model, Theta(float(d0), float(t0)), stat, C,
                    grid_seed(seed, a, b), method, workers=workers,
                )[stat]
            except (ValueError, FloatingPointError) as exc:
                errors[(a, b)] = f"{type(exc).__name__}: {exc}"
                continue
            pv[a, b] = res.pvalue
            nonconv += res.nonconverged_fits
    return PvalueGrid(
        deltas, taus, pv, alpha, Method(method).value, stat.value, C, seed, model.name, errors, nonconv
    )


@dataclass(frozen=True)
class PointEstimate:
    theta: Theta
    max_pvalue: float
    tied: bool


def point_estimate(grid: PvalueGrid) -> PointEstimate:
    """Grid point with the largest p-value; ties go to smallest delta, then tau."""
    pv = np.nan_to_num(grid.pvalues, nan=-np.inf)
    best = pv.max()
    if not np.isfinite(best):
        raise ValueError("no grid point has a p-value")
    hits = np.argwhere(pv == best)  # row-major: already (delta, tau) lexicographic
    a, b = hits[0]
    return PointEstimate(Theta(float(grid.delta_values[a]), float(grid.tau_values[b])), float(best), len(hits) > 1)


@dataclass(frozen=True)
class MarginalInterval:
    values: tuple[float, ...]
    hull: tuple[float, float] | None


def marginal_interval(grid: PvalueGrid, axis: str, alpha: float | None = None) -> MarginalInterval:
    """Axis values for which some point on the slice is in the confidence set."""
    inc = grid.included(alpha)
    if axis == "delta":
        hit, axis_values = inc.any(axis=1), grid.delta_values
    elif axis == "tau":
        hit, axis_values = inc.any(axis=0), grid.tau_values
    else:
        raise ValueError(f"axis must be 'delta' or 'tau', got {axis!r}")
    vals = tuple(float(v) for v in axis_values[hit])
    return MarginalInterval(vals, (vals[0], vals[-1]) if vals else None)


@dataclass(frozen=True)
class AddInterpretation:
    direct_ratio: float  # exp(delta): treated vs untreated, same exposure
    spillover_ratio: float  # exp(tau): all vs no neighbors treated
    total_ratio: float  # exp(delta + tau): blanket coverage vs uniformity trial


def interpret_add(theta: Theta) -> AddInterpretation:
    """Multiplicative survival-time ratios implied by the additive model."""
    return AddInterpretation(math.exp(theta.delta), math.exp(theta.tau), math.exp(theta.delta + theta.tau))
