"""Synthetic studies: type-I error, power and coverage of the permutation tests.

A study generates a population once (network and uniformity failure times),
then for every replicate draws an assignment, generates censored outcomes and
runs the configured tests. All randomness flows from ``master_seed`` through
:func:`ricensor.seeding.derive_seed`, so tables do not depend on scheduling.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, seeding
from .causal import Theta, parse_model
from .interference import (
    InterferenceMatrix,
    exposure,
    gen_poisson_neighbors,
    gen_preferential_attachment,
    read_edge_list,
)
from .randomize import Method, ObservedData, StatKind, run_test, sample_assignment

# seed-derivation tags
_NETWORK, _UNIFORMITY, _CORRELATION, _REPLICATE, _TEST = range(5)

_RIDGE_STEPS = 80


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class SimConfig:
    n: int = 128
    m: int = 96
    network: str = "poisson"
    network_mean: float = 16.0
    network_m_edges: int = 8
    network_path: str | None = None
    symmetrize: bool = False
    mu: float = 4.5
    sigma: float = 0.25
    omega: float = math.sqrt(1.0 - 0.25**2)
    delta_true: float = 0.7
    tau_true: float = 2.8
    k: float = 1.0
    correlated: bool = False
    replicates: int = 500
    C: int = 1000
    stats: tuple[str, ...] = ("logr", "lraft")
    methods: tuple[str, ...] = ("ipz",)
    theta0: tuple[tuple[float, float], ...] = ()
    alphas: tuple[float, ...] = (0.01, 0.05, 0.1)
    model: str = "add-G"
    master_seed: int = 0
    redraw_population: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.m < self.n:
            raise ConfigError(f"need 0 < m < n, got n={self.n}, m={self.m}")
        if self.sigma <= 0 or self.omega <= 0:
            raise ConfigError("sigma and omega must be positive")
        if not 0 < self.k <= 1:
            raise ConfigError("k must lie in (0, 1]")
        if self.network not in ("poisson", "pa", "file"):
            raise ConfigError(f"unknown network kind {self.network!r}")
        if self.network == "file" and not self.network_path:
            raise ConfigError("network 'file' needs network_path")
        if self.replicates < 1 or self.C < 1:
            raise ConfigError("replicates and C must be at least 1")
        for name in ("stats", "methods", "theta0", "alphas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "theta0", tuple((float(d), float(t)) for d, t in self.theta0))
        try:
            [StatKind(s) for s in self.stats]
            [Method(s) for s in self.methods]
            parse_model(self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta0"] = [list(t) for t in self.theta0]
        for key in ("stats", "methods", "alphas"):
            d[key] = list(d[key])
        return d

    def paper_scale(self, C: int = 10_000, replicates: int = 2000) -> "SimConfig":
        return replace(self, C=C, replicates=replicates)


@dataclass(frozen=True)
class CorrelationSpec:
    rho: np.ndarray
    ridge_added: float
    factor: np.ndarray  # lower Cholesky factor of rho


# --------------------------------------------------------------------------
# generators


def gen_uniformity_iid(n: int, mu: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Log-normal uniformity failure times."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.exp(mu + sigma * rng.standard_normal(n))


def gen_correlation(A: InterferenceMatrix, rng: np.random.Generator) -> CorrelationSpec:
    """Neighbor-based correlation matrix, ridge-repaired if not positive definite.

    ``A~_ij = A_ij / A_i * U_ij`` with ``U_ij ~ Uniform(0.9, 1)`` drawn in
    edge order, and ``rho_ij = A~_ij + A~_ji``. When the Cholesky
    factorization fails, the smallest ``r`` in ``1e-8 * 2**k`` is added to the
    diagonal and the matrix rescaled to unit diagonal.
    """
    n = A.n
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    u = rng.uniform(0.9, 1.0, size=A.n_edges)
    At = np.zeros((n, n))
    if A.n_edges:
        At[rows, A.indices] = u / A.row_sums[rows]
    rho = At + At.T
    np.fill_diagonal(rho, 1.0)
    try:
        return CorrelationSpec(rho, 0.0, np.linalg.cholesky(rho))
    except np.linalg.LinAlgError:
        pass
    for step in range(_RIDGE_STEPS):
        r = 1e-8 * 2.0**step
        repaired = (rho + r * np.eye(n)) / (1.0 + r)
        try:
            return CorrelationSpec(repaired, r, np.linalg.cholesky(repaired))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("no ridge in the search range makes the correlation matrix positive definite")


def gen_uniformity_correlated(mu_vec, scale: float, spec: CorrelationSpec, rng: np.random.Generator) -> np.ndarray:
    """``exp`` of a ``N(mu_vec, scale^2 rho)`` draw."""
    mu_vec = np.broadcast_to(np.asarray(mu_vec, dtype=np.float64), (spec.rho.shape[0],))
    return np.exp(mu_vec + scale * (spec.factor @ rng.standard_normal(mu_vec.size)))


def gen_observed(
    y0_true,
    A: InterferenceMatrix,
    z,
    delta_true: float,
    tau_true: float,
    k: float,
    omega: float,
    rng: np.random.Generator,
    mu: float = 4.5,
    sigma: float = 0.25,
    correlation: CorrelationSpec | None = None,
) -> ObservedData:
    """Censored outcomes for one assignment.

    Treated individuals are censored at ``min(C', dropout)`` with
    ``log dropout ~ N(mu + tau G, omega^2)``; controls at ``k C'`` where
    ``C' = exp(mu + 2 sigma + tau)``.
    """
    y0_true = np.asarray(y0_true, dtype=np.float64)
    z = np.asarray(z, dtype=np.int8)
    G = exposure(A, z).G
    failure = y0_true * np.exp(delta_true * z + tau_true * G)
    mean = mu + tau_true * G
    if correlation is None:
        dropout = np.exp(mean + omega * rng.standard_normal(z.size))
    else:
        dropout = gen_uniformity_correlated(mean, omega, correlation, rng)
    admin = math.exp(mu + 2.0 * sigma + tau_true)
    cens = np.where(z == 1, np.minimum(admin, dropout), k * admin)
    Y = np.minimum(failure, cens)
    D = failure <= cens
    return ObservedData(Y, D, z)


# --------------------------------------------------------------------------
# study driver


@dataclass(frozen=True)
class Population:
    A: InterferenceMatrix
    y0: np.ndarray
    correlation: CorrelationSpec | None


def build_network(cfg: SimConfig, seed: int) -> InterferenceMatrix:
    rng = np.random.default_rng(seed)
    if cfg.network == "poisson":
        return gen_poisson_neighbors(cfg.n, cfg.network_mean, rng, symmetrize=cfg.symmetrize)
    if cfg.network == "pa":
        return gen_preferential_attachment(cfg.n, cfg.network_m_edges, rng)
    return read_edge_list(cfg.network_path, n=cfg.n, symmetric=cfg.symmetrize)


def build_population(cfg: SimConfig, replicate: int | None = None) -> Population:
    """Network and uniformity times; ``replicate`` selects a per-replicate redraw."""
    keys = () if replicate is None else (replicate,)
    A = build_network(cfg, seeding.derive_seed(cfg.master_seed, _NETWORK, *keys))
    correlation = None
    if cfg.correlated:
        correlation = gen_correlation(A, np.random.default_rng(seeding.derive_seed(cfg.master_seed, _CORRELATION, *keys)))
    rng = np.random.default_rng(seeding.derive_seed(cfg.master_seed, _UNIFORMITY, *keys))
    if correlation is None:
        y0 = gen_uniformity_iid(cfg.n, cfg.mu, cfg.sigma, rng)
    else:
        y0 = gen_uniformity_correlated(cfg.mu, cfg.sigma, correlation, rng)
    return Population(A, y0, correlation)


@dataclass(frozen=True)
class PvalueRow:
    replicate: int
    method: str
    stat: str
    delta0: float
    tau0: float
    pvalue: float


@dataclass
class ReplicateOutcome:
    replicate: int
    rows: list[PvalueRow] = field(default_factory=list)
    failure_fraction: tuple[float, float] = (math.nan, math.nan)  # (Z=1, Z=0)
    nonconverged: int = 0
    error: str | None = None


def run_replicate(cfg: SimConfig, pop: Population, r: int) -> ReplicateOutcome:
    out = ReplicateOutcome(r)
    try:
        if cfg.redraw_population:
            pop = build_population(cfg, r)
        rng = np.random.default_rng(seeding.derive_seed(cfg.master_seed, _REPLICATE, r))
        z = sample_assignment(cfg.n, cfg.m, rng)
        data = gen_observed(
            pop.y0, pop.A, z, cfg.delta_true, cfg.tau_true, cfg.k, cfg.omega, rng,
            mu=cfg.mu, sigma=cfg.sigma, correlation=pop.correlation,
        )
        out.failure_fraction = (float(data.D[z == 1].mean()), float(data.D[z == 0].mean()))
        model = parse_model(cfg.model)
        for j, (d0, t0) in enumerate(cfg.theta0):
            for method in cfg.methods:
                seed = seeding.derive_seed(cfg.master_seed, _TEST, r, j)
                with warnings.catch_warnings():
                    # counted in the manifest instead
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = run_test(data, pop.A, model, Theta(d0, t0), cfg.stats, cfg.C, seed, method)
                for s in cfg.stats:
                    tr = res[StatKind(s)]
                    out.nonconverged += tr.nonconverged_fits
                    out.rows.append(PvalueRow(r, Method(method).value, StatKind(s).value, d0, t0, tr.pvalue))
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        out.rows = []
        out.error = f"{type(exc).__name__}: {exc}"
    return out


# process-pool plumbing: the population is sent once per worker
_WORKER: dict = {}


def _init_worker(cfg: SimConfig, pop: Population) -> None:
    _WORKER["cfg"], _WORKER["pop"] = cfg, pop


def _worker_replicate(r: int) -> ReplicateOutcome:
    return run_replicate(_WORKER["cfg"], _WORKER["pop"], r)


@dataclass
class StudyResult:
    config: SimConfig
    rows: list[PvalueRow]
    failures: list[tuple[int, str]]
    failure_fractions: np.ndarray  # (replicates, 2): Z=1 then Z=0
    nonconverged: int
    ridge_added: float | None

    def pvalues(self, method: str, stat: str, theta0: tuple[float, float]) -> np.ndarray:
        d0, t0 = theta0
        return np.array(
            [r.pvalue for r in self.rows if r.method == method and r.stat == stat and r.delta0 == d0 and r.tau0 == t0]
        )

    def manifest(self) -> dict:
        ff = self.failure_fractions
        ok = np.isfinite(ff[:, 0])

        def summary(col):
            v = ff[ok, col]
            if v.size == 0:
                return None
            return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max())}

        return {
            "version": __version__,
            "config": self.config.to_dict(),
            "master_seed": self.config.master_seed,
            "replicates_requested": self.config.replicates,
            "replicates_completed": self.config.replicates - len(self.failures),
            "failed_replicates": [{"replicate": r, "error": e} for r, e in self.failures],
            "nonconverged_fits": self.nonconverged,
            "ridge_added": self.ridge_added,
            "p1": summary(0),
            "p0": summary(1),
        }


def default_workers() -> int:
    env = os.environ.get("RICENSOR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_study(cfg: SimConfig, workers: int = 1) -> StudyResult:
    """Run every replicate of ``cfg``; output order is by replicate index."""
    if not cfg.theta0:
        raise ConfigError("no hypotheses (theta0) configured")
    pop = build_population(cfg)
    reps = range(cfg.replicates)
    if workers <= 1:
        outcomes = [run_replicate(cfg, pop, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(cfg, pop)) as ex:
            outcomes = list(ex.map(_worker_replicate, reps, chunksize=max(1, cfg.replicates // (8 * workers))))
    rows = [row for o in outcomes for row in o.rows]
    failures = [(o.replicate, o.error) for o in outcomes if o.error is not None]
    ff = np.array([o.failure_fraction for o in outcomes], dtype=np.float64).reshape(-1, 2)
    ridge = pop.correlation.ridge_added if pop.correlation is not None else None
    return StudyResult(cfg, rows, failures, ff, sum(o.nonconverged for o in outcomes), ridge)


def run_type1(cfg: SimConfig, workers: int = 1) -> StudyResult:
    """Tests at the data-generating value under both reference distributions."""
    cfg = replace(
        cfg,
        theta0=((cfg.delta_true, cfg.tau_true),),
        methods=cfg.methods if len(cfg.methods) > 1 else ("fixed_d", "ipz"),
    )
    return run_study(cfg, workers)


def run_power(cfg: SimConfig, workers: int = 1) -> tuple[StudyResult, list[dict]]:
    """P-values over the ``theta0`` list and the rejection-rate table."""
    study = run_study(cfg, workers)
    return study, rejection_table(study)


def run_coverage(cfg: SimConfig, alpha: float = 0.05, workers: int = 1) -> tuple[StudyResult, list[dict]]:
    """Fraction of replicates whose ``1 - alpha`` set contains each grid point."""
    study = run_study(cfg, workers)
    return study, inclusion_table(study, alpha)


def _groups(study: StudyResult):
    cfg = study.config
    for method in cfg.methods:
        for stat in cfg.stats:
            for theta in cfg.theta0:
                yield Method(method).value, StatKind(stat).value, theta


def rejection_table(study: StudyResult) -> list[dict]:
    out = []
    for method, stat, theta in _groups(study):
        pv = study.pvalues(method, stat, theta)
        for alpha in study.config.alphas:
            rate = float(np.mean(pv <= alpha)) if pv.size else math.nan
            out.append(dict(method=method, stat=stat, delta0=theta[0], tau0=theta[1], alpha=alpha,
                            rejection_rate=rate, replicates=int(pv.size)))
    return out


def inclusion_table(study: StudyResult, alpha: float) -> list[dict]:
    out = []
    for method, stat, theta in _groups(study):
        pv = study.pvalues(method, stat, theta)
        freq = float(np.mean(pv >= alpha)) if pv.size else math.nan
        out.append(dict(method=method, stat=stat, delta0=theta[0], tau0=theta[1], alpha=alpha,
                        inclusion=freq, replicates=int(pv.size)))
    return out


def ecdf_sup_distance(pvalues) -> float:
    """Sup-distance between the ECDF of ``pvalues`` and the uniform CDF."""
    p = np.sort(np.asarray(pvalues, dtype=np.float64))
    n = p.size
    if n == 0:
        raise ValueError("no p-values")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - p), np.max(p - (i - 1) / n)))


# --------------------------------------------------------------------------
# output


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_pvalues_csv(rows: Sequence[PvalueRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "method", "stat", "delta0", "tau0", "pvalue"])
        for r in rows:
            w.writerow([r.replicate, r.method, r.stat, fmt(r.delta0), fmt(r.tau0), fmt(r.pvalue)])


def write_ecdf_csv(study: StudyResult, path: str | Path) -> None:
    """Sorted p-values with ranks per (method, stat, theta0) for ECDF plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "stat", "delta0", "tau0", "rank", "pvalue", "ecdf"])
        for method, stat, theta in _groups(study):
            pv = np.sort(study.pvalues(method, stat, theta))
            for i, p in enumerate(pv, start=1):
                w.writerow([method, stat, fmt(theta[0]), fmt(theta[1]), i, fmt(p), fmt(i / pv.size)])


def write_table_csv(table: Sequence[dict], path: str | Path) -> None:
    if not table:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table[0]))
        for row in table:
            w.writerow([fmt(v) for v in row.values()])
