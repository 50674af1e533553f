"""Censored log-normal accelerated failure time working model.

The log-likelihood of ``log y = q beta + sigma * eps`` with standard normal
errors and right censoring is

    sum_i D_i log{phi(e_i) / (sigma y_i)} + (1 - D_i) log{1 - Phi(e_i)},
    e_i = (log y_i - q_i beta) / sigma.

Maximisation runs Newton's method in the parametrisation
``gamma = beta / sigma, eta = 1 / sigma``, where the log-likelihood is
globally concave, so every Newton direction is an ascent direction. The
fitter is batched: many datasets of equal size are fitted together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

GRAD_TOL = 1e-8
MAX_ITER = 200
SIGMA_FLOOR = 1e-3
RIDGE = 1e-10


@dataclass(frozen=True)
class AftFit:
    beta: np.ndarray
    sigma: float
    loglik: float
    converged: bool
    iterations: int
    rank_deficient: bool = False


def design_matrix(Z, E, row_sums) -> np.ndarray:
    """Working-model covariates ``(1, Z, E, Z*E, A_i)``; batched over leading axes."""
    Z = np.asarray(Z, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    Ai = np.broadcast_to(np.asarray(row_sums, dtype=np.float64), Z.shape)
    return np.stack([np.ones_like(Z), Z, E, Z * E, Ai], axis=-1)


def _loglik_terms(logy, D, eps, log_sigma):
    """Per-observation log-likelihood contributions."""
    ev = -0.5 * eps**2 - _LOG_SQRT_2PI - log_sigma - logy
    cens = log_ndtr(-eps)
    return np.where(D, ev, cens)


def aft_loglik(y0, D, design, beta, sigma) -> float:
    """Censored log-normal log-likelihood at ``(beta, sigma)``.

    A nonfinite value is returned as-is; callers treat it as ``-inf``.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    D = np.asarray(D).astype(bool)
    X = np.asarray(design, dtype=np.float64)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    logy = np.log(y0)
    eps = (logy - X @ np.asarray(beta, dtype=np.float64)) / sigma
    return float(_loglik_terms(logy, D, eps, math.log(sigma)).sum())


def _inv_mills(eps):
    """phi(eps) / (1 - Phi(eps)), computed on the log scale."""
    return np.exp(-0.5 * eps**2 - _LOG_SQRT_2PI - log_ndtr(-eps))


def aft_score(y0, D, design, beta, sigma) -> np.ndarray:
    """Analytic gradient with respect to ``(beta, log sigma)``."""
    y0 = np.asarray(y0, dtype=np.float64)
    D = np.asarray(D).astype(bool)
    X = np.asarray(design, dtype=np.float64)
    logy = np.log(y0)
    eps = (logy - X @ np.asarray(beta, dtype=np.float64)) / sigma
    # derivative of each term with respect to eps
    s = np.where(D, -eps, -_inv_mills(eps))
    g_beta = -(X.T @ s) / sigma
    g_logsig = -(s * eps).sum() - D.sum()
    return np.concatenate([g_beta, [g_logsig]])


# --------------------------------------------------------------------------
# batched Newton in (gamma, eta)


def _olsen_parts(J, logy, D, n_events, params, want_hess=True):
    eta = params[:, -1]
    eps = (J @ params[:, :, None])[:, :, 0]
    cens = ~D
    with np.errstate(divide="ignore", invalid="ignore"):
        log_eta = np.log(np.where(eta > 0, eta, 1.0))
    terms = np.where(D, -0.5 * eps**2 - _LOG_SQRT_2PI + log_eta[:, None] - logy, 0.0)
    ec = eps[cens]
    lc = log_ndtr(-ec)
    terms[cens] = lc
    ll = np.where(eta > 0, terms.sum(axis=1), -np.inf)
    if not want_hess:
        return ll, None, None
    lam = np.exp(-0.5 * ec**2 - _LOG_SQRT_2PI - lc)
    s = -eps
    s[cens] = -lam
    w = np.ones_like(eps)
    w[cens] = np.clip(lam * (lam - ec), 0.0, 1.0)
    grad = (s[:, None, :] @ J)[:, 0, :]
    grad[:, -1] += n_events / eta
    hess = -(J.transpose(0, 2, 1) @ (J * w[:, :, None]))
    hess[:, -1, -1] -= n_events / eta**2
    return ll, grad, hess


def _ridge_solve(M, rhs):
    k = M.shape[-1]
    scale = np.maximum(np.abs(np.diagonal(M, axis1=-2, axis2=-1)).max(axis=-1), 1.0)
    M = M + (RIDGE * scale)[:, None, None] * np.eye(k)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


@dataclass
class BatchFit:
    beta: np.ndarray
    sigma: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def fit_aft_batch(
    logy: np.ndarray,
    D: np.ndarray,
    X: np.ndarray,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> BatchFit:
    """Maximum likelihood for ``k`` datasets at once.

    Parameters
    ----------
    logy : (k, n) log times
    D : (k, n) failure indicators
    X : (k, n, p) designs

    Datasets that fail to converge keep the best log-likelihood reached and
    are flagged in ``converged``.
    """
    logy = np.asarray(logy, dtype=np.float64)
    D = np.asarray(D).astype(bool)
    X = np.asarray(X, dtype=np.float64)
    k, n, p = X.shape
    Df = D.astype(np.float64)
    n_events = Df.sum(axis=1)
    if np.any(n_events == 0):
        raise ValueError("AFT fit needs at least one observed failure per dataset")

    # least squares on failures only
    XtW = X.transpose(0, 2, 1) * Df[:, None, :]
    beta0 = _ridge_solve(XtW @ X, (XtW @ logy[:, :, None])[:, :, 0])
    resid = logy - (X @ beta0[:, :, None])[:, :, 0]
    sd = np.sqrt((Df * resid**2).sum(axis=1) / n_events)
    sd = np.maximum(sd, SIGMA_FLOOR)

    J = np.concatenate([-X, logy[:, :, None]], axis=2)
    params = np.concatenate([beta0 / sd[:, None], (1.0 / sd)[:, None]], axis=1)
    best_ll = np.full(k, -np.inf)
    converged = np.zeros(k, dtype=bool)
    iterations = np.zeros(k, dtype=np.int64)
    active = np.arange(k)

    for it in range(max_iter + 1):
        if active.size == 0:
            break
        a = active
        ll, grad, hess = _olsen_parts(J[a], logy[a], D[a], n_events[a], params[a])
        best_ll[a] = ll
        done = np.abs(grad).max(axis=1) < tol
        converged[a[done]] = True
        iterations[a] = it
        if it == max_iter:
            break
        keep = ~done & np.isfinite(ll)
        a, ll, grad, hess = a[keep], ll[keep], grad[keep], hess[keep]
        if a.size == 0:
            active = a
            break
        step = _ridge_solve(-hess, grad)

        # backtracking; tolerate round-off sized decreases near the optimum
        t = np.ones(a.size)
        accepted = np.zeros(a.size, dtype=bool)
        base = params[a]
        slack = 1e-12 * (1.0 + np.abs(ll))
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            idx = np.flatnonzero(todo)
            trial = base[idx] + t[idx, None] * step[idx]
            ll_new, _, _ = _olsen_parts(
                J[a[idx]], logy[a[idx]], D[a[idx]], n_events[a[idx]], trial, want_hess=False
            )
            ok = np.isfinite(ll_new) & (ll_new >= ll[idx] - slack[idx])
            accepted[idx[ok]] = True
            params[a[idx[ok]]] = trial[ok]
            t[idx[~ok]] *= 0.5
        # stalled line searches stop where they are, unconverged
        active = a[accepted]

    gamma, eta = params[:, :-1], params[:, -1]
    sigma = 1.0 / eta
    return BatchFit(gamma * sigma[:, None], sigma, best_ll, converged, iterations)


def aft_mle(y0, D, design, restrict_to_intercept: bool = False) -> AftFit:
    """Fit the censored log-normal AFT model by maximum likelihood.

    With ``restrict_to_intercept`` only the first (constant) column is used:
    the intercept stays free and all slopes are fixed at zero.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    D = np.asarray(D).astype(bool)
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if restrict_to_intercept:
        X = X[:, :1]
    if not np.all(y0 > 0):
        raise ValueError("times must be strictly positive")
    if not D.any():
        raise ValueError("AFT fit needs at least one observed failure")
    rank_def = bool(np.linalg.matrix_rank(X) < X.shape[1])
    fit = fit_aft_batch(np.log(y0)[None], D[None], X[None])
    return AftFit(
        beta=fit.beta[0],
        sigma=float(fit.sigma[0]),
        loglik=float(fit.loglik[0]),
        converged=bool(fit.converged[0]),
        iterations=int(fit.iterations[0]),
        rank_deficient=rank_def,
    )


def lraft(y0, D, Z, exposure, row_sums) -> float:
    """Maximised full-model log-likelihood, used as the LRaft statistic.

    The intercept-only term of the likelihood ratio is constant over
    re-assignments, so it is dropped; see :func:`lraft_difference`.
    """
    return aft_mle(y0, D, design_matrix(Z, exposure, row_sums)).loglik


def lraft_difference(y0, D, Z, exposure, row_sums) -> float:
    """Full likelihood-ratio form: full-model minus intercept-only loglik."""
    X = design_matrix(Z, exposure, row_sums)
    return aft_mle(y0, D, X).loglik - aft_mle(y0, D, X, restrict_to_intercept=True).loglik


def lraft_batch(logy, D, Z, E, row_sums) -> BatchFit:
    """Batched LRaft fits; the statistic is ``result.loglik``."""
    return fit_aft_batch(logy, D, design_matrix(Z, E, row_sums))
