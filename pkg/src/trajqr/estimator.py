"""Naive and bias-corrected quantile regression of the trajectory feature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .loss import batch_objective
from .model import (AutoBandwidth, FixedBandwidth, LongitudinalDataset, ModelConfig,
                    StageOneResult, stage_one)
from .optimize import newton_batch
from .rng import stream, tau_key


def check_objective(beta, y, x, tau, weights=None) -> float:
    r = y - x @ beta
    loss = r * (tau - (r < 0))
    if weights is not None:
        loss = loss * weights
    return float(np.sum(loss))


def naive_qr(b_hat, x, tau: float, weights=None) -> np.ndarray:
    """Linear quantile regression of ``b_hat`` on ``x`` (exact check loss).

    Solved as a linear program.  An intercept-only, unweighted design returns
    the order statistic of rank ``ceil(n * tau)``.
    """
    y = np.asarray(b_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need more observations than coefficients (n={n}, p={p})")
    if np.linalg.matrix_rank(x) < p:
        raise ValueError("design matrix is rank deficient")
    if p == 1 and weights is None and np.all(x == x[0, 0]):
        rank = max(1, math.ceil(round(n * tau, 9)))
        return np.array([np.sort(y)[rank - 1] / x[0, 0]])

    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    c = np.concatenate([np.zeros(p), tau * w, (1.0 - tau) * w])
    a_eq = np.hstack([x, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"quantile regression LP failed: {res.message}")
    beta = res.x[:p]
    # polish: exact fit through the p best-fitting points if it is no worse
    basis = np.argsort(np.abs(y - x @ beta))[:p]
    xb = x[basis]
    if np.linalg.matrix_rank(xb) == p:
        exact = np.linalg.solve(xb, y[basis])
        if check_objective(exact, y, x, tau, w) <= check_objective(beta, y, x, tau, w):
            beta = exact
    return beta


@dataclass
class FitDiagnostics:
    tau: float
    n_iter: int
    grad_norm: float
    f_start: float
    f_end: float
    converged: bool
    status: str
    n_starts: int
    best_start: str

    @property
    def objective_decrease(self) -> float:
        return self.f_start - self.f_end


def _objective_fn(stage1: StageOneResult, tau, h, sigma2, b_hat=None, weights=None):
    sqrt_d = np.sqrt(stage1.d)
    x = stage1.x
    y = stage1.b_hat if b_hat is None else b_hat
    s2 = np.asarray(sigma2, dtype=float)

    def fun(beta, idx):
        yy = y if y.ndim == 1 else y[idx]
        ww = weights if (weights is None or weights.ndim == 1) else weights[idx]
        ss = s2 if s2.ndim == 0 else s2[idx]
        return batch_objective(beta, yy, x, sqrt_d, tau, h, ss, ww)

    return fun


def minimize_corrected(stage1, tau, h, sigma2, starts, b_hat=None, weights=None,
                       max_iter=500):
    """Run the corrected-loss minimizer from each row of ``starts``.

    ``b_hat`` (B, n), ``weights`` (B, n) and ``sigma2`` (B,) may vary by row.
    """
    fun = _objective_fn(stage1, tau, h, sigma2, b_hat, weights)
    return newton_batch(fun, np.atleast_2d(starts), max_iter=max_iter)


def fit_quantile(stage1: StageOneResult, config: ModelConfig, tau: float, h: float,
                 sigma2: float, beta_naive=None, warm_start=None):
    """Corrected estimator at one quantile level.

    Starts from the naive estimate, an optional warm start and
    ``config.restarts`` jittered copies of the naive estimate; the converged
    start with the lowest objective wins.  Returns ``(beta, FitDiagnostics)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if beta_naive is None:
        beta_naive = naive_qr(stage1.b_hat, stage1.x, tau)
    starts = [beta_naive]
    labels = ["naive"]
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
        labels.append("warm")
    scale = 0.1 * np.linalg.norm(beta_naive)
    for r in range(config.restarts):
        rng = stream(config.seed, "restart", tau_key(tau), r)
        starts.append(beta_naive + scale * rng.standard_normal(beta_naive.size))
        labels.append(f"jitter{r}")
    res = minimize_corrected(stage1, tau, h, sigma2, np.vstack(starts),
                             max_iter=config.max_iter)
    f = np.where(np.isfinite(res.f), res.f, np.inf)
    pool = np.flatnonzero(res.converged)
    if pool.size == 0:
        pool = np.arange(len(starts))
    best = pool[np.argmin(f[pool])]
    info = res.member(best)
    diag = FitDiagnostics(tau=float(tau), n_iter=info["n_iter"], grad_norm=info["grad_norm"],
                          f_start=info["f_start"], f_end=info["f_end"],
                          converged=info["converged"], status=info["status"],
                          n_starts=len(starts), best_start=labels[best])
    return res.x[best].copy(), diag


@dataclass
class QuantileFitResult:
    tau_grid: np.ndarray
    beta_naive: np.ndarray  # p x G
    beta_hat: np.ndarray  # p x G
    converged: np.ndarray
    objective_at_opt: np.ndarray
    h_used: float
    sigma2_used: float
    diagnostics: list
    stage1: StageOneResult
    covariate_names: tuple = ()
    bandwidth_search: object = None
    extra: dict = field(default_factory=dict)


def resolve_bandwidth(stage1, config: ModelConfig, sigma2: float):
    """Bandwidth to use and the search record (None for a fixed bandwidth)."""
    bw = config.bandwidth
    if isinstance(bw, FixedBandwidth):
        return bw.h, None
    if isinstance(bw, AutoBandwidth):
        from .bandwidth import select_bandwidth

        grid = np.asarray(config.tau_grid)
        tau_ref = float(grid[np.argmin(np.abs(grid - 0.5))])
        search = select_bandwidth(stage1, config, tau_ref, bw.grid, bw.n_c, sigma2)
        return search.selected, search
    raise TypeError(f"unsupported bandwidth policy {bw!r}")


def fit_stage_two(stage1: StageOneResult, config: ModelConfig, h: float, sigma2: float,
                  sweep: str = "ascending"):
    taus = np.asarray(config.tau_grid, dtype=float)
    g = taus.size
    p = stage1.p
    beta_naive = np.empty((p, g))
    beta_hat = np.empty((p, g))
    conv = np.zeros(g, dtype=bool)
    fopt = np.empty(g)
    diags = [None] * g
    order = range(g) if sweep == "ascending" else range(g - 1, -1, -1)
    prev = None
    for j in order:
        beta_naive[:, j] = naive_qr(stage1.b_hat, stage1.x, taus[j])
        beta, diag = fit_quantile(stage1, config, taus[j], h, sigma2,
                                  beta_naive=beta_naive[:, j], warm_start=prev)
        beta_hat[:, j] = beta
        conv[j] = diag.converged
        fopt[j] = diag.f_end
        diags[j] = diag
        if diag.converged:
            prev = beta
    return beta_naive, beta_hat, conv, fopt, diags


def fit_all(dataset: LongitudinalDataset, config: ModelConfig,
            sweep: str = "ascending") -> QuantileFitResult:
    """Stage 1, variance estimate, bandwidth and the per-tau fits.

    Subjects are processed in canonical (id) order, so the result does not
    depend on the order of ``dataset.subjects``.
    """
    if sweep not in ("ascending", "descending"):
        raise ValueError("sweep must be 'ascending' or 'descending'")
    dataset = dataset.canonical()
    s1 = stage_one(dataset, config)
    sigma2 = s1.sigma2_hat if config.sigma2 is None else float(config.sigma2)
    h, search = resolve_bandwidth(s1, config, sigma2)
    bn, bh, conv, fopt, diags = fit_stage_two(s1, config, h, sigma2, sweep)
    return QuantileFitResult(np.asarray(config.tau_grid), bn, bh, conv, fopt, float(h),
                             float(sigma2), diags, s1, dataset.covariate_names, search)
