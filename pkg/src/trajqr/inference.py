"""Perturbation-resampling inference and second-stage summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .estimator import minimize_corrected
from .rng import stream

log = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.10


def exponential_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_exponential(n)


@dataclass
class ResampleDraws:
    tau_grid: np.ndarray
    beta_hat: np.ndarray  # p x G
    beta_star: np.ndarray  # n_b_used x p x G
    sigma2_star: np.ndarray  # n_b_used
    se: np.ndarray  # p x G
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pct_lower: np.ndarray
    pct_upper: np.ndarray
    alpha: float
    n_b_requested: int
    n_b_dropped: int
    flagged: bool
    seed: int
    h: float

    @property
    def n_b(self) -> int:
        return self.beta_star.shape[0]


def resample_fit(stage1, config, beta_hat, tau_grid, h: float, n_b: int, alpha: float = 0.05,
                 sigma2_known: float | None = None, weight_sampler=exponential_weights,
                 max_iter: int | None = None) -> ResampleDraws:
    """Perturbation resampling of the corrected estimator.

    Replicate r draws subject weights ``w ~ weight_sampler`` (mean 1, variance
    1), recomputes the pooled variance with those weights (unless
    ``sigma2_known`` is given) and refits every tau from ``beta_hat``.  The
    same weights are used across tau, so each draw is a whole coefficient
    process.  A replicate whose fit fails at any tau is dropped.
    """
    if n_b < 2:
        raise ValueError("n_b must be at least 2")
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(stage1.p, tau_grid.size)
    n = stage1.n_used
    w = np.empty((n_b, n))
    for r in range(n_b):
        w[r] = weight_sampler(stream(config.seed, "resample", r), n)
    if sigma2_known is None:
        dof = stage1.residual_dof
        s2 = (np.sum(w * stage1.rss, axis=1) / dof) / (np.sum(w, axis=1) / n)
    else:
        s2 = np.full(n_b, float(sigma2_known))
    max_iter = config.max_iter if max_iter is None else max_iter
    p, g = beta_hat.shape
    star = np.empty((n_b, p, g))
    ok = np.ones(n_b, dtype=bool)
    for j, tau in enumerate(tau_grid):
        starts = np.tile(beta_hat[:, j], (n_b, 1))
        res = minimize_corrected(stage1, tau, h, s2, starts, weights=w, max_iter=max_iter)
        star[:, :, j] = res.x
        ok &= res.converged
    dropped = int(n_b - ok.sum())
    flagged = dropped > MAX_DROP_FRACTION * n_b
    if flagged:
        log.warning("%d of %d resampling replicates dropped", dropped, n_b)
    star = star[ok]
    if star.shape[0] < 2:
        raise RuntimeError("fewer than two resampling replicates converged")
    se = np.std(star, axis=0, ddof=1)
    z = norm.ppf(1.0 - alpha / 2.0)
    pct_lo, pct_hi = np.quantile(star, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return ResampleDraws(tau_grid, beta_hat, star, s2[ok], se, beta_hat - z * se,
                         beta_hat + z * se, pct_lo, pct_hi, float(alpha), int(n_b), dropped,
                         bool(flagged), int(config.seed), float(h))


def _window(tau_grid, tau_window):
    tau_grid = np.asarray(tau_grid, dtype=float)
    lo, hi = map(float, tau_window)
    if not lo < hi:
        raise ValueError("tau window must satisfy tau_L < tau_U")
    eps = 1e-9
    if lo < tau_grid[0] - eps or hi > tau_grid[-1] + eps:
        raise ValueError("tau window must lie within the tau grid")
    sel = np.flatnonzero((tau_grid >= lo - eps) & (tau_grid <= hi + eps))
    if sel.size < 3:
        raise ValueError("tau window must span at least two grid steps")
    return sel, lo, hi


def _trapz(y, t):
    # last axis is tau
    return np.sum(0.5 * (y[..., 1:] + y[..., :-1]) * np.diff(t), axis=-1)


def constancy_functional(beta_j, tau_grid, tau_window):
    """Integral over the window of ``1{tau > mid} * (beta_j(tau) - mean_window beta_j)``.

    ``beta_j`` may carry leading batch axes; tau is the last axis.
    """
    sel, lo, hi = _window(tau_grid, tau_window)
    t = np.asarray(tau_grid, dtype=float)[sel]
    b = np.asarray(beta_j, dtype=float)[..., sel]
    avg = _trapz(b, t) / (t[-1] - t[0])
    xi = (t > 0.5 * (lo + hi)).astype(float)
    return _trapz(xi * (b - avg[..., None]), t)


@dataclass
class ConstancyTestResult:
    j: int
    statistic: float
    lower: float
    upper: float
    reject: bool
    tau_window: tuple
    alpha: float


def constancy_test(draws: ResampleDraws, beta_hat, j: int, tau_window,
                   alpha: float = 0.05) -> ConstancyTestResult:
    """Test whether coefficient ``j`` is constant over ``tau_window``.

    The statistic is :func:`constancy_functional` of the estimate.  Critical
    values are the alpha/2 and 1 - alpha/2 quantiles of the same functional
    applied to the resampling draws centred at the estimate; the null is
    rejected when the statistic falls outside them.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    stat = float(constancy_functional(beta_hat[j], draws.tau_grid, tau_window))
    centred = draws.beta_star[:, j, :] - beta_hat[j]
    ref = constancy_functional(centred, draws.tau_grid, tau_window)
    lo, hi = np.quantile(ref, [alpha / 2.0, 1.0 - alpha / 2.0])
    if not lo < hi:
        raise RuntimeError("degenerate resampling distribution for the constancy test")
    reject = not (lo <= stat <= hi)
    return ConstancyTestResult(int(j), stat, float(lo), float(hi), bool(reject),
                               tuple(map(float, tau_window)), float(alpha))


@dataclass
class AverageEffect:
    estimate: np.ndarray
    se: np.ndarray | None
    tau_window: tuple


def average_effect(beta_hat, tau_grid, tau_window, draws: ResampleDraws | None = None):
    """Trapezoidal average of each coefficient over ``tau_window``."""
    sel, lo, hi = _window(tau_grid, tau_window)
    t = np.asarray(tau_grid, dtype=float)[sel]
    b = np.asarray(beta_hat, dtype=float)[:, sel]
    est = _trapz(b, t) / (t[-1] - t[0])
    se = None
    if draws is not None:
        per_draw = _trapz(draws.beta_star[:, :, sel], t) / (t[-1] - t[0])
        se = np.std(per_draw, axis=0, ddof=1)
        worst = draws.se[:, sel].max(axis=1)
        if np.any(se > worst):
            log.warning("average-effect SE exceeds the largest pointwise SE for some coefficient")
    return AverageEffect(est, se, (lo, hi))
