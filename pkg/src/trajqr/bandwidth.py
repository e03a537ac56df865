"""Simulation-extrapolation choice of the smoothing bandwidth h.

For each candidate h the proxies are perturbed once (B*) and twice (B**) with
noise of the assumed error family and variance sigma2 * D_i.  M1(h) measures
how far fits on B* move from the fit on B_hat, M2(h) how far fits on B** move
from the paired fits on B*, each in the metric of the sample covariance of the
deviations.  With h1 = argmin M1 and h2 = argmin M2 the selected bandwidth is
the log-linear back-extrapolation h1**2 / h2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimator import fit_quantile, minimize_corrected
from .rng import perturbation, stream, tau_key

log = logging.getLogger(__name__)

RIDGE = 1e-10


@dataclass
class BandwidthSearch:
    h_grid: np.ndarray
    n_c: int
    tau: float
    selected: float
    h1: float
    h2: float
    m1_curve: np.ndarray
    m2_curve: np.ndarray
    disqualified: list = field(default_factory=list)
    ridged: list = field(default_factory=list)  # (h, "S*" | "S**") where a ridge was added


def extrapolate(h1: float, h2: float) -> float:
    # h1 * (h1 / h2) rather than h1**2 / h2: exact fixed point when h1 == h2
    return h1 * (h1 / h2)


def criterion(dev) -> tuple[float, bool]:
    """Mean of ``d' S^-1 d`` over the rows of ``dev``, S their sample covariance.

    Returns the value and whether S had to be ridged to be invertible.
    """
    dev = np.asarray(dev, dtype=float)
    nc, p = dev.shape
    s = np.atleast_2d(np.cov(dev, rowvar=False))
    ridged = False
    try:
        # cholesky fails on singular/indefinite S
        chol = np.linalg.cholesky(s)
        if np.min(np.diag(chol)) ** 2 < 1e-14 * max(np.trace(s) / p, 1e-300):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridged = True
        tr = np.trace(s)
        s = s + (RIDGE * tr / p if tr > 0 else RIDGE) * np.eye(p)
    sol = np.linalg.solve(s, dev.T)
    return float(np.mean(np.einsum("ij,ji->i", dev, sol))), ridged


def _argmin_first(curve) -> int:
    c = np.where(np.isfinite(curve), curve, np.inf)
    if not np.isfinite(c).any():
        raise RuntimeError("every bandwidth candidate was disqualified")
    return int(np.flatnonzero(c == c.min())[0])  # ties -> smallest h


def select_bandwidth(stage1, config, tau: float, h_grid, n_c: int, sigma2: float,
                     noise_scale: float = 1.0) -> BandwidthSearch:
    """Grid search for h at quantile level ``tau``.

    ``noise_scale`` multiplies the injected perturbations (0 is a test hook:
    all curves become flat and the smallest grid value is returned).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.size < 2:
        raise ValueError("bandwidth grid needs at least two candidates")
    if np.any(h_grid <= 0) or np.any(np.diff(h_grid) <= 0):
        raise ValueError("bandwidth grid must be positive and increasing")
    if n_c < 2:
        raise ValueError("n_c must be at least 2")
    n = stage1.n_used
    sd_scale = sigma2 * stage1.d
    # the same perturbation sets are reused for every candidate h
    eta1 = np.empty((n_c, n))
    eta2 = np.empty((n_c, n))
    for c in range(n_c):
        rng = stream(config.seed, "simex", tau_key(tau), c)
        eta1[c] = perturbation(rng, config.error_family, sd_scale, n)
        eta2[c] = perturbation(rng, config.error_family, sd_scale, n)
    b1 = stage1.b_hat + noise_scale * eta1
    b2 = b1 + noise_scale * eta2

    m1 = np.full(h_grid.size, np.nan)
    m2 = np.full(h_grid.size, np.nan)
    disq, ridged = [], []
    for j, h in enumerate(h_grid):
        beta_h, diag = fit_quantile(stage1, config, tau, h, sigma2)
        if not diag.converged:
            disq.append((float(h), "base fit did not converge"))
            continue
        starts = np.tile(beta_h, (n_c, 1))
        r1 = minimize_corrected(stage1, tau, h, sigma2, starts, b_hat=b1,
                                max_iter=config.max_iter)
        r2 = minimize_corrected(stage1, tau, h, sigma2, r1.x, b_hat=b2,
                                max_iter=config.max_iter)
        if not (r1.converged.all() and r2.converged.all()):
            disq.append((float(h), "replicate fit did not converge"))
            continue
        m1[j], f1 = criterion(r1.x - beta_h)
        m2[j], f2 = criterion(r2.x - r1.x)
        if f1:
            ridged.append((float(h), "S*"))
        if f2:
            ridged.append((float(h), "S**"))
    for h, why in disq:
        log.warning("bandwidth candidate h=%g disqualified: %s", h, why)
    i1, i2 = _argmin_first(m1), _argmin_first(m2)
    h1, h2 = float(h_grid[i1]), float(h_grid[i2])
    return BandwidthSearch(h_grid, n_c, float(tau), extrapolate(h1, h2), h1, h2, m1, m2,
                           disq, ridged)
