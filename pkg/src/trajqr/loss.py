"""Smoothed check loss and its measurement-error corrected version.

The smoother K is the standard normal CDF.  The corrected loss is

    rho*(xi) = rho_h(xi) - (sigma2 / 2) * rho_h''(xi)

which is exact for Laplace perturbations and the two-term truncation of the
series correction for normal perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 0.3989422804014327
# Gaussian density terms are set to zero beyond this |u| (value < 1e-300).
TAIL_CUTOFF = 40.0


@dataclass(frozen=True)
class LossParams:
    tau: float
    h: float
    sigma2: float = 0.0

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.sigma2 >= 0:
            raise ValueError("sigma2 must be nonnegative")


def _pdf(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= TAIL_CUTOFF
    uu = np.where(inside, u, 0.0)
    return np.where(inside, _INV_SQRT_2PI * np.exp(-0.5 * uu * uu), 0.0)


def smoother(u, j: int = 0):
    """j-th derivative of K = Phi (j = 0..4)."""
    u = np.asarray(u, dtype=float)
    if j == 0:
        return ndtr(u)
    phi = _pdf(u)
    if j == 1:
        return phi
    u = np.clip(u, -TAIL_CUTOFF, TAIL_CUTOFF)
    if j == 2:
        return -u * phi
    if j == 3:
        return (u * u - 1.0) * phi
    if j == 4:
        return (3.0 * u - u ** 3) * phi
    raise ValueError("smoother derivatives available for j = 0..4")


def rho_tau(v, tau):
    """Check loss ``v * (tau - I(v < 0))``."""
    v = np.asarray(v, dtype=float)
    return v * (tau - (v < 0))


def rho_smooth(v, params: LossParams):
    v = np.asarray(v, dtype=float)
    return v * (params.tau - 1.0 + ndtr(v / params.h))


def vK_derivative(v, h: float, j: int):
    """j-th derivative in v of ``v * K(v / h)``, j = 1..4."""
    if j not in (1, 2, 3, 4):
        raise ValueError("j must be in 1..4")
    v = np.asarray(v, dtype=float)
    u = v / h
    return j / h ** (j - 1) * smoother(u, j - 1) + v / h ** j * smoother(u, j)


def rho_corrected(xi_hat, params: LossParams):
    xi_hat = np.asarray(xi_hat, dtype=float)
    return rho_smooth(xi_hat, params) - 0.5 * params.sigma2 * vK_derivative(xi_hat, params.h, 2)


def corrected_derivatives(xi, tau, h, sigma2):
    """Value, first and second derivative of the corrected loss.

    ``sigma2`` may be an array broadcastable against ``xi``.
    """
    u = xi / h
    big_phi = ndtr(u)
    phi = _pdf(u)
    # phi == 0 outside the cutoff; clamping keeps polynomial factors finite
    u = np.clip(u, -TAIL_CUTOFF, TAIL_CUTOFF)
    u2 = u * u
    half_s = 0.5 * sigma2
    # derivatives of v K(v/h) written through u = v/h
    d2 = phi * (2.0 - u2) / h
    d3 = phi * (u2 * u - 4.0 * u) / (h * h)
    d4 = phi * (-u2 * u2 + 7.0 * u2 - 4.0) / h ** 3
    val = xi * (tau - 1.0 + big_phi) - half_s * d2
    g1 = tau - 1.0 + big_phi + u * phi - half_s * d3
    g2 = d2 - half_s * d4
    return val, g1, g2


def batch_objective(beta, b_hat, x, sqrt_d, tau, h, sigma2, weights=None, hessian=True):
    """Corrected objective for a batch of coefficient vectors.

    beta: (B, p); b_hat: (n,) or (B, n); sigma2: scalar or (B,);
    weights: None, (n,) or (B, n).  Returns f (B,), g (B, p) and H (B, p, p).
    """
    beta = np.atleast_2d(beta)
    xi = (b_hat - beta @ x.T) / sqrt_d
    s2 = np.asarray(sigma2, dtype=float)
    if s2.ndim == 1:
        s2 = s2[:, None]
    val, g1, g2 = corrected_derivatives(xi, tau, h, s2)
    if weights is not None:
        val = val * weights
        g1 = g1 * weights
        g2 = g2 * weights
    f = np.sum(val, axis=1)
    xs = x / sqrt_d[:, None]
    g = -(g1 @ xs)
    if not hessian:
        return f, g, None
    hmat = np.einsum("bi,ij,ik->bjk", g2, xs, xs, optimize=True)
    return f, g, hmat


def corrected_objective(beta, stage1, params: LossParams, weights=None):
    """Sum of corrected losses over subjects and its gradient in beta."""
    beta = np.asarray(beta, dtype=float)
    f, g, _ = batch_objective(beta[None, :], stage1.b_hat, stage1.x, np.sqrt(stage1.d),
                              params.tau, params.h, params.sigma2, weights, hessian=False)
    return float(f[0]), g[0]
