"""Batched line-search Newton minimizer for small smooth problems.

Each batch member is an independent problem in R^p.  The Hessian is
eigen-decomposed and its eigenvalues replaced by their absolute values
(floored), so every direction is a descent direction even where the corrected
objective is locally nonconvex.  Steps are accepted by Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ARMIJO_C = 1e-4
MAX_HALVINGS = 60


@dataclass
class BatchResult:
    x: np.ndarray
    f: np.ndarray
    f_start: np.ndarray
    grad_norm: np.ndarray
    n_iter: np.ndarray
    converged: np.ndarray
    status: list

    def member(self, b: int) -> dict:
        return {"n_iter": int(self.n_iter[b]), "grad_norm": float(self.grad_norm[b]),
                "f_start": float(self.f_start[b]), "f_end": float(self.f[b]),
                "converged": bool(self.converged[b]), "status": self.status[b]}


def _directions(g, hmat):
    w, v = np.linalg.eigh(hmat)
    aw = np.abs(w)
    floor = np.maximum(1e-8 * aw.max(axis=1, keepdims=True), 1e-12)
    aw = np.maximum(aw, floor)
    coef = np.einsum("bji,bj->bi", v, g) / aw
    return -np.einsum("bij,bj->bi", v, coef)


def newton_batch(fun, x0, max_iter: int = 500, gtol: float = 1e-8,
                 xtol: float = 1e-12) -> BatchResult:
    """Minimize a batch of objectives.

    ``fun(x, idx)`` evaluates members ``idx`` at rows ``x`` (len(idx) x p) and
    returns ``(f, g, H)``.  Member b stops when
    ``|g| < gtol * (1 + |f|)`` or when an accepted step is shorter than ``xtol``.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    nb = x.shape[0]
    all_idx = np.arange(nb)
    f, g, hmat = fun(x, all_idx)
    f_start = f.copy()
    n_iter = np.zeros(nb, dtype=int)
    converged = np.zeros(nb, dtype=bool)
    status = ["max_iter"] * nb
    active = np.ones(nb, dtype=bool)

    for _ in range(max_iter + 1):
        gn = np.linalg.norm(g, axis=1)
        bad = active & ~(np.isfinite(f) & np.all(np.isfinite(g), axis=1))
        for b in np.flatnonzero(bad):
            status[b] = "nonfinite"
        active &= ~bad
        done = active & (gn < gtol * (1.0 + np.abs(f)))
        converged |= done
        for b in np.flatnonzero(done):
            status[b] = "gradient"
        active &= ~done
        idx = np.flatnonzero(active & (n_iter < max_iter))
        if idx.size == 0:
            break
        d = _directions(g[idx], hmat[idx])
        slope = np.einsum("bi,bi->b", g[idx], d)
        t = np.ones(idx.size)
        x_new = x[idx] + d
        f_new, g_new, h_new = fun(x_new, idx)
        ok = np.isfinite(f_new) & (f_new <= f[idx] + ARMIJO_C * t * slope)
        for _ in range(MAX_HALVINGS):
            pend = np.flatnonzero(~ok)
            if pend.size == 0:
                break
            t[pend] *= 0.5
            x_new[pend] = x[idx[pend]] + t[pend, None] * d[pend]
            fp, gp, hp = fun(x_new[pend], idx[pend])
            f_new[pend], g_new[pend], h_new[pend] = fp, gp, hp
            ok[pend] = np.isfinite(fp) & (fp <= f[idx[pend]] + ARMIJO_C * t[pend] * slope[pend])
        n_iter[idx] += 1
        acc = idx[ok]
        step = np.linalg.norm(t[ok, None] * d[ok], axis=1)
        x[acc], f[acc], g[acc], hmat[acc] = x_new[ok], f_new[ok], g_new[ok], h_new[ok]
        tiny = acc[step < xtol]
        converged[tiny] = True
        for b in tiny:
            status[b] = "step"
        active[tiny] = False
        failed = idx[~ok]
        for b in failed:
            # no decrease possible: accept only when already at rounding level
            if gn[b] < 1e-6 * (1.0 + abs(f[b])):
                converged[b] = True
                status[b] = "linesearch_at_tolerance"
            else:
                status[b] = "linesearch_failed"
        active[failed] = False

    return BatchResult(x, f, f_start, np.linalg.norm(g, axis=1), n_iter, converged, status)
