"""Monte-Carlo designs for the trajectory quantile regression studies.

All linear cases share::

    Y_ij = a_i + b_i t_ij + eps_ij
    b_i  = 2 + X1 + X2 + (0.1 + X1 + X2) e_i,   e_i ~ N(0, 1)
    a_i ~ Exp(rate 0.8), X1 ~ U(0, 0.5), X2 ~ Bernoulli(0.5)
    m_i = floor(4 + U(0, 6)), times = Poisson process with rate 0.8

so Q_B(tau | X) = (2 + 0.1 z_tau) + (1 + z_tau) X1 + (1 + z_tau) X2.

Cases 1 and 3 use the classical (symmetric, variance-parameterized) Laplace
law for the trajectory errors.  Cases 3 and 4 divide the error by (1 + X1),
which makes the known variance multiplier delta = (1 + X1)^-2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .model import LongitudinalDataset, SubjectRecord, feature_contrast
from .rng import SQRT3, ErrorFamily, exponential, laplace, normal, stream, uniform_sym


class Case(str, enum.Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    CASE4 = "case4"
    QUADRATIC_LAPLACE = "quadratic_laplace"
    QUADRATIC_NORMAL = "quadratic_normal"
    ROBUST_UNIFORM = "robust_uniform"

    @classmethod
    def parse(cls, value) -> "Case":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"quadraticlaplace": "quadratic_laplace",
                   "quadraticnormal": "quadratic_normal",
                   "robustuniform": "robust_uniform", "uniform": "robust_uniform"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown scenario {value!r}; choose one of {names}") from None


# (error law, scaled by 1/(1+X1), polynomial order, t_star, family assumed when fitting)
_DESIGNS = {
    Case.CASE1: ("laplace", False, 1, 0.0, ErrorFamily.LAPLACE),
    Case.CASE2: ("normal", False, 1, 0.0, ErrorFamily.NORMAL),
    Case.CASE3: ("laplace", True, 1, 0.0, ErrorFamily.LAPLACE),
    Case.CASE4: ("normal", True, 1, 0.0, ErrorFamily.NORMAL),
    Case.QUADRATIC_LAPLACE: ("laplace", True, 2, 1.0, ErrorFamily.LAPLACE),
    Case.QUADRATIC_NORMAL: ("normal", True, 2, 1.0, ErrorFamily.NORMAL),
    Case.ROBUST_UNIFORM: ("uniform", False, 1, 0.0, ErrorFamily.LAPLACE),
}


@dataclass(frozen=True)
class SimScenario:
    case: Case
    n: int
    seed: int = 0
    time_rate: float = 0.8
    intercept_rate: float = 0.8  # linear cases
    quad_rate: float = 0.15  # quadratic cases: a_i and c_i
    error_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "case", Case.parse(self.case))
        if self.n < 1:
            raise ValueError("n must be at least 1")

    @property
    def k(self) -> int:
        return _DESIGNS[self.case][2]

    @property
    def t_star(self) -> float:
        return _DESIGNS[self.case][3]

    @property
    def error_family(self) -> ErrorFamily:
        return _DESIGNS[self.case][4]

    def with_seed(self, seed: int) -> "SimScenario":
        return replace(self, seed=seed)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: LongitudinalDataset
    alpha: np.ndarray  # n x q hidden trajectory coefficients
    b: np.ndarray  # hidden features B_i
    eps: tuple  # per-subject error vectors
    scenario: SimScenario = field(repr=False, default=None)


def truth(tau) -> np.ndarray:
    """True (beta0, beta1, beta2) at ``tau`` (shape (3,) or (3, len(tau)))."""
    z = norm.ppf(tau)
    return np.array([2.0 + 0.1 * z, 1.0 + z, 1.0 + z])


def generate(scenario: SimScenario) -> SimulatedData:
    """Simulate one dataset together with its hidden truth."""
    law, scaled, k, t_star, _ = _DESIGNS[scenario.case]
    n = scenario.n
    rng = stream(scenario.seed, "simgen")
    x1 = rng.uniform(0.0, 0.5, n)
    x2 = (rng.uniform(0.0, 1.0, n) < 0.5).astype(float)
    e = rng.standard_normal(n)
    slope = 2.0 + x1 + x2 + (0.1 + x1 + x2) * e
    if k == 1:
        a = exponential(rng, scenario.intercept_rate, n)
        alpha = np.column_stack([a, slope])
    else:
        a = exponential(rng, scenario.quad_rate, n)
        c = exponential(rng, scenario.quad_rate, n)
        # slope at t_star is B = b + 2 c t_star; store the linear coefficient b
        alpha = np.column_stack([a, slope - 2.0 * c * t_star, c])
    m = np.floor(4.0 + rng.uniform(0.0, 6.0, n)).astype(int)
    m = np.minimum(m, 9)
    gamma = feature_contrast(k, t_star)
    subjects, eps_all = [], []
    for i in range(n):
        gaps = exponential(rng, scenario.time_rate, m[i])
        t = np.cumsum(gaps)
        if law == "laplace":
            eps = laplace(rng, scenario.error_variance, m[i])
        elif law == "normal":
            eps = normal(rng, scenario.error_variance, m[i])
        else:
            eps = uniform_sym(rng, SQRT3 / 2.0, m[i])
        delta = 1.0
        if scaled:
            eps = eps / (1.0 + x1[i])
            delta = (1.0 + x1[i]) ** -2
        z = t[:, None] ** np.arange(k + 1)
        y = z @ alpha[i] + eps
        subjects.append(SubjectRecord(i, t, y, np.array([1.0, x1[i], x2[i]]), delta))
        eps_all.append(eps)
    b = alpha @ gamma
    ds = LongitudinalDataset(tuple(subjects), ("intercept", "x1", "x2"))
    return SimulatedData(ds, alpha, b, tuple(eps_all), scenario)


def ks_distance(sample, cdf) -> float:
    """Kolmogorov-Smirnov distance between a sample and a CDF callable."""
    s = np.sort(np.asarray(sample, dtype=float))
    n = s.size
    f = cdf(s)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def laplace_cdf(x, variance: float = 1.0):
    b = math.sqrt(variance / 2.0)
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(x / b), 1.0 - 0.5 * np.exp(-x / b))


@dataclass
class ReplicationReport:
    """Aggregates over replicates; arrays are coefficient x tau."""

    scenario: SimScenario
    tau_grid: np.ndarray
    coef_names: tuple
    n_reps: int
    n_failed: int
    bias_naive: np.ndarray
    bias_proposed: np.ndarray
    sd_naive: np.ndarray
    sd_proposed: np.ndarray
    ese_proposed: np.ndarray
    coverage_proposed: np.ndarray
    ese_naive: np.ndarray
    coverage_naive: np.ndarray
    estimates_proposed: np.ndarray = field(repr=False, default=None)  # reps x p x G
    estimates_naive: np.ndarray = field(repr=False, default=None)

    def rows(self):
        """Plot-ready rows: tau, coef, bias_naive, bias_proposed, sd, ese, coverage."""
        for j, tau in enumerate(self.tau_grid):
            for c, name in enumerate(self.coef_names):
                yield (float(tau), name, float(self.bias_naive[c, j]),
                       float(self.bias_proposed[c, j]), float(self.sd_proposed[c, j]),
                       float(self.ese_proposed[c, j]), float(self.coverage_proposed[c, j]))


MAX_FAIL_FRACTION = 0.05


def _one_replicate(args):
    from .estimator import fit_all, naive_qr
    from .inference import resample_fit

    scenario, config, tau_grid, n_b, alpha, naive_inference = args
    try:
        sim = generate(scenario)
        fit = fit_all(sim.dataset, config)
        if not fit.converged.all():
            return None
        out = {"naive": fit.beta_naive, "proposed": fit.beta_hat}
        if n_b:
            draws = resample_fit(fit.stage1, config, fit.beta_hat, tau_grid, fit.h_used, n_b,
                                 alpha)
            out["se"], out["lo"], out["hi"] = draws.se, draws.ci_lower, draws.ci_upper
            if naive_inference:
                s1 = fit.stage1
                z = norm.ppf(1 - alpha / 2)
                stars = []
                for r in range(n_b):
                    w = stream(config.seed, "resample", r).standard_exponential(s1.n_used)
                    stars.append(np.column_stack(
                        [naive_qr(s1.b_hat, s1.x, t, weights=w) for t in tau_grid]))
                nse = np.std(stars, axis=0, ddof=1)
                out["nse"] = nse
                out["nlo"], out["nhi"] = fit.beta_naive - z * nse, fit.beta_naive + z * nse
        return out
    except (ValueError, RuntimeError, np.linalg.LinAlgError):
        return None


def run_replication(scenario: SimScenario, config, n_reps: int, tau_grid=None, n_b: int = 200,
                    alpha: float = 0.05, workers: int = 1,
                    naive_inference: bool = False) -> ReplicationReport:
    """Monte-Carlo study: simulate, fit, resample and compare with the truth.

    Replicate r uses dataset seed ``(scenario.seed, r)`` and fitting seed
    ``(config.seed, r)``, so the report does not depend on ``workers``.
    ``n_b = 0`` skips resampling (SE and coverage are then NaN).
    """
    from concurrent.futures import ProcessPoolExecutor

    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    if n_b == 1:
        raise ValueError("n_b must be 0 (skip) or at least 2")
    tau_grid = np.asarray(config.tau_grid if tau_grid is None else tau_grid, dtype=float)
    config = replace(config, tau_grid=tuple(tau_grid), k=scenario.k, t_star=scenario.t_star,
                     error_family=scenario.error_family)
    jobs = []
    for r in range(n_reps):
        sc = scenario.with_seed(_mix(scenario.seed, r))
        cf = replace(config, seed=_mix(config.seed, r))
        jobs.append((sc, cf, tau_grid, n_b, alpha, naive_inference))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replicate, jobs))
    else:
        results = [_one_replicate(j) for j in jobs]
    good = [r for r in results if r is not None]
    failed = n_reps - len(good)
    if failed > MAX_FAIL_FRACTION * n_reps:
        raise RuntimeError(f"{failed} of {n_reps} replicates failed")
    tr = truth(tau_grid)
    naive = np.array([r["naive"] for r in good])
    prop = np.array([r["proposed"] for r in good])
    ddof = 1 if len(good) > 1 else 0
    nan = np.full(tr.shape, np.nan)

    def cover(lo_key, hi_key):
        if lo_key not in good[0]:
            return nan.copy()
        lo = np.array([r[lo_key] for r in good])
        hi = np.array([r[hi_key] for r in good])
        return np.mean((lo <= tr) & (tr <= hi), axis=0)

    cov_p = cover("lo", "hi")
    cov_n = cover("nlo", "nhi")
    ese_p = np.mean([r["se"] for r in good], axis=0) if "se" in good[0] else nan.copy()
    ese_n = np.mean([r["nse"] for r in good], axis=0) if "nse" in good[0] else nan.copy()
    return ReplicationReport(scenario, tau_grid, ("intercept", "x1", "x2"), len(good), failed,
                             naive.mean(0) - tr, prop.mean(0) - tr, naive.std(0, ddof=ddof),
                             prop.std(0, ddof=ddof), ese_p, cov_p, ese_n, cov_n, prop, naive)


def _mix(seed: int, r: int) -> int:
    """Per-replicate 64-bit seed derived from a base seed."""
    return int(stream(seed, "replicate", r).integers(0, 2 ** 63))
