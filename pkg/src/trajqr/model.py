"""Data model and stage-1 (per-subject) trajectory fitting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .rng import ErrorFamily

# Z'Z with reciprocal condition number below this is treated as singular.
RCOND_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    id: Hashable
    times: np.ndarray
    y: np.ndarray
    x: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if times.size < 1:
            raise ValueError(f"subject {self.id!r}: needs at least one observation")
        if times.shape != y.shape:
            raise ValueError(f"subject {self.id!r}: times and y differ in length")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(y))):
            raise ValueError(f"subject {self.id!r}: non-finite time or outcome")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"subject {self.id!r}: times must be strictly increasing")
        if x.size < 1 or x[0] != 1.0 or not np.all(np.isfinite(x)):
            raise ValueError(f"subject {self.id!r}: covariates must be finite and start with 1")
        delta = float(self.delta)
        if not (math.isfinite(delta) and delta > 0):
            raise ValueError(f"subject {self.id!r}: delta must be positive")
        for name, arr in (("times", times), ("y", y), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "delta", delta)

    @property
    def m(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class LongitudinalDataset:
    subjects: tuple
    covariate_names: tuple = ()

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise ValueError("dataset has no subjects")
        p = subjects[0].x.size
        seen = set()
        for s in subjects:
            if s.x.size != p:
                raise ValueError(f"subject {s.id!r}: covariate length {s.x.size} != {p}")
            if s.id in seen:
                raise ValueError(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
        names = tuple(self.covariate_names) or ("intercept",) + tuple(
            f"x{j}" for j in range(1, p))
        if len(names) != p:
            raise ValueError("covariate_names must have one entry per column (incl. intercept)")
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "covariate_names", names)

    @property
    def p(self) -> int:
        return self.subjects[0].x.size

    @property
    def n(self) -> int:
        return len(self.subjects)

    def canonical(self) -> "LongitudinalDataset":
        """Same data with subjects ordered by id (as text, then by type name)."""
        order = sorted(self.subjects, key=lambda s: (str(s.id), type(s.id).__name__))
        return LongitudinalDataset(tuple(order), self.covariate_names)


@dataclass(frozen=True)
class FixedBandwidth:
    h: float = 0.8

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bandwidth h must be positive")


@dataclass(frozen=True)
class AutoBandwidth:
    grid: tuple = tuple(np.round(np.arange(0.4, 1.6 + 1e-9, 0.1), 10))
    n_c: int = 20

    def __post_init__(self):
        grid = tuple(float(h) for h in self.grid)
        if len(grid) < 2:
            raise ValueError("bandwidth grid needs at least two candidates")
        if any(h <= 0 for h in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("bandwidth grid must be positive and strictly increasing")
        if self.n_c < 2:
            raise ValueError("n_c must be at least 2")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class ModelConfig:
    k: int = 1
    t_star: float = 0.0
    error_family: ErrorFamily = ErrorFamily.LAPLACE
    tau_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    bandwidth: FixedBandwidth | AutoBandwidth = field(default_factory=FixedBandwidth)
    seed: int = 0
    sigma2: float | None = None  # known error variance; None -> pooled estimate
    restarts: int = 5
    max_iter: int = 500

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError("k must be a nonnegative integer")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "error_family", ErrorFamily.parse(self.error_family))
        grid = tuple(float(t) for t in np.atleast_1d(self.tau_grid))
        if not grid or any(not 0 < t < 1 for t in grid):
            raise ValueError("tau_grid must be nonempty and inside (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("tau_grid must be strictly increasing")
        object.__setattr__(self, "tau_grid", grid)
        if self.sigma2 is not None and not self.sigma2 >= 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.restarts < 0 or self.max_iter < 1:
            raise ValueError("restarts must be >= 0 and max_iter >= 1")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def q(self) -> int:
        return self.k + 1


class ExclusionReason(str, enum.Enum):
    TOO_FEW_OBSERVATIONS = "TooFewObservations"
    SINGULAR_DESIGN = "SingularDesign"


class Excluded(NamedTuple):
    reason: ExclusionReason


class SubjectFit(NamedTuple):
    alpha_hat: np.ndarray
    b_hat: float
    d: float
    rss: float


def build_design_matrix(times, k: int) -> np.ndarray:
    """Vandermonde design with columns ``1, t, ..., t**k``."""
    t = np.asarray(times, dtype=float).reshape(-1)
    return t[:, None] ** np.arange(k + 1)


def feature_contrast(k: int, t_star: float) -> np.ndarray:
    """Contrast ``gamma`` with ``gamma @ alpha`` = slope of the trajectory at ``t_star``."""
    if k < 1:
        raise ValueError("feature undefined for constant trajectory (k = 0)")
    j = np.arange(1, k + 1)
    return np.concatenate([[0.0], j * float(t_star) ** (j - 1)])


def fit_subject(record: SubjectRecord, config: ModelConfig, gamma=None):
    """Least-squares trajectory fit for one subject.

    Returns a :class:`SubjectFit` or :class:`Excluded`.  Subjects need at least
    ``q + 1`` observations so that they contribute residual degrees of freedom.
    """
    q = config.q
    if gamma is None:
        gamma = feature_contrast(config.k, config.t_star)
    if record.m < q + 1:
        return Excluded(ExclusionReason.TOO_FEW_OBSERVATIONS)
    z = build_design_matrix(record.times, config.k)
    qmat, r = np.linalg.qr(z)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] == 0 or (sv[-1] / sv[0]) ** 2 < RCOND_MIN:
        return Excluded(ExclusionReason.SINGULAR_DESIGN)
    alpha = np.linalg.solve(r, qmat.T @ record.y)
    # gamma' (Z'Z)^-1 gamma = |R^-T gamma|^2
    w = np.linalg.solve(r.T, gamma)
    d = record.delta * float(w @ w)
    resid = (record.y - z @ alpha) / math.sqrt(record.delta)
    rss = float(resid @ resid)
    return SubjectFit(alpha, float(gamma @ alpha), d, rss)


def pooled_sigma2(rss, m, q: int) -> float:
    """Pooled residual variance ``sum(rss) / (N - q n)``."""
    rss = np.asarray(rss, dtype=float)
    m = np.asarray(m)
    dof = int(m.sum()) - q * rss.size
    if dof <= 0:
        raise ValueError("insufficient residual degrees of freedom")
    return float(np.sum(rss) / dof)


@dataclass(frozen=True, eq=False)
class StageOneResult:
    """Per-subject stage-1 quantities for the included subjects, in dataset order."""

    ids: tuple
    alpha_hat: np.ndarray  # n_used x q
    b_hat: np.ndarray
    d: np.ndarray
    rss: np.ndarray
    m: np.ndarray
    x: np.ndarray  # n_used x p
    sigma2_hat: float
    gamma: np.ndarray
    excluded: dict  # id -> ExclusionReason
    covariate_names: tuple = ()

    @property
    def n_used(self) -> int:
        return len(self.ids)

    @property
    def q(self) -> int:
        return self.gamma.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def residual_dof(self) -> int:
        return int(self.m.sum()) - self.q * self.n_used

    def with_b_hat(self, b_hat) -> "StageOneResult":
        """Copy with the proxies replaced (used for SIMEX-style perturbation)."""
        return StageOneResult(self.ids, self.alpha_hat, np.asarray(b_hat, dtype=float),
                              self.d, self.rss, self.m, self.x, self.sigma2_hat,
                              self.gamma, self.excluded, self.covariate_names)


def stage_one(dataset: LongitudinalDataset, config: ModelConfig) -> StageOneResult:
    gamma = feature_contrast(config.k, config.t_star)
    ids, alphas, bs, ds, rsss, ms, xs = [], [], [], [], [], [], []
    excluded = {}
    for s in dataset.subjects:
        fit = fit_subject(s, config, gamma)
        if isinstance(fit, Excluded):
            excluded[s.id] = fit.reason
            continue
        ids.append(s.id)
        alphas.append(fit.alpha_hat)
        bs.append(fit.b_hat)
        ds.append(fit.d)
        rsss.append(fit.rss)
        ms.append(s.m)
        xs.append(s.x)
    if not ids:
        raise ValueError("no subject has enough observations for stage-1 fitting")
    m = np.asarray(ms, dtype=int)
    rss = np.asarray(rsss)
    sigma2 = pooled_sigma2(rss, m, config.q)
    return StageOneResult(tuple(ids), np.vstack(alphas), np.asarray(bs), np.asarray(ds),
                          rss, m, np.vstack(xs), sigma2, gamma, excluded,
                          dataset.covariate_names)


def dataset_from_arrays(ids: Sequence, times: Sequence, ys: Sequence, x, delta=None,
                        covariate_names=()) -> LongitudinalDataset:
    """Build a dataset from per-subject sequences; ``x`` excludes the intercept."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(ids)
    if x.shape[0] != n:
        x = x.reshape(n, -1)
    if delta is None:
        delta = np.ones(n)
    subjects = tuple(
        SubjectRecord(ids[i], times[i], ys[i], np.concatenate([[1.0], x[i]]), float(delta[i]))
        for i in range(n))
    return LongitudinalDataset(subjects, covariate_names)
