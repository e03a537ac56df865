"""Reproducible random streams and the samplers used by the simulation code.

Every stochastic stage draws from its own Philox stream keyed by
``(seed, *keys)``.  Streams are independent of execution order, so serial and
parallel runs produce identical numbers.
"""

from __future__ import annotations

import enum
import zlib

import numpy as np

SQRT3 = float(np.sqrt(3.0))


class ErrorFamily(str, enum.Enum):
    NORMAL = "normal"
    LAPLACE = "laplace"

    @classmethod
    def parse(cls, value: "str | ErrorFamily") -> "ErrorFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown error family {value!r}; expected 'normal' or 'laplace'"
            ) from None


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(k)
    # string labels hash to a stable 32-bit word
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Generator for the substream ``(seed, *keys)``.

    Keys may be nonnegative ints or short string labels.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def tau_key(tau: float) -> int:
    """Integer stream key for a quantile level (stable to 1e-9)."""
    return int(round(float(tau) * 1e9))


def laplace(rng: np.random.Generator, variance, size=None) -> np.ndarray:
    """Classical Laplace draws with mean 0 and the given variance.

    Sampled as ``b * (E1 - E2)`` with ``E1, E2 ~ Exp(1)`` and ``b = sqrt(variance / 2)``.
    """
    b = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    if size is None:
        size = np.shape(b)
    e1 = rng.standard_exponential(size)
    e2 = rng.standard_exponential(size)
    return b * (e1 - e2)


def normal(rng: np.random.Generator, variance, size=None) -> np.ndarray:
    sd = np.sqrt(np.asarray(variance, dtype=float))
    if size is None:
        size = np.shape(sd)
    return sd * rng.standard_normal(size)


def uniform_sym(rng: np.random.Generator, half_width: float, size=None) -> np.ndarray:
    return rng.uniform(-half_width, half_width, size)


def exponential(rng: np.random.Generator, rate: float, size=None) -> np.ndarray:
    """Exponential draws parameterized by *rate* (mean ``1 / rate``)."""
    return rng.standard_exponential(size) / rate


def perturbation(rng: np.random.Generator, family: ErrorFamily, variance, size=None):
    """Mean-zero noise from ``family`` with the given (per-element) variance."""
    family = ErrorFamily.parse(family)
    if family is ErrorFamily.LAPLACE:
        return laplace(rng, variance, size)
    return normal(rng, variance, size)
