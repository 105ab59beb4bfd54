"""Noise schedules alpha(t) = exp(-sigma(t)) and the gamma = log(1 - alpha) reparameterisation.

Each schedule keeps alpha strictly decreasing from ~1 at t=0 to ~0 at t=1.
``1 - alpha`` is evaluated in a cancellation-free form per schedule so the
gamma map stays accurate near t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidSteps

KINDS = ("log_linear", "cosine", "cosine_squared", "linear")
HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "log_linear"
    sigma_max: float = 1e8
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma_max <= 0:
            raise ValueError("sigma_max must be positive")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")

    def clamp(self, t):
        return np.clip(t, self.eps, 1.0 - self.eps)

    # all methods accept scalars or arrays

    def sigma(self, t):
        t = self.clamp(t)
        if self.kind == "log_linear":
            return -np.log1p(-t)
        if self.kind == "cosine":
            return -np.log(np.cos(HALF_PI * t))
        if self.kind == "cosine_squared":
            return -2.0 * np.log(np.cos(HALF_PI * t))
        return self.sigma_max * t

    def alpha(self, t):
        t = self.clamp(t)
        if self.kind == "log_linear":
            return 1.0 - t
        if self.kind == "cosine":
            return np.cos(HALF_PI * t)
        if self.kind == "cosine_squared":
            return np.cos(HALF_PI * t) ** 2
        return np.exp(-self.sigma_max * t)

    def one_minus_alpha(self, t):
        t = self.clamp(t)
        if self.kind == "log_linear":
            return t * np.ones_like(t)
        if self.kind == "cosine":
            return 2.0 * np.sin(0.5 * HALF_PI * t) ** 2
        if self.kind == "cosine_squared":
            return np.sin(HALF_PI * t) ** 2
        return -np.expm1(-self.sigma_max * t)

    def alpha_prime(self, t):
        t = self.clamp(t)
        if self.kind == "log_linear":
            return -np.ones_like(t, dtype=np.float64)
        if self.kind == "cosine":
            return -HALF_PI * np.sin(HALF_PI * t)
        if self.kind == "cosine_squared":
            return -HALF_PI * np.sin(math.pi * t)
        return -self.sigma_max * np.exp(-self.sigma_max * t)

    def sigma_prime(self, t):
        """d sigma / dt = -alpha'/alpha, finite even where alpha underflows."""
        t = self.clamp(t)
        if self.kind == "log_linear":
            return 1.0 / (1.0 - t)
        if self.kind == "cosine":
            return HALF_PI * np.tan(HALF_PI * t)
        if self.kind == "cosine_squared":
            return math.pi * np.tan(HALF_PI * t)
        return self.sigma_max * np.ones_like(t, dtype=np.float64)

    def weight(self, t):
        """Continuous-time NELBO weight alpha'(t) / (1 - alpha(t)); always negative."""
        return self.alpha_prime(t) / self.one_minus_alpha(t)

    def gamma(self, t):
        return np.log(self.one_minus_alpha(t))

    @property
    def gamma_range(self) -> tuple[float, float]:
        return float(self.gamma(self.eps)), float(self.gamma(1.0 - self.eps))

    def t_of_gamma(self, g, strict: bool = True):
        """Inverse of :meth:`gamma`.

        With ``strict`` the argument must lie in the image of the clamped time
        domain; otherwise the unclamped inverse is returned (used to feed a time
        input to the denoiser during gamma-space quadrature).
        """
        g = np.asarray(g, dtype=np.float64)
        if strict:
            lo, hi = self.gamma_range
            slack = 1e-12 * max(1.0, abs(lo))
            if np.any(g < lo - slack) or np.any(g > hi + slack):
                raise DomainError(f"gamma outside [{lo:.6g}, {hi:.6g}]")
        if np.any(g > 0):
            raise DomainError("gamma must be <= 0")
        if self.kind == "log_linear":
            t = np.exp(g)
        elif self.kind == "cosine":
            t = (4.0 / math.pi) * np.arcsin(np.sqrt(0.5 * np.exp(g)))
        elif self.kind == "cosine_squared":
            t = (2.0 / math.pi) * np.arcsin(np.exp(0.5 * g))
        else:
            with np.errstate(divide="ignore"):
                t = -np.log1p(-np.exp(g)) / self.sigma_max
        return float(t) if t.ndim == 0 else t

    def gamma_of_t(self, t):
        return self.gamma(t)

    def mean_mask_fraction(self) -> float:
        """E_{t~U[0,1]}[1 - alpha(t)]; exactly 0.5 for the log-linear schedule."""
        if self.kind == "log_linear":
            return 0.5
        from scipy.integrate import quad

        val, _ = quad(lambda t: float(self.one_minus_alpha(t)), 0.0, 1.0, limit=200, points=[1.0 / self.sigma_max] if self.kind == "linear" else None)
        return val


def discrete_alpha_grid(T: int) -> np.ndarray:
    """alpha_{t(i)} = 1 - (i+1)/(T+1) for i = 0..T (first T/(T+1), last exactly 0)."""
    if int(T) != T or T < 1:
        raise InvalidSteps(f"number of steps must be a positive integer, got {T}")
    T = int(T)
    i = np.arange(T + 1)
    return 1.0 - (i + 1) / (T + 1)


def discrete_times(T: int) -> np.ndarray:
    """Nominal time t(i) = (i+1)/(T+1) paired with each grid level (the log-linear preimage)."""
    discrete_alpha_grid(T)
    return (np.arange(T + 1) + 1) / (T + 1)
