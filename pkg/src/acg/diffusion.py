"""Variance-preserving diffusion timeline and its elementary transitions.

Timesteps t run over {1..T} for noise levels; t = 0 is the clean state, with
alpha_bar(0) == 1 by convention. All transitions are pure functions of their
inputs and the generator state.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, InvalidRange, StepOutOfRange
from .numerics import RngStream

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "forward_noise",
    "tweedie_x0",
    "posterior_step",
    "renoise",
]


class NoiseSchedule:
    """Per-step noise rates beta_t, alpha_t = 1 - beta_t, alpha_bar_t = prod alpha.

    Arrays are 0-indexed internally (beta[0] is beta_1); the *_t accessors take
    the 1-based timestep. alpha_bar is strictly decreasing by construction and
    asserted on it.
    """

    def __init__(self, beta):
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.size < 2:
            raise InvalidRange("a schedule needs at least 2 steps")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise InvalidRange("beta entries must lie in (0, 1)")
        self.beta = beta
        self.alpha = 1.0 - beta
        self.alpha_bar = np.cumprod(self.alpha)
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise InvalidRange("alpha_bar must be strictly decreasing")
        for arr in (self.beta, self.alpha, self.alpha_bar):
            arr.flags.writeable = False

    @property
    def T(self) -> int:
        return self.beta.size

    def _check(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if t < lo or t > self.T:
            raise StepOutOfRange(f"t={t} outside [{lo}, {self.T}]")
        return t

    def beta_t(self, t: int) -> float:
        return float(self.beta[self._check(t) - 1])

    def alpha_t(self, t: int) -> float:
        return float(self.alpha[self._check(t) - 1])

    def alpha_bar_t(self, t: int) -> float:
        t = self._check(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def __repr__(self) -> str:
        return f"NoiseSchedule(T={self.T}, beta=[{self.beta[0]:g}..{self.beta[-1]:g}])"


def linear_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated from beta_min to beta_max, both inclusive.

    Defaults give the standard timeline; T=200 with the same endpoints is the
    desk-scale default used throughout the configs.
    """
    if T < 2:
        raise InvalidRange("T must be >= 2")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise InvalidRange("need 0 < beta_min <= beta_max < 1")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T))


def forward_noise(x0, t: int, sched: NoiseSchedule, rng: RngStream) -> np.ndarray:
    """Forward kernel: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0 = np.asarray(x0, dtype=float)
    ab = sched.alpha_bar_t(sched._check(t))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)


def tweedie_x0(x_t, score, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Clean-state prediction (x_t + (1 - ab_t) * score) / sqrt(ab_t)."""
    x_t = np.asarray(x_t, dtype=float)
    score = np.asarray(score, dtype=float)
    if x_t.shape != score.shape:
        raise DimensionMismatch(f"state {x_t.shape} vs score {score.shape}")
    ab = sched.alpha_bar_t(t)
    return (x_t + (1.0 - ab) * score) / np.sqrt(ab)


def posterior_step(x_t, x0_hat, t: int, sched: NoiseSchedule, rng: RngStream,
                   noise=None) -> np.ndarray:
    """One reverse transition t -> t-1.

    mean = sqrt(ab_{t-1}) beta_t / (1 - ab_t) * x0_hat
         + sqrt(a_t) (1 - ab_{t-1}) / (1 - ab_t) * x_t
    var  = (1 - ab_{t-1}) / (1 - ab_t) * beta_t

    At t = 1 the step is deterministic (zero variance) and, since
    1 - ab_1 = beta_1, returns x0_hat exactly. `noise` substitutes the
    standard-normal draw (the driver assembles mixed shared/private
    innovations with it); when given, rng is untouched.
    """
    t = sched._check(t)
    x_t = np.asarray(x_t, dtype=float)
    x0_hat = np.asarray(x0_hat, dtype=float)
    ab_t = sched.alpha_bar_t(t)
    ab_prev = sched.alpha_bar_t(t - 1)
    beta_t = sched.beta_t(t)
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    ct = np.sqrt(sched.alpha_t(t)) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = c0 * x0_hat + ct * x_t
    if t == 1:
        return mean
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    eps = rng.standard_normal(x_t.shape) if noise is None else np.asarray(noise, dtype=float)
    return mean + np.sqrt(var) * eps


def renoise(x_t, t: int, j: int, H: float, sched: NoiseSchedule, rng: RngStream,
            noise=None) -> np.ndarray:
    """Backtracking jump t -> t+j: sqrt(ab_{t+j}/ab_t) x_t + H sqrt(1 - ab_{t+j}/ab_t) eps.

    The heat height H in (0, 1] scales only the injected noise, not the
    deterministic shrink; H = 1 reproduces the exact forward kernel from t to
    t+j. `noise` substitutes the standard-normal draw.
    """
    if j < 1:
        raise StepOutOfRange("jump size must be >= 1")
    t = int(t)
    if t < 0 or t + j > sched.T:
        raise StepOutOfRange(f"jump {t} -> {t + j} leaves [0, {sched.T}]")
    if not (0.0 < H <= 1.0):
        raise InvalidRange("heat height must lie in (0, 1]")
    x_t = np.asarray(x_t, dtype=float)
    ratio = sched.alpha_bar_t(t + j) / sched.alpha_bar_t(t)
    eps = rng.standard_normal(x_t.shape) if noise is None else np.asarray(noise, dtype=float)
    return np.sqrt(ratio) * x_t + H * np.sqrt(1.0 - ratio) * eps
