"""Noise schedule and closed-form forward process.

The forward chain adds Gaussian noise with per-step variance beta_t; the
cumulative signal-retention product alpha_bar_t lets any x_t be sampled in
one shot:

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps

Timesteps are 0-based here: t in [0, T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta_t, alpha_t and alpha_bar_t arrays.

    betas must be nondecreasing and inside (0,1); alpha_bars is then
    automatically strictly decreasing in (0,1).
    """

    betas: np.ndarray
    alphas: np.ndarray = field(default=None)  # type: ignore[assignment]
    alpha_bars: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigurationError("betas must be a nonempty 1-d array")
        if betas.min() <= 0.0 or betas.max() >= 1.0:
            raise ConfigurationError("betas must lie strictly inside (0,1)")
        if np.any(np.diff(betas) < 0):
            raise ConfigurationError("betas must be nondecreasing in t")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def check_step(self, t: int) -> int:
        if not 0 <= t < self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T})")
        return int(t)


def make_linear_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linear beta ramp from beta_start to beta_end over T steps."""
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(betas=betas)


def forward_sample(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Closed-form noising: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = schedule.check_step(t)
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


class NoisePredictor:
    """Interface for the learned noise estimator eps_theta(x_t, t).

    ``predict`` must be deterministic for fixed weights and return an array
    of the same shape as its input.
    """

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Default batched path; backends override with something faster."""
        return np.stack([self.predict(x, int(t)) for x, t in zip(xs, ts)])


def training_loss(
    predictor: NoisePredictor,
    x0: np.ndarray,
    t: int,
    eps: np.ndarray,
    schedule: NoiseSchedule,
) -> float:
    """Mean squared error between eps and the predicted noise at step t."""
    xt = forward_sample(x0, t, eps, schedule)
    eps_hat = predictor.predict(xt, t)
    if eps_hat.shape != eps.shape:
        raise ValueError(
            f"predictor output shape {eps_hat.shape} != noise shape {eps.shape}"
        )
    diff = eps_hat.astype(np.float64) - eps.astype(np.float64)
    return float(np.mean(diff * diff))
