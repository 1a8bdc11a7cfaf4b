"""Reverse-process sampling: DDPM stepping and accelerated deterministic
sampling over a timestep subsequence, with trajectory hijacking.

Hijacking replaces the trajectory state at a chosen point with a weighted
blend of the state and an injected image (a character-bearing guide, or
its edge map):

    x' = mu_keep * x + mu_inject * blend

``at_step`` indices refer to positions in the shortened sampling
trajectory (0 = first denoising update from pure noise), not to raw
schedule timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoisePredictor, NoiseSchedule, forward_sample
from .errors import ConfigurationError, GenerationError


@dataclass(frozen=True)
class HijackEvent:
    at_step: int
    blend_image: np.ndarray
    mu_keep: float
    mu_inject: float
    edge_mode: bool = False
    # When set, the blend image is pushed to the noise level of the hijack
    # step via the closed-form forward process before blending.
    prenoise: bool = False

    def __post_init__(self):
        if self.mu_keep < 0 or self.mu_inject < 0 or self.mu_keep + self.mu_inject == 0:
            raise ConfigurationError(
                f"need mu_keep, mu_inject >= 0 and not both zero, "
                f"got {self.mu_keep}, {self.mu_inject}"
            )


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    eta: float = 0.0
    seed: int = 0
    hijacks: tuple = ()

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in [0,1], got {self.eta}")
        object.__setattr__(self, "hijacks", tuple(self.hijacks))
        steps_at = [h.at_step for h in self.hijacks]
        if any(not 0 <= s < self.steps for s in steps_at):
            raise ConfigurationError(f"hijack steps {steps_at} outside [0, {self.steps})")
        if any(b >= a for a, b in zip(steps_at[1:], steps_at)):
            raise ConfigurationError(f"hijack steps must be strictly increasing, got {steps_at}")


def hijack_blend(
    x_t: np.ndarray, blend: np.ndarray, mu_keep: float, mu_inject: float
) -> np.ndarray:
    if x_t.shape != blend.shape:
        raise ValueError(f"shape mismatch: {x_t.shape} vs {blend.shape}")
    return mu_keep * x_t + mu_inject * blend


def ddpm_step(
    x_t: np.ndarray,
    t: int,
    predictor: NoisePredictor,
    schedule: NoiseSchedule,
    noise: np.ndarray,
) -> np.ndarray:
    """One ancestral denoising step with sigma_t = sqrt(beta_t).

    The caller supplies the noise (pass zeros at t = 0).
    """
    t = schedule.check_step(t)
    if noise.shape != x_t.shape:
        raise ValueError(f"noise shape {noise.shape} != state shape {x_t.shape}")
    beta = schedule.betas[t]
    alpha = schedule.alphas[t]
    ab = schedule.alpha_bars[t]
    eps_hat = predictor.predict(x_t, t)
    mean = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
    return mean + np.sqrt(beta) * noise


def select_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced strictly increasing subsequence of [0, T) ending at T-1.

    Always contains 0 so the trajectory finishes at the clean end of the
    schedule.
    """
    if steps > T:
        raise ConfigurationError(f"cannot select {steps} timesteps from T={T}")
    if steps == 1:
        # a single jump must start from the noisiest timestep
        return np.array([T - 1], dtype=np.int64)
    ts = np.unique(np.round(np.linspace(0, T - 1, steps)).astype(np.int64))
    if ts.size != steps:
        raise ConfigurationError(f"{steps} steps collapse to {ts.size} distinct timesteps")
    return ts


def ddim_sample(
    predictor: NoisePredictor,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    shape: tuple,
) -> np.ndarray:
    """Run the accelerated reverse process from pure Gaussian noise.

    With eta = 0 the update is deterministic given (weights, schedule,
    cfg, shape). After the update at trajectory index j, any HijackEvent
    with at_step == j is applied before the next update. The per-step x0
    estimate is clamped to [-1, 1] — without this, prediction error
    compounds through the 1/sqrt(alpha_bar) amplification and saturates
    the output. The final image is clamped to model space.
    """
    ts = select_timesteps(schedule.T, cfg.steps)[::-1]  # descending: T-1 ... 0
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(shape).astype(np.float32)
    events = {h.at_step: h for h in cfg.hijacks}

    for j in range(cfg.steps):
        t = int(ts[j])
        ab = schedule.alpha_bars[t]
        ab_prev = schedule.alpha_bars[int(ts[j + 1])] if j + 1 < cfg.steps else 1.0

        eps_hat = predictor.predict(x, t)
        x0_hat = np.clip((x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab), -1.0, 1.0)
        if cfg.eta > 0.0 and j + 1 < cfg.steps:
            sigma = (
                cfg.eta
                * np.sqrt((1.0 - ab_prev) / (1.0 - ab))
                * np.sqrt(1.0 - ab / ab_prev)
            )
            z = rng.standard_normal(shape).astype(np.float32)
            x = (
                np.sqrt(ab_prev) * x0_hat
                + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_hat
                + sigma * z
            )
        else:
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat

        event = events.get(j)
        if event is not None:
            blend = event.blend_image
            if event.prenoise and j + 1 < cfg.steps:
                noise = rng.standard_normal(shape).astype(np.float32)
                blend = forward_sample(blend, int(ts[j + 1]), noise, schedule)
            x = hijack_blend(x, blend, event.mu_keep, event.mu_inject)

        if not np.all(np.isfinite(x)):
            raise GenerationError(f"non-finite sampler state after trajectory step {j}")

    return np.clip(x, -1.0, 1.0).astype(np.float32)
