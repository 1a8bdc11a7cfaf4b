"""Noise-prediction training loop and checkpoint I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule
from .errors import ConfigurationError
from .unet import UNet, UNetConfig, UNetPredictor

CHECKPOINT_FORMAT = "captchalab-ckpt-1"


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    # When set, trains for exactly this many optimizer steps (independent
    # random batches) instead of epoch passes over the dataset.
    steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigurationError("steps, when set, must be >= 1")


def _epoch_batches(rng, n, batch, epochs):
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            yield perm[start : start + batch]


def train(
    predictor: UNetPredictor,
    images: list[np.ndarray],
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    checkpoint_name: str = "model.pt",
) -> tuple[Path, list[float]]:
    """Minimise the eps-prediction MSE over the image set.

    Every step draws a batch, a uniform t per item and unit-normal noise
    per item, all from generators seeded by cfg.seed, so the loss history
    is reproducible bit for bit.
    """
    if not images:
        raise ConfigurationError("empty training set")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ConfigurationError("training images must share one shape")

    data = torch.from_numpy(np.stack(images).transpose(0, 3, 1, 2)).float()
    module: UNet = predictor.module
    module.train()
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    alpha_bars = torch.from_numpy(schedule.alpha_bars).float()

    n = len(images)
    batch = min(cfg.batch_size, n)
    if cfg.steps is not None:
        batches = (rng.integers(0, n, size=batch) for _ in range(cfg.steps))
        total = cfg.steps
    else:
        batches = _epoch_batches(rng, n, batch, cfg.epochs)
        total = cfg.epochs * math.ceil(n / batch)

    history: list[float] = []
    for step, idx in enumerate(batches):
        x0 = data[np.asarray(idx)]
        t = torch.from_numpy(rng.integers(0, schedule.T, size=len(idx))).long()
        eps = torch.randn(x0.shape, generator=noise_gen)
        ab = alpha_bars[t][:, None, None, None]
        xt = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps

        opt.zero_grad()
        loss = torch.mean((eps - module(xt, t)) ** 2)
        value = float(loss.item())
        if not math.isfinite(value):
            raise RuntimeError(
                f"non-finite loss {value} at step {step}/{total} "
                f"(lr={cfg.learning_rate}, batch={batch}); aborting"
            )
        loss.backward()
        opt.step()
        history.append(value)

    module.eval()
    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / checkpoint_name
    save_checkpoint(path, predictor, schedule, cfg, history)
    write_loss_csv(path.with_suffix(".loss.csv"), history)
    return path, history


def save_checkpoint(
    path: Path,
    predictor: UNetPredictor,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    history: list[float],
) -> None:
    c = predictor.config
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "state_dict": predictor.module.state_dict(),
            "unet_config": {
                "image_size": c.image_size,
                "base_channels": c.base_channels,
                "level_count": c.level_count,
                "attention_levels": list(c.attention_levels),
                "time_embedding_dim": c.time_embedding_dim,
                "timesteps": c.timesteps,
            },
            "schedule_betas": schedule.betas,
            "seed": cfg.seed,
            "loss_history": history,
            # optimizer choices are ours, not externally mandated; recorded
            # so a run can be reconstructed from the checkpoint alone
            "optimizer": {"type": "adam", "lr": cfg.learning_rate, "weight_decay": 0.0, "ema": None},
        },
        path,
    )


def load_checkpoint(path) -> tuple[UNetPredictor, NoiseSchedule, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unrecognised checkpoint format {blob.get('format')!r}")
    cfg = UNetConfig(
        image_size=blob["unet_config"]["image_size"],
        base_channels=blob["unet_config"]["base_channels"],
        level_count=blob["unet_config"]["level_count"],
        attention_levels=tuple(blob["unet_config"]["attention_levels"]),
        time_embedding_dim=blob["unet_config"]["time_embedding_dim"],
        timesteps=blob["unet_config"]["timesteps"],
    )
    module = UNet(cfg)
    module.load_state_dict(blob["state_dict"])
    schedule = NoiseSchedule(betas=np.asarray(blob["schedule_betas"]))
    return UNetPredictor(module, cfg), schedule, blob


def write_loss_csv(path, history: list[float]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for i, v in enumerate(history):
            writer.writerow([i, repr(v)])
