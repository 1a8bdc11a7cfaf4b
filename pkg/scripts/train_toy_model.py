#!/usr/bin/env python3
"""Train a small noise predictor on CPU in a few minutes.

Without --backgrounds it trains on synthetic smooth images, which is
enough to exercise the whole generation pipeline end to end.

    python scripts/train_toy_model.py --out toy-ckpt --size 64 --steps 300
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage

from captchalab.arrays import to_model_space
from captchalab.diffusion import make_linear_schedule
from captchalab.generator import load_backgrounds
from captchalab.training import TrainConfig, train
from captchalab.unet import UNetConfig, build_unet


def synthetic_images(n, side, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = ndimage.gaussian_filter(rng.standard_normal((side, side, 3)),
                                      sigma=(side / 8, side / 8, 0))
        out.append((img / (np.abs(img).max() + 1e-9)).astype(np.float32))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="toy-ckpt")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--backgrounds", default=None, help="optional real image directory")
    args = ap.parse_args()

    schedule = make_linear_schedule(1000)
    levels = 3 if args.size >= 128 else 2
    cfg = UNetConfig(image_size=args.size, base_channels=args.base_channels,
                     level_count=levels, attention_levels=(levels - 1,),
                     time_embedding_dim=64)
    predictor = build_unet(cfg, init_seed=args.seed)

    if args.backgrounds:
        images = [to_model_space(im) for im in load_backgrounds(args.backgrounds, args.size)]
    else:
        images = synthetic_images(16, args.size, seed=args.seed)

    train_cfg = TrainConfig(learning_rate=args.lr, epochs=1, batch_size=4,
                            seed=args.seed, checkpoint_dir=args.out, steps=args.steps)
    path, history = train(predictor, images, schedule, train_cfg)
    print(f"checkpoint: {path}")
    print(f"loss: {np.mean(history[:20]):.4f} -> {np.mean(history[-20:]):.4f} "
          f"over {len(history)} steps")


if __name__ == "__main__":
    main()
