#!/usr/bin/env python3
"""Desk-scale end-to-end demo: toy training, dataset generation, and the
reference attacks, finishing with an attack-results table.

    python scripts/demo_pipeline.py --workdir demo-out
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage

from captchalab.attackers import NoisyOracle, OracleDetector, OracleClassifier, RandomDetector
from captchalab.diffusion import make_linear_schedule
from captchalab.generator import (
    GenerationProfile,
    SamplerSettings,
    generate_dataset,
    load_eval_samples,
)
from captchalab.guide import BrightnessParams, GuideParams
from captchalab.protocols import make_segmenter, render_table, run_end_to_end, run_two_step
from captchalab.training import TrainConfig, train
from captchalab.unet import UNetConfig, build_unet

DEJAVU = "/usr/share/fonts/truetype/dejavu"
FONTS = [f"{DEJAVU}/DejaVuSans.ttf", f"{DEJAVU}/DejaVuSans-Bold.ttf",
         f"{DEJAVU}/DejaVuSerif.ttf", f"{DEJAVU}/DejaVuSerif-Bold.ttf",
         f"{DEJAVU}/DejaVuSansMono.ttf"]
CHARSET = list("ABCDEFGHJKLMNPQRSTUVWXYZabcdefghkmnpqrstuvwxyz23456789")


def smooth(n, side, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = ndimage.gaussian_filter(rng.standard_normal((side, side, 3)),
                                      sigma=(side / 8, side / 8, 0))
        out.append((img / (np.abs(img).max() + 1e-9)).astype(np.float32))
    return out


def backgrounds(n, side, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = ndimage.gaussian_filter(rng.uniform(0, 255, (side, side, 3)), sigma=(9, 9, 0))
        out.append(np.clip(base, 0, 255).astype(np.uint8))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="demo-out")
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--train-steps", type=int, default=200)
    args = ap.parse_args()
    work = Path(args.workdir)

    print("== training a toy predictor (64x64) ==")
    schedule = make_linear_schedule(1000)
    cfg = UNetConfig(image_size=64, base_channels=16, level_count=2,
                     attention_levels=(1,), time_embedding_dim=64)
    predictor = build_unet(cfg, init_seed=7)
    _, history = train(
        predictor, smooth(16, 64, seed=21), schedule,
        TrainConfig(learning_rate=2e-3, epochs=1, batch_size=4, seed=7,
                    checkpoint_dir=str(work / "ckpt"), steps=args.train_steps),
    )
    print(f"loss {np.mean(history[:20]):.3f} -> {np.mean(history[-20:]):.3f}")

    print(f"== generating {args.n} samples ==")
    profile = GenerationProfile(
        name="demo", image_size=64, font_count=5,
        guide=GuideParams(font_size=13, rotation_max_deg=15.0, shear_amp_max=1.5,
                          line_count_range=(1, 2), blur_sigma=0.8,
                          brightness=BrightnessParams(block_n=16, threshold_L=140.0)),
        sampler=SamplerSettings(steps=25, t1=8, t2=17),
    )
    manifest = generate_dataset(
        predictor, schedule, profile, backgrounds(6, 64, seed=50), CHARSET, FONTS,
        n=args.n, split=0.5, out_dir=work / "dataset", master_seed=2025,
    )
    samples = load_eval_samples(manifest, work / "dataset", "test")
    print(f"{len(manifest.written)} written, attacking the {len(samples)}-sample test split")

    print("== reference attacks ==")
    rows = []
    for name, report in [
        ("oracle e2e", run_end_to_end(OracleDetector(), samples, dataset_name="demo")),
        ("noisy oracle e2e", run_end_to_end(
            NoisyOracle(drop_rate=0.3, shift_px=2.0, seed=5), samples, dataset_name="demo")),
        ("random e2e", run_end_to_end(
            RandomDetector(CHARSET, seed=5), samples, dataset_name="demo")),
        ("oracle two-step", run_two_step(
            make_segmenter(OracleDetector()), OracleClassifier(), samples, dataset_name="demo")),
    ]:
        row = report.summary_row()
        row["Datasets"] = name
        rows.append(row)
    print(render_table(rows))


if __name__ == "__main__":
    main()
