#!/usr/bin/env python3
"""Sweep the guide injection weight and report output/guide correlation.

The injection weights trade security (low correlation, characters hard to
find) against usability (high correlation, characters legible), so this
is the main tuning loop when adapting the scheme to a new model.

    python scripts/sweep_hijack_weights.py --checkpoint toy-ckpt/model.pt
"""

import argparse

import numpy as np
from scipy import ndimage

from captchalab.arrays import to_model_space
from captchalab.guide import BrightnessParams, GuideParams, build_guide
from captchalab.sampling import HijackEvent, SamplerConfig, ddim_sample
from captchalab.training import load_checkpoint

DEJAVU = "/usr/share/fonts/truetype/dejavu"
FONTS = [f"{DEJAVU}/DejaVuSans.ttf", f"{DEJAVU}/DejaVuSans-Bold.ttf",
         f"{DEJAVU}/DejaVuSerif.ttf", f"{DEJAVU}/DejaVuSerif-Bold.ttf",
         f"{DEJAVU}/DejaVuSansMono.ttf"]
CHARSET = list("ABCDEFGHJKLMNPQRSTUVWXYZabcdefghkmnpqrstuvwxyz23456789")


def ncc(a, b):
    a = a.astype(np.float64).ravel() - a.mean()
    b = b.astype(np.float64).ravel() - b.mean()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--mu2", default="0.0,0.2,0.4,0.6,0.8,1.0")
    ap.add_argument("--mu1", type=float, default=0.5)
    ap.add_argument("--t1", type=int, default=None, help="default: 30%% of steps")
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--seeds", default="10,20,30")
    args = ap.parse_args()

    predictor, schedule, _ = load_checkpoint(args.checkpoint)
    t1 = args.t1 if args.t1 is not None else int(args.steps * 0.3)
    side = predictor.config.image_size
    rng = np.random.default_rng(0)
    base = ndimage.gaussian_filter(rng.uniform(0, 255, (side, side, 3)), sigma=(9, 9, 0))
    background = np.clip(base, 0, 255).astype(np.uint8)

    guide_params = GuideParams(
        font_size=max(10, side // 5), rotation_max_deg=15.0, shear_amp_max=1.5,
        line_count_range=(1, 2), blur_sigma=0.8,
        brightness=BrightnessParams(block_n=16, threshold_L=140.0),
    )
    guide = build_guide(background, CHARSET, FONTS, guide_params, np.random.default_rng(1))
    gm = to_model_space(guide.pixels)

    seeds = [int(s) for s in args.seeds.split(",")]
    print(f"{'mu2':>6}  " + "  ".join(f"seed {s:>4}" for s in seeds) + "   mean")
    for mu2 in (float(v) for v in args.mu2.split(",")):
        cors = []
        for seed in seeds:
            cfg = SamplerConfig(
                steps=args.steps, eta=0.0, seed=seed,
                hijacks=(HijackEvent(t1, gm, mu_keep=args.mu1, mu_inject=mu2),),
            )
            cors.append(ncc(ddim_sample(predictor, schedule, cfg, (side, side, 3)), gm))
        row = "  ".join(f"{c:9.3f}" for c in cors)
        print(f"{mu2:6.2f}  {row}  {np.mean(cors):6.3f}")


if __name__ == "__main__":
    main()
