import numpy as np
import pytest
from scipy import ndimage

DEJAVU = "/usr/share/fonts/truetype/dejavu"

FONTS_5 = [
    f"{DEJAVU}/DejaVuSans.ttf",
    f"{DEJAVU}/DejaVuSans-Bold.ttf",
    f"{DEJAVU}/DejaVuSerif.ttf",
    f"{DEJAVU}/DejaVuSerif-Bold.ttf",
    f"{DEJAVU}/DejaVuSansMono.ttf",
]

LATIN_CHARSET = list("ABCDEFGHJKLMNPQRSTUVWXYZabcdefghkmnpqrstuvwxyz23456789")


def smooth_images(n, side, seed, channels=3):
    """Deterministic smooth test images in model space [-1, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = ndimage.gaussian_filter(
            rng.standard_normal((side, side, channels)), sigma=(side / 8, side / 8, 0)
        )
        img = img / (np.abs(img).max() + 1e-9)
        out.append(img.astype(np.float32))
    return out


def storage_backgrounds(n, side, seed):
    """Deterministic storage-space backgrounds (uint8)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = ndimage.gaussian_filter(rng.uniform(0, 255, (side, side, 3)), sigma=(9, 9, 0))
        out.append(np.clip(base, 0, 255).astype(np.uint8))
    return out


@pytest.fixture(scope="session")
def fonts():
    return FONTS_5


@pytest.fixture(scope="session")
def charset():
    return LATIN_CHARSET


@pytest.fixture(scope="session")
def toy_model_64():
    """Small predictor trained briefly at 64x64; shared by sampler and
    generator tests that need real (if rough) denoising behaviour."""
    from captchalab.diffusion import make_linear_schedule
    from captchalab.training import TrainConfig, train
    from captchalab.unet import UNetConfig, build_unet

    schedule = make_linear_schedule(1000)
    config = UNetConfig(
        image_size=64, base_channels=16, level_count=2, attention_levels=(1,),
        time_embedding_dim=64, timesteps=1000,
    )
    predictor = build_unet(config, init_seed=7)
    images = smooth_images(12, 64, seed=21)
    cfg = TrainConfig(
        learning_rate=2e-3, epochs=1, batch_size=4, seed=7,
        checkpoint_dir="/tmp/captchalab-toy64", steps=150,
    )
    train(predictor, images, schedule, cfg)
    return predictor, schedule
