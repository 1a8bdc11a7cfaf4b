"""Layered pipeline configuration.

One YAML file drives every subcommand; precedence is
built-in defaults < config file < dotted --set overrides. Profile
parameters layer separately: GuideParams defaults < the global ``guide``
block < the profile's own traits (v1/v2 per the dataset table) < the
profile's block in ``profiles``.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .generator import PROFILE_TRAITS, GenerationProfile, SamplerSettings
from .guide import BrightnessParams, GuideParams

DEFAULT_CONFIG: dict = {
    "master_seed": 0,
    "paths": {
        "backgrounds": None,
        "charset": None,
        "fonts": [],
        "checkpoint": None,
        "output": "out",
    },
    "diffusion": {
        "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
        "unet": {
            "image_size": 128,
            "base_channels": 64,
            "level_count": 3,
            "attention_levels": [2],
            "time_embedding_dim": 256,
            "timesteps": 1000,
        },
        "train": {
            "learning_rate": 2e-4,
            "epochs": 300,
            "batch_size": 8,
            "seed": 0,
            "steps": None,
        },
    },
    "guide": {},      # overrides GuideParams fields for every profile
    "sampler": {},    # overrides SamplerSettings fields for every profile
    "profiles": {
        "v1": {},
        "v2": {},
    },
    "serve": {"port": 8000, "ttl_seconds": 120, "display_scale": 1.0, "pool": None},
}

def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply 'a.b.c=value' pairs; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override through non-mapping key {p!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        cfg = _deep_merge(cfg, loaded)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def build_guide_params(cfg: dict, profile_name: str) -> GuideParams:
    fields = {}
    for layer in (
        cfg.get("guide", {}),
        PROFILE_TRAITS.get(profile_name, {}).get("guide", {}),
        cfg.get("profiles", {}).get(profile_name, {}).get("guide", {}),
    ):
        fields.update(layer)
    brightness = fields.pop("brightness", None)
    kwargs = {k: _tupled(v) for k, v in fields.items()}
    if brightness is not None:
        kwargs["brightness"] = BrightnessParams(**brightness)
    try:
        return GuideParams(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad guide parameter: {exc}") from exc


def build_sampler_settings(cfg: dict, profile_name: str) -> SamplerSettings:
    fields = {}
    for layer in (
        cfg.get("sampler", {}),
        cfg.get("profiles", {}).get(profile_name, {}).get("sampler", {}),
    ):
        fields.update(layer)
    try:
        return SamplerSettings(**fields)
    except TypeError as exc:
        raise ConfigurationError(f"bad sampler parameter: {exc}") from exc


def build_profile(cfg: dict, name: str) -> GenerationProfile:
    known = set(cfg.get("profiles", {})) | set(PROFILE_TRAITS)
    if name not in known:
        raise ConfigurationError(f"unknown profile {name!r}; configured: {sorted(known)}")
    block = cfg.get("profiles", {}).get(name, {})
    traits = PROFILE_TRAITS.get(name, {})
    return GenerationProfile(
        name=name,
        image_size=block.get("image_size", 256),
        font_count=block.get("font_count", traits.get("font_count", 5)),
        guide=build_guide_params(cfg, name),
        sampler=build_sampler_settings(cfg, name),
    )


def validate_config(cfg: dict, need_paths: tuple = ()) -> list[str]:
    """Construct every typed block so bad values fail loudly; check that
    referenced files exist. Returns human-readable problem list."""
    from .training import TrainConfig
    from .unet import UNetConfig

    problems = []
    d = cfg.get("diffusion", {})
    try:
        sched = d.get("schedule", {})
        if not (0 < sched.get("beta_start", 1e-4) <= sched.get("beta_end", 0.02) < 1):
            problems.append("diffusion.schedule: need 0 < beta_start <= beta_end < 1")
        if sched.get("T", 1000) < 1:
            problems.append("diffusion.schedule.T must be >= 1")
        u = dict(d.get("unet", {}))
        u["attention_levels"] = tuple(u.get("attention_levels", ()))
        UNetConfig(**u)
        t = dict(d.get("train", {}))
        TrainConfig(**t)
    except (ConfigurationError, TypeError) as exc:
        problems.append(f"diffusion block: {exc}")

    for name in sorted(set(cfg.get("profiles", {})) | set(PROFILE_TRAITS)):
        try:
            build_profile(cfg, name)
        except ConfigurationError as exc:
            problems.append(f"profile {name!r}: {exc}")

    paths = cfg.get("paths", {})
    for key in need_paths:
        value = paths.get(key)
        if not value:
            problems.append(f"paths.{key} is required for this command")
        elif key == "fonts":
            missing = [f for f in value if not Path(f).exists()]
            if missing:
                problems.append(f"paths.fonts missing files: {missing}")
        elif not Path(value).exists():
            problems.append(f"paths.{key} does not exist: {value}")
    # any configured path that is set must exist, required or not
    for key, value in paths.items():
        if key in need_paths or key == "output" or not value:
            continue
        candidates = value if isinstance(value, list) else [value]
        for c in candidates:
            if not Path(c).exists():
                problems.append(f"paths.{key} does not exist: {c}")
    return problems


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, allow_unicode=True)
