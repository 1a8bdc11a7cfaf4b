"""Command-line entry point.

Subcommands: train, gen, attack (e2e | two-step | transfer), serve,
stats, config (validate | show). Exit codes: 0 success, 1 runtime
failure, 2 usage/config error. Every command prints its effective
configuration and writes a machine-readable run summary under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import build_profile, dump_config, load_config, validate_config
from .errors import ConfigurationError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _write_summary(out_dir, command, payload):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"command": command, "argv": sys.argv[1:], **payload}
    (out_dir / "run_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8"
    )


def _load_common(args, need_paths=()):
    cfg = load_config(args.config, args.set or [])
    problems = validate_config(cfg, need_paths=need_paths)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        raise ConfigurationError("; ".join(problems))
    print(dump_config(cfg), end="")
    return cfg


def _resources_for_generation(cfg, profile):
    from .generator import load_backgrounds, load_charset

    paths = cfg["paths"]
    backgrounds = load_backgrounds(paths["backgrounds"], profile.image_size)
    charset = load_charset(paths["charset"])
    fonts = list(paths["fonts"])
    return backgrounds, charset, fonts


def cmd_train(args) -> int:
    cfg = _load_common(args, need_paths=("backgrounds",))
    from .diffusion import make_linear_schedule
    from .generator import load_backgrounds
    from .arrays import to_model_space
    from .training import TrainConfig, train
    from .unet import UNetConfig, build_unet

    d = cfg["diffusion"]
    schedule = make_linear_schedule(
        d["schedule"]["T"], d["schedule"]["beta_start"], d["schedule"]["beta_end"]
    )
    unet_cfg = UNetConfig(
        image_size=d["unet"]["image_size"],
        base_channels=d["unet"]["base_channels"],
        level_count=d["unet"]["level_count"],
        attention_levels=tuple(d["unet"]["attention_levels"]),
        time_embedding_dim=d["unet"]["time_embedding_dim"],
        timesteps=d["unet"]["timesteps"],
    )
    train_cfg = TrainConfig(
        learning_rate=d["train"]["learning_rate"],
        epochs=d["train"]["epochs"],
        batch_size=d["train"]["batch_size"],
        seed=d["train"]["seed"],
        checkpoint_dir=str(args.out),
        steps=d["train"]["steps"],
    )
    images = [
        to_model_space(img)
        for img in load_backgrounds(cfg["paths"]["backgrounds"], unet_cfg.image_size)
    ]
    predictor = build_unet(unet_cfg, init_seed=train_cfg.seed)
    t0 = time.time()
    path, history = train(predictor, images, schedule, train_cfg)
    print(f"checkpoint: {path} (final loss {history[-1]:.4f}, {len(history)} steps)")
    _write_summary(args.out, "train", {
        "checkpoint": str(path), "n_steps": len(history),
        "final_loss": history[-1], "wall_seconds": time.time() - t0,
        "effective_config": cfg,
    })
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = _load_common(args, need_paths=("backgrounds", "charset", "fonts"))
    from .generator import annotation_stats, generate_dataset
    from .training import load_checkpoint

    ckpt = args.checkpoint or cfg["paths"].get("checkpoint")
    if not ckpt or not Path(ckpt).exists():
        raise ConfigurationError(f"checkpoint not found: {ckpt}")
    predictor, schedule, _ = load_checkpoint(ckpt)
    profile = build_profile(cfg, args.profile)
    backgrounds, charset, fonts = _resources_for_generation(cfg, profile)
    seed = args.seed if args.seed is not None else cfg["master_seed"]

    manifest = generate_dataset(
        predictor, schedule, profile, backgrounds, charset, fonts,
        n=args.n, split=args.split, out_dir=args.out, master_seed=seed, jobs=args.jobs,
    )
    stats = annotation_stats(manifest, root=args.out)
    print(f"wrote {stats['n_samples']} samples ({stats['n_skipped']} skipped), "
          f"{stats['total_characters']} characters -> {args.out}")
    _write_summary(args.out, "gen", {
        "n_requested": args.n, "n_written": stats["n_samples"],
        "n_skipped": stats["n_skipped"], "profile": args.profile, "master_seed": seed,
        "manifest": str(Path(args.out) / "manifest.jsonl"), "effective_config": cfg,
    })
    return EXIT_OK


def _load_eval_split(args):
    from .generator import DatasetManifest, load_eval_samples

    manifest = DatasetManifest.load(Path(args.dataset) / "manifest.jsonl")
    samples = load_eval_samples(manifest, args.dataset, split=args.split)
    if not samples:
        raise ConfigurationError(f"no samples in split {args.split!r} of {args.dataset}")
    return manifest, samples


def cmd_attack(args) -> int:
    from .attackers import load_classifier, load_detector
    from .protocols import make_segmenter, render_table, run_end_to_end, run_two_step

    cfg = _load_common(args)
    manifest, samples = _load_eval_split(args)
    charset = sorted({p.glyph for s in samples for p in s.placements})
    name = f"{manifest.profile_name} ({Path(args.dataset).name})"

    if args.mode == "e2e":
        # registry attackers can use the dataset's label space
        extra = {"charset": charset} if ":" not in args.detector and args.detector.split("@")[0] in ("random", "noisy-oracle") else {}
        detector = load_detector(args.detector, **extra)
        report = run_end_to_end(detector, samples, dataset_name=name,
                                conf_min=args.conf_min, iou_thresh=args.iou, jobs=args.jobs)
    elif args.mode == "two-step":
        segmenter = make_segmenter(load_detector(args.segmenter))
        classifier = load_classifier(args.classifier)
        report = run_two_step(segmenter, classifier, samples, dataset_name=name,
                              conf_min=args.conf_min, iou_thresh=args.iou, jobs=args.jobs)
    else:  # transfer
        from .protocols import run_transfer_protocol

        factory = _transfer_factory(args.attacker)
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else []
        _, finetune_pool = _load_eval_split(
            argparse.Namespace(dataset=args.finetune_dataset, split="train")
        )
        reports = run_transfer_protocol(
            pretrain_set=[], finetune_pool=finetune_pool, finetune_sizes=sizes,
            attack_samples=samples, attacker_factory=factory, dataset_name=name,
        )
        rows = [
            {"Finetune size": r.finetune_size, **r.summary_row()} for r in reports
        ]
        print(render_table(rows))
        _write_attack_outputs(args, cfg, reports)
        return EXIT_OK

    print(render_table([report.summary_row()]))
    _write_attack_outputs(args, cfg, [report])
    return EXIT_OK


def _transfer_factory(spec: str):
    import importlib

    mod, _, attr = spec.partition(":")
    if not attr:
        raise ConfigurationError("transfer attacker must be a 'module:factory' path")
    return getattr(importlib.import_module(mod), attr)


def _write_attack_outputs(args, cfg, reports):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = out / "attack_results.jsonl"
    results.write_text("\n".join(r.to_json() for r in reports) + "\n", encoding="utf-8")
    _write_summary(args.out, f"attack-{args.mode}", {
        "results": str(results),
        "asr": [r.asr for r in reports],
        "map": [r.map_score for r in reports],
        "effective_config": cfg,
    })


def cmd_serve(args) -> int:
    cfg = _load_common(args)
    import uvicorn

    from .service import ChallengeStore, create_app, load_pool

    pool_dir = args.pool or cfg["serve"].get("pool")
    if not pool_dir or not Path(pool_dir).exists():
        raise ConfigurationError(f"pool directory not found: {pool_dir}")
    state_dir = args.state_dir or str(Path(pool_dir) / "usability_state")
    store = ChallengeStore(
        load_pool(pool_dir),
        ttl_seconds=args.ttl if args.ttl is not None else cfg["serve"]["ttl_seconds"],
        display_scale=cfg["serve"]["display_scale"],
        state_dir=state_dir,
    )
    ui_dir = args.ui if args.ui else _default_ui_dir()
    app = create_app(store, ui_dir=ui_dir, image_delivery=args.image_delivery)
    port = args.port if args.port is not None else cfg["serve"]["port"]
    print(f"serving pool {pool_dir} on :{port} (ui: {ui_dir or 'none'}, state: {state_dir})")
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_OK


def _default_ui_dir():
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return str(candidate) if candidate.exists() else None


def cmd_stats(args) -> int:
    from .metrics import format_percent

    state_dir = Path(args.state_dir or (Path(args.pool) / "usability_state" if args.pool else ""))
    counters_file = state_dir / "counters.json"
    if not counters_file.exists():
        print("no usability data recorded yet")
        return EXIT_OK
    stats = json.loads(counters_file.read_text(encoding="utf-8"))
    rows = ["CAPTCHA type      Success rate/%   Average time/s",
            "-----------------------------------------------"]
    for name, s in sorted(stats.get("profiles", {}).items()):
        rate = format_percent(s["success_rate"]) if s["n_attempts"] else "-"
        mean_t = f"{s['mean_time_seconds']:.2f}" if s["n_attempts"] else "-"
        rows.append(f"{name:<17} {rate:<16} {mean_t}")
    print("\n".join(rows))
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.action == "show":
        print(dump_config(cfg), end="")
        return EXIT_OK
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_USAGE
    print("config ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="captchalab")
    parser.add_argument("--config", default=None, help="pipeline YAML file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the diffusion noise predictor")
    p.add_argument("--out", default="checkpoints")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gen", help="generate a CAPTCHA dataset")
    p.add_argument("--profile", default="v1")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--out", default="dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("attack", help="run an attack protocol over a dataset")
    mode = p.add_subparsers(dest="mode", required=True)

    e2e = mode.add_parser("e2e")
    e2e.add_argument("--detector", required=True)
    two = mode.add_parser("two-step")
    two.add_argument("--segmenter", required=True)
    two.add_argument("--classifier", required=True)
    transfer = mode.add_parser("transfer")
    transfer.add_argument("--attacker", required=True, help="module:factory")
    transfer.add_argument("--finetune-dataset", required=True)
    transfer.add_argument("--sizes", default="")
    for sp in (e2e, two, transfer):
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--split", default="test")
        sp.add_argument("--out", default="attack-out")
        sp.add_argument("--conf-min", type=float, default=0.40)
        sp.add_argument("--iou", type=float, default=0.5)
        sp.add_argument("--jobs", type=int, default=1)
        sp.set_defaults(fn=cmd_attack)

    p = sub.add_parser("serve", help="serve challenges for usability testing")
    p.add_argument("--pool", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ttl", type=int, default=None)
    p.add_argument("--ui", default=None)
    p.add_argument("--state-dir", default=None)
    p.add_argument("--image-delivery", choices=("data-uri", "url"), default="data-uri")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("stats", help="print usability stats")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--pool", default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("config", help="inspect or validate the config")
    p.add_argument("action", choices=("validate", "show"))
    p.set_defaults(fn=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
