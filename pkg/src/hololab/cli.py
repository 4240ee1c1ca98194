"""Command-line surface.

Subcommands: gen-data, train, atlas, infer, eval. Flags override values
from an optional JSON --config file; unknown config keys are rejected and
every run writes its resolved configuration next to its outputs.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import diffusion
from .atlas import InferenceRequest, finetune_atlas, embedding_stats, image_to_360, load_atlas, run_request, save_atlas
from .diffusion import GuidanceWeights
from .metrics import evaluate_suite, orbit_consistency, ssim_video
from .model.checkpoint import load_checkpoint
from .model.config import ModelConfig
from .model.network import build_model
from .report import format_table, loss_curve_figure, render_eval_report
from .training import TrainConfig, ablation_presets, train_loop
from .world import arrayio
from .world.dataset import Dataset, cache_root, generate_dataset
from .world.rig import dynamic_pose_sequence


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse failures onto exit code 1
        raise ValidationError(message)


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except Exception as exc:
        raise ValidationError(f"bad resolution {text!r}, expected HxW") from exc


def _resolve(args: argparse.Namespace, parser_keys: set[str], argv: list[str]) -> dict:
    """Merge the optional JSON config file under the flags."""
    resolved = {k: v for k, v in vars(args).items() if k not in ("command", "config", "func")}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - parser_keys
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_cfg.items():
            if key in resolved and _flag_given(key, argv):
                continue  # explicit flags win
            resolved[key] = value
    return resolved


def _flag_given(key: str, argv: list[str]) -> bool:
    flag = "--" + key.replace("_", "-")
    return any(a == flag or a.startswith(flag + "=") for a in argv)


def _write_resolved(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    safe = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    with open(out_dir / f"{command}_config.json", "w") as fh:
        json.dump(safe, fh, indent=1, sort_keys=True)


def _load_model(checkpoint: str):
    model, extra, _ = load_checkpoint(checkpoint)
    model.eval()
    sched_cfg = extra.get("train_config", {}).get("schedule")
    if sched_cfg:
        sched = diffusion.make_schedule(sched_cfg["T"], sched_cfg["beta_start"], sched_cfg["beta_end"])
    else:
        sched = diffusion.desk_schedule()
    return model, sched


def _spin_views(dataset: Dataset, index: int, n_views: int) -> tuple[list, list]:
    """Evenly spread conditioning views from the garment's own orbit."""
    entry = dataset.garment_entry(index)
    video, pose, _ = dataset.load(entry["spin"])
    ids = [round(i * video.n_frames / max(n_views, 1)) % video.n_frames for i in range(n_views)]
    return [video.frames[f].copy() for f in ids], [pose.heatmaps2d[f].copy() for f in ids]


# ---- commands ---------------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> Path:
    out = Path(cfg["out"] or cache_root() / f"dataset_seed{cfg['seed']}")
    manifest = generate_dataset(
        out,
        n_garments=cfg["garments"],
        resolution=cfg["resolution"],
        n_frames=cfg["frames"],
        n_views=cfg["views"],
        occlusion_level=cfg["occlusion"],
        n_animations=cfg["animations"],
        seed=cfg["seed"],
    )
    _write_resolved(out, "gen-data", cfg)
    print(manifest)
    return manifest


def cmd_train(cfg: dict) -> Path:
    out = Path(cfg["out"])
    dataset = Dataset(cfg["manifest"])
    preset = ablation_presets(cfg["preset"])
    sched = diffusion.desk_schedule(cfg["schedule_steps"])
    train_cfg = TrainConfig(
        mix=preset.mix,
        batch_size=cfg["batch_size"],
        total_steps=cfg["steps"],
        lr_start=cfg["lr_start"],
        lr_end=cfg["lr_end"],
        dropout_p=cfg["dropout"],
        schedule=sched,
        phase=cfg["phase"],
        loss_space=cfg["loss_space"],
        alternation=cfg["alternation"],
        checkpoint_every=cfg["checkpoint_every"],
        seed=cfg["seed"],
    )
    H, W = dataset.resolution
    model_cfg = ModelConfig(resolution=(H, W), n_frames=dataset.manifest["n_frames"])
    model = build_model(model_cfg, seed=cfg["seed"])
    if cfg["resume"] and not (out / "checkpoint.npz").exists():
        raise ValidationError(f"--resume given but no checkpoint under {out}")
    _write_resolved(out, "train", cfg)
    train_loop(dataset, model, train_cfg, out, resume=cfg["resume"])
    loss_curve_figure(out / "metrics.jsonl", out / "loss_curve.png")
    ckpt = out / "checkpoint.npz"
    print(ckpt)
    return ckpt


def cmd_atlas(cfg: dict) -> Path:
    out = Path(cfg["out"])
    dataset = Dataset(cfg["manifest"])
    model, sched = _load_model(cfg["checkpoint"])
    video = dataset.animation_tuple(cfg["garment_index"], cfg["anim_index"])
    stats_samples = [dataset.spin_tuple(i) for i in range(min(dataset.n_garments, 8))]
    state = finetune_atlas(
        model,
        video,
        sched,
        m_iterations=cfg["iterations"],
        lr=cfg["lr"],
        batch_frames=cfg["batch_frames"],
        seed=cfg["seed"],
        init_stats=embedding_stats(model, stats_samples),
    )
    _write_resolved(out, "atlas", cfg)
    path = out / "atlas.npz"
    save_atlas(state, path)
    print(path)
    return path


def cmd_infer(cfg: dict) -> Path:
    out = Path(cfg["out"])
    dataset = Dataset(cfg["manifest"])
    model, sched = _load_model(cfg["checkpoint"])
    guidance = GuidanceWeights.parse(cfg["guidance"])
    index = cfg["garment_index"]
    mode = cfg["mode"]
    n_frames = cfg["frames"] or dataset.manifest["n_frames"]

    images = heatmaps = video = atlas = None
    if mode in ("image_to_360", "video_to_360"):
        driving = dataset.spin_tuple(index, n_frames=n_frames).driving
    else:
        driving = dynamic_pose_sequence(cfg["seed"] + 1, n_frames, dataset.resolution)
    if mode == "image_to_360":
        images, heatmaps = _spin_views(dataset, index, cfg["views"])
    elif mode == "video_to_360":
        if cfg["atlas"]:
            atlas = load_atlas(cfg["atlas"])
        else:
            video = dataset.animation_tuple(index, cfg["anim_index"])
    else:
        anim = dataset.animation_tuple(index, cfg["anim_index"])
        images, heatmaps = [anim.garment_images[0]], [anim.garment_poses[0]]

    request = InferenceRequest(
        mode=mode, driving=driving, images=images, image_heatmaps=heatmaps,
        video=video, atlas=atlas, guidance=guidance, seed=cfg["seed"],
    )
    result = run_request(model, request, sched)

    _write_resolved(out, "infer", cfg)
    files = []
    for f in range(result.n_frames):
        name = f"frame_{f:03d}.png"
        arrayio.save_frame_png(out / name, result.frames[f])
        files.append(name)
    manifest = {
        "mode": mode,
        "seed": cfg["seed"],
        "guidance": list(guidance.as_tuple()),
        "garment_index": index,
        "n_frames": result.n_frames,
        "driving": {
            "mode": driving.mode,
            "azimuths": None if driving.azimuths is None else [float(a) for a in driving.azimuths],
        },
        "files": files,
    }
    with open(out / "outputs.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    print(out)
    return out


def cmd_eval(cfg: dict) -> Path:
    out = Path(cfg["out"])
    dataset = Dataset(cfg["manifest"])
    guidance = GuidanceWeights.parse(cfg["guidance"])
    indices = cfg["indices"] or list(range(dataset.n_garments))
    n_frames = cfg["frames"] or dataset.manifest["n_frames"]

    references = [dataset.spin_tuple(i, n_frames=n_frames).video for i in indices]
    inputs = []
    outputs = []
    if cfg["oracle"]:
        outputs = references
        for i in indices:
            views, _ = _spin_views(dataset, i, 1)
            inputs.append(views[0])
    else:
        if not cfg["checkpoint"]:
            raise ValidationError("--checkpoint is required unless --oracle is set")
        model, sched = _load_model(cfg["checkpoint"])
        for i in indices:
            views, hms = _spin_views(dataset, i, cfg["views"])
            inputs.append(views[0])
            driving = dataset.spin_tuple(i, n_frames=n_frames).driving
            outputs.append(image_to_360(model, views, hms, driving, sched, guidance, seed=cfg["seed"]))

    report = evaluate_suite(outputs, references, inputs=inputs, proj_seed=cfg["seed"])
    per_sample = [
        {
            "sample": idx,
            "ssim": ssim_video(o, r),
            "orbit_consistency": orbit_consistency(o),
        }
        for idx, o, r in zip(indices, outputs, references)
    ]
    _write_resolved(out, "eval", cfg)
    examples = [(o, r) for o, r in zip(outputs, references)]
    path = render_eval_report(out, report, per_sample, examples)
    print(format_table(report))
    print(path)
    return path


# ---- parser -----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="hololab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file; flags override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--device", choices=("cpu",), default="cpu",
                       help="compute device hint (this build is CPU-only)")

    p = sub.add_parser("gen-data", help="generate the procedural dataset")
    common(p)
    p.add_argument("--garments", type=int, default=8)
    p.add_argument("--resolution", type=_parse_resolution, default=(32, 24))
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--views", type=int, default=32)
    p.add_argument("--occlusion", type=float, default=0.5)
    p.add_argument("--animations", type=int, default=2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=("joint", "video_only", "threeD_only"), default="joint")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr-start", type=float, default=1e-4)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--schedule-steps", type=int, default=64)
    p.add_argument("--phase", choices=("joint", "spin_only_finetune"), default="joint")
    p.add_argument("--loss-space", choices=("eps", "v"), default="eps")
    p.add_argument("--alternation", choices=("stochastic", "strict"), default="stochastic")
    p.add_argument("--checkpoint-every", type=int, default=500)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("atlas", help="finetune a garment atlas on one video")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--garment-index", type=int, default=0)
    p.add_argument("--anim-index", type=int, default=0)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-frames", type=int, default=8)
    p.set_defaults(func=cmd_atlas)

    p = sub.add_parser("infer", help="run a sampling pipeline")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("image_to_360", "video_to_360", "animate"), required=True)
    p.add_argument("--garment-index", type=int, default=0)
    p.add_argument("--anim-index", type=int, default=0)
    p.add_argument("--views", type=int, default=1, help="number of conditioning views")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--guidance", default="1,5,1")
    p.add_argument("--atlas", default=None, help="existing atlas archive for video_to_360")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate spin reconstruction and write a report")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--guidance", default="1,5,1")
    p.add_argument("--indices", type=int, nargs="*", default=None)
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_eval)

    return parser


_COMMON_KEYS = {"seed", "out", "device"}
_KNOWN_KEYS = {
    "gen-data": _COMMON_KEYS | {"garments", "resolution", "frames", "views", "occlusion", "animations"},
    "train": _COMMON_KEYS | {"manifest", "preset", "steps", "batch_size", "lr_start", "lr_end", "dropout",
                             "schedule_steps", "phase", "loss_space", "alternation", "checkpoint_every", "resume"},
    "atlas": _COMMON_KEYS | {"manifest", "checkpoint", "garment_index", "anim_index", "iterations", "lr",
                             "batch_frames"},
    "infer": _COMMON_KEYS | {"manifest", "checkpoint", "mode", "garment_index", "anim_index", "views",
                             "frames", "guidance", "atlas"},
    "eval": _COMMON_KEYS | {"manifest", "checkpoint", "views", "frames", "guidance", "indices", "oracle"},
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parser.parse_args(argv)
        resolved = _resolve(args, _KNOWN_KEYS[args.command], argv)
        if resolved.get("out") is None and args.command != "gen-data":
            raise ValidationError("--out is required")
        if args.command != "gen-data" and "checkpoint" in resolved and resolved["checkpoint"]:
            if not Path(resolved["checkpoint"]).exists():
                raise ValidationError(f"checkpoint not found: {resolved['checkpoint']}")
        args.func(resolved)
        return 0
    except (ValidationError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        import traceback

        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
