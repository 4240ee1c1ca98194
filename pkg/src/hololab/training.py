"""Two-domain training loop.

Batches are drawn from three sources -- garment images (1-frame clips from
the real domain), real animation videos, and static spin orbits -- per the
configured mix. Each batch routes through the temporal branch matching its
domain, so the other branch's parameters receive no gradient and stay
bit-identical. Conditioning inputs (garment, pose) are independently
replaced by learned null embeddings with probability dropout_p per example,
which is what makes dual classifier-free guidance possible at sampling time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import diffusion
from .diffusion import NoiseSchedule, add_noise, eps_from_v, loss_eps, v_from
from .model.checkpoint import save_checkpoint, load_checkpoint
from .model.network import GarmentVDM
from .world.dataset import Dataset, sample_batch
from .world.garments import SENTINEL
from .world.render import SampleTuple

SOURCES = ("image", "video", "spin")

METRICS_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint.npz"


@dataclass
class TrainConfig:
    mix: dict[str, float] = field(default_factory=lambda: {"image": 0.0, "video": 0.5, "spin": 0.5})
    batch_size: int = 4
    total_steps: int = 2000
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    dropout_p: float = 0.1
    schedule: NoiseSchedule = field(default_factory=diffusion.desk_schedule)
    phase: str = "joint"              # "joint" | "spin_only_finetune"
    loss_space: str = "eps"           # "eps" | "v"
    alternation: str = "stochastic"   # "stochastic" | "strict"
    grad_clip: float | None = None
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        raw = dict(self.mix)
        if "real" in raw:  # accepted alias for the video slice
            raw["video"] = raw.pop("real")
        unknown = set(raw) - set(SOURCES)
        if unknown:
            raise ValueError(f"unknown mix keys {sorted(unknown)}")
        mix = {s: float(raw.get(s, 0.0)) for s in SOURCES}
        self.mix = mix
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mix must sum to 1, got {total}")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError("dropout_p must be in [0, 1]")
        if self.phase not in ("joint", "spin_only_finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.loss_space not in ("eps", "v"):
            raise ValueError(f"unknown loss_space {self.loss_space!r}")

    def effective_mix(self) -> dict[str, float]:
        if self.phase == "spin_only_finetune":
            return {"image": 0.0, "video": 0.0, "spin": 1.0}
        return self.mix


def ablation_presets(name: str) -> TrainConfig:
    """Training mixes for the three study arms."""
    if name == "video_only":
        return TrainConfig(mix={"image": 0.0, "video": 1.0, "spin": 0.0})
    if name == "threeD_only":
        return TrainConfig(mix={"image": 0.0, "video": 0.0, "spin": 1.0})
    if name == "joint":
        return TrainConfig(mix={"image": 0.0, "video": 0.5, "spin": 0.5})
    raise ValueError(f"unknown preset {name!r}")


def lr_at(cfg: TrainConfig, step: int) -> float:
    frac = min(max(step / cfg.total_steps, 0.0), 1.0)
    return cfg.lr_start * (1.0 - frac) + cfg.lr_end * frac


# ---- batch assembly --------------------------------------------------------------


@dataclass
class Batch:
    x0: torch.Tensor          # (B, C, F, H, W)
    images: torch.Tensor      # (B, S, C, H, W)
    image_heatmaps: torch.Tensor  # (B, S, K, H, W)
    j2d: torch.Tensor         # (B, F, K, H, W)
    j3d: torch.Tensor         # (B, F, K, 3)
    domain: str


def _single_frame(sample: SampleTuple, frame: int) -> SampleTuple:
    clip = sample.video.frames[frame : frame + 1]
    return SampleTuple(
        video=type(sample.video)(clip, sample.video.fps),
        garment_images=sample.garment_images,
        garment_poses=sample.garment_poses,
        driving=sample.driving.window(frame, 1),
        domain=sample.domain,
        garment_id=sample.garment_id,
    )


def collate(samples: list[SampleTuple], dtype=torch.float32) -> Batch:
    domains = {s.domain for s in samples}
    if len(domains) != 1:
        raise ValueError(f"mixed-domain batch: {sorted(domains)}")
    max_s = max(len(s.garment_images) for s in samples)
    imgs, hms = [], []
    for s in samples:
        im = np.stack(s.garment_images)                       # (S, H, W, C)
        hm = np.stack(s.garment_poses)                        # (S, K, H, W)
        if im.shape[0] < max_s:
            pad = max_s - im.shape[0]
            im = np.concatenate([im, np.full((pad, *im.shape[1:]), SENTINEL, dtype=im.dtype)])
            hm = np.concatenate([hm, np.zeros((pad, *hm.shape[1:]), dtype=hm.dtype)])
        imgs.append(im)
        hms.append(hm)
    x0 = torch.as_tensor(np.stack([s.video.frames for s in samples]), dtype=dtype)
    return Batch(
        x0=x0.permute(0, 4, 1, 2, 3),
        images=torch.as_tensor(np.stack(imgs), dtype=dtype).permute(0, 1, 4, 2, 3),
        image_heatmaps=torch.as_tensor(np.stack(hms), dtype=dtype),
        j2d=torch.as_tensor(np.stack([s.driving.heatmaps2d for s in samples]), dtype=dtype),
        j3d=torch.as_tensor(np.stack([s.driving.keypoints3d for s in samples]), dtype=dtype),
        domain=samples[0].domain,
    )


def draw_batch(dataset: Dataset, source: str, batch_size: int, rng: np.random.Generator) -> Batch:
    domain = "spin" if source == "spin" else "real"
    samples = sample_batch(dataset, domain, batch_size, rng)
    if source == "image":
        samples = [_single_frame(s, int(rng.integers(s.video.n_frames))) for s in samples]
    return collate(samples)


def apply_conditioning_dropout(model: GarmentVDM, garment, pose, p: float, rng: torch.Generator):
    """Per example, independently null out the garment and pose inputs."""
    if p <= 0:
        return garment, pose
    B = garment.tokens.shape[0]
    n_frames = pose.grid.shape[2]
    null_g, null_p = model.null_conditioning(B, n_frames)
    drop = torch.rand(B, 2, generator=rng) < p
    tokens = torch.where(drop[:, 0, None, None], null_g.tokens.to(garment.tokens.dtype), garment.tokens)
    grid = torch.where(drop[:, 1, None, None, None, None], null_p.grid.to(pose.grid.dtype), pose.grid)
    return type(garment)(tokens), type(pose)(grid)


def train_step(
    model: GarmentVDM,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    cfg: TrainConfig,
    rng: torch.Generator,
    lr: float | None = None,
) -> float:
    """One optimization step; returns the scalar loss."""
    sched = cfg.schedule
    B = batch.x0.shape[0]
    t = torch.randint(0, sched.T, (B,), generator=rng)
    eps = torch.randn(batch.x0.shape, generator=rng, dtype=batch.x0.dtype)
    z_t = add_noise(batch.x0, eps, t, sched)

    garment = model.encode_garment(batch.images, batch.image_heatmaps)
    pose = model.encode_pose(batch.j2d, batch.j3d)
    garment, pose = apply_conditioning_dropout(model, garment, pose, cfg.dropout_p, rng)

    v_hat = model(z_t, t, garment, pose, branch=batch.domain)
    if cfg.loss_space == "eps":
        loss = loss_eps(eps_from_v(z_t, v_hat, t, sched), eps)
    else:
        loss = loss_eps(v_hat, v_from(batch.x0, eps, t, sched))
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at domain={batch.domain}")

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()
    return float(loss.detach())


# ---- optimizer/rng state (de)serialization ---------------------------------------


def _optimizer_arrays(optimizer: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    arrays, meta = {}, {"steps": {}}
    for i, p in enumerate(optimizer.param_groups[0]["params"]):
        state = optimizer.state.get(p)
        if not state:
            continue
        arrays[f"opt/{i}/exp_avg"] = state["exp_avg"].numpy()
        arrays[f"opt/{i}/exp_avg_sq"] = state["exp_avg_sq"].numpy()
        meta["steps"][str(i)] = int(state["step"])
    return arrays, meta


def _restore_optimizer(optimizer: torch.optim.Optimizer, arrays: dict, meta: dict) -> None:
    for i, p in enumerate(optimizer.param_groups[0]["params"]):
        key = f"opt/{i}/exp_avg"
        if key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(meta["steps"][str(i)])),
            "exp_avg": torch.from_numpy(arrays[key].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt/{i}/exp_avg_sq"].copy()),
        }


def _source_pattern(mix: dict[str, float]) -> list[str]:
    """Deterministic round-robin over active sources for strict alternation."""
    active = [s for s in SOURCES if mix[s] > 0]
    return active or ["video"]


def _truncate_metrics(path: Path, max_step: int) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    kept = [ln for ln in lines if json.loads(ln)["step"] <= max_step]
    path.write_text("".join(ln + "\n" for ln in kept))


def train_loop(
    dataset: Dataset,
    model: GarmentVDM,
    cfg: TrainConfig,
    out_dir: str | Path,
    callbacks: list | None = None,
    resume: bool = False,
) -> GarmentVDM:
    """Run cfg.total_steps of training, logging JSONL metrics and writing
    resumable checkpoints to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / METRICS_NAME
    ckpt_path = out / CHECKPOINT_NAME

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_start, betas=(0.9, 0.999), eps=1e-8)
    torch_rng = torch.Generator().manual_seed(cfg.seed)
    np_rng = np.random.default_rng([cfg.seed, 0x7EA1])
    start_step = 0

    if resume and ckpt_path.exists():
        loaded, extra, arrays = load_checkpoint(ckpt_path)
        model.load_state_dict(loaded.state_dict())
        _restore_optimizer(optimizer, arrays, extra["optimizer"])
        torch_rng.set_state(torch.from_numpy(arrays["rng/torch"].copy()))
        np_rng.bit_generator.state = extra["np_rng"]
        start_step = int(extra["step"])
        _truncate_metrics(metrics_path, start_step)
    elif not resume:
        metrics_path.unlink(missing_ok=True)

    def save(step: int) -> None:
        opt_arrays, opt_meta = _optimizer_arrays(optimizer)
        opt_arrays["rng/torch"] = torch_rng.get_state().numpy()
        save_checkpoint(
            model,
            ckpt_path,
            extra={
                "step": step,
                "optimizer": opt_meta,
                "np_rng": np_rng.bit_generator.state,
                "train_config": {
                    "mix": cfg.mix, "batch_size": cfg.batch_size, "total_steps": cfg.total_steps,
                    "lr_start": cfg.lr_start, "lr_end": cfg.lr_end, "dropout_p": cfg.dropout_p,
                    "phase": cfg.phase, "loss_space": cfg.loss_space, "seed": cfg.seed,
                    "schedule": cfg.schedule.to_config(),
                },
            },
            arrays=opt_arrays,
        )

    mix = cfg.effective_mix()
    pattern = _source_pattern(mix)
    probs = np.array([mix[s] for s in SOURCES])
    model.train()
    with open(metrics_path, "a") as log:
        for step in range(start_step, cfg.total_steps):
            if cfg.alternation == "strict":
                source = pattern[step % len(pattern)]
            else:
                source = SOURCES[int(np_rng.choice(len(SOURCES), p=probs))]
            batch = draw_batch(dataset, source, cfg.batch_size, np_rng)
            lr = lr_at(cfg, step)
            loss = train_step(model, optimizer, batch, cfg, torch_rng, lr=lr)
            record = {"step": step + 1, "loss": loss, "lr": lr, "domain": batch.domain, "source": source}
            log.write(json.dumps(record) + "\n")
            log.flush()
            for cb in callbacks or []:
                cb(step + 1, record)
            if (step + 1) % cfg.checkpoint_every == 0:
                save(step + 1)
    save(cfg.total_steps)
    model.eval()
    return model


def read_metrics(out_dir: str | Path) -> list[dict]:
    path = Path(out_dir) / METRICS_NAME
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]
