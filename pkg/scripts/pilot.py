"""Calibration pilot: train the joint preset on 4 garments and measure
spin-reconstruction SSIM across guidance weights and seeds, loss-ratio
convergence, and atlas behavior. Results feed the frozen thresholds in the
acceptance tests."""

import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from hololab import diffusion
from hololab.atlas import finetune_atlas, image_to_360, video_to_360, embedding_stats
from hololab.diffusion import GuidanceWeights
from hololab.metrics import orbit_consistency, ssim, ssim_video
from hololab.model import build_model, desk_config
from hololab.training import TrainConfig, ablation_presets, train_loop, read_metrics
from hololab.world import Dataset, generate_dataset

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/pilot")
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 2000


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    manifest = generate_dataset(OUT / "data", 4, n_animations=3, seed=11)
    ds = Dataset(manifest)
    sched = diffusion.desk_schedule()

    cfg = TrainConfig(
        mix=ablation_presets("joint").mix,
        batch_size=4,
        total_steps=STEPS,
        schedule=sched,
        loss_space=os.environ.get("PILOT_LOSS", "v"),
        checkpoint_every=1000,
        seed=11,
    )
    model = build_model(desk_config(), seed=11)
    train_loop(ds, model, cfg, OUT / "run")
    losses = [m["loss"] for m in read_metrics(OUT / "run")]
    early = float(np.mean(losses[40:60]))
    late = float(np.mean(losses[-50:]))
    print(f"[pilot] train {STEPS} steps in {time.time()-t0:.0f}s  loss_space={cfg.loss_space}")
    print(f"[pilot] step-50 avg loss {early:.4f}  final smoothed {late:.4f}  ratio {late/early:.3f}", flush=True)

    model.eval()
    for guidance in ("1,1,1", "1,2,1", "1,3,1", "1,5,1"):
        w = GuidanceWeights.parse(guidance)
        ssims, orbits, ssim_ins = [], [], []
        for i in range(ds.n_garments):
            gt = ds.spin_tuple(i)
            view = [gt.video.frames[0].copy()]
            hm = [gt.driving.heatmaps2d[0].copy()]
            for seed in (123, 456):
                out = image_to_360(model, view, hm, gt.driving, sched, w, seed=seed)
                ssims.append(ssim_video(out, gt.video))
                orbits.append(orbit_consistency(out))
                ssim_ins.append(ssim(view[0], out.frames[0]))
        print(
            f"[pilot] guidance {guidance}: ssim {np.mean(ssims):.3f} "
            f"(min {np.min(ssims):.3f})  orbit {np.mean(orbits):.3f}  ssim_in {np.mean(ssim_ins):.3f}",
            flush=True,
        )

    gt_orbit = float(np.mean([orbit_consistency(ds.spin_tuple(i).video) for i in range(ds.n_garments)]))
    print(f"[pilot] ground-truth orbit consistency {gt_orbit:.3f}")

    # atlas direction over all 12 videos
    t0 = time.time()
    stats = embedding_stats(model, [ds.spin_tuple(i) for i in range(ds.n_garments)])
    atlas_scores, single_scores = [], []
    for g in range(ds.n_garments):
        for a in range(3):
            video = ds.animation_tuple(g, a)
            gt = ds.spin_tuple(g)
            out_atlas, state = video_to_360(
                model, video, gt.driving, sched, m_iterations=200, seed=100 + g, init_stats=stats
            )
            atlas_scores.append(ssim_video(out_atlas, gt.video))
            out_single = image_to_360(
                model, [video.video.frames[0]], [video.driving.heatmaps2d[0]], gt.driving, sched, seed=100 + g
            )
            single_scores.append(ssim_video(out_single, gt.video))
    print(f"[pilot] atlas {np.mean(atlas_scores):.3f} vs single occluded view {np.mean(single_scores):.3f} ({time.time()-t0:.0f}s)")
    print(f"[pilot] per-video atlas  {[round(s,3) for s in atlas_scores]}")
    print(f"[pilot] per-video single {[round(s,3) for s in single_scores]}")
    print(f"[pilot] atlas loss first10 {np.mean(state.losses[:10]):.4f} last10 {np.mean(state.losses[-10:]):.4f}")


if __name__ == "__main__":
    main()
