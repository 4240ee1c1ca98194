import numpy as np
import pytest
import torch

from hololab import diffusion as D
from hololab.atlas import (
    AtlasState,
    InferenceRequest,
    animate,
    embedding_stats,
    finetune_atlas,
    image_to_360,
    load_atlas,
    run_request,
    save_atlas,
    video_to_360,
)
from hololab.model import build_model, micro_config, parameter_checksum
from hololab.world import Dataset, generate_dataset

RES = (16, 16)
SCHED = D.make_schedule(8, 1e-3, 0.3)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("atlas_data")
    return Dataset(generate_dataset(root, 2, resolution=RES, n_frames=4, seed=3))


@pytest.fixture(scope="module")
def model():
    m = build_model(micro_config(resolution=RES, n_frames=4), seed=2)
    m.eval()
    return m


class TestFinetune:
    def test_zero_iterations_keeps_random_init(self, dataset, model):
        video = dataset.animation_tuple(0)
        a = finetune_atlas(model, video, SCHED, m_iterations=0, seed=9, batch_frames=4)
        b = finetune_atlas(model, video, SCHED, m_iterations=0, seed=9, batch_frames=4)
        assert a.iterations_done == 0
        assert torch.equal(a.embedding, b.embedding)

    def test_model_frozen_bit_exact(self, dataset, model):
        video = dataset.animation_tuple(0)
        before = parameter_checksum(model)
        finetune_atlas(model, video, SCHED, m_iterations=5, seed=1, batch_frames=4)
        assert parameter_checksum(model) == before

    def test_embedding_shape_matches_garment_encoding(self, dataset, model):
        video = dataset.animation_tuple(0)
        state = finetune_atlas(model, video, SCHED, m_iterations=2, seed=1, batch_frames=4)
        assert state.embedding.shape == (model.config.n_tokens, model.config.hidden_size)

    def test_requires_real_domain(self, dataset, model):
        spin = dataset.spin_tuple(0)
        with pytest.raises(ValueError):
            finetune_atlas(model, spin, SCHED, m_iterations=1)

    def test_short_video_rejected(self, dataset, model):
        video = dataset.animation_tuple(0)
        with pytest.raises(ValueError):
            finetune_atlas(model, video, SCHED, m_iterations=1, batch_frames=99)

    def test_loss_recorded_per_iteration(self, dataset, model):
        video = dataset.animation_tuple(0)
        state = finetune_atlas(model, video, SCHED, m_iterations=7, seed=2, batch_frames=4)
        assert state.iterations_done == 7
        assert len(state.losses) == 7
        assert all(np.isfinite(v) for v in state.losses)

    def test_restores_grad_flags_and_mode(self, dataset):
        m = build_model(micro_config(resolution=RES, n_frames=4), seed=4)
        m.train()
        video = dataset.animation_tuple(0)
        finetune_atlas(m, video, SCHED, m_iterations=1, batch_frames=4)
        assert m.training
        assert all(p.requires_grad for p in m.parameters())

    def test_init_stats_shift_initialization(self, dataset, model):
        video = dataset.animation_tuple(0)
        a = finetune_atlas(model, video, SCHED, m_iterations=0, seed=3, batch_frames=4, init_stats=(0.0, 1.0))
        b = finetune_atlas(model, video, SCHED, m_iterations=0, seed=3, batch_frames=4, init_stats=(5.0, 1.0))
        assert torch.allclose(b.embedding - a.embedding, torch.full_like(a.embedding, 5.0))

    def test_embedding_stats_finite(self, dataset, model):
        mean, std = embedding_stats(model, [dataset.spin_tuple(i) for i in range(2)])
        assert mean.shape == (model.config.n_tokens, model.config.hidden_size)
        assert torch.isfinite(mean).all() and torch.isfinite(std).all()
        assert (std > 0).all()


class TestPipelines:
    def test_image_to_360_contract(self, dataset, model):
        gt = dataset.spin_tuple(0)
        out = image_to_360(
            model, [gt.video.frames[0]], [gt.driving.heatmaps2d[0]], gt.driving, SCHED, seed=0
        )
        assert out.frames.shape == gt.video.frames.shape
        assert out.frames.min() >= -1.0 and out.frames.max() <= 1.0

    def test_image_to_360_deterministic(self, dataset, model):
        gt = dataset.spin_tuple(0)
        args = (model, [gt.video.frames[0]], [gt.driving.heatmaps2d[0]], gt.driving, SCHED)
        a = image_to_360(*args, seed=4)
        b = image_to_360(*args, seed=4)
        assert np.array_equal(a.frames, b.frames)

    def test_image_to_360_requires_spin_driving(self, dataset, model):
        anim = dataset.animation_tuple(0)
        with pytest.raises(ValueError):
            image_to_360(model, anim.garment_images, anim.garment_poses, anim.driving, SCHED)

    def test_animate_contract(self, dataset, model):
        anim = dataset.animation_tuple(0)
        out = animate(model, anim.garment_images[0], anim.garment_poses[0], anim.driving, SCHED, seed=1)
        assert out.n_frames == anim.driving.n_frames

    def test_animate_requires_dynamic_driving(self, dataset, model):
        gt = dataset.spin_tuple(0)
        with pytest.raises(ValueError):
            animate(model, gt.video.frames[0], gt.driving.heatmaps2d[0], gt.driving, SCHED)

    def test_video_to_360_uses_no_garment_images(self, dataset, model):
        # the atlas path must not read any conditioning image: poison them
        video = dataset.animation_tuple(0)
        video.garment_images = [np.full_like(video.video.frames[0], 9.9)]
        gt = dataset.spin_tuple(0)
        out, state = video_to_360(
            model, video, gt.driving, SCHED, m_iterations=2, batch_frames=4, seed=5
        )
        assert out.frames.shape == gt.video.frames.shape
        assert state.iterations_done == 2

    def test_video_to_360_reuses_existing_atlas(self, dataset, model):
        video = dataset.animation_tuple(0)
        gt = dataset.spin_tuple(0)
        _, state = video_to_360(model, video, gt.driving, SCHED, m_iterations=2, batch_frames=4, seed=6)
        out_a, _ = video_to_360(model, video, gt.driving, SCHED, seed=6, atlas=state)
        out_b, _ = video_to_360(model, video, gt.driving, SCHED, seed=6, atlas=state)
        assert np.array_equal(out_a.frames, out_b.frames)


class TestRequests:
    def test_mode_validation(self, dataset):
        gt = dataset.spin_tuple(0)
        anim = dataset.animation_tuple(0)
        with pytest.raises(ValueError):
            InferenceRequest(mode="teleport", driving=gt.driving)
        with pytest.raises(ValueError):
            InferenceRequest(mode="image_to_360", driving=anim.driving, images=[anim.garment_images[0]])
        with pytest.raises(ValueError):
            InferenceRequest(mode="animate", driving=gt.driving, images=[gt.video.frames[0]])
        with pytest.raises(ValueError):
            InferenceRequest(mode="image_to_360", driving=gt.driving, images=None)
        with pytest.raises(ValueError):
            InferenceRequest(mode="video_to_360", driving=gt.driving)

    def test_run_request_dispatch(self, dataset, model):
        gt = dataset.spin_tuple(0)
        req = InferenceRequest(
            mode="image_to_360",
            driving=gt.driving,
            images=[gt.video.frames[0]],
            image_heatmaps=[gt.driving.heatmaps2d[0]],
            seed=7,
        )
        out = run_request(model, req, SCHED)
        assert out.n_frames == gt.driving.n_frames


class TestPersistence:
    def test_save_load_roundtrip(self, dataset, model, tmp_path):
        video = dataset.animation_tuple(1)
        state = finetune_atlas(model, video, SCHED, m_iterations=3, seed=8, batch_frames=4)
        path = tmp_path / "atlas.npz"
        save_atlas(state, path)
        back = load_atlas(path)
        assert torch.equal(back.embedding, state.embedding)
        assert back.source_video_id == state.source_video_id
        assert back.iterations_done == 3
        assert back.seed == 8 and back.lr == state.lr
        np.testing.assert_allclose(back.losses, state.losses)
