import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.errors import DatasetConfigError, DimensionError
from app.models.schemas import EvalReport, ImageScore, NetConfig, TrainConfig
from app.services.mdcn_arch import build_model, super_resolve
from app.services.optim import fit
from app.services.video_sr import (
    FrameWindow, VideoPatchDataset, bicubic_window, format_video_report, fuse_frames, list_frames,
    model_upscaler, save_sequence, synthesize_sequence, video_dirs_of, video_sr_frames, vsr_evaluate,
    window_at, window_indices,
)
from tests.helpers import blocky_image, dataset_dir, smooth_image, write_png


def constant_frames(n, h=4, w=4):
    return [np.full((h, w, 3), i, dtype=np.float32) for i in range(n)]


class TestWindows:
    def test_fused_channel_order(self):
        window = FrameWindow(tuple(constant_frames(5)))
        x = fuse_frames(window)
        assert x.shape == (1, 15, 4, 4)
        for i in range(5):
            assert_array_equal(x[0, 3 * i:3 * i + 3], i)
        assert_array_equal(x[0, 6:9], window.center.transpose(2, 0, 1))

    def test_start_is_replicated(self):
        frames = constant_frames(8)
        assert [int(f[0, 0, 0]) for f in window_at(frames, 0).frames] == [0, 0, 0, 1, 2]

    def test_interior_and_end(self):
        frames = constant_frames(8)
        assert [int(f[0, 0, 0]) for f in window_at(frames, 5).frames] == [3, 4, 5, 6, 7]
        assert window_indices(8, 7) == [5, 6, 7, 7, 7]

    def test_single_frame_sequence(self):
        assert window_indices(1, 0) == [0, 0, 0, 0, 0]

    def test_empty_sequence(self):
        with pytest.raises(DatasetConfigError):
            window_indices(0, 0)

    def test_window_needs_five_frames(self):
        with pytest.raises(DimensionError):
            FrameWindow(tuple(constant_frames(4)))

    def test_window_frames_share_a_size(self):
        frames = constant_frames(5)
        frames[3] = np.zeros((4, 5, 3), np.float32)
        with pytest.raises(DimensionError):
            FrameWindow(tuple(frames))


class TestVideoModel:
    @pytest.fixture
    def video_params(self):
        cfg = NetConfig(feat=4, growth=2, n_blocks=1, n_units=1, scale=4, in_channels=15)
        return build_model(cfg, seed=2)

    def test_fused_input_to_x4_output(self, video_params):
        frames = [smooth_image(32, 32, seed=i) for i in range(5)]
        x = fuse_frames(FrameWindow(tuple(frames)))
        assert x.shape == (1, 15, 32, 32)
        assert super_resolve(x, video_params, 4).shape == (1, 3, 128, 128)

    def test_upscaler_produces_center_frame(self, video_params):
        frames = [smooth_image(32, 32, seed=i) for i in range(5)]
        out = model_upscaler(video_params)(FrameWindow(tuple(frames)), 4)
        assert out.shape == (128, 128, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_image_model_only_sees_the_center(self, micro_config):
        params = build_model(micro_config)
        frames = [smooth_image(8, 8, seed=i) for i in range(5)]
        other = list(frames)
        other[0] = other[4] = np.zeros_like(frames[0])
        upscale = model_upscaler(params)
        assert_array_equal(upscale(FrameWindow(tuple(frames)), 2), upscale(FrameWindow(tuple(other)), 2))

    def test_every_frame_is_upscaled(self):
        frames = [smooth_image(6, 7, seed=i) for i in range(3)]
        out = video_sr_frames(bicubic_window, frames, 2, workers=2)
        assert len(out) == 3
        assert all(f.shape == (12, 14, 3) for f in out)


def write_video(root, name, n, start=1, size=32, skip=()):
    directory = root / name
    for i in range(start, start + n):
        if i not in skip:
            write_png(directory / f"frame{i}.png", smooth_image(size, size, seed=i))
    return directory


class TestSequencesOnDisk:
    def test_numeric_order(self, tmp_path):
        directory = write_video(tmp_path, "walk", 3, start=8)
        assert [p.name for p in list_frames(directory)] == ["frame8.png", "frame9.png", "frame10.png"]

    def test_gap_is_rejected(self, tmp_path):
        directory = write_video(tmp_path, "gappy", 4, skip=(3,))
        with pytest.raises(DatasetConfigError, match="missing"):
            list_frames(directory)

    def test_unnumbered_frame(self, tmp_path):
        write_png(tmp_path / "clip" / "cover.png", smooth_image(8, 8))
        with pytest.raises(DatasetConfigError):
            list_frames(tmp_path / "clip")

    def test_save_sequence(self, tmp_path):
        paths = save_sequence([smooth_image(4, 4)] * 2, tmp_path / "out")
        assert [p.name for p in paths] == ["frame0000.png", "frame0001.png"]

    def test_video_dirs_sorted(self, tmp_path):
        write_video(tmp_path, "walk", 1)
        write_video(tmp_path, "calendar", 1)
        assert [p.name for p in video_dirs_of(tmp_path)] == ["calendar", "walk"]


class TestVideoEvaluation:
    def test_broken_video_is_skipped(self, tmp_path):
        good = write_video(tmp_path, "city", 4)
        bad = write_video(tmp_path, "foliage", 4, skip=(2,))
        report = vsr_evaluate(bicubic_window, [good, bad], s=2, crop=2)
        assert [r.name for r in report.rows] == ["City"]
        assert report.skipped == ["foliage"]
        assert math.isfinite(report.avg_psnr)

    def test_video_with_mismatched_frames_is_skipped(self, tmp_path):
        good = write_video(tmp_path, "city", 4)
        odd = write_video(tmp_path, "walk", 3)
        write_png(odd / "frame4.png", smooth_image(36, 36, seed=4))
        report = vsr_evaluate(bicubic_window, [good, odd], s=2, crop=2)
        assert [r.name for r in report.rows] == ["City"]
        assert report.skipped == ["walk"]

    def test_lossless_video_is_infinite(self, tmp_path):
        video = write_video(tmp_path, "still", 3)
        report = vsr_evaluate(bicubic_window, [video], s=1, crop=8)
        assert report.rows[0].psnr == math.inf
        assert report.rows[0].ssim == 1.0

    def test_max_frames(self, tmp_path):
        video = write_video(tmp_path, "walk", 6)
        seen = []

        def counting(window, factor):
            seen.append(1)
            return bicubic_window(window, factor)

        vsr_evaluate(counting, [video], s=2, max_frames=4, crop=2)
        assert len(seen) == 4

    def test_no_videos(self):
        with pytest.raises(DatasetConfigError):
            vsr_evaluate(bicubic_window, [])

    def test_report_table(self):
        report = EvalReport(dataset="Vid4", scale=4, crop=8, avg_psnr=24.0, avg_ssim=0.7, rows=[
            ImageScore(name="Calendar", psnr=22.0, ssim=0.6),
            ImageScore(name="City", psnr=26.0, ssim=0.8),
        ])
        lines = format_video_report(report, method="Bicubic").splitlines()
        assert lines[0] == "Vid4 x4 (crop 8)"
        assert lines[1].split() == ["Method", "Calendar", "City", "Average"]
        assert lines[2].split() == ["Bicubic", "22.00/0.6000", "26.00/0.8000", "24.00/0.7000"]

    def test_vid4_bicubic(self):
        report = vsr_evaluate(bicubic_window, video_dirs_of(dataset_dir("MDCN_VID4_DIR")), s=4, workers=4)
        assert len(report.rows) == 4
        assert report.avg_psnr == pytest.approx(23.78, abs=0.2)


class TestSyntheticSequences:
    def test_center_frame_is_the_still(self):
        img = smooth_image(20, 20)
        frames = synthesize_sequence(img, 5, np.random.default_rng(0))
        assert len(frames) == 5
        assert all(f.shape == img.shape and f.dtype == np.float32 for f in frames)
        assert_allclose(frames[2], img, atol=1e-5)
        assert np.abs(frames[0] - frames[2]).max() > 1e-3

    def test_constant_pan(self):
        img = smooth_image(20, 24, seed=2)
        frames = synthesize_sequence(img, 5, np.random.default_rng(0), velocity=(1.0, 0.0))
        assert_allclose(frames[2], img, atol=1e-5)
        # integer shifts are exact away from the replicated border
        assert_allclose(frames[3][3:], img[2:-1], atol=1e-5)
        assert_allclose(frames[4][4:], img[2:-2], atol=1e-5)
        assert_allclose(frames[0][:-4], img[2:-2], atol=1e-5)

    def test_patch_shapes(self):
        dataset = VideoPatchDataset.synthetic([smooth_image(32, 32)], scale=2, patch_size=6)
        lr, hr = dataset.sample(3, np.random.default_rng(0))
        assert lr.shape == (3, 15, 6, 6) and hr.shape == (3, 3, 12, 12)

    def test_center_only_is_the_middle_of_the_window(self):
        stills = [smooth_image(32, 32, seed=1)]
        fused = VideoPatchDataset.synthetic(stills, scale=2, patch_size=6, seed=4)
        single = VideoPatchDataset.synthetic(stills, scale=2, patch_size=6, seed=4, center_only=True)
        lr15, hr15 = fused.sample(2, np.random.default_rng(9))
        lr3, hr3 = single.sample(2, np.random.default_rng(9))
        assert lr3.shape == (2, 3, 6, 6)
        assert_array_equal(lr15[:, 6:9], lr3)
        assert_array_equal(hr15, hr3)

    def test_from_dir_reads_sequences(self, tmp_path):
        write_video(tmp_path, "a", 3, size=24)
        dataset = VideoPatchDataset.from_dir(tmp_path, scale=2, patch_size=4, augment=False)
        assert len(dataset.sequences) == 1
        assert len(dataset.sequences[0].lr) == 3

    def test_from_dir_animates_stills(self, image_dir):
        dataset = VideoPatchDataset.from_dir(image_dir, scale=2, patch_size=4, n_frames=5)
        assert len(dataset.sequences) == 3
        assert all(len(s.hr) == 5 for s in dataset.sequences)


@pytest.mark.slow
def test_fused_frames_train_to_lower_loss_than_center_frame():
    stills = [blocky_image(64, 64, seed=s) for s in range(3)]
    train = TrainConfig(lr0=1e-3, batch_size=8, max_iters=2000, seed=0, log_every=500)
    losses = {}
    for name, channels, center_only in [("fused", 15, False), ("center", 3, True)]:
        dataset = VideoPatchDataset.synthetic(stills, scale=2, patch_size=12, n_frames=15, velocity=(1.0, 0.5),
                                              antialias=False, center_only=center_only)
        params = build_model(NetConfig(feat=16, growth=8, n_blocks=1, n_units=3, in_channels=channels))
        result = fit(params, dataset, train)
        losses[name] = float(np.mean(result.losses[-200:]))
    assert losses["fused"] < losses["center"]
