import csv
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from checkpoint import capture  # noqa: E402
from clip_io import read_png, write_frames  # noqa: E402
from degrade import ProgressiveClip, Task, cfa_mask, mosaic, synthetic_clip  # noqa: E402
from errors import ConfigError, DimensionError, MissingFramesError, OutOfRangeError  # noqa: E402
from evaluation import (  # noqa: E402
    PSNR_CAP,
    EvalConfig,
    ModelPredictor,
    attention_benchmark,
    config_fingerprint,
    evaluate_model,
    frame_metrics,
    growth_factor,
    psnr,
    reconstruct_sequence,
    ssim,
    temporal_profile,
    write_profile,
)
from model import build_model, toy_model_config  # noqa: E402
from train import TrainConfig, WindowDataset, train_loop  # noqa: E402

LONG_TESTS = os.environ.get("VRL_LONG_TESTS") == "1"


def oracle(window):
    return window.target


class TestPSNR(unittest.TestCase):
    def test_identical_frames_hit_cap(self):
        a = np.random.default_rng(0).random((8, 8, 3))
        self.assertEqual(psnr(a, a), PSNR_CAP)

    def test_known_mse(self):
        self.assertAlmostEqual(psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)), 20.0, places=9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        a8 = rng.integers(0, 256, (12, 12, 3)).astype(np.float64)
        b8 = rng.integers(0, 256, (12, 12, 3)).astype(np.float64)
        self.assertAlmostEqual(psnr(a8, b8, 255.0), psnr(a8 / 255.0, b8 / 255.0, 1.0), delta=1e-9)

    def test_decreases_with_noise(self):
        rng = np.random.default_rng(2)
        image = rng.random((16, 16, 3))
        noise = rng.standard_normal((16, 16, 3))
        scores = [psnr(image, image + s * noise) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
        self.assertTrue(all(a > b for a, b in zip(scores, scores[1:])))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSSIM(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.a = rng.random((16, 18, 3))
        self.b = np.clip(self.a + 0.1 * rng.standard_normal(self.a.shape), 0, 1)

    def test_identical(self):
        self.assertAlmostEqual(ssim(self.a, self.a), 1.0, delta=1e-9)

    def test_constant_frames(self):
        c1 = 0.01 ** 2
        score = ssim(np.zeros((12, 12, 3)), np.ones((12, 12, 3)))
        self.assertAlmostEqual(score, c1 / (1.0 + c1), places=9)

    def test_symmetry_and_channel_permutation(self):
        self.assertAlmostEqual(ssim(self.a, self.b), ssim(self.b, self.a), places=12)
        perm = [2, 0, 1]
        self.assertAlmostEqual(ssim(self.a, self.b), ssim(self.a[..., perm], self.b[..., perm]), places=12)
        self.assertAlmostEqual(psnr(self.a, self.b), psnr(self.a[..., perm], self.b[..., perm]), places=9)
        self.assertLess(ssim(self.a, self.b), 1.0)
        self.assertGreater(ssim(self.a, self.b), -1.0)

    def test_too_small(self):
        with self.assertRaises(DimensionError):
            ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))

    def test_frame_metrics_options(self):
        p_rgb, _ = frame_metrics(self.b, self.a)
        p_y, s_y = frame_metrics(self.b, self.a, EvalConfig(color_space="Y"))
        self.assertNotAlmostEqual(p_rgb, p_y)
        self.assertLessEqual(s_y, 1.0)
        with self.assertRaises(DimensionError):
            frame_metrics(self.b, self.a, EvalConfig(crop_border=3))
        with self.assertRaises(ConfigError):
            EvalConfig(color_space="lab")
        with self.assertRaises(ConfigError):
            EvalConfig.from_dict({"window": 7})


class TestTemporalProfile(unittest.TestCase):
    def test_shapes(self):
        clip = synthetic_clip(60, 128, 160, seed=4)
        self.assertEqual(temporal_profile(clip, "horizontal", 100).shape, (60, 160, 3))
        self.assertEqual(temporal_profile(clip, "vertical", 0).shape, (60, 128, 3))

    def test_pure_gather(self):
        clip = synthetic_clip(6, 16, 20, seed=5)
        profile = temporal_profile(clip, "horizontal", 3)
        for t in range(6):
            np.testing.assert_array_equal(profile[t], clip.frames[t, 3])
        profile = temporal_profile(clip, "vertical", 7)
        np.testing.assert_array_equal(profile[2], clip.frames[2, :, 7])

    def test_static_clip(self):
        frame = np.random.default_rng(6).random((8, 10, 3))
        clip = ProgressiveClip(np.repeat(frame[None], 5, axis=0))
        profile = temporal_profile(clip, "horizontal", 4)
        for row in profile[1:]:
            np.testing.assert_array_equal(row, profile[0])

    def test_out_of_range(self):
        clip = synthetic_clip(3, 8, 10)
        with self.assertRaises(OutOfRangeError):
            temporal_profile(clip, "horizontal", 8)
        with self.assertRaises(OutOfRangeError):
            temporal_profile(clip, "vertical", -1)
        with self.assertRaises(ConfigError):
            temporal_profile(clip, "diagonal", 0)

    def test_written_png(self):
        clip = synthetic_clip(4, 8, 10, seed=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "profile.png")
            profile = write_profile(clip, "vertical", 2, path)
            np.testing.assert_allclose(read_png(path), profile, atol=1e-6)


class TestEvaluateModel(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.data = os.path.join(self.tmp.name, "gt")
        self.out = os.path.join(self.tmp.name, "eval")
        self.clip = synthetic_clip(5, 16, 20, seed=0)
        write_frames(self.clip.frames, os.path.join(self.data, "clip_0"))

    def tearDown(self):
        self.tmp.cleanup()

    def test_oracle_predictor(self):
        for task in (Task.DEINTERLACE, Task.DEMOSAIC):
            report = evaluate_model(None, self.data, task, out_dir=self.out, predictor=oracle)
            self.assertEqual(len(report.rows), 1)
            self.assertEqual(report.rows[0]["frames"], 5)
            self.assertEqual(report.mean_psnr, PSNR_CAP)
            self.assertAlmostEqual(report.mean_ssim, 1.0, delta=1e-9)

        with open(os.path.join(self.out, "report.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["clip"] for r in rows], ["clip_0", "ALL"])
        self.assertEqual(float(rows[-1]["psnr_db"]), PSNR_CAP)

    def test_trained_checkpoint(self):
        dataset = WindowDataset([self.clip], Task.DEINTERLACE)
        cfg = TrainConfig(iterations=2, batch_size=2, patch_h=8, patch_w=10)
        final, _ = train_loop(toy_model_config(), cfg, dataset)

        report = evaluate_model(final, self.data, "deinterlace", out_dir=self.out, diff_images=True)
        self.assertEqual(report.rows[0]["frames"], 5)
        self.assertTrue(0.0 < report.mean_psnr < PSNR_CAP)
        diff = read_png(os.path.join(self.out, "diff", "clip_0", "000000.png"))
        self.assertEqual(diff.shape, (16, 20, 3))
        self.assertEqual(len(report.fingerprint), 64)

        with self.assertRaises(ConfigError):
            evaluate_model(final, self.data, "demosaic")

    def test_mismatched_cfa_pattern(self):
        model, _ = build_model(toy_model_config(Task.DEMOSAIC))
        predictor = ModelPredictor(model)
        with self.assertRaises(ConfigError):
            reconstruct_sequence(mosaic(self.clip, "GRBG"), Task.DEMOSAIC, predictor)
        with self.assertRaises(ConfigError):
            evaluate_model(capture(model), self.data, pattern="GRBG")

        seq = mosaic(self.clip, "RGGB")
        frames = reconstruct_sequence(seq, Task.DEMOSAIC, predictor)
        observed = cfa_mask("RGGB", 16, 20)
        for frame, picture in zip(frames, seq.frames):
            np.testing.assert_array_equal(frame[observed], picture[observed])

    def test_missing_inputs(self):
        with self.assertRaises(ConfigError):
            evaluate_model(None, self.data, None, predictor=oracle)
        empty = os.path.join(self.tmp.name, "empty")
        os.makedirs(empty)
        with self.assertRaises(MissingFramesError):
            evaluate_model(None, empty, Task.DEMOSAIC, predictor=oracle)

    def test_fingerprint_ignores_key_order(self):
        self.assertEqual(config_fingerprint({"a": 1, "b": 2}), config_fingerprint({"b": 2, "a": 1}))


class TestAttentionBenchmark(unittest.TestCase):
    def test_small_sizes(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bench.csv")
            rows = attention_benchmark([64, 256], d=16, repetitions=1, k=8, out_path=path)
            self.assertTrue(os.path.exists(path))
        self.assertEqual(len(rows), 6)
        maps = {(r["variant"], r["n"]): r["map_elements"] for r in rows}
        self.assertEqual(maps[("SA", 256)], 256 * 256)
        self.assertEqual(maps[("EkSA", 64)], 16 * 16)
        self.assertEqual(maps[("EkSA", 256)], 16 * 16)
        self.assertGreater(growth_factor(rows, "EkSA", 64, 256), 0.0)

    def test_large_maps_are_skipped(self):
        rows = attention_benchmark([1024], repetitions=1, max_map_elements=1000)
        status = {r["variant"]: r["status"] for r in rows}
        self.assertEqual(status, {"SA": "skipped", "kSA": "skipped", "EkSA": "ok"})
        self.assertEqual(rows[-1]["map_elements"], 4096)
        with self.assertRaises(ConfigError):
            growth_factor(rows, "SA", 1024, 1024)

    def test_rejects_unsorted_sizes(self):
        with self.assertRaises(ConfigError):
            attention_benchmark([256, 64])
        with self.assertRaises(ConfigError):
            attention_benchmark([])

    @unittest.skipUnless(LONG_TESTS, "set VRL_LONG_TESTS=1 for the full benchmark")
    def test_sa_grows_faster_than_eksa(self):
        rows = attention_benchmark([1024, 4096, 16384], repetitions=3)
        maps = {(r["variant"], r["n"]): r["map_elements"] for r in rows if r["status"] == "ok"}
        self.assertEqual(maps[("SA", 1024)], 1048576)
        for n in (1024, 4096, 16384):
            self.assertEqual(maps[("EkSA", n)], 64 * 64)
        eksa = growth_factor(rows, "EkSA", 1024, 16384)
        for variant in ("SA", "kSA"):
            self.assertLessEqual(eksa, 0.5 * growth_factor(rows, variant, 1024, 16384))


if __name__ == "__main__":
    unittest.main()
