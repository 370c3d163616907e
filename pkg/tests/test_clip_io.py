import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from atomic_update import read_json  # noqa: E402
from clip_io import (  # noqa: E402
    META_NAME,
    degrade_directory,
    frame_paths,
    list_clips,
    read_clip,
    read_degraded,
    write_frames,
)
from degrade import FieldParity, InterlacedSequence, MosaicSequence, interlace, mosaic, synthetic_clip  # noqa: E402
from errors import MissingFramesError  # noqa: E402


class TestClipIO(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = self.tmp.name
        self.clip = synthetic_clip(4, 8, 10, seed=2)
        write_frames(self.clip.frames, os.path.join(self.root, "clips", "clip_a"))

    def tearDown(self):
        self.tmp.cleanup()

    def test_frames_round_trip(self):
        clip_dir = os.path.join(self.root, "clips", "clip_a")
        names = [os.path.basename(p) for p in frame_paths(clip_dir)]
        self.assertEqual(names, ["000000.png", "000001.png", "000002.png", "000003.png"])
        np.testing.assert_array_equal(read_clip(clip_dir).frames, self.clip.frames)

    def test_list_clips_skips_empty_directories(self):
        os.makedirs(os.path.join(self.root, "clips", "empty"))
        self.assertEqual(list_clips(os.path.join(self.root, "clips")),
                         [os.path.join(self.root, "clips", "clip_a")])

    def test_degrade_interlace_directory(self):
        out_root = os.path.join(self.root, "fields")
        written = degrade_directory(os.path.join(self.root, "clips"), out_root, "interlace",
                                    first_parity="even", workers=1)
        self.assertEqual(written, [os.path.join(out_root, "clip_a")])

        meta = read_json(os.path.join(out_root, "clip_a", META_NAME))
        self.assertEqual(meta["task"], "interlace")
        self.assertEqual(meta["first_parity"], "even")
        self.assertEqual(meta["source_height"], 8)
        self.assertEqual(meta["frames"], 4)

        seq = read_degraded(os.path.join(out_root, "clip_a"))
        self.assertIsInstance(seq, InterlacedSequence)
        expected = interlace(self.clip, FieldParity.EVEN)
        self.assertEqual(seq.parities, expected.parities)
        for got, want in zip(seq.fields, expected.fields):
            np.testing.assert_array_equal(got, want)

    def test_degrade_mosaic_directory(self):
        out_root = os.path.join(self.root, "mosaics")
        degrade_directory(os.path.join(self.root, "clips"), out_root, "mosaic", pattern="GRBG", workers=1)
        seq = read_degraded(os.path.join(out_root, "clip_a"))
        self.assertIsInstance(seq, MosaicSequence)
        self.assertEqual(seq.pattern, "GRBG")
        np.testing.assert_array_equal(seq.frames, mosaic(self.clip, "GRBG").frames)

    def test_noise_differs_between_clips(self):
        write_frames(self.clip.frames, os.path.join(self.root, "clips", "clip_b"))
        runs = []
        for name in ("noisy_1", "noisy_2"):
            out_root = os.path.join(self.root, name)
            degrade_directory(os.path.join(self.root, "clips"), out_root, "mosaic",
                              noise_sigma=0.05, seed=4, workers=1)
            runs.append([read_degraded(os.path.join(out_root, c)).frames for c in ("clip_a", "clip_b")])
        first, second = runs
        self.assertFalse(np.array_equal(first[0], first[1]))
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])

    def test_missing_directories(self):
        with self.assertRaises(MissingFramesError):
            list_clips(os.path.join(self.root, "nowhere"))
        with self.assertRaises(MissingFramesError):
            degrade_directory(os.path.join(self.root, "clips", "clip_a"), self.root, "interlace", workers=1)
        with self.assertRaises(FileNotFoundError):
            read_degraded(os.path.join(self.root, "clips", "clip_a"))


if __name__ == "__main__":
    unittest.main()
