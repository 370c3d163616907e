import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from atomic_update import atomic_write_bytes, atomic_write_csv, atomic_write_json, read_json  # noqa: E402


class TestAtomicUpdate(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_json_creates_parents_and_serializes_numpy(self):
        path = os.path.join(self.tmp.name, "a", "b", "meta.json")
        atomic_write_json({"frames": 3, "shape": np.array([2, 4])}, path)
        self.assertEqual(read_json(path), {"frames": 3, "shape": [2, 4]})

    def test_csv_uses_header_order(self):
        path = os.path.join(self.tmp.name, "report.csv")
        atomic_write_csv(["clip", "psnr_db"], [{"psnr_db": 31.5, "clip": "a", "extra": 1}, {"clip": "ALL"}], path)
        with open(path) as f:
            self.assertEqual(f.read(), "clip,psnr_db\na,31.5\nALL,\n")

    def test_bytes_overwrite(self):
        path = os.path.join(self.tmp.name, "blob.bin")
        atomic_write_bytes(b"first", path)
        atomic_write_bytes(b"second", path)
        with open(path, "rb") as f:
            self.assertEqual(f.read(), b"second")
        self.assertEqual(os.listdir(self.tmp.name), ["blob.bin"])


if __name__ == "__main__":
    unittest.main()
