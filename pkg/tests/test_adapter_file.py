import struct
import unittest
import zlib
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

from adapters.lora import LoraAdapter
from connectors.adapter_file import read_adapter, write_adapter
from linalg.matrix import DenseMatrix
from pruning.selection import LayerPrune, PruneMap
from utils.errors import ArtifactIOError, FormatError, IntegrityError


def sample():
    rng = np.random.default_rng(0)
    adapter = LoraAdapter(
        layer_name="down",
        B=DenseMatrix.of(rng.normal(size=(2, 2))),
        A=DenseMatrix.of(rng.normal(size=(2, 3))),
        alpha=16.0,
    )
    prune = LayerPrune("down", (1, 4), (0, 2, 3), 5, 4)
    return adapter, prune


class TestAdapterFile(unittest.TestCase):
    def setUp(self):
        self._td = TemporaryDirectory()
        self.dir = Path(self._td.name)
        self.path = self.dir / "down.lcra"
        self.adapter, self.prune = sample()
        write_adapter(self.path, self.adapter, self.prune, (5, 4), 2**40 + 3)

    def tearDown(self):
        self._td.cleanup()

    def test_round_trip_is_bitwise(self):
        record = read_adapter(self.path)
        self.assertEqual(record.adapter.B, self.adapter.B)
        self.assertEqual(record.adapter.A, self.adapter.A)
        self.assertEqual(record.adapter.alpha, 16.0)
        self.assertEqual(record.adapter.layer_name, "down")
        self.assertEqual(record.prune, self.prune)
        self.assertEqual(record.full_dims, (5, 4))
        self.assertEqual(record.seed, 2**40 + 3)

    def test_byte_layout(self):
        data = self.path.read_bytes()
        self.assertEqual(data[:4], b"LCRA")
        self.assertEqual(struct.unpack_from("<HH", data, 4), (1, 4))
        self.assertEqual(data[8:12], b"down")
        self.assertEqual(struct.unpack_from("<IIIdQ", data, 12), (5, 4, 2, 16.0, 2**40 + 3))
        offset = 12 + struct.calcsize("<IIIdQ")
        self.assertEqual(struct.unpack_from("<III", data, offset), (2, 1, 4))
        offset += 12
        self.assertEqual(struct.unpack_from("<IIII", data, offset), (3, 0, 2, 3))
        offset += 16
        b = struct.unpack_from("<4d", data, offset)
        self.assertEqual(b, tuple(self.adapter.B.values.ravel()))
        self.assertEqual(len(data), offset + 8 * (4 + 6) + 4)
        (crc,) = struct.unpack_from("<I", data, len(data) - 4)
        self.assertEqual(crc, zlib.crc32(data[:-4]))

    def test_accepts_whole_map(self):
        other = self.dir / "again.lcra"
        pm = PruneMap(layers=(self.prune,))
        write_adapter(other, self.adapter, pm, (5, 4), 0)
        self.assertEqual(read_adapter(other).prune, self.prune)

    def test_truncated(self):
        data = self.path.read_bytes()
        self.path.write_bytes(data[:-7])
        with self.assertRaises(IntegrityError):
            read_adapter(self.path)
        self.path.write_bytes(data[:3])
        with self.assertRaises(IntegrityError):
            read_adapter(self.path)

    def test_wrong_magic(self):
        data = self.path.read_bytes()
        self.path.write_bytes(b"LCRB" + data[4:])
        with self.assertRaises(FormatError) as ctx:
            read_adapter(self.path)
        self.assertEqual(ctx.exception.expected, "LCRA")
        self.assertIn("LCRA", str(ctx.exception))

    def test_unsupported_version(self):
        data = bytearray(self.path.read_bytes())
        struct.pack_into("<H", data, 4, 2)
        self.path.write_bytes(bytes(data))
        with self.assertRaises(FormatError) as ctx:
            read_adapter(self.path)
        self.assertEqual(ctx.exception.found, 2)

    def test_corrupted_payload(self):
        data = bytearray(self.path.read_bytes())
        data[40] ^= 0xFF
        self.path.write_bytes(bytes(data))
        with self.assertRaises(IntegrityError):
            read_adapter(self.path)

    def test_missing_file(self):
        with self.assertRaises(ArtifactIOError) as ctx:
            read_adapter(self.dir / "absent.lcra")
        self.assertEqual(ctx.exception.path, self.dir / "absent.lcra")

    def test_no_temporary_files_left(self):
        self.assertEqual(sorted(p.name for p in self.dir.iterdir()), ["down.lcra"])


if __name__ == "__main__":
    unittest.main()
