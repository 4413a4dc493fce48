"""Checkpoint container and bitstream framing."""

import numpy as np
import pytest

from ecvqlab import checkpoint
from ecvqlab.bitstream import pack_bitstream, unpack_bitstream
from ecvqlab.errors import CorruptStreamError


class TestContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = [("enc.w", rng.standard_normal((3, 4))),
                  ("enc.b", rng.standard_normal(4)),
                  ("logits", rng.standard_normal(7))]
        hypers = {"lam": 14.0, "n_codewords": 64, "label": "x", "flag": True,
                  "milestones": [0, 2000]}
        path = tmp_path / "model.ckpt"
        checkpoint.save(path, "ECVQCodec", hypers, params)
        kind, h2, p2 = checkpoint.load(path)
        assert kind == "ECVQCodec"
        assert h2 == hypers
        assert [n for n, _ in p2] == [n for n, _ in params]
        for (_, a), (_, b) in zip(params, p2):
            np.testing.assert_array_equal(a, b)

    def test_magic_and_version(self, tmp_path):
        buf = checkpoint.serialize("X", {}, [])
        assert buf.startswith(b"ECVQLAB1")
        with pytest.raises(ValueError, match="magic"):
            checkpoint.deserialize(b"WRONGMAG" + buf[8:])

    def test_trailing_data_rejected(self):
        buf = checkpoint.serialize("X", {}, [("p", np.zeros(3))])
        with pytest.raises(ValueError, match="trailing"):
            checkpoint.deserialize(buf + b"\x00")

    def test_checksum_tracks_params(self):
        a = checkpoint.serialize("X", {}, [("p", np.zeros(3))])
        b = checkpoint.serialize("X", {}, [("p", np.ones(3))])
        assert checkpoint.checksum(a) != checkpoint.checksum(b)
        assert len(checkpoint.checksum(a)) == 8

    def test_little_endian_layout(self):
        buf = checkpoint.serialize("X", {}, [("p", np.array([1.0]))])
        assert buf[-8:] == np.array([1.0], dtype="<f8").tobytes()


class TestBitstreamFraming:
    def test_round_trip(self):
        buf = pack_bitstream(b"12345678", 42, 2, b"payload")
        checksum, count, dim, payload = unpack_bitstream(buf)
        assert (checksum, count, dim, payload) == (b"12345678", 42, 2, b"payload")

    def test_bad_magic(self):
        with pytest.raises(CorruptStreamError, match="magic"):
            unpack_bitstream(b"X" * 40)

    def test_truncated_header(self):
        with pytest.raises(CorruptStreamError, match="header"):
            unpack_bitstream(b"ECVQBIT1")
