import io

import numpy as np
import pytest

from mlnpose.fileio import (FileFormatError, TruncatedFileError,
                            WeightShapeError, load_weights, read_ppm,
                            read_tensor, save_weights, write_ppm, write_tensor)


class TestTensorFormat:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(2, 19, 5, 7)).astype(np.float32)
        path = tmp_path / "x.mlnt"
        write_tensor(path, x)
        back = read_tensor(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, x)

    def test_round_trip_stream(self):
        x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
        buf = io.BytesIO()
        write_tensor(buf, x)
        buf.seek(0)
        np.testing.assert_array_equal(read_tensor(buf), x)

    def test_header_layout(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros((1, 2, 3, 4), dtype=np.float32))
        raw = buf.getvalue()
        assert raw[:4] == b"MLNT"
        assert len(raw) == 4 + 4 + 16 + 4 * 24

    def test_bad_magic(self):
        with pytest.raises(FileFormatError):
            read_tensor(io.BytesIO(b"XXXX" + b"\0" * 64))

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros((1, 1, 4, 4), dtype=np.float32))
        clipped = io.BytesIO(buf.getvalue()[:-8])
        with pytest.raises(TruncatedFileError):
            read_tensor(clipped)

    def test_truncated_header(self):
        with pytest.raises(TruncatedFileError):
            read_tensor(io.BytesIO(b"MLNT\x01\x00"))

    def test_bad_version(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros((1, 1, 1, 1), dtype=np.float32))
        raw = bytearray(buf.getvalue())
        raw[4] = 99
        with pytest.raises(FileFormatError):
            read_tensor(io.BytesIO(bytes(raw)))


class TestWeightsFormat:
    def make_store(self):
        rng = np.random.default_rng(1)
        return {
            "conv1": (rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
                      rng.normal(size=4).astype(np.float32)),
            "conv2": (rng.normal(size=(2, 4, 1, 1)).astype(np.float32),
                      rng.normal(size=2).astype(np.float32)),
        }

    def test_round_trip(self, tmp_path):
        store = self.make_store()
        path = tmp_path / "w.mlnw"
        save_weights(path, store)
        back = load_weights(path)
        assert set(back) == set(store)
        for name in store:
            np.testing.assert_array_equal(back[name][0], store[name][0])
            np.testing.assert_array_equal(back[name][1], store[name][1])

    def test_bad_magic(self):
        with pytest.raises(FileFormatError):
            load_weights(io.BytesIO(b"NOPE" + b"\0" * 16))

    def test_truncated(self):
        buf = io.BytesIO()
        save_weights(buf, self.make_store())
        clipped = io.BytesIO(buf.getvalue()[:-4])
        with pytest.raises(TruncatedFileError):
            load_weights(clipped)

    def test_bias_shape_checked_on_save(self):
        store = {"c": (np.zeros((4, 3, 3, 3), dtype=np.float32),
                       np.zeros(3, dtype=np.float32))}
        with pytest.raises(WeightShapeError):
            save_weights(io.BytesIO(), store)


class TestPpm:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(2).integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_channel_first_input(self, tmp_path):
        img = np.random.default_rng(3).integers(0, 256, size=(3, 4, 6)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_array_equal(read_ppm(path), img.transpose(1, 2, 0))

    def test_comment_in_header(self, tmp_path):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        path = tmp_path / "img.ppm"
        with open(path, "wb") as f:
            f.write(b"P6\n# a comment\n2 2\n255\n" + img.tobytes())
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_truncated(self, tmp_path):
        path = tmp_path / "img.ppm"
        with open(path, "wb") as f:
            f.write(b"P6\n4 4\n255\n" + b"\0" * 10)
        with pytest.raises(TruncatedFileError):
            read_ppm(path)

    def test_not_ppm(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"GIF89a")
        with pytest.raises(FileFormatError):
            read_ppm(path)
