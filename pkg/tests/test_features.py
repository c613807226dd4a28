import struct

import numpy as np
import pytest

from rankfuse import features as ft
from rankfuse import tensorio
from rankfuse.errors import FormatError, InvalidInput


def conv_oracle(img, kernel):
    """Zero-padded 3x3 cross-correlation with explicit loops."""
    w, h, cin = img.shape
    cout = kernel.shape[3]
    pad = np.zeros((w + 2, h + 2, cin))
    pad[1:-1, 1:-1] = img
    out = np.zeros((w, h, cout))
    for i in range(w):
        for j in range(h):
            for o in range(cout):
                out[i, j, o] = sum(
                    pad[i + a, j + b, c] * kernel[a, b, c, o]
                    for a in range(3) for b in range(3) for c in range(cin)
                )
    return out


class TestExtractor:
    def test_zero_image(self):
        fmap = ft.ToyExtractor().extract(np.zeros((16, 16)))
        assert fmap.shape == (2, 2, 32)
        assert not fmap.data.any()

    def test_deterministic(self, rng):
        img = rng.random((32, 32))
        a = ft.ToyExtractor(ft.ToyExtractorSpec(rng_seed=5)).extract(img)
        b = ft.ToyExtractor(ft.ToyExtractorSpec(rng_seed=5)).extract(img)
        assert a.data.tobytes() == b.data.tobytes()
        c = ft.ToyExtractor(ft.ToyExtractorSpec(rng_seed=6)).extract(img)
        assert not np.array_equal(a.data, c.data)

    def test_default_output_shape_for_full_size(self):
        assert ft.ToyExtractor().output_shape((832, 832)) == (104, 104, 32)

    def test_hand_set_kernel(self):
        img = np.arange(16, dtype=float).reshape(4, 4) - 6.0
        kernel = np.zeros((3, 3, 1, 2))
        kernel[1, 1, 0, 0] = 1.0  # identity
        kernel[0, 1, 0, 1] = 1.0  # neighbour above
        kernel[2, 1, 0, 1] = -1.0  # minus neighbour below
        ex = ft.ToyExtractor(weights=[kernel])
        conv = ft.conv3x3_same(img[:, :, None], kernel)
        np.testing.assert_allclose(conv, conv_oracle(img[:, :, None], kernel))
        np.testing.assert_array_equal(conv[:, :, 0], img)
        act = np.where(conv > 0, conv, 0.01 * conv)
        expected = act.reshape(2, 2, 2, 2, 2).max(axis=(1, 3))
        np.testing.assert_allclose(ex.extract(img).data, expected.astype(np.float32))

    def test_random_conv_matches_oracle(self, rng):
        img = rng.normal(size=(5, 6, 3))
        kernel = rng.normal(size=(3, 3, 3, 4))
        np.testing.assert_allclose(ft.conv3x3_same(img, kernel), conv_oracle(img, kernel), atol=1e-12)

    def test_weights_are_frozen(self, rng):
        ex = ft.ToyExtractor()
        before = [w.copy() for w in ex.weights]
        ex.extract(rng.random((16, 16)))
        with pytest.raises(ValueError):
            ex.weights[0][0, 0, 0, 0] = 1.0
        for a, b in zip(before, ex.weights):
            np.testing.assert_array_equal(a, b)

    def test_indivisible_size(self, rng):
        with pytest.raises(InvalidInput):
            ft.ToyExtractor().extract(rng.random((12, 16)))

    def test_channel_mismatch(self, rng):
        with pytest.raises(InvalidInput):
            ft.ToyExtractor().extract(rng.random((16, 16, 3)))


class TestFusion:
    def test_identical_maps(self, rng):
        a = ft.FeatureMap(rng.normal(size=(3, 3, 4)))
        fused = ft.concat_modality(a, a)
        np.testing.assert_array_equal(fused.data[:, :, 0], a.data)
        np.testing.assert_array_equal(fused.data[:, :, 1], a.data)

    def test_ones_zeros(self):
        fused = ft.concat_modality(ft.FeatureMap(np.ones((2, 2, 1))), ft.FeatureMap(np.zeros((2, 2, 1)), "DBT"))
        assert fused.shape == (2, 2, 2, 1)
        assert np.all(fused.data[:, :, 0, :] == 1) and np.all(fused.data[:, :, 1, :] == 0)

    def test_lossless(self, rng):
        a = ft.FeatureMap(rng.normal(size=(5, 4, 3)), "DM")
        b = ft.FeatureMap(rng.normal(size=(5, 4, 3)), "DBT")
        ua, ub = ft.unfuse(ft.concat_modality(a, b))
        np.testing.assert_array_equal(ua.data, a.data)
        np.testing.assert_array_equal(ub.data, b.data)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInput):
            ft.concat_modality(ft.FeatureMap(np.ones((2, 2, 1))), ft.FeatureMap(np.ones((2, 3, 1))))

    def test_feature_map_validation(self):
        with pytest.raises(InvalidInput):
            ft.FeatureMap(np.ones((2, 2)))
        with pytest.raises(InvalidInput):
            ft.FeatureMap(np.full((1, 1, 1), np.nan))


class TestTensorFormat:
    def test_round_trip_feature_map(self, tmp_path, rng):
        fmap = ft.FeatureMap(rng.normal(size=(7, 7, 16)).astype(np.float32))
        ft.export_feature_map(tmp_path / "m.tnsr", fmap)
        back = ft.import_feature_map(tmp_path / "m.tnsr")
        assert back.data.dtype == np.float32
        assert back.data.tobytes() == fmap.data.tobytes()

    def test_float64_round_trip(self, rng):
        x = rng.normal(size=(3, 2, 5))
        y = tensorio.decode(tensorio.encode(x))
        assert y.dtype == np.float64 and y.tobytes() == x.tobytes()

    def test_header_layout(self):
        buf = tensorio.encode(np.zeros((2, 3), np.float32))
        assert buf[:4] == b"TNSR"
        assert buf[4:7] == bytes([1, 1, 2])
        assert struct.unpack("<2I", buf[7:15]) == (2, 3)
        assert len(buf) == 15 + 6 * 4

    def test_wrong_magic(self):
        buf = bytearray(tensorio.encode(np.zeros(3, np.float32)))
        buf[:4] = b"TNSX"
        with pytest.raises(FormatError) as exc:
            tensorio.decode(buf)
        assert exc.value.offset == 0

    def test_truncated_payload(self):
        buf = tensorio.encode(np.zeros(10, np.float32))[:-4]
        with pytest.raises(FormatError, match="truncated") as exc:
            tensorio.decode(buf)
        assert "10 elements declared, 9 present" in str(exc.value)
        assert exc.value.offset == len(buf)

    @pytest.mark.parametrize("cut", [0, 3, 6, 8])
    def test_truncated_header(self, cut):
        buf = tensorio.encode(np.zeros((2, 2), np.float32))[:cut]
        with pytest.raises(FormatError):
            tensorio.decode(buf)

    def test_bad_version_and_dtype(self):
        buf = bytearray(tensorio.encode(np.zeros(2, np.float32)))
        buf[4] = 9
        with pytest.raises(FormatError) as exc:
            tensorio.decode(buf)
        assert exc.value.offset == 4
        buf[4], buf[5] = 1, 7
        with pytest.raises(FormatError) as exc:
            tensorio.decode(buf)
        assert exc.value.offset == 5

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            tensorio.decode(tensorio.encode(np.zeros(2, np.float32)) + b"\x00")

    def test_import_rejects_wrong_rank(self, tmp_path):
        tensorio.write(tmp_path / "v.tnsr", np.zeros(4, np.float32))
        with pytest.raises(FormatError):
            ft.import_feature_map(tmp_path / "v.tnsr")

    def test_fuzzed_headers_never_crash(self, rng):
        good = tensorio.encode(rng.normal(size=(3, 4)).astype(np.float32))
        for _ in range(500):
            buf = bytearray(good)
            for _ in range(rng.integers(1, 4)):
                buf[rng.integers(0, 15)] = rng.integers(0, 256)
            buf = bytes(buf[: rng.integers(0, len(buf) + 1)])
            try:
                tensorio.decode(buf)
            except FormatError:
                pass
