"""Raster IO, dataset loading rules, and the synthetic generator."""

import numpy as np
import pytest

from coopseg.data import (
    DataError,
    MASK_THRESHOLD,
    load_dataset,
    read_raster,
    resize_bilinear,
    resize_nearest,
    synth_dataset,
    write_gray,
)


def write_bytes(path, payload):
    path.write_bytes(payload)
    return path


class TestPnm:
    def test_ascii_and_binary_gray_agree(self, tmp_path):
        vals = [0, 17, 128, 255, 3, 99]
        ascii_p = write_bytes(
            tmp_path / "a.pgm",
            ("P2\n3 2\n255\n" + " ".join(map(str, vals)) + "\n").encode(),
        )
        binary_p = write_bytes(tmp_path / "b.pgm", b"P5\n3 2\n255\n" + bytes(vals))
        a = read_raster(ascii_p)
        b = read_raster(binary_p)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (2, 3)
        assert a.dtype == np.uint8

    def test_comments_anywhere_in_header(self, tmp_path):
        p = write_bytes(
            tmp_path / "c.pgm",
            b"P5 # format\n# a comment line\n2 # width\n1\n255\n\x07\x08",
        )
        np.testing.assert_array_equal(read_raster(p), [[7, 8]])

    def test_binary_color_layout(self, tmp_path):
        # 1x2 PPM: red pixel then blue pixel, row-major RGB triplets
        p = write_bytes(tmp_path / "c.ppm", b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff")
        img = read_raster(p)
        assert img.shape == (1, 2, 3)
        np.testing.assert_array_equal(img[0, 0], [255, 0, 0])
        np.testing.assert_array_equal(img[0, 1], [0, 0, 255])

    def test_wide_maxval_rejected(self, tmp_path):
        p = write_bytes(tmp_path / "w.pgm", b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(DataError):
            read_raster(p)

    def test_truncated_payload_rejected(self, tmp_path):
        p = write_bytes(tmp_path / "t.pgm", b"P5\n2 2\n255\n\x01\x02")
        with pytest.raises(DataError):
            read_raster(p)

    def test_unknown_magic_rejected(self, tmp_path):
        p = write_bytes(tmp_path / "u.pgm", b"P9\n1 1\n255\n\x00")
        with pytest.raises(DataError):
            read_raster(p)

    def test_write_read_roundtrip(self, tmp_path):
        arr = np.arange(30, dtype=np.uint8).reshape(5, 6) * 8
        p = tmp_path / "r.pgm"
        write_gray(p, arr)
        np.testing.assert_array_equal(read_raster(p), arr)


def put_pair(root, stem, img_vals, mask_vals, w, h):
    (root / "images").mkdir(exist_ok=True, parents=True)
    (root / "masks").mkdir(exist_ok=True, parents=True)
    (root / "images" / f"{stem}.pgm").write_bytes(
        f"P5\n{w} {h}\n255\n".encode() + bytes(img_vals)
    )
    (root / "masks" / f"{stem}.pgm").write_bytes(
        f"P5\n{w} {h}\n255\n".encode() + bytes(mask_vals)
    )


class TestLoadDataset:
    def test_empty_dir_gives_empty_list(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        assert load_dataset(tmp_path, 16) == []

    def test_three_pairs_lexicographic(self, tmp_path):
        for stem in ("zebra", "apple", "mango"):
            put_pair(tmp_path, stem, [100] * 16, [255] * 16, 4, 4)
        samples = load_dataset(tmp_path, 16)
        assert [s.id for s in samples] == ["apple", "mango", "zebra"]

    def test_threshold_128_rule(self, tmp_path):
        put_pair(tmp_path, "m", [0] * 4, [0, 255, 127, 128], 2, 2)
        sample = load_dataset(tmp_path, 2)[0]
        np.testing.assert_array_equal(sample.mask[0], [[0.0, 1.0], [0.0, 1.0]])
        assert MASK_THRESHOLD == 128

    def test_missing_mask_named(self, tmp_path):
        put_pair(tmp_path, "ok", [0] * 4, [255] * 4, 2, 2)
        (tmp_path / "images" / "lonely.pgm").write_bytes(b"P5\n2 2\n255\n\x00\x00\x00\x00")
        with pytest.raises(DataError, match="lonely"):
            load_dataset(tmp_path, 2)

    def test_gray_image_becomes_three_channels(self, tmp_path):
        put_pair(tmp_path, "g", list(range(16)), [255] * 16, 4, 4)
        sample = load_dataset(tmp_path, 4)[0]
        assert sample.image.shape == (3, 4, 4)
        np.testing.assert_array_equal(sample.image[0], sample.image[1])
        assert sample.image.max() <= 1.0

    def test_resize_to_config_size(self, tmp_path):
        put_pair(tmp_path, "r", [10] * 16, [255] * 16, 4, 4)
        sample = load_dataset(tmp_path, 8)[0]
        assert sample.image.shape == (3, 8, 8)
        assert sample.mask.shape == (1, 8, 8)
        assert set(np.unique(sample.mask)) <= {0.0, 1.0}


class TestResize:
    def test_identity_when_same_size(self):
        img = np.random.default_rng(0).uniform(size=(5, 7))
        np.testing.assert_allclose(resize_bilinear(img, 5, 7), img, atol=1e-12)
        np.testing.assert_array_equal(resize_nearest(img, 5, 7), img)

    def test_bilinear_preserves_constant(self):
        img = np.full((4, 4), 0.37)
        out = resize_bilinear(img, 9, 6)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_nearest_keeps_binary(self):
        img = (np.random.default_rng(1).uniform(size=(6, 6)) > 0.5).astype(float)
        out = resize_nearest(img, 13, 13)
        assert set(np.unique(out)) <= {0.0, 1.0}


class TestSynthetic:
    def test_same_seed_bitwise_identical(self):
        a = synth_dataset(3, 32, seed=11)
        b = synth_dataset(3, 32, seed=11)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.image, sb.image)
            np.testing.assert_array_equal(sa.mask, sb.mask)
            assert sa.id == sb.id

    def test_different_seeds_differ(self):
        a = synth_dataset(1, 32, seed=1)[0]
        b = synth_dataset(1, 32, seed=2)[0]
        assert np.abs(a.image - b.image).max() > 0

    def test_masks_binary_and_nonempty(self):
        for s in synth_dataset(6, 48, seed=7):
            vals = set(np.unique(s.mask))
            assert vals <= {0.0, 1.0}
            assert 1.0 in vals
            assert s.image.shape == (3, 48, 48)
            assert s.mask.shape == (1, 48, 48)
            assert 0.0 <= s.image.min() and s.image.max() <= 1.0

    def test_area_ratio_bounded_across_1000_seeds(self):
        lo, hi = 1.0, 0.0
        for seed in range(1000):
            m = synth_dataset(1, 64, seed=seed)[0].mask
            ratio = m.mean()
            lo, hi = min(lo, ratio), max(hi, ratio)
        assert 0.0 < lo and hi < 0.5

    def test_small_and_large_targets_both_occur(self):
        areas = [s.mask.sum() for s in synth_dataset(64, 64, seed=0)]
        assert min(areas) < 150  # a radius-few-px target showed up
        assert max(areas) > 800

    def test_ids_are_stable(self):
        ids = [s.id for s in synth_dataset(3, 32, seed=0)]
        assert ids == ["synth_0000", "synth_0001", "synth_0002"]

    def test_needs_at_least_one(self):
        with pytest.raises(ValueError):
            synth_dataset(0, 32, seed=0)
