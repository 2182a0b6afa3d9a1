import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from idan.data import (
    AugmentConfig,
    AugmentParams,
    SamplePair,
    TileSpec,
    apply_augment,
    augment,
    crop_quarters,
    load_png,
    png_size,
    quarter_manifest,
    read_dataset,
    read_index,
    sample_augment_params,
    save_png,
    split_every_k,
    synth_dataset,
    synth_sample,
    tile_origins,
    tile_pair,
    write_dataset,
)


def random_pair(rng, h, w):
    return SamplePair(rng.random((3, h, w)).astype(np.float32), rng.random((3, h, w)).astype(np.float32),
                      (rng.random((h, w)) < 0.3).astype(np.uint8))


class TestTiling:
    def test_whu_count(self):
        origins = tile_origins(32507, 15354, TileSpec())
        assert len(origins) == 63 * 29 == 1827
        train, test = split_every_k(origins, 5)
        assert (len(train), len(test)) == (1462, 365)

    def test_exact_window(self):
        assert tile_origins(512, 512, TileSpec()) == [(0, 0)]

    def test_too_small_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert tile_origins(511, 511, TileSpec()) == []
        assert "smaller" in caplog.text

    @settings(max_examples=100, deadline=None)
    @given(w=st.integers(1, 300), h=st.integers(1, 300), win=st.integers(1, 64))
    def test_count_formula_and_bounds(self, w, h, win):
        origins = tile_origins(w, h, TileSpec(win, win, 5))
        assert len(origins) == (w // win) * (h // win)
        cover = np.zeros((h, w), dtype=int)
        for x, y in origins:
            assert x + win <= w and y + win <= h
            cover[y:y + win, x:x + win] += 1
        assert cover.max() <= 1

    def test_row_major_order(self):
        assert tile_origins(4, 4, TileSpec(2, 2, 5)) == [(0, 0), (2, 0), (0, 2), (2, 2)]

    def test_tile_pair_content(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((3, 10, 12)), rng.random((3, 10, 12))
        lab = (rng.random((10, 12)) < 0.5).astype(np.uint8)
        tiles = tile_pair(a, b, lab, TileSpec(4, 4, 5))
        assert len(tiles) == 6
        t = tiles[4]
        assert t.origin == (4, 4)
        np.testing.assert_array_equal(t.image_after, b[:, 4:8, 4:8])
        np.testing.assert_array_equal(t.label, lab[4:8, 4:8])


class TestSplit:
    def test_small(self):
        assert split_every_k(list(range(4)), 5) == ([0, 1, 2, 3], [])

    def test_ten(self):
        train, test = split_every_k(list(range(1, 11)), 5)
        assert test == [5, 10]
        assert len(train) == 8

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(0, 500), k=st.integers(1, 9))
    def test_partition(self, n, k):
        train, test = split_every_k(list(range(1, n + 1)), k)
        assert len(train) + len(test) == n
        assert len(test) == n // k
        assert all(p % k == 0 for p in test)


class TestQuarters:
    def test_levir_counts(self):
        manifest = [(f"g{i}", "train") for i in range(445)] + [(f"v{i}", "val") for i in range(64)] + \
                   [(f"t{i}", "test") for i in range(128)]
        rows = quarter_manifest(manifest)
        counts = {s: sum(1 for _, sp in rows if sp == s) for s in ("train", "val", "test")}
        assert counts == {"train": 1780, "val": 256, "test": 512}

    def test_reassembly(self):
        s = random_pair(np.random.default_rng(1), 8, 8)
        q = crop_quarters(s)
        top = np.concatenate([q[0].image_before, q[1].image_before], axis=2)
        bottom = np.concatenate([q[2].image_before, q[3].image_before], axis=2)
        np.testing.assert_array_equal(np.concatenate([top, bottom], axis=1), s.image_before)
        lab = np.block([[q[0].label, q[1].label], [q[2].label, q[3].label]])
        np.testing.assert_array_equal(lab, s.label)
        assert all(set(np.unique(x.label)) <= {0, 1} for x in q)


SMALL_AUG = AugmentConfig(pad_to=64, output_size=32)


class TestAugment:
    @pytest.mark.parametrize("seed", range(8))
    def test_contract(self, seed):
        rng = np.random.default_rng(seed)
        out = augment(random_pair(rng, 40, 40), rng, SMALL_AUG)
        assert out.image_before.shape == (3, 32, 32) and out.label.shape == (32, 32)
        assert set(np.unique(out.label)) <= {0, 1}
        assert out.image_before.min() >= 0 and out.image_after.max() <= 1

    def test_default_crop_range(self):
        assert AugmentConfig().crop_side_range() == (358, 666)

    def test_identity_parameters(self):
        s = random_pair(np.random.default_rng(2), 32, 32)
        cfg = AugmentConfig(pad_to=64, output_size=32)
        out = apply_augment(s, AugmentParams(32, 16, 16, 0.0, 1.0, 1.0), cfg)
        np.testing.assert_array_equal(out.image_before, s.image_before)
        np.testing.assert_array_equal(out.image_after, s.image_after)
        np.testing.assert_array_equal(out.label, s.label)

    @pytest.mark.parametrize("seed", range(5))
    def test_shared_geometry(self, seed):
        yy, xx = np.mgrid[0:40, 0:40]
        pattern = np.stack([yy / 39.0, xx / 39.0, (yy * 40 + xx) / 1599.0]).astype(np.float32)
        s = SamplePair(pattern, pattern.copy(), np.zeros((40, 40), np.uint8))
        rng = np.random.default_rng(seed)
        params = sample_augment_params(rng, SMALL_AUG, (40, 40))
        out = apply_augment(s, params, SMALL_AUG, illuminate=False)
        assert out.image_before.tobytes() == out.image_after.tobytes()

    def test_label_follows_geometry(self):
        img = np.zeros((3, 40, 40), np.float32)
        img[:, 10:20, 10:20] = 1.0
        lab = np.zeros((40, 40), np.uint8)
        lab[10:20, 10:20] = 1
        s = SamplePair(img, img.copy(), lab)
        out = apply_augment(s, AugmentParams(40, 12, 12, 10.0, 1.0, 1.0), AugmentConfig(pad_to=64, output_size=40),
                            illuminate=False)
        agree = (out.image_before[0] > 0.5) == (out.label == 1)
        assert agree.mean() > 0.97

    def test_illumination_per_image(self):
        s = SamplePair(np.full((3, 32, 32), 0.5, np.float32), np.full((3, 32, 32), 0.5, np.float32),
                       np.zeros((32, 32), np.uint8))
        out = apply_augment(s, AugmentParams(32, 16, 16, 0.0, 0.8, 1.2), AugmentConfig(pad_to=64, output_size=32))
        np.testing.assert_allclose(out.image_before, 0.4, rtol=1e-6)
        np.testing.assert_allclose(out.image_after, 0.6, rtol=1e-6)

    def test_deterministic(self):
        s = random_pair(np.random.default_rng(3), 48, 48)
        one = augment(s, np.random.default_rng(11), SMALL_AUG)
        two = augment(s, np.random.default_rng(11), SMALL_AUG)
        for f in ("image_before", "image_after", "label"):
            assert getattr(one, f).tobytes() == getattr(two, f).tobytes()

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            AugmentConfig(crop_scale_range=(1.3, 0.7))
        with pytest.raises(ValueError):
            AugmentConfig(illumination_range=(0.0, 1.2))


class TestPNG:
    def test_rgb_round_trip(self, tmp_path):
        raw = np.random.default_rng(0).integers(0, 256, size=(3, 9, 7)).astype(np.uint8)
        save_png(tmp_path / "x.png", raw)
        back = load_png(tmp_path / "x.png")
        np.testing.assert_array_equal(np.rint(back * 255).astype(np.uint8), raw)
        save_png(tmp_path / "y.png", back)
        assert (tmp_path / "x.png").read_bytes() == (tmp_path / "y.png").read_bytes()

    def test_gray_round_trip(self, tmp_path):
        raw = np.arange(256, dtype=np.uint8).reshape(16, 16)
        save_png(tmp_path / "g.png", raw)
        np.testing.assert_array_equal(np.rint(load_png(tmp_path / "g.png") * 255).astype(np.uint8), raw)

    def test_label_mapping(self, tmp_path):
        lab = (np.random.default_rng(1).random((6, 6)) < 0.5).astype(np.uint8)
        save_png(tmp_path / "l.png", lab, label=True)
        assert set(np.unique(np.asarray(Image.open(tmp_path / "l.png")))) <= {0, 255}
        np.testing.assert_array_equal(load_png(tmp_path / "l.png", label=True), lab)

    def test_png_size(self, tmp_path):
        save_png(tmp_path / "s.png", np.zeros((3, 5, 11), np.uint8))
        assert png_size(tmp_path / "s.png") == (11, 5)


class TestDatasetLayout:
    def test_round_trip(self, tmp_path):
        samples = synth_dataset(3, 5, 16)
        entries = [(f"id{i}", s, "test" if i == 4 else "train") for i, s in enumerate(samples)]
        write_dataset(tmp_path, entries)
        for sub in ("A", "B", "label"):
            assert sorted(p.stem for p in (tmp_path / sub).iterdir()) == [f"id{i}" for i in range(5)]
        assert read_index(tmp_path)[4] == ("id4", "test")
        back = read_dataset(tmp_path, "train")
        assert [t for t, _, _ in back] == ["id0", "id1", "id2", "id3"]
        np.testing.assert_array_equal(back[0][1].label, samples[0].label)
        np.testing.assert_allclose(back[0][1].image_before, samples[0].image_before, atol=0.5 / 255 + 1e-6)

    def test_bad_index(self, tmp_path):
        (tmp_path / "index.txt").write_text("a train\nb holdout\n")
        with pytest.raises(ValueError, match="line 2"):
            read_index(tmp_path)


class TestSynth:
    def test_deterministic(self):
        one, two = synth_dataset(7, 3), synth_dataset(7, 3)
        for a, b in zip(one, two):
            assert a.image_before.tobytes() == b.image_before.tobytes()
            assert a.label.tobytes() == b.label.tobytes()

    def test_shapes_and_ranges(self):
        for s in synth_dataset(1, 10, 32):
            assert s.image_before.shape == (3, 32, 32) and s.label.dtype == np.uint8
            assert 0 <= s.image_after.min() and s.image_after.max() <= 1

    def test_changed_fraction(self):
        samples = synth_dataset(42, 1000, 64)
        frac = np.mean([s.label.mean() for s in samples])
        assert 0.02 <= frac <= 0.30
        assert any(not s.label.any() for s in samples), "zero-change samples occur"

    def test_label_marks_difference(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            s = synth_sample(rng, 32)
            diff = np.abs(s.image_before - s.image_after).max(axis=0)
            if s.label.any():
                # inside changed rectangles the roofs differ from the shared background/roof
                assert np.median(diff[s.label == 1]) > np.median(diff[s.label == 0])
