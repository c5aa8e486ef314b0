import numpy as np
import pytest
from PIL import Image
from scipy import stats as scipy_stats

from dilseg import data
from dilseg.errors import DataError


def make_scene(scene_id="s", h=12, w=10, bands=3, seed=0, void_frac=0.0):
    rng = np.random.default_rng(seed)
    void = rng.random((h, w)) < void_frac
    labels = rng.integers(0, 3, size=(h, w)).astype(np.int32)
    labels[void] = 0
    return data.RasterScene(
        scene_id,
        rng.random((bands, h, w)).astype(np.float32),
        labels,
        void,
    )


# ---------------------------------------------------------------------------
# file formats


def test_rsrf_round_trip_bit_identical(tmp_path):
    bands = np.random.default_rng(0).random((5, 7, 9)).astype(np.float32)
    path = tmp_path / "scene.rsrf"
    data.save_rsrf(path, bands)
    assert np.array_equal(data.load_rsrf(path), bands)
    # second write of the loaded data produces identical bytes
    again = tmp_path / "again.rsrf"
    data.save_rsrf(again, data.load_rsrf(path))
    assert path.read_bytes() == again.read_bytes()


def test_rsrf_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.rsrf"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        data.load_rsrf(path)
    good = tmp_path / "good.rsrf"
    data.save_rsrf(good, np.zeros((1, 4, 4), dtype=np.float32))
    (tmp_path / "short.rsrf").write_bytes(good.read_bytes()[:-4])
    with pytest.raises(DataError, match="expected"):
        data.load_rsrf(tmp_path / "short.rsrf")


def test_rslb_round_trip_and_void_sentinel(tmp_path):
    labels = np.array([[0, 1], [2, 0]], dtype=np.int32)
    void = np.array([[False, False], [False, True]])
    path = tmp_path / "labels.rslb"
    data.save_rslb(path, labels, void)
    loaded, loaded_void = data.load_rslb(path)
    assert np.array_equal(loaded_void, void)
    assert np.array_equal(loaded[~void], labels[~void])
    assert loaded[1, 1] == 0  # void positions read back as class 0 + mask


def test_png_bands_scaled_to_unit_interval(tmp_path):
    rgb = np.random.default_rng(1).integers(0, 256, size=(6, 8, 3), dtype=np.uint8)
    path = tmp_path / "scene.png"
    Image.fromarray(rgb).save(path)
    scene = data.load_scene(path)
    assert scene.bands.shape == (3, 6, 8)
    assert scene.bands.min() >= 0.0 and scene.bands.max() <= 1.0
    assert np.allclose(scene.bands, rgb.transpose(2, 0, 1) / 255.0)
    assert scene.void_mask.all()  # no labels supplied


def test_png_alpha_dropped_and_grayscale_single_band(tmp_path):
    rgba = np.random.default_rng(2).integers(0, 256, size=(4, 4, 4), dtype=np.uint8)
    p1 = tmp_path / "rgba.png"
    Image.fromarray(rgba).save(p1)
    assert data.load_scene(p1).bands.shape == (3, 4, 4)
    gray = np.random.default_rng(3).integers(0, 256, size=(4, 4), dtype=np.uint8)
    p2 = tmp_path / "gray.png"
    Image.fromarray(gray).save(p2)
    assert data.load_scene(p2).bands.shape == (1, 4, 4)


def test_png_labels_with_void_sentinel(tmp_path):
    img = np.zeros((4, 4), dtype=np.uint8)
    labels = np.array(
        [[0, 1, 255, 0], [1, 1, 0, 255], [0, 0, 0, 0], [255, 1, 1, 0]], dtype=np.uint8
    )
    ip = tmp_path / "img.png"
    lp = tmp_path / "lbl.png"
    Image.fromarray(img).save(ip)
    Image.fromarray(labels).save(lp)
    scene = data.load_scene(ip, lp)
    assert np.array_equal(scene.void_mask, labels == 255)
    assert scene.labels[scene.void_mask].max(initial=0) == 0


def test_extent_mismatch_rejected_with_offsets(tmp_path):
    data.save_rsrf(tmp_path / "img.rsrf", np.zeros((1, 5, 5), dtype=np.float32))
    data.save_rslb(tmp_path / "lbl.rslb", np.zeros((4, 5), dtype=np.int32))
    with pytest.raises(DataError, match=r"5x5.*4x5"):
        data.load_scene(tmp_path / "img.rsrf", tmp_path / "lbl.rslb")


def test_scene_round_trip_through_files(tmp_path):
    scene = make_scene(seed=4, void_frac=0.2)
    data.save_rsrf(tmp_path / "s.rsrf", scene.bands)
    data.save_rslb(tmp_path / "s.rslb", scene.labels, scene.void_mask)
    loaded = data.load_scene(tmp_path / "s.rsrf", tmp_path / "s.rslb")
    assert np.array_equal(loaded.bands, scene.bands)
    assert np.array_equal(loaded.labels, scene.labels)
    assert np.array_equal(loaded.void_mask, scene.void_mask)


# ---------------------------------------------------------------------------
# normalization


def test_constant_band_floored_std_gives_zeros():
    scene = data.RasterScene(
        "c",
        np.full((1, 6, 6), 0.3, dtype=np.float32),
        np.zeros((6, 6), dtype=np.int32),
        np.zeros((6, 6), dtype=bool),
    )
    norm = data.fit_normalizer([scene])
    assert norm.std[0] == pytest.approx(1e-6)
    assert not data.apply_normalizer(scene, norm).bands.any()


def test_normalizer_matches_pooled_pixel_recomputation():
    scenes = [make_scene("a", seed=5, void_frac=0.3), make_scene("b", seed=6, void_frac=0.1)]
    norm = data.fit_normalizer(scenes)
    pooled = np.concatenate(
        [s.bands[:, ~s.void_mask] for s in scenes], axis=1
    ).astype(np.float64)
    assert np.allclose(norm.mean, pooled.mean(axis=1), atol=1e-12)
    assert np.allclose(norm.std, pooled.std(axis=1), atol=1e-12)


def test_normalized_training_pixels_have_zero_mean_unit_std():
    scenes = [make_scene("a", seed=7), make_scene("b", seed=8)]
    norm = data.fit_normalizer(scenes)
    normalized = [data.apply_normalizer(s, norm) for s in scenes]
    pooled = np.concatenate([s.bands.reshape(s.num_bands, -1) for s in normalized], axis=1)
    assert np.allclose(pooled.mean(axis=1), 0.0, atol=1e-5)
    assert np.allclose(pooled.std(axis=1), 1.0, atol=1e-4)


def test_normalizer_uses_training_statistics_on_new_scenes():
    train = make_scene("train", seed=9)
    test = make_scene("test", seed=10)
    norm = data.fit_normalizer([train])
    applied = data.apply_normalizer(test, norm)
    expected = (test.bands - norm.mean[:, None, None]) / norm.std[:, None, None]
    assert np.allclose(applied.bands, expected.astype(np.float32))


def test_normalizer_json_round_trip():
    norm = data.fit_normalizer([make_scene(seed=11)])
    restored = data.Normalizer.from_dict(norm.to_dict())
    assert np.array_equal(restored.mean, norm.mean)
    assert np.array_equal(restored.std, norm.std)


# ---------------------------------------------------------------------------
# patch extraction


def test_batch_shape():
    scene = make_scene(h=60, w=60, bands=4, seed=12)
    batch = data.extract_batch([scene], 25, 16, np.random.default_rng(0))
    assert batch.inputs.shape == (16, 4, 25, 25)
    assert batch.labels.shape == (16, 25, 25)
    assert batch.void_mask.shape == (16, 25, 25)
    assert batch.inputs.dtype == np.float32


def test_full_extent_patch_is_the_whole_scene():
    scene = make_scene(h=9, w=9, seed=13)
    batch = data.extract_batch([scene], 9, 4, np.random.default_rng(1))
    for k in range(4):
        assert np.array_equal(batch.inputs[k], scene.bands)
        assert np.array_equal(batch.labels[k], scene.labels)


def test_patches_are_verbatim_scene_windows():
    h = w = 40
    coords = (np.arange(h)[:, None] * w + np.arange(w)[None, :]).astype(np.float32)
    scene = data.RasterScene(
        "coords", coords[None], np.zeros((h, w), np.int32), np.zeros((h, w), bool)
    )
    batch = data.extract_batch([scene], 7, 32, np.random.default_rng(2))
    for k in range(32):
        top_left = int(batch.inputs[k, 0, 0, 0])
        i, j = divmod(top_left, w)
        assert np.array_equal(batch.inputs[k, 0], coords[i : i + 7, j : j + 7])


def test_corner_distribution_uniform_chi_squared():
    h = w = 100
    size = 25
    coords = (np.arange(h)[:, None] * w + np.arange(w)[None, :]).astype(np.float32)
    scene = data.RasterScene(
        "coords", coords[None], np.zeros((h, w), np.int32), np.zeros((h, w), bool)
    )
    rng = np.random.default_rng(3)
    corners = []
    for _ in range(10):
        batch = data.extract_batch([scene], size, 1000, rng)
        corners.extend(int(batch.inputs[k, 0, 0, 0]) for k in range(1000))
    ij = np.array([divmod(c, w) for c in corners])
    assert ij.min() >= 0 and ij.max() <= 75
    # 4x4-cell histogram over the 76x76 corner grid (76 = 4 * 19).
    binned = np.zeros((19, 19))
    for i, j in ij:
        binned[min(i // 4, 18), min(j // 4, 18)] += 1
    result = scipy_stats.chisquare(binned.ravel())
    assert result.pvalue > 0.01


def test_void_fraction_converges_to_scene_fraction():
    scene = make_scene(h=64, w=64, seed=14, void_frac=0.3)
    batch = data.extract_batch([scene], 16, 200, np.random.default_rng(4))
    scene_frac = scene.void_mask.mean()
    assert abs(batch.void_mask.mean() - scene_frac) < 0.03


def test_small_scene_reflection_padded():
    scene = make_scene(h=10, w=10, seed=15)
    batch = data.extract_batch([scene], 16, 8, np.random.default_rng(5))
    assert batch.inputs.shape == (8, 3, 16, 16)
    # padded content mirrors real pixels, so values stay within range
    assert batch.inputs.min() >= scene.bands.min() - 1e-6
    assert batch.inputs.max() <= scene.bands.max() + 1e-6


def test_max_servable_size_bound():
    scene = make_scene(h=10, w=12, seed=16)
    assert data.max_servable_size(scene) == 28  # 3 * 10 - 2
    batch = data.extract_batch([scene], 28, 2, np.random.default_rng(6))
    assert batch.inputs.shape[-1] == 28
    with pytest.raises(DataError, match="no scene can serve"):
        data.extract_batch([scene], 29, 2, np.random.default_rng(7))


def test_infeasible_scenes_excluded_feasible_used():
    small = make_scene("small", h=4, w=4, seed=17)
    big = make_scene("big", h=50, w=50, seed=18)
    batch = data.extract_batch([small, big], 30, 8, np.random.default_rng(8))
    assert batch.inputs.shape == (8, 3, 30, 30)


def test_class_balance_draws_rare_class_more_often():
    h = w = 64
    labels = np.zeros((h, w), dtype=np.int32)
    labels[:4, :4] = 1  # rare class: 16 of 4096 pixels
    scene = data.RasterScene(
        "rare", np.zeros((1, h, w), np.float32), labels, np.zeros((h, w), bool)
    )
    rng = np.random.default_rng(9)
    plain = data.extract_batch([scene], 8, 200, rng)
    balanced = data.extract_batch([scene], 8, 200, rng, class_balance=True)
    plain_hits = (plain.labels == 1).any(axis=(1, 2)).mean()
    balanced_hits = (balanced.labels == 1).any(axis=(1, 2)).mean()
    assert balanced_hits > 0.4  # ~half the draws target the rare class
    assert balanced_hits > plain_hits


def test_extract_batch_validation():
    scene = make_scene(seed=19)
    with pytest.raises(DataError, match="patch size"):
        data.extract_batch([scene], 0, 4, np.random.default_rng(0))
    with pytest.raises(DataError, match="batch size"):
        data.extract_batch([scene], 4, 0, np.random.default_rng(0))
