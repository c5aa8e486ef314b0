import numpy as np
import pytest

from dilseg import infer, models
from dilseg.errors import DataError

TINY6 = (2, 2, 2, 2, 2, 2)


@pytest.fixture(scope="module")
def net():
    spec = models.build("dilated6", 3, 4, widths=TINY6)
    params = models.init_params(spec, seed=0)
    return spec, params


def _softmax(logits):
    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=0, keepdims=True)


def test_single_tile_equals_one_forward_pass(net):
    spec, params = net
    bands = np.random.default_rng(1).standard_normal((3, 20, 20)).astype(np.float32)
    result = infer.predict_scene(spec, params, bands, size=20, overlap=0.0)
    logits = models.forward(spec, params, bands[None])[0]
    assert np.array_equal(result.classes, logits.argmax(axis=0))
    probs = _softmax(logits.astype(np.float64))
    assert np.allclose(
        result.confidence,
        np.take_along_axis(probs, result.classes[None], axis=0)[0],
        atol=1e-6,
    )


def test_non_overlapping_tiles_match_independent_per_tile_logits(net):
    spec, params = net
    size = 12
    bands = np.random.default_rng(2).standard_normal((3, 24, 24)).astype(np.float32)
    result = infer.predict_scene(
        spec, params, bands, size=size, overlap=0.0, keep_probabilities=True
    )
    for i in (0, size):
        for j in (0, size):
            tile_logits = models.forward(
                spec, params, bands[None, :, i : i + size, j : j + size]
            )[0]
            assert np.array_equal(
                result.classes[i : i + size, j : j + size], tile_logits.argmax(axis=0)
            )
            # With a 2x2 grid of flush tiles the coverage count is 1
            # everywhere, so stitched probabilities equal per-tile softmax.
            assert np.allclose(
                result.probabilities[:, i : i + size, j : j + size],
                _softmax(tile_logits.astype(np.float64)),
                atol=1e-6,
            )


def test_constant_logits_give_identical_maps_at_any_overlap():
    # Zeroed convolution weights make the logits spatially constant (only the
    # classifier biases survive), so retiling cannot change the argmax.
    spec = models.build("dilated6", 3, 4, widths=TINY6)
    params = models.init_params(spec, seed=7)
    for p in params:
        p.weights[:] = 0.0
    params[-1].bias[:] = np.array([0.1, 0.9, 0.2, 0.3], dtype=np.float32)
    bands = np.full((3, 30, 30), 0.7, dtype=np.float32)
    a = infer.predict_scene(spec, params, bands, size=10, overlap=0.0)
    b = infer.predict_scene(spec, params, bands, size=10, overlap=0.5)
    assert np.array_equal(a.classes, b.classes)
    assert (a.classes == 1).all()


def test_probabilities_sum_to_one_everywhere(net):
    spec, params = net
    bands = np.random.default_rng(3).standard_normal((3, 25, 25)).astype(np.float32)
    result = infer.predict_scene(
        spec, params, bands, size=10, overlap=0.3, keep_probabilities=True
    )
    sums = result.probabilities.sum(axis=0)
    assert np.allclose(sums, 1.0, atol=1e-5)
    assert np.isfinite(result.probabilities).all()  # every pixel covered


def test_scene_smaller_than_tile_is_padded_and_cropped(net):
    spec, params = net
    bands = np.random.default_rng(4).standard_normal((3, 7, 9)).astype(np.float32)
    result = infer.predict_scene(spec, params, bands, size=16)
    assert result.classes.shape == (7, 9)
    assert result.confidence.shape == (7, 9)


def test_prediction_is_deterministic(net):
    spec, params = net
    bands = np.random.default_rng(5).standard_normal((3, 21, 21)).astype(np.float32)
    a = infer.predict_scene(spec, params, bands, size=8, overlap=0.25)
    b = infer.predict_scene(spec, params, bands, size=8, overlap=0.25)
    assert np.array_equal(a.classes, b.classes)
    assert np.array_equal(a.confidence, b.confidence)


def test_predict_validation(net):
    spec, params = net
    bands = np.zeros((3, 10, 10), dtype=np.float32)
    with pytest.raises(DataError, match="patch size"):
        infer.predict_scene(spec, params, bands, size=0)
    with pytest.raises(DataError, match="overlap"):
        infer.predict_scene(spec, params, bands, size=5, overlap=0.95)
    with pytest.raises(DataError, match="reflection"):
        infer.predict_scene(spec, params, bands, size=64)


# ---------------------------------------------------------------------------
# rendering


def test_coffee_palette_rendering():
    classes = np.array([[0, 1], [1, 0]])
    image = infer.render_map(classes, infer.PALETTE_COFFEE)
    assert image[0, 0].tolist() == [0, 0, 0]  # non-target black
    assert image[0, 1].tolist() == [255, 255, 255]  # target white


def test_empty_map_renders_empty_image():
    image = infer.render_map(np.zeros((0, 0), dtype=np.int32), infer.PALETTE_COFFEE)
    assert image.shape == (0, 0, 3)


def test_void_rendered_black():
    classes = np.array([[1, 1]])
    void = np.array([[False, True]])
    image = infer.render_map(classes, infer.PALETTE_URBAN, void_mask=void)
    assert image[0, 0].tolist() == [0, 0, 255]
    assert image[0, 1].tolist() == [0, 0, 0]


def test_render_decode_round_trip():
    rng = np.random.default_rng(6)
    classes = rng.integers(0, 6, size=(17, 13)).astype(np.int32)
    image = infer.render_map(classes, infer.PALETTE_URBAN)
    decoded, void = infer.decode_map(image, infer.PALETTE_URBAN)
    assert np.array_equal(decoded, classes)
    assert not void.any()


def test_decode_unknown_color_rejected():
    image = np.full((2, 2, 3), 17, dtype=np.uint8)
    with pytest.raises(ValueError, match="not present"):
        infer.decode_map(image, infer.PALETTE_URBAN)


def test_render_rejects_class_beyond_palette():
    with pytest.raises(ValueError, match="palette"):
        infer.render_map(np.array([[9]]), infer.PALETTE_COFFEE)


def test_palette_for_counts():
    assert infer.palette_for(2) == infer.PALETTE_COFFEE
    assert infer.palette_for(6) == infer.PALETTE_URBAN
    big = infer.palette_for(11)
    assert len(big) == 11
    assert len(set(big)) == 11  # all colors distinct
