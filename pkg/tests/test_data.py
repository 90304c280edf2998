import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualattn import data as D


def test_vocabulary_layout():
    assert D.VOCAB[0] == D.PAD and len(D.VOCAB) == 18
    assert len(set(D.VOCAB)) == len(D.VOCAB)


def test_tokenize_pads_and_lowercases():
    ids = D.tokenize("A Red circle")
    assert ids.tolist() == [D.TOKEN_ID["a"], D.TOKEN_ID["red"], D.TOKEN_ID["circle"]] + [0] * 5


def test_tokenize_errors():
    with pytest.raises(D.VocabularyError, match="banana"):
        D.tokenize("a banana")
    with pytest.raises(D.VocabularyError):
        D.tokenize(D.PAD)
    with pytest.raises(D.VocabularyError, match="limit"):
        D.tokenize("a a a a a a a a a")


def test_caption_round_trip():
    for spec in D.all_specs():
        assert len(spec.caption.split()) == D.SEQ_LEN
        assert D.spec_from_tokens(spec.tokens()) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        D.CaptionSpec("orange", "circle", "small", "black")
    assert len(set(D.all_specs())) == 96


@pytest.mark.parametrize("shape", D.SHAPES)
@pytest.mark.parametrize("size,target", [("small", 0.26), ("large", 0.42)])
def test_foreground_fraction(shape, size, target):
    for seed in range(10):
        img = D.render(D.CaptionSpec("red", shape, size, "black"), 64, seed=seed).image
        assert abs((img[0] > 0).mean() - target) < 0.025


def test_render_palette_and_determinism():
    spec = D.CaptionSpec("purple", "cross", "large", "gray")
    a = D.render(spec, 32, seed=7).image
    b = D.render(spec, 32, seed=7).image
    assert np.array_equal(a, b)
    colours = {tuple(px) for px in a.reshape(3, -1).T}
    assert colours == {D.RGB["purple"], D.RGB["gray"]}
    assert not np.array_equal(a, D.render(spec, 32, seed=8).image)
    with pytest.raises(ValueError):
        D.render(spec, 24)


@pytest.mark.parametrize("resolution", D.RESOLUTIONS)
def test_dominant_color_recovers_rendered_colour(resolution):
    for k, spec in enumerate(D.all_specs()):
        assert D.dominant_color(D.render(spec, resolution, seed=k).image) == spec.color


def test_dominant_color_of_flat_image_uses_all_pixels():
    img = np.broadcast_to(np.asarray(D.RGB["green"])[:, None, None], (3, 8, 8))
    assert D.dominant_color(img) == "green"


def test_split_uses_disjoint_seeds():
    train, test = D.make_split(50, 20, np.random.default_rng(0), resolution=16)
    assert len(train) == 50 and len(test) == 20
    assert not {s.seed for s in train.samples} & {s.seed for s in test.samples}
    assert train.images([0, 1]).shape == (2, 3, 16, 16)
    assert train.tokens([0]).shape == (1, D.SEQ_LEN)


def test_stratified_split():
    train, _ = D.make_split(192, 96, np.random.default_rng(0), 16, stratified=True)
    counts = {}
    for s in train.samples:
        counts[s.spec] = counts.get(s.spec, 0) + 1
    assert set(counts.values()) == {2}
    with pytest.raises(ValueError):
        D.make_split(50, 96, np.random.default_rng(0), 16, stratified=True)


def test_manifest_round_trip():
    train, _ = D.make_split(10, 2, np.random.default_rng(3), resolution=16)
    again = D.parse_manifest(train.manifest(), resolution=16)
    assert again.manifest() == train.manifest()
    assert np.array_equal(again.images(range(10)), train.images(range(10)))
    with pytest.raises(ValueError):
        D.parse_manifest("1\tred\tcircle\n")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(D.all_specs()[:6]), min_size=2, max_size=12))
def test_mismatch_pairs_differ(specs):
    if len(set(specs)) == 1:
        with pytest.raises(D.MismatchError):
            D.mismatch(specs)
        return
    try:
        perm = D.mismatch(specs)
    except D.MismatchError:
        # only legitimate when one spec fills more than half the batch
        top = max(specs.count(s) for s in set(specs))
        assert 2 * top > len(specs)
        return
    assert sorted(perm) == list(range(len(specs)))
    assert all(specs[p] != sp for p, sp in zip(perm, specs))


def test_mismatch_small_batches():
    a, b = D.all_specs()[:2]
    assert D.mismatch([a, b]) == [1, 0]
    with pytest.raises(D.MismatchError):
        D.mismatch([a])


def test_ppm_round_trip(tmp_path):
    img = D.render(D.all_specs()[5], 16, seed=1).image
    path = D.write_image(img, tmp_path / "x.ppm")
    assert path.read_bytes().startswith(b"P6\n16 16\n255\n")
    np.testing.assert_allclose(D.read_image(path), img, rtol=0, atol=1 / 255 + 1e-12)
    rng = np.random.default_rng(0)
    noisy = rng.uniform(-1, 1, (3, 5, 7))
    D.write_image(noisy, tmp_path / "n.ppm")
    assert np.abs(D.read_image(tmp_path / "n.ppm") - noisy).max() <= 1 / 255 + 1e-12


def test_ppm_rounding_and_clipping(tmp_path):
    img = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 2 / 255 - 1]).reshape(1, 2, 3)
    D.write_image(np.repeat(img, 3, axis=0), tmp_path / "r.ppm")
    body = (tmp_path / "r.ppm").read_bytes()[-18:]
    # 0.0 -> 127.5 rounds half away from zero
    assert list(body[0::3]) == [0, 0, 128, 255, 255, 1]


def test_ppm_gray_and_errors(tmp_path):
    D.write_image(np.zeros((4, 5)), tmp_path / "g.ppm")
    assert D.read_image(tmp_path / "g.ppm").shape == (3, 4, 5)
    with pytest.raises(ValueError):
        D.write_image(np.zeros((2, 4, 4)), tmp_path / "bad.ppm")
    (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    with pytest.raises(ValueError):
        D.read_image(tmp_path / "t.ppm")
    with pytest.raises(OSError):
        D.read_image(tmp_path / "missing.ppm")


def test_image_grid_layout():
    imgs = np.zeros((5, 3, 4, 4))
    grid = D.image_grid(imgs, cols=4, pad=1)
    assert grid.shape == (3, 2 * 5 + 1, 4 * 5 + 1)
    assert grid[0, 0, 0] == -1 and grid[0, 1, 1] == 0
