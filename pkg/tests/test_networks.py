import numpy as np
import pytest

from dualattn import data as D
from dualattn import networks as Nw
from dualattn import nn
from dualattn.tensor import ShapeError, Tensor

ENC = Nw.EncoderConfig(embed_dim=4, hidden=5, sentence_dim=6)


def small_gen(**kw):
    return Nw.GeneratorConfig(**{"num_layers": 3, "base_channels": 6, "min_channels": 3,
                                 "sentence_dim": 6, "noise_dim": 4, **kw})


def gen_store(cfg, seed=0):
    store = nn.ParamStore()
    Nw.init_generator(store, cfg, np.random.default_rng(seed))
    return store


@pytest.mark.parametrize("layers", [1, 2, 3, 4, 5])
def test_resolution_law(layers):
    cfg = Nw.GeneratorConfig(num_layers=layers)
    assert cfg.resolution == 4 * 2 ** (layers - 1)
    assert len(cfg.channels) == layers and min(cfg.channels) >= cfg.min_channels


def test_default_channel_schedule():
    assert Nw.GeneratorConfig().channels == [32, 32, 16, 16]
    assert Nw.DiscriminatorConfig().channels == [16, 32, 64, 64]


def test_generator_output_shape_and_range(rng):
    cfg = small_gen()
    z = Nw.sample_noise(3, rng, cfg.noise_dim)
    s = Tensor(rng.standard_normal((3, 6)))
    img, maps = Nw.generator_forward(z, s, gen_store(cfg), cfg)
    assert img.shape == (3, 3, 16, 16)
    assert np.abs(img.data).max() <= 1.0
    assert [m.layer for m in maps] == [1, 2, 3]
    assert maps[-1].pixel_avg.shape == (3, 16, 16)


def test_zero_gates_match_attention_free_skeleton(rng):
    full = small_gen()
    bare = small_gen(cam=False, pam=False)
    store = gen_store(full)
    z = Nw.sample_noise(2, rng, 4)
    s = Tensor(rng.standard_normal((2, 6)))
    a = Nw.generator_forward(z, s, store, full)[0].data
    b = Nw.generator_forward(z, s, store, bare)[0].data
    assert np.array_equal(a, b)
    bare_paths = gen_store(bare).paths()
    assert set(bare_paths) < set(store.paths())


def test_generator_is_deterministic(rng):
    cfg = small_gen()
    z = Nw.sample_noise(2, rng, 4)
    s = Tensor(rng.standard_normal((2, 6)))
    a = Nw.generator_forward(z, s, gen_store(cfg, 3), cfg)[0].data
    b = Nw.generator_forward(z, s, gen_store(cfg, 3), cfg)[0].data
    assert np.array_equal(a, b)


def test_generator_shape_errors(rng):
    cfg = small_gen()
    with pytest.raises(ShapeError):
        Nw.generator_forward(np.zeros((2, 5)), Tensor(np.zeros((2, 6))), gen_store(cfg), cfg)
    with pytest.raises(ShapeError):
        Nw.generator_forward(np.zeros((2, 4)), Tensor(np.zeros((3, 6))), gen_store(cfg), cfg)


def test_bad_generator_config():
    with pytest.raises(ValueError):
        Nw.GeneratorConfig(num_layers=0)
    with pytest.raises(ValueError):
        Nw.GeneratorConfig(norm="group")
    with pytest.raises(ValueError):
        Nw.DiscriminatorConfig(resolution=24).channels


# encoder ------------------------------------------------------------------


def enc_store(cfg=ENC, seed=0):
    store = nn.ParamStore()
    Nw.init_encoder(store, cfg, np.random.default_rng(seed))
    return store


def test_all_pad_caption_encodes_to_bias():
    s = Nw.encode_sentence(np.zeros((2, 8), dtype=int), enc_store(), ENC).data
    assert np.array_equal(s, np.zeros((2, 6)))


@pytest.mark.parametrize("cell,merge", [("gru", "concat"), ("gru", "sum"),
                                        ("lstm", "concat"), ("lstm", "sum")])
def test_encoder_variants(cell, merge):
    cfg = Nw.EncoderConfig(embed_dim=4, hidden=5, sentence_dim=6, cell=cell, merge=merge)
    tokens = np.stack([sp.tokens() for sp in D.all_specs()[:4]])
    s = Nw.encode_sentence(tokens, enc_store(cfg), cfg).data
    assert s.shape == (4, 6) and np.all(np.isfinite(s))
    assert len({row.tobytes() for row in s}) == 4


def test_encoder_is_order_sensitive():
    fwd = D.tokenize("a red square")
    rev = D.tokenize("square red a")
    for seed in range(100):
        store = enc_store(seed=seed)
        a = Nw.encode_sentence(fwd, store, ENC).data
        b = Nw.encode_sentence(rev, store, ENC).data
        assert not np.allclose(a, b)


def test_pad_positions_do_not_change_encoding():
    cfg = Nw.EncoderConfig(embed_dim=4, hidden=5, sentence_dim=6, seq_len=10)
    store = enc_store(cfg)
    short = np.array([[1, 6, 10, 14, 0, 0, 0, 0, 0, 0]])
    s = Nw.encode_sentence(short, store, cfg).data
    s2 = Nw.encode_sentence(short, store, cfg).data
    assert np.array_equal(s, s2)
    assert np.abs(s).sum() > 0


def test_encoder_input_validation():
    with pytest.raises(ShapeError):
        Nw.encode_sentence(np.zeros((1, 5), dtype=int), enc_store(), ENC)
    with pytest.raises(ValueError):
        Nw.encode_sentence(np.full((1, 8), 99), enc_store(), ENC)
    with pytest.raises(ValueError):
        enc_store(Nw.EncoderConfig(cell="rnn"))


# discriminator ------------------------------------------------------------


DISC = Nw.DiscriminatorConfig(resolution=16, base_channels=3, max_channels=6, sentence_dim=6,
                              text_channels=2)


def disc_store(cfg=DISC):
    store = nn.ParamStore()
    Nw.init_discriminator(store, cfg, np.random.default_rng(0))
    return store


def test_discriminator_features_ignore_sentence(rng):
    store = disc_store()
    x = rng.uniform(-1, 1, (3, 3, 16, 16))
    a = Nw.discriminator_forward(x, Tensor(rng.standard_normal((3, 6))), store, DISC)
    b = Nw.discriminator_forward(x, Tensor(rng.standard_normal((3, 6))), store, DISC)
    assert a.logit.shape == (3,) and a.features.shape == (3, DISC.feature_dim)
    assert np.array_equal(a.features.data, b.features.data)
    assert not np.allclose(a.logit.data, b.logit.data)


def test_zero_head_gives_zero_logits(rng):
    cfg = Nw.DiscriminatorConfig(**{**DISC.__dict__, "head_init": "zeros"})
    out = Nw.discriminator_forward(rng.uniform(-1, 1, (2, 3, 16, 16)),
                                   Tensor(rng.standard_normal((2, 6))), disc_store(cfg), cfg)
    assert np.array_equal(out.logit.data, np.zeros(2))


def test_discriminator_shape_errors(rng):
    with pytest.raises(ShapeError):
        Nw.discriminator_forward(np.zeros((2, 3, 8, 8)), Tensor(np.zeros((2, 6))),
                                 disc_store(), DISC)
    with pytest.raises(ShapeError):
        Nw.discriminator_forward(np.zeros((2, 3, 16, 16)), Tensor(np.zeros((1, 6))),
                                 disc_store(), DISC)


# noise --------------------------------------------------------------------


def test_sample_noise_statistics():
    z = Nw.sample_noise(20000, np.random.default_rng(0), 16)
    assert z.shape == (20000, 16)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    assert Nw.sample_noise(0, np.random.default_rng(0)).shape == (0, 16)


def test_build_params_scopes():
    store = Nw.build_params(small_gen(), DISC, ENC, seed=0)
    roots = {p.split(".")[0] for p in store.paths()}
    assert roots == {"enc", "gen", "disc"}
    again = Nw.build_params(small_gen(), DISC, ENC, seed=0)
    assert all(np.array_equal(a, again[p].data) for p, a in store.arrays().items())
