"""Text encoder, multi-stage generator and matching-aware discriminator."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (CAM_SCORE_MODES, NORM_MODES, LayerOptions, dual_attention_layer,
                        init_dual_attention_layer)
from .nn import (ParamStore, conv3x3, init_gated_cell, init_lstm_cell, init_param, linear,
                 lstm_cell_step, one_hot, recurrent_cell_step)
from .tensor import ShapeError, Tensor

BASE_SIZE = 4


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 18
    seq_len: int = 8
    embed_dim: int = 16
    hidden: int = 32
    sentence_dim: int = 32
    cell: str = "gru"          # "gru" (single update gate) or "lstm"
    merge: str = "concat"      # how the two directions' final states are combined
    # fixed gain on the projected sentence vector; Adam steps are scale-free, so
    # this sets how fast every sentence-conditioned weight can react to captions
    out_scale: float = 4.0


@dataclass(frozen=True)
class GeneratorConfig:
    num_layers: int = 4
    base_channels: int = 32
    min_channels: int = 16
    sentence_dim: int = 32
    noise_dim: int = 16
    cam_score_mode: str = "elementwise"
    cam: bool = True
    pam: bool = True
    norm: str = "cadailn"      # "cadailn", "bn_sent" or "none"
    norm_init: str = "scaled-uniform"   # init of the sentence-to-gamma/beta weights

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.cam_score_mode not in CAM_SCORE_MODES:
            raise ValueError(f"cam_score_mode must be one of {CAM_SCORE_MODES}")
        if self.norm not in NORM_MODES:
            raise ValueError(f"norm must be one of {NORM_MODES}")
        if self.norm_init not in ("scaled-uniform", "zeros"):
            raise ValueError("norm_init must be 'scaled-uniform' or 'zeros'")

    @property
    def channels(self):
        """Per-layer channel schedule: halve after every upsampling, floored."""
        return [max(self.base_channels >> max(i - 1, 0), self.min_channels)
                if i else self.base_channels for i in range(self.num_layers)]

    @property
    def resolution(self):
        return BASE_SIZE * 2 ** (self.num_layers - 1)

    @property
    def layer_options(self):
        return LayerOptions(cam=self.cam, pam=self.pam, norm=self.norm,
                            cam_score_mode=self.cam_score_mode, norm_init=self.norm_init)


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 32
    base_channels: int = 16
    max_channels: int = 64
    sentence_dim: int = 32
    text_channels: int = 16
    slope: float = 0.2
    head_init: str = "scaled-uniform"   # "zeros" makes every logit start at 0

    @property
    def channels(self):
        """Channels after the stem and after each stride-2 block."""
        n_down = int(np.log2(self.resolution // BASE_SIZE))
        if BASE_SIZE * 2 ** n_down != self.resolution:
            raise ValueError(f"resolution {self.resolution} is not 4 * 2^k")
        return [min(self.base_channels * 2 ** i, self.max_channels) for i in range(n_down + 1)]

    @property
    def feature_dim(self):
        return self.channels[-1] * BASE_SIZE * BASE_SIZE


# ---------------------------------------------------------------------------
# text encoder


def init_encoder(store, cfg, rng):
    scope = store.scope("enc")
    scope.register("embed", init_param((cfg.vocab_size, cfg.embed_dim), "scaled-uniform", rng,
                                       fan_in=cfg.embed_dim))
    if cfg.cell not in ("gru", "lstm"):
        raise ValueError(f"unknown encoder cell {cfg.cell!r}")
    if cfg.merge not in ("concat", "sum"):
        raise ValueError(f"unknown direction merge {cfg.merge!r}")
    init_cell = init_gated_cell if cfg.cell == "gru" else init_lstm_cell
    init_cell(scope.scope("fwd"), cfg.embed_dim, cfg.hidden, rng)
    init_cell(scope.scope("bwd"), cfg.embed_dim, cfg.hidden, rng)
    width = 2 * cfg.hidden if cfg.merge == "concat" else cfg.hidden
    scope.register("proj_w", init_param((cfg.sentence_dim, width), "scaled-uniform", rng))
    scope.register("proj_b", init_param((cfg.sentence_dim,), "zeros"))


def _run_direction(emb, mask, params, cfg, steps):
    n = emb[0].shape[0]
    h = Tensor(np.zeros((n, cfg.hidden)))
    c = Tensor(np.zeros((n, cfg.hidden)))
    for t in steps:
        if cfg.cell == "gru":
            h_new = recurrent_cell_step(h, emb[t], params)
            c_new = c
        else:
            h_new, c_new = lstm_cell_step((h, c), emb[t], params)
        m = mask[t]
        # pad positions leave the state untouched
        h = h + m * (h_new - h)
        c = c + m * (c_new - c)
    return h


def encode_sentence(tokens, params, cfg):
    """Sentence vectors (N, D) from padded token ids (N, L); pad id is 0."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    n, length = tokens.shape
    if length != cfg.seq_len:
        raise ShapeError(f"encode_sentence: expected length {cfg.seq_len}, got {length}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError(f"encode_sentence: token id outside vocabulary of {cfg.vocab_size}")
    enc = params.scope("enc")
    onehot = Tensor(one_hot(tokens.reshape(-1), cfg.vocab_size))
    emb = T.reshape(T.matmul(onehot, enc["embed"]), (n, length, cfg.embed_dim))
    steps = [emb[:, t, :] for t in range(length)]
    mask = [Tensor((tokens[:, t:t + 1] != 0).astype(np.float64)) for t in range(length)]
    h_f = _run_direction(steps, mask, enc.scope("fwd"), cfg, range(length))
    h_b = _run_direction(steps, mask, enc.scope("bwd"), cfg, range(length - 1, -1, -1))
    merged = T.concat([h_f, h_b], axis=1) if cfg.merge == "concat" else h_f + h_b
    return linear(merged, enc["proj_w"], enc["proj_b"]) * cfg.out_scale


# ---------------------------------------------------------------------------
# generator


def init_generator(store, cfg, rng):
    scope = store.scope("gen")
    ch = cfg.channels
    scope.register("fc_w", init_param((ch[0] * BASE_SIZE * BASE_SIZE, cfg.noise_dim),
                                      "scaled-uniform", rng))
    scope.register("fc_b", init_param((ch[0] * BASE_SIZE * BASE_SIZE,), "zeros"))
    prev = ch[0]
    for i, c in enumerate(ch):
        init_dual_attention_layer(scope.scope(f"layer{i + 1}"), prev, c, cfg.sentence_dim, rng,
                                  cfg.layer_options)
        prev = c
    scope.register("out_w", init_param((3, prev, 3, 3), "scaled-uniform", rng))
    scope.register("out_b", init_param((3,), "zeros"))


def generator_forward(z, s, params, cfg):
    """Images (N, 3, R, R) in [-1, 1] and the per-layer attention maps."""
    z = T.constant(z)
    if z.ndim != 2 or z.shape[1] != cfg.noise_dim:
        raise ShapeError(f"generator_forward: noise {z.shape} vs noise_dim {cfg.noise_dim}")
    if s.ndim != 2 or s.shape != (z.shape[0], cfg.sentence_dim):
        raise ShapeError(f"generator_forward: sentence {s.shape} vs noise {z.shape}")
    gen = params.scope("gen")
    h = linear(z, gen["fc_w"], gen["fc_b"])
    h = T.reshape(h, (z.shape[0], cfg.channels[0], BASE_SIZE, BASE_SIZE))
    maps = []
    opts = cfg.layer_options
    for i in range(cfg.num_layers):
        h, m = dual_attention_layer(h, s, gen.scope(f"layer{i + 1}"), upsample=i > 0,
                                    opts=opts, index=i + 1)
        maps.append(m)
    return T.tanh(conv3x3(h, gen["out_w"], gen["out_b"])), maps


def sample_noise(batch, rng, dim=16):
    """``batch`` i.i.d. standard-normal noise vectors, shape (batch, dim)."""
    return rng.standard_normal((batch, dim))


# ---------------------------------------------------------------------------
# discriminator


@dataclass
class DiscriminatorOutput:
    logit: Tensor       # (N,)
    features: Tensor    # (N, feature_dim), computed before any text enters


def init_discriminator(store, cfg, rng):
    scope = store.scope("disc")
    ch = cfg.channels
    scope.register("stem_w", init_param((ch[0], 3, 3, 3), "scaled-uniform", rng))
    scope.register("stem_b", init_param((ch[0],), "zeros"))
    for i in range(1, len(ch)):
        scope.register(f"down{i}_w", init_param((ch[i], ch[i - 1], 3, 3), "scaled-uniform", rng))
        scope.register(f"down{i}_b", init_param((ch[i],), "zeros"))
    scope.register("text_w", init_param((cfg.text_channels, cfg.sentence_dim),
                                        "scaled-uniform", rng))
    scope.register("text_b", init_param((cfg.text_channels,), "zeros"))
    joint = ch[-1] + cfg.text_channels
    scope.register("joint_w", init_param((ch[-1], joint, 3, 3), "scaled-uniform", rng))
    scope.register("joint_b", init_param((ch[-1],), "zeros"))
    scope.register("out_w", init_param((1, ch[-1], BASE_SIZE, BASE_SIZE), cfg.head_init, rng))
    scope.register("out_b", init_param((1,), "zeros"))


def image_features(x, params, cfg):
    """Text-free 4x4 feature map of ``x`` (N, 3, R, R)."""
    if x.ndim != 4 or x.shape[1:] != (3, cfg.resolution, cfg.resolution):
        raise ShapeError(f"discriminator: expected images (N, 3, {cfg.resolution}, "
                         f"{cfg.resolution}), got {x.shape}")
    d = params.scope("disc")
    h = T.leaky_relu(conv3x3(x, d["stem_w"], d["stem_b"]), cfg.slope)
    for i in range(1, len(cfg.channels)):
        h = T.leaky_relu(conv3x3(h, d[f"down{i}_w"], d[f"down{i}_b"], stride=2), cfg.slope)
    return h


def discriminator_forward(x, s, params, cfg):
    x = T.constant(x)
    fmap = image_features(x, params, cfg)
    n = x.shape[0]
    if s.ndim != 2 or s.shape != (n, cfg.sentence_dim):
        raise ShapeError(f"discriminator: sentence {s.shape} vs batch {n}")
    d = params.scope("disc")
    text = T.reshape(linear(s, d["text_w"], d["text_b"]), (n, cfg.text_channels, 1, 1))
    text = T.broadcast_to(text, (n, cfg.text_channels, BASE_SIZE, BASE_SIZE))
    h = T.concat([fmap, text], axis=1)
    h = T.leaky_relu(conv3x3(h, d["joint_w"], d["joint_b"]), cfg.slope)
    logit = T.reshape(T.conv2d(h, d["out_w"], d["out_b"]), (n,))
    return DiscriminatorOutput(logit=logit,
                               features=T.reshape(fmap, (n, cfg.feature_dim)))


def build_params(gen_cfg, disc_cfg, enc_cfg, seed):
    """Fresh :class:`ParamStore` with encoder, generator and discriminator."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_encoder(store, enc_cfg, rng)
    init_generator(store, gen_cfg, rng)
    init_discriminator(store, disc_cfg, rng)
    return store
