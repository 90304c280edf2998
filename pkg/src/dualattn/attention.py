"""Channel-aware attention, pixel-aware attention and sentence-conditioned
instance/layer normalisation, plus their composition into one generator stage.

All feature maps are batched, ``(N, C, H, W)``; sentence vectors are ``(N, D)``.
Parameters are read from a :class:`~dualattn.nn.Scope`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import (conv1x1, conv3x3, global_pool_channels, init_param, linear,
                 spatial_pool)
from .tensor import ShapeError

NORM_EPS = 1e-5
CAM_SCORE_MODES = ("elementwise", "outer")
NORM_MODES = ("cadailn", "bn_sent", "none")


class InvariantError(RuntimeError):
    """A parameter left its admissible set (e.g. a mixing ratio outside [0, 1])."""


@dataclass
class AttnMaps:
    """Softmax attention weights captured from one dual-attention layer.

    ``channel_*`` have shape (N, C); ``pixel_*`` have shape (N, H, W).  Paths
    switched off by an ablation are ``None``.
    """

    layer: int
    channel_avg: np.ndarray = field(default=None, repr=False)
    channel_max: np.ndarray = field(default=None, repr=False)
    pixel_avg: np.ndarray = field(default=None, repr=False)
    pixel_max: np.ndarray = field(default=None, repr=False)


def _check_sentence(op, h, s, dim):
    if s.ndim != 2 or s.shape[0] != h.shape[0] or s.shape[1] != dim:
        raise ShapeError(f"{op}: sentence {s.shape} does not match features {h.shape} "
                         f"and projection input size {dim}")


# ---------------------------------------------------------------------------
# channel-aware attention


def init_cam(scope, channels, sentence_dim, rng):
    c, d = channels, sentence_dim
    scope.register("w_qa", init_param((c, c), "scaled-uniform", rng))
    scope.register("w_qm", init_param((c, c), "scaled-uniform", rng))
    scope.register("w_kc", init_param((c, d), "scaled-uniform", rng))
    scope.register("w_vc", init_param((c, d), "scaled-uniform", rng))
    scope.register("w_c", init_param((c, 2 * c), "scaled-uniform", rng))
    scope.register("b_c", init_param((c,), "zeros"))
    scope.register("gamma_c", init_param((1,), "zeros"))


def _channel_scores(q, k, v, mode):
    if mode == "elementwise":
        return q * k * v
    if mode == "outer":
        n, c = q.shape
        sim = T.matmul(T.reshape(q, (n, c, 1)), T.reshape(k, (n, 1, c)))
        return T.reshape(T.matmul(sim, T.reshape(v, (n, c, 1))), (n, c))
    raise ValueError(f"unknown cam_score_mode {mode!r}")


def cam_forward(h, s, params, mode="elementwise"):
    """Channel-aware attention.  Returns ``(y, (alpha_avg, alpha_max))``.

    Pooled channel statistics give the queries, the sentence gives key and
    value; softmax over channels reweights ``h`` and a gated residual adds
    the fused result back onto ``h``.
    """
    n, c = h.shape[0], h.shape[1]
    if params["w_qa"].shape != (c, c):
        raise ShapeError(f"cam_forward: features {h.shape} vs query projection "
                         f"{params['w_qa'].shape}")
    _check_sentence("cam_forward", h, s, params["w_kc"].shape[1])
    k = linear(s, params["w_kc"])
    v = linear(s, params["w_vc"])
    outs = []
    alphas = []
    for pool, wq in (("avg", "w_qa"), ("max", "w_qm")):
        x = T.reshape(global_pool_channels(h, pool), (n, c))
        q = linear(x, params[wq])
        alpha = T.softmax(_channel_scores(q, k, v, mode), axis=1)
        alphas.append(alpha)
        outs.append(T.reshape(alpha, (n, c, 1, 1)) * h)
    fused = T.relu(conv1x1(T.concat(outs, axis=1), params["w_c"], params["b_c"]))
    return params["gamma_c"] * fused + h, (alphas[0], alphas[1])


# ---------------------------------------------------------------------------
# pixel-aware attention


def init_pam(scope, channels, sentence_dim, rng):
    c, d = channels, sentence_dim
    scope.register("w_kp", init_param((1, d), "scaled-uniform", rng))
    scope.register("w_vp", init_param((1, d), "scaled-uniform", rng))
    scope.register("w_p", init_param((c, 2 * c), "scaled-uniform", rng))
    scope.register("b_p", init_param((c,), "zeros"))
    scope.register("gamma_p", init_param((1,), "zeros"))


def pam_forward(h, s, params):
    """Pixel-aware attention.  Returns ``(y, (alpha_avg, alpha_max))``.

    Channel-pooled maps scaled by the scalar sentence key and value are
    soft-maxed over all H*W positions; each map reweights every channel of
    ``h`` before fusion and the gated residual.
    """
    n, c, hh, ww = h.shape
    if params["w_p"].shape != (c, 2 * c):
        raise ShapeError(f"pam_forward: features {h.shape} vs fusion {params['w_p'].shape}")
    _check_sentence("pam_forward", h, s, params["w_kp"].shape[1])
    kv = T.reshape(linear(s, params["w_kp"]) * linear(s, params["w_vp"]), (n, 1, 1, 1))
    outs = []
    alphas = []
    for pool in ("avg", "max"):
        e = spatial_pool(h, pool)
        alpha = T.softmax(T.reshape(e * kv, (n, hh * ww)), axis=1)
        alpha = T.reshape(alpha, (n, 1, hh, ww))
        alphas.append(alpha)
        outs.append(alpha * h)
    fused = T.relu(conv1x1(T.concat(outs, axis=1), params["w_p"], params["b_p"]))
    return params["gamma_p"] * fused + h, (alphas[0], alphas[1])


# ---------------------------------------------------------------------------
# normalisation


def init_norm(scope, channels, sentence_dim, rng, mode="cadailn", weight_init="scaled-uniform"):
    """``weight_init="zeros"`` starts every site at gamma = 1, beta = 0."""
    if mode == "none":
        return
    c, d = channels, sentence_dim
    scope.register("w1", init_param((c, d), weight_init, rng))
    scope.register("b1", init_param((c,), "ones"))
    scope.register("w2", init_param((c, d), weight_init, rng))
    scope.register("b2", init_param((c,), "zeros"))
    if mode == "cadailn":
        scope.register("rho", init_param((c,), "ones"))


def _standardize(a, axes, eps):
    mu = T.mean(a, axes, keepdims=True)
    centered = a - mu
    var = T.mean(centered * centered, axes, keepdims=True)
    return centered / T.power(var + eps, 0.5)


def _affine(s, params, n, c):
    gamma = T.reshape(linear(s, params["w1"], params["b1"]), (n, c, 1, 1))
    beta = T.reshape(linear(s, params["w2"], params["b2"]), (n, c, 1, 1))
    return gamma, beta


def cadailn_forward(a, s, params, eps=NORM_EPS):
    """Blend of instance- and layer-standardised ``a``, scaled and shifted by
    sentence-derived ``gamma`` and ``beta``; ``rho`` picks the blend per channel."""
    if a.ndim != 4:
        raise ShapeError(f"cadailn_forward: expected (N, C, H, W), got {a.shape}")
    n, c, h, w = a.shape
    if h * w < 2:
        raise ShapeError(f"cadailn_forward: need at least 2 spatial sites, got {h}x{w}")
    rho = params["rho"]
    if rho.shape != (c,):
        raise ShapeError(f"cadailn_forward: rho {rho.shape} vs {c} channels")
    if np.any(rho.data < 0.0) or np.any(rho.data > 1.0):
        raise InvariantError(f"cadailn_forward: rho outside [0, 1] "
                             f"(min {rho.data.min()}, max {rho.data.max()})")
    _check_sentence("cadailn_forward", a, s, params["w1"].shape[1])
    a_in = _standardize(a, (2, 3), eps)
    a_ln = _standardize(a, (1, 2, 3), eps)
    r = T.reshape(rho, (1, c, 1, 1))
    mixed = r * a_in + (1.0 - r) * a_ln
    gamma, beta = _affine(s, params, n, c)
    return gamma * mixed + beta


def bn_sent_forward(a, s, params, eps=NORM_EPS):
    """Batch standardisation (batch statistics always) with sentence affine."""
    if a.ndim != 4:
        raise ShapeError(f"bn_sent_forward: expected (N, C, H, W), got {a.shape}")
    n, c, h, w = a.shape
    if n * h * w < 2:
        raise ShapeError("bn_sent_forward: need at least 2 values per channel")
    _check_sentence("bn_sent_forward", a, s, params["w1"].shape[1])
    gamma, beta = _affine(s, params, n, c)
    return gamma * _standardize(a, (0, 2, 3), eps) + beta


def normalize(a, s, params, mode):
    if mode == "cadailn":
        return cadailn_forward(a, s, params)
    if mode == "bn_sent":
        return bn_sent_forward(a, s, params)
    if mode == "none":
        return a
    raise ValueError(f"unknown normalisation mode {mode!r}")


# ---------------------------------------------------------------------------
# dual-attention layer


@dataclass(frozen=True)
class LayerOptions:
    cam: bool = True
    pam: bool = True
    norm: str = "cadailn"
    cam_score_mode: str = "elementwise"
    norm_init: str = "scaled-uniform"


def init_dual_attention_layer(scope, in_ch, out_ch, sentence_dim, rng, opts=LayerOptions()):
    scope.register("conv1", init_param((out_ch, in_ch, 3, 3), "scaled-uniform", rng))
    init_norm(scope.scope("norm1"), out_ch, sentence_dim, rng, opts.norm, opts.norm_init)
    if opts.cam:
        init_cam(scope.scope("cam"), out_ch, sentence_dim, rng)
    scope.register("conv2", init_param((out_ch, out_ch, 3, 3), "scaled-uniform", rng))
    init_norm(scope.scope("norm2"), out_ch, sentence_dim, rng, opts.norm, opts.norm_init)
    if opts.pam:
        init_pam(scope.scope("pam"), out_ch, sentence_dim, rng)


def dual_attention_layer(h, s, params, upsample, opts=LayerOptions(), index=0):
    """upsample? -> conv -> norm -> relu -> CAM -> conv -> norm -> relu -> PAM."""
    if upsample:
        h = T.upsample2x(h)
    h = T.relu(normalize(conv3x3(h, params["conv1"]), s, params.scope("norm1"), opts.norm))
    maps = AttnMaps(layer=index)
    if opts.cam:
        h, (ca, cm) = cam_forward(h, s, params.scope("cam"), opts.cam_score_mode)
        maps.channel_avg, maps.channel_max = ca.data, cm.data
    h = T.relu(normalize(conv3x3(h, params["conv2"]), s, params.scope("norm2"), opts.norm))
    if opts.pam:
        h, (pa, pm) = pam_forward(h, s, params.scope("pam"))
        maps.pixel_avg, maps.pixel_max = pa.data[:, 0], pm.data[:, 0]
    return h, maps
