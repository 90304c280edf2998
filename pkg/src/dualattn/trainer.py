"""Alternating hinge-GAN training with two-timescale Adam, plus proxy metrics."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import tensor as T
from .attention import InvariantError
from .config import TrainConfig
from .losses import d_adv_loss, d_objective, g_adv_loss, g_objective, magp_loss, visual_loss
from .networks import (build_params, discriminator_forward, encode_sentence, generator_forward,
                       image_features, sample_noise)
from .tensor import NonFiniteError

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "loss_d", "adv_d", "magp", "loss_g", "adv_g", "vis")
GEN_PREFIXES = ("gen.", "enc.")
DISC_PREFIXES = ("disc.",)


# ---------------------------------------------------------------------------
# optimiser


def adam_step(params, grads, m, v, lr, beta1, beta2, eps, step):
    """One bias-corrected Adam update over dicts of arrays keyed by path.

    Returns new ``(params, m, v)`` dicts; inputs are left untouched.  Any CAdaILN
    mixing ratio (path ending in ``.rho``) is clamped to [0, 1] afterwards.
    """
    if step < 1:
        raise ValueError("adam_step: step counts from 1")
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for path, p in params.items():
        g = grads[path]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != {p.shape} for {path}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step: non-finite gradient for parameter {path}")
        mt = beta1 * m[path] + (1.0 - beta1) * g
        vt = beta2 * v[path] + (1.0 - beta2) * (g * g)
        upd = p - lr * (mt / c1) / (np.sqrt(vt / c2) + eps)
        if path.endswith(".rho"):
            upd = np.clip(upd, 0.0, 1.0)
        new_p[path], new_m[path], new_v[path] = upd, mt, vt
    return new_p, new_m, new_v


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    config: TrainConfig
    params: object                  # ParamStore
    m: dict
    v: dict
    step: int
    rng: np.random.Generator
    history: list = field(default_factory=list)


@dataclass
class LossRecord:
    step: int
    loss_d: float
    adv_d: float
    magp: float
    loss_g: float
    adv_g: float
    vis: float
    d_real: float = 0.0     # batch-mean logits, for monitoring
    d_fake: float = 0.0

    def csv_row(self):
        return ",".join([str(self.step)] + [repr(float(getattr(self, c)))
                                            for c in LOSS_COLUMNS[1:]])


def init_state(cfg):
    params = build_params(cfg.gen, cfg.disc, cfg.enc, seed=[cfg.seed, 0])
    zeros = {p: np.zeros_like(a) for p, a in params.arrays().items()}
    return TrainState(cfg, params, dict(zeros), {p: z.copy() for p, z in zeros.items()},
                      0, np.random.default_rng([cfg.seed, 2]))


def make_datasets(cfg):
    return D.make_split(cfg.n_train, cfg.n_test, np.random.default_rng([cfg.seed, 1]),
                        resolution=cfg.resolution)


def _trainable(cfg, prefixes):
    if cfg.freeze_encoder:
        prefixes = tuple(p for p in prefixes if p != "enc.")
    return prefixes


def _apply(state, leaves, grads, lr):
    cfg = state.config
    paths = list(leaves)
    new_p, new_m, new_v = adam_step(
        {p: state.params[p].data for p in paths}, dict(zip(paths, (g.data for g in grads))),
        state.m, state.v, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, state.step)
    state.params = state.params.replace(new_p)
    state.m = {**state.m, **new_m}
    state.v = {**state.v, **new_v}


def _draw_batch(state, train):
    cfg = state.config
    while True:
        idx = state.rng.integers(0, len(train), size=cfg.batch)
        specs = train.specs(idx)
        try:
            return idx, D.mismatch(specs)
        except D.MismatchError:
            continue


def _finite(name, value):
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} is not finite ({value})")
    return value


def train_step(state, train):
    """One discriminator update followed by one generator update."""
    cfg = state.config
    lc = cfg.loss
    idx, perm = _draw_batch(state, train)
    x = train.images(idx)
    tokens = train.tokens(idx)
    z = sample_noise(cfg.batch, state.rng, cfg.gen.noise_dim)
    state.step += 1

    # discriminator
    params, leaves = state.params.with_grad(DISC_PREFIXES)
    s = encode_sentence(tokens, params, cfg.enc)
    fake, _ = generator_forward(z, s, params, cfg.gen)

    def disc(xx, ss):
        return discriminator_forward(xx, ss, params, cfg.disc).logit

    if lc.lambda2 > 0:
        magp, d_real = magp_loss(x, s, disc, lc.p)
    else:
        magp, d_real = T.Tensor(0.0), disc(T.Tensor(x), s)
    d_fake = disc(fake, s)
    d_mis = disc(T.Tensor(x), T.Tensor(s.data[perm]))
    adv_d = d_adv_loss(d_real, d_fake, d_mis)
    loss_d = d_objective(adv_d, magp, lc.lambda2)
    _finite("discriminator loss", loss_d.item())
    grads = T.backward(loss_d, leaves.values())
    _apply(state, leaves, grads, cfg.lr_d)

    # generator, scored by the freshly updated discriminator
    params, leaves = state.params.with_grad(_trainable(cfg, GEN_PREFIXES))
    s = encode_sentence(tokens, params, cfg.enc)
    z2 = sample_noise(cfg.batch, state.rng, cfg.gen.noise_dim)
    fake, _ = generator_forward(z2, s, params, cfg.gen)
    out = discriminator_forward(fake, s, params, cfg.disc)
    adv_g = g_adv_loss(out.logit)
    if cfg.visual_loss:
        f_real = image_features(T.Tensor(x), params, cfg.disc)
        vis = visual_loss(T.reshape(f_real, out.features.shape), out.features)
        loss_g = g_objective(adv_g, vis, lc.lambda1)
    else:
        vis = T.Tensor(0.0)
        loss_g = adv_g
    _finite("generator loss", loss_g.item())
    grads = T.backward(loss_g, leaves.values())
    _apply(state, leaves, grads, cfg.lr_g)

    rec = LossRecord(state.step, loss_d.item(), adv_d.item(), magp.item(), loss_g.item(),
                     adv_g.item(), vis.item(), float(d_real.data.mean()),
                     float(d_fake.data.mean()))
    state.history.append(rec)
    return rec


def check_rho(params):
    for path, t in params.items():
        if path.endswith(".rho") and (t.data.min() < 0.0 or t.data.max() > 1.0):
            raise InvariantError(f"{path} left [0, 1]")


def train(state, train_data, steps, callback=None):
    """Run ``steps`` more training steps; ``callback(state, record)`` after each."""
    for _ in range(steps):
        rec = train_step(state, train_data)
        if callback is not None:
            callback(state, rec)
    return state


# ---------------------------------------------------------------------------
# generation and proxy metrics


def generate(params, cfg, tokens, z):
    """Images (N, 3, R, R) and attention maps for token rows and noise rows."""
    frozen = params.frozen()
    s = encode_sentence(tokens, frozen, cfg.enc)
    images, maps = generator_forward(z, s, frozen, cfg.gen)
    return images.data, maps


def color_match_rate(images, specs):
    hits = [D.dominant_color(img) == sp.color for img, sp in zip(images, specs)]
    return float(np.mean(hits))


def diversity(groups):
    """Mean pairwise L2 distance between images generated for the same caption."""
    dists = []
    for imgs in groups:
        flat = np.asarray(imgs).reshape(len(imgs), -1)
        for i in range(len(flat)):
            for j in range(i + 1, len(flat)):
                dists.append(float(np.sqrt(((flat[i] - flat[j]) ** 2).sum())))
    if not dists:
        raise ValueError("diversity needs at least two images per caption")
    return float(np.mean(dists))


@dataclass
class ProxyMetrics:
    color_match: float
    diversity: float
    degenerate: bool
    n_images: int

    def lines(self):
        return (f"color_match: {self.color_match!r}\ndiversity: {self.diversity!r}\n"
                f"degenerate: {str(self.degenerate).lower()}\nn_images: {self.n_images}\n")


def evaluate_proxies(params, cfg, specs, draws, rng):
    """Colour-match rate, same-caption diversity and the degenerate-output alarm."""
    if draws < 2:
        raise ValueError("evaluate_proxies: need at least 2 draws per caption for diversity")
    tokens = np.stack([sp.tokens(cfg.enc.seq_len) for sp in specs])
    images = []
    for _ in range(draws):
        z = sample_noise(len(specs), rng, cfg.gen.noise_dim)
        images.append(generate(params, cfg, tokens, z)[0])
    groups = [np.stack([images[d][k] for d in range(draws)]) for k in range(len(specs))]
    flat_imgs = [img for grp in groups for img in grp]
    flat_specs = [sp for sp in specs for _ in range(draws)]
    div = diversity(groups)
    return ProxyMetrics(color_match_rate(flat_imgs, flat_specs), div, div < 1e-3,
                        len(flat_imgs))


def attention_foreground_rate(params, cfg, specs, rng, layer=-1):
    """Fraction of captions whose pixel attention (avg path) is heavier on the
    generated foreground than on the background."""
    tokens = np.stack([sp.tokens(cfg.enc.seq_len) for sp in specs])
    z = sample_noise(len(specs), rng, cfg.gen.noise_dim)
    images, maps = generate(params, cfg, tokens, z)
    attn = maps[layer].pixel_avg
    if attn is None:
        raise ValueError("pixel attention is disabled in this configuration")
    hits = 0
    for img, a in zip(images, attn):
        a = upsample_nearest(a, img.shape[-1])
        fg = D.foreground_mask(img)
        if fg.any() and not fg.all() and a[fg].mean() > a[~fg].mean():
            hits += 1
    return hits / len(specs)


def upsample_nearest(a, size):
    factor = size // a.shape[-1]
    return np.repeat(np.repeat(a, factor, axis=-2), factor, axis=-1)
