"""Finite-difference gradient suites for primitives, modules, losses and a
whole training step.

Each item builds a scalar function of a few named inputs, differentiates it
with :func:`dualattn.tensor.backward` and compares against central
differences.  Items are tiny so every suite runs in seconds on one core.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import attention as A
from . import losses as L
from . import nn
from . import tensor as T
from .networks import (DiscriminatorConfig, EncoderConfig, GeneratorConfig, build_params,
                       discriminator_forward, encode_sentence, generator_forward, image_features)
from .tensor import Tensor

SCOPES = ("primitives", "modules", "losses", "e2e")
FIRST_ORDER_TOL = 1e-4
SECOND_ORDER_TOL = 1e-3
FD_STEP = 1e-5


@dataclass
class Item:
    name: str
    fn: object            # fn(dict of Tensors) -> scalar Tensor
    inputs: dict          # name -> ndarray
    tol: float = FIRST_ORDER_TOL
    second_order: bool = False


@dataclass
class Result:
    name: str
    error: float
    tol: float
    second_order: bool
    worst_input: str

    @property
    def ok(self):
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self):
        tag = "  [second-order]" if self.second_order else ""
        status = "ok" if self.ok else "FAIL"
        return (f"{self.name:<28} max_rel_err={self.error:.3e}  tol={self.tol:.0e}  "
                f"{status}{tag}" + ("" if self.ok else f"  (input {self.worst_input})"))


def check_item(item, step=FD_STEP):
    leaves = {k: Tensor(v, requires_grad=True) for k, v in item.inputs.items()}
    names = list(leaves)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", T.GradientWarning)
        analytic = T.backward(item.fn(leaves), [leaves[k] for k in names])
    worst, worst_name = 0.0, names[0]
    for name, g in zip(names, analytic):
        def f(x, name=name):
            vals = {k: Tensor(v) for k, v in item.inputs.items()}
            vals[name] = x
            return item.fn(vals)

        err = T.rel_error(g, T.finite_diff_grad(f, item.inputs[name], step))
        if not np.isfinite(err) or err > worst:
            worst, worst_name = err, name
        if not np.isfinite(err):
            break
    return Result(item.name, worst, item.tol, item.second_order, worst_name)


# ---------------------------------------------------------------------------
# helpers


def _rng(tag):
    return np.random.default_rng([20240, sum(map(ord, tag))])


def _weighted(out, tag):
    """Scalar ``sum(out * r)`` with a fixed random ``r`` so every output entry counts."""
    r = _rng("w" + tag).standard_normal(out.shape)
    return T.sum(out * Tensor(r))


def _away_from_zero(a, margin=0.1):
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin, a)


def _store(v, prefix, names):
    return nn.ParamStore({f"{prefix}.{k}": v[k] for k in names}).scope(prefix)


def _second_order(name, op, inputs, tag=None):
    """Item for ``v -> sum_k <r_k, d/dv_k sum(w * op(v))>``, a gradient of a gradient."""
    tag = tag or name

    def fn(v):
        # finite differences pass constants; the inner gradient still needs leaves
        ins = {k: t if t.requires_grad else Tensor(t.data, requires_grad=True)
               for k, t in v.items()}
        gs = T.backward(_weighted(op(ins), tag), list(ins.values()), create_graph=True)
        total = Tensor(0.0)
        for k, g in zip(ins, gs):
            total = total + _weighted(g, tag + k)
        return total

    return Item(name + ":2nd", fn, inputs, SECOND_ORDER_TOL, True)


# ---------------------------------------------------------------------------
# primitives


def primitive_items():
    rng = _rng("primitives")

    def randn(*shape):
        return rng.standard_normal(shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, shape)

    def unary(name, op, x):
        return Item(name, lambda v: _weighted(op(v["x"]), name), {"x": x})

    def binary(name, op, a, b):
        return Item(name, lambda v: _weighted(op(v["a"], v["b"]), name), {"a": a, "b": b})

    items = [
        binary("add", T.add, randn(3, 4), randn(4)),
        binary("sub", T.sub, randn(3, 1), randn(3, 4)),
        binary("mul", T.mul, randn(2, 3, 4), randn(3, 1)),
        binary("div", T.div, randn(3, 4), pos(3, 4)),
        unary("neg", T.neg, randn(5)),
        unary("exp", T.exp, randn(3, 4)),
        unary("log", T.log, pos(3, 4)),
        unary("tanh", T.tanh, randn(3, 4)),
        unary("relu", T.relu, _away_from_zero(randn(3, 4))),
        unary("leaky_relu", lambda x: T.leaky_relu(x, 0.2), _away_from_zero(randn(3, 4))),
        unary("abs", T.absolute, _away_from_zero(randn(3, 4))),
        unary("pow", lambda x: T.power(x, 3.0), randn(3, 4)),
        unary("pow_frac", lambda x: T.power(x, 0.5), pos(3, 4)),
        unary("sum", lambda x: T.sum(x, 1, keepdims=True), randn(3, 4, 2)),
        unary("mean", lambda x: T.mean(x, (0, 2)), randn(3, 4, 2)),
        unary("amax", lambda x: T.amax(x, 1), randn(3, 5)),
        unary("reshape", lambda x: T.reshape(x, (4, 6)), randn(2, 3, 4)),
        unary("transpose", lambda x: T.transpose(x, (2, 0, 1)), randn(2, 3, 4)),
        unary("broadcast_to", lambda x: T.broadcast_to(x, (2, 3, 4)), randn(3, 1)),
        unary("sum_to", lambda x: T.sum_to(x, (3, 1)), randn(2, 3, 4)),
        binary("concat", lambda a, b: T.concat([a, b], axis=1), randn(2, 3), randn(2, 2)),
        unary("getitem", lambda x: x[:, 1:3], randn(3, 4)),
        binary("matmul", T.matmul, randn(2, 3, 4), randn(4, 5)),
        unary("im2col", lambda x: T.im2col(x, 3, 1, 1), randn(2, 2, 4, 4)),
        unary("col2im", lambda c: T.col2im(c, (2, 2, 4, 4), 3, 2, 1), randn(18, 8)),
        Item("conv2d", lambda v: _weighted(T.conv2d(v["x"], v["w"], v["b"], 1, 1), "conv2d"),
             {"x": randn(2, 3, 5, 5), "w": randn(4, 3, 3, 3), "b": randn(4)}),
        Item("conv2d/stride2", lambda v: _weighted(T.conv2d(v["x"], v["w"], v["b"], 2, 1),
                                                   "conv2d/stride2"),
             {"x": randn(2, 2, 6, 6), "w": randn(3, 2, 3, 3), "b": randn(3)}),
        unary("upsample2x", T.upsample2x, randn(2, 2, 3, 3)),
        unary("sumpool2x", T.sumpool2x, randn(2, 2, 4, 4)),
        unary("l2norm", lambda x: T.l2norm(x, 2), randn(3, 2, 4)),
        unary("softmax", lambda x: T.softmax(x, axis=1), randn(3, 5)),
        unary("sigmoid", T.sigmoid, randn(3, 4)),
    ]
    # second-order rules for every primitive a gradient penalty can traverse
    items += [
        _second_order("mul", lambda v: v["a"] * v["b"], {"a": randn(3, 4), "b": randn(3, 4)}),
        _second_order("div", lambda v: v["a"] / v["b"], {"a": randn(3), "b": pos(3)}),
        _second_order("exp", lambda v: T.exp(v["x"]), {"x": randn(4)}),
        _second_order("log", lambda v: T.log(v["x"]), {"x": pos(4)}),
        _second_order("tanh", lambda v: T.tanh(v["x"]), {"x": randn(4)}),
        _second_order("pow", lambda v: T.power(v["x"], 6.0), {"x": randn(4)}),
        _second_order("leaky_relu", lambda v: T.leaky_relu(v["x"], 0.2) * v["x"],
                      {"x": _away_from_zero(randn(4))}),
        _second_order("matmul", lambda v: T.matmul(v["a"], v["b"]),
                      {"a": randn(2, 3), "b": randn(3, 2)}),
        _second_order("conv2d", lambda v: T.conv2d(v["x"], v["w"], None, 2, 1) ** 2.0,
                      {"x": randn(1, 2, 4, 4), "w": randn(2, 2, 3, 3)}),
        _second_order("l2norm", lambda v: T.l2norm(v["x"], 1), {"x": randn(3, 4)}),
        _second_order("softmax", lambda v: T.softmax(v["x"], axis=1), {"x": randn(2, 4)}),
        _second_order("amax", lambda v: T.amax(v["x"] * v["x"], 1), {"x": randn(2, 5)}),
        _second_order("upsample2x", lambda v: T.upsample2x(v["x"]) ** 2.0,
                      {"x": randn(1, 1, 2, 2)}),
        _second_order("sumpool2x", lambda v: T.sumpool2x(v["x"]) ** 2.0,
                      {"x": randn(1, 1, 4, 4)}),
        # the slice adjoint ("scatter") only appears on double-backward tapes
        _second_order("getitem", lambda v: v["x"][:, 1:3] ** 2.0, {"x": randn(3, 4)}),
    ]
    return items


# ---------------------------------------------------------------------------
# modules


def _init_into(init, *args, mode=None):
    store = nn.ParamStore()
    rng = _rng("init")
    if mode is None:
        init(store.scope("m"), *args, rng)
    else:
        init(store.scope("m"), *args, rng, mode)
    return {p.split(".", 1)[1]: a for p, a in store.arrays().items()}


def module_items():
    rng = _rng("modules")
    n, c, hw, d = 2, 4, 4, 3
    h = rng.standard_normal((n, c, hw, hw))
    s = rng.standard_normal((n, d))
    items = []

    def layer_item(name, fn, params):
        inputs = {"h": h, "s": s, **params}
        return Item(name, lambda v: _weighted(fn(v, _store(v, "m", params)), name), inputs)

    items.append(Item("linear", lambda v: _weighted(nn.linear(v["x"], v["w"], v["b"]), "linear"),
                      {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((2, 4)),
                       "b": rng.standard_normal(2)}))
    items.append(Item("conv1x1", lambda v: _weighted(nn.conv1x1(v["x"], v["w"], v["b"]), "c1"),
                      {"x": h, "w": rng.standard_normal((3, c)), "b": rng.standard_normal(3)}))
    items.append(Item("conv3x3", lambda v: _weighted(nn.conv3x3(v["x"], v["w"], v["b"]), "c3"),
                      {"x": h, "w": rng.standard_normal((3, c, 3, 3)),
                       "b": rng.standard_normal(3)}))
    for mode in ("avg", "max"):
        items.append(Item(f"global_pool/{mode}",
                          lambda v, m=mode: _weighted(nn.global_pool_channels(v["x"], m), "gp" + m),
                          {"x": h}))
        items.append(Item(f"spatial_pool/{mode}",
                          lambda v, m=mode: _weighted(nn.spatial_pool(v["x"], m), "sp" + m),
                          {"x": h}))

    cell = _init_into(nn.init_gated_cell, d, 3)
    items.append(Item("gated_cell",
                      lambda v: _weighted(nn.recurrent_cell_step(
                          v["state"], v["x"], _store(v, "m", cell)), "gru"),
                      {"state": np.tanh(rng.standard_normal((n, 3))), "x": s, **cell}))
    lstm = _init_into(nn.init_lstm_cell, d, 3)
    items.append(Item("lstm_cell",
                      lambda v: _weighted(T.concat(list(nn.lstm_cell_step(
                          (v["h0"], v["c0"]), v["x"], _store(v, "m", lstm))), axis=1), "lstm"),
                      {"h0": np.tanh(rng.standard_normal((n, 3))),
                       "c0": rng.standard_normal((n, 3)), "x": s, **lstm}))

    cam = _init_into(A.init_cam, c, d)
    cam["gamma_c"] = np.array([0.7])
    cam["b_c"] = rng.standard_normal(c)
    for mode in A.CAM_SCORE_MODES:
        items.append(layer_item(f"cam/{mode}",
                                lambda v, p, m=mode: A.cam_forward(v["h"], v["s"], p, m)[0], cam))

    pam = _init_into(A.init_pam, c, d)
    pam["gamma_p"] = np.array([-0.6])
    pam["b_p"] = rng.standard_normal(c)
    items.append(layer_item("pam", lambda v, p: A.pam_forward(v["h"], v["s"], p)[0], pam))

    norm = _init_into(A.init_norm, c, d, mode="cadailn")
    norm = {k: rng.standard_normal(a.shape) * 0.5 for k, a in norm.items()}
    norm["rho"] = rng.uniform(0.2, 0.8, c)
    items.append(layer_item("cadailn", lambda v, p: A.cadailn_forward(v["h"], v["s"], p), norm))
    bn = {k: a for k, a in norm.items() if k != "rho"}
    items.append(layer_item("bn_sent", lambda v, p: A.bn_sent_forward(v["h"], v["s"], p), bn))

    opts = A.LayerOptions()
    store = nn.ParamStore()
    A.init_dual_attention_layer(store.scope("m"), c, 3, d, _rng("dal"), opts)
    dal = {p.split(".", 1)[1]: a for p, a in store.arrays().items()}
    for k in dal:
        if k.endswith(("gamma_c", "gamma_p")):
            dal[k] = np.array([0.5])
        elif k.endswith("rho"):
            dal[k] = np.full_like(dal[k], 0.6)
        elif k.endswith(("w1", "w2", "b_c", "b_p")):
            # nonzero fusion biases: all-zero pixels would sit on the relu kink
            dal[k] = 0.3 * rng.standard_normal(dal[k].shape)
    small = h[:, :, :2, :2]
    items.append(Item("dual_attention_layer",
                      lambda v: _weighted(A.dual_attention_layer(
                          v["h"], v["s"], _store(v, "m", dal), True, opts)[0], "dal"),
                      {"h": small, "s": s, **dal}))
    return items


# ---------------------------------------------------------------------------
# losses


def _linear_discriminator(w_img, w_txt, b):
    def disc(x, s):
        n = x.shape[0]
        flat = T.reshape(x, (n, -1))
        return T.reshape(T.matmul(flat, w_img) + T.matmul(s, w_txt), (n,)) + b
    return disc


def _tiny_disc_setup(rng):
    cfg = DiscriminatorConfig(resolution=8, base_channels=2, max_channels=4, sentence_dim=3,
                              text_channels=2)
    store = nn.ParamStore()
    from .networks import init_discriminator
    init_discriminator(store, cfg, rng)
    return cfg, store.arrays()


def loss_items():
    rng = _rng("losses")
    n = 4
    # keep hinge arguments clear of the kinks at +-1
    real = np.array([0.3, 1.6, -0.4, 0.8])
    fake = np.array([-0.2, -1.7, 0.5, 0.1])
    mis = np.array([-0.5, 0.4, -1.4, 0.2])
    items = [
        Item("d_adv_loss", lambda v: L.d_adv_loss(v["real"], v["fake"], v["mis"]),
             {"real": real, "fake": fake, "mis": mis}),
        Item("g_adv_loss", lambda v: L.g_adv_loss(v["fake"]), {"fake": fake}),
        Item("visual_loss", lambda v: L.visual_loss(v["fr"], v["ff"]),
             {"fr": rng.standard_normal((n, 6)), "ff": rng.standard_normal((n, 6))}),
        Item("g_objective", lambda v: L.g_objective(
            L.g_adv_loss(v["fake"]), L.visual_loss(v["fr"], v["ff"]), 0.1),
             {"fake": fake, "fr": rng.standard_normal((n, 6)), "ff": rng.standard_normal((n, 6))}),
    ]

    x = rng.standard_normal((n, 3, 8, 8))
    s = rng.standard_normal((n, 3))

    # MA-GP through a linear critic: closed form exists, so keep it as a check
    def magp_linear(v):
        disc = _linear_discriminator(v["w_img"], v["w_txt"], v["b"])
        return L.magp_loss(v["x"], v["s"], disc, 6.0)[0]

    items.append(Item("magp_loss/linear", magp_linear,
                      {"w_img": 0.2 * rng.standard_normal((3 * 64, 1)),
                       "w_txt": 0.5 * rng.standard_normal((3, 1)), "b": np.array([0.1]),
                       "x": x[:, :, :, :], "s": s}, SECOND_ORDER_TOL, True))

    cfg, arrays = _tiny_disc_setup(_rng("tiny-d"))
    arrays = {k.split(".", 1)[1]: a for k, a in arrays.items()}

    def disc_fn(v):
        store = nn.ParamStore({f"disc.{k}": v[k] for k in arrays})
        return lambda xx, ss: discriminator_forward(xx, ss, store, cfg).logit

    items.append(Item("magp_loss", lambda v: L.magp_loss(x, s, disc_fn(v), 6.0)[0],
                      dict(arrays), SECOND_ORDER_TOL, True))

    def d_obj(v):
        disc = disc_fn(v)
        magp, d_real = L.magp_loss(x, s, disc, 6.0)
        fake_x = Tensor(np.tanh(x[::-1].copy()))
        adv = L.d_adv_loss(d_real, disc(fake_x, Tensor(s)), disc(Tensor(x), Tensor(s[::-1].copy())))
        return L.d_objective(adv, magp, 2.0)

    items.append(Item("d_objective", d_obj, dict(arrays), SECOND_ORDER_TOL, True))
    return items


# ---------------------------------------------------------------------------
# end to end


def _tiny_configs():
    enc = EncoderConfig(embed_dim=3, hidden=3, sentence_dim=3)
    gen = GeneratorConfig(num_layers=2, base_channels=3, min_channels=2, sentence_dim=3,
                          noise_dim=3)
    disc = DiscriminatorConfig(resolution=gen.resolution, base_channels=2, max_channels=3,
                               sentence_dim=3, text_channels=2)
    return enc, gen, disc


def e2e_items():
    enc, gen, disc = _tiny_configs()
    store = build_params(gen, disc, enc, seed=[7, 0])
    arrays = store.arrays()
    rng = _rng("e2e")
    for p in arrays:
        if p.endswith(("gamma_c", "gamma_p")):
            arrays[p] = np.array([0.5])
        elif p.endswith("rho"):
            arrays[p] = np.full_like(arrays[p], 0.6)
        elif p.endswith(("norm1.w1", "norm2.w1", "norm1.w2", "norm2.w2", "b_c", "b_p",
                         "_b")):
            arrays[p] = 0.3 * rng.standard_normal(arrays[p].shape)
    n = 3
    tokens = np.array([[1, 4, 6, 12, 2, 1, 16, 3], [1, 5, 7, 13, 2, 1, 17, 3],
                       [1, 4, 8, 14, 2, 1, 16, 3]])
    z = rng.standard_normal((n, gen.noise_dim))
    x = np.tanh(rng.standard_normal((n, 3, gen.resolution, gen.resolution)))

    def with_params(v, prefix):
        merged = {p: Tensor(a) for p, a in arrays.items()}
        merged.update({p: t for p, t in v.items() if p.startswith(prefix)})
        return nn.ParamStore(merged)

    def loss_d(v):
        params = with_params(v, "disc.")
        s = encode_sentence(tokens, params, enc)
        fake, _ = generator_forward(z, s, params, gen)

        def d(xx, ss):
            return discriminator_forward(xx, ss, params, disc).logit

        magp, d_real = L.magp_loss(x, s, d, 6.0)
        adv = L.d_adv_loss(d_real, d(fake, s), d(Tensor(x), Tensor(s.data[[1, 2, 0]])))
        return L.d_objective(adv, magp, 2.0)

    def loss_g(v):
        params = with_params(v, ("gen.", "enc."))
        s = encode_sentence(tokens, params, enc)
        fake, _ = generator_forward(z, s, params, gen)
        out = discriminator_forward(fake, s, params, disc)
        f_real = image_features(Tensor(x), params, disc)
        vis = L.visual_loss(T.reshape(f_real, out.features.shape), out.features)
        return L.g_objective(L.g_adv_loss(out.logit), vis, 0.1)

    d_inputs = {p: a for p, a in arrays.items() if p.startswith("disc.")}
    g_inputs = {p: a for p, a in arrays.items() if p.startswith(("gen.", "enc."))}
    return [Item("train_step/discriminator", loss_d, d_inputs, SECOND_ORDER_TOL, True),
            Item("train_step/generator", loss_g, g_inputs)]


SUITES = {"primitives": primitive_items, "modules": module_items, "losses": loss_items,
          "e2e": e2e_items}


def run(scope, out=None):
    """Run one suite (or ``"all"``); returns the list of :class:`Result`.

    With ``out`` (a callable taking a string) each line is reported as it
    completes.
    """
    scopes = SCOPES if scope == "all" else (scope,)
    results = []
    for name in scopes:
        if name not in SUITES:
            raise ValueError(f"unknown gradcheck scope {name!r}; choose from {SCOPES + ('all',)}")
        t0 = time.perf_counter()
        for item in SUITES[name]():
            res = check_item(item)
            results.append(res)
            if out is not None:
                out(res.line())
        if out is not None:
            out(f"# {name}: {time.perf_counter() - t0:.1f}s")
    return results
