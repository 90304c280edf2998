import numpy as np
import pytest

from dualattn import attention as A
from dualattn import nn
from dualattn.tensor import ShapeError, Tensor

N, C, H, W, D = 2, 4, 4, 4, 3


def build(init, *args, **kw):
    store = nn.ParamStore()
    init(store.scope("m"), *args, np.random.default_rng(0), **kw)
    return store


def with_values(store, **values):
    return store.replace({f"m.{k}": np.asarray(v, dtype=float) for k, v in values.items()})


@pytest.fixture
def hs(rng):
    return Tensor(rng.standard_normal((N, C, H, W))), Tensor(rng.standard_normal((N, D)))


# CAM / PAM ----------------------------------------------------------------


@pytest.mark.parametrize("mode", A.CAM_SCORE_MODES)
def test_cam_zero_gate_is_identity(hs, mode):
    h, s = hs
    y, (aa, am) = A.cam_forward(h, s, build(A.init_cam, C, D).scope("m"), mode)
    assert np.array_equal(y.data, h.data)
    np.testing.assert_allclose(aa.data.sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(am.data.sum(1), 1.0, atol=1e-12)


def test_pam_zero_gate_is_identity(hs):
    h, s = hs
    y, (pa, pm) = A.pam_forward(h, s, build(A.init_pam, C, D).scope("m"))
    assert np.array_equal(y.data, h.data)
    assert pa.shape == (N, 1, H, W)
    np.testing.assert_allclose(pa.data.sum(axis=(1, 2, 3)), 1.0, atol=1e-12)
    np.testing.assert_allclose(pm.data.sum(axis=(1, 2, 3)), 1.0, atol=1e-12)


def cam_oracle(h, s, p):
    """Loop-level channel attention used as an independent reference."""
    out = np.empty_like(h)
    for n in range(h.shape[0]):
        k = p["w_kc"] @ s[n]
        v = p["w_vc"] @ s[n]
        parts = []
        for pool, wq in ((h[n].mean(axis=(1, 2)), "w_qa"), (h[n].max(axis=(1, 2)), "w_qm")):
            q = p[wq] @ pool
            e = q * k * v
            a = np.exp(e - e.max())
            a /= a.sum()
            parts.append(a[:, None, None] * h[n])
        cat = np.concatenate(parts, axis=0)
        fused = np.maximum(np.einsum("oc,chw->ohw", p["w_c"], cat) + p["b_c"][:, None, None], 0)
        out[n] = p["gamma_c"][0] * fused + h[n]
    return out


def test_cam_matches_loop_oracle(hs, rng):
    h, s = hs
    store = with_values(build(A.init_cam, C, D), gamma_c=[0.8], b_c=rng.standard_normal(C))
    p = {k[2:]: v for k, v in store.arrays().items()}
    y, _ = A.cam_forward(h, s, store.scope("m"))
    np.testing.assert_allclose(y.data, cam_oracle(h.data, s.data, p), atol=1e-12)


def test_pam_matches_loop_oracle(hs, rng):
    h, s = hs
    store = with_values(build(A.init_pam, C, D), gamma_p=[0.5], b_p=rng.standard_normal(C))
    p = {k[2:]: v for k, v in store.arrays().items()}
    y, _ = A.pam_forward(h, s, store.scope("m"))
    hd, sd = h.data, s.data
    for n in range(N):
        kv = (p["w_kp"] @ sd[n])[0] * (p["w_vp"] @ sd[n])[0]
        parts = []
        for e in (hd[n].mean(0), hd[n].max(0)):
            z = (e * kv).ravel()
            a = np.exp(z - z.max())
            a /= a.sum()
            parts.append(a.reshape(H, W)[None] * hd[n])
        cat = np.concatenate(parts)
        fused = np.maximum(np.einsum("oc,chw->ohw", p["w_p"], cat) + p["b_p"][:, None, None], 0)
        np.testing.assert_allclose(y.data[n], 0.5 * fused + hd[n], atol=1e-12)


def test_outer_mode_differs_from_elementwise(hs):
    h, s = hs
    store = with_values(build(A.init_cam, C, D), gamma_c=[1.0])
    a = A.cam_forward(h, s, store.scope("m"), "elementwise")[0].data
    b = A.cam_forward(h, s, store.scope("m"), "outer")[0].data
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        A.cam_forward(h, s, store.scope("m"), "dot")


def test_attention_shape_errors(hs):
    h, s = hs
    with pytest.raises(ShapeError):
        A.cam_forward(h, Tensor(np.ones((N, D + 1))), build(A.init_cam, C, D).scope("m"))
    with pytest.raises(ShapeError):
        A.pam_forward(Tensor(np.ones((N, C + 1, H, W))), s, build(A.init_pam, C, D).scope("m"))


# normalisation -----------------------------------------------------------


def norm_store(rho=None, zero_weights=True, mode="cadailn"):
    store = build(A.init_norm, C, D, mode=mode)
    values = {}
    if zero_weights:
        values.update(w1=np.zeros((C, D)), w2=np.zeros((C, D)))
    if rho is not None:
        values["rho"] = np.full(C, rho)
    return with_values(store, **values)


def test_cadailn_pure_instance_norm_laws(rng):
    a = Tensor(rng.standard_normal((N, C, H, W)) * 3 + 2)
    s = Tensor(rng.standard_normal((N, D)))
    out = A.cadailn_forward(a, s, norm_store(1.0).scope("m")).data
    assert np.abs(out.mean(axis=(2, 3))).max() < 1e-9
    assert np.abs(out.var(axis=(2, 3)) - 1).max() < 1e-4


def test_cadailn_pure_layer_norm(rng):
    a = Tensor(rng.standard_normal((N, C, H, W)))
    s = Tensor(rng.standard_normal((N, D)))
    out = A.cadailn_forward(a, s, norm_store(0.0).scope("m")).data
    assert np.abs(out.mean(axis=(1, 2, 3))).max() < 1e-9


def cadailn_oracle(a, s, p, eps=A.NORM_EPS):
    out = np.empty_like(a)
    for n in range(a.shape[0]):
        mu_l, var_l = a[n].mean(), a[n].var()
        for c in range(a.shape[1]):
            x = a[n, c]
            a_in = (x - x.mean()) / np.sqrt(x.var() + eps)
            a_ln = (x - mu_l) / np.sqrt(var_l + eps)
            gamma = p["w1"][c] @ s[n] + p["b1"][c]
            beta = p["w2"][c] @ s[n] + p["b2"][c]
            out[n, c] = gamma * (p["rho"][c] * a_in + (1 - p["rho"][c]) * a_ln) + beta
    return out


def test_cadailn_matches_scalar_oracle(rng):
    a = rng.standard_normal((N, 2, 2, 2))
    s = rng.standard_normal((N, D))
    store = nn.ParamStore()
    A.init_norm(store.scope("m"), 2, D, rng)
    store = with_values(store, rho=[0.5, 0.5], b1=rng.standard_normal(2),
                        b2=rng.standard_normal(2))
    p = {k[2:]: v for k, v in store.arrays().items()}
    out = A.cadailn_forward(Tensor(a), Tensor(s), store.scope("m")).data
    np.testing.assert_allclose(out, cadailn_oracle(a, s, p), atol=1e-12)


def test_cadailn_is_convex_combination(rng):
    a = Tensor(rng.standard_normal((N, C, H, W)))
    s = Tensor(rng.standard_normal((N, D)))
    at = [A.cadailn_forward(a, s, norm_store(r).scope("m")).data for r in (0.0, 0.3, 1.0)]
    np.testing.assert_allclose(at[1], 0.3 * at[2] + 0.7 * at[0], atol=1e-12)


def test_cadailn_constant_input_gives_beta(rng):
    s = Tensor(rng.standard_normal((N, D)))
    store = with_values(norm_store(0.4, zero_weights=False), b2=np.arange(C))
    out = A.cadailn_forward(Tensor(np.full((N, C, H, W), 3.0)), s, store.scope("m")).data
    beta = s.data @ store["m.w2"].data.T + np.arange(C)
    np.testing.assert_allclose(out, np.broadcast_to(beta[:, :, None, None], out.shape))


def test_cadailn_rejects_rho_outside_unit_interval(rng):
    a, s = Tensor(rng.standard_normal((N, C, H, W))), Tensor(rng.standard_normal((N, D)))
    with pytest.raises(A.InvariantError):
        A.cadailn_forward(a, s, norm_store(1.5).scope("m"))
    with pytest.raises(ShapeError):
        A.cadailn_forward(Tensor(np.ones((N, C, 1, 1))), s, norm_store(1.0).scope("m"))


def test_bn_sent_uses_batch_statistics(rng):
    a = Tensor(rng.standard_normal((N, C, H, W)) * 2 + 1)
    s = Tensor(rng.standard_normal((N, D)))
    out = A.bn_sent_forward(a, s, norm_store(mode="bn_sent").scope("m")).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-9
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4


def test_init_norm_modes():
    assert build(A.init_norm, C, D, mode="none").paths() == []
    assert "m.rho" not in build(A.init_norm, C, D, mode="bn_sent")
    store = build(A.init_norm, C, D, weight_init="zeros")
    assert np.array_equal(store["m.rho"].data, np.ones(C))
    assert not store["m.w1"].data.any() and np.array_equal(store["m.b1"].data, np.ones(C))


# dual-attention layer ------------------------------------------------------


@pytest.mark.parametrize("opts", [A.LayerOptions(), A.LayerOptions(cam=False),
                                  A.LayerOptions(pam=False, norm="bn_sent"),
                                  A.LayerOptions(cam=False, pam=False, norm="none")])
def test_layer_shapes_and_maps(opts, rng):
    store = nn.ParamStore()
    A.init_dual_attention_layer(store.scope("l"), C, 3, D, rng, opts)
    h = Tensor(rng.standard_normal((N, C, 2, 2)))
    s = Tensor(rng.standard_normal((N, D)))
    y, maps = A.dual_attention_layer(h, s, store.scope("l"), True, opts, index=2)
    assert y.shape == (N, 3, 4, 4) and maps.layer == 2
    assert (maps.channel_avg is None) == (not opts.cam)
    assert (maps.pixel_avg is None) == (not opts.pam)
    if opts.pam:
        assert maps.pixel_max.shape == (N, 4, 4)
    assert any(p.startswith("l.cam") for p in store.paths()) == opts.cam
    assert any(p.startswith("l.norm1") for p in store.paths()) == (opts.norm != "none")
