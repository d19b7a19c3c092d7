import math

import numpy as np
import pytest

from calm import tensor as T
from calm.cvae import (
    CvaeNoise,
    CvaeParams,
    Reconstruction,
    cvae_forward,
    decode,
    distribution_entropy,
    encode,
    kl_loss,
    rec_loss,
    reparameterize,
)
from calm.errors import DimensionError


def _zero_params(k=4, h=3, d=2):
    p = CvaeParams.init(k, h, d, np.random.default_rng(0))
    for t in p.named().values():
        t.data[...] = 0.0
    return p


def _dirichlet_rows(rng, rows, k):
    return rng.dirichlet(np.ones(k), size=rows)


def test_encode_zero_params_gives_standard_posterior():
    params = _zero_params()
    vp = T.const(np.array([[0.25, 0.25, 0.25, 0.25]]))
    mu, logvar = encode(vp, params)
    assert np.array_equal(mu.data, np.zeros((1, 2)))
    assert np.array_equal(logvar.data, np.zeros((1, 2)))


def test_encode_is_bitwise_reproducible():
    rng = np.random.default_rng(5)
    params = CvaeParams.init(5, 4, 3, rng)
    vp = T.const(_dirichlet_rows(np.random.default_rng(1), 2, 5))
    a_mu, a_lv = encode(vp, params)
    b_mu, b_lv = encode(vp, params)
    assert np.array_equal(a_mu.data, b_mu.data)
    assert np.array_equal(a_lv.data, b_lv.data)


def test_encode_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    params = CvaeParams.init(5, 4, 3, rng)
    vp = T.const(_dirichlet_rows(rng, 2, 5))
    w_mu = T.const(rng.normal(size=(2, 3)))
    w_lv = T.const(rng.normal(size=(2, 3)))

    def f():
        mu, logvar = encode(vp, params)
        return T.add(T.sum_all(T.mul(mu, w_mu)), T.sum_all(T.mul(logvar, w_lv)))

    report = T.finite_diff_check(f, params.named())
    assert report["__max__"] <= 1e-5


def test_reparameterize_zero_eps_returns_mu():
    mu = T.const(np.array([[0.3, -0.7]]))
    logvar = T.const(np.array([[0.1, 0.2]]))
    s = reparameterize(mu, logvar, np.zeros((1, 2)))
    assert np.array_equal(s.z.data, mu.data)


def test_reparameterize_unit_variance_adds_eps():
    mu = T.const(np.array([[1.0, 2.0]]))
    eps = np.array([[0.5, -1.5]])
    s = reparameterize(mu, T.const(np.zeros((1, 2))), eps)
    assert np.array_equal(s.z.data, mu.data + eps)


def test_reparameterize_moments_match_standard_normal():
    # Monte-Carlo oracle: 1e5 draws with mu=0, logvar=0
    rng = np.random.default_rng(17)
    eps = rng.standard_normal((100_000, 3))
    s = reparameterize(T.const(np.zeros((100_000, 3))), T.const(np.zeros((100_000, 3))), eps)
    mean = s.z.data.mean(axis=0)
    var = s.z.data.var(axis=0)
    assert np.abs(mean).max() <= 0.02
    assert np.abs(var - 1.0).max() <= 0.02


def test_latent_shift_equals_mu_shift():
    rng = np.random.default_rng(8)
    mu0 = rng.normal(size=(1, 4))
    logvar = T.const(rng.normal(size=(1, 4)))
    eps = rng.standard_normal((1, 4))
    delta = np.array([[0.25, -0.5, 0.125, 1.0]])
    z0 = reparameterize(T.const(mu0), logvar, eps).z.data
    z1 = reparameterize(T.const(mu0 + delta), logvar, eps).z.data
    assert np.array_equal(z1 - z0, delta)


def test_decode_zero_params_is_uniform():
    params = _zero_params(k=5, h=3, d=2)
    recon = decode(T.const(np.zeros((1, 2))), params)
    assert np.allclose(recon.probs.data, np.full((1, 5), 0.2), atol=1e-15)


def test_decode_rows_sum_to_one():
    rng = np.random.default_rng(23)
    params = CvaeParams.init(6, 5, 4, rng)
    recon = decode(T.const(rng.normal(size=(7, 4))), params)
    assert np.abs(recon.probs.data.sum(axis=1) - 1.0).max() <= 1e-9


def test_decode_gradcheck():
    rng = np.random.default_rng(29)
    params = CvaeParams.init(5, 4, 3, rng)
    z = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = T.const(rng.normal(size=(2, 5)))

    def f():
        return T.sum_all(T.mul(decode(z, params).probs, w))

    names = dict(params.named())
    names["z"] = z
    report = T.finite_diff_check(f, names)
    assert report["__max__"] <= 1e-5


def test_rec_loss_onehot_vs_half():
    target = T.const(np.array([1.0, 0.0]))
    recon = Reconstruction(probs=T.const(np.array([0.5, 0.5])))
    assert rec_loss(target, recon).item() == pytest.approx(math.log(2.0), abs=1e-6)


def test_rec_loss_identity_equals_entropy():
    rng = np.random.default_rng(31)
    p = _dirichlet_rows(rng, 4, 6) + 0.01
    p /= p.sum(axis=1, keepdims=True)
    recon = Reconstruction(probs=T.const(p))
    got = rec_loss(T.const(p), recon).item()
    assert got == pytest.approx(distribution_entropy(p), abs=1e-12)


def test_rec_loss_uniform_vs_uniform():
    u = np.full(4, 0.25)
    got = rec_loss(T.const(u), Reconstruction(probs=T.const(u))).item()
    assert got == pytest.approx(math.log(4.0), abs=1e-6)


def test_rec_loss_length_mismatch():
    with pytest.raises(DimensionError):
        rec_loss(T.const(np.full(3, 1 / 3)), Reconstruction(probs=T.const(np.full(4, 0.25))))


def test_rec_loss_lower_bounded_by_entropy():
    rng = np.random.default_rng(37)
    for _ in range(25):
        t = rng.dirichlet(np.ones(5)) + 1e-3
        t /= t.sum()
        q = rng.dirichlet(np.ones(5)) + 1e-3
        q /= q.sum()
        loss = rec_loss(T.const(t), Reconstruction(probs=T.const(q))).item()
        assert loss >= distribution_entropy(t) - 1e-8


def test_kl_zero_at_prior():
    got = kl_loss(T.const(np.zeros((1, 3))), T.const(np.zeros((1, 3)))).item()
    assert abs(got) <= 1e-12


def test_kl_hand_value():
    # d=2, mu=(1,0), logvar=(0,0): 0.5 * (1 + 1 - 0 - 1 + 0 + 1 - 0 - 1) = 0.5
    got = kl_loss(T.const(np.array([[1.0, 0.0]])), T.const(np.zeros((1, 2)))).item()
    assert got == pytest.approx(0.5, abs=1e-12)


def test_kl_nonnegative_and_zero_only_at_prior():
    rng = np.random.default_rng(41)
    for _ in range(50):
        mu = rng.uniform(-2, 2, size=(1, 4))
        lv = rng.uniform(-2, 2, size=(1, 4))
        v = kl_loss(T.const(mu), T.const(lv)).item()
        assert v >= 0.0
        if np.abs(mu).max() > 1e-3 or np.abs(lv).max() > 1e-3:
            assert v > 0.0


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(43)
    d = 8
    for _ in range(20):
        mu = rng.uniform(-1, 1, size=d)
        lv = rng.uniform(-1, 1, size=d)
        closed = kl_loss(T.const(mu[None, :]), T.const(lv[None, :])).item()
        sigma = np.exp(0.5 * lv)
        z = mu + sigma * rng.standard_normal((100_000, d))
        log_q = -0.5 * (((z - mu) / sigma) ** 2 + lv + math.log(2 * math.pi)).sum(axis=1)
        log_p = -0.5 * (z**2 + math.log(2 * math.pi)).sum(axis=1)
        mc = (log_q - log_p).mean()
        assert abs(mc - closed) / abs(closed) <= 0.01


def test_forward_bitwise_reproducible():
    rng = np.random.default_rng(47)
    params = CvaeParams.init(5, 4, 3, rng)
    vp = T.const(_dirichlet_rows(rng, 2, 5))
    sp = T.const(_dirichlet_rows(rng, 2, 5))

    def one(seed):
        hub = np.random.default_rng(seed)
        noise = CvaeNoise.sample(2, params, hub, rng_drop=np.random.default_rng(seed + 1), dropout=0.1)
        out = cvae_forward(vp, sp, params, noise)
        return out.rec.item(), out.kl.item(), out.recon.probs.data.copy()

    r1, k1, p1 = one(123)
    r2, k2, p2 = one(123)
    assert r1 == r2 and k1 == k2 and np.array_equal(p1, p2)


def test_forward_gradcheck_full():
    rng = np.random.default_rng(53)
    params = CvaeParams.init(5, 4, 3, rng)
    vp_logits = T.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    sp_logits = T.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    noise = CvaeNoise.sample(4, params, rng, rng_drop=rng, dropout=0.1)

    def f():
        vp = T.softmax_row(vp_logits)
        sp = T.softmax_row(sp_logits)
        out = cvae_forward(vp, sp, params, noise, block_target_grad=False)
        return T.add(out.rec, T.scale(out.kl, 0.1))

    names = dict(params.named())
    names["vp_logits"] = vp_logits
    names["sp_logits"] = sp_logits
    report = T.finite_diff_check(f, names)
    assert report["__max__"] <= 1e-5


def test_blocked_target_equals_constant_target_gradients():
    # stop-gradient semantics: blocking the target must give the same
    # gradients as passing the target as a literal constant
    rng = np.random.default_rng(59)
    params = CvaeParams.init(4, 3, 2, rng)
    vp_logits = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    sp_logits = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    noise = CvaeNoise.sample(3, params, rng)

    def grads(target_mode):
        for p in list(params.named().values()) + [vp_logits, sp_logits]:
            p.grad = None
        vp = T.softmax_row(vp_logits)
        sp = T.softmax_row(sp_logits)
        if target_mode == "blocked":
            out = cvae_forward(vp, sp, params, noise, block_target_grad=True)
        else:
            out = cvae_forward(vp, T.const(sp.data), params, noise, block_target_grad=False)
        T.backward(T.add(out.rec, out.kl))
        return {k: v.grad.copy() for k, v in params.named().items()}, (
            vp_logits.grad.copy(),
            sp_logits.grad,
        )

    g_blocked, (gv_b, gs_b) = grads("blocked")
    g_const, (gv_c, gs_c) = grads("const")
    for k in g_blocked:
        assert np.array_equal(g_blocked[k], g_const[k])
    assert np.array_equal(gv_b, gv_c)
    assert gs_b is None and gs_c is None
