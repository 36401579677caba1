import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import hand_set, randomize, tiny_config
from dlgfa import autodiff as ad
from dlgfa.autodiff import Tensor
from dlgfa.errors import DimensionError
from dlgfa.model import DlgfaModel, GaussianParams
from dlgfa.objective import (
    HALF_LOG_2PI,
    collapsed_elbo,
    elbo_terms,
    group_lasso_penalty,
    kl_diag_gaussian,
    logpdf_diag_gaussian,
)
from oracle import oracle_elbo


def gp(mean, scale):
    return GaussianParams(Tensor(np.asarray(mean, float)), Tensor(np.asarray(scale, float)))


def test_kl_identical_is_zero():
    q = gp([0.3, -1.0], [0.5, 2.0])
    assert float(kl_diag_gaussian(q, q)) == 0.0


def test_kl_unit_shift():
    assert float(kl_diag_gaussian(gp([1.0], [1.0]), gp([0.0], [1.0]))) == pytest.approx(0.5, abs=1e-12)


def _kl_quad_1d(mq, sq, mp, sp):
    qd = stats.norm(mq, sq)

    def f(x):
        return qd.pdf(x) * (qd.logpdf(x) - stats.norm(mp, sp).logpdf(x))

    val, _ = integrate.quad(f, mq - 12 * sq, mq + 12 * sq, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@pytest.mark.parametrize("seed", range(3))
def test_kl_random_5d_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    mq, mp = rng.normal(size=5), rng.normal(size=5)
    sq, sp = np.exp(rng.normal(0, 0.4, 5)), np.exp(rng.normal(0, 0.4, 5))
    expected = sum(_kl_quad_1d(*args) for args in zip(mq, sq, mp, sp))
    assert float(kl_diag_gaussian(gp(mq, sq), gp(mp, sp))) == pytest.approx(expected, abs=1e-8)


def test_kl_shape_mismatch():
    with pytest.raises(DimensionError):
        kl_diag_gaussian(gp([0.0], [1.0]), gp([0.0, 0.0], [1.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_kl_non_negative(seed):
    rng = np.random.default_rng(seed)
    q = gp(rng.normal(size=4), np.exp(rng.normal(size=4)))
    p = gp(rng.normal(size=4), np.exp(rng.normal(size=4)))
    assert float(kl_diag_gaussian(q, p)) >= 0.0


def test_logpdf_at_mean_unit_scale():
    assert float(logpdf_diag_gaussian([0.7], gp([0.7], [1.0]))) == pytest.approx(-0.9189385332046727, abs=1e-12)


def test_logpdf_one_sigma_away():
    mu, sd = np.array([0.0, 1.0, -2.0]), np.array([0.5, 1.0, 3.0])
    val = float(logpdf_diag_gaussian(mu + sd, gp(mu, sd)))
    assert val == pytest.approx(np.sum(-HALF_LOG_2PI - np.log(sd) - 0.5), abs=1e-12)


def test_logpdf_random_10d_matches_scipy():
    rng = np.random.default_rng(4)
    mu, sd, x = rng.normal(size=10), np.exp(rng.normal(size=10)), rng.normal(size=10)
    expected = float(np.sum(stats.norm(mu, sd).logpdf(x)))
    assert float(logpdf_diag_gaussian(x, gp(mu, sd))) == pytest.approx(expected, abs=1e-12)


def test_penalty_examples():
    assert group_lasso_penalty(np.zeros((2, 3, 4, 5)), 5.0) == 0.0
    W = np.zeros((1, 1, 2, 1))
    W[0, 0, :, 0] = [3.0, 4.0]
    assert group_lasso_penalty(W, 2.0) == 10.0
    with pytest.raises(ValueError):
        group_lasso_penalty(W, -1.0)


def test_penalty_random_matches_loop():
    W = np.random.default_rng(0).normal(size=(3, 2, 4, 5))
    expected = sum(
        math.sqrt(sum(W[t, g, p, j] ** 2 for p in range(4))) for t in range(3) for g in range(2) for j in range(5)
    )
    assert group_lasso_penalty(W, 0.7) == pytest.approx(0.7 * expected, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(0, 100))
def test_penalty_positively_homogeneous(seed, c):
    W = np.random.default_rng(seed).normal(size=(2, 2, 3, 3))
    assert group_lasso_penalty(c * W, 1.3) == pytest.approx(c * group_lasso_penalty(W, 1.3), rel=1e-12, abs=1e-12)


def test_collapsed_elbo_zero_model():
    cfg = tiny_config()
    m = DlgfaModel(cfg).zero_()
    out = collapsed_elbo(np.zeros((2, 3, 5)), m, np.zeros((2, 3, 3)), lam=5.0)
    assert out.kl == 0.0
    assert out.penalty == 0.0
    assert out.recon_loglik == pytest.approx(2 * 3 * 5 * -HALF_LOG_2PI, abs=1e-12)


@pytest.mark.parametrize("variant", [{}, {"encoder_hidden": 4}, {"static_mode": True}])
def test_collapsed_elbo_matches_loop_oracle(variant):
    cfg = tiny_config(**variant)
    m = hand_set(DlgfaModel(cfg))
    rng = np.random.default_rng(0)
    x, noise = rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 3, 3))
    recon, kl, pen, _ = oracle_elbo(m.params.state_dict(), cfg, x, noise, lam=2.5)
    out = collapsed_elbo(x, m, noise, lam=2.5)
    assert out.recon_loglik == pytest.approx(recon, abs=1e-10)
    assert out.kl == pytest.approx(kl, abs=1e-10)
    assert out.penalty == pytest.approx(pen, abs=1e-10)
    assert out.objective == pytest.approx(recon - kl - pen, abs=1e-10)


def test_penalty_component_is_group_lasso_exactly():
    m = randomize(DlgfaModel(tiny_config()), 0)
    out = collapsed_elbo(np.zeros((2, 1, 5)), m, np.zeros((2, 1, 3)), lam=3.0)
    assert out.penalty == group_lasso_penalty(m.loadings, 3.0)


def test_additive_over_timesteps():
    cfg = tiny_config(T=4)
    m = randomize(DlgfaModel(cfg), 9)
    rng = np.random.default_rng(9)
    x, noise = rng.normal(size=(4, 2, 5)), rng.normal(size=(4, 2, 3))
    full = elbo_terms(x, m, noise)
    prev = 0.0
    for t in range(1, 5):
        prefix = elbo_terms(x[:t], m, noise[:t])
        smooth = float(prefix.smooth)
        step = full.step_recon[t - 1] - full.step_kl[t - 1]
        assert smooth - prev == pytest.approx(step, abs=1e-10)
        prev = smooth


def test_per_step_terms_match_oracle():
    cfg = tiny_config(T=3)
    m = randomize(DlgfaModel(cfg), 4)
    rng = np.random.default_rng(4)
    x, noise = rng.normal(size=(3, 2, 5)), rng.normal(size=(3, 2, 3))
    _, _, _, per_step = oracle_elbo(m.params.state_dict(), cfg, x, noise, lam=0.0)
    terms = elbo_terms(x, m, noise)
    for t in range(3):
        assert terms.step_recon[t] == pytest.approx(per_step[t][0], abs=1e-10)
        assert terms.step_kl[t] == pytest.approx(per_step[t][1], abs=1e-10)


def test_weight_decay_prior():
    m = randomize(DlgfaModel(tiny_config()), 2)
    x, noise = np.zeros((2, 1, 5)), np.zeros((2, 1, 3))
    base = collapsed_elbo(x, m, noise)
    wd = collapsed_elbo(x, m, noise, weight_decay=0.1)
    expected = -0.05 * sum(np.sum(m.params[n].data ** 2) for n in m.network_param_names())
    assert wd.log_prior == pytest.approx(expected, rel=1e-13)
    assert wd.smooth == pytest.approx(base.smooth + expected, rel=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_smooth_objective_gradients_away_from_zero_columns(seed):
    m = randomize(DlgfaModel(tiny_config()), seed)
    rng = np.random.default_rng(seed)
    x, noise = rng.normal(size=(2, 2, 5)), rng.normal(size=(2, 2, 3))
    assert ad.finite_diff_check(lambda: elbo_terms(x, m, noise).smooth, m.params) < 1e-4


def test_objective_per_element():
    m = DlgfaModel(tiny_config()).zero_()
    out = collapsed_elbo(np.zeros((2, 3, 5)), m, np.zeros((2, 3, 3)))
    assert out.n_elements == 30
    assert out.objective_per_element == pytest.approx(-HALF_LOG_2PI, abs=1e-12)

