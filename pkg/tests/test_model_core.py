import logging
import math

import numpy as np
import pytest

from conftest import make_dataset, zero_dataset
from dense_oracles import (
    all_states,
    dense_conditional,
    dense_det,
    dense_log_ml,
    dense_posterior,
    dense_s_gamma,
    slow_odds,
)
from vcwtgs.errors import ConfigError, DataError, NumericalError
from vcwtgs.model_core import (
    Dataset,
    Hyperparams,
    all_conditional_pips,
    conditional_odds,
    conditional_pip,
    covariate_scratch,
    flip,
    log_flip_weights,
    log_marginal_likelihood,
    phi,
    rebuild_state,
)


# -- Dataset / Hyperparams ---------------------------------------------------

def test_dataset_rejects_bad_shapes():
    with pytest.raises(DataError):
        Dataset(np.zeros(3), np.zeros(3))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 2)), np.zeros(0))


def test_dataset_rejects_non_finite():
    X = np.ones((3, 2))
    X[1, 1] = np.nan
    with pytest.raises(DataError):
        Dataset(X, np.ones(3))
    with pytest.raises(DataError):
        Dataset(np.ones((3, 2)), np.array([1.0, np.inf, 0.0]))


def test_dataset_checks_gram():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 3))
    A = X.T @ X
    A[0, 1] += 1e-3
    with pytest.raises(DataError):
        Dataset(X, np.ones(5), A=A)


def test_gram_budget_switches_paths():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((12, 5))
    Y = rng.standard_normal(12)
    full = Dataset.from_arrays(X, Y)
    lazy = Dataset.from_arrays(X, Y, gram_budget=0)
    assert full.A is not None and lazy.A is None
    hp = Hyperparams(h=0.3)
    g = np.array([1, 0, 1, 1, 0], dtype=bool)
    a = log_marginal_likelihood(g, full, hp)
    b = log_marginal_likelihood(g, lazy, hp)
    assert a == pytest.approx(b, rel=1e-12)
    np.testing.assert_allclose(
        all_conditional_pips(rebuild_state(g, full, hp), full, hp),
        all_conditional_pips(rebuild_state(g, lazy, hp), lazy, hp),
        rtol=1e-10,
    )


def test_dataset_is_read_only(small_ds):
    with pytest.raises(ValueError):
        small_ds.X[0, 0] = 1.0


@pytest.mark.parametrize(
    "kw",
    [dict(h=0.0), dict(h=1.0), dict(h=0.5, tau=0.0), dict(h=0.5, nu0=-1), dict(h=0.5, eps=-0.1),
     dict(h=0.5, S=0), dict(h=0.5, T=0), dict(h=0.5, seed=-1)],
)
def test_hyperparams_validation(kw):
    with pytest.raises(ConfigError):
        Hyperparams(**kw)


def test_hyperparams_defaults():
    hp = Hyperparams.default_for(200)
    assert hp.h == pytest.approx(5 / 200)
    assert (hp.tau, hp.nu0, hp.lambda0, hp.eps, hp.S) == (1.0, 1.0, 1.0, 0.0, 200)
    assert Hyperparams.default_for(4).h == 0.5
    with pytest.raises(ConfigError):
        Hyperparams(h=0.5, S=5).check_against(4)


# -- log marginal likelihood -------------------------------------------------

def test_lml_zero_design_independent_of_gamma():
    ds = zero_dataset(7, 4)
    hp = Hyperparams(h=0.5, tau=1.0)
    vals = {log_marginal_likelihood(g, ds, hp) for g in all_states(4)}
    assert max(vals) - min(vals) < 1e-12


def test_lml_empty_model_scalar_formula():
    ds = make_dataset(2, 9, 3)
    hp = Hyperparams(h=0.5, nu0=2.0, lambda0=0.7)
    N, s = ds.N, ds.yty + 2.0 * 0.7
    ref = (-0.5 * N * math.log(2 * math.pi) + math.lgamma((N + 2.0) / 2) + math.log(0.7) - math.lgamma(1.0)
           - (N + 2.0) / 2 * math.log(s / 2))
    assert log_marginal_likelihood(np.zeros(3, bool), ds, hp) == pytest.approx(ref, rel=1e-12)


def test_lml_explicit_three_by_two():
    X = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]])
    Y = np.array([0.3, -1.2, 2.0])
    ds = Dataset.from_arrays(X, Y)
    for tau, nu0, lam in [(1.0, 1.0, 1.0), (0.5, 3.0, 2.0), (2.0, 0.0, 0.0)]:
        hp = Hyperparams(h=0.5, tau=tau, nu0=nu0, lambda0=lam)
        for g in all_states(2):
            ref = dense_log_ml(g, X, Y, tau, nu0, lam)
            assert log_marginal_likelihood(g, ds, hp) == pytest.approx(ref, rel=1e-10)


def test_improper_prior_flag():
    assert Hyperparams(h=0.5, nu0=0.0).improper_prior
    assert Hyperparams(h=0.5, lambda0=0.0).improper_prior
    assert not Hyperparams(h=0.5).improper_prior


def test_lml_large_response_is_finite():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((15, 10))
    Y = rng.standard_normal(15)
    Y *= 1e6 / np.linalg.norm(Y)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.5)
    for g in (np.zeros(10, bool), np.ones(10, bool), rng.random(10) < 0.5):
        assert math.isfinite(log_marginal_likelihood(g, ds, hp))


def test_cholesky_failure_reports_size():
    # A Gram matrix that disagrees with X (accepted when debug checks are off)
    # lets a non-PD system through; the factorization must flag it.
    X = np.eye(3)
    ds = Dataset.__new__(Dataset)
    object.__setattr__(ds, "X", X)
    object.__setattr__(ds, "Y", np.ones(3))
    object.__setattr__(ds, "A", -10 * np.eye(3))
    object.__setattr__(ds, "nu", np.ones(3))
    object.__setattr__(ds, "yty", 3.0)
    object.__setattr__(ds, "adiag", -10 * np.ones(3))
    with pytest.raises(NumericalError) as exc:
        rebuild_state(np.array([1, 1, 0], bool), ds, Hyperparams(h=0.5))
    assert exc.value.size == 2
    assert exc.value.min_pivot < 0
    assert "|gamma|=2" in str(exc.value)


# -- rebuild_state -----------------------------------------------------------

def test_state_empty_and_single():
    ds = make_dataset(4, 10, 5)
    hp = Hyperparams(h=0.5, nu0=2.0, lambda0=0.5)
    st = rebuild_state(np.zeros(5, bool), ds, hp)
    assert st.chol.shape == (0, 0)
    assert st.s_gamma == pytest.approx(ds.yty + 1.0, rel=1e-14)
    j = 3
    g = np.zeros(5, bool)
    g[j] = True
    st = rebuild_state(g, ds, hp)
    ref = ds.yty - ds.nu[j] ** 2 / (ds.A[j, j] + hp.tau) + 1.0
    assert st.s_gamma == pytest.approx(ref, rel=1e-12)
    assert st.chol.shape == (1, 1)


def test_state_dense_oracle_p6():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((14, 6))
    Y = rng.standard_normal(14)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.5, tau=0.8)
    g = np.array([1, 0, 1, 0, 0, 1], bool)
    st = rebuild_state(g, ds, hp)
    assert st.size == 3 and list(st.included) == [0, 2, 5]
    assert st.s_gamma == pytest.approx(dense_s_gamma(g, X, Y, 0.8, 1.0, 1.0), rel=1e-10)
    assert st.s_gamma >= hp.nu0 * hp.lambda0 - 1e-9 * ds.yty
    again = rebuild_state(g, ds, hp)
    np.testing.assert_allclose(again.chol, st.chol, rtol=1e-8)


# -- flip --------------------------------------------------------------------

def test_flip_examples():
    assert flip(np.array([0, 0, 0], bool), 1).tolist() == [False, True, False]
    assert flip(np.array([1, 1, 1], bool), 0).tolist() == [False, True, True]
    with pytest.raises(IndexError):
        flip(np.zeros(3, bool), 3)


def test_double_flip_restores_all_states():
    for g in all_states(4):
        for i in range(4):
            once = flip(g, i)
            assert int(np.sum(once != g)) == 1 and once[i] != g[i]
            assert np.array_equal(flip(once, i), g)


# -- conditional odds / pips -------------------------------------------------

def test_odds_zero_design():
    ds = zero_dataset(6, 4)
    for g in all_states(4):
        st = rebuild_state(g, ds, Hyperparams(h=0.5))
        for i in range(4):
            assert conditional_odds(i, st, ds, Hyperparams(h=0.5)) == 1.0
            assert conditional_pip(i, st, ds, Hyperparams(h=0.5)) == 0.5
        st = rebuild_state(g, ds, Hyperparams(h=0.2))
        for i in range(4):
            assert conditional_odds(i, st, ds, Hyperparams(h=0.2)) == pytest.approx(0.25, rel=1e-14)
            assert conditional_pip(i, st, ds, Hyperparams(h=0.2)) == pytest.approx(0.2, rel=1e-14)


def test_all_pips_zero_design_constant_h():
    ds = zero_dataset(6, 5, seed=2)
    hp = Hyperparams(h=0.3)
    for g in all_states(5)[::3]:
        np.testing.assert_allclose(all_conditional_pips(rebuild_state(g, ds, hp), ds, hp), 0.3, rtol=1e-14)


def test_odds_match_slow_path_every_state():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((5, 3))
    Y = rng.standard_normal(5)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.35, tau=1.3)
    for g in all_states(3):
        st = rebuild_state(g, ds, hp)
        for i in range(3):
            ref = slow_odds(i, g, X, Y, 0.35, tau=1.3)
            assert conditional_odds(i, st, ds, hp) == pytest.approx(ref, rel=1e-8)


def test_conditional_pip_matches_enumeration():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((5, 3))
    Y = X[:, 0] + 0.5 * rng.standard_normal(5)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.4)
    probs, _ = dense_posterior(X, Y, 0.4)
    for g in all_states(3):
        st = rebuild_state(g, ds, hp)
        for i in range(3):
            assert conditional_pip(i, st, ds, hp) == pytest.approx(dense_conditional(i, g, probs), abs=1e-8)


def test_single_covariate_pip_is_marginal():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((8, 1))
    Y = X[:, 0] * 0.7 + rng.standard_normal(8)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.3)
    _, pips = dense_posterior(X, Y, 0.3)
    for g in all_states(1):
        v = all_conditional_pips(rebuild_state(g, ds, hp), ds, hp)
        assert v.shape == (1,)
        assert v[0] == pytest.approx(pips[0], abs=1e-12)


def test_vector_pips_match_scalar_calls():
    ds = make_dataset(14, 20, 4, k=2)
    hp = Hyperparams(h=0.4)
    for g in all_states(4):
        st = rebuild_state(g, ds, hp)
        v = all_conditional_pips(st, ds, hp)
        ref = [conditional_pip(i, st, ds, hp) for i in range(4)]
        np.testing.assert_allclose(v, ref, rtol=0, atol=1e-12)


def test_scratch_identities_against_rebuilt_states():
    rng = np.random.default_rng(15)
    X = rng.standard_normal((12, 6))
    Y = rng.standard_normal(12)
    ds = Dataset.from_arrays(X, Y)
    hp = Hyperparams(h=0.5, tau=0.6)
    for g in all_states(6)[::5]:
        st = rebuild_state(g, ds, hp)
        sc = covariate_scratch(st, ds, hp)
        for i in range(6):
            g0, g1 = g.copy(), g.copy()
            g0[i], g1[i] = False, True
            s0 = rebuild_state(g0, ds, hp).s_gamma
            s1 = rebuild_state(g1, ds, hp).s_gamma
            assert sc.s0[i] == pytest.approx(s0, rel=1e-8)
            assert sc.s1[i] == pytest.approx(s1, rel=1e-8)
            ratio = dense_det(g0, X, 0.6) / dense_det(g1, X, 0.6)
            assert sc.d[i] == pytest.approx(ratio, rel=1e-8)
            assert sc.d[i] > 0
            if not g[i]:
                # S(g1) = S(g0) - d_i (nu_g0^T F a_i - nu_i)^2
                assert s1 == pytest.approx(s0 - sc.d[i] * (sc.proj[i] - ds.nu[i]) ** 2, rel=1e-8)


# -- phi and flip weights ------------------------------------------------------

def test_phi_all_ones_is_half_p():
    ds = make_dataset(16, 25, 5, k=2)
    hp = Hyperparams(h=0.3)
    assert phi(rebuild_state(np.ones(5, bool), ds, hp), ds, hp) == pytest.approx(2.5, rel=1e-14)


def test_phi_zero_design_half_p():
    ds = zero_dataset(6, 4)
    hp = Hyperparams(h=0.5)
    for g in all_states(4):
        assert phi(rebuild_state(g, ds, hp), ds, hp) == pytest.approx(2.0, rel=1e-14)


def test_phi_matches_enumeration_p3():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((9, 3))
    Y = X[:, 1] + rng.standard_normal(9)
    ds = Dataset.from_arrays(X, Y)
    for eps in (0.0, 0.3):
        hp = Hyperparams(h=0.4, eps=eps)
        probs, _ = dense_posterior(X, Y, 0.4)
        for g in all_states(3):
            c = np.array([dense_conditional(j, g, probs) for j in range(3)])
            cur = np.where(g, c, 1 - c)
            ref = float(np.sum(0.5 * (c + eps / 3) / cur))
            assert phi(rebuild_state(g, ds, hp), ds, hp) == pytest.approx(ref, rel=1e-8)


def test_phi_lower_bound():
    ds = make_dataset(18, 20, 6, k=2)
    hp = Hyperparams(h=0.3)
    for g in all_states(6)[::7]:
        assert phi(rebuild_state(g, ds, hp), ds, hp) >= g.sum() / 2 - 1e-12


def test_flip_weight_floor_warns(caplog):
    lo = np.array([800.0, 0.0])
    g = np.array([False, True])
    with caplog.at_level(logging.WARNING, logger="vcwtgs.model_core"):
        lw = log_flip_weights(lo, g)
    assert np.all(np.isfinite(lw))
    assert lw[0] == pytest.approx(math.log(0.5) + 300 * math.log(10), rel=1e-12)
    assert "floored" in caplog.text
