import csv
import json

import numpy as np
import pytest

from conftest import make_dataset, zero_dataset
from vcwtgs.errors import ConfigError
from vcwtgs.estimators import (
    VARIANCE_CSV_FIELDS,
    normalize_weights,
    rao_blackwell_pip_subset,
    rao_blackwell_pip_vc,
    running_estimates,
    variance_harness,
    write_variance_csv,
    write_variance_json,
)
from vcwtgs.model_core import Hyperparams
from vcwtgs.rng import RngStream
from vcwtgs.samplers import SamplerTrace, run_subset_wtgs, run_vc_wtgs


def synthetic_trace(q, rho_log, cond=None, gamma=None, P=2):
    T = len(q)
    q = np.asarray(q, dtype=np.int8)
    cond = np.full((T, P), 0.5) if cond is None else np.asarray(cond, dtype=float)
    cond = np.where(q[:, None] == 1, cond, np.nan)
    return SamplerTrace(
        sampler="vc",
        S=1,
        gamma0=np.zeros(P, bool),
        gamma=np.zeros((T, P), bool) if gamma is None else np.asarray(gamma, bool),
        rho_tilde_log=np.where(q == 1, rho_log, 0.0),
        q=q,
        flipped=np.where(q == 1, 0, -1),
        cond_pips=cond,
        n_cond=np.where(q == 1, P, 0).astype(np.int32),
    )


def test_normalize_equal_weights():
    tr = synthetic_trace([1, 1, 1, 1], [0.3] * 4)
    np.testing.assert_allclose(normalize_weights(tr), [0.25] * 4, rtol=1e-15)


def test_normalize_inactive_zero():
    tr = synthetic_trace([1, 0, 1, 0], [0.0, 0.0, 0.0, 0.0])
    assert normalize_weights(tr).tolist() == [0.5, 0.0, 0.5, 0.0]


def test_normalize_random_matches_direct():
    rng = np.random.default_rng(0)
    lw = rng.normal(size=50)
    q = (rng.random(50) < 0.6).astype(int)
    q[0] = 1
    tr = synthetic_trace(q, lw)
    w = normalize_weights(tr)
    direct = np.where(q == 1, np.exp(lw), 0.0)
    direct /= direct.sum()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w, direct, rtol=1e-12)


def test_normalize_huge_log_weights():
    tr = synthetic_trace([1, 1], [1000.0, 1000.0 + np.log(3)])
    np.testing.assert_allclose(normalize_weights(tr), [0.25, 0.75], rtol=1e-12)


def test_normalize_errors():
    tr = synthetic_trace([1, 0, 0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        normalize_weights(tr, burn=1)
    with pytest.raises(ValueError):
        normalize_weights(tr, burn=3)


def test_rb_constant_conditionals():
    ds = zero_dataset(8, 4)
    hp = Hyperparams(h=0.3, S=2, T=500)
    est = rao_blackwell_pip_vc(run_vc_wtgs(ds, hp, RngStream(1)))
    np.testing.assert_allclose(est.values, 0.3, rtol=1e-14)
    assert est.weights_used.sum() == pytest.approx(1.0, abs=1e-12)
    tr = run_vc_wtgs(ds, hp, RngStream(1))
    assert np.all(est.weights_used[~tr.active] == 0)
    assert est.t_effective == int(tr.active.sum())


def test_rb_single_active_iteration():
    tr = synthetic_trace([1, 0, 0], [0.7, 0, 0], cond=[[0.1, 0.9]] * 3)
    est = rao_blackwell_pip_vc(tr)
    np.testing.assert_allclose(est.values, [0.1, 0.9])
    assert est.t_effective == 1


def test_rb_burn_renormalizes():
    cond = [[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]
    tr = synthetic_trace([1, 1, 1], [0.0, 0.0, 0.0], cond=cond)
    np.testing.assert_allclose(rao_blackwell_pip_vc(tr, burn=1).values, [0.75, 0.75])


def test_subset_estimator_mixes_indicators():
    T = 3
    cond = np.array([[0.2, np.nan, np.nan], [np.nan, 0.6, np.nan], [0.4, np.nan, np.nan]])
    gamma = np.array([[1, 1, 0], [1, 0, 0], [0, 1, 0]], bool)
    tr = SamplerTrace(sampler="subset", S=1, gamma0=np.zeros(3, bool), gamma=gamma,
                      rho_tilde_log=np.zeros(T), q=np.ones(T, np.int8), flipped=np.zeros(T, int),
                      cond_pips=cond, n_cond=np.ones(T, np.int32), subset=np.array([[0], [1], [0]]),
                      anchors=np.zeros((T, 0), int))
    est = rao_blackwell_pip_subset(tr).values
    # coordinate 2 never in a subset and never included -> 0
    np.testing.assert_allclose(est, [(0.2 + 1 + 0.4) / 3, (1 + 0.6 + 1) / 3, 0.0])


def test_subset_estimator_requires_subsets():
    tr = synthetic_trace([1, 1], [0.0, 0.0])
    with pytest.raises(ValueError):
        rao_blackwell_pip_subset(tr)


def test_subset_estimator_full_subsets_equals_rb():
    ds = make_dataset(2, 30, 5, k=2)
    hp = Hyperparams(h=0.3, S=5, T=2000)
    tr = run_subset_wtgs(ds, hp, 0, 100, RngStream(2))
    a = rao_blackwell_pip_subset(tr).values
    b = rao_blackwell_pip_vc(tr, burn=100).values
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_estimates_in_unit_interval():
    ds = make_dataset(3, 30, 6, k=3, scale=2.0)
    for tr in (run_vc_wtgs(ds, Hyperparams(h=0.5, S=2, T=3000), RngStream(0)),
               run_subset_wtgs(ds, Hyperparams(h=0.5, S=2, T=3000), 1, 500, RngStream(0))):
        est = (rao_blackwell_pip_subset(tr) if tr.subset is not None else rao_blackwell_pip_vc(tr)).values
        assert np.all((est >= 0) & (est <= 1))


def test_running_estimates_end_at_final_estimate():
    ds = make_dataset(4, 30, 5, k=2)
    tr = run_vc_wtgs(ds, Hyperparams(h=0.3, S=2, T=3000), RngStream(3))
    run = running_estimates(tr, [0, 2, 4], burn=100)
    assert np.all(np.isnan(run[:100]))
    np.testing.assert_allclose(run[-1], rao_blackwell_pip_vc(tr, 100).values[[0, 2, 4]], rtol=1e-10)
    tr = run_subset_wtgs(ds, Hyperparams(h=0.3, S=2, T=3000), 1, 500, RngStream(3))
    run = running_estimates(tr, range(5))
    np.testing.assert_allclose(run[-1], rao_blackwell_pip_subset(tr).values, rtol=1e-10)


def test_consistency_error_shrinks_with_t():
    from dense_oracles import dense_posterior

    ds = make_dataset(5, 30, 6, k=2)
    hp = Hyperparams(h=0.3, S=3, T=100_000)
    _, pips = dense_posterior(ds.X, ds.Y, 0.3)
    err_short, err_long = [], []
    for seed in range(5):
        tr = run_vc_wtgs(ds, hp, RngStream(seed))
        long = rao_blackwell_pip_vc(tr).values
        short_tr = run_vc_wtgs(ds, Hyperparams(h=0.3, S=3, T=10_000), RngStream(seed))
        short = rao_blackwell_pip_vc(short_tr).values
        err_long.append(np.max(np.abs(long - pips)))
        err_short.append(np.max(np.abs(short - pips)))
    assert np.median(err_long) < np.median(err_short)


# -- variance harness ----------------------------------------------------------

def test_harness_zero_design_zero_variance():
    ds = zero_dataset(10, 4)
    hp = Hyperparams(h=0.3)
    # the subset estimator reads raw indicators outside S, so only S = P is constant there
    for sampler, grid in (("vc", [1, 2, 4]), ("wtgs", [4]), ("subset", [4])):
        reps = variance_harness(ds, hp, grid, R=3, T=300, base_seed=0, sampler=sampler)
        for r in reps:
            assert np.all(r.variance < 1e-25)
            np.testing.assert_allclose(r.mean, 0.3, rtol=1e-12)


def test_harness_seed_guards():
    ds = make_dataset(6, 20, 4)
    hp = Hyperparams(h=0.3)
    with pytest.raises(ConfigError):
        variance_harness(ds, hp, [2], R=2, T=100, base_seed=0, seeds=[5, 5])
    with pytest.raises(ConfigError):
        variance_harness(ds, hp, [2], R=1, T=100, base_seed=0)
    with pytest.raises(ConfigError):
        variance_harness(ds, hp, [2], R=3, T=100, base_seed=0, seeds=[1, 2])


def test_harness_reproducible_and_parallel_matches_serial():
    ds = make_dataset(7, 25, 5, k=2)
    hp = Hyperparams(h=0.3)
    a = variance_harness(ds, hp, [2, 5], R=3, T=500, base_seed=4)
    b = variance_harness(ds, hp, [2, 5], R=3, T=500, base_seed=4, threads=2)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.estimates, rb.estimates)
        assert np.all(ra.variance >= 0)
        np.testing.assert_allclose(ra.variance, np.var(ra.estimates, axis=0, ddof=1))


def test_harness_replicate_streams():
    ds = make_dataset(8, 25, 4, k=1)
    hp = Hyperparams(h=0.3)
    rep = variance_harness(ds, hp, [2], R=2, T=400, base_seed=9, table=False)[0]
    direct = rao_blackwell_pip_vc(run_vc_wtgs(ds, Hyperparams(h=0.3, S=2, T=400), RngStream(9, 1))).values
    assert np.array_equal(rep.estimates[1], direct)


def test_harness_failure_names_replicate():
    ds = make_dataset(9, 25, 4)
    with pytest.raises(RuntimeError, match="replicate 0"):
        variance_harness(ds, Hyperparams(h=0.3), [2], R=2, T=100, base_seed=0, sampler="nope")


def test_variance_csv_and_json(tmp_path):
    ds = make_dataset(10, 25, 3, k=1)
    reps = variance_harness(ds, Hyperparams(h=0.3), [1, 3], R=2, T=200, base_seed=3)
    write_variance_csv(reps, tmp_path / "v.csv")
    write_variance_json(reps, tmp_path / "v.json")
    rows = list(csv.DictReader(open(tmp_path / "v.csv")))
    assert tuple(rows[0].keys()) == VARIANCE_CSV_FIELDS
    assert len(rows) == 6
    assert rows[4]["S"] == "3" and rows[4]["covariate"] == "1"
    assert float(rows[4]["variance"]) == reps[1].variance[1]
    js = json.load(open(tmp_path / "v.json"))
    assert len(js) == 6 and js[0]["seed0"] == 3
