import math
import warnings

import numpy as np
import pandas as pd
import pytest

from hazdid.cox import (CoxFit, baseline_cumhaz, cumhaz_at, fit_cox, partial_loglik, ratt_from_fit,
                        robust_vcov, score_residuals)
from hazdid.errors import EstimationError, InputError, SingularDesignError


def frame(start, stop, event, x=None, w=None, stratum=None, cluster=None, **extra):
    n = len(stop)
    df = pd.DataFrame({
        "subject_id": np.arange(n), "start": np.asarray(start, float),
        "stop": np.asarray(stop, float), "event": np.asarray(event, bool),
        "weight": np.ones(n) if w is None else np.asarray(w, float),
        "stratum": np.zeros(n, int) if stratum is None else stratum,
        "cluster_id": np.arange(n) if cluster is None else cluster,
    })
    if x is not None:
        df["x"] = x
    for k, v in extra.items():
        df[k] = v
    return df


def random_frame(rng, n=120, strata=3):
    start = rng.integers(0, 8, n).astype(float)
    return frame(start, start + rng.integers(1, 6, n), rng.random(n) < 0.4,
                 x=rng.normal(size=n), w=rng.uniform(0.5, 2, n),
                 stratum=rng.integers(0, strata, n), cluster=rng.integers(0, 20, n),
                 z=rng.integers(0, 2, n))


def test_symmetric_tie_gives_zero():
    df = frame([0, 0], [5, 5], [1, 1], x=[1.0, 0.0])
    fit = fit_cox(df, ["x"], ties="breslow")
    assert fit.converged
    assert abs(fit.beta[0]) < 1e-12


def test_loglik_at_zero_closed_form():
    df = frame([0, 0, 0], [1, 2, 3], [1, 1, 1], x=[0.3, -1.0, 2.0])
    for ties in ("efron", "breslow"):
        ll = partial_loglik(df, [0.0], ["x"], ties)["loglik"]
        assert ll == pytest.approx(-(math.log(3) + math.log(2) + math.log(1)), abs=1e-14)


def _hand_loglik(b, x, stop, event):
    ll = 0.0
    for i in np.flatnonzero(event):
        risk = stop >= stop[i]
        ll += b * x[i] - math.log(np.sum(np.exp(b * x[risk])))
    return ll


def test_six_subject_grid_search():
    x = np.array([1, 0, 1, 0, 1, 0], float)
    stop = np.array([2, 3, 5, 7, 11, 13], float)
    event = np.array([1, 1, 0, 1, 1, 0], bool)
    df = frame(np.zeros(6), stop, event, x=x)
    f = np.vectorize(lambda b: _hand_loglik(b, x, stop, event))
    coarse = np.arange(-10, 10 + 1e-9, 1e-3)
    b0 = coarse[np.argmax(f(coarse))]
    fine = b0 + np.arange(-2000, 2001) * 1e-6
    b_grid = fine[np.argmax(f(fine))]
    fit = fit_cox(df, ["x"])
    assert abs(fit.beta[0] - b_grid) <= 1e-6


def test_efron_differs_from_breslow_with_ties():
    df = frame([0] * 6, [2, 2, 2, 4, 4, 5], [1, 1, 1, 1, 0, 1], x=[0.3, -1.2, 0.8, 0.1, 1.5, -0.4])
    a = fit_cox(df, ["x"], ties="efron")
    b = fit_cox(df, ["x"], ties="breslow")
    assert a.beta[0] != pytest.approx(b.beta[0], abs=1e-6)


def test_collapsed_and_raw_agree():
    from hazdid.cox import _evaluate, _prepare_for
    rng = np.random.default_rng(4)
    df = random_frame(rng)
    df["x"] = np.round(df["x"])  # many identical rows
    beta = np.array([0.4, -0.3])
    for ties in ("efron", "breslow"):
        a = _evaluate(_prepare_for(df, ["x", "z"], ties, collapse=True)[3], beta)
        b = _evaluate(_prepare_for(df, ["x", "z"], ties, collapse=False)[3], beta)
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=1e-12)


def test_singular_design_names_term():
    rng = np.random.default_rng(5)
    df = random_frame(rng)
    df["x2"] = 2 * df["x"]
    with pytest.raises(SingularDesignError) as err:
        fit_cox(df, ["x", "x2"])
    assert err.value.term == "x2"


def test_constant_within_strata_is_singular():
    rng = np.random.default_rng(6)
    df = random_frame(rng)
    df["s"] = df["stratum"] * 1.0
    with pytest.raises(SingularDesignError):
        fit_cox(df, ["x", "s"])


def test_monotone_likelihood_reported():
    df = frame([0] * 6, [1, 2, 3, 4, 5, 6], [1, 1, 1, 0, 0, 0], x=[1, 1, 1, 0, 0, 0])
    with pytest.warns(UserWarning, match="monotone"):
        fit = fit_cox(df, ["x"])
    assert not fit.converged
    assert "x" in fit.message


def test_stratum_without_events_dropped_with_warning():
    rng = np.random.default_rng(7)
    df = random_frame(rng)
    extra = frame([0, 0], [3, 4], [0, 0], x=[0.1, 0.2], stratum=[99, 99], cluster=[50, 51], z=[0, 1])
    with pytest.warns(UserWarning, match="without events"):
        fit = fit_cox(pd.concat([df, extra], ignore_index=True), ["x"])
    assert fit.dropped_strata == [99]
    ref = fit_cox(df, ["x"])
    np.testing.assert_allclose(fit.beta, ref.beta, atol=1e-12)


def test_bad_inputs():
    df = frame([0, 1], [1, 1], [1, 0], x=[0.0, 1.0])
    with pytest.raises(InputError):
        fit_cox(df, ["x"])
    df = frame([0, 0], [1, 2], [1, 0], x=[0.0, 1.0], w=[1.0, -1.0])
    with pytest.raises(InputError):
        fit_cox(df, ["x"])
    with pytest.raises(EstimationError), pytest.warns(UserWarning):
        fit_cox(frame([0, 0], [1, 2], [0, 0], x=[0.0, 1.0]), ["x"])


def test_own_cluster_equals_unclustered_sandwich():
    rng = np.random.default_rng(8)
    df = random_frame(rng).assign(cluster_id=lambda d: np.arange(len(d)))
    fit = fit_cox(df, ["x", "z"])
    s = score_residuals(fit, df)
    H = -partial_loglik(df, fit.beta, ["x", "z"])["hessian"]
    B = np.linalg.inv(H)
    np.testing.assert_allclose(fit.vcov_robust, B @ (s.T @ s) @ B, rtol=1e-10)
    np.testing.assert_allclose(robust_vcov(fit, df, cluster=None), fit.vcov_robust, rtol=1e-12)


def test_score_residuals_sum_to_score():
    rng = np.random.default_rng(9)
    df = random_frame(rng)
    beta = np.array([0.3, -0.2])
    fit = CoxFit(terms=["x", "z"], beta=beta)
    s = score_residuals(fit, df)
    np.testing.assert_allclose(s.sum(axis=0), partial_loglik(df, beta, ["x", "z"])["score"],
                               atol=1e-10)


def test_duplicate_and_halve_keeps_robust_vcov():
    rng = np.random.default_rng(10)
    df = random_frame(rng)
    # exact for Breslow; the Efron correction depends on the number of tied rows
    a = fit_cox(df, ["x", "z"], ties="breslow")
    dup = pd.concat([df, df], ignore_index=True)
    dup["weight"] /= 2
    b = fit_cox(dup, ["x", "z"], ties="breslow")
    np.testing.assert_allclose(b.beta, a.beta, atol=1e-10)
    np.testing.assert_allclose(b.vcov_robust, a.vcov_robust, rtol=1e-8)


def test_merged_clusters_brute_force():
    rng = np.random.default_rng(11)
    df = random_frame(rng)
    fit = fit_cox(df, ["x", "z"])
    ids = np.unique(df["cluster_id"])
    perm = rng.permutation(ids)
    merge = {c: int(np.flatnonzero(perm == c)[0]) // 2 for c in ids}
    merged = df.assign(cluster_id=df["cluster_id"].map(merge))
    s = score_residuals(fit, merged)
    sums = {}
    for c, row in zip(merged["cluster_id"], s):
        sums[c] = sums.get(c, 0) + row
    meat = sum(np.outer(v, v) for v in sums.values())
    B = np.linalg.inv(-partial_loglik(df, fit.beta, ["x", "z"])["hessian"])
    np.testing.assert_allclose(robust_vcov(fit, merged), B @ meat @ B, rtol=1e-12)


def test_single_cluster_robust_unavailable():
    rng = np.random.default_rng(12)
    df = random_frame(rng).assign(cluster_id=1)
    fit = fit_cox(df, ["x"])
    assert fit.vcov_robust is None
    with pytest.raises(EstimationError):
        robust_vcov(fit, df)


def test_breslow_hand_case():
    df = frame([0, 0, 0, 0], [40, 45, 50, 55], [1, 0, 1, 0], x=[0.0, 1.0, 0.0, 1.0])
    fit = CoxFit(terms=["x"], beta=np.zeros(1))
    base = baseline_cumhaz(fit, df)
    assert base["age"].tolist() == [40.0, 50.0]
    assert base["cumhaz"].tolist() == [0.25, 0.25 + 0.5]
    assert cumhaz_at(base, 0, [39, 40, 49.9, 50, 80]).tolist() == [0, 0.25, 0.25, 0.75, 0.75]


def test_baseline_monotone():
    rng = np.random.default_rng(13)
    for _ in range(20):
        df = random_frame(rng)
        base = fit_cox(df, ["x", "z"]).baseline
        for _, sub in base.groupby("stratum"):
            assert (np.diff(sub["cumhaz"]) >= 0).all()
            assert sub["cumhaz"].iloc[0] > 0
            assert cumhaz_at(base, sub["stratum"].iloc[0], [sub["age"].min() - 1e-9])[0] == 0


def _fixed_fit(beta, se):
    return CoxFit(terms=["treat_x_pilot"], beta=np.array([beta]),
                  vcov_model=np.array([[se ** 2]]), vcov_robust=np.array([[se ** 2]]))


def test_ratt_examples():
    est = ratt_from_fit(_fixed_fit(math.log(0.771), 0.087 / 0.771))
    assert est.hazard_ratio == pytest.approx(0.771, rel=1e-12)
    assert est.percent_change == pytest.approx(-22.9, abs=1e-9)
    assert est.se == pytest.approx(0.087, rel=1e-12)
    assert est.ci_low < 0.771 < est.ci_high
    zero = ratt_from_fit(_fixed_fit(0.0, 0.1))
    assert zero.hazard_ratio == 1.0 and zero.percent_change == 0.0
    point = ratt_from_fit(_fixed_fit(math.log(2), 0.0))
    assert point.ci_low == pytest.approx(2.0) and point.ci_high == pytest.approx(2.0)


def test_ratt_needs_term():
    with pytest.raises(EstimationError):
        ratt_from_fit(CoxFit(terms=["x"], beta=np.zeros(1), vcov_model=np.eye(1)))


def test_to_dict_keys():
    rng = np.random.default_rng(14)
    d = fit_cox(random_frame(rng), ["x"]).to_dict()
    assert set(d["hazard_ratios"]) == {"x"}
    assert d["converged"] is True
