import numpy as np
import pytest

from stcos import synthetic
from stcos.basis import aggregate_period
from stcos.errors import ArtifactMismatchError, ConfigurationError
from stcos.geometry import ArealUnit, SupportSet, overlap_fractions
from stcos.model import ChainConfig, ModelConfig, SurveyDatum
from stcos.pipeline import BasisConfig, fit_model
from stcos.predict import (GridPoint, HoldoutSpec, PredictionRecord,
                           TargetQuery, holdout_search, predict,
                           ratio_diagnostic)
from stcos.sampler import PosteriorDraws


@pytest.fixture(scope="module")
def small_fit():
    ds = synthetic.generate(synthetic.SyntheticConfig(
        grid_side=3, r_s=3, m_t=3, mc_points=200, knot_candidates=500, seed=5))
    cfg = ModelConfig(mc_points=200,
                      chain=ChainConfig(iterations=900, burn_in=300, thin=2,
                                        seed=5))
    fit = fit_model(ds.data, ds.fine, cfg, BasisConfig(
        r_s=3, m_t=3, knot_candidates=500), seed=5)
    return ds, fit


def _doctored_draws(fit, n_draws=50, eta_zero=True, tiny_var=True):
    d = fit.draws
    S = min(n_draws, d.n_draws)
    return PosteriorDraws(
        mu=d.mu[:S].copy(),
        eta=np.zeros_like(d.eta[:S]) if eta_zero else d.eta[:S].copy(),
        xi=np.zeros_like(d.xi[:S]),
        sigma2_xi=np.full(S, 1e-30) if tiny_var else d.sigma2_xi[:S].copy(),
        sigma2_K=np.full(S, 1e-30) if tiny_var else d.sigma2_K[:S].copy(),
        sigma2_mu=np.full(S, 1e-30) if tiny_var else d.sigma2_mu[:S].copy(),
        keys=[], meta=dict(d.meta))


def test_predict_degenerate_passthrough(small_fit):
    ds, fit = small_fit
    draws = _doctored_draws(fit)
    unit = ds.fine[4]
    span = fit.year_span
    query = TargetQuery(support=SupportSet([unit]), requests=[(span[1], 1)],
                        mc_points=100, seed=1)
    recs, skipped = predict(draws, query, fit.system, ds.fine)
    assert not skipped
    expected = draws.mu[:, 4].mean()
    assert abs(recs[0].mean - expected) < 1e-12
    assert recs[0].lo95 <= recs[0].mean <= recs[0].hi95
    assert recs[0].sd >= 0


def test_predict_period_aggregation_linearity(small_fit):
    ds, fit = small_fit
    draws = _doctored_draws(fit, eta_zero=False)
    unit = ds.fine[0]
    t_hi = fit.year_span[1]
    query = TargetQuery(
        support=SupportSet([unit]),
        requests=[(t_hi, 3), (t_hi, 1), (t_hi - 1, 1), (t_hi - 2, 1)],
        mc_points=150, seed=2)
    recs, _ = predict(draws, query, fit.system, ds.fine)
    by_req = {(r.year, r.period): r for r in recs}
    singles = [by_req[(t_hi - k, 1)].mean for k in range(3)]
    # xi* is negligible (1e-30 variances), so the basis-linearity identity
    # makes the 3-year mean the average of the three 1-year means.
    assert abs(by_req[(t_hi, 3)].mean - np.mean(singles)) < 1e-9


def test_predict_reuses_fitted_xi_for_observed_support(small_fit):
    ds, fit = small_fit
    unit = ds.fine[2]
    span = fit.year_span
    key = (unit.id, span[1], 1)
    assert key in [tuple(k) for k in fit.draws.keys]
    query = TargetQuery(support=SupportSet([unit]), requests=[(span[1], 1)],
                        mc_points=200, seed=3)
    recs, _ = predict(fit.draws, query, fit.system, ds.fine)
    idx = [tuple(k) for k in fit.draws.keys].index(key)
    h = np.zeros(len(ds.fine))
    h[2] = 1.0
    psi = aggregate_period(fit.system, unit, span[1], 1, 200, 3)
    y = fit.draws.mu @ h + fit.draws.eta @ psi + fit.draws.xi[:, idx]
    assert abs(recs[0].mean - y.mean()) < 1e-12


def test_predict_out_of_range_years_become_skips(small_fit):
    ds, fit = small_fit
    span = fit.year_span
    query = TargetQuery(support=SupportSet([ds.fine[0]]),
                        requests=[(span[1] + 5, 1), (span[0], 3), (span[1], 1)],
                        mc_points=50, seed=4)
    recs, skipped = predict(fit.draws, query, fit.system, ds.fine)
    assert len(recs) == 1 and len(skipped) == 2
    assert skipped[0].year == span[1] + 5
    # (span[0], 3) reaches back before the fitted span.
    assert skipped[1].period == 3


def test_predict_hash_gate(small_fit):
    ds, fit = small_fit
    fit.draws.meta["config_hash"] = "abc123"
    try:
        query = TargetQuery(support=SupportSet([ds.fine[0]]),
                            requests=[(fit.year_span[1], 1)], mc_points=50, seed=1)
        with pytest.raises(ArtifactMismatchError):
            predict(fit.draws, query, fit.system, ds.fine, config_hash="zzz")
        recs, _ = predict(fit.draws, query, fit.system, ds.fine,
                          config_hash="abc123")
        assert recs
    finally:
        fit.draws.meta["config_hash"] = ""


def test_predict_unobserved_target_geometry(small_fit):
    ds, fit = small_fit
    merged = ArealUnit.from_polygon_coords(
        "merged", [[(0, 0), (2, 0), (2, 1), (0, 1), (0, 0)]])
    span = fit.year_span
    query = TargetQuery(support=SupportSet([merged]), requests=[(span[1], 1)],
                        mc_points=300, seed=6)
    recs, _ = predict(fit.draws, query, fit.system, ds.fine)
    assert recs[0].sd > 0
    h = overlap_fractions(merged, ds.fine)
    assert abs(h.sum() - 1.0) < 1e-6


def test_predict_deterministic(small_fit):
    ds, fit = small_fit
    query = TargetQuery(support=SupportSet([ds.fine[1]]),
                        requests=[(fit.year_span[1], 2)], mc_points=100, seed=9)
    r1, _ = predict(fit.draws, query, fit.system, ds.fine)
    r2, _ = predict(fit.draws, query, fit.system, ds.fine)
    assert r1 == r2


def test_posterior_sd_no_larger_than_prior_predictive(small_fit):
    # Information inequality at the Monte Carlo level on an observed support.
    ds, fit = small_fit
    unit = ds.fine[4]
    span = fit.year_span
    query = TargetQuery(support=SupportSet([unit]), requests=[(span[1], 1)],
                        mc_points=200, seed=7)
    recs, _ = predict(fit.draws, query, fit.system, ds.fine)
    post_sd = recs[0].sd
    h = np.zeros(len(ds.fine))
    h[4] = 1.0
    psi = aggregate_period(fit.system, unit, span[1], 1, 200, 7)
    g = np.random.default_rng(17)
    S = fit.draws.n_draws
    prior_y = np.empty(S)
    for s in range(S):
        mu = np.sqrt(fit.draws.sigma2_mu[s]) * g.standard_normal(len(ds.fine))
        eta = fit.K0.draw(g, fit.draws.sigma2_K[s])
        xi = np.sqrt(fit.draws.sigma2_xi[s]) * g.standard_normal()
        prior_y[s] = h @ mu + psi @ eta + xi
    prior_sd = prior_y.std(ddof=1)
    mc_se = prior_sd / np.sqrt(2 * (S - 1))
    assert post_sd <= prior_sd + 3 * mc_se


def test_nested_targets_aggregate_consistently(small_fit):
    # Y(union) equals the equal-area average of Y(parts) per draw when the
    # fine-scale error is shared; checked on the basis/overlap components.
    ds, fit = small_fit
    parts = [ds.fine[0], ds.fine[1]]  # adjacent cells c0_0, c0_1
    union = ArealUnit.from_polygon_coords(
        "u01", [[(0, 0), (2, 0), (2, 1), (0, 1), (0, 0)]])
    t, ell = fit.year_span[1], 2
    h_union = overlap_fractions(union, ds.fine)
    h_parts = np.mean([overlap_fractions(p, ds.fine) for p in parts], axis=0)
    np.testing.assert_allclose(h_union, h_parts, atol=1e-9)
    mc = 4000
    psi_union = aggregate_period(fit.system, union, t, ell, mc, 11)
    psi_parts = np.mean([aggregate_period(fit.system, p, t, ell, mc, 11)
                         for p in parts], axis=0)
    y_union = fit.draws.mu @ h_union + fit.draws.eta @ psi_union
    y_parts = fit.draws.mu @ h_parts + fit.draws.eta @ psi_parts
    # Tolerance: 3x the Monte Carlo se of the basis contribution difference.
    eta_scale = np.abs(fit.draws.eta).mean(axis=0)
    se = float(eta_scale.sum()) / np.sqrt(mc)
    assert np.abs(y_union - y_parts).max() < 3 * max(se, 1e-6)


# ---------------------------------------------------------------- ratios

def _pred(uid, year, period, mean):
    return PredictionRecord(uid, year, period, mean, 0.1, mean - 0.2, mean + 0.2)


def test_ratio_diagnostic_perfect_prediction():
    held = [SurveyDatum("a", 2000, 1, 5.0, 1.0),
            SurveyDatum("b", 2000, 1, 7.0, 1.0)]
    preds = [_pred("a", 2000, 1, 5.0), _pred("b", 2000, 1, 7.0)]
    ratios, summary = ratio_diagnostic(held, preds)
    assert all(abs(r.ratio - 1.0) < 1e-15 for r in ratios)
    assert summary["median"] == 1.0


def test_ratio_diagnostic_direct_ratio():
    held = [SurveyDatum("a", 2000, 1, 6.0, 1.0)]
    preds = [_pred("a", 2000, 1, 3.0)]
    ratios, _ = ratio_diagnostic(held, preds)
    assert ratios[0].ratio == 2.0


def test_ratio_diagnostic_guard_and_alignment():
    held = [SurveyDatum("a", 2000, 1, 6.0, 1.0),
            SurveyDatum("b", 2000, 1, 2.0, 1.0)]
    preds = [_pred("a", 2000, 1, 0.0), _pred("b", 2000, 1, 4.0)]
    ratios, summary = ratio_diagnostic(held, preds)
    assert ratios[0].flagged and not ratios[1].flagged
    assert summary["n_flagged"] == 1 and summary["median"] == 0.5
    with pytest.raises(ConfigurationError):
        ratio_diagnostic(held, [_pred("zzz", 1999, 5, 1.0)])


# ---------------------------------------------------------------- search

@pytest.fixture(scope="module")
def search_dataset():
    ds = synthetic.generate(synthetic.SyntheticConfig(
        grid_side=3, r_s=3, m_t=3, mc_points=150, knot_candidates=400, seed=13))
    return ds


def _search_cfg():
    return (ModelConfig(mc_points=150,
                        chain=ChainConfig(iterations=400, burn_in=150, thin=1,
                                          seed=3)),
            BasisConfig(r_s=3, m_t=3, knot_candidates=400))


def test_holdout_search_singleton(search_dataset):
    ds = search_dataset
    cfg, bcfg = _search_cfg()
    res = holdout_search(ds.data, ds.fine, [GridPoint(r_s=3)],
                         HoldoutSpec(2006, 1), cfg, bcfg, seed=3)
    assert res.best.r_s == 3
    assert len(res.table) == 1
    assert np.isfinite(res.table[0]["sse"])


def test_holdout_search_duplicate_configs_identical(search_dataset):
    ds = search_dataset
    cfg, bcfg = _search_cfg()
    res = holdout_search(ds.data, ds.fine, [GridPoint(r_s=3), GridPoint(r_s=3)],
                         HoldoutSpec(2006, 1), cfg, bcfg, seed=3)
    assert res.table[0]["sse"] == res.table[1]["sse"]


def test_holdout_search_records_failures_and_continues(search_dataset):
    ds = search_dataset
    cfg, bcfg = _search_cfg()
    # r_s larger than the candidate pool fails for that row only.
    res = holdout_search(ds.data, ds.fine,
                         [GridPoint(r_s=401), GridPoint(r_s=3)],
                         HoldoutSpec(2006, 1), cfg, bcfg, seed=3)
    assert res.table[0]["error"] != "" and res.table[1]["error"] == ""
    assert res.best.r_s == 3


def test_holdout_search_validates(search_dataset):
    ds = search_dataset
    cfg, bcfg = _search_cfg()
    with pytest.raises(ConfigurationError):
        holdout_search(ds.data, ds.fine, [], HoldoutSpec(2006, 1), cfg, bcfg, 3)
    with pytest.raises(ConfigurationError):
        holdout_search(ds.data, ds.fine, [GridPoint(r_s=3)],
                       HoldoutSpec(1900, 7), cfg, bcfg, 3)


def test_holdout_spec_split(search_dataset):
    ds = search_dataset
    train, held = HoldoutSpec(2006, 1).split(ds.data)
    assert all((d.year, d.period) == (2006, 1) for d in held)
    assert len(held) == 9 and len(train) == len(ds.data) - 9
