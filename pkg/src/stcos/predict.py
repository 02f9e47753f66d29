"""Change-of-support prediction from stored draws, the hold-out ratio
diagnostic, and basis-configuration grid search."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import basis as bs
from . import geometry as geom
from .errors import ArtifactMismatchError, ConfigurationError, StcosError
from .model import ModelConfig
from .pipeline import BasisConfig, fit_model
from .sampler import PosteriorDraws

RATIO_GUARD = 1e-12


@dataclass(frozen=True)
class TargetQuery:
    """Arbitrary target supports plus the (year, period) requests to
    evaluate on each of them."""

    support: geom.SupportSet
    requests: list[tuple[int, int]]
    mc_points: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.requests:
            raise ConfigurationError("no (year, period) requests")
        for t, ell in self.requests:
            if ell < 1:
                raise ConfigurationError(f"period must be >= 1, got {ell}")


@dataclass(frozen=True)
class PredictionRecord:
    target_id: str
    year: int
    period: int
    mean: float
    sd: float
    lo95: float
    hi95: float


@dataclass(frozen=True)
class SkippedRequest:
    target_id: str
    year: int
    period: int
    reason: str


def predict(draws: PosteriorDraws, query: TargetQuery, system: bs.BasisSystem,
            fine: geom.SupportSet, config_hash: str | None = None,
            ) -> tuple[list[PredictionRecord], list[SkippedRequest]]:
    """Posterior summaries of the latent process on each target support.

    Per draw and target, Y = h(A)'mu + psi'eta + xi*, with xi* drawn fresh
    for unobserved (support, year, period) combinations and reused from the
    fit for observed ones. Requests outside the fitted year span become
    per-record skip entries rather than hard errors.
    """
    if draws.n_draws == 0:
        raise ConfigurationError("no stored draws")
    if config_hash is not None and draws.meta.get("config_hash") not in ("", None) \
            and config_hash != draws.meta["config_hash"]:
        raise ArtifactMismatchError(
            "configuration hash does not match the fitted artifact")
    span = draws.meta.get("year_span")
    key_index = {k if isinstance(k, tuple) else tuple(k): i
                 for i, k in enumerate(draws.keys)}
    sd_xi = np.sqrt(draws.sigma2_xi)

    records: list[PredictionRecord] = []
    skipped: list[SkippedRequest] = []
    h_cache: dict[str, np.ndarray] = {}
    pts_cache: dict[str, np.ndarray] = {}
    rec_idx = 0
    for unit in query.support:
        for t, ell in query.requests:
            rec_idx += 1
            if span is not None and (t - ell + 1 < span[0] or t > span[1]):
                skipped.append(SkippedRequest(
                    unit.id, t, ell,
                    f"period years [{t - ell + 1}, {t}] outside fitted span {span}"))
                continue
            if unit.id not in h_cache:
                if unit.id in fine:
                    e = np.zeros(len(fine))
                    e[fine.index_of(unit.id)] = 1.0
                    h_cache[unit.id] = e
                else:
                    h_cache[unit.id] = geom.overlap_fractions(unit, fine)
            if unit.id not in pts_cache:
                pts_cache[unit.id] = geom.uniform_sample(unit, query.mc_points,
                                                         query.seed)
            psi = bs.aggregate_period(system, unit, t, ell, query.mc_points,
                                      query.seed, pts=pts_cache[unit.id])
            y = draws.mu @ h_cache[unit.id] + draws.eta @ psi
            key = (unit.id, t, ell)
            if key in key_index:
                y = y + draws.xi[:, key_index[key]]
            else:
                rng = np.random.default_rng(
                    np.random.SeedSequence([query.seed, 0xF5E5, rec_idx]))
                y = y + sd_xi * rng.standard_normal(draws.n_draws)
            lo, hi = np.quantile(y, [0.025, 0.975])
            records.append(PredictionRecord(
                target_id=unit.id, year=t, period=ell,
                mean=float(y.mean()), sd=float(y.std(ddof=1)),
                lo95=float(lo), hi95=float(hi)))
    return records, skipped


@dataclass(frozen=True)
class RatioRecord:
    unit_id: str
    year: int
    period: int
    ratio: float
    flagged: bool = False


def ratio_diagnostic(held_out, preds: list[PredictionRecord],
                     ) -> tuple[list[RatioRecord], dict]:
    """Held-out estimate divided by model prediction, per aligned pair.

    Pairs align on (unit, year, period). Predictions with |mean| below the
    guard are flagged and excluded from the summary quantiles.
    """
    pred_index = {(p.target_id, p.year, p.period): p for p in preds}
    ratios: list[RatioRecord] = []
    for d in held_out:
        p = pred_index.get(d.key())
        if p is None:
            continue
        if abs(p.mean) < RATIO_GUARD:
            ratios.append(RatioRecord(d.unit_id, d.year, d.period,
                                      float("nan"), flagged=True))
        else:
            ratios.append(RatioRecord(d.unit_id, d.year, d.period,
                                      d.estimate / p.mean))
    if not ratios:
        raise ConfigurationError("no (unit, year, period) pairs align")
    clean = np.array([r.ratio for r in ratios if not r.flagged])
    summary = {"n": len(ratios), "n_flagged": sum(r.flagged for r in ratios)}
    if clean.size:
        qs = np.quantile(clean, [0.05, 0.25, 0.5, 0.75, 0.95])
        summary.update(q05=float(qs[0]), q25=float(qs[1]), median=float(qs[2]),
                       q75=float(qs[3]), q95=float(qs[4]))
    return ratios, summary


@dataclass(frozen=True)
class GridPoint:
    r_s: int
    w_s_multiplier: float = 1.1
    w_t: float = 1.1


@dataclass
class HoldoutSpec:
    """Data group to withhold: every datum with this (year, period)."""

    year: int
    period: int

    def split(self, data):
        held = [d for d in data if (d.year, d.period) == (self.year, self.period)]
        train = [d for d in data if (d.year, d.period) != (self.year, self.period)]
        if not held:
            raise ConfigurationError(
                f"no data in hold-out group (year={self.year}, period={self.period})")
        if not train:
            raise ConfigurationError("hold-out group contains the whole dataset")
        return train, held


@dataclass
class GridSearchResult:
    best: GridPoint
    table: list[dict] = field(default_factory=list)


def holdout_search(data, fine: geom.SupportSet, grid: list[GridPoint],
                   holdout: HoldoutSpec, config: ModelConfig,
                   basis_cfg: BasisConfig, seed: int,
                   source: geom.SupportSet | None = None) -> GridSearchResult:
    """Fit each grid configuration on the training split, score squared
    error on the held-out group, and return the arg-min configuration.

    Individual fit failures are recorded in the table and skipped; ties
    break toward smaller r_s.
    """
    if not grid:
        raise ConfigurationError("empty grid")
    train, held = holdout.split(list(data))
    lookup = source or fine
    held_units = []
    seen = set()
    for d in held:
        if d.unit_id not in seen:
            seen.add(d.unit_id)
            held_units.append(lookup[lookup.index_of(d.unit_id)])
    targets = geom.SupportSet(held_units)
    table: list[dict] = []
    for g in grid:
        row = {"r_s": g.r_s, "w_s_multiplier": g.w_s_multiplier, "w_t": g.w_t,
               "sse": float("nan"), "n_holdout": len(held), "error": ""}
        try:
            cfg_b = replace(basis_cfg, r_s=g.r_s, w_s=None,
                            w_s_multiplier=g.w_s_multiplier, w_t=g.w_t)
            fit = fit_model(train, fine, config, cfg_b, seed, source=source)
            query = TargetQuery(support=targets,
                                requests=[(holdout.year, holdout.period)],
                                mc_points=config.mc_points, seed=seed)
            preds, _ = predict(fit.draws, query, fit.system, fine)
            pred_index = {(p.target_id, p.year, p.period): p.mean for p in preds}
            sse = 0.0
            for d in held:
                sse += (d.estimate - pred_index[d.key()]) ** 2
            row["sse"] = sse
        except StcosError as exc:
            row["error"] = str(exc)
        table.append(row)
    ok = [r for r in table if not r["error"]]
    if not ok:
        raise ConfigurationError("every grid configuration failed")
    best_row = min(ok, key=lambda r: (r["sse"], r["r_s"]))
    best = GridPoint(r_s=best_row["r_s"], w_s_multiplier=best_row["w_s_multiplier"],
                     w_t=best_row["w_t"])
    return GridSearchResult(best=best, table=table)
