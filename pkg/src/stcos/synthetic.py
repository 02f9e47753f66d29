"""Synthetic-data harness: draws a ground-truth process from the model on a
grid of square cells and emits survey estimates with injected sampling noise.

Used by the CLI `simulate` command and by the recovery / hold-out test
fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import basis as bs
from . import geometry as geom
from .errors import ConfigurationError
from .model import SurveyDatum
from .pipeline import BasisConfig, ModelConfig, build_basis_system, build_random_effects_cov, year_span


class PeriodGroup(NamedTuple):
    year: int
    period: int


def recovery_layout(start_year: int = 2001) -> list[PeriodGroup]:
    """12 period groups over a 6-year span: 1-year estimates every year,
    3-year once fully inside the span, 5-year for the last two years.
    On a 25-cell grid this yields N = 300."""
    y0 = start_year
    groups = [PeriodGroup(y0 + k, 1) for k in range(6)]
    groups += [PeriodGroup(y0 + k, 3) for k in range(2, 6)]
    groups += [PeriodGroup(y0 + k, 5) for k in range(4, 6)]
    return groups


def survey_layout(start_year: int = 2006) -> list[PeriodGroup]:
    """The 19-group release pattern: 1-year for 8 consecutive years, 3-year
    for the middle 6, 5-year for the final 5."""
    y0 = start_year
    groups = [PeriodGroup(y0 + k, 1) for k in range(8)]
    groups += [PeriodGroup(y0 + k, 3) for k in range(1, 7)]
    groups += [PeriodGroup(y0 + k, 5) for k in range(3, 8)]
    return groups


def grid_supports(side: int, cell: float = 1.0) -> geom.SupportSet:
    """side x side grid of square cells with ids 'c<row>_<col>'."""
    units = []
    for i in range(side):
        for j in range(side):
            x0, y0 = j * cell, i * cell
            ring = [(x0, y0), (x0 + cell, y0), (x0 + cell, y0 + cell),
                    (x0, y0 + cell), (x0, y0)]
            units.append(geom.ArealUnit.from_polygon_coords(f"c{i}_{j}", [ring]))
    return geom.SupportSet(units, disjoint=True)


def supports_to_geojson(supports: geom.SupportSet) -> dict:
    import shapely.geometry

    features = []
    for u in supports:
        features.append({
            "type": "Feature",
            "properties": {"id": u.id},
            "geometry": shapely.geometry.mapping(u.geom),
        })
    return {"type": "FeatureCollection", "features": features}


@dataclass
class SyntheticConfig:
    grid_side: int = 5
    layout: list[PeriodGroup] = field(default_factory=recovery_layout)
    r_s: int = 5
    m_t: int | None = 4
    w_t: float = 1.1
    knot_candidates: int = 2000
    mc_points: int = 300
    sigma2_xi: float = 0.25
    sigma2_K: float = 2.0
    sigma2_mu: float = 4.0
    mu_offset: float = 0.0
    sd_lo: float = 0.4
    sd_hi: float = 0.8
    rho: float = 0.9
    propagator_scale: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.sd_lo <= 0 or self.sd_hi < self.sd_lo:
            raise ConfigurationError("survey sds must satisfy 0 < sd_lo <= sd_hi")
        for name in ("sigma2_xi", "sigma2_K", "sigma2_mu"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class SyntheticDataset:
    fine: geom.SupportSet
    data: list[SurveyDatum]
    system: bs.BasisSystem
    mu_true: np.ndarray
    eta_true: np.ndarray
    latent: dict  # key -> true Y value per datum
    config: SyntheticConfig


def generate(cfg: SyntheticConfig) -> SyntheticDataset:
    """Draw a truth from the process model and wrap it in survey estimates.

    The basis system and K_0 are built exactly the way a fit would build
    them (same seed), so a fit on the output is correctly specified.
    """
    fine = grid_supports(cfg.grid_side)
    basis_cfg = BasisConfig(r_s=cfg.r_s, m_t=cfg.m_t, w_t=cfg.w_t,
                            knot_candidates=cfg.knot_candidates)
    system = build_basis_system(cfg.layout, fine, basis_cfg, cfg.seed)
    span = year_span(cfg.layout)
    model_cfg = ModelConfig(rho=cfg.rho, propagator_scale=cfg.propagator_scale,
                            mc_points=cfg.mc_points)
    _, _, _, K0 = build_random_effects_cov(system, fine, span, model_cfg,
                                           cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x517D]))
    n_B = len(fine)
    mu = cfg.mu_offset + np.sqrt(cfg.sigma2_mu) * rng.standard_normal(n_B)
    eta = K0.draw(rng, cfg.sigma2_K)

    years = np.arange(span[0], span[1] + 1)
    data: list[SurveyDatum] = []
    latent: dict[tuple[str, int, int], float] = {}
    for i, unit in enumerate(fine):
        yearly = bs.areal_basis_by_year(system, unit, years, cfg.mc_points,
                                        cfg.seed)
        for t, ell in cfg.layout:
            rows = yearly[(years >= t - ell + 1) & (years <= t)]
            psi = rows.mean(axis=0)
            xi = np.sqrt(cfg.sigma2_xi) * rng.standard_normal()
            y = mu[i] + float(psi @ eta) + xi
            sd = rng.uniform(cfg.sd_lo, cfg.sd_hi)
            z = y + sd * rng.standard_normal()
            data.append(SurveyDatum(unit_id=unit.id, year=t, period=ell,
                                    estimate=z, sd=sd))
            latent[(unit.id, t, ell)] = y
    return SyntheticDataset(fine=fine, data=data, system=system, mu_true=mu,
                            eta_true=eta, latent=latent, config=cfg)


def write_dataset(ds: SyntheticDataset, out_dir):
    """Write supports.geojson, estimates.csv, truth.csv into out_dir."""
    import csv
    import json
    from pathlib import Path

    from .io import fmt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "supports.geojson").write_text(
        json.dumps(supports_to_geojson(ds.fine), sort_keys=True) + "\n",
        encoding="utf-8")
    with open(out / "estimates.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["unit_id", "year", "period", "estimate", "sd"])
        for d in ds.data:
            w.writerow([d.unit_id, d.year, d.period, fmt(d.estimate), fmt(d.sd)])
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["unit_id", "year", "period", "latent", "mu_true"])
        mu_by_id = {u.id: ds.mu_true[i] for i, u in enumerate(ds.fine)}
        for d in ds.data:
            w.writerow([d.unit_id, d.year, d.period,
                        fmt(ds.latent[d.key()]), fmt(mu_by_id[d.unit_id])])
    return {"supports": str(out / "supports.geojson"),
            "estimates": str(out / "estimates.csv"),
            "truth": str(out / "truth.csv")}
