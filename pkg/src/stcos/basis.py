"""Bisquare spatio-temporal basis: point evaluation, Monte Carlo areal
integration, and period aggregation into design rows.

Basis index ``j`` enumerates (spatial knot a, temporal knot b) pairs in
spatial-major order: ``j = a * m_t + b``, total dimension r = r_s * m_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import ArealUnit, KnotSet, SupportSet, overlap_fractions, uniform_sample


@dataclass(frozen=True)
class BasisSystem:
    """Bisquare basis: knots plus spatial radius w_s and temporal radius w_t."""

    knots: KnotSet
    w_s: float
    w_t: float

    def __post_init__(self):
        if not (self.w_s > 0 and self.w_t > 0):
            raise ConfigurationError("basis radii w_s and w_t must be positive")

    @property
    def r(self) -> int:
        return self.knots.r_s * self.knots.m_t


@dataclass(frozen=True)
class DesignRow:
    """Design entries for one survey datum: the r-vector of aggregated basis
    values and the fine-support overlap vector h(A)."""

    unit_id: str
    year: int
    period: int
    psi: np.ndarray
    h: np.ndarray


def eval_point(sys: BasisSystem, j: int, u, t: float) -> float:
    """Bisquare value of basis function j at planar point u and time t.

    {1 - (|u - c_j|/w_s)^2 - (|t - g_j|/w_t)^2}^2 where the bracket is
    clamped at zero, which also enforces the compact support window.
    """
    if not 0 <= j < sys.r:
        raise ConfigurationError(f"basis index {j} out of range [0, {sys.r})")
    a, b = divmod(j, sys.knots.m_t)
    u = np.asarray(u, dtype=float)
    ds2 = ((u - sys.knots.spatial[a]) ** 2).sum() / sys.w_s ** 2
    dt2 = ((float(t) - sys.knots.temporal[b]) / sys.w_t) ** 2
    return float(max(0.0, 1.0 - ds2 - dt2) ** 2)


def eval_grid(sys: BasisSystem, pts: np.ndarray, years) -> np.ndarray:
    """Evaluate all r basis functions at each point and year.

    pts: (h, 2); years: iterable of reals. Returns (len(years), h, r).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    years = np.atleast_1d(np.asarray(years, dtype=float))
    diff = pts[:, None, :] - sys.knots.spatial[None, :, :]
    ds2 = (diff ** 2).sum(axis=-1) / sys.w_s ** 2            # (h, r_s)
    dt2 = ((years[:, None] - sys.knots.temporal[None, :]) / sys.w_t) ** 2  # (ny, m_t)
    out = np.empty((years.size, pts.shape[0], sys.r))
    for k in range(years.size):
        bracket = 1.0 - ds2[:, :, None] - dt2[k][None, None, :]
        np.maximum(bracket, 0.0, out=bracket)
        out[k] = (bracket ** 2).reshape(pts.shape[0], sys.r)
    return out


def integrate_area(sys: BasisSystem, j: int, A: ArealUnit, k: int,
                   h: int, seed: int) -> float:
    """Normalized areal average of basis function j over A at year k,
    by Monte Carlo with the unit's shared sample: (1/h) sum_q psi_j(s_q; k)."""
    if not 0 <= j < sys.r:
        raise ConfigurationError(f"basis index {j} out of range [0, {sys.r})")
    return float(areal_basis_by_year(sys, A, [k], h, seed)[0, j])


def areal_basis_by_year(sys: BasisSystem, A: ArealUnit, years, h: int,
                        seed: int, pts: np.ndarray | None = None) -> np.ndarray:
    """Yearly areal averages of all r basis functions over A.

    Returns (len(years), r). The same sample points serve every basis
    function and year (common random numbers)."""
    if pts is None:
        pts = uniform_sample(A, h, seed)
    return eval_grid(sys, pts, years).mean(axis=1)


def aggregate_period(sys: BasisSystem, A: ArealUnit, t: int, ell: int,
                     h: int, seed: int, pts: np.ndarray | None = None) -> np.ndarray:
    """Period-aggregated basis vector: (1/ell) sum over years t-ell+1..t of
    the yearly areal averages, computed on one shared sample."""
    if ell < 1:
        raise ConfigurationError("period ell must be >= 1")
    years = np.arange(t - ell + 1, t + 1)
    return areal_basis_by_year(sys, A, years, h, seed, pts=pts).mean(axis=0)


def build_design(sys: BasisSystem, data, source: SupportSet, fine: SupportSet,
                 h: int, seed: int) -> list[DesignRow]:
    """One DesignRow per survey datum: aggregated basis vector plus overlap
    fractions against the fine support.

    Data units are resolved by id in ``source``; when the id is also a fine
    unit, h(A) is the exact standard basis vector.
    """
    if len(fine) == 0:
        raise ConfigurationError("empty fine support")
    rows: list[DesignRow] = []
    cache_pts: dict[str, np.ndarray] = {}
    cache_year: dict[tuple[str, int], np.ndarray] = {}
    cache_h: dict[str, np.ndarray] = {}
    for d in data:
        unit = source[source.index_of(d.unit_id)]
        if d.unit_id not in cache_pts:
            cache_pts[d.unit_id] = uniform_sample(unit, h, seed)
        pts = cache_pts[d.unit_id]
        years = range(d.year - d.period + 1, d.year + 1)
        missing = [k for k in years if (d.unit_id, k) not in cache_year]
        if missing:
            vals = areal_basis_by_year(sys, unit, missing, h, seed, pts=pts)
            for k, v in zip(missing, vals):
                cache_year[(d.unit_id, k)] = v
        psi = np.mean([cache_year[(d.unit_id, k)] for k in years], axis=0)
        if d.unit_id not in cache_h:
            if d.unit_id in fine:
                e = np.zeros(len(fine))
                e[fine.index_of(d.unit_id)] = 1.0
                cache_h[d.unit_id] = e
            else:
                cache_h[d.unit_id] = overlap_fractions(unit, fine)
        rows.append(DesignRow(d.unit_id, d.year, d.period, psi, cache_h[d.unit_id]))
    return rows


def build_target_Psi(sys: BasisSystem, fine: SupportSet, year_lo: int, year_hi: int,
                     h: int, seed: int) -> np.ndarray:
    """Single-year basis matrix on the finest spatio-temporal resolution.

    Row (t - year_lo) * n_B + i holds the yearly areal average for fine
    unit i at year t; layout matches the joint target covariance blocks.
    """
    if len(fine) == 0:
        raise ConfigurationError("empty fine support")
    if year_hi < year_lo:
        raise ConfigurationError("year_hi must be >= year_lo")
    years = np.arange(year_lo, year_hi + 1)
    n_B, T = len(fine), years.size
    Psi = np.empty((n_B * T, sys.r))
    for i, unit in enumerate(fine):
        vals = areal_basis_by_year(sys, unit, years, h, seed)  # (T, r)
        for ti in range(T):
            Psi[ti * n_B + i] = vals[ti]
    return Psi


def default_spatial_radius(knots: KnotSet, multiplier: float = 1.1) -> float:
    """Spatial radius rule: multiplier times the smallest inter-knot distance."""
    return multiplier * knots.min_spatial_distance()


def period_midpoint(t: int, ell: int) -> float:
    """Midpoint year of the period (t - ell + 1, ..., t)."""
    return t - (ell - 1) / 2.0


def temporal_knots_from_data(data) -> np.ndarray:
    """Distinct period midpoints of the observed (t, ell) groups, sorted."""
    mids = sorted({period_midpoint(d.year, d.period) for d in data})
    if not mids:
        raise ConfigurationError("no data to derive temporal knots from")
    return np.asarray(mids, dtype=float)
