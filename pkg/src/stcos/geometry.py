"""Areal units, overlap fractions, uniform sampling, adjacency, knot placement.

All coordinates are assumed to live in a planar projection; no geodesic
math is performed anywhere in the engine.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union
from shapely.strtree import STRtree

from .errors import ConfigurationError, DomainError, GeometryError

# Relative tolerance for the disjointness check on fine supports.
DISJOINT_RTOL = 1e-9


def _validate_ring(ring, where: str) -> list[tuple[float, float]]:
    pts = [tuple(map(float, p)) for p in ring]
    if len(pts) < 4:
        raise GeometryError(f"{where}: ring has {len(pts)} vertices, need >= 4 (closed)")
    if pts[0] != pts[-1]:
        raise GeometryError(f"{where}: ring is not closed (first vertex != last)")
    arr = np.asarray(pts, dtype=float)
    if not np.isfinite(arr).all():
        raise GeometryError(f"{where}: non-finite coordinate")
    return pts


def _polygon_from_rings(rings, where: str) -> Polygon:
    shells = [_validate_ring(r, where) for r in rings]
    poly = Polygon(shells[0], shells[1:])
    if not poly.is_valid:
        raise GeometryError(f"{where}: invalid polygon ({shapely.is_valid_reason(poly)})")
    return poly


@dataclass(frozen=True)
class ArealUnit:
    """One areal unit: a string id plus one or more polygon rings.

    ``geom`` is the shapely (Multi)Polygon; ``area`` is derived from it.
    """

    id: str
    geom: Polygon | MultiPolygon
    area: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "area", float(self.geom.area))

    @classmethod
    def from_polygon_coords(cls, uid: str, rings) -> "ArealUnit":
        """Build from GeoJSON Polygon coordinates: [outer, hole, ...]."""
        return cls(str(uid), _polygon_from_rings(rings, f"unit {uid!r}"))

    @classmethod
    def from_multipolygon_coords(cls, uid: str, polys) -> "ArealUnit":
        """Build from GeoJSON MultiPolygon coordinates: [[outer, hole, ...], ...]."""
        parts = [_polygon_from_rings(rings, f"unit {uid!r}") for rings in polys]
        geom = MultiPolygon(parts)
        if not geom.is_valid:
            raise GeometryError(f"unit {uid!r}: invalid multipolygon "
                                f"({shapely.is_valid_reason(geom)})")
        return cls(str(uid), geom)

    def bounds(self) -> tuple[float, float, float, float]:
        return self.geom.bounds


class SupportSet:
    """Ordered collection of areal units with unique ids.

    A fine-level support is constructed with ``disjoint=True``, which
    verifies pairwise intersection areas stay below ``DISJOINT_RTOL`` times
    the total area.
    """

    def __init__(self, units, disjoint: bool = False):
        self.units: list[ArealUnit] = list(units)
        self.disjoint = bool(disjoint)
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigurationError(f"duplicate unit ids: {dupes}")
        self._index = {u.id: k for k, u in enumerate(self.units)}
        self._tree: STRtree | None = None
        if self.disjoint:
            self._check_disjoint()

    def _check_disjoint(self):
        tol = DISJOINT_RTOL * max(self.total_area, 1e-300)
        tree = self.tree()
        for i, u in enumerate(self.units):
            for j in tree.query(u.geom, predicate="intersects"):
                j = int(j)
                if j <= i:
                    continue
                inter = u.geom.intersection(self.units[j].geom)
                if inter.area > tol:
                    raise GeometryError(
                        f"units {u.id!r} and {self.units[j].id!r} overlap "
                        f"(area {inter.area:.3e} > tol {tol:.3e})")

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __getitem__(self, k: int) -> ArealUnit:
        return self.units[k]

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    @property
    def total_area(self) -> float:
        return float(sum(u.area for u in self.units))

    def index_of(self, uid: str) -> int:
        try:
            return self._index[uid]
        except KeyError:
            raise KeyError(f"unknown unit id {uid!r}") from None

    def __contains__(self, uid: str) -> bool:
        return uid in self._index

    def tree(self) -> STRtree:
        if self._tree is None:
            self._tree = STRtree([u.geom for u in self.units])
        return self._tree

    def union_geom(self):
        return unary_union([u.geom for u in self.units])


def overlap_fractions(A: ArealUnit, fine: SupportSet) -> np.ndarray:
    """Fraction of A's area falling in each fine unit: h(A, i) = |A n B_i| / |A|.

    Deterministic polygon clipping; entries lie in [0, 1] and sum to 1
    (within 1e-6) whenever A is covered by the fine set.
    """
    if not fine.disjoint:
        raise ConfigurationError("overlap_fractions requires a disjoint fine support")
    if A.area <= 0.0:
        raise DomainError(f"unit {A.id!r} has zero area")
    h = np.zeros(len(fine))
    for j in fine.tree().query(A.geom, predicate="intersects"):
        j = int(j)
        inter = A.geom.intersection(fine[j].geom)
        if not inter.is_empty:
            h[j] = inter.area / A.area
    return np.clip(h, 0.0, 1.0)


def _stable_id_hash(uid: str) -> int:
    # Python's hash() is salted per process; sha256 keeps seeds stable across runs.
    return int.from_bytes(hashlib.sha256(uid.encode("utf-8")).digest()[:8], "big")


def unit_rng(seed: int, uid: str) -> np.random.Generator:
    """RNG stream tied to (seed, unit id), independent of evaluation order."""
    if seed < 0:
        raise ConfigurationError("seed must be a nonnegative integer")
    return np.random.default_rng(np.random.SeedSequence([int(seed), _stable_id_hash(uid)]))


def _rejection_sample(geom, h: int, rng: np.random.Generator) -> np.ndarray:
    minx, miny, maxx, maxy = geom.bounds
    if not (maxx > minx and maxy > miny):
        raise GeometryError("degenerate bounding box")
    out = np.empty((h, 2))
    got = 0
    chunk = max(4 * h, 1024)
    while got < h:
        xs = rng.uniform(minx, maxx, size=chunk)
        ys = rng.uniform(miny, maxy, size=chunk)
        keep = shapely.contains_xy(geom, xs, ys)
        take = min(int(keep.sum()), h - got)
        if take > 0:
            idx = np.flatnonzero(keep)[:take]
            out[got:got + take, 0] = xs[idx]
            out[got:got + take, 1] = ys[idx]
            got += take
    return out


def uniform_sample(A: ArealUnit, h: int, seed: int) -> np.ndarray:
    """h i.i.d. uniform points on A, via rejection from the bounding box.

    Returns an (h, 2) array; bit-reproducible given the same seed.
    """
    if h < 1:
        raise ConfigurationError("h must be >= 1")
    if A.area <= 0.0:
        raise DomainError(f"unit {A.id!r} has zero area")
    return _rejection_sample(A.geom, h, unit_rng(seed, A.id))


def build_adjacency(fine: SupportSet, edges=None, min_shared_length: float = 1e-9) -> np.ndarray:
    """Rook adjacency: (i, j) = 1 iff units share a boundary segment of
    positive length. Corner-touching units are not adjacent.

    ``edges`` (iterable of (i, j) pairs, unit ids or integer indices)
    bypasses geometric detection entirely.
    """
    if not fine.disjoint:
        raise ConfigurationError("build_adjacency requires a disjoint fine support")
    n = len(fine)
    adj = np.zeros((n, n), dtype=np.int64)
    if edges is not None:
        for i, j in edges:
            a = fine.index_of(i) if isinstance(i, str) else int(i)
            b = fine.index_of(j) if isinstance(j, str) else int(j)
            if not (0 <= a < n and 0 <= b < n):
                raise ConfigurationError(f"edge ({i}, {j}) out of range")
            if a != b:
                adj[a, b] = adj[b, a] = 1
        return adj
    tree = fine.tree()
    for i, u in enumerate(fine):
        for j in tree.query(u.geom, predicate="intersects"):
            j = int(j)
            if j <= i:
                continue
            shared = u.geom.boundary.intersection(fine[j].geom.boundary)
            if shared.length > min_shared_length:
                adj[i, j] = adj[j, i] = 1
    return adj


@dataclass(frozen=True)
class KnotSet:
    """Spatial knots (r_s x 2 planar points) and temporal knots (strictly
    increasing reals, typically period midpoints)."""

    spatial: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        sp = np.atleast_2d(np.asarray(self.spatial, dtype=float))
        tm = np.atleast_1d(np.asarray(self.temporal, dtype=float))
        if sp.shape[1] != 2:
            raise ConfigurationError("spatial knots must be (r_s, 2)")
        d = _pairwise_distances(sp)
        if sp.shape[0] > 1 and d[np.triu_indices_from(d, 1)].min() == 0.0:
            raise ConfigurationError("spatial knots must be pairwise distinct")
        if tm.size > 1 and np.any(np.diff(tm) <= 0):
            raise ConfigurationError("temporal knots must be strictly increasing")
        object.__setattr__(self, "spatial", sp)
        object.__setattr__(self, "temporal", tm)

    @property
    def r_s(self) -> int:
        return self.spatial.shape[0]

    @property
    def m_t(self) -> int:
        return self.temporal.shape[0]

    def min_spatial_distance(self) -> float:
        if self.r_s < 2:
            raise ConfigurationError("need >= 2 spatial knots for an inter-knot distance")
        d = _pairwise_distances(self.spatial)
        return float(d[np.triu_indices_from(d, 1)].min())


def _pairwise_distances(pts: np.ndarray) -> np.ndarray:
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def coverage_criterion(candidates: np.ndarray, knots: np.ndarray) -> float:
    """Fill distance of a knot set over a candidate cloud: the largest
    distance from any candidate to its nearest knot. Smaller is better."""
    diff = candidates[:, None, :] - knots[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=-1))
    return float(d.min(axis=1).max())


def space_filling_knots(domain: SupportSet, r_s: int, candidates: int,
                        seed: int, max_iter: int = 100) -> np.ndarray:
    """Select r_s spatial knots by a seeded candidate-set exchange.

    Draws ``candidates`` uniform points over the union of the domain units,
    then runs k-centroid exchange: assign candidates to their nearest knot,
    move each knot to the candidate nearest its cluster mean, repeat until
    stable. Every knot is a candidate point, hence inside the domain.
    """
    if r_s < 1:
        raise ConfigurationError("r_s must be >= 1")
    if r_s > candidates:
        raise ConfigurationError(f"r_s={r_s} exceeds candidate count {candidates}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F11]))
    pts = _rejection_sample(domain.union_geom(), candidates, rng)
    if r_s == candidates:
        return pts.copy()

    # Greedy farthest-point start gives a well-spread initial set.
    first = int(rng.integers(candidates))
    chosen = [first]
    dmin = np.sqrt(((pts - pts[first]) ** 2).sum(axis=1))
    for _ in range(r_s - 1):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.sqrt(((pts - pts[nxt]) ** 2).sum(axis=1)))
    knots = pts[chosen].copy()

    for _ in range(max_iter):
        diff = pts[:, None, :] - knots[None, :, :]
        assign = ((diff ** 2).sum(axis=-1)).argmin(axis=1)
        new = knots.copy()
        for k in range(r_s):
            members = pts[assign == k]
            if members.shape[0] == 0:
                continue
            center = members.mean(axis=0)
            snap = int(((pts - center) ** 2).sum(axis=1).argmin())
            new[k] = pts[snap]
        if np.array_equal(new, knots):
            break
        knots = new
    return knots
