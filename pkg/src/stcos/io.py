"""File ingest and artifact persistence.

GeoJSON supports in; estimates CSV in (margins of error converted to
sampling sds at a fixed confidence-level constant); draws, predictions,
grid tables out as CSV; matrices as raw float64 dumps with a JSON header.
Floats are serialized with 17 significant digits so round-trips are lossless.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, InputError
from .geometry import ArealUnit, SupportSet
from .model import SurveyDatum
from .predict import PredictionRecord
from .sampler import PosteriorDraws

ESTIMATE_COLUMNS = ("unit_id", "year", "period", "estimate")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def moe_z(level: float) -> float:
    """Normal quantile for a symmetric interval at ``level``, rounded to 4
    decimals (0.90 -> 1.6449, the survey publication convention)."""
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"moe level must lie in (0, 1), got {level}")
    return round(float(norm.ppf(0.5 + level / 2.0)), 4)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_supports(path, disjoint: bool = False) -> SupportSet:
    """Parse a GeoJSON FeatureCollection of Polygon/MultiPolygon features.

    Every feature needs an ``id`` (property or feature-level) and a valid,
    positive-area geometry; all problems are collected and reported together.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read GeoJSON {path}: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise InputError(f"{path}: expected a FeatureCollection")
    units, problems = [], []
    for idx, feat in enumerate(doc.get("features", [])):
        uid = (feat.get("properties") or {}).get("id", feat.get("id"))
        if uid is None:
            problems.append(f"feature {idx}: missing 'id'")
            continue
        geomobj = feat.get("geometry") or {}
        gtype = geomobj.get("type")
        coords = geomobj.get("coordinates")
        try:
            if gtype == "Polygon":
                unit = ArealUnit.from_polygon_coords(str(uid), coords)
            elif gtype == "MultiPolygon":
                unit = ArealUnit.from_multipolygon_coords(str(uid), coords)
            else:
                raise InputError(f"unsupported geometry type {gtype!r}")
            if unit.area <= 0:
                raise InputError("zero-area geometry")
            units.append(unit)
        except Exception as exc:
            problems.append(f"feature {idx} (id={uid!r}): {exc}")
    if problems:
        raise InputError(f"{path}: {len(problems)} invalid feature(s)", problems)
    return SupportSet(units, disjoint=disjoint)


def load_estimates(path, moe_level: float = 0.90) -> list[SurveyDatum]:
    """Parse the estimates CSV.

    Header must carry unit_id, year, period, estimate, and either ``sd``
    (used verbatim when present) or ``moe`` (divided by the normal quantile
    for the row's moe_level, defaulting to the argument). Row errors are
    accumulated and reported together.
    """
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read estimates {path}: {exc}") from exc
    with f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in ESTIMATE_COLUMNS if c not in header]
        if missing:
            raise InputError(f"{path}: header missing columns {missing}")
        if "sd" not in header and "moe" not in header:
            raise InputError(f"{path}: header needs an 'sd' or 'moe' column")
        data, problems = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                sd_text = (row.get("sd") or "").strip()
                if sd_text:
                    sd = float(sd_text)
                else:
                    level_text = (row.get("moe_level") or "").strip()
                    level = float(level_text) if level_text else moe_level
                    sd = float(row["moe"]) / moe_z(level)
                if sd <= 0:
                    raise ValueError(f"nonpositive sd {sd}")
                data.append(SurveyDatum(
                    unit_id=row["unit_id"].strip(),
                    year=int(row["year"]), period=int(row["period"]),
                    estimate=float(row["estimate"]), sd=sd))
            except Exception as exc:
                problems.append(f"row {lineno}: {exc}")
    if problems:
        raise InputError(f"{path}: {len(problems)} invalid row(s)", problems)
    return data


def load_edge_list(path) -> list[tuple[str, str]]:
    """CSV of i,j unit-id pairs overriding geometric adjacency."""
    edges = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for row in reader:
            if not row or row[0].strip().lower() == "i":
                continue
            if len(row) < 2:
                raise InputError(f"{path}: malformed edge row {row!r}")
            edges.append((row[0].strip(), row[1].strip()))
    return edges


def save_matrix(path, matrix: np.ndarray, symmetric: bool = False):
    """Raw row-major float64 dump plus a <path>.json header."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    path.write_bytes(arr.tobytes())
    header = {"dims": list(arr.shape), "dtype": "float64-le", "order": "row-major",
              "symmetric": bool(symmetric)}
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2) + "\n",
                                         encoding="utf-8")


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    arr = np.frombuffer(path.read_bytes(), dtype="<f8")
    return arr.reshape(header["dims"]).copy()


def save_draws(path, draws: PosteriorDraws):
    """One CSV row per stored iteration, columns named per parameter."""
    cols = ([f"mu_{j}" for j in range(draws.mu.shape[1])]
            + [f"eta_{j}" for j in range(draws.eta.shape[1])]
            + [f"xi_{j}" for j in range(draws.xi.shape[1])]
            + ["sigma2_xi", "sigma2_K", "sigma2_mu"])
    block = np.hstack([draws.mu, draws.eta, draws.xi,
                       draws.sigma2_xi[:, None], draws.sigma2_K[:, None],
                       draws.sigma2_mu[:, None]])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in block:
            w.writerow([fmt(x) for x in row])


def load_draws(path, manifest_path) -> PosteriorDraws:
    man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    block = np.asarray(rows) if rows else np.zeros((0, len(header)))
    n_mu = sum(c.startswith("mu_") for c in header)
    n_eta = sum(c.startswith("eta_") for c in header)
    n_xi = sum(c.startswith("xi_") for c in header)
    keys = [tuple(k) for k in man["keys"]]
    return PosteriorDraws(
        mu=block[:, :n_mu], eta=block[:, n_mu:n_mu + n_eta],
        xi=block[:, n_mu + n_eta:n_mu + n_eta + n_xi],
        sigma2_xi=block[:, -3], sigma2_K=block[:, -2], sigma2_mu=block[:, -1],
        keys=keys, meta=man.get("meta", {}),
        diagnostics=man.get("diagnostics", {}))


def save_manifest(path, draws: PosteriorDraws, config_payload: dict,
                  input_digests: dict, timings: dict):
    from . import __version__

    man = {
        "config_hash": draws.meta.get("config_hash", ""),
        "version": __version__,
        "config": config_payload,
        "input_digests": input_digests,
        "seed": draws.meta.get("seed"),
        "meta": draws.meta,
        "keys": [list(k) for k in draws.keys],
        "diagnostics": {
            "min_ess": draws.diagnostics.get("min_ess"),
            "max_rhat": draws.diagnostics.get("max_rhat"),
        },
        "timings": timings,
    }
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def save_predictions(path, records: list[PredictionRecord]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["target_id", "year", "period", "mean", "sd", "lo95", "hi95"])
        for r in records:
            w.writerow([r.target_id, r.year, r.period,
                        fmt(r.mean), fmt(r.sd), fmt(r.lo95), fmt(r.hi95)])


def load_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append(PredictionRecord(
                target_id=row["target_id"], year=int(row["year"]),
                period=int(row["period"]), mean=float(row["mean"]),
                sd=float(row["sd"]), lo95=float(row["lo95"]),
                hi95=float(row["hi95"])))
    return out


def save_ratios(path, ratios):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["unit_id", "year", "period", "ratio", "flagged"])
        for r in ratios:
            w.writerow([r.unit_id, r.year, r.period, fmt(r.ratio), int(r.flagged)])


def save_grid_table(path, table: list[dict]):
    cols = ["r_s", "w_s_multiplier", "w_t", "sse", "n_holdout", "error"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in table:
            w.writerow([row["r_s"], fmt(row["w_s_multiplier"]), fmt(row["w_t"]),
                        fmt(row["sse"]), row["n_holdout"], row["error"]])


def save_ratio_histogram(path, ratios, bins: int = 20, title: str = "hold-out ratio"):
    """Standalone SVG histogram of the ratio diagnostic."""
    vals = np.asarray([r for r in ratios if np.isfinite(r)], dtype=float)
    width, height, pad = 640, 420, 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
             f'font-family="sans-serif" font-size="15">{title} (n={vals.size})</text>']
    if vals.size:
        counts, edges = np.histogram(vals, bins=bins)
        cmax = max(int(counts.max()), 1)
        plot_w, plot_h = width - 2 * pad, height - 2 * pad
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            x = pad + (lo - edges[0]) / (edges[-1] - edges[0]) * plot_w
            bw = (hi - lo) / (edges[-1] - edges[0]) * plot_w
            bh = c / cmax * plot_h
            parts.append(f'<rect x="{x:.2f}" y="{height - pad - bh:.2f}" '
                         f'width="{max(bw - 1, 0.5):.2f}" height="{bh:.2f}" '
                         f'fill="#4878a8"/>')
        for frac, lab in ((0.0, edges[0]), (0.5, (edges[0] + edges[-1]) / 2),
                          (1.0, edges[-1])):
            x = pad + frac * plot_w
            parts.append(f'<text x="{x:.1f}" y="{height - pad + 18}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="11">{lab:.3g}</text>')
        parts.append(f'<text x="{pad - 8}" y="{height - pad}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">0</text>')
        parts.append(f'<text x="{pad - 8}" y="{pad + 8}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{cmax}</text>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
                 f'y2="{height - pad}" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
                 f'stroke="black"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def save_design_csv(path, rows, fine_ids):
    """Design matrix export: datum tags, basis columns, then fine-unit columns."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        r = rows[0].psi.shape[0] if rows else 0
        w.writerow(["unit_id", "year", "period"]
                   + [f"psi_{j}" for j in range(r)]
                   + [f"h_{uid}" for uid in fine_ids])
        for row in rows:
            w.writerow([row.unit_id, row.year, row.period]
                       + [fmt(x) for x in row.psi] + [fmt(x) for x in row.h])
