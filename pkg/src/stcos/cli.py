"""Command-line front end: simulate | fit | predict | validate.

Exit codes: 0 success, 1 usage/configuration, 2 input, 3 artifact
mismatch, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_ARTIFACT = 3
EXIT_NUMERICAL = 4

_SCHEMA = {
    None: {"supports", "estimates", "source_supports", "adjacency_edges",
           "seed", "out", "moe_level", "basis", "model", "chain", "predict",
           "validate", "simulate"},
    "basis": {"r_s", "m_t", "w_s", "w_s_multiplier", "w_t", "knot_candidates"},
    "model": {"rho", "propagator_scale", "mi_rank", "mc_points",
              "prior_xi", "prior_K", "prior_mu"},
    "chain": {"iterations", "burn_in", "thin"},
    "predict": {"targets", "requests", "holdout", "mc_points", "artifact"},
    "validate": {"r_s", "w_s_multiplier", "w_t", "holdout_year",
                 "holdout_period"},
    "simulate": {"grid_side", "layout", "start_year", "r_s", "m_t", "w_t",
                 "knot_candidates", "mc_points", "sigma2_xi", "sigma2_K",
                 "sigma2_mu", "mu_offset", "sd_lo", "sd_hi"},
}


def _check_keys(cfg: dict):
    from .errors import ConfigurationError

    unknown = set(cfg) - _SCHEMA[None]
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in _SCHEMA.items():
        if section is None or section not in cfg:
            continue
        sub = cfg[section]
        if not isinstance(sub, dict):
            raise ConfigurationError(f"config section {section!r} must be an object")
        bad = set(sub) - allowed
        if bad:
            raise ConfigurationError(f"unknown keys in {section!r}: {sorted(bad)}")


def _load_config(args) -> dict:
    from .errors import ConfigurationError, InputError

    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
        base = path.parent
    else:
        cfg, base = {}, Path(".")
    _check_keys(cfg)
    # Flags override file values.
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    cfg.setdefault("moe_level", 0.90)
    if args.out is not None:
        cfg["out"] = str(Path(args.out))  # flag paths are cwd-relative
    else:
        out = Path(cfg.get("out", "out"))
        cfg["out"] = str(out if out.is_absolute() else base / out)
    cfg["_base"] = base
    return cfg


def _resolve(cfg: dict, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else cfg["_base"] / p


def _model_config(cfg: dict):
    from .model import ChainConfig, ModelConfig

    m = cfg.get("model", {})
    c = cfg.get("chain", {})
    chain = ChainConfig(iterations=c.get("iterations", 10_000),
                        burn_in=c.get("burn_in", 2_000),
                        thin=c.get("thin", 4), seed=int(cfg["seed"]))
    return ModelConfig(
        prior_xi=tuple(m.get("prior_xi", (1.0, 1.0))),
        prior_K=tuple(m.get("prior_K", (1.0, 1.0))),
        prior_mu=tuple(m.get("prior_mu", (1.0, 1.0))),
        rho=m.get("rho", 0.9),
        propagator_scale=m.get("propagator_scale", 0.8),
        mi_rank=m.get("mi_rank"),
        mc_points=m.get("mc_points", 500),
        moe_level=cfg.get("moe_level", 0.90),
        chain=chain)


def _basis_config(cfg: dict):
    from .pipeline import BasisConfig

    b = cfg.get("basis", {})
    return BasisConfig(r_s=b.get("r_s", 9), m_t=b.get("m_t"),
                       w_s=b.get("w_s"),
                       w_s_multiplier=b.get("w_s_multiplier", 1.1),
                       w_t=b.get("w_t", 1.1),
                       knot_candidates=b.get("knot_candidates", 2000))


def _hash_payload(cfg: dict) -> dict:
    from . import io as stio

    payload = {
        "seed": int(cfg["seed"]),
        "moe_level": cfg.get("moe_level", 0.90),
        "basis": cfg.get("basis", {}),
        "model": cfg.get("model", {}),
        "chain": cfg.get("chain", {}),
        "digests": {},
    }
    for key in ("supports", "estimates", "source_supports", "adjacency_edges"):
        path = _resolve(cfg, cfg.get(key))
        payload["digests"][key] = stio.file_digest(path) if path and path.exists() else None
    return payload


def _load_fit_inputs(cfg: dict):
    from . import io as stio
    from .errors import InputError

    supports_path = _resolve(cfg, cfg.get("supports"))
    estimates_path = _resolve(cfg, cfg.get("estimates"))
    if supports_path is None or not supports_path.exists():
        raise InputError(f"supports file not found: {supports_path}")
    if estimates_path is None or not estimates_path.exists():
        raise InputError(f"estimates file not found: {estimates_path}")
    fine = stio.load_supports(supports_path, disjoint=True)
    data = stio.load_estimates(estimates_path, cfg.get("moe_level", 0.90))
    source = None
    sp = _resolve(cfg, cfg.get("source_supports"))
    if sp is not None:
        if not sp.exists():
            raise InputError(f"source supports file not found: {sp}")
        source = stio.load_supports(sp)
    edges = None
    ep = _resolve(cfg, cfg.get("adjacency_edges"))
    if ep is not None:
        if not ep.exists():
            raise InputError(f"edge list file not found: {ep}")
        edges = stio.load_edge_list(ep)
    return fine, data, source, edges


def cmd_simulate(cfg: dict) -> int:
    from . import synthetic

    s = cfg.get("simulate", {})
    layout_name = s.get("layout", "recovery")
    start = s.get("start_year", 2001 if layout_name == "recovery" else 2006)
    if layout_name == "recovery":
        layout = synthetic.recovery_layout(start)
    elif layout_name == "survey":
        layout = synthetic.survey_layout(start)
    else:
        from .errors import ConfigurationError
        raise ConfigurationError(f"unknown layout {layout_name!r}")
    kwargs = {k: s[k] for k in ("grid_side", "r_s", "m_t", "w_t",
                                "knot_candidates", "mc_points", "sigma2_xi",
                                "sigma2_K", "sigma2_mu", "mu_offset",
                                "sd_lo", "sd_hi") if k in s}
    ds = synthetic.generate(synthetic.SyntheticConfig(
        layout=layout, seed=int(cfg["seed"]), **kwargs))
    paths = synthetic.write_dataset(ds, cfg["out"])
    print(f"simulate: wrote {len(ds.data)} estimates over {len(ds.fine)} units "
          f"to {cfg['out']}", file=sys.stderr)
    print(json.dumps(paths))
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    from . import io as stio
    from .pipeline import config_digest, fit_model

    fine, data, source, edges = _load_fit_inputs(cfg)
    payload = _hash_payload(cfg)
    chash = config_digest(payload)
    fit = fit_model(data, fine, _model_config(cfg), _basis_config(cfg),
                    int(cfg["seed"]), source=source, adjacency_edges=edges,
                    config_hash=chash)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stio.save_draws(out / "draws.csv", fit.draws)
    stio.save_design_csv(out / "design.csv", fit.designs, fine.ids)
    stio.save_matrix(out / "k0.bin", fit.K0.K0, symmetric=True)
    stio.save_matrix(out / "sigma0.bin", fit.Sigma0, symmetric=True)
    stio.save_matrix(out / "sigma_joint.bin", fit.Sigma_joint, symmetric=True)
    stio.save_manifest(out / "manifest.json", fit.draws, payload,
                       payload["digests"], fit.timings)
    d = fit.draws.diagnostics
    print(f"fit: {fit.draws.n_draws} draws stored; "
          f"min ESS {d.get('min_ess', float('nan')):.1f}, "
          f"max split-Rhat {d.get('max_rhat', float('nan')):.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    from . import io as stio
    from .errors import ArtifactMismatchError, InputError
    from .pipeline import build_basis_system, config_digest
    from .predict import TargetQuery, predict, ratio_diagnostic

    p = cfg.get("predict", {})
    artifact = _resolve(cfg, p.get("artifact", cfg["out"]))
    draws_path = artifact / "draws.csv"
    manifest_path = artifact / "manifest.json"
    if not draws_path.exists() or not manifest_path.exists():
        raise InputError(f"fitted artifact not found under {artifact}")
    chash = config_digest(_hash_payload(cfg))
    draws = stio.load_draws(draws_path, manifest_path)
    if draws.meta.get("config_hash") != chash:
        raise ArtifactMismatchError(
            f"config hash {chash[:12]}... does not match artifact "
            f"{str(draws.meta.get('config_hash'))[:12]}...")
    fine, data, source, _ = _load_fit_inputs(cfg)
    system = build_basis_system(data, fine, _basis_config(cfg), int(cfg["seed"]))

    tpath = _resolve(cfg, p.get("targets"))
    if tpath is not None:
        if not tpath.exists():
            raise InputError(f"targets file not found: {tpath}")
        targets = stio.load_supports(tpath)
    else:
        targets = fine
    requests = [(int(t), int(ell)) for t, ell in p.get("requests", [])]
    if not requests:
        span = draws.meta.get("year_span") or [0, 0]
        requests = [(int(span[1]), 1)]
    query = TargetQuery(support=targets, requests=requests,
                        mc_points=p.get("mc_points", 500), seed=int(cfg["seed"]))
    records, skipped = predict(draws, query, system, fine, config_hash=chash)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stio.save_predictions(out / "predictions.csv", records)
    for s in skipped:
        print(f"predict: skipped {s.target_id} ({s.year},{s.period}): {s.reason}",
              file=sys.stderr)
    hpath = _resolve(cfg, p.get("holdout"))
    if hpath is not None:
        if not hpath.exists():
            raise InputError(f"holdout file not found: {hpath}")
        held = stio.load_estimates(hpath, cfg.get("moe_level", 0.90))
        ratios, summary = ratio_diagnostic(held, records)
        stio.save_ratios(out / "ratios.csv", ratios)
        stio.save_ratio_histogram(out / "ratio_hist.svg",
                                  [r.ratio for r in ratios])
        print(f"predict: ratio diagnostic over {summary['n']} pairs, "
              f"median {summary.get('median', float('nan')):.4f}", file=sys.stderr)
    else:
        print("predict: no holdout provided, diagnostics skipped", file=sys.stderr)
    print(f"predict: wrote {len(records)} records to {out / 'predictions.csv'}",
          file=sys.stderr)
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    from . import io as stio
    from .errors import ConfigurationError
    from .predict import GridPoint, HoldoutSpec, holdout_search

    v = cfg.get("validate", {})
    if "holdout_year" not in v or "holdout_period" not in v:
        raise ConfigurationError("validate needs holdout_year and holdout_period")
    fine, data, source, _ = _load_fit_inputs(cfg)
    grid = [GridPoint(r_s=r, w_s_multiplier=m, w_t=w)
            for r in v.get("r_s", [_basis_config(cfg).r_s])
            for m in v.get("w_s_multiplier", [1.1])
            for w in v.get("w_t", [1.1])]
    result = holdout_search(
        data, fine, grid,
        HoldoutSpec(int(v["holdout_year"]), int(v["holdout_period"])),
        _model_config(cfg), _basis_config(cfg), int(cfg["seed"]), source=source)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stio.save_grid_table(out / "gridsearch.csv", result.table)
    best = result.best
    print(f"validate: best configuration r_s={best.r_s} "
          f"w_s_multiplier={best.w_s_multiplier} w_t={best.w_t}", file=sys.stderr)
    print(json.dumps({"r_s": best.r_s, "w_s_multiplier": best.w_s_multiplier,
                      "w_t": best.w_t}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stcos",
        description="Spatio-temporal change-of-support estimation engine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("fit", cmd_fit),
                     ("predict", cmd_predict), ("validate", cmd_validate)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.threads is not None and args.threads >= 1:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    from .errors import (ArtifactMismatchError, ConfigurationError,
                         DomainError, GeometryError, InputError,
                         LinearAlgebraError, StabilityError)

    try:
        cfg = _load_config(args)
        return args.func(cfg)
    except ConfigurationError as exc:
        print(f"error (configuration): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, GeometryError, DomainError) as exc:
        print(f"error (input): {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArtifactMismatchError as exc:
        print(f"error (artifact): {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (LinearAlgebraError, StabilityError, FloatingPointError) as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
