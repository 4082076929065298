"""Command-line pipeline: ingest -> (distance) -> fit -> report.

Every command writes plain files so expensive fits can be cached and
re-reported. Exit codes: 0 success, 1 a model failed, 2 bad input/config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, distfit, fixture, gam, geo, glm
from .dataset import (
    DatasetError,
    FactorSpec,
    FilterConfig,
    RESPONSE_DEFINITION,
    StratifyRule,
    build_dataset,
    ingest_csv,
    load_records,
    save_records,
    stratify,
    write_rejections,
)

log = logging.getLogger("hedonic")

EXIT_OK, EXIT_MODEL, EXIT_INPUT = 0, 1, 2

MODEL_KEYS = {
    "gam": "GAM",
    "glm-l": "GLM_L",
    "glm-lm": "GLM_LM",
    "glm-lq": "GLM_LQ",
    "glm-lmq": "GLM_LMQ",
    "glm-p": "GLM_P",
}
MODEL_ORDER = ("GLM-l", "GLM-lm", "GLM-lq", "GLM-lmq", "GLM-p", "GAM")

CONFIG_KEYS = {
    "listings", "offenders", "filters", "distance", "dataset", "models", "stratify",
    "env_factors", "include_borough", "force_linear", "k_basis", "alpha_enter", "out",
    "seed", "jobs", "models_dir",
}


class ConfigError(ValueError):
    pass


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _display_name(key: str) -> str:
    return "GAM" if key == "gam" else glm.DISPLAY_NAMES[MODEL_KEYS[key]]


def _parse_models(text) -> list[str]:
    items = text if isinstance(text, list) else [s.strip() for s in str(text).split(",") if s.strip()]
    items = [s.lower() for s in items]
    bad = [m for m in items if m not in MODEL_KEYS]
    if bad:
        raise ConfigError(f"unknown model(s): {', '.join(bad)}; choose from {', '.join(MODEL_KEYS)}")
    if not items:
        raise ConfigError("at least one model must be requested")
    return items


def _sort_key(name: str):
    base = next((m for m in sorted(MODEL_ORDER, key=len, reverse=True)
                 if name == m or name.startswith(m + "-")), None)
    return (MODEL_ORDER.index(base) if base else len(MODEL_ORDER), name)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_fixture(cfg: dict) -> int:
    listings, offenders = fixture.write_fixture(cfg["out"], seed=int(cfg.get("seed") or fixture.DEFAULT_SEED))
    print(f"wrote {listings} and {offenders}")
    return EXIT_OK


def _with_distance(records, offenders_path):
    if not offenders_path or not Path(offenders_path).is_file():
        raise ConfigError(f"Distance requested but offenders file {offenders_path!r} is missing")
    offenders = geo.read_points(offenders_path)
    if not offenders:
        raise ConfigError("Distance requested but offenders file has no rows")
    pts = np.array([[r.latitude, r.longitude] for r in records])
    dist = geo.nearest_distance(pts, offenders)
    return [dataclasses.replace(r, distance=float(d)) for r, d in zip(records, dist)]


def cmd_ingest(cfg: dict) -> int:
    listings = cfg.get("listings")
    if not listings:
        raise ConfigError("--listings is required")
    filters = FilterConfig.from_json(cfg["filters"]) if cfg.get("filters") else FilterConfig()
    want_distance = cfg.get("distance")
    if want_distance is None:
        want_distance = bool(cfg.get("offenders"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    res = ingest_csv(listings, filters)
    records = list(res.records)
    if want_distance:
        records = _with_distance(records, cfg.get("offenders"))
    provenance = {
        "source": str(listings),
        "offenders": str(cfg["offenders"]) if want_distance else None,
        "filters": filters.to_dict(),
        "rows_read": res.n_rows,
        "rows_accepted": len(records),
        "rows_rejected": len(res.rejections),
        "notes": list(res.notes),
    }
    save_records(records, out / "dataset.json", provenance)
    write_rejections(res.rejections, out / "rejections.jsonl")
    print(f"{len(records)} accepted, {len(res.rejections)} rejected -> {out / 'dataset.json'}")
    return EXIT_OK


def cmd_distance(cfg: dict) -> int:
    """Append a Distance column to a listings CSV."""
    import csv

    src, out = cfg.get("listings"), cfg.get("out")
    if not src or not out:
        raise ConfigError("--listings and --out are required")
    offenders_path = cfg.get("offenders")
    if not offenders_path or not Path(offenders_path).is_file():
        raise ConfigError(f"Distance requested but offenders file {offenders_path!r} is missing")
    offenders = geo.read_points(offenders_path)
    with open(src, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f for f in reader.fieldnames or [] if f != "distance"]
        rows = list(reader)
    try:
        pts = np.array([[float(r["latitude"]), float(r["longitude"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read coordinates from {src}: {exc}") from None
    dist = geo.nearest_distance(pts, offenders)
    out = Path(out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "listings_distance.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields + ["distance"], lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r, d in zip(rows, dist):
            w.writerow({**r, "distance": repr(float(d))})
    print(f"wrote {out}")
    return EXIT_OK


def _fit_one(key: str, ds, cfg: dict):
    if key == "gam":
        spec = gam.default_spec(ds, k_basis=int(cfg.get("k_basis") or 10),
                                force_linear=tuple(cfg.get("force_linear") or ()))
        fit = gam.select_lambdas(ds, spec)
        stats = diagnostics.fit_stats(ds.response, fit.fitted, fit.edf - 1.0)
        sig = gam.factor_significance(fit)
        return fit, stats, sig
    variant = MODEL_KEYS[key]
    ts = glm.termset_for(ds, variant)
    if variant == "GLM_L":
        fit = glm.fit_ols(ds, ts)
    else:
        fit = glm.stepwise_fit(ds, ts, alpha_enter=float(cfg.get("alpha_enter") or 0.05))
    stats = diagnostics.fit_stats(ds.response, fit.fitted, fit.p - 1.0)
    return fit, stats, glm.factor_significance(fit)


def cmd_fit(cfg: dict) -> int:
    models = _parse_models(cfg.get("models") or "gam,glm-l")
    dataset_path = cfg.get("dataset") or (Path(cfg["out"]) / "dataset.json")
    if not Path(dataset_path).is_file():
        raise ConfigError(f"dataset artifact {dataset_path} not found; run ingest first")
    records, provenance = load_records(dataset_path)
    spec = FactorSpec(
        include_borough=cfg.get("include_borough"),
        include_env=bool(cfg.get("env_factors")),
    )
    ds = build_dataset(records, spec, {"source": provenance.get("source")})
    strata = [("", ds)]
    if cfg.get("stratify"):
        rule = StratifyRule.parse(cfg["stratify"])
        inside, outside = stratify(ds, rule)
        tag_in, tag_out = rule.suffixes
        strata = [(f"-{tag_in}", inside), (f"-{tag_out}", outside)]
    env_tag = "-env" if spec.include_env else ""

    out = Path(cfg["out"])
    model_dir = out / "models"
    model_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(key, suffix, sds) for suffix, sds in strata for key in models]

    def run(job):
        key, suffix, sds = job
        name = _display_name(key) + env_tag + suffix
        try:
            return name, key, sds, _fit_one(key, sds, cfg), None
        except (gam.GamError, glm.GlmError, diagnostics.DiagnosticsError, np.linalg.LinAlgError) as exc:
            return name, key, sds, None, exc

    n_workers = max(1, int(cfg.get("jobs") or 1))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    stats_path = out / "stats.json"
    all_stats = json.loads(stats_path.read_text(encoding="utf-8")) if stats_path.is_file() else {}
    failed = False
    for name, key, sds, result, exc in results:
        if exc is not None:
            failed = True
            log.error("model %s failed: %s", name, exc)
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
            continue
        fit, stats, sig = result
        payload = {
            "name": name,
            "family": key,
            "response": RESPONSE_DEFINITION,
            "n": sds.n,
            "factors": list(sds.factor_names),
            "stratum": sds.provenance.get("stratum"),
            "dataset_warnings": list(sds.provenance.get("warnings", [])),
            "seed": cfg.get("seed"),
            "fit_statistics": stats.to_dict(),
            "significance": sig,
            "model": fit.to_dict(),
        }
        _dump(payload, model_dir / f"{name}.json")
        if key != "gam" and fit.selection_trace:
            glm.write_trace(fit, model_dir / f"{name}.trace.jsonl")
        all_stats[name] = stats.to_dict()
        print(f"{name}: adj R^2 {stats.adj_r2:.4f}  MSE {stats.mse:.4f}  BIC {stats.bic:.1f}")
    _dump(all_stats, stats_path)
    return EXIT_MODEL if failed else EXIT_OK


def cmd_distfit(cfg: dict) -> int:
    dataset_path = cfg.get("dataset") or (Path(cfg["out"]) / "dataset.json")
    if not Path(dataset_path).is_file():
        raise ConfigError(f"dataset artifact {dataset_path} not found; run ingest first")
    records, _ = load_records(dataset_path)
    sample = np.log(np.array([r.price for r in records]))
    fits = [distfit.fit_mle(sample, "normal")]
    status = EXIT_OK
    try:
        fits.append(distfit.fit_mle(sample, "nig"))
    except distfit.DistFitError as exc:
        log.error("NIG fit failed: %s", exc)
        status = EXIT_MODEL
    report = distfit.density_report(sample, fits)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(report.to_dict(), out / "distfit.json")
    for f in fits:
        print(f"{f.family}: loglik {f.loglik:.2f}  {f.params.to_dict()}")
    return status


def cmd_report(cfg: dict) -> int:
    out = Path(cfg["out"])
    model_dir = Path(cfg.get("models_dir") or out / "models")
    if not model_dir.is_dir():
        raise ConfigError(f"model directory {model_dir} not found; run fit first")
    available = {p.stem: p for p in model_dir.glob("*.json")}
    if cfg.get("models"):
        names = cfg["models"] if isinstance(cfg["models"], list) else [
            s.strip() for s in str(cfg["models"]).split(",") if s.strip()]
        # accept model keys as shorthand (gam, glm-l, ...)
        names = [_display_name(n.lower()) if n.lower() in MODEL_KEYS else n for n in names]
        missing = [n for n in names if n not in available]
        if missing:
            raise ConfigError(f"no model file for: {', '.join(missing)}")
    else:
        names = sorted(available, key=_sort_key)
    if not names:
        raise ConfigError(f"no model files in {model_dir}")

    summaries = []
    for name in names:
        payload = json.loads(available[name].read_text(encoding="utf-8"))
        summaries.append(diagnostics.ModelSummary(
            name=name,
            stats=diagnostics.FitStats.from_dict(payload["fit_statistics"]),
            significance=payload["significance"],
            response=payload.get("response", RESPONSE_DEFINITION),
        ))
    try:
        report = diagnostics.compare_models(summaries)
    except diagnostics.DiagnosticsError as exc:
        raise ConfigError(str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "fixture": cmd_fixture,
    "ingest": cmd_ingest,
    "distance": cmd_distance,
    "fit": cmd_fit,
    "distfit": cmd_distfit,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hedonic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fixture", help="write the synthetic city fixture")
    common(p)

    p = sub.add_parser("ingest", help="validate a listings CSV into a dataset artifact")
    common(p)
    p.add_argument("--listings")
    p.add_argument("--offenders")
    p.add_argument("--filters", help="FilterConfig JSON")
    p.add_argument("--distance", action="store_true", default=None,
                   help="require the Distance factor (needs --offenders)")

    p = sub.add_parser("distance", help="append nearest-offender distance to a listings CSV")
    common(p)
    p.add_argument("--listings")
    p.add_argument("--offenders")

    p = sub.add_parser("fit", help="fit the requested models")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--models", help="comma list from: " + ",".join(MODEL_KEYS))
    p.add_argument("--stratify", help="e.g. dwelling=Condo")
    p.add_argument("--env-factors", dest="env_factors", action="store_true", default=None)
    p.add_argument("--no-borough", dest="include_borough", action="store_false", default=None)
    p.add_argument("--force-linear", dest="force_linear",
                   type=lambda s: [x.strip() for x in s.split(",") if x.strip()])
    p.add_argument("--k-basis", dest="k_basis", type=int)
    p.add_argument("--alpha-enter", dest="alpha_enter", type=float)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("distfit", help="Normal and NIG fits to the log-price distribution")
    common(p)
    p.add_argument("--dataset")

    p = sub.add_parser("report", help="assemble comparison tables from model files")
    common(p)
    p.add_argument("--models", help="model names in column order, e.g. GAM,GAM-env")
    p.add_argument("--models-dir", dest="models_dir")
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = sorted(set(cfg) - CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in vars(args).items():
        if key in ("config", "command", "verbose") or value is None:
            continue
        cfg[key] = value
    if not cfg.get("out"):
        raise ConfigError("--out is required")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DatasetError, geo.GeoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
