"""Command-line front end.

Subcommands: fit, cv, correlate, marginal, porescan. Every command is
deterministic given its inputs and seed, never mutates its input files,
and exits 0 only when all requested outputs were written. Numeric CSV
output is printed with 6 significant digits; JSON retains full precision.

Exit codes: 0 ok, 2 configuration/usage, 3 data, 4 model/numerics, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import mtgp, porescan, sogp
from .errors import CholeskyError, ConfigError, DataError, FitError
from .hyperopt import OptimizerConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_IO = 5

DEFAULT_K = 5
DEFAULT_RESTARTS = 8


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{value:.6g}"
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


@dataclass
class RunConfig:
    """Validated options shared by the model-driven commands."""

    data: str
    data_b: str | None
    model: str
    fuse: bool
    properties: tuple
    k: int
    seed: int
    restarts: int
    out: Path
    trace: bool
    validate: bool

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(n_restarts=self.restarts, seed=self.seed)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("FUSEGP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FUSEGP_SEED must be an integer, got {env!r}") from None
    return 0


def _apply_config_file(args):
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, attr) is None:  # flags win over the config file
            setattr(args, attr, value)


def _out_dir(args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _properties(args) -> tuple:
    choice = args.property or "both"
    if choice == "both":
        return ("phi", "hv")
    return (choice,)


def _run_config(args) -> RunConfig:
    cfg = RunConfig(
        data=args.data,
        data_b=getattr(args, "data_b", None),
        model=args.model or "sogp",
        fuse=bool(args.fuse),
        properties=_properties(args),
        k=int(args.k) if getattr(args, "k", None) is not None else DEFAULT_K,
        seed=_resolve_seed(args),
        restarts=int(args.restarts) if args.restarts is not None else DEFAULT_RESTARTS,
        out=_out_dir(args),
        trace=bool(getattr(args, "trace", False)),
        validate=not bool(args.no_validate),
    )
    if cfg.data is None:
        raise ConfigError("--data is required")
    if "mtgp" in cfg.model and cfg.properties != ("phi", "hv"):
        raise ConfigError("mtgp models require --property both")
    return cfg


def _load_data(cfg: RunConfig) -> ds.Dataset:
    data = ds.load_csv(cfg.data, validate=cfg.validate)
    if cfg.data_b:
        data = ds.merge_datasets(data, ds.load_csv(cfg.data_b, validate=cfg.validate))
    if cfg.fuse and len(data.sources) < 2:
        raise ConfigError("--fuse requires at least 2 distinct materials in the data")
    return data


def _fit_models(data: ds.Dataset, cfg: RunConfig):
    """Fit the requested model(s) on the full dataset; yields (tag, model)."""
    scaled, spec = ds.normalize(data)
    X = scaled.feature_matrix()
    sources = scaled.source_labels() if cfg.fuse else None
    source_set = scaled.sources if cfg.fuse else None
    fitted = []
    if cfg.model == "sogp":
        for prop in cfg.properties:
            model = sogp.fit(X, scaled.responses[prop], sources=sources,
                             cfg=cfg.optimizer(), source_set=source_set, norm=spec,
                             feature_names=ds.FEATURE_NAMES, response_name=prop)
            fitted.append((f"sogp_{prop}", model))
    elif cfg.model == "mtgp":
        Y = np.column_stack([scaled.responses[p] for p in cfg.properties])
        model = mtgp.fit_mt(X, Y, sources=sources, cfg=cfg.optimizer(),
                            source_set=source_set, norm=spec,
                            feature_names=ds.FEATURE_NAMES,
                            task_names=cfg.properties)
        fitted.append(("mtgp", model))
    else:
        raise ConfigError(f"unknown model kind {cfg.model!r}")
    return fitted


_METHOD_NAMES = {"sogp_phi": "SOGP phi", "sogp_hv": "SOGP hv", "mtgp": "MTGP"}


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    data = _load_data(cfg)
    if not cfg.fuse and len(data.sources) > 1:
        raise ConfigError("data holds multiple materials; pass --fuse or a single-material file")
    material = "fused" if cfg.fuse else data.sources[0]

    fitted = _fit_models(data, cfg)
    header = ["method", "material", "p", "v", "l", "h", "sr"]
    if cfg.fuse:
        header.append("s")
    rows = []
    for tag, model in fitted:
        model.save(cfg.out / f"model_{tag}.json")
        if cfg.trace and model.opt_result is not None:
            _write_json(cfg.out / f"trace_{tag}.json", model.opt_result.to_dict())
        report = ev.lengthscale_report(model)
        row = [_METHOD_NAMES[tag], material] + [report.exponent(n) for n in ("p", "v", "l", "h", "sr")]
        if cfg.fuse:
            row.append(report.source_exponent)
        rows.append(row)
    _write_csv(cfg.out / "lengthscales.csv", header, rows)
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _run_config(args)
    data = _load_data(cfg)
    kinds = ("sogp", "mtgp") if cfg.model == "both" else (cfg.model,)
    for kind in kinds:
        if kind == "mtgp" and cfg.properties != ("phi", "hv"):
            raise ConfigError("mtgp models require --property both")

    reports = []
    for kind in kinds:
        for material in data.sources:
            rows = [i for i, pt in enumerate(data.points) if pt.s == material]
            single = data.subset(np.asarray(rows))
            reports.append(ev.run_cv(single, kind, fused=False, k=cfg.k,
                                     seed=cfg.seed, cfg=cfg.optimizer(),
                                     properties=cfg.properties))
        if cfg.fuse:
            reports.append(ev.run_cv(data, kind, fused=True, k=cfg.k,
                                     seed=cfg.seed, cfg=cfg.optimizer(),
                                     properties=cfg.properties))

    header = ["model", "train", "test", "phi_rmse", "hv_rmse"]
    rows = []
    for report in reports:
        materials = []
        for r in report.rows:
            if r.test_material not in materials:
                materials.append(r.test_material)
        for material in materials:
            by_prop = {r.property_name: r.mean_rmse
                       for r in report.rows if r.test_material == material}
            test = material if material != "all" else report.train_spec
            rows.append([report.model_kind.upper(), report.train_spec, test,
                         by_prop.get("phi", ""), by_prop.get("hv", "")])
    _write_csv(cfg.out / "cv_report.csv", header, rows)
    _write_json(cfg.out / "cv_report.json", [r.to_dict() for r in reports])
    return EXIT_OK


def cmd_correlate(args) -> int:
    out = _out_dir(args)
    validate = not bool(args.no_validate)
    if args.data is None or args.data_b is None:
        raise ConfigError("correlate requires --data and --data-b")
    data_a = ds.load_csv(args.data, validate=validate)
    data_b = ds.load_csv(args.data_b, validate=validate)
    table = ev.build_correlation_table(data_a, data_b)

    for name, matrix in (("pearson", table.pearson), ("spearman", table.spearman)):
        header = [""] + table.labels
        rows = [[label] + list(matrix[i]) for i, label in enumerate(table.labels)]
        _write_csv(out / f"correlations_{name}.csv", header, rows)
    _write_json(out / "correlations.json", table.to_dict())

    scatter = ev.ved_scatter_rows(data_a) + ev.ved_scatter_rows(data_b)
    _write_csv(out / "ved_scatter.csv",
               ["sample_id", "material", "ved", "log10_ved", "property", "value"],
               [[r["sample_id"], r["material"], r["ved"], r["log10_ved"],
                 r["property"], r["value"]] for r in scatter])
    return EXIT_OK


def _load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "sogp":
        return sogp.SogpModel.from_dict(doc)
    if kind == "mtgp":
        return mtgp.MtgpModel.from_dict(doc)
    raise ConfigError(f"{path}: unknown model kind {kind!r}")


def cmd_marginal(args) -> int:
    out = _out_dir(args)
    model = _load_model(args.model_file)
    grid = int(args.grid) if args.grid is not None else 50
    sweep = ev.marginal_sweep(model, args.feature, grid_size=grid)

    rows = []
    for curve in sweep.curves:
        material = curve.material if curve.material is not None else ""
        for i, value in enumerate(sweep.grid):
            rows.append([sweep.feature, value, material, curve.property_name,
                         curve.mean[i], curve.lower[i], curve.upper[i]])
    _write_csv(out / f"marginal_{sweep.feature}.csv",
               ["feature", "value", "material", "property", "mean", "lo2sd", "hi2sd"],
               rows)
    _write_json(out / f"marginal_{sweep.feature}.json", {
        "feature": sweep.feature,
        "grid": sweep.grid.tolist(),
        "curves": [
            {
                "material": c.material,
                "property": c.property_name,
                "mean": c.mean.tolist(),
                "lo2sd": c.lower.tolist(),
                "hi2sd": c.upper.tolist(),
            }
            for c in sweep.curves
        ],
    })
    return EXIT_OK


_IMAGE_SUFFIXES = (".pgm", ".png")


def _porescan_one(path: Path, args):
    img = porescan.load_gray(path)
    margin = int(args.margin) if args.margin is not None else 0
    radius = int(args.dilate_radius) if args.dilate_radius is not None else 1
    return porescan.analyze_image(img, margin=margin, dilate_radius=radius,
                                  invert=bool(args.invert))


_PORE_HEADER = ["image", "label", "area", "perimeter", "centroid_x", "centroid_y", "radius"]
_SUMMARY_HEADER = ["image", "count", "phi_pct", "mean_radius", "std_radius",
                   "mean_perimeter", "std_perimeter"]


def _summary_row(name, stats):
    def _nn(v):
        return "" if (isinstance(v, float) and np.isnan(v)) else v

    return [name, stats.count, stats.phi, _nn(stats.mean_radius), _nn(stats.std_radius),
            _nn(stats.mean_perimeter), _nn(stats.std_perimeter)]


def cmd_porescan(args) -> int:
    out = _out_dir(args)
    target = Path(args.path)
    if target.is_dir():
        files = sorted(p for p in target.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        summary_rows, results, errors = [], [], []
        for path in files:
            try:
                stats, labels = _porescan_one(path, args)
            except (DataError, ValueError, OSError) as err:
                errors.append({"image": path.name, "error": str(err)})
                continue
            summary_rows.append(_summary_row(path.name, stats))
            results.append({"image": path.name, **stats.to_dict()})
            if args.dump_labels:
                porescan.save_label_image(out / f"{path.stem}_labels.pgm", labels)
        _write_csv(out / "porescan_summary.csv", _SUMMARY_HEADER, summary_rows)
        _write_json(out / "porescan_summary.json",
                    {"images": results, "errors": errors})
        return EXIT_OK

    stats, labels = _porescan_one(target, args)
    rows = [[target.name, p.label, p.area, p.perimeter,
             p.centroid[0], p.centroid[1], p.radius] for p in stats.pores]
    _write_csv(out / f"{target.stem}_pores.csv", _PORE_HEADER, rows)
    _write_json(out / f"{target.stem}_stats.json", stats.to_dict())
    if args.dump_labels:
        porescan.save_label_image(out / f"{target.stem}_labels.pgm", labels)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusegp",
        description="Process-property GP modeling, evaluation, and porosity image analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, porescan_mode=False):
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--config", help="JSON config file; explicit flags win")
        if not porescan_mode:
            p.add_argument("--seed", type=int, default=None,
                           help="RNG seed (fallback: FUSEGP_SEED, then 0)")
            p.add_argument("--no-validate", action="store_true", default=None,
                           help="disable design-range validation on load")

    def add_model_flags(p):
        p.add_argument("--data", help="process-property CSV")
        p.add_argument("--data-b", dest="data_b", help="second CSV to merge before fitting")
        p.add_argument("--fuse", action="store_true", default=None,
                       help="fuse materials through the categorical source kernel")
        p.add_argument("--property", choices=["phi", "hv", "both"], default=None)
        p.add_argument("--restarts", type=int, default=None,
                       help=f"optimizer restarts (default {DEFAULT_RESTARTS})")

    p_fit = sub.add_parser("fit", help="fit model(s) and report lengthscales")
    add_common(p_fit)
    add_model_flags(p_fit)
    p_fit.add_argument("--model", choices=["sogp", "mtgp"], default=None)
    p_fit.add_argument("--trace", action="store_true", default=None,
                       help="dump per-restart optimizer traces")
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="cross-validated RMSE per configuration")
    add_common(p_cv)
    add_model_flags(p_cv)
    p_cv.add_argument("--model", choices=["sogp", "mtgp", "both"], default=None)
    p_cv.add_argument("--k", type=int, default=None, help=f"fold count (default {DEFAULT_K})")
    p_cv.set_defaults(func=cmd_cv)

    p_corr = sub.add_parser("correlate", help="cross-material correlation tables")
    add_common(p_corr)
    p_corr.add_argument("--data", help="first single-material CSV")
    p_corr.add_argument("--data-b", dest="data_b", help="second single-material CSV")
    p_corr.set_defaults(func=cmd_correlate)

    p_marg = sub.add_parser("marginal", help="marginal feature sweep of a fitted model")
    p_marg.add_argument("--model-file", dest="model_file", required=True)
    p_marg.add_argument("--feature", required=True)
    p_marg.add_argument("--grid", type=int, default=None, help="grid size (default 50)")
    add_common(p_marg, porescan_mode=True)
    p_marg.set_defaults(func=cmd_marginal)

    p_pore = sub.add_parser("porescan", help="porosity pipeline on an image or directory")
    p_pore.add_argument("path", help="graymap/PNG file or directory of them")
    p_pore.add_argument("--margin", type=int, default=None, help="border crop in px (default 0)")
    p_pore.add_argument("--dilate-radius", dest="dilate_radius", type=int, default=None,
                        help="dilation disk radius in px (default 1)")
    p_pore.add_argument("--invert", action="store_true", default=None,
                        help="treat bright pixels as pores")
    p_pore.add_argument("--dump-labels", dest="dump_labels", action="store_true", default=None,
                        help="write label images for visual audit")
    add_common(p_pore, porescan_mode=True)
    p_pore.set_defaults(func=cmd_porescan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, CholeskyError) as err:
        print(f"model error: {err}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
