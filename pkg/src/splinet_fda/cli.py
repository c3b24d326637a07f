"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .bases import BASIS_TYPES, SingularBasisError, build_basis, net_table
from .fda_classify import ClassModel, DistanceTables, evaluate, search_counts
from .imaging import DataFormatError
from .knots_ddk import STOP_RULES, cached_reference_curve, default_r_max, select_knots
from .projection import DiscreteCurveSet, project_data
from .spline_core import KnotVector, family_to_dict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.from_file(args.config) if getattr(args, "config", None) else pl.PipelineConfig()
    over = {}
    for name in ("images", "labels", "test_images", "test_labels", "scenario", "seed", "k", "knot_budget",
                 "r_max", "M", "rho", "stop_rule", "L", "restarts", "validation"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "per_class", None):
        over["per_class"] = tuple(args.per_class)
    if getattr(args, "fractions", None):
        over["fractions"] = tuple(args.fractions)
        over["per_class"] = None
        cfg.per_class = None
    if getattr(args, "full_scale", False):
        over["full_scale"] = True
    if getattr(args, "no_budget", False):
        cfg.knot_budget = None
    return cfg.replace(**over).validate()


def _add_data_flags(p):
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--images", help="IDX image file (optionally gzipped) or CSV file")
    p.add_argument("--labels", help="IDX label file; omit for CSV input")
    p.add_argument("--test-images", dest="test_images")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--scenario", choices=sorted(pl.SCENARIOS))
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class", dest="per_class", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--full-scale", dest="full_scale", action="store_true", help="use every available image")


def _add_model_flags(p):
    p.add_argument("-k", "--order", dest="k", type=int)
    p.add_argument("--knot-budget", dest="knot_budget", type=int)
    p.add_argument("--no-budget", dest="no_budget", action="store_true", help="let the stopping rule decide")
    p.add_argument("--r-max", dest="r_max", type=int)
    p.add_argument("-M", dest="M", type=int, help="Monte-Carlo replications of the reference curve")
    p.add_argument("--rho", type=float, help="bootstrap fraction of curves per greedy step")
    p.add_argument("--stop-rule", dest="stop_rule", choices=STOP_RULES)
    p.add_argument("-L", dest="L", type=int, help="tolerated non-improving search steps")
    p.add_argument("--restarts", type=int)
    p.add_argument("--validation", choices=("holdout", "exclude10"))
    p.add_argument("--cache-dir", dest="cache_dir", help=f"overrides ${pl.CACHE_ENV}")


def _write(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        pl.atomic_write(path, text)


# --------------------------------------------------------------------------
# dataset files


def save_dataset(data: pl.Dataset, path) -> None:
    arrays = {"args": data.train.args, "class_labels": np.array(data.class_labels),
              "fingerprint": np.array(data.fingerprint)}
    for name in ("train", "val", "test"):
        part = getattr(data, name)
        arrays[f"{name}_values"] = part.values
        arrays[f"{name}_labels"] = part.labels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez_compressed(tmp, **arrays)
    tmp.replace(path)


def load_dataset(path) -> pl.Dataset:
    try:
        z = np.load(path)
    except (OSError, ValueError) as exc:
        raise pl.DataError(f"cannot read dataset {path}: {exc}") from exc
    args = z["args"]
    parts = [pl.LabeledCurves(args, z[f"{n}_values"], z[f"{n}_labels"]) for n in ("train", "val", "test")]
    return pl.Dataset(*parts, [int(c) for c in z["class_labels"]], str(z["fingerprint"]))


def read_curves_text(path) -> DiscreteCurveSet:
    """Common-grid delimited text: value columns followed by the argument column."""
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise pl.DataError(f"cannot read curves from {path}: {exc}") from exc
    return DiscreteCurveSet.from_matrix(m)


def read_knots(spec: str) -> KnotVector:
    """Knots from a JSON file (list, or object with a ``knots`` field) or a comma list."""
    p = Path(spec)
    if p.exists():
        d = json.loads(p.read_text())
        return KnotVector(d["knots"] if isinstance(d, dict) else d)
    return KnotVector([float(v) for v in spec.split(",")])


def _models_from(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise pl.DataError(f"cannot read models from {path}: {exc}") from exc
    return [ClassModel.from_dict(m) for m in d["models"]], d


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args):
    cfg = _config(args)
    data = pl.ingest(cfg)
    save_dataset(data, args.out)
    sizes = {n: len(getattr(data, n)) for n in ("train", "val", "test")}
    print(json.dumps({"out": str(args.out), "curve_length": int(data.train.args.size), **sizes}))


def cmd_knots(args):
    if args.data:
        data = load_dataset(args.data)
        part = getattr(data, args.split)
        if args.label is None:
            raise pl.PipelineError("--class is required with --data")
        X = part.values[part.labels == args.label]
        grid = part.args
    else:
        d = read_curves_text(args.curves)
        X, grid = d.values, d.args
    if X.shape[0] == 0:
        raise pl.DataError("no curves for the requested class")
    G = grid.size
    r_max = default_r_max(G) if args.r_max is None else args.r_max
    root = pl.cache_dir(args.cache_dir)
    ref = None
    if args.stop_rule != "none":
        ref = cached_reference_curve(G, r_max, args.M, args.seed, None if root is None else root / "reference")
    mean = DiscreteCurveSet.common(grid, X.mean(axis=0, keepdims=True))
    if args.stage == "mean":
        sel = select_knots(mean, None, ref, r_max, args.stop_rule, 1.0, args.seed)
    else:
        start = read_knots(args.start_knots) if args.start_knots else select_knots(
            mean, None, ref, r_max, args.stop_rule, 1.0, args.seed).knots
        centered = DiscreteCurveSet.common(grid, X - mean.values)
        sel = select_knots(centered, start, ref, r_max, args.stop_rule, args.rho, args.seed + 1)
    _write(args.out, json.dumps(sel.to_dict(), indent=1) + "\n")


def cmd_basis(args):
    if args.knots:
        knots = read_knots(args.knots)
    else:
        knots = pl.equidistant_knots(args.n)
    b = build_basis(knots, args.order, args.type)
    out = {"basis_type": b.basis_type, "family": family_to_dict(b.family), "net": net_table(b)}
    _write(args.out, json.dumps(out) + "\n")


def cmd_project(args):
    if args.curves:
        d = read_curves_text(args.curves)
    else:
        curves = []
        for f in args.curve_files:
            try:
                curves.append(np.loadtxt(f, delimiter=",", ndmin=2))
            except (OSError, ValueError) as exc:
                raise pl.DataError(f"cannot read {f}: {exc}") from exc
        d = DiscreteCurveSet.from_list(curves)
    knots = read_knots(args.knots) if args.knots else pl.equidistant_knots(args.n, *_range(d))
    res = project_data(d, knots, args.order, args.type)
    buf = "\n".join(",".join(repr(float(v)) for v in row) for row in res.coeff) + "\n"
    _write(args.coeff_out, buf)
    if args.out:
        pl.atomic_write(args.out, json.dumps(family_to_dict(res.projected)) + "\n")


def _range(d: DiscreteCurveSet):
    if d.is_common:
        return float(d.args[0]), float(d.args[-1])
    return max(c[0, 0] for c in d.curves), min(c[-1, 0] for c in d.curves)


def cmd_train(args):
    cfg = _config(args)
    data = load_dataset(args.data)
    knots = pl.select_class_knots(data, cfg, pl.cache_dir(args.cache_dir))
    models = pl.fit_models(data, knots, cfg)
    out = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "models": [m.to_dict() for m in models]}
    pl.atomic_write(args.out, json.dumps(out) + "\n")
    print(json.dumps({"classes": len(models), "dims": [m.dim for m in models]}))


def cmd_search(args):
    models, doc = _models_from(args.models)
    data = load_dataset(args.data)
    part = getattr(data, args.split)
    tables = DistanceTables(models, part.args, part.values)
    res = search_counts(tables, part.labels, args.L, args.restarts, args.seed, args.init_max)
    doc["models"] = [m.with_count(int(n)).to_dict() for m, n in zip(sorted(models, key=lambda m: m.label), res.n_opt)]
    doc["search"] = {"n_opt": [int(v) for v in res.n_opt], "accuracy": res.accuracy,
                     "a": [float(v) for v in res.a], "s": [float(v) for v in res.s]}
    pl.atomic_write(args.out or args.models, json.dumps(doc) + "\n")
    print(json.dumps(doc["search"]))


def cmd_classify(args):
    models, _ = _models_from(args.models)
    counts = args.counts
    if args.curves:
        d = read_curves_text(args.curves)
        vals, grid, targets = d.values, d.args, None
    else:
        data = load_dataset(args.data)
        part = getattr(data, args.split)
        vals, grid, targets = part.values, part.args, part.labels
    tables = DistanceTables(models, grid, vals)
    if counts is None:
        counts = [m.n_retained for m in tables.models]
    out = tables.classify(counts)
    lines = ["prediction,target" if targets is not None else "prediction"]
    for i, lab in enumerate(out.labels):
        lines.append(f"{lab},{targets[i]}" if targets is not None else f"{lab}")
    _write(args.out, "\n".join(lines) + "\n")


def cmd_evaluate(args):
    pred, target = pl.read_predictions(args.predictions)
    rep = evaluate(pred, target, args.n_classes)
    text = pl.confusion_table(rep) + "\n" + pl.metrics_table({"run": rep}) + "\n" + pl.per_class_table(rep)
    _write(args.out, text)


def cmd_scenario(args):
    cfg = _config(args)
    root = pl.cache_dir(args.cache_dir)
    names = sorted(pl.SCENARIOS) if args.all else [cfg.scenario]
    out = Path(args.out)
    reports = {}
    data_by_flat = {}
    for name in names:
        c = cfg.replace(scenario=name)
        if pl.SCENARIOS[name][1] == "equidistant":
            for f in pl.DDK_FIELDS:
                setattr(c, f, None)
        c.validate()
        if c.flattening not in data_by_flat:
            data_by_flat[c.flattening] = pl.ingest(c)
        art = pl.run_scenario(c, data_by_flat[c.flattening], root, log=lambda s: print(s, file=sys.stderr))
        pl.save_artifacts(art, out / f"{name}.json")
        if art.test_metrics is not None:
            reports[name] = art.test_metrics
        print(json.dumps({"scenario": name, "n_opt": [int(v) for v in art.search.n_opt],
                          "val_accuracy": round(art.search.accuracy, 4),
                          "test_accuracy": None if art.test_metrics is None else round(art.test_metrics.accuracy, 4),
                          "seconds": art.provenance["seconds"]}))
    if len(reports) > 1:
        pl.atomic_write(out / "scenarios.csv", pl.metrics_table(reports))


def cmd_report(args):
    if args.fixture:
        pred, target = pl.read_predictions(args.fixture)
        rep = evaluate(pred, target, args.n_classes)
        _write(None if args.out is None else str(Path(args.out) / "confusion_fixture.csv"), pl.confusion_table(rep))
        return
    if not args.artifacts:
        raise pl.PipelineError("give --artifacts or --fixture")
    if args.out is None:
        raise pl.PipelineError("--out is required with --artifacts")
    reports = {}
    for path in args.artifacts:
        art = pl.load_artifacts(path)
        pl.report(art, Path(args.out) / art.scenario)
        reports[art.scenario] = art.test_metrics
    if len(reports) > 1:
        pl.atomic_write(Path(args.out) / "scenarios.csv", pl.metrics_table(reports))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splinet-fda", description="Spline-based functional classification of images")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="read, split and flatten images")
    _add_data_flags(p)
    p.add_argument("--out", required=True, help="output .npz file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("knots", help="data-driven knot selection for one class")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help=".npz file from ingest")
    src.add_argument("--curves", help="delimited text, argument column last")
    p.add_argument("--class", dest="label", type=int)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--stage", default="mean", choices=("mean", "centered"))
    p.add_argument("--start-knots", dest="start_knots")
    p.add_argument("--r-max", dest="r_max", type=int)
    p.add_argument("-M", dest="M", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--stop-rule", dest="stop_rule", default="first_crossing", choices=STOP_RULES)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_knots)

    p = sub.add_parser("basis", help="build a spline basis")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--knots", help="JSON file or comma-separated knots")
    g.add_argument("--n", type=int, help="number of equidistant internal knots on [0, 1]")
    p.add_argument("-k", "--order", type=int, default=3)
    p.add_argument("--type", default="splinet", choices=BASIS_TYPES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("project", help="project discretized curves onto a spline space")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--curves", help="common-grid delimited text, argument column last")
    g.add_argument("--curve-files", dest="curve_files", nargs="+", help="one two-column file per curve")
    g2 = p.add_mutually_exclusive_group(required=True)
    g2.add_argument("--knots")
    g2.add_argument("--n", type=int)
    p.add_argument("-k", "--order", type=int, default=3)
    p.add_argument("--type", default="splinet", choices=BASIS_TYPES)
    p.add_argument("--coeff-out", dest="coeff_out")
    p.add_argument("--out", help="projected splines as JSON")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", help="select knots and fit class models")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--scenario", choices=sorted(pl.SCENARIOS))
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="choose eigenfunction counts on validation data")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("-L", dest="L", type=int, default=5)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--init-max", dest="init_max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="defaults to updating --models in place")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("classify", help="classify curves with fitted models")
    p.add_argument("--models", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data")
    g.add_argument("--curves")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--counts", type=int, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="metrics from a prediction,target file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scenario", help="run the full workflow for one or all scenarios")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--all", action="store_true", help="run S1, S2 and S3")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("report", help="render tables from artifacts or a prediction fixture")
    p.add_argument("--artifacts", nargs="+")
    p.add_argument("--fixture", help="prediction,target file rendered as a confusion table")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (SingularBasisError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
