"""End-to-end image classification workflow.

Stages: ingest (read, split, pad, flatten) -> knots per class -> class
models -> eigencount search on the validation split -> test evaluation.

Randomness comes from one root seed.  ``np.random.SeedSequence(seed)`` is
spawned into four children used, in this order, for the stratified split,
the white-noise reference curve, knot selection (spawned again per class)
and the eigencount search restarts.  A change of scenario therefore leaves
the split and the search seeds untouched.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bases import SingularBasisError
from .fda_classify import (
    ClassModel,
    DistanceTables,
    MetricsReport,
    SearchResult,
    evaluate,
    fit_class,
    rates,
    search_counts,
)
from .imaging import DataFormatError, images_to_curves, load_images
from .knots_ddk import KnotSelection, cached_reference_curve, default_r_max, select_knots
from .projection import DiscreteCurveSet
from .spline_core import KnotVector

CACHE_ENV = "SPLINET_FDA_CACHE"
SCENARIOS = {
    "S1": ("hilbert", "ddk"),
    "S2": ("row", "ddk"),
    "S3": ("row", "equidistant"),
}
DESK_PER_CLASS = (1000, 200, 200)
FULL_POOLED_FRACTIONS = (6 / 7, 1 / 14, 1 / 14)
DDK_FIELDS = ("r_max", "M", "rho", "stop_rule")


class PipelineError(Exception):
    exit_code = 1


class DataError(PipelineError):
    exit_code = 2


class NumericError(PipelineError):
    exit_code = 3


# --------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    """Workflow settings; unset DDK fields fall back to the defaults below."""

    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    scenario: str = "S1"
    seed: int = 0
    k: int = 3
    per_class: tuple | None = DESK_PER_CLASS
    fractions: tuple | None = None
    full_scale: bool = False
    knot_budget: int | None = 100
    r_max: int | None = None
    M: int | None = None
    rho: float | None = None
    stop_rule: str | None = None
    L: int = 5
    restarts: int = 3
    init_max: int = 10
    validation: str = "holdout"
    normalize: bool = True

    def __post_init__(self):
        if self.per_class is not None:
            self.per_class = tuple(int(v) for v in self.per_class)
        if self.fractions is not None:
            self.fractions = tuple(float(v) for v in self.fractions)

    def validate(self) -> "PipelineConfig":
        if self.scenario not in SCENARIOS:
            raise PipelineError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if SCENARIOS[self.scenario][1] == "equidistant":
            used = [f for f in DDK_FIELDS if getattr(self, f) is not None]
            if used:
                raise PipelineError(f"scenario {self.scenario} uses equidistant knots; drop {', '.join(used)}")
        if self.fractions is not None:
            if len(self.fractions) != 3 or any(not 0 < f < 1 for f in self.fractions) or sum(self.fractions) > 1 + 1e-12:
                raise PipelineError("split fractions must be three numbers in (0, 1) with sum at most 1")
        if self.per_class is not None and (len(self.per_class) != 3 or min(self.per_class) < 0):
            raise PipelineError("per-class split sizes must be three nonnegative integers")
        if self.validation not in ("holdout", "exclude10"):
            raise PipelineError("validation must be 'holdout' or 'exclude10'")
        if self.k < 0:
            raise PipelineError("spline order must be nonnegative")
        if self.knot_budget is not None and self.knot_budget < max(self.k, 1):
            raise PipelineError("knot budget is smaller than the spline order")
        if self.rho is not None and not 0 < self.rho <= 1:
            raise PipelineError("rho must lie in (0, 1]")
        return self

    @property
    def flattening(self) -> str:
        return SCENARIOS[self.scenario][0]

    @property
    def knot_method(self) -> str:
        return SCENARIOS[self.scenario][1]

    def ddk(self) -> dict:
        return {
            "r_max": self.r_max,
            "M": 100 if self.M is None else int(self.M),
            "rho": 1.0 if self.rho is None else float(self.rho),
            "stop_rule": "first_crossing" if self.stop_rule is None else self.stop_rule,
        }

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("per_class", "fractions"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def config_hash(self, keys=None) -> str:
        d = self.to_dict()
        for p in ("images", "labels", "test_images", "test_labels"):
            d.pop(p)
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise PipelineError(f"{path}: configuration must be a mapping")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise PipelineError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**raw)

    def replace(self, **overrides) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def root_seeds(seed: int) -> dict:
    split, ref, ddk, search = np.random.SeedSequence(int(seed)).spawn(4)
    return {"split": split, "reference": ref, "ddk": ddk, "search": search}


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def cache_dir(explicit=None) -> Path | None:
    """Cache location: explicit argument, else the environment variable, else none."""
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# ingestion


@dataclass(eq=False)
class LabeledCurves:
    args: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.size

    def curves(self, label=None) -> DiscreteCurveSet:
        v = self.values if label is None else self.values[self.labels == label]
        return DiscreteCurveSet.common(self.args, v)


@dataclass(eq=False)
class Dataset:
    train: LabeledCurves
    val: LabeledCurves
    test: LabeledCurves
    class_labels: list
    fingerprint: str = ""


def stratified_split(labels, per_class=None, fractions=None, seed=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices of train/validation/test parts with the same share of every class.

    ``per_class`` gives fixed counts per class, otherwise ``fractions`` of each
    class (rounded down) are taken.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for lab in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        if per_class is not None:
            sizes = list(per_class)
            if sum(sizes) > idx.size:
                raise DataError(f"class {lab} has {idx.size} items, {sum(sizes)} requested")
        else:
            sizes = [int(np.floor(f * idx.size + 1e-9)) for f in fractions]
        pos = 0
        for part, n in zip(parts, sizes):
            part.append(idx[pos:pos + n])
            pos += n
    return tuple(np.sort(np.concatenate(p)).astype(int) for p in parts)


def _curves(images, labels, idx, cfg: PipelineConfig) -> LabeledCurves:
    args, values = images_to_curves(images[idx], cfg.flattening, cfg.normalize)
    return LabeledCurves(args, values, np.asarray(labels)[idx].astype(int))


def _read(images, labels):
    try:
        return load_images(images, labels)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    except DataFormatError as exc:
        raise DataError(str(exc)) from exc


def ingest(cfg: PipelineConfig, images=None, labels=None) -> Dataset:
    """Read images, split them stratified by class and turn them into curves.

    With separate test files, the training file feeds the training split and
    the test file is halved into validation and test parts (stratified).
    """
    cfg.validate()
    seeds = root_seeds(cfg.seed)
    if images is None:
        if cfg.images is None:
            raise PipelineError("no image data configured")
        images, labels = _read(cfg.images, cfg.labels)
    images = np.asarray(images)
    labels = np.asarray(labels).astype(int)
    if images.shape[0] != labels.size:
        raise DataError(f"{images.shape[0]} images but {labels.size} labels")
    split_seed = _int_seed(seeds["split"])
    if cfg.test_images is not None:
        t_images, t_labels = _read(cfg.test_images, cfg.test_labels)
        if cfg.full_scale or cfg.per_class is None:
            tr = np.arange(labels.size)
            va, te, _ = stratified_split(t_labels, None, (0.5, 0.5, 0.0), split_seed)
        else:
            n_tr, n_va, n_te = cfg.per_class
            tr, _, _ = stratified_split(labels, (n_tr, 0, 0), None, split_seed)
            va, te, _ = stratified_split(t_labels, (n_va, n_te, 0), None, split_seed)
        train = _curves(images, labels, tr, cfg)
        val = _curves(t_images, t_labels, va, cfg)
        test = _curves(t_images, t_labels, te, cfg)
    else:
        if cfg.full_scale:
            tr, va, te = stratified_split(labels, None, FULL_POOLED_FRACTIONS, split_seed)
        elif cfg.per_class is not None:
            tr, va, te = stratified_split(labels, cfg.per_class, None, split_seed)
        elif cfg.fractions is not None:
            tr, va, te = stratified_split(labels, None, cfg.fractions, split_seed)
        else:
            raise PipelineError("either per-class sizes or split fractions are required")
        train, val, test = (_curves(images, labels, i, cfg) for i in (tr, va, te))
    h = hashlib.sha256()
    for part in (train, val, test):
        h.update(np.ascontiguousarray(part.values).tobytes())
        h.update(part.labels.tobytes())
    return Dataset(train, val, test, sorted(np.unique(train.labels).tolist()), h.hexdigest()[:16])


# --------------------------------------------------------------------------
# knots


def equidistant_knots(n_internal: int, start: float = 0.0, end: float = 1.0) -> KnotVector:
    return KnotVector(np.linspace(start, end, n_internal + 2))


def class_knots(X: np.ndarray, args: np.ndarray, cfg: PipelineConfig, ref, seed: int):
    """Mean-stage and centered-stage selections for one class.

    With a knot budget the mean stage obeys the stopping rule (capped at the
    budget) and the centered stage then adds knots until the budget is met.
    """
    ddk = cfg.ddk()
    G = args.size
    r_max = default_r_max(G) if ddk["r_max"] is None else int(ddk["r_max"])
    budget = cfg.knot_budget
    mean = DiscreteCurveSet.common(args, X.mean(axis=0, keepdims=True))
    cap = r_max if budget is None else min(r_max, budget)
    s_mean = select_knots(mean, None, ref, cap, ddk["stop_rule"], 1.0, seed)
    centered = DiscreteCurveSet.common(args, X - mean.values)
    if budget is None:
        s_cent = select_knots(centered, s_mean.knots, ref, r_max, ddk["stop_rule"], ddk["rho"], seed + 1)
    else:
        s_cent = select_knots(centered, s_mean.knots, None, budget - s_mean.n_selected, "none", ddk["rho"], seed + 1)
    return s_mean, s_cent


def _knot_cache_path(root: Path, key: str) -> Path:
    return root / "knots" / f"{key}.json"


def select_class_knots(data: Dataset, cfg: PipelineConfig, cache=None, log=None) -> dict:
    """Per-class ``{'mean': KnotSelection|None, 'centered': KnotSelection|None, 'knots': KnotVector}``."""
    args = data.train.args
    out = {}
    if cfg.knot_method == "equidistant":
        kv = equidistant_knots(cfg.knot_budget, args[0], args[-1])
        for lab in data.class_labels:
            out[lab] = {"mean": None, "centered": None, "knots": kv}
        return out
    seeds = root_seeds(cfg.seed)
    ddk = cfg.ddk()
    G = args.size
    r_max = default_r_max(G) if ddk["r_max"] is None else int(ddk["r_max"])
    ref_root = None if cache is None else cache / "reference"
    ref = cached_reference_curve(G, r_max, ddk["M"], _int_seed(seeds["reference"]), ref_root)
    class_seeds = seeds["ddk"].spawn(len(data.class_labels))
    key_cfg = cfg.config_hash(["scenario", "seed", "knot_budget", "r_max", "M", "rho", "stop_rule", "normalize"])
    for lab, ss in zip(data.class_labels, class_seeds):
        X = data.train.values[data.train.labels == lab]
        key = hashlib.sha256(f"{key_cfg}:{lab}:".encode() + np.ascontiguousarray(X).tobytes()).hexdigest()[:24]
        path = None if cache is None else _knot_cache_path(cache, key)
        if path is not None and path.exists():
            d = json.loads(path.read_text())
            s_mean, s_cent = KnotSelection.from_dict(d["mean"]), KnotSelection.from_dict(d["centered"])
        else:
            s_mean, s_cent = class_knots(X, args, cfg, ref, _int_seed(ss) % (2**31))
            if path is not None:
                atomic_write(path, json.dumps({"mean": s_mean.to_dict(), "centered": s_cent.to_dict()}))
        if log:
            log(f"class {lab}: {s_mean.n_selected} mean knots, {s_cent.knots.n_internal} total")
        out[lab] = {"mean": s_mean, "centered": s_cent, "knots": s_cent.knots}
    return out


# --------------------------------------------------------------------------
# scenario run


@dataclass(eq=False)
class RunArtifacts:
    config: dict
    config_hash: str
    class_labels: list
    knots: dict
    models: list
    search: SearchResult
    val_metrics: MetricsReport
    test_metrics: MetricsReport | None
    w_bar: np.ndarray | None
    w_bar_space: np.ndarray | None
    provenance: dict = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.config["scenario"]

    def to_dict(self) -> dict:
        def sel(d):
            return None if d is None else d.to_dict()

        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "class_labels": [int(c) for c in self.class_labels],
            "knots": {
                str(lab): {
                    "mean": sel(v["mean"]),
                    "centered": sel(v["centered"]),
                    "knots": [float(x) for x in v["knots"].values],
                }
                for lab, v in self.knots.items()
            },
            "models": [m.to_dict() for m in self.models],
            "search": {
                "n_opt": [int(v) for v in self.search.n_opt],
                "accuracy": float(self.search.accuracy),
                "a": [float(v) for v in self.search.a],
                "s": [float(v) for v in self.search.s],
                "paths": [[[list(n), float(v)] for n, v in p] for p in self.search.paths],
            },
            "val_metrics": self.val_metrics.to_dict(),
            "test_metrics": None if self.test_metrics is None else self.test_metrics.to_dict(),
            "w_bar": None if self.w_bar is None else [float(v) for v in self.w_bar],
            "w_bar_space": None if self.w_bar_space is None else [float(v) for v in self.w_bar_space],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunArtifacts":
        def sel(x):
            return None if x is None else KnotSelection.from_dict(x)

        def metrics(x):
            if x is None:
                return None
            return MetricsReport(
                np.array(x["confusion"], dtype=np.int64),
                x["accuracy"],
                np.array(x["class_accuracy"]),
                np.array(x["precision"]),
                np.array(x["recall"]),
                np.array(x["f1"]),
            )

        s = d["search"]
        search = SearchResult(
            np.array(s["n_opt"]), s["accuracy"], np.array(s["a"]), np.array(s["s"]),
            [[(tuple(n), v) for n, v in p] for p in s["paths"]],
        )
        knots = {
            int(lab): {"mean": sel(v["mean"]), "centered": sel(v["centered"]), "knots": KnotVector(v["knots"])}
            for lab, v in d["knots"].items()
        }
        return cls(
            d["config"], d["config_hash"], d["class_labels"], knots,
            [ClassModel.from_dict(m) for m in d["models"]], search,
            metrics(d["val_metrics"]), metrics(d["test_metrics"]),
            None if d["w_bar"] is None else np.array(d["w_bar"]),
            None if d["w_bar_space"] is None else np.array(d["w_bar_space"]),
            d.get("provenance", {}),
        )


def save_artifacts(art: RunArtifacts, path) -> None:
    atomic_write(path, json.dumps(art.to_dict(), sort_keys=True))


def load_artifacts(path) -> RunArtifacts:
    try:
        return RunArtifacts.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read artifacts from {path}: {exc}") from exc


def fit_models(data: Dataset, knots: dict, cfg: PipelineConfig, train: LabeledCurves | None = None) -> list:
    train = data.train if train is None else train
    models = []
    for lab in data.class_labels:
        kd = knots[lab]
        mean_knots = kd["mean"].knots if kd["mean"] is not None else kd["knots"]
        models.append(fit_class(train.curves(lab), mean_knots, kd["knots"], cfg.k, lab))
    return models


def _exclusion_split(train: LabeledCurves, seed: int) -> tuple[LabeledCurves, LabeledCurves]:
    rng = np.random.default_rng(seed)
    hold = np.zeros(len(train), dtype=bool)
    for lab in np.unique(train.labels):
        idx = rng.permutation(np.flatnonzero(train.labels == lab))
        hold[idx[: max(1, int(round(0.1 * idx.size)))]] = True
    keep = ~hold
    return (
        LabeledCurves(train.args, train.values[keep], train.labels[keep]),
        LabeledCurves(train.args, train.values[hold], train.labels[hold]),
    )


def run_scenario(cfg: PipelineConfig, data: Dataset | None = None, cache=None, log=None) -> RunArtifacts:
    """Knots, class models, eigencount search and test evaluation for one scenario."""
    cfg.validate()
    t0 = time.time()
    timings = {}
    stage = "ingest"
    try:
        if data is None:
            data = ingest(cfg)
        timings["ingest"] = time.time() - t0
        stage = "knots"
        knots = select_class_knots(data, cfg, cache, log)
        timings["knots"] = time.time() - t0 - sum(timings.values())
        stage = "fit"
        seeds = root_seeds(cfg.seed)
        search_seed = _int_seed(seeds["search"])
        if cfg.validation == "exclude10":
            fit_part, val_part = _exclusion_split(data.train, search_seed)
        else:
            fit_part, val_part = data.train, data.val
        if len(val_part) == 0:
            raise DataError("validation split is empty")
        models = fit_models(data, knots, cfg, fit_part)
        timings["fit"] = time.time() - t0 - sum(timings.values())
        stage = "search"
        tables = DistanceTables(models, val_part.args, val_part.values)
        search = search_counts(tables, val_part.labels, cfg.L, cfg.restarts, search_seed, cfg.init_max)
        val_metrics = evaluate(tables.classify(search.n_opt).labels, val_part.labels, max(data.class_labels) + 1)
        if cfg.validation == "exclude10":
            models = fit_models(data, knots, cfg)
        models = [m.with_count(min(int(n), m.n_available)) for m, n in zip(models, search.n_opt)]
        timings["search"] = time.time() - t0 - sum(timings.values())
        stage = "test"
        test_metrics = w_bar = w_space = None
        if len(data.test):
            tt = DistanceTables(models, data.test.args, data.test.values)
            counts = [m.n_retained for m in models]
            out = tt.classify(counts)
            test_metrics = evaluate(out.labels, data.test.labels, max(data.class_labels) + 1)
            w_bar, _ = rates(out, data.test.labels, tt.class_labels)
            w_space, _ = rates(tt.classify(tt.upper), data.test.labels, tt.class_labels)
        timings["test"] = time.time() - t0 - sum(timings.values())
    except PipelineError:
        raise
    except (SingularBasisError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericError(f"{stage}: {exc}") from exc
    except DataFormatError as exc:
        raise DataError(f"{stage}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{stage}: {exc}") from exc
    provenance = {
        "seed": cfg.seed,
        "seed_scheme": "SeedSequence(seed).spawn(4) -> split, reference, ddk (per class), search",
        "normalization": "pixel / 255" if cfg.normalize else "raw",
        "data_fingerprint": data.fingerprint,
        "sizes": {"train": len(data.train), "val": len(data.val), "test": len(data.test)},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seconds": {k: round(v, 3) for k, v in timings.items()},
    }
    return RunArtifacts(
        cfg.to_dict(), cfg.config_hash(), data.class_labels, knots, models, search,
        val_metrics, test_metrics, w_bar, w_space, provenance,
    )


# --------------------------------------------------------------------------
# reports


def _fmt(v: float, digits: int) -> str:
    return f"{v:.{digits}f}"


def confusion_table(report: MetricsReport, class_names=None, digits: int = 1) -> str:
    """Percentage confusion matrix: rows predicted, columns target."""
    K = report.confusion.shape[0]
    names = [str(i) for i in range(K)] if class_names is None else list(class_names)
    pct = report.percent
    buf = io.StringIO()
    buf.write("predicted\\target," + ",".join(names) + "\n")
    for i in range(K):
        buf.write(names[i] + "," + ",".join(_fmt(v, digits) for v in pct[i]) + "\n")
    return buf.getvalue()


def metrics_table(reports: dict, digits: int = 2) -> str:
    """Accuracy and macro scores (percent) with one column per run."""
    names = list(reports)
    rows = [
        ("Accuracy", lambda r: r.accuracy),
        ("Precision", lambda r: r.macro_precision),
        ("Recall", lambda r: r.macro_recall),
        ("F1", lambda r: r.macro_f1),
    ]
    buf = io.StringIO()
    buf.write("metric," + ",".join(names) + "\n")
    for label, get in rows:
        buf.write(label + "," + ",".join(_fmt(100 * get(reports[n]), digits) for n in names) + "\n")
    return buf.getvalue()


def per_class_table(report: MetricsReport, digits: int = 4) -> str:
    buf = io.StringIO()
    buf.write("class,hit_rate,accuracy,precision,recall,f1\n")
    for i in range(report.confusion.shape[0]):
        col = report.confusion[:, i].sum()
        hit = report.confusion[i, i] / col if col else 0.0
        vals = (hit, report.class_accuracy[i], report.precision[i], report.recall[i], report.f1[i])
        buf.write(f"{i}," + ",".join(_fmt(v, digits) for v in vals) + "\n")
    return buf.getvalue()


def report(art: RunArtifacts, out_dir, class_names=None) -> list[Path]:
    """Write tables and plot-ready data for one run; returns the written paths."""
    if art.test_metrics is None or art.test_metrics.confusion.sum() == 0:
        raise DataError("test split is empty; nothing to report")
    out = Path(out_dir)
    files = {}
    files["confusion_test.csv"] = confusion_table(art.test_metrics, class_names)
    files["confusion_val.csv"] = confusion_table(art.val_metrics, class_names)
    files["metrics.csv"] = metrics_table({art.scenario: art.test_metrics})
    files["per_class_test.csv"] = per_class_table(art.test_metrics)
    buf = io.StringIO()
    buf.write("class,stage,step,knot,amse,eps,kept\n")
    for lab in sorted(art.knots):
        for stage in ("mean", "centered"):
            sel = art.knots[lab][stage]
            if sel is None:
                continue
            for r, (x, a, e) in enumerate(zip(sel.added, sel.history, sel.eps), start=1):
                buf.write(f"{lab},{stage},{r},{x!r},{a!r},{e!r},{int(r <= sel.n_selected)}\n")
    files["knot_history.csv"] = buf.getvalue()
    buf = io.StringIO()
    buf.write("class,j,eigval\n")
    for m in art.models:
        for j, v in enumerate(m.eigvals, start=1):
            buf.write(f"{m.label},{j},{v!r}\n")
    files["scree.csv"] = buf.getvalue()
    buf = io.StringIO()
    buf.write("run,step,counts,abar\n")
    for r, path in enumerate(art.search.paths):
        for s, (n, v) in enumerate(path):
            buf.write(f"{r},{s},{' '.join(map(str, n))},{v!r}\n")
    files["search_path.csv"] = buf.getvalue()
    summary = {
        "scenario": art.scenario,
        "config_hash": art.config_hash,
        "n_opt": [int(v) for v in art.search.n_opt],
        "validation_accuracy": art.search.accuracy,
        "test": art.test_metrics.to_dict(),
        "w_bar": None if art.w_bar is None else [float(v) for v in art.w_bar],
        "w_bar_space": None if art.w_bar_space is None else [float(v) for v in art.w_bar_space],
        "knot_counts": {str(lab): int(v["knots"].n_internal) for lab, v in sorted(art.knots.items())},
        "mean_knot_counts": {
            str(lab): int(v["mean"].n_selected) for lab, v in sorted(art.knots.items()) if v["mean"] is not None
        },
    }
    files["summary.json"] = json.dumps(summary, sort_keys=True, indent=1) + "\n"
    written = []
    for name, text in files.items():
        atomic_write(out / name, text)
        written.append(out / name)
    return written


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column delimited file ``prediction,target`` with an optional header."""
    rows = []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            parts = ln.replace(";", ",").split(",")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except (ValueError, IndexError):
                if rows:
                    raise DataError(f"{path}: malformed line {ln!r}")
    if not rows:
        raise DataError(f"{path}: no predictions")
    a = np.array(rows)
    return a[:, 0], a[:, 1]
