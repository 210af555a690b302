"""Offline training and online matching as file-to-file steps.

A run directory holds ``train/`` and ``test/`` corpora, the selection
result, the model bundle and the evaluation report. Every step takes a
:class:`PipelineConfig`; all seeds derive from ``PipelineConfig.seed``.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .classifier import EvalReport, Template, TemplateSet, build_templates, classify, evaluate
from .exceptions import ConfigError, DataError, ShapeError
from .gridsim import GridScenario, generate_corpus, load_scenario
from .learning import TrainConfig, train_metric
from .metric import MetricModel, model_from_dict, model_to_dict
from .mts import QUANTITIES, Dataset, MtsSample, channel_names, load_dataset, read_sample_csv, save_dataset
from .selection import sequential_select

BUNDLE_FORMAT = "fosl-model/1"


def _default_train() -> TrainConfig:
    # step size chosen for angle-in-degrees / MW data, see README
    return TrainConfig(eta_base=3e-6, max_cycles=3)


@dataclass(frozen=True)
class PipelineConfig:
    scenario: dict | str = field(default_factory=dict)
    j_train: int = 40
    j_test: int = 40
    shifts: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
    window_s: float = 5.0
    test_delays: tuple[float, ...] = (0.0, 1.3, 2.8, 3.4)
    t_target: int = 3
    folds: int = 5
    quantities: tuple[str, ...] = ("angle", "speed", "p")
    train: TrainConfig = field(default_factory=_default_train)
    templates: int = 2
    per_shift: bool = True
    k: int = 1
    band: int | None = None
    speedup_queries: int = 0
    seed: int = 0
    out_dir: str = "fosl_run"

    def __post_init__(self):
        if self.j_train < 1 or self.j_test < 1:
            raise ConfigError("j_train and j_test must be >= 1")
        if not self.shifts or not self.test_delays:
            raise ConfigError("shifts and test_delays must be non-empty")
        if self.window_s <= 0:
            raise ConfigError("window_s must be positive")
        unknown = [q for q in self.quantities if q not in QUANTITIES]
        if unknown:
            raise ConfigError(f"unknown quantities {unknown}")
        if self.templates < 1 or self.k < 1 or self.speedup_queries < 0:
            raise ConfigError("templates and k must be >= 1, speedup_queries >= 0")
        object.__setattr__(self, "shifts", tuple(float(s) for s in self.shifts))
        object.__setattr__(self, "test_delays", tuple(float(d) for d in self.test_delays))
        object.__setattr__(self, "quantities", tuple(self.quantities))

    def scenario_template(self) -> GridScenario:
        base = load_scenario(self.scenario) if isinstance(self.scenario, str) else GridScenario.from_dict(self.scenario)
        return replace(base, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["train"] = self.train.to_dict()
        for key in ("shifts", "test_delays", "quantities"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        extra = set(doc) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "train" in doc:
            train = dict(asdict(_default_train()))
            train.update(doc["train"])
            doc["train"] = TrainConfig.from_dict(train)
        for key in ("shifts", "test_delays", "quantities"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    scenario = doc.get("scenario")
    if isinstance(scenario, str) and not os.path.isabs(scenario):
        doc["scenario"] = os.path.join(os.path.dirname(os.path.abspath(path)), scenario)
    return PipelineConfig.from_dict(doc)


# ---------------------------------------------------------------- model bundle


@dataclass(frozen=True)
class ModelBundle:
    """Metric, templates and channel layout: everything online matching needs."""

    metric: MetricModel
    templates: TemplateSet
    quantities: tuple[str, ...]
    n_gens: int
    n_classes: int
    k: int = 1
    band: int | None = None
    selection: dict | None = None

    @property
    def channel_names(self) -> tuple[str, ...]:
        return channel_names(self.n_gens, self.quantities)

    def to_dict(self) -> dict:
        classes = []
        for label in sorted(self.templates.classes):
            entries = [
                {
                    "index": t.index,
                    "c_value": t.c_value,
                    "scenario_id": t.sample.scenario_id,
                    "shift_s": t.sample.shift_s,
                    "seed": t.sample.seed,
                    "rate_hz": t.sample.rate_hz,
                    "values": t.sample.values.tolist(),
                }
                for t in self.templates.classes[label]
            ]
            classes.append({"label": label, "templates": entries})
        return {
            "format": BUNDLE_FORMAT,
            "quantities": list(self.quantities),
            "n_gens": self.n_gens,
            "n_classes": self.n_classes,
            "k": self.k,
            "band": self.band,
            "metric": model_to_dict(self.metric),
            "templates": {
                "templates_per_class": self.templates.templates_per_class,
                "per_shift": self.templates.per_shift,
                "classes": classes,
            },
            "selection": self.selection,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelBundle":
        if doc.get("format") != BUNDLE_FORMAT:
            raise DataError(f"not a model bundle (format {doc.get('format')!r})")
        try:
            quantities = tuple(doc["quantities"])
            n_gens = int(doc["n_gens"])
            names = channel_names(n_gens, quantities)
            metric = model_from_dict(doc["metric"])
            tdoc = doc["templates"]
            classes = {}
            for entry in tdoc["classes"]:
                label = int(entry["label"])
                classes[label] = tuple(
                    Template(
                        MtsSample(
                            np.array(t["values"], dtype=float),
                            label,
                            int(t["scenario_id"]),
                            float(t["shift_s"]),
                            float(t["rate_hz"]),
                            names,
                            t.get("seed"),
                        ),
                        float(t["c_value"]),
                        int(t["index"]),
                    )
                    for t in entry["templates"]
                )
            templates = TemplateSet(classes, int(tdoc["templates_per_class"]), bool(tdoc["per_shift"]))
            return cls(
                metric,
                templates,
                quantities,
                n_gens,
                int(doc["n_classes"]),
                int(doc.get("k", 1)),
                doc.get("band"),
                doc.get("selection"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed model bundle: {exc!r}") from exc

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ModelBundle":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model {os.fspath(path)}: {exc}") from exc
        return cls.from_dict(doc)


# ---------------------------------------------------------------- steps


def _run_dir(cfg: PipelineConfig, out: str | os.PathLike | None) -> Path:
    return Path(out if out is not None else cfg.out_dir)


def _load_corpus(path: Path) -> Dataset:
    if not (path / "manifest.json").exists():
        raise DataError(f"no corpus at {path}; run `fosl simulate` first")
    return load_dataset(path)


def simulate(cfg: PipelineConfig, out=None, keep_raw: bool = False) -> tuple[Dataset, Dataset]:
    """Train corpus on the shift grid (stream 0), test corpus at the delays (stream 1)."""
    root = _run_dir(cfg, out)
    template = cfg.scenario_template()
    train = generate_corpus(template, cfg.j_train, cfg.shifts, cfg.window_s, stream=0, keep_raw=keep_raw)
    test = generate_corpus(template, cfg.j_test, cfg.test_delays, cfg.window_s, stream=1, keep_raw=keep_raw)
    if keep_raw:
        (train, raw_train), (test, raw_test) = train, test
        save_dataset(Dataset(tuple(raw_train), template.n_gens), root / "raw" / "train")
        save_dataset(Dataset(tuple(raw_test), template.n_gens), root / "raw" / "test")
    save_dataset(train, root / "train")
    save_dataset(test, root / "test")
    return train, test


def select(cfg: PipelineConfig, out=None) -> dict:
    root = _run_dir(cfg, out)
    result = sequential_select(_load_corpus(root / "train"), cfg.t_target, cfg.folds, cfg.seed)
    result.save(root / "selection.json")
    return result.to_dict()


def _canonical(quantities) -> tuple[str, ...]:
    return tuple(q for q in QUANTITIES if q in set(quantities))


def train(cfg: PipelineConfig, out=None, skip_select: bool = False, model_path=None, callback=None) -> ModelBundle:
    """Select quantities, learn the metric, build templates, write the bundle.

    ``callback`` is handed to :func:`train_metric`.
    """
    root = _run_dir(cfg, out)
    corpus = _load_corpus(root / "train")
    selection = None
    if skip_select:
        quantities = _canonical(cfg.quantities)
    else:
        result = sequential_select(corpus, cfg.t_target, cfg.folds, cfg.seed)
        result.save(root / "selection.json")
        selection = result.to_dict()
        quantities = _canonical(result.chosen_quantities)
    corpus = corpus.select_quantities(quantities)
    metric = train_metric(corpus, cfg.train_config(), callback)
    metric = MetricModel(metric.m, corpus.channel_names, metric.training_meta)
    templates = build_templates(corpus, metric, cfg.templates, cfg.per_shift)
    bundle = ModelBundle(
        metric, templates, quantities, corpus.n_gens, corpus.n_classes, cfg.k, cfg.band, selection
    )
    bundle.save(model_path or root / "model.json")
    return bundle


def rebuild_templates(cfg: PipelineConfig, out=None, model_path=None) -> ModelBundle:
    """Re-rank templates from the train corpus under the stored metric."""
    root = _run_dir(cfg, out)
    path = model_path or root / "model.json"
    bundle = ModelBundle.load(path)
    corpus = _load_corpus(root / "train").select_quantities(bundle.quantities)
    templates = build_templates(corpus, bundle.metric, cfg.templates, cfg.per_shift)
    bundle = replace(bundle, templates=templates)
    bundle.save(path)
    return bundle


def _query_values(bundle: ModelBundle, values: np.ndarray) -> np.ndarray:
    p = values.shape[1]
    if p == bundle.metric.p_dim:
        return values
    full = channel_names(bundle.n_gens)
    if p == len(full):
        index = {n: i for i, n in enumerate(full)}
        return values[:, [index[n] for n in bundle.channel_names]]
    raise ShapeError(
        f"sample has {p} channels; model expects {bundle.metric.p_dim} "
        f"({', '.join(bundle.quantities)}) or the full {len(full)}-channel layout"
    )


def classify_file(bundle: ModelBundle, sample_csv, k: int | None = None) -> dict:
    """Predict the source generator of one CSV sample."""
    values = _query_values(bundle, read_sample_csv(sample_csv))
    k = bundle.k if k is None else k
    pred, ranked = classify(values, bundle.templates, bundle.metric, k, bundle.band)
    return {
        "predicted_class": pred,
        "k": k,
        "distances": [
            {"label": r.label, "scenario_id": r.scenario_id, "shift_s": r.shift_s, "distance": d}
            for r, d in ranked
        ],
    }


def _timed_accuracy(queries: Dataset, refs, metric: MetricModel, k: int, band) -> tuple[float, float]:
    report = evaluate(queries, refs, metric, k, band)
    return report.overall_accuracy, report.total_time_s


def evaluate_run(cfg: PipelineConfig, out=None, model_path=None, k: int | None = None) -> tuple[EvalReport, dict, str]:
    """Evaluate the bundle on the test corpus; optionally time full-set matching."""
    root = _run_dir(cfg, out)
    bundle = ModelBundle.load(model_path or root / "model.json")
    test = _load_corpus(root / "test")
    if len(test) == 0:
        raise DataError(f"empty test set at {root / 'test'}")
    test = test.select_quantities(bundle.quantities)
    k = bundle.k if k is None else k
    report = evaluate(test, bundle.templates, bundle.metric, k, bundle.band)
    doc = report.to_dict(test.y)
    doc["k"] = k
    doc["templates_per_class"] = bundle.templates.templates_per_class
    doc["n_references"] = len(bundle.templates)
    if cfg.speedup_queries:
        corpus = _load_corpus(root / "train").select_quantities(bundle.quantities)
        n = min(cfg.speedup_queries, len(test))
        # evenly spaced so every class and delay is represented
        queries = test.subset(np.linspace(0, len(test) - 1, n).round().astype(int).tolist())
        one = build_templates(corpus, bundle.metric, 1, bundle.templates.per_shift)
        acc_t, time_t = _timed_accuracy(queries, one, bundle.metric, 1, bundle.band)
        acc_f, time_f = _timed_accuracy(queries, corpus, bundle.metric, 1, bundle.band)
        doc["speedup"] = {
            "n_queries": len(queries),
            "one_template": {"n_references": len(one), "accuracy_pct": acc_t, "time_s": time_t},
            "full_set": {"n_references": len(corpus), "accuracy_pct": acc_f, "time_s": time_f},
            "ratio": time_f / time_t if time_t > 0 else float("inf"),
        }
    with open(root / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    table = report.format_table(test.y)
    if "speedup" in doc:
        sp = doc["speedup"]
        table += (
            f"\nspeedup over {sp['n_queries']} queries: full set {sp['full_set']['time_s']:.3f} s "
            f"({sp['full_set']['accuracy_pct']:.2f}%), 1 template {sp['one_template']['time_s']:.3f} s "
            f"({sp['one_template']['accuracy_pct']:.2f}%), ratio {sp['ratio']:.1f}"
        )
    with open(root / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table + "\n")
    return report, doc, table


def run_all(cfg: PipelineConfig, out=None) -> dict:
    """simulate, train, evaluate."""
    started = time.perf_counter()
    simulate(cfg, out)
    train(cfg, out)
    _, doc, _ = evaluate_run(cfg, out)
    doc["wall_time_s"] = time.perf_counter() - started
    return doc
