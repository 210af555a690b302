"""Class templates, DTW k-NN matching and evaluation reports."""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dtw import dtw_to_many
from .exceptions import ConfigError, DataError, ShapeError
from .learning import TrainConfig, train_metric
from .metric import MetricModel
from .mts import Dataset, MtsSample
from .validation import check_mts_stack


@dataclass(frozen=True)
class Template:
    sample: MtsSample
    c_value: float
    index: int


@dataclass(frozen=True)
class TemplateSet:
    """Per-class templates ranked by their intra-group distance sum ``C``.

    With ``per_shift`` the ranking runs separately inside every
    ``(class, shift)`` group and ``templates_per_class`` counts per group.
    """

    classes: dict[int, tuple[Template, ...]]
    templates_per_class: int
    per_shift: bool = True

    @property
    def references(self) -> list[MtsSample]:
        return [t.sample for c in sorted(self.classes) for t in self.classes[c]]

    def __len__(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def to_dataset(self, n_classes: int | None = None) -> Dataset:
        return Dataset(tuple(self.references), n_classes)


def _intra_sums(X: np.ndarray, model: MetricModel) -> np.ndarray:
    m = model.m
    sums = np.empty(len(X))
    for i in range(len(X)):
        D = X - X[i]
        sums[i] = np.einsum("nhp,pq,nhq->", D, m, D)
    return sums


def build_templates(dataset: Dataset, model: MetricModel, count: int, per_shift: bool = True) -> TemplateSet:
    """Keep the ``count`` members with the smallest lockstep distance sum.

    Ties in ``C`` go to the lower ``scenario_id``.
    """
    if count < 1:
        raise ConfigError(f"template count must be >= 1, got {count}")
    if dataset.P != model.p_dim:
        raise ShapeError(f"dataset has P={dataset.P}, metric expects {model.p_dim}")
    groups: dict[tuple, list[int]] = defaultdict(list)
    for k, s in enumerate(dataset.samples):
        key = (s.label, round(s.shift_s, 9)) if per_shift else (s.label,)
        groups[key].append(k)
    X = dataset.X
    classes: dict[int, list[Template]] = defaultdict(list)
    for key in sorted(groups):
        idx = groups[key]
        if len(idx) < count:
            where = f"class {key[0]}" + (f" at shift {key[1]} s" if per_shift else "")
            raise ConfigError(f"{where} has {len(idx)} members, fewer than {count} templates")
        sums = _intra_sums(X[idx], model)
        ranked = sorted(range(len(idx)), key=lambda r: (sums[r], dataset[idx[r]].scenario_id, idx[r]))
        classes[key[0]].extend(Template(dataset[idx[r]], float(sums[r]), idx[r]) for r in ranked[:count])
    return TemplateSet({c: tuple(v) for c, v in classes.items()}, count, per_shift)


def _reference_list(refs) -> list[MtsSample]:
    if isinstance(refs, TemplateSet):
        return refs.references
    if isinstance(refs, Dataset):
        return list(refs.samples)
    return list(refs)


def _vote(labels: np.ndarray, dists: np.ndarray) -> int:
    classes, counts = np.unique(labels, return_counts=True)
    tied = classes[counts == counts.max()]
    if len(tied) == 1:
        return int(tied[0])
    means = [dists[labels == c].mean() for c in tied]
    return int(tied[int(np.argmin(means))])


def _rank(dists: np.ndarray, refs: list[MtsSample]) -> np.ndarray:
    keys = [(float(d), r.label, r.scenario_id, r.shift_s) for d, r in zip(dists, refs)]
    return np.array(sorted(range(len(refs)), key=keys.__getitem__), dtype=int)


def _ref_stack(refs: list[MtsSample]) -> tuple[np.ndarray, np.ndarray]:
    shapes = {r.values.shape for r in refs}
    if len(shapes) != 1:
        raise ShapeError(f"references have mixed shapes {sorted(shapes)}")
    return np.stack([r.values for r in refs]), np.array([r.label for r in refs])


def classify(
    query, refs, model: MetricModel, k: int = 1, band: int | None = None, _stack=None
) -> tuple[int, list[tuple[MtsSample, float]]]:
    """Majority vote among the ``k`` nearest references under DTW.

    Returns the predicted class and every reference ranked by distance.
    A vote tie goes to the class with the smaller mean distance, then to
    the lower class index.
    """
    ref_list = _reference_list(refs)
    if not ref_list:
        raise ConfigError("empty reference set")
    if not 1 <= k <= len(ref_list):
        raise ConfigError(f"k={k} must lie in 1..{len(ref_list)} (number of references)")
    values = getattr(query, "values", query)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != model.p_dim:
        raise ShapeError(f"query has shape {values.shape}, metric expects P={model.p_dim}")
    stack, labels = _stack if _stack is not None else _ref_stack(ref_list)
    dists = dtw_to_many(values, stack, model, band)
    order = _rank(dists, ref_list)
    top = order[:k]
    pred = _vote(labels[top], dists[top])
    return pred, [(ref_list[i], float(dists[i])) for i in order]


@dataclass
class EvalReport:
    n_classes: int
    confusion: np.ndarray
    predictions: list[int]
    total_time_s: float
    delays: list[float] = field(default_factory=list)

    @property
    def counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        counts = self.counts
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, 100.0 * np.diag(self.confusion) / np.maximum(counts, 1), np.nan)

    @property
    def overall_accuracy(self) -> float:
        total = self.confusion.sum()
        return 100.0 * np.trace(self.confusion) / total if total else float("nan")

    @property
    def mean_match_time_s(self) -> float:
        return self.total_time_s / max(1, len(self.predictions))

    def per_delay(self, truth: Sequence[int]) -> dict[float, dict]:
        out: dict[float, dict] = {}
        truth = np.asarray(truth)
        preds = np.asarray(self.predictions)
        delays = np.round(np.asarray(self.delays, dtype=float), 9)
        for d in sorted(set(delays.tolist())):
            sel = delays == d
            out[d] = {"accuracy_pct": 100.0 * float(np.mean(preds[sel] == truth[sel])), "count": int(sel.sum())}
        return out

    def to_dict(self, truth: Sequence[int] | None = None) -> dict:
        acc = self.per_class_accuracy
        doc = {
            "overall_accuracy_pct": self.overall_accuracy,
            "per_class": [
                {
                    "class": c + 1,
                    "accuracy_pct": None if np.isnan(acc[c]) else float(acc[c]),
                    "count": int(self.counts[c]),
                }
                for c in range(self.n_classes)
            ],
            "confusion": self.confusion.astype(int).tolist(),
            "mean_match_time_s": self.mean_match_time_s,
            "total_time_s": self.total_time_s,
        }
        if truth is not None and len(set(np.round(self.delays, 9).tolist())) > 1:
            doc["per_delay"] = [{"delay_s": d, **v} for d, v in self.per_delay(truth).items()]
        return doc

    def format_table(self, truth: Sequence[int] | None = None) -> str:
        acc = self.per_class_accuracy
        lines = ["class  count  accuracy(%)"]
        for c in range(self.n_classes):
            a = "   -" if np.isnan(acc[c]) else f"{acc[c]:7.2f}"
            lines.append(f"G{c + 1:<5d}{int(self.counts[c]):6d}  {a}")
        lines.append(f"overall      {self.overall_accuracy:7.2f}")
        if truth is not None and len(set(np.round(self.delays, 9).tolist())) > 1:
            lines.append("delay(s)  count  accuracy(%)")
            for d, v in self.per_delay(truth).items():
                lines.append(f"{d:8.3f}{v['count']:7d}  {v['accuracy_pct']:7.2f}")
        lines.append(f"mean match time {self.mean_match_time_s:.4f} s/query")
        return "\n".join(lines)


def evaluate(testset: Dataset, refs, model: MetricModel, k: int = 1, band: int | None = None) -> EvalReport:
    """Classify every test sample; accuracy, confusion and timing."""
    if len(testset) == 0:
        raise DataError("empty test set")
    ref_list = _reference_list(refs)
    if not ref_list:
        raise ConfigError("empty reference set")
    stack = _ref_stack(ref_list)
    n = max(testset.n_classes, int(max(stack[1])))
    confusion = np.zeros((n, n), dtype=int)
    preds = []
    start = time.perf_counter()
    for s in testset:
        pred, _ = classify(s, ref_list, model, k, band, _stack=stack)
        preds.append(pred)
        confusion[s.label - 1, pred - 1] += 1
    elapsed = time.perf_counter() - start
    return EvalReport(n, confusion, preds, elapsed, [s.shift_s for s in testset])


# ---------------------------------------------------------------- estimators


def _encode(y) -> tuple[np.ndarray, np.ndarray]:
    classes, enc = np.unique(y, return_inverse=True)
    return classes, enc + 1


class TemplateKNNClassifier(BaseEstimator, ClassifierMixin):
    """DTW k-NN over class templates under a fixed metric.

    ``metric`` is a MetricModel, a ``P x P`` array, or None for identity.
    ``n_templates=None`` keeps the whole training set as references.
    """

    def __init__(self, metric=None, n_neighbors=1, n_templates=None, per_shift=True, band=None):
        self.metric = metric
        self.n_neighbors = n_neighbors
        self.n_templates = n_templates
        self.per_shift = per_shift
        self.band = band

    def _metric_model(self, p: int) -> MetricModel:
        if self.metric is None:
            return MetricModel.identity(p)
        if isinstance(self.metric, MetricModel):
            return self.metric
        return MetricModel(np.asarray(self.metric, dtype=float))

    def _dataset(self, X, y, shifts):
        if isinstance(X, Dataset):
            self.classes_, enc = _encode(X.y)
            samples = [
                MtsSample(s.values, int(e), s.scenario_id, s.shift_s, s.rate_hz, s.channel_names, s.seed)
                for s, e in zip(X, enc)
            ]
            return Dataset(tuple(samples))
        X = check_mts_stack(X)
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ShapeError(f"y has shape {y.shape}, expected ({len(X)},)")
        self.classes_, enc = _encode(y)
        shifts = np.zeros(len(X)) if shifts is None else np.asarray(shifts, dtype=float)
        if shifts.shape != (len(X),):
            raise ShapeError("shifts must give one offset per sample")
        return Dataset(
            tuple(
                MtsSample(x, int(e), scenario_id=k, shift_s=float(t))
                for k, (x, e, t) in enumerate(zip(X, enc, shifts))
            )
        )

    def _fit_references(self, dataset: Dataset, model: MetricModel):
        self.metric_ = model
        if self.n_templates is None:
            self.references_ = list(dataset.samples)
        else:
            self.templates_ = build_templates(dataset, model, self.n_templates, self.per_shift)
            self.references_ = self.templates_.references
        self._stack = _ref_stack(self.references_)
        self.n_features_in_ = dataset.P
        return self

    def fit(self, X, y=None, shifts=None):
        dataset = self._dataset(X, y, shifts)
        return self._fit_references(dataset, self._metric_model(dataset.P))

    def kneighbors_distances(self, X) -> np.ndarray:
        """DTW distance from every query to every reference."""
        check_is_fitted(self, "references_")
        X = check_mts_stack(X, n_channels=self.n_features_in_)
        return np.stack([dtw_to_many(x, self._stack[0], self.metric_, self.band) for x in X])

    def predict(self, X):
        check_is_fitted(self, "references_")
        X = check_mts_stack(X, n_channels=self.n_features_in_)
        preds = [
            classify(x, self.references_, self.metric_, self.n_neighbors, self.band, _stack=self._stack)[0]
            for x in X
        ]
        return self.classes_[np.asarray(preds) - 1]


class ForcedOscillationLocator(TemplateKNNClassifier):
    """Learn the metric, build templates, then match with DTW k-NN."""

    def __init__(
        self,
        n_neighbors=1,
        n_templates=2,
        per_shift=True,
        band=None,
        rho=0.0,
        eta_base=0.01,
        epsilon=1e-3,
        max_cycles=10,
        triplets_per_cycle=None,
        same_shift=True,
        random_state=0,
    ):
        super().__init__(None, n_neighbors, n_templates, per_shift, band)
        self.rho = rho
        self.eta_base = eta_base
        self.epsilon = epsilon
        self.max_cycles = max_cycles
        self.triplets_per_cycle = triplets_per_cycle
        self.same_shift = same_shift
        self.random_state = random_state

    def fit(self, X, y=None, shifts=None):
        dataset = self._dataset(X, y, shifts)
        config = TrainConfig(
            rho=self.rho,
            eta_base=self.eta_base,
            epsilon=self.epsilon,
            max_cycles=self.max_cycles,
            triplets_per_cycle=self.triplets_per_cycle,
            same_shift=self.same_shift,
            seed=self.random_state,
        )
        return self._fit_references(dataset, train_metric(dataset, config))
