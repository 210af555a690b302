"""Greedy forward selection of PMU quantities.

A quantity is added for every generator at once, so the selected layout
stays ``P = N x T``. Each candidate set is scored by cross-validated
1-NN accuracy under the identity lockstep distance.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.model_selection import StratifiedGroupKFold
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError
from .metric import MetricModel, pairwise_lockstep
from .mts import QUANTITIES, Dataset, channel_names
from .validation import as_dataset, check_mts_stack

TIE_ORDER = ("p", "angle", "speed", "q", "v")


@dataclass(frozen=True)
class SelectionResult:
    chosen_quantities: tuple[str, ...]
    step_accuracies: tuple[float, ...]
    candidate_scores: tuple[dict, ...]
    folds: int
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chosen_quantities"] = list(self.chosen_quantities)
        d["step_accuracies"] = list(self.step_accuracies)
        d["candidate_scores"] = [dict(c) for c in self.candidate_scores]
        return d

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def _quantity_distances(corpus: Dataset) -> dict[str, np.ndarray]:
    out = {}
    for q in corpus.quantities:
        X = corpus.select_quantities([q]).X
        out[q] = pairwise_lockstep(X, X, MetricModel.identity(X.shape[2]))
    return out


def _cv_accuracy(D: np.ndarray, y: np.ndarray, splits) -> float:
    correct = 0
    total = 0
    for train, test in splits:
        nearest = train[np.argmin(D[np.ix_(test, train)], axis=1)]
        correct += int(np.sum(y[nearest] == y[test]))
        total += len(test)
    return correct / total


def sequential_select(corpus: Dataset, t_target: int, folds: int = 5, seed: int = 0) -> SelectionResult:
    """Add, one at a time, the quantity that maximizes CV 1-NN accuracy.

    Ties go to the earlier entry of ``TIE_ORDER``. Folds keep all windows
    cut from one simulated trace together. Quantities that are constant over
    the whole corpus only become candidates once every varying one is taken.
    """
    available = [q for q in TIE_ORDER if q in corpus.quantities]
    if not 1 <= t_target <= len(available):
        raise ConfigError(f"t_target={t_target} must lie in 1..{len(available)}")
    y = corpus.y
    labels, counts = np.unique(y, return_counts=True)
    if len(labels) < 2:
        raise ConfigError("feature selection needs at least two classes")
    keys = [f"{s.label}/{s.scenario_id}" for s in corpus.samples]
    groups = np.unique(keys, return_inverse=True)[1]
    n_groups = min(len({g for g, lab in zip(groups, y) if lab == c}) for c in labels)
    if n_groups < folds:
        raise ConfigError(f"every class needs at least {folds} scenarios for {folds}-fold validation")
    cv = StratifiedGroupKFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(cv.split(np.zeros(len(y)), y, groups))
    per_q = _quantity_distances(corpus)
    constant = {q: not np.ptp(corpus.select_quantities([q]).X, axis=(0, 1)).any() for q in available}

    chosen: list[str] = []
    accuracies: list[float] = []
    scores: list[dict] = []
    base = np.zeros((len(y), len(y)))
    while len(chosen) < t_target:
        left = [q for q in available if q not in chosen]
        varying = [q for q in left if not constant[q]]
        step = {q: _cv_accuracy(base + per_q[q], y, splits) for q in (varying or left)}
        best = max(step, key=lambda q: (step[q], -TIE_ORDER.index(q)))
        chosen.append(best)
        accuracies.append(step[best])
        scores.append(step)
        base = base + per_q[best]
    return SelectionResult(tuple(chosen), tuple(accuracies), tuple(scores), folds, seed)


class QuantityForwardSelector(BaseEstimator, TransformerMixin):
    """Estimator face of :func:`sequential_select`.

    Plain arrays must use the full five-quantity layout for ``n_gens``
    generators; a Dataset carries its own channel names.
    """

    def __init__(self, n_quantities=3, folds=5, random_state=0, n_gens=None):
        self.n_quantities = n_quantities
        self.folds = folds
        self.random_state = random_state
        self.n_gens = n_gens

    def _names(self, p: int) -> tuple[str, ...]:
        n_gens = self.n_gens or p // len(QUANTITIES)
        names = channel_names(n_gens)
        if len(names) != p:
            raise ConfigError(f"{p} channels do not match the layout of {n_gens} generators")
        return names

    def fit(self, X, y=None, groups=None):
        if isinstance(X, Dataset):
            corpus = X
        else:
            X = check_mts_stack(X)
            enc = np.unique(np.asarray(y), return_inverse=True)[1] + 1
            corpus = as_dataset(X, enc, channel_names=self._names(X.shape[2]))
            if groups is not None:
                gid = np.unique(np.asarray(groups), return_inverse=True)[1]
                corpus = Dataset(
                    tuple(s.with_values(s.values, scenario_id=int(g)) for s, g in zip(corpus, gid))
                )
        self.result_ = sequential_select(corpus, self.n_quantities, self.folds, self.random_state)
        self.channel_names_in_ = corpus.channel_names
        self.n_features_in_ = corpus.P
        return self

    def get_support(self) -> np.ndarray:
        check_is_fitted(self, "result_")
        chosen = set(self.result_.chosen_quantities)
        return np.array([n.split(".", 1)[1] in chosen for n in self.channel_names_in_])

    def transform(self, X):
        check_is_fitted(self, "result_")
        if isinstance(X, Dataset):
            return X.select_quantities(self.result_.chosen_quantities)
        X = check_mts_stack(X, n_channels=self.n_features_in_)
        return X[:, :, self.get_support()]
