"""LogDet-regularized Mahalanobis metric learning with mined triplets.

Each violated triplet ``(a, p, n)`` moves the metric to

    M' = (M^-1 + eta (P P' - Q Q'))^-1,   P = (X_a - X_p)',  Q = (X_a - X_n)'

evaluated with two Woodbury steps so that ``M`` is never inverted. ``P``
and ``Q`` are ``P x s`` (channels by aligned rows).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dtw import align, dtw_distance
from .exceptions import ConfigError, DataError, MiningError, NumericFailure
from .metric import PSD_TOL, MetricModel, lockstep_distance
from .mts import Dataset, MtsSample
from .validation import as_dataset, check_mts_stack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Triplet:
    anchor: MtsSample
    positive: MtsSample
    negative: MtsSample
    indices: tuple[int, int, int] | None = None

    def __post_init__(self):
        a, p, n = self.anchor.label, self.positive.label, self.negative.label
        if a is None or a != p or n == a:
            raise MiningError(f"labels ({a}, {p}, {n}) do not form a triplet")
        if self.indices is not None and self.indices[0] == self.indices[1]:
            raise MiningError("anchor and positive must be different samples")


@dataclass(frozen=True)
class TrainConfig:
    rho: float = 0.0
    eta_base: float = 0.01
    epsilon: float = 1e-3
    max_cycles: int = 10
    triplets_per_cycle: int | None = None
    seed: int = 0
    align_triplets: bool = False
    same_shift: bool = True
    check_every_update: bool = False

    def __post_init__(self):
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if not self.eta_base > 0:
            raise ConfigError(f"eta_base must be > 0, got {self.eta_base}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_cycles < 1:
            raise ConfigError(f"max_cycles must be >= 1, got {self.max_cycles}")
        if self.triplets_per_cycle is not None and self.triplets_per_cycle < 1:
            raise ConfigError("triplets_per_cycle must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown train config fields {sorted(extra)}")
        return cls(**doc)


# ---------------------------------------------------------------- mining


def _check_classes(y: np.ndarray) -> None:
    labels, counts = np.unique(y, return_counts=True)
    if len(labels) < 2:
        raise MiningError("metric learning needs at least two classes")
    single = labels[counts < 2]
    if len(single):
        raise MiningError(f"class {int(single[0])} has a single member; triplets need two")


def _select(d: np.ndarray, y: np.ndarray, anchor: int, pool: np.ndarray | None = None) -> tuple[int, int]:
    same = y == y[anchor]
    same[anchor] = False
    if pool is not None:
        same &= pool
    if not same.any():
        raise MiningError(f"class {int(y[anchor])} has a single member; triplets need two")
    other = y != y[anchor]
    if pool is not None:
        other &= pool
    if not other.any():
        raise MiningError("metric learning needs at least two classes")
    # argmax/argmin return the first extremum, i.e. the lowest index
    pos = int(np.argmax(np.where(same, d, -np.inf)))
    neg = int(np.argmin(np.where(other, d, np.inf)))
    return pos, neg


def _shift_pool(dataset: Dataset, anchor: int) -> np.ndarray:
    shifts = np.array([s.shift_s for s in dataset.samples])
    return np.isclose(shifts, shifts[anchor], rtol=0, atol=1e-9)


def mine_triplet(dataset: Dataset, model: MetricModel, anchor_index: int, same_shift: bool = True) -> Triplet:
    """Hardest triplet for an anchor: farthest same-class, nearest other-class.

    With ``same_shift`` both partners are drawn from windows starting at
    the anchor's offset, where lockstep comparison is meaningful.
    """
    X, y = dataset.X, dataset.y
    D = X - X[anchor_index]
    d = np.einsum("nhp,pq,nhq->n", D, model.m, D)
    pool = _shift_pool(dataset, anchor_index) if same_shift else None
    pos, neg = _select(d, y, anchor_index, pool)
    return Triplet(dataset[anchor_index], dataset[pos], dataset[neg], (anchor_index, pos, neg))


class _DistanceCache:
    """Lockstep distances from one anchor to every sample, for a changing M.

    Uses ``D(a, x) = <M, G_a> + <M, G_x> - 2 <X_a M, X_x>`` with the Gram
    matrices ``G = X'X`` precomputed once.
    """

    def __init__(self, X: np.ndarray):
        n, H, P = X.shape
        X = X - X.reshape(-1, P).mean(axis=0)
        self.X = X
        self.flat = X.reshape(n, H * P)
        self.gram = np.einsum("nhp,nhq->npq", X, X).reshape(n, P * P)

    def distances(self, anchor: int, m: np.ndarray) -> np.ndarray:
        self_terms = self.gram @ m.ravel()
        cross = self.flat @ (self.X[anchor] @ m).ravel()
        return np.maximum(self_terms + self_terms[anchor] - 2 * cross, 0.0)


# ---------------------------------------------------------------- loss and update


def _distance(a, b, model: MetricModel, aligned: bool) -> float:
    if aligned:
        return dtw_distance(a, b, model)[0]
    return lockstep_distance(a, b, model)


def triplet_loss(t: Triplet, model: MetricModel, rho: float = 0.0, aligned: bool = False) -> float:
    """``rho + D(a, p) - D(a, n)``."""
    return rho + _distance(t.anchor, t.positive, model, aligned) - _distance(
        t.anchor, t.negative, model, aligned
    )


def constraint_satisfied(t: Triplet, model: MetricModel, rho: float = 0.0, aligned: bool = False) -> bool:
    """``min(D(a, n), D(p, n)) - D(a, p) > rho``."""
    d_ap = _distance(t.anchor, t.positive, model, aligned)
    d_an = _distance(t.anchor, t.negative, model, aligned)
    d_pn = _distance(t.positive, t.negative, model, aligned)
    return min(d_an, d_pn) - d_ap > rho


def difference_matrices(t: Triplet, model: MetricModel | None = None, aligned: bool = False):
    """Same-class and cross-class difference matrices, each ``P x s``."""
    a, p, n = t.anchor.values, t.positive.values, t.negative.values
    if aligned:
        if model is None:
            raise ConfigError("aligned differences need a metric for the warp paths")
        ap = align(a, p, dtw_distance(a, p, model)[1])
        an = align(a, n, dtw_distance(a, n, model)[1])
        return (ap[0] - ap[1]).T, (an[0] - an[1]).T
    if a.shape != p.shape or a.shape != n.shape:
        raise DataError("lockstep triplets need equal-length samples")
    return (a - p).T, (a - n).T


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def _eta_bound(m: np.ndarray, Pt: np.ndarray, Qt: np.ndarray) -> float:
    S = _psd_sqrt(m)
    SQ, SP = S @ Qt, S @ Pt
    try:
        lam = np.linalg.eigvalsh(SQ @ SQ.T - SP @ SP.T)[-1]
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigensolver failed in eta bound: {exc}") from exc
    return math.inf if lam <= 0 else 1.0 / lam


def eta_upper_bound(t: Triplet, model: MetricModel, aligned: bool = False) -> float:
    """Largest step keeping ``M^-1 + eta (P P' - Q Q')`` PSD.

    Equal to ``1 / lambda_max(M^1/2 (Q Q' - P P') M^1/2)``, or ``inf`` when
    that eigenvalue is not positive. Working with ``M^1/2`` avoids inverting
    a singular metric.
    """
    Pt, Qt = difference_matrices(t, model, aligned)
    return _eta_bound(model.m, Pt, Qt)


def _woodbury_update(m: np.ndarray, Pt: np.ndarray, Qt: np.ndarray, eta: float) -> np.ndarray:
    try:
        MP = m @ Pt
        inner = np.eye(Pt.shape[1]) + eta * (Pt.T @ MP)
        omega = m - eta * MP @ np.linalg.solve(inner, MP.T)
        omega = (omega + omega.T) / 2
        OQ = omega @ Qt
        inner = np.eye(Qt.shape[1]) - eta * (Qt.T @ OQ)
        m_new = omega + eta * OQ @ np.linalg.solve(inner, OQ.T)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"singular inner system in metric update: {exc}") from exc
    return (m_new + m_new.T) / 2


def update_metric(model: MetricModel, t: Triplet, eta: float, aligned: bool = False) -> MetricModel:
    """One LogDet step of size ``eta``; requires ``0 <= eta < eta_upper_bound``."""
    Pt, Qt = difference_matrices(t, model, aligned)
    bound = _eta_bound(model.m, Pt, Qt)
    if not 0 <= eta < bound:
        raise ConfigError(f"eta={eta} outside the feasible range [0, {bound})")
    if eta == 0:
        return model
    m_new = _woodbury_update(model.m, Pt, Qt, eta)
    lam = np.linalg.eigvalsh(m_new)[0]
    if lam < -PSD_TOL:
        raise NumericFailure(f"metric update lost positive semi-definiteness (min eigenvalue {lam:.3g})")
    return MetricModel(m_new, model.channel_names, dict(model.training_meta))


# ---------------------------------------------------------------- training


def train_metric(
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    callback: Callable[[int, int, np.ndarray], None] | None = None,
) -> MetricModel:
    """Cycle over anchors, updating the metric on every violated triplet.

    ``callback(cycle, iteration, m)`` runs after every accepted update.
    """
    if len(dataset) == 0:
        raise DataError("empty training set")
    y = dataset.y
    _check_classes(y)
    X = np.ascontiguousarray(dataset.X)
    n = len(dataset)
    per_cycle = config.triplets_per_cycle or n
    order = np.random.default_rng(config.seed).permutation(n)
    cache = _DistanceCache(X)
    aligned = config.align_triplets
    if config.same_shift:
        shifts = np.array([s.shift_s for s in dataset.samples])
        groups = np.unique(np.round(shifts, 9), return_inverse=True)[1]
        for g in np.unique(groups):
            _check_classes(y[groups == g])
        pools = {int(g): groups == g for g in np.unique(groups)}

    model = MetricModel.identity(dataset.P, dataset.channel_names)
    m = model.m.copy()
    losses: list[float] = []
    violations: list[int] = []
    stop_reason = "max_cycles"
    updates = 0
    step = 0
    for cycle in range(1, config.max_cycles + 1):
        cycle_loss = 0.0
        violated = 0
        for it in range(per_cycle):
            anchor = int(order[step % n])
            step += 1
            pool = pools[int(groups[anchor])] if config.same_shift else None
            pos, neg = _select(cache.distances(anchor, m), y, anchor, pool)
            current = MetricModel(m, dataset.channel_names) if aligned else None
            if aligned:
                d_ap = dtw_distance(X[anchor], X[pos], current)[0]
                d_an = dtw_distance(X[anchor], X[neg], current)[0]
                d_pn = dtw_distance(X[pos], X[neg], current)[0]
            else:
                d_ap = _quad(X[anchor] - X[pos], m)
                d_an = _quad(X[anchor] - X[neg], m)
                d_pn = _quad(X[pos] - X[neg], m)
            if min(d_an, d_pn) - d_ap > config.rho:
                continue
            violated += 1
            cycle_loss += config.rho + d_ap - d_an
            if aligned:
                t = Triplet(dataset[anchor], dataset[pos], dataset[neg], (anchor, pos, neg))
                Pt, Qt = difference_matrices(t, current, aligned=True)
            else:
                Pt, Qt = (X[anchor] - X[pos]).T, (X[anchor] - X[neg]).T
            eta = min(config.eta_base, 0.9 * _eta_bound(m, Pt, Qt))
            m = _woodbury_update(m, Pt, Qt, eta)
            updates += 1
            if config.check_every_update:
                _assert_valid(m, cycle, it)
            if callback is not None:
                callback(cycle, it, m)
        losses.append(cycle_loss)
        violations.append(violated)
        log.info("cycle %d: loss %.6g over %d violated triplets", cycle, cycle_loss, violated)
        if violated == 0:
            stop_reason = "no_violations"
            break
        if cycle > 1:
            prev = losses[-2]
            if prev == 0 or abs((cycle_loss - prev) / prev) < config.epsilon:
                stop_reason = "epsilon"
                break
    meta = {
        "cycles_run": len(losses),
        "cycle_losses": losses,
        "cycle_violations": violations,
        "final_cycle_loss": losses[-1],
        "updates": updates,
        "stop_reason": stop_reason,
        "eta_base": config.eta_base,
        "rho": config.rho,
        "epsilon": config.epsilon,
        "triplets_per_cycle": per_cycle,
        "seed": config.seed,
        "align_triplets": aligned,
        "same_shift": config.same_shift,
    }
    final = MetricModel(m, dataset.channel_names, meta)
    final.check_psd()
    return final


def _quad(D: np.ndarray, m: np.ndarray) -> float:
    return max(float(np.sum((D @ m) * D)), 0.0)


def _assert_valid(m: np.ndarray, cycle: int, it: int) -> None:
    asym = float(np.max(np.abs(m - m.T)))
    lam = float(np.linalg.eigvalsh(m)[0])
    if asym > 1e-10 or lam < -PSD_TOL:
        raise NumericFailure(
            f"invalid metric after update (cycle {cycle}, iteration {it}): "
            f"asymmetry {asym:.3g}, min eigenvalue {lam:.3g}"
        )


class MahalanobisMetricLearner(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`train_metric`.

    ``fit`` takes a ``(n_samples, H, P)`` stack (or a Dataset) and integer
    labels. ``transform`` maps every row into the space where the learned
    distance is Euclidean.
    """

    def __init__(
        self,
        rho=0.0,
        eta_base=0.01,
        epsilon=1e-3,
        max_cycles=10,
        triplets_per_cycle=None,
        align_triplets=False,
        random_state=0,
    ):
        self.rho = rho
        self.eta_base = eta_base
        self.epsilon = epsilon
        self.max_cycles = max_cycles
        self.triplets_per_cycle = triplets_per_cycle
        self.align_triplets = align_triplets
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            rho=self.rho,
            eta_base=self.eta_base,
            epsilon=self.epsilon,
            max_cycles=self.max_cycles,
            triplets_per_cycle=self.triplets_per_cycle,
            seed=self.random_state,
            align_triplets=self.align_triplets,
        )

    def fit(self, X, y=None):
        if isinstance(X, Dataset):
            dataset = X
            self.classes_ = np.unique(X.y)
        else:
            X = check_mts_stack(X)
            self.classes_, enc = np.unique(np.asarray(y), return_inverse=True)
            dataset = as_dataset(X, enc + 1)
        self.metric_ = train_metric(dataset, self._config())
        self.n_features_in_ = dataset.P
        self.components_ = self.metric_.factor.T
        return self

    def get_mahalanobis_matrix(self) -> np.ndarray:
        check_is_fitted(self, "metric_")
        return np.array(self.metric_.m)

    def transform(self, X):
        check_is_fitted(self, "metric_")
        X = check_mts_stack(X, n_channels=self.n_features_in_)
        return X @ self.components_.T
