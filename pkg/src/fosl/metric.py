"""Mahalanobis metric model and the distances it induces.

Distances are kept in squared form, ``(x - y)' M (x - y)``; no square root
is ever taken.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .exceptions import DataError, NumericFailure, ShapeError

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8
CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class MetricModel:
    """A symmetric ``P x P`` metric matrix plus its channel layout."""

    m: np.ndarray
    channel_names: tuple[str, ...] = ()
    training_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"metric matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DataError("metric matrix has non-finite entries")
        asym = np.max(np.abs(m - m.T)) if m.size else 0.0
        if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
            raise DataError(f"metric matrix is not symmetric (max |M - M'| = {asym:.3g})")
        m = (m + m.T) / 2
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        names = tuple(self.channel_names) or tuple(f"ch_{i}" for i in range(m.shape[0]))
        if len(names) != m.shape[0]:
            raise ShapeError(f"{len(names)} channel names for a {m.shape[0]}-dim metric")
        object.__setattr__(self, "channel_names", names)

    @classmethod
    def identity(cls, p_dim: int, channel_names: Sequence[str] = ()) -> "MetricModel":
        return cls(np.eye(p_dim), tuple(channel_names))

    @property
    def p_dim(self) -> int:
        return self.m.shape[0]

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        try:
            w, v = np.linalg.eigh(self.m)
        except np.linalg.LinAlgError as exc:
            raise NumericFailure(f"eigensolver did not converge: {exc}") from exc
        return w, v

    @cached_property
    def factor(self) -> np.ndarray:
        """``L`` with ``M = L L'``; rows of ``X @ L`` live in the whitened space."""
        U, sigma = spectral_factor(self)
        L = U * np.sqrt(sigma)
        L.setflags(write=False)
        return L

    def check_psd(self) -> None:
        lam = min_eigenvalue(self)
        if lam < -PSD_TOL:
            raise NumericFailure(f"metric matrix is not PSD (min eigenvalue {lam:.3g})")


def _vector(x, p: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise ShapeError(f"{what} has shape {x.shape}, expected ({p},)")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{what} has non-finite entries")
    return x


def _clamp(value: float, scale: float) -> float:
    if value >= 0:
        return value
    if value >= -CLAMP_TOL * max(1.0, scale):
        return 0.0
    raise NumericFailure(f"negative distance {value:.3g}: metric is not PSD")


def row_distance(x, y, model: MetricModel) -> float:
    """Squared Mahalanobis distance between two snapshots."""
    p = model.p_dim
    d = _vector(x, p, "x") - _vector(y, p, "y")
    value = float(d @ model.m @ d)
    return _clamp(value, float(d @ d) * np.max(np.abs(model.m), initial=0.0))


def _matrix(a, p: int | None = None) -> np.ndarray:
    values = getattr(a, "values", a)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeError(f"expected an H x P matrix, got shape {values.shape}")
    if p is not None and values.shape[1] != p:
        raise ShapeError(f"matrix has {values.shape[1]} channels, metric expects {p}")
    return values


def lockstep_distance(a, b, model: MetricModel) -> float:
    """Row-by-row sum of squared Mahalanobis distances (equal lengths only)."""
    A = _matrix(a, model.p_dim)
    B = _matrix(b, model.p_dim)
    if A.shape[0] != B.shape[0]:
        raise ShapeError(
            f"lockstep distance needs equal lengths, got H={A.shape[0]} and H={B.shape[0]}"
        )
    D = A - B
    if not np.all(np.isfinite(D)):
        raise DataError("non-finite values in lockstep inputs")
    value = float(np.sum((D @ model.m) * D))
    return _clamp(value, float(np.sum(D * D)) * np.max(np.abs(model.m), initial=0.0))


def pairwise_lockstep(XA: np.ndarray, XB: np.ndarray, model: MetricModel) -> np.ndarray:
    """Lockstep distances between every pair of rows of two sample stacks.

    Uses the expanded quadratic form, so tiny negative values from
    cancellation are clipped to zero.
    """
    XA = np.asarray(XA, dtype=float)
    XB = np.asarray(XB, dtype=float)
    if XA.ndim != 3 or XB.ndim != 3 or XA.shape[1:] != XB.shape[1:]:
        raise ShapeError(f"incompatible stacks {XA.shape} and {XB.shape}")
    if XA.shape[2] != model.p_dim:
        raise ShapeError(f"stacks have P={XA.shape[2]}, metric expects {model.p_dim}")
    # distances are translation invariant; centering limits cancellation
    mu = np.concatenate([XA.reshape(-1, XA.shape[2]), XB.reshape(-1, XB.shape[2])]).mean(axis=0)
    XA = XA - mu
    XB = XB - mu
    L = model.factor
    ZA = (XA @ L).reshape(len(XA), -1)
    ZB = (XB @ L).reshape(len(XB), -1)
    sq_a = np.einsum("ij,ij->i", ZA, ZA)
    sq_b = np.einsum("ij,ij->i", ZB, ZB)
    D = sq_a[:, None] + sq_b[None, :] - 2.0 * (ZA @ ZB.T)
    return np.maximum(D, 0.0)


def spectral_factor(model: MetricModel) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition ``M = U diag(sigma) U'``, sigma descending and clamped at 0."""
    w, v = model._eig
    order = np.argsort(w)[::-1]
    sigma = w[order].copy()
    sigma[(sigma < 0) & (sigma >= -PSD_TOL)] = 0.0
    if np.any(sigma < 0):
        raise NumericFailure(f"metric matrix is not PSD (min eigenvalue {sigma.min():.3g})")
    return v[:, order].copy(), sigma


def min_eigenvalue(model: MetricModel) -> float:
    return float(model._eig[0][0])


# ---------------------------------------------------------------- persistence


def model_to_dict(model: MetricModel) -> dict:
    return {
        "p_dim": model.p_dim,
        "channel_names": list(model.channel_names),
        "m": [float(v) for v in model.m.ravel()],
        "training_meta": model.training_meta,
    }


def model_from_dict(doc: dict) -> MetricModel:
    try:
        p = int(doc["p_dim"])
        m = np.asarray(doc["m"], dtype=float)
        names = tuple(doc["channel_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed metric model: {exc}") from exc
    if m.size != p * p:
        raise ShapeError(f"metric has {m.size} entries, p_dim={p} needs {p * p}")
    model = MetricModel(m.reshape(p, p), names, dict(doc.get("training_meta") or {}))
    model.check_psd()
    return model


def save_model(model: MetricModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> MetricModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read metric model {os.fspath(path)}: {exc}") from exc
    return model_from_dict(doc)
