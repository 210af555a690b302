"""Multivariate DTW with a Mahalanobis local cost.

Local cost between rows ``x(i)`` and ``y(j)`` is the squared Mahalanobis
distance. The accumulated cost follows the symmetric three-way recurrence

    D(i, j) = d_M(x(i), y(j)) + min(D(i-1, j-1), D(i-1, j), D(i, j-1))

with ``D(0, 0) = d_M(x(0), y(0))``. Indices are 0-based throughout.

Rows are mapped through ``L`` (``M = L L'``) once per series, so each cell
costs ``O(P)`` instead of ``O(P^2)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import ConfigError, PathError, ShapeError
from .metric import MetricModel, _matrix

_NO_BAND = -1


@njit(cache=True)
def _accumulate(za, zb, band):
    n, m, p = za.shape[0], zb.shape[0], za.shape[1]
    D = np.full((n, m), np.inf)
    for i in range(n):
        lo, hi = 0, m
        if band >= 0:
            lo = max(0, i - band)
            hi = min(m, i + band + 1)
        for j in range(lo, hi):
            c = 0.0
            for k in range(p):
                d = za[i, k] - zb[j, k]
                c += d * d
            if i == 0 and j == 0:
                D[i, j] = c
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = D[i - 1, j - 1]
            if i > 0 and D[i - 1, j] < best:
                best = D[i - 1, j]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = c + best
    return D


@njit(cache=True)
def _dtw_value(za, zb, band, prev, cur):
    n, m, p = za.shape[0], zb.shape[0], za.shape[1]
    for j in range(m):
        prev[j] = np.inf
    for i in range(n):
        lo, hi = 0, m
        if band >= 0:
            lo = max(0, i - band)
            hi = min(m, i + band + 1)
        for j in range(m):
            cur[j] = np.inf
        for j in range(lo, hi):
            c = 0.0
            for k in range(p):
                d = za[i, k] - zb[j, k]
                c += d * d
            if i == 0 and j == 0:
                cur[j] = c
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = prev[j - 1]
            if i > 0 and prev[j] < best:
                best = prev[j]
            if j > 0 and cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = c + best
        for j in range(m):
            prev[j] = cur[j]
    return prev[m - 1]


@njit(cache=True)
def _dtw_many(za, ZB, band):
    out = np.empty(ZB.shape[0])
    prev = np.empty(ZB.shape[1])
    cur = np.empty(ZB.shape[1])
    for r in range(ZB.shape[0]):
        out[r] = _dtw_value(za, ZB[r], band, prev, cur)
    return out


@dataclass(frozen=True)
class WarpPath:
    """Monotone, unit-step, boundary-anchored alignment of two series.

    ``pairs[k] = (w1, w2)`` says row ``w1`` of the first series corresponds
    to row ``w2`` of the second.
    """

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.intp).reshape(-1, 2)
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def w1(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def w2(self) -> np.ndarray:
        return self.pairs[:, 1]

    def validate(self, h1: int, h2: int) -> None:
        """Raise PathError unless the path is admissible for lengths ``h1, h2``."""
        p = self.pairs
        if len(p) == 0:
            raise PathError("empty warp path")
        if tuple(p[0]) != (0, 0) or tuple(p[-1]) != (h1 - 1, h2 - 1):
            raise PathError(f"path must run from (0, 0) to ({h1 - 1}, {h2 - 1})")
        steps = np.diff(p, axis=0)
        ok = np.all((steps >= 0) & (steps <= 1), axis=1) & (steps.sum(axis=1) >= 1)
        if not np.all(ok):
            raise PathError(f"non-unit or non-monotone step at k={int(np.argmin(ok)) + 1}")
        if len(p) > h1 + h2 - 1:
            raise PathError("path longer than h1 + h2 - 1")

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("k,w1,w2\n")
            for k, (a, b) in enumerate(self.pairs):
                fh.write(f"{k},{a},{b}\n")


def _check_band(band, h1: int, h2: int) -> int:
    if band is None:
        return _NO_BAND
    band = int(band)
    if band < abs(h1 - h2):
        raise ConfigError(f"band {band} < |H1 - H2| = {abs(h1 - h2)}: no admissible path")
    return band


def _prepare(a, b, model: MetricModel):
    A = _matrix(a)
    B = _matrix(b)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"channel counts differ: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[1] != model.p_dim:
        raise ShapeError(f"series have P={A.shape[1]}, metric expects {model.p_dim}")
    if len(A) == 0 or len(B) == 0:
        raise ShapeError("DTW needs non-empty series")
    L = model.factor
    return np.ascontiguousarray(A @ L), np.ascontiguousarray(B @ L)


def _backtrack(D: np.ndarray) -> np.ndarray:
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, vert, horiz = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
            if diag <= vert and diag <= horiz:
                i, j = i - 1, j - 1
            elif vert <= horiz:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return np.array(path[::-1], dtype=np.intp)


def accumulated_cost(a, b, model: MetricModel, band: int | None = None) -> np.ndarray:
    """The full accumulated-cost matrix (``inf`` outside the band)."""
    za, zb = _prepare(a, b, model)
    return _accumulate(za, zb, _check_band(band, len(za), len(zb)))


def dtw_distance(a, b, model: MetricModel, band: int | None = None) -> tuple[float, WarpPath]:
    """Optimal DTW cost and a warp path realising it.

    Among cost-equal predecessors the backtrack prefers the diagonal, then
    the vertical (advance ``a`` only), then the horizontal move.
    """
    D = accumulated_cost(a, b, model, band)
    return float(D[-1, -1]), WarpPath(_backtrack(D))


def align(a, b, path: WarpPath) -> tuple[np.ndarray, np.ndarray]:
    """Expand both series along ``path`` so row ``k`` of each corresponds."""
    A = _matrix(a)
    B = _matrix(b)
    w1, w2 = path.w1, path.w2
    if len(path) == 0 or w1.min() < 0 or w2.min() < 0 or w1.max() >= len(A) or w2.max() >= len(B):
        raise PathError(f"path indices out of range for lengths {len(A)} and {len(B)}")
    return A[w1], B[w2]


def aligned_distance(a, b, model: MetricModel, band: int | None = None) -> float:
    """DTW cost only; skips the full matrix and the backtrack."""
    za, zb = _prepare(a, b, model)
    bw = _check_band(band, len(za), len(zb))
    return float(_dtw_value(za, zb, bw, np.empty(len(zb)), np.empty(len(zb))))


def dtw_to_many(query, refs: np.ndarray, model: MetricModel, band: int | None = None) -> np.ndarray:
    """DTW cost from one query to each sample of a ``(n, H, P)`` stack."""
    refs = np.asarray(refs, dtype=float)
    if refs.ndim != 3:
        raise ShapeError(f"reference stack must be 3-D, got shape {refs.shape}")
    zq, _ = _prepare(query, refs[0], model) if len(refs) else (None, None)
    if zq is None:
        return np.empty(0)
    if refs.shape[2] != model.p_dim:
        raise ShapeError(f"references have P={refs.shape[2]}, metric expects {model.p_dim}")
    ZB = np.ascontiguousarray(refs @ model.factor)
    return _dtw_many(zq, ZB, _check_band(band, len(zq), refs.shape[1]))
