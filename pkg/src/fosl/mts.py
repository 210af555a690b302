"""Multivariate time-series samples, datasets, windowing and dataset I/O.

A sample is an ``H x P`` matrix whose rows are synchronized snapshots and
whose columns are PMU channels named ``g<gen>.<quantity>``. Columns are
ordered generator-major, quantity-minor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import AlignmentError, DataError, RangeError, ShapeError

QUANTITIES = ("angle", "speed", "p", "q", "v")

MANIFEST_NAME = "manifest.json"
_GRID_TOL = 1e-9


def channel_names(n_gens: int, quantities: Sequence[str] = QUANTITIES) -> tuple[str, ...]:
    """Column names for ``n_gens`` generators, generator-major."""
    unknown = [q for q in quantities if q not in QUANTITIES]
    if unknown:
        raise DataError(f"unknown quantities {unknown}; expected a subset of {QUANTITIES}")
    ordered = [q for q in QUANTITIES if q in quantities]
    return tuple(f"g{g}.{q}" for g in range(1, n_gens + 1) for q in ordered)


def parse_channel(name: str) -> tuple[int, str]:
    gen, _, quantity = name.partition(".")
    if not gen.startswith("g") or quantity not in QUANTITIES:
        raise DataError(f"channel name {name!r} does not follow 'g<gen>.<quantity>'")
    try:
        return int(gen[1:]), quantity
    except ValueError:
        raise DataError(f"channel name {name!r} has a non-integer generator index") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MtsSample:
    """One labeled ``H x P`` window (or long raw trace)."""

    values: np.ndarray
    label: int | None = None
    scenario_id: int = 0
    shift_s: float = 0.0
    rate_hz: float = 25.0
    channel_names: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeError(f"sample values must be 2-D (H x P), got shape {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            r, c = bad[0]
            raise DataError(f"non-finite value at data row {r}, column {c} (0-based)")
        names = tuple(self.channel_names) or tuple(f"ch_{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ShapeError(
                f"{len(names)} channel names given for {values.shape[1]} columns"
            )
        if self.rate_hz <= 0:
            raise DataError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.shift_s < 0:
            raise DataError(f"shift_s must be nonnegative, got {self.shift_s}")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "channel_names", names)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def H(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    @property
    def horizon_s(self) -> float:
        return self.H / self.rate_hz

    def with_values(self, values: np.ndarray, **changes) -> "MtsSample":
        return replace(self, values=values, **changes)

    def select_channels(self, names: Sequence[str]) -> "MtsSample":
        index = {n: i for i, n in enumerate(self.channel_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise ShapeError(f"channels {missing} not present in sample")
        cols = [index[n] for n in names]
        return replace(self, values=self.values[:, cols], channel_names=tuple(names))


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of samples sharing ``H``, ``P``, rate and channels."""

    samples: tuple[MtsSample, ...]
    n_classes: int | None = None
    attrs: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            if self.n_classes is None:
                object.__setattr__(self, "n_classes", 0)
            return
        first = samples[0]
        for k, s in enumerate(samples):
            if s.values.shape != first.values.shape:
                raise ShapeError(
                    f"sample {k} has shape {s.values.shape}, expected {first.values.shape}"
                )
            if s.rate_hz != first.rate_hz or s.channel_names != first.channel_names:
                raise DataError(f"sample {k} differs in rate or channel layout from sample 0")
            if s.label is None:
                raise DataError(f"sample {k} has no label")
        labels = [s.label for s in samples]
        n = self.n_classes if self.n_classes is not None else max(labels)
        bad = [lab for lab in labels if not 1 <= lab <= n]
        if bad:
            raise DataError(f"labels {sorted(set(bad))} outside 1..{n}")
        object.__setattr__(self, "n_classes", int(n))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[MtsSample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> MtsSample:
        return self.samples[i]

    @property
    def H(self) -> int:
        return self.samples[0].H

    @property
    def P(self) -> int:
        return self.samples[0].P

    @property
    def rate_hz(self) -> float:
        return self.samples[0].rate_hz

    @property
    def channel_names(self) -> tuple[str, ...]:
        return self.samples[0].channel_names

    @property
    def channels_per_gen(self) -> int:
        gens = {parse_channel(n)[0] for n in self.channel_names}
        return self.P // len(gens)

    @property
    def quantities(self) -> tuple[str, ...]:
        seen = {parse_channel(n)[1] for n in self.channel_names}
        return tuple(q for q in QUANTITIES if q in seen)

    @property
    def n_gens(self) -> int:
        return len({parse_channel(n)[0] for n in self.channel_names})

    @cached_property
    def X(self) -> np.ndarray:
        """Stacked values, shape ``(n_samples, H, P)``."""
        X = np.stack([s.values for s in self.samples]) if self.samples else np.empty((0, 0, 0))
        X.setflags(write=False)
        return X

    @cached_property
    def y(self) -> np.ndarray:
        y = np.array([s.label for s in self.samples], dtype=int)
        y.setflags(write=False)
        return y

    @property
    def manifest(self) -> list[dict]:
        return [
            {
                "label": s.label,
                "scenario_id": s.scenario_id,
                "shift_s": s.shift_s,
                "seed": s.seed,
                "H": s.H,
                "P": s.P,
                "rate_hz": s.rate_hz,
                "channel_names": list(s.channel_names),
            }
            for s in self.samples
        ]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.n_classes, dict(self.attrs))

    def select_quantities(self, quantities: Sequence[str]) -> "Dataset":
        names = channel_names(self.n_gens, quantities)
        return Dataset(
            tuple(s.select_channels(names) for s in self.samples), self.n_classes, dict(self.attrs)
        )


def _grid_index(t: float, rate_hz: float, what: str) -> int:
    pos = t * rate_hz
    idx = round(pos)
    if abs(pos - idx) > _GRID_TOL * max(1.0, abs(pos)):
        raise AlignmentError(f"{what}={t} s is not on the {rate_hz} Hz sampling grid")
    return int(idx)


def window_slice(raw: MtsSample, t_start: float, window_s: float) -> MtsSample:
    """Cut the rows ``[t_start, t_start + window_s)`` out of ``raw``."""
    if t_start < 0:
        raise RangeError(f"t_start must be nonnegative, got {t_start}")
    start = _grid_index(t_start, raw.rate_hz, "t_start")
    length = _grid_index(window_s, raw.rate_hz, "window_s")
    if length <= 0:
        raise RangeError(f"window_s must be positive, got {window_s}")
    if start + length > raw.H:
        raise RangeError(
            f"window [{t_start}, {t_start + window_s}) s exceeds the {raw.horizon_s} s horizon"
        )
    return replace(raw, values=raw.values[start : start + length], shift_s=float(t_start))


def build_shifted_training_set(
    raw_samples: Sequence[MtsSample],
    shifts_s: Sequence[float],
    window_s: float,
    n_classes: int | None = None,
) -> Dataset:
    """One window per ``(raw sample, shift)`` pair, raw-major order."""
    windows = [window_slice(raw, t, window_s) for raw in raw_samples for t in shifts_s]
    return Dataset(tuple(windows), n_classes)


# ---------------------------------------------------------------- file I/O


def write_sample_csv(path: str | os.PathLike, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    header = ",".join(f"ch_{i}" for i in range(values.shape[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_sample_csv(path: str | os.PathLike, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Parse a sample CSV, checking header width and (optionally) shape."""
    name = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            rows = [line for line in fh.read().split("\n") if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read sample file {name}: {exc}") from exc
    cols = header.split(",") if header else []
    if cols != [f"ch_{i}" for i in range(len(cols))]:
        raise DataError(f"{name}: malformed header {header!r}")
    try:
        values = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{name}: unparseable number ({exc})") from exc
    if values.size == 0:
        values = values.reshape(0, len(cols))
    if values.ndim != 2 or values.shape[1] != len(cols):
        raise ShapeError(f"{name}: rows do not all have {len(cols)} fields")
    if expected_shape is not None:
        H, P = expected_shape
        if len(cols) != P:
            raise ShapeError(f"{name}: header has {len(cols)} channels, manifest declares P={P}")
        if values.shape[0] != H:
            raise ShapeError(f"{name}: {values.shape[0]} rows, manifest declares H={H}")
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{name}: non-finite value at data row {r}, column {c} (0-based)")
    return values


def save_dataset(dataset: Dataset, root: str | os.PathLike) -> None:
    os.makedirs(root, exist_ok=True)
    entries = []
    width = max(4, len(str(len(dataset))))
    for k, (s, meta) in enumerate(zip(dataset.samples, dataset.manifest)):
        fname = f"sample_{k:0{width}d}.csv"
        write_sample_csv(os.path.join(root, fname), s.values)
        entries.append({"file": fname, **meta})
    doc = {"n_classes": dataset.n_classes, "attrs": dataset.attrs, "samples": entries}
    with open(os.path.join(root, MANIFEST_NAME), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


_REQUIRED = ("file", "label", "scenario_id", "shift_s", "seed", "H", "P", "rate_hz", "channel_names")


def load_dataset(root: str | os.PathLike) -> Dataset:
    path = os.path.join(root, MANIFEST_NAME)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no {MANIFEST_NAME} in {os.fspath(root)}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    entries = doc.get("samples") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise DataError(f"malformed manifest {path}: missing 'samples' list")
    samples = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or any(f not in e for f in _REQUIRED):
            raise DataError(f"manifest entry {k} lacks one of {_REQUIRED}")
        values = read_sample_csv(os.path.join(root, e["file"]), (int(e["H"]), int(e["P"])))
        if len(e["channel_names"]) != int(e["P"]):
            raise DataError(f"manifest entry {k}: channel_names length != P")
        samples.append(
            MtsSample(
                values=values,
                label=e["label"],
                scenario_id=int(e["scenario_id"]),
                shift_s=float(e["shift_s"]),
                rate_hz=float(e["rate_hz"]),
                channel_names=tuple(e["channel_names"]),
                seed=e["seed"],
            )
        )
    return Dataset(tuple(samples), doc.get("n_classes"), dict(doc.get("attrs") or {}))
