"""Synthetic PMU corpora from a linearized multi-machine swing model.

Each generator ``i`` obeys

    (T_J/w0) dd_i'' + (K_D/w0) dd_i' = dPm_i - dPe_i
    dPe_i = K_S,i dd_i + sum_j K_ij (dd_i - dd_j)

where ``K_S,i`` ties the machine to an infinite bus and ``K_ij`` couples
machines. The forcing ``A sin(w t)`` enters the source's mechanical power
from ``t = 0``; every machine also sees ``-S0 u_i(t)`` with ``u`` an OU
process. With one machine this is exactly the SMIB forced oscillator.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from scipy.sparse.csgraph import connected_components

from .exceptions import ConfigError, InstabilityError, NumericFailure
from .mts import Dataset, MtsSample, build_shifted_training_set, channel_names

F0_HZ = 60.0
OMEGA0 = 2 * math.pi * F0_HZ
MAX_ANGLE_RAD = 10.0


@dataclass(frozen=True)
class GeneratorParams:
    t_j: float = 9.0
    k_d: float = 2.0
    k_s: float = 1.0
    rating: float = 100.0

    def __post_init__(self):
        if not self.t_j > 0:
            raise ConfigError(f"t_j must be positive, got {self.t_j}")
        if not self.k_d >= 0:
            raise ConfigError(f"k_d must be nonnegative, got {self.k_d}")
        if not self.k_s > 0:
            raise ConfigError(f"k_s must be positive, got {self.k_s}")
        if not self.rating > 0:
            raise ConfigError(f"rating must be positive, got {self.rating}")


def ring_stiffness(n_gens: int, coupling: float = 1.0) -> np.ndarray:
    K = np.zeros((n_gens, n_gens))
    if n_gens == 2:
        K[0, 1] = K[1, 0] = coupling
    elif n_gens > 2:
        for i in range(n_gens):
            K[i, (i + 1) % n_gens] = K[(i + 1) % n_gens, i] = coupling
    return K


@dataclass(frozen=True)
class GridScenario:
    """Complete simulator configuration.

    ``source`` is 1-based. ``fo_omega=None`` means "force at the slowest
    network mode of the nominal system". ``t_j_range`` is only used by
    :func:`generate_corpus`, which redraws every inertia per scenario.
    """

    n_gens: int = 6
    stiffness: np.ndarray = field(default_factory=lambda: ring_stiffness(6))
    gens: tuple[GeneratorParams, ...] = tuple(GeneratorParams() for _ in range(6))
    source: int = 1
    fo_amplitude: float = 0.006
    fo_omega: float | None = None
    ou_c: float = 0.2
    ou_sigma: float = 0.01
    load_s0: float = 0.1
    snr_db: float = 13.0
    duration_s: float = 10.0
    rate_hz: float = 25.0
    step_s: float = 1e-3
    zero_source_damping: bool = True
    t_j_range: tuple[float, float] | None = (6.0, 12.0)
    seed: int = 0

    def __post_init__(self):
        K = np.array(self.stiffness, dtype=float)
        n = int(self.n_gens)
        if K.shape != (n, n):
            raise ConfigError(f"stiffness must be {n}x{n}, got {K.shape}")
        if not np.allclose(K, K.T, atol=1e-12):
            raise ConfigError("stiffness matrix must be symmetric")
        off = K - np.diag(np.diag(K))
        if np.any(off < 0):
            raise ConfigError("off-diagonal stiffness entries must be nonnegative")
        if n > 1 and connected_components(off > 0, directed=False)[0] != 1:
            raise ConfigError("stiffness graph is disconnected; expected one synchronous area")
        K.setflags(write=False)
        object.__setattr__(self, "stiffness", K)
        gens = tuple(g if isinstance(g, GeneratorParams) else GeneratorParams(**g) for g in self.gens)
        if len(gens) != n:
            raise ConfigError(f"{len(gens)} generator parameter sets for n_gens={n}")
        object.__setattr__(self, "gens", gens)
        if not 1 <= self.source <= n:
            raise ConfigError(f"source {self.source} outside 1..{n}")
        if self.ou_c <= 0 or self.ou_sigma < 0 or self.load_s0 < 0:
            raise ConfigError("need ou_c > 0, ou_sigma >= 0, load_s0 >= 0")
        if self.fo_omega is not None and self.fo_omega < 0:
            raise ConfigError("fo_omega must be nonnegative")
        for name in ("duration_s", "rate_hz", "step_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if abs(self.duration_s * self.rate_hz - round(self.duration_s * self.rate_hz)) > 1e-9:
            raise ConfigError("duration_s x rate_hz must be an integer")
        stride = 1.0 / (self.rate_hz * self.step_s)
        if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
            raise ConfigError("1/rate_hz must be an integer multiple of step_s")
        if self.t_j_range is not None:
            lo, hi = self.t_j_range
            if not 0 < lo <= hi:
                raise ConfigError(f"invalid t_j_range {self.t_j_range}")
            object.__setattr__(self, "t_j_range", (float(lo), float(hi)))

    @property
    def laplacian(self) -> np.ndarray:
        off = self.stiffness - np.diag(np.diag(self.stiffness))
        return np.diag(off.sum(axis=1)) - off

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    @property
    def forcing_omega(self) -> float:
        return network_modes(self)[0] if self.fo_omega is None else float(self.fo_omega)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stiffness"] = self.stiffness.tolist()
        d["gens"] = [asdict(g) for g in self.gens]
        d["t_j_range"] = list(self.t_j_range) if self.t_j_range is not None else None
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "GridScenario":
        doc = dict(doc)
        n = int(doc.get("n_gens", 6))
        stiff = doc.get("stiffness", "ring")
        if isinstance(stiff, str):
            if stiff != "ring":
                raise ConfigError(f"unknown topology {stiff!r}")
            stiff = ring_stiffness(n, float(doc.pop("coupling", 1.0)))
        doc["stiffness"] = stiff
        gens = doc.get("gens")
        if gens is None:
            doc["gens"] = tuple(GeneratorParams() for _ in range(n))
        elif isinstance(gens, dict):
            doc["gens"] = tuple(GeneratorParams(**gens) for _ in range(n))
        else:
            doc["gens"] = tuple(GeneratorParams(**g) for g in gens)
        if doc.get("t_j_range") is not None:
            doc["t_j_range"] = tuple(doc["t_j_range"])
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown scenario fields {sorted(extra)}")
        return cls(**doc)


def load_scenario(path: str | os.PathLike) -> GridScenario:
    try:
        with open(path, encoding="utf-8") as fh:
            return GridScenario.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read scenario {os.fspath(path)}: {exc}") from exc


def smib_scenario(gen: GeneratorParams, fo_amplitude: float, fo_omega: float, **kw) -> GridScenario:
    """Single machine against an infinite bus; the machine keeps its damping."""
    kw.setdefault("ou_sigma", 0.0)
    kw.setdefault("t_j_range", None)
    return GridScenario(
        n_gens=1,
        stiffness=np.zeros((1, 1)),
        gens=(gen,),
        source=1,
        fo_amplitude=fo_amplitude,
        fo_omega=fo_omega,
        zero_source_damping=False,
        **kw,
    )


# ---------------------------------------------------------------- analytics


def natural_frequency(g: GeneratorParams) -> tuple[float, float]:
    """``(omega_n, xi)`` of a machine against an infinite bus."""
    omega_n = math.sqrt(OMEGA0 * g.k_s / g.t_j)
    xi = g.k_d / (2 * math.sqrt(OMEGA0 * g.k_s * g.t_j))
    return omega_n, xi


def smib_forced_amplitude(g: GeneratorParams, fo_amplitude: float, fo_omega: float) -> float:
    """Steady-state angle amplitude (rad) of the forced SMIB oscillator."""
    omega_n, xi = natural_frequency(g)
    r = fo_omega / omega_n
    denom = math.sqrt((1 - r * r) ** 2 + (2 * xi * r) ** 2)
    if denom == 0.0:
        raise NumericFailure("undamped system forced at resonance has no finite amplitude; set k_d > 0")
    return fo_amplitude / g.k_s / denom


def network_modes(s: GridScenario) -> np.ndarray:
    """Undamped electromechanical mode frequencies (rad/s), ascending."""
    tj = np.array([g.t_j for g in s.gens])
    ks = np.array([g.k_s for g in s.gens])
    K = np.diag(ks) + s.laplacian
    # symmetric similarity transform of T^-1 K
    scale = 1 / np.sqrt(tj)
    lam = np.linalg.eigvalsh(OMEGA0 * scale[:, None] * K * scale[None, :])
    return np.sqrt(np.clip(lam, 0, None))


# ---------------------------------------------------------------- noise


def generate_load_noise(
    ou_c: float, ou_sigma: float, dt: float, steps: int, seed=None, n_series: int | None = None
) -> np.ndarray:
    """Exact-discretization OU samples starting from ``u_0 = 0``.

    Returns shape ``(steps,)``, or ``(steps, n_series)`` for independent
    components.
    """
    if ou_c <= 0 or dt <= 0:
        raise ConfigError("need ou_c > 0 and dt > 0")
    shape = (steps,) if n_series is None else (steps, n_series)
    u = np.zeros(shape)
    if ou_sigma == 0 or steps < 2:
        return u
    rng = np.random.default_rng(seed)
    phi = math.exp(-ou_c * dt)
    scale = ou_sigma * math.sqrt((1 - phi * phi) / (2 * ou_c))
    shocks = scale * rng.standard_normal((steps - 1,) + shape[1:])
    _ou_recursion(u, shocks, phi)
    return u


@njit(cache=True)
def _ou_recursion(u, shocks, phi):
    for n in range(shocks.shape[0]):
        u[n + 1] = u[n] * phi + shocks[n]


def add_measurement_noise(raw: MtsSample, snr_db: float, seed=None) -> MtsSample:
    """White Gaussian noise per channel at the given SNR relative to its AC power."""
    if math.isinf(snr_db) and snr_db > 0:
        return raw
    rng = np.random.default_rng(seed)
    values = raw.values
    var = values.var(axis=0)
    noise_std = np.sqrt(var / 10 ** (snr_db / 10))
    noise = rng.standard_normal(values.shape) * noise_std
    return raw.with_values(values + noise)


# ---------------------------------------------------------------- integration


@njit(cache=True)
def _deriv(x, w, t, tj, kd, K, amp, omega, load, w0):
    n = tj.shape[0]
    dw = np.empty(n)
    f = math.sin(omega * t)
    for i in range(n):
        pe = 0.0
        for j in range(n):
            pe += K[i, j] * x[j]
        pm = amp[i] * f - load[i]
        dw[i] = (w0 * (pm - pe) - kd[i] * w[i]) / tj[i]
    return dw


@njit(cache=True)
def _rk4_batch(tj, kd, K, amp, omega, load, dt, stride, n_out, w0):
    """Fixed-step RK4 for a batch of independent systems.

    ``load[b, n]`` is held constant over step ``n``. Returns the angle and
    speed deviation at every ``stride``-th step.
    """
    B, N = tj.shape
    ang = np.empty((B, n_out, N))
    spd = np.empty((B, n_out, N))
    for b in range(B):
        x = np.zeros(N)
        w = np.zeros(N)
        for k in range(n_out):
            ang[b, k] = x
            spd[b, k] = w
            if k == n_out - 1:
                break
            for s in range(stride):
                n = k * stride + s
                t = n * dt
                ld = load[b, n]
                k1x = w
                k1w = _deriv(x, w, t, tj[b], kd[b], K[b], amp[b], omega[b], ld, w0)
                x2 = x + 0.5 * dt * k1x
                w2 = w + 0.5 * dt * k1w
                k2w = _deriv(x2, w2, t + 0.5 * dt, tj[b], kd[b], K[b], amp[b], omega[b], ld, w0)
                x3 = x + 0.5 * dt * w2
                w3 = w + 0.5 * dt * k2w
                k3w = _deriv(x3, w3, t + 0.5 * dt, tj[b], kd[b], K[b], amp[b], omega[b], ld, w0)
                x4 = x + dt * w3
                w4 = w + dt * k3w
                k4w = _deriv(x4, w4, t + dt, tj[b], kd[b], K[b], amp[b], omega[b], ld, w0)
                x = x + dt / 6.0 * (k1x + 2.0 * w2 + 2.0 * w3 + w4)
                w = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return ang, spd


def _system_arrays(s: GridScenario):
    tj = np.array([g.t_j for g in s.gens])
    kd = np.array([g.k_d for g in s.gens])
    if s.zero_source_damping:
        kd[s.source - 1] = 0.0
    K = np.diag([g.k_s for g in s.gens]) + s.laplacian
    amp = np.zeros(s.n_gens)
    amp[s.source - 1] = s.fo_amplitude
    return tj, kd, K, amp


def _outputs(s: GridScenario, ang: np.ndarray, spd: np.ndarray) -> MtsSample:
    K = np.diag([g.k_s for g in s.gens]) + s.laplacian
    rating = np.array([g.rating for g in s.gens])
    pe = ang @ K.T * rating
    cols = np.stack(
        [
            np.degrees(ang),
            F0_HZ + spd / (2 * math.pi),
            pe,
            np.zeros_like(ang),
            np.ones_like(ang),
        ],
        axis=2,
    )
    return MtsSample(
        values=cols.reshape(len(ang), -1),
        label=s.source,
        rate_hz=s.rate_hz,
        channel_names=channel_names(s.n_gens),
        seed=s.seed,
    )


def simulate_batch(scenarios: Sequence[GridScenario], names: Sequence[str] | None = None) -> list[MtsSample]:
    """Simulate scenarios sharing ``n_gens``, timing and step size.

    Each result is bit-identical to :func:`simulate_scenario` on that
    scenario alone.
    """
    if not scenarios:
        return []
    s0 = scenarios[0]
    for s in scenarios:
        if (s.n_gens, s.duration_s, s.rate_hz, s.step_s) != (s0.n_gens, s0.duration_s, s0.rate_hz, s0.step_s):
            raise ConfigError("batched scenarios must share n_gens, duration_s, rate_hz, step_s")
    stride = int(round(1.0 / (s0.rate_hz * s0.step_s)))
    n_out = s0.n_samples
    steps = max(1, (n_out - 1) * stride)
    arrays = [_system_arrays(s) for s in scenarios]
    tj, kd, K, amp = (np.stack(a) for a in zip(*arrays))
    omega = np.array([s.forcing_omega for s in scenarios])
    load = np.stack(
        [
            s.load_s0
            * generate_load_noise(s.ou_c, s.ou_sigma, s.step_s, steps, s.seed, n_series=s.n_gens)
            for s in scenarios
        ]
    )
    ang, spd = _rk4_batch(tj, kd, K, amp, omega, load, s0.step_s, stride, n_out, OMEGA0)
    out = []
    for b, s in enumerate(scenarios):
        if not (np.all(np.isfinite(ang[b])) and np.max(np.abs(ang[b])) <= MAX_ANGLE_RAD):
            label = names[b] if names else f"seed={s.seed}, source={s.source}"
            raise InstabilityError(f"angle deviation exceeded {MAX_ANGLE_RAD} rad in scenario {label}")
        out.append(_outputs(s, ang[b], spd[b]))
    return out


def simulate_scenario(s: GridScenario) -> MtsSample:
    """Long-horizon noiseless trace, all five quantities per generator."""
    return simulate_batch([s])[0]


# ---------------------------------------------------------------- corpora


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def draw_scenario(template: GridScenario, source: int, j: int, stream: int = 0) -> GridScenario:
    """Operating condition ``j`` with the forcing applied at ``source``.

    Inertias depend on ``(seed, stream, j)`` only, so all sources are
    perturbed under the same operating condition; OU and measurement noise
    depend on the source too.
    """
    gens = template.gens
    if template.t_j_range is not None:
        rng = np.random.default_rng(derive_seed(template.seed, stream, j))
        lo, hi = template.t_j_range
        gens = tuple(replace(g, t_j=float(t)) for g, t in zip(gens, rng.uniform(lo, hi, len(gens))))
    return replace(
        template,
        gens=gens,
        source=source,
        fo_omega=template.forcing_omega,
        seed=derive_seed(template.seed, stream, source, j),
    )


def _sampling_multiple(shifts_s: Sequence[float], s: GridScenario) -> int:
    """Smallest ``m`` such that every shift lies on the ``m * rate_hz`` grid."""
    max_m = int(round(1.0 / (s.rate_hz * s.step_s)))
    for m in range(1, max_m + 1):
        fine = s.rate_hz * m
        stride = 1.0 / (fine * s.step_s)
        if abs(stride - round(stride)) > 1e-9:
            continue
        if all(abs(t * fine - round(t * fine)) <= 1e-9 * max(1.0, t * fine) for t in shifts_s):
            return m
    raise ConfigError(f"shifts {list(shifts_s)} are not multiples of the {s.step_s} s integration step")


def generate_corpus(
    template_scenario: GridScenario,
    n_scenarios_per_class: int,
    shifts_s: Sequence[float],
    window_s: float,
    stream: int = 0,
    keep_raw: bool = False,
    batch_size: int = 64,
):
    """Labeled, noisy, windowed corpus of ``N x J x |shifts|`` samples.

    Returns the dataset, or ``(dataset, raw_traces)`` with ``keep_raw``.
    """
    if n_scenarios_per_class < 1:
        raise ConfigError("need at least one scenario per class")
    if max(shifts_s) + window_s > template_scenario.duration_s + 1e-9:
        raise ConfigError(
            f"duration_s={template_scenario.duration_s} too short for shift "
            f"{max(shifts_s)} + window {window_s}"
        )
    N = template_scenario.n_gens
    rate = template_scenario.rate_hz
    m = _sampling_multiple(shifts_s, template_scenario)
    if m > 1:
        # off-grid delays: sample finer, window, then decimate back to rate_hz
        template_scenario = replace(template_scenario, rate_hz=rate * m)
    jobs = [(i, j) for i in range(1, N + 1) for j in range(1, n_scenarios_per_class + 1)]
    raws = []
    for start in range(0, len(jobs), batch_size):
        chunk = jobs[start : start + batch_size]
        scenarios = [draw_scenario(template_scenario, i, j, stream) for i, j in chunk]
        names = [f"(source={i}, j={j})" for i, j in chunk]
        for (i, j), s, trace in zip(chunk, scenarios, simulate_batch(scenarios, names)):
            raws.append(replace(trace, scenario_id=j))
    noisy = [
        add_measurement_noise(r, template_scenario.snr_db, derive_seed(r.seed, 1)) for r in raws
    ]
    dataset = build_shifted_training_set(noisy, shifts_s, window_s, n_classes=N)
    if m > 1:
        dataset = Dataset(
            tuple(replace(w, values=w.values[::m], rate_hz=rate) for w in dataset.samples), N
        )
    return (dataset, raws) if keep_raw else dataset
