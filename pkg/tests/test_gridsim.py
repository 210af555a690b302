import math

import numpy as np
import pytest

from fosl.exceptions import ConfigError, NumericFailure
from fosl.gridsim import (
    GeneratorParams,
    GridScenario,
    add_measurement_noise,
    generate_corpus,
    generate_load_noise,
    load_scenario,
    natural_frequency,
    network_modes,
    simulate_scenario,
    smib_forced_amplitude,
)
from fosl.mts import MtsSample
from oracles import smib_measured_amplitude


def test_natural_frequency_examples():
    wn, xi = natural_frequency(GeneratorParams(t_j=10.0, k_s=1.0, k_d=0.0))
    assert wn == pytest.approx(6.1400, abs=5e-5)
    assert xi == 0.0
    assert natural_frequency(GeneratorParams(t_j=40.0))[0] == pytest.approx(wn / 2)


def test_static_deflection():
    g = GeneratorParams(k_s=2.5)
    assert smib_forced_amplitude(g, 0.01, 1e-9) == pytest.approx(0.01 / 2.5)


def test_resonance_ordering():
    g = GeneratorParams(t_j=10.0, k_d=0.05 * 2 * math.sqrt(2 * math.pi * 60 * 10))
    wn = natural_frequency(g)[0]
    amps = [smib_forced_amplitude(g, 0.01, r * wn) for r in np.linspace(0.3, 2.0, 35)]
    assert np.argmax(amps) == int(np.argmin(np.abs(np.linspace(0.3, 2.0, 35) - 1.0)))


def test_undamped_resonance_fails():
    g = GeneratorParams(k_d=0.0)
    with pytest.raises(NumericFailure):
        smib_forced_amplitude(g, 0.01, natural_frequency(g)[0])


@pytest.mark.parametrize("ratio", [0.5, 1.0, 1.5])
def test_smib_matches_closed_form(ratio):
    measured, expected = smib_measured_amplitude(ratio)
    assert measured == pytest.approx(expected, rel=0.02)


def test_spectral_peak_at_forcing_frequency():
    s = GridScenario(source=3, ou_sigma=0.0, duration_s=40.0, t_j_range=None)
    raw = simulate_scenario(s)
    x = raw.values[raw.H // 2 :, 2 * 5]
    spec = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(len(x), 1 / raw.rate_hz)
    assert abs(freqs[np.argmax(spec)] - s.forcing_omega / (2 * math.pi)) <= freqs[1]


def test_zero_input_equilibrium():
    s = GridScenario(fo_amplitude=0.0, ou_sigma=0.0, duration_s=60.0)
    raw = simulate_scenario(s)
    assert np.ptp(raw.values, axis=0).max() <= 1e-9
    q = [i for i, n in enumerate(raw.channel_names) if n.endswith(".q")]
    v = [i for i, n in enumerate(raw.channel_names) if n.endswith(".v")]
    assert np.all(raw.values[:, q] == 0.0) and np.all(raw.values[:, v] == 1.0)


def test_network_modes_sorted():
    modes = network_modes(GridScenario())
    assert np.all(np.diff(modes) >= 0) and modes[0] > 0


def test_ou_statistics():
    u = generate_load_noise(0.2, 0.01, 1e-3, 10**6, seed=7)
    target = 0.01 / math.sqrt(0.4)
    # autocorrelation time 5 s over 1000 s: use a long run of several independent series
    many = generate_load_noise(0.2, 0.01, 0.05, 10**6, seed=8)
    assert many.std() == pytest.approx(target, rel=0.05)
    tau = 1 / 0.2
    n_eff = len(many) * 0.05 / (2 * tau)
    assert abs(many.mean()) <= 3 * target / math.sqrt(n_eff)
    assert u[0] == 0.0
    assert np.array_equal(u, generate_load_noise(0.2, 0.01, 1e-3, 10**6, seed=7))
    assert not generate_load_noise(0.2, 0.0, 1e-3, 100, seed=1).any()


def test_snr_calibration():
    t = np.arange(10**5) / 25.0
    clean = np.column_stack([np.sin(2 * np.pi * 0.5 * t), 3 + 2 * np.cos(2 * np.pi * 1.1 * t), np.full_like(t, 4.0)])
    raw = MtsSample(clean)
    noisy = add_measurement_noise(raw, 13.0, seed=3).values
    noise = noisy - clean
    snr = 10 * np.log10(clean[:, :2].var(axis=0) / noise[:, :2].var(axis=0))
    assert np.all(np.abs(snr - 13.0) <= 0.3)
    assert np.array_equal(noisy[:, 2], clean[:, 2])
    assert add_measurement_noise(raw, math.inf) is raw


def test_corpus_shape_and_determinism():
    t = GridScenario(duration_s=6.0)
    a = generate_corpus(t, 1, [0.0], 5.0)
    assert len(a) == 6 and sorted(a.y.tolist()) == [1, 2, 3, 4, 5, 6]
    b = generate_corpus(t, 2, [0.0, 1.0], 5.0)
    assert len(b) == 6 * 2 * 2
    assert np.array_equal(b.X, generate_corpus(t, 2, [0.0, 1.0], 5.0).X)


def test_off_grid_shift_is_decimated():
    d = generate_corpus(GridScenario(duration_s=6.4), 1, [1.3], 5.0)
    assert d.H == 125 and d.rate_hz == 25.0 and d[0].shift_s == pytest.approx(1.3)


def test_shift_past_horizon():
    with pytest.raises(ConfigError):
        generate_corpus(GridScenario(), 1, [6.0], 5.0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(stiffness=np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0.0]]), n_gens=3, gens=(GeneratorParams(),) * 3),
        dict(source=7),
        dict(rate_hz=30.0),
        dict(ou_c=0.0),
    ],
)
def test_invalid_scenarios(kw):
    with pytest.raises(ConfigError):
        GridScenario(**kw)


def test_scenario_json_round_trip(tmp_path):
    s = GridScenario(fo_amplitude=0.004, seed=9)
    p = tmp_path / "s.json"
    p.write_text(__import__("json").dumps(s.to_dict()))
    back = load_scenario(p)
    assert back.to_dict() == s.to_dict()
    with pytest.raises(ConfigError):
        GridScenario.from_dict({"fo_amp": 1})
