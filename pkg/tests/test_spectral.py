import math

import numpy as np
import pytest
from scipy import constants as C

from levcool import dynamics as D
from levcool import model as M
from levcool import spectral as S
from levcool.errors import BandOutOfRange, NoPeak, TooShort, UnderResolved

from conftest import TWO_PI, gas_system


def _grid(f_max=60e3, df=10.0):
    return np.arange(0.0, f_max, df)


def _synthetic(center, linewidth, area, floor, df=10.0, n_segments=1, duration=1.0):
    f = _grid(df=df)
    return S.Psd(f, S.lorentzian(f, center, linewidth, area, floor), n_segments, duration=duration)


def test_tone_parseval():
    dt, n, a = 1e-6, 1 << 18, 3e-9
    t = np.arange(n) * dt
    x = a * np.sin(TWO_PI * 47e3 * t + 0.3)
    psd = S.welch_psd(x, 4096, dt=dt)
    assert psd.variance() == pytest.approx(a**2 / 2, rel=0.01)


def test_white_noise_level():
    dt, sigma = 1e-6, 2e-9
    x = sigma * np.random.default_rng(1).standard_normal(1 << 18)
    psd = S.welch_psd(x, 1024, dt=dt)
    assert np.mean(psd.values[1:-1]) == pytest.approx(2 * sigma**2 * dt, rel=0.05)


def test_convention_round_trip_keeps_variance():
    psd = _synthetic(TWO_PI * 47e3, TWO_PI * 100, 1e-18, 0.0)
    ang = psd.to_convention(S.TWO_SIDED_ANGULAR)
    assert ang.variance() == pytest.approx(psd.variance(), rel=1e-12)
    back = ang.to_convention(S.ONE_SIDED_HZ)
    np.testing.assert_allclose(back.frequencies, psd.frequencies, rtol=1e-15)


def test_gas_only_oscillator_spectrum():
    system = gas_system(TWO_PI * 500)
    fb = M.FeedbackParams()
    # leapfrog dispersion shifts the peak by Omega (Omega dt)^2 / 24; 100 steps keeps it under a bin
    cfg = D.SimConfig.for_system(system, fb, 1000 / system.gamma0, seed=4, steps_per_period=100)
    runs = D.integrate_ensemble(system, fb, cfg, 4)
    seg = 1 << int(round(math.log2(TWO_PI * 20 / (system.gamma0 * cfg.dt))))
    psd = S.average_psds(S.welch_psd(r, seg) for r in runs)
    fit = S.fit_lorentzian(psd)
    assert abs(fit["center"] - system.omega) / TWO_PI <= psd.df
    assert fit["linewidth"] == pytest.approx(system.gamma0, rel=0.10)
    est = S.temperature_from_area(psd, system.mass, system.omega, fit=fit)
    assert est.t_eff == pytest.approx(300, rel=0.05)
    assert est.t_err == pytest.approx(300 * math.sqrt(2 / (system.gamma0 * psd.duration)), rel=0.1)


def test_area_of_analytic_lorentzian():
    center, width, area = TWO_PI * 47e3, TWO_PI * 200, 4.2e-18
    psd = _synthetic(center, width, area, 0.0)
    mass = 7.07e-18
    expected = mass * center**2 * area / C.k
    est = S.temperature_from_area(psd, mass, center)
    assert est.t_eff == pytest.approx(expected, rel=0.02)
    raw = S.temperature_from_area(psd, mass, center, tail_correction=False)
    # a +-10 linewidth band holds about 2 / pi * atan(20) of the area
    assert raw.t_eff / expected == pytest.approx(2 / math.pi * math.atan(20), rel=0.01)


def test_area_subtracts_floor():
    center, width, area = TWO_PI * 47e3, TWO_PI * 200, 4.2e-18
    mass = 7.07e-18
    clean = S.temperature_from_area(_synthetic(center, width, area, 0.0), mass, center)
    floored = S.temperature_from_area(_synthetic(center, width, area, 1e-23), mass, center)
    assert floored.t_eff == pytest.approx(clean.t_eff, rel=0.02)


def test_noiseless_fit_is_exact():
    truth = (TWO_PI * 47e3, TWO_PI * 300, 3e-18, 2e-24)
    psd = _synthetic(*truth)
    for weighted in (False, True):
        fit = S.fit_lorentzian(psd, weighted=weighted)
        np.testing.assert_allclose(fit.params, truth, rtol=1e-9)


def test_fit_errors_match_scatter():
    # averaged periodogram bins are Gamma distributed about the true spectrum
    truth = (TWO_PI * 47e3, TWO_PI * 300, 3e-18, 2e-24)
    n_seg = 40
    k = n_seg / S.HANN_HALF_OVERLAP_VARIANCE
    rng = np.random.default_rng(7)
    base = _synthetic(*truth, n_segments=n_seg)
    widths, sigmas = [], []
    for _ in range(150):
        noisy = S.Psd(base.frequencies, base.values * rng.gamma(k, 1 / k, base.values.size), n_seg)
        fit = S.fit_lorentzian(noisy)
        widths.append(fit["linewidth"])
        sigmas.append(fit.sigma("linewidth"))
    assert np.mean(widths) == pytest.approx(truth[1], rel=0.01)
    assert np.std(widths) / np.mean(sigmas) == pytest.approx(1, abs=0.2)


def test_linewidth_of_strongly_damped_peak():
    psd = _synthetic(TWO_PI * 47e3, TWO_PI * 1.92e3, 1e-19, 1e-25, df=50.0)
    fit = S.fit_lorentzian(psd)
    assert fit["linewidth"] / TWO_PI == pytest.approx(1.92e3, rel=0.10)


def test_flat_spectrum_has_no_peak():
    f = _grid()
    rng = np.random.default_rng(0)
    flat = S.Psd(f, 1e-24 * rng.gamma(20, 1 / 20, f.size), 20)
    with pytest.raises(NoPeak):
        S.fit_lorentzian(flat)
    with pytest.raises(BandOutOfRange):
        S.temperature_from_area(flat, 7.07e-18, TWO_PI * 47e3)


def test_band_outside_grid():
    psd = _synthetic(TWO_PI * 47e3, TWO_PI * 200, 1e-18, 0.0)
    with pytest.raises(BandOutOfRange):
        S.temperature_from_area(psd, 7.07e-18, TWO_PI * 47e3, band=(40e3, 90e3))
    with pytest.raises(BandOutOfRange):
        S.temperature_from_area(psd, 7.07e-18, TWO_PI * 47e3, band=(10e3, 20e3))
    with pytest.raises(BandOutOfRange):
        S.fit_lorentzian(psd, band=(47e3, 47.02e3))


def test_under_resolved_peak():
    psd = _synthetic(TWO_PI * 47e3, TWO_PI * 15, 1e-18, 0.0)
    with pytest.raises(UnderResolved):
        S.fit_lorentzian(psd)


def test_too_short_records():
    x = np.zeros(100)
    with pytest.raises(TooShort):
        S.welch_psd(x, 128, dt=1e-6)
    with pytest.raises(TooShort):
        S.welch_psd(x, 100, dt=1e-6)


def test_average_psds():
    a = S.Psd(_grid(), np.full(6000, 1.0), 3, duration=1.0)
    b = S.Psd(_grid(), np.full(6000, 3.0), 5, duration=2.0)
    m = S.average_psds([a, b])
    assert np.all(m.values == 2.0)
    assert m.n_segments == 8 and m.duration == 3.0
    with pytest.raises(ValueError):
        S.average_psds([a, S.Psd(_grid(df=20.0), np.ones(3000))])
    with pytest.raises(ValueError):
        S.average_psds([])


def test_phonons_from_estimate():
    est = S.TemperatureEstimate(1.2e-3, 1e-4, "area", TWO_PI * 47e3, 100.0)
    n, dn = S.phonons_from_estimate(est)
    hbar = 6.62607015e-34 / (2 * math.pi)
    assert n == pytest.approx(1.380649e-23 * 1.2e-3 / (hbar * TWO_PI * 47e3), rel=1e-12)
    assert dn / n == pytest.approx(1e-4 / 1.2e-3, rel=1e-12)


def test_psd_csv_round_trip(tmp_path):
    psd = _synthetic(TWO_PI * 47e3, TWO_PI * 200, 1e-18, 1e-25, n_segments=7, duration=2.5)
    psd.write_csv(tmp_path / "p.csv")
    back = S.Psd.read_csv(tmp_path / "p.csv")
    assert np.array_equal(back.values, psd.values)
    assert back.n_segments == 7 and back.duration == 2.5


def test_psd_rejects_bad_grids():
    with pytest.raises(ValueError):
        S.Psd(np.array([0.0, 0.0, 1.0]), np.ones(3))
    with pytest.raises(ValueError):
        S.Psd(np.array([0.0]), np.ones(1))
