"""Displacement PSD estimation, Lorentzian fits and temperature estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import BandOutOfRange, NoPeak, TooShort, UnderResolved
from .fitting import FitResult, least_squares
from .model import CONST

ONE_SIDED_HZ = "one_sided_hz"
TWO_SIDED_ANGULAR = "two_sided_angular"

AREA_BAND_LINEWIDTHS = 10.0
# variance inflation of a Hann-windowed Welch average at 50% overlap
HANN_HALF_OVERLAP_VARIANCE = 1.0 + 2 * 0.1667**2
FIT_BAND_LINEWIDTHS = 15.0


@dataclass(frozen=True, eq=False)
class Psd:
    """Spectral density on a uniform grid.

    ``one_sided_hz``: frequencies in Hz, values in m^2/Hz, variance = sum(values) * df.
    ``two_sided_angular``: frequencies in rad/s, values in m^2 s with the package
    convention variance = integral values d omega / 2 pi; values are numerically
    identical to the one-sided per-Hz ones.
    """

    frequencies: np.ndarray
    values: np.ndarray
    n_segments: int = 1
    window: str = "hann"
    convention: str = ONE_SIDED_HZ
    duration: float = 0.0

    def __post_init__(self):
        f = self.frequencies
        if f.ndim != 1 or f.shape != self.values.shape or f.size < 2:
            raise ValueError("frequencies and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def df(self):
        return float(self.frequencies[1] - self.frequencies[0])

    def variance(self, include_dc=False):
        v = self.values if include_dc or self.frequencies[0] > 0 else self.values[1:]
        scale = self.df if self.convention == ONE_SIDED_HZ else self.df / (2 * math.pi)
        return float(np.sum(v) * scale)

    def to_convention(self, convention):
        if convention == self.convention:
            return self
        if convention == TWO_SIDED_ANGULAR:
            return replace(self, frequencies=self.frequencies * (2 * math.pi), convention=convention)
        if convention == ONE_SIDED_HZ:
            return replace(self, frequencies=self.frequencies / (2 * math.pi), convention=convention)
        raise ValueError(f"unknown convention {convention!r}")

    def band_mask(self, lo, hi):
        return (self.frequencies >= lo) & (self.frequencies <= hi)

    def write_csv(self, path):
        hdr = (f"n_segments={self.n_segments}, window={self.window}, convention={self.convention}, "
               f"duration={self.duration!r}\nf_hz,psd_m2_per_hz")
        hz = self.to_convention(ONE_SIDED_HZ)
        np.savetxt(Path(path), np.column_stack([hz.frequencies, hz.values]), delimiter=",",
                   fmt="%.17g", header=hdr)

    @classmethod
    def read_csv(cls, path):
        path = Path(path)
        with path.open() as fh:
            first = fh.readline().lstrip("#").strip()
        meta = dict(item.strip().split("=", 1) for item in first.split(","))
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy(), int(meta.get("n_segments", 1)),
                   meta.get("window", "hann"), ONE_SIDED_HZ, float(meta.get("duration", 0.0)))


def _samples(data, dt):
    if hasattr(data, "positions"):
        return np.asarray(data.positions), data.dt
    if hasattr(data, "samples"):
        return np.asarray(data.samples), data.dt
    if dt is None:
        raise ValueError("dt is required for raw sample arrays")
    return np.asarray(data, dtype=float), dt


def welch_psd(data, segment_length=None, overlap=0.5, dt=None) -> Psd:
    """Hann-windowed, mean-removed, averaged periodogram (one-sided, per Hz).

    ``data`` is a Trajectory, a DetectorRecord, or a raw array with ``dt``.
    """
    x, dt = _samples(data, dt)
    n = x.size
    if segment_length is None:
        segment_length = 1 << max(int(math.log2(max(n // 8, 2))), 1)
    if segment_length > n:
        raise TooShort(f"segment_length {segment_length} exceeds record length {n}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    step = segment_length - int(round(overlap * segment_length))
    n_seg = 1 + (n - segment_length) // step
    if n_seg < 2:
        raise TooShort("fewer than two segments")
    f, p = signal.welch(
        x - x.mean(), fs=1 / dt, window="hann", nperseg=segment_length,
        noverlap=segment_length - step, detrend="constant", scaling="density",
        return_onesided=True,
    )
    return Psd(f, p, n_seg, "hann", ONE_SIDED_HZ, duration=n * dt)


def average_psds(psds) -> Psd:
    """Mean of spectra on a common grid; segment counts and durations add."""
    psds = list(psds)
    if not psds:
        raise ValueError("no spectra to average")
    ref = psds[0]
    for p in psds[1:]:
        if p.frequencies.shape != ref.frequencies.shape or not np.allclose(p.frequencies, ref.frequencies):
            raise ValueError("spectra are on different frequency grids")
        if p.convention != ref.convention:
            raise ValueError("spectra use different conventions")
    vals = np.mean([p.values for p in psds], axis=0)
    return Psd(ref.frequencies.copy(), vals, sum(p.n_segments for p in psds), ref.window,
               ref.convention, sum(p.duration for p in psds))


# ---------------------------------------------------------------------------
# Lorentzian lineshape (the displacement PSD of a damped oscillator plus a floor)


def lorentzian(f_hz, center, linewidth, area, floor=0.0):
    """One-sided per-Hz PSD with total area ``area`` [m^2]; center/linewidth in rad/s."""
    w = 2 * math.pi * np.asarray(f_hz, dtype=float)
    return area * 4 * linewidth * center**2 / ((center**2 - w**2) ** 2 + w**2 * linewidth**2) + floor


def _fwhm_guess(f, v, k, floor):
    half = floor + 0.5 * (v[k] - floor)
    lo = k
    while lo > 0 and v[lo] > half:
        lo -= 1
    hi = k
    while hi < v.size - 1 and v[hi] > half:
        hi += 1
    return max(f[hi] - f[lo], f[1] - f[0])


def fit_lorentzian(psd: Psd, initial_guess=None, band=None, min_peak_ratio=3.0,
                   check_resolution=True, weighted=True) -> FitResult:
    """Least-squares fit of the damped-oscillator lineshape plus a constant floor.

    Parameters (``names``): ``center`` and ``linewidth`` in rad/s, ``area`` in
    m^2 and ``floor`` in m^2/Hz. Residuals are linear in the PSD values.
    ``band`` restricts the fit to (f_lo, f_hi) in Hz; by default a window of
    +-15 estimated linewidths around the highest bin is used.

    With ``weighted`` (default) the unweighted solution is refined twice with
    per-bin errors proportional to the fitted lineshape, the error model of an
    averaged periodogram; reported errors are inflated by the reduced
    chi-square when it exceeds one.
    """
    hz = psd.to_convention(ONE_SIDED_HZ)
    f, v = hz.frequencies, hz.values
    sel = f > 0
    if band is not None:
        sel &= hz.band_mask(*band)
    if np.count_nonzero(sel) < 5:
        raise BandOutOfRange("fewer than 5 bins in the fit band")
    fs, vs = f[sel], v[sel]
    k = int(np.argmax(vs))
    floor0 = float(np.median(vs))
    if floor0 > 0 and vs[k] / floor0 < min_peak_ratio:
        raise NoPeak(f"peak/floor = {vs[k] / floor0:.3g} below {min_peak_ratio}")
    if initial_guess is None:
        fwhm = _fwhm_guess(fs, vs, k, floor0)
        if band is None:
            lo, hi = fs[k] - FIT_BAND_LINEWIDTHS * fwhm, fs[k] + FIT_BAND_LINEWIDTHS * fwhm
            keep = (fs >= lo) & (fs <= hi)
            if np.count_nonzero(keep) >= 8:
                fs, vs = fs[keep], vs[keep]
                k = int(np.argmax(vs))
        floor_guess = float(np.median(vs[vs < 0.5 * vs[k]])) if np.any(vs < 0.5 * vs[k]) else 0.0
        initial_guess = (
            2 * math.pi * fs[k],
            2 * math.pi * fwhm,
            (vs[k] - floor_guess) * math.pi * fwhm / 2,
            floor_guess,
        )
    x0 = np.array(initial_guess, dtype=float)
    scale = np.array([x0[0], x0[1], x0[2], max(abs(x0[3]), 1e-3 * abs(x0[2]) / max(fs[-1], 1.0))])

    def model(p):
        q = p * scale
        return lorentzian(fs, q[0], abs(q[1]), q[2], q[3]) - vs

    names = ("center", "linewidth", "area", "floor")
    res = least_squares(model, x0 / scale, names=names)
    # reweighting an exact fit only chases round-off
    if weighted and res.residual_norm > 1e-12 * float(np.linalg.norm(vs)):
        # Welch bins scatter as S/sqrt(K); reweight with the current model
        n_eff = max(psd.n_segments / HANN_HALF_OVERLAP_VARIANCE, 1.0)
        for _ in range(2):
            q = res.params * scale
            # a negative floor would give near-zero errors in the wings
            sig = np.abs(lorentzian(fs, q[0], abs(q[1]), q[2], max(q[3], 0.0))) / math.sqrt(n_eff)
            sig = np.maximum(sig, 1e-300)
            res = least_squares(model, res.params, weights=sig, names=names)
        # guard against an optimistic error model (correlated neighbouring bins)
        red = res.chi2 / res.dof if res.dof > 0 else 1.0
        if red > 1:
            res.covariance = res.covariance * red
            res.sigmas = res.sigmas * math.sqrt(red)
    res.params = res.params * scale
    res.params[1] = abs(res.params[1])
    res.covariance = res.covariance * np.outer(scale, scale)
    res.sigmas = res.sigmas * np.abs(scale)
    if check_resolution and res.params[1] / (2 * math.pi) < 3 * hz.df:
        raise UnderResolved(
            f"linewidth {res.params[1] / (2 * math.pi):.3g} Hz spans fewer than 3 bins of {hz.df:.3g} Hz"
        )
    res.extras["band_hz"] = [float(fs[0]), float(fs[-1])]
    return res


# ---------------------------------------------------------------------------
# temperatures


@dataclass(frozen=True)
class TemperatureEstimate:
    t_eff: float
    t_err: float
    method: str
    omega_fitted: float
    gamma_fitted: float

    def __post_init__(self):
        if not self.t_eff > 0:
            raise ValueError("t_eff must be > 0")
        if not self.gamma_fitted > 0:
            raise ValueError("gamma_fitted must be > 0")


def _variance_error(variance, gamma, duration):
    """1-sigma error of a time-averaged square of a narrow-band Gaussian process."""
    if duration <= 0:
        return 0.0
    return variance * math.sqrt(2.0 / (gamma * duration))


def temperature_from_area(psd: Psd, mass, omega, band=None, fit=None, tail_correction=True) -> TemperatureEstimate:
    """Equipartition temperature from the floor-subtracted area of the resonance.

    ``band`` is (f_lo, f_hi) in Hz; by default +-10 fitted linewidths around
    the fitted center, clipped to the grid. The floor is the median of the
    out-of-band bins. The area outside the band is restored from the fitted
    lineshape unless ``tail_correction`` is False.
    """
    hz = psd.to_convention(ONE_SIDED_HZ)
    f, v = hz.frequencies, hz.values
    if fit is None:
        try:
            fit = fit_lorentzian(hz, band=band, check_resolution=False)
        except NoPeak as exc:
            raise BandOutOfRange(f"no resolvable resonance: {exc}") from exc
    center, gamma = fit["center"], fit["linewidth"]
    if band is None:
        half = AREA_BAND_LINEWIDTHS * gamma / (2 * math.pi)
        f0 = center / (2 * math.pi)
        band = (max(f0 - half, f[1]), min(f0 + half, f[-1]))
    lo, hi = band
    if lo < f[0] or hi > f[-1] or lo >= hi:
        raise BandOutOfRange(f"band ({lo:g}, {hi:g}) Hz outside grid ({f[0]:g}, {f[-1]:g})")
    if not lo <= center / (2 * math.pi) <= hi:
        raise BandOutOfRange("band does not contain the resonance")
    inside = hz.band_mask(lo, hi)
    outside = ~inside & (f > 0)
    floor = float(np.median(v[outside])) if np.any(outside) else 0.0
    area = float(np.sum(v[inside] - floor) * hz.df)
    if tail_correction:
        shape = lorentzian(f[inside], center, gamma, 1.0)
        frac = float(np.sum(shape) * hz.df)
        if 0 < frac <= 1.5:
            area /= frac
    if area <= 0:
        raise BandOutOfRange("no positive signal above the floor in band")
    t = mass * omega**2 * area / CONST.k_B
    return TemperatureEstimate(t, _variance_error(t, gamma, hz.duration), "area", center, gamma)


def temperature_from_fit(psd: Psd, mass, omega, fit=None) -> TemperatureEstimate:
    if fit is None:
        fit = fit_lorentzian(psd)
    area = fit["area"]
    t = mass * omega**2 * area / CONST.k_B
    stat = _variance_error(t, fit["linewidth"], psd.duration)
    err = math.hypot(stat, mass * omega**2 * fit.sigma("area") / CONST.k_B)
    return TemperatureEstimate(t, err, "lorentzian_fit", fit["center"], fit["linewidth"])


def phonons_from_estimate(est: TemperatureEstimate):
    """Mean occupation and its 1-sigma error, k_B T / (hbar Omega)."""
    if est.omega_fitted <= 0:
        raise ValueError("omega_fitted must be > 0")
    k = CONST.k_B / (CONST.hbar * est.omega_fitted)
    return k * est.t_eff, k * est.t_err
