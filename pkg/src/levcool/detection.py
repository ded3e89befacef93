"""In-loop and out-of-loop detector records and noise-squashing analysis.

The out-of-loop (OL) detector sits before the delay line and sees the
particle position plus its own white imprecision. The in-loop (IL) detector
sits after the delay line, so it sees the delayed position plus the very
phase noise that drives the feedback force; that shared realization is what
produces squashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import NoiseRealization, PhaseNoise, Trajectory, loop_denominator
from .errors import BandOutOfRange, ConfigRejected, StreamMismatch
from .model import FeedbackParams, SystemParams
from .spectral import ONE_SIDED_HZ, Psd

IN_LOOP = "in_loop"
OUT_OF_LOOP = "out_of_loop"


@dataclass(frozen=True, eq=False)
class DetectorRecord:
    dt: float
    samples: np.ndarray
    kind: str
    imprecision_psd: float
    includes_phase_noise: bool = False
    delayed: bool = False

    def __len__(self):
        return len(self.samples)


def _white(n, level, dt, seed, channel):
    """White noise with one-sided PSD ``level`` [m^2/Hz] at sampling step ``dt``."""
    if level == 0:
        return np.zeros(n)
    gen = NoiseRealization(seed).generator(channel)
    return math.sqrt(level / (2 * dt)) * gen.standard_normal(n)


def synthesize_ol(traj: Trajectory, imprecision, seed=0) -> DetectorRecord:
    if imprecision < 0:
        raise ValueError("imprecision must be >= 0")
    y = traj.positions + _white(len(traj), imprecision, traj.dt, seed, "detector_ol")
    return DetectorRecord(traj.dt, y, OUT_OF_LOOP, imprecision)


def synthesize_il(traj: Trajectory, phase_noise: PhaseNoise, phase_factor, imprecision, delay,
                  seed=0, allow_mismatch=False) -> DetectorRecord:
    """In-loop record ``z(t - tau) + dphi(t)/B + n_IL(t)``.

    ``phase_noise`` must be the realization the integrator consumed
    (see :func:`levcool.dynamics.phase_noise`); a foreign stream raises
    :class:`StreamMismatch` unless ``allow_mismatch`` is set.
    """
    if imprecision < 0:
        raise ValueError("imprecision must be >= 0")
    if phase_noise.digest != traj.phase_digest and not allow_mismatch:
        raise StreamMismatch("phase-noise stream does not belong to this trajectory")
    if len(phase_noise.samples) != len(traj):
        raise StreamMismatch("phase-noise stream length differs from the trajectory")
    n_d = int(round(delay / traj.dt)) if delay > 0 else 0
    if delay > 0 and n_d != traj.delay_steps:
        raise ConfigRejected(f"delay {delay:g} s is {n_d} steps; trajectory used {traj.delay_steps}")
    z_del = traj.delayed_positions() if delay > 0 else traj.positions
    y = z_del + phase_noise.samples / phase_factor
    y = y + _white(len(traj), imprecision, traj.dt, seed, "detector_il")
    return DetectorRecord(traj.dt, y, IN_LOOP, imprecision, includes_phase_noise=True, delayed=delay > 0)


def in_loop_response_psd(omega_eval, system: SystemParams, feedback: FeedbackParams, imprecision=0.0):
    """Analytic IL spectrum of the delayed loop, same normalisation as the displacement PSD.

    y = [n (Omega^2 - w^2 + i w Gamma_0) + e^{-i w tau} f / m] / D(w), with n the
    phase-noise displacement and D the loop denominator.
    """
    w = np.asarray(omega_eval, dtype=float)
    s_phase = 2 * (feedback.sigma_phi / system.phase_factor) ** 2
    s_force = 2 * system.noise().force_sq / system.mass**2
    inv_chi = system.omega**2 - w**2 + 1j * w * system.gamma0
    d = loop_denominator(w, system, feedback)
    return (s_phase * np.abs(inv_chi) ** 2 + s_force) / np.abs(d) ** 2 + imprecision


def _smooth(v, n):
    if n <= 1:
        return v
    return np.convolve(v, np.ones(n) / n, mode="same")


def squashing_metric(psd_il: Psd, omega, band=None, floor_band=None, smooth_bins=5):
    """Lowest in-band level divided by the median off-resonant floor.

    ``band`` defaults to +-3% around omega/2pi, ``floor_band`` to detunings of
    15-35% on both sides. Values below one indicate squashing.
    """
    hz = psd_il.to_convention(ONE_SIDED_HZ)
    f, v = hz.frequencies, _smooth(hz.values, smooth_bins)
    f0 = omega / (2 * math.pi)
    lo, hi = band if band is not None else (0.97 * f0, 1.03 * f0)
    if floor_band is None:
        near, far = 0.15 * f0, 0.35 * f0
        off = ((f >= f0 - far) & (f <= f0 - near)) | ((f >= f0 + near) & (f <= f0 + far))
    else:
        off = hz.band_mask(*floor_band)
    if lo < f[0] or hi > f[-1] or not np.any(off):
        raise BandOutOfRange("squashing bands fall outside the frequency grid")
    inside = hz.band_mask(lo, hi)
    if not np.any(inside):
        raise BandOutOfRange("no bins in the resonance band")
    # edges of the moving average are biased; they never matter for these bands
    return float(np.min(v[inside]) / np.median(v[off]))


def peak_to_floor(psd: Psd, omega, band=None, floor_band=None, smooth_bins=5):
    """Highest in-band level over the median off-resonant floor (OL visibility)."""
    hz = psd.to_convention(ONE_SIDED_HZ)
    f, v = hz.frequencies, _smooth(hz.values, smooth_bins)
    f0 = omega / (2 * math.pi)
    lo, hi = band if band is not None else (0.9 * f0, 1.1 * f0)
    if floor_band is None:
        off = (f >= 1.6 * f0) & (f <= 2.4 * f0)
    else:
        off = hz.band_mask(*floor_band)
    if lo < f[0] or hi > f[-1] or not np.any(off):
        raise BandOutOfRange("bands fall outside the frequency grid")
    return float(np.max(v[hz.band_mask(lo, hi)]) / np.median(v[off]))
