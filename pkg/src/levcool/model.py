"""Parameter types and closed-form predictions for delayed optical feedback cooling.

Spectral convention used throughout the package: a displacement PSD ``S(omega)``
is a density in angular frequency normalised so that

    <z^2> = integral_0^inf S(omega) d omega / (2 pi)

Numerically this equals the one-sided per-Hz density evaluated at
``f = omega / 2 pi``, which is what :mod:`levcool.spectral` estimates from
trajectories. See ``docs/conventions.md``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import constants as _sc

from .errors import DivisionByZeroNoise, HeatingDelay, InvalidParams, UnstableSystem


@dataclass(frozen=True)
class PhysConstants:
    k_B: float = _sc.k
    hbar: float = _sc.hbar
    c: float = _sc.c


CONST = PhysConstants()

AIR_MOLAR_MASS = 28.97e-3  # kg/mol
SILICA_INDEX_1064 = 1.45


def _require(cond, msg):
    if not cond:
        raise InvalidParams(msg)


# ---------------------------------------------------------------------------
# parameter types


@dataclass(frozen=True)
class ParticleParams:
    radius: float
    density: float
    mass: float

    def __post_init__(self):
        _require(self.radius > 0, "radius must be > 0")
        _require(self.density > 0, "density must be > 0")
        _require(self.mass > 0, "mass must be > 0")
        expected = 4.0 / 3.0 * math.pi * self.radius**3 * self.density
        _require(
            abs(self.mass - expected) <= 1e-9 * expected,
            f"mass {self.mass:g} inconsistent with radius and density ({expected:g})",
        )

    @classmethod
    def from_radius_density(cls, radius, density):
        return cls(radius, density, 4.0 / 3.0 * math.pi * radius**3 * density)

    @classmethod
    def from_radius_mass(cls, radius, mass):
        if radius <= 0:
            raise InvalidParams("radius must be > 0")
        density = mass / (4.0 / 3.0 * math.pi * radius**3)
        return cls(radius, density, 4.0 / 3.0 * math.pi * radius**3 * density)


@dataclass(frozen=True)
class TrapParams:
    omega: float
    wavelength: float = 1064e-9
    trap_power: float = 0.3
    scattered_power: float = 0.0
    gouy_factor: float = 0.83
    phase_factor: float = 4 * math.pi / 1064e-9

    def __post_init__(self):
        _require(self.omega > 0, "omega must be > 0")
        _require(self.wavelength > 0, "wavelength must be > 0")
        _require(self.phase_factor > 0, "phase_factor must be > 0")
        _require(0 <= self.gouy_factor <= 1, "gouy_factor must lie in [0, 1]")
        _require(self.trap_power >= 0, "trap_power must be >= 0")
        _require(self.scattered_power >= 0, "scattered_power must be >= 0")


@dataclass(frozen=True)
class BathParams:
    temperature: float = 300.0
    gamma_gas: float = 0.0
    gamma_recoil: float = 0.0
    gamma_cold_damp: float = 0.0
    pressure: float = 0.0

    def __post_init__(self):
        for name in ("temperature", "gamma_gas", "gamma_recoil", "gamma_cold_damp", "pressure"):
            _require(getattr(self, name) >= 0, f"{name} must be >= 0")

    def gamma_total(self):
        return self.gamma_gas + self.gamma_recoil + self.gamma_cold_damp


def cosine_coupling(phi0):
    """Default loop-phase model: effective gain scales as cos(phi0)."""
    return math.cos(phi0)


@dataclass(frozen=True)
class FeedbackParams:
    beta: float = 0.0
    tau: float = 0.0
    phi0: float = 0.0
    sigma_phi: float = 0.0
    efficiency: float = 1.0
    coupling: Callable[[float], float] = field(default=cosine_coupling, compare=False, repr=False)

    def __post_init__(self):
        _require(self.tau >= 0, "tau must be >= 0")
        _require(self.sigma_phi >= 0, "sigma_phi must be >= 0")
        _require(0 <= self.efficiency <= 1, "efficiency must lie in [0, 1]")
        _require(abs(self.beta) < 1, "|beta| must be < 1 for the linearised model")

    @property
    def beta_eff(self):
        return self.beta * self.coupling(self.phi0)

    def off(self):
        return replace(self, beta=0.0)


def beta_from_efficiency(beta_max, efficiency, efficiency_max=1.0):
    """Gain for an attenuated loop; the coherent damping scales as sqrt(efficiency)."""
    if not 0 <= efficiency <= efficiency_max or efficiency_max <= 0:
        raise InvalidParams("need 0 <= efficiency <= efficiency_max, efficiency_max > 0")
    return beta_max * math.sqrt(efficiency / efficiency_max)


@dataclass(frozen=True)
class NoiseAmplitudes:
    sigma_m: float
    sigma_r: float
    sigma_c: float

    def __post_init__(self):
        _require(min(self.sigma_m, self.sigma_r, self.sigma_c) >= 0, "noise amplitudes must be >= 0")

    @property
    def force_sq(self):
        """sigma_m**2 + sigma_r**2, the feedback-independent force noise."""
        return self.sigma_m**2 + self.sigma_r**2

    @property
    def total_sq(self):
        return self.sigma_m**2 + self.sigma_r**2 + self.sigma_c**2


@dataclass(frozen=True)
class SystemParams:
    particle: ParticleParams
    trap: TrapParams
    bath: BathParams

    @property
    def mass(self):
        return self.particle.mass

    @property
    def omega(self):
        return self.trap.omega

    @property
    def phase_factor(self):
        return self.trap.phase_factor

    @property
    def gamma0(self):
        return self.bath.gamma_total()

    def noise(self, feedback: FeedbackParams | None = None) -> NoiseAmplitudes:
        sm = sigma_gas(self.mass, self.bath.temperature, self.bath.gamma_gas)
        sr = sigma_recoil(self.trap.gouy_factor, self.trap.scattered_power, self.trap.wavelength)
        sc = 0.0
        if feedback is not None:
            sc = sigma_phase_force(
                self.mass, feedback.beta_eff, self.omega, feedback.sigma_phi, self.phase_factor
            )
        return NoiseAmplitudes(sm, sr, sc)

    def t0(self):
        """Temperature without coherent feedback (weak-cooling formula at Gamma_c = 0)."""
        g0 = self.gamma0
        if g0 <= 0:
            raise UnstableSystem("Gamma_0 must be > 0 for a stationary state")
        return self.noise().force_sq / (2 * CONST.k_B * self.mass * g0)

    def to_dict(self):
        return {
            "radius_m": self.particle.radius,
            "density_kg_m3": self.particle.density,
            "mass_kg": self.mass,
            "omega_rad_s": self.omega,
            "wavelength_m": self.trap.wavelength,
            "trap_power_w": self.trap.trap_power,
            "scattered_power_w": self.trap.scattered_power,
            "gouy_factor": self.trap.gouy_factor,
            "phase_factor_rad_m": self.trap.phase_factor,
            "pressure_pa": self.bath.pressure,
            "temperature_k": self.bath.temperature,
            "gamma_gas_rad_s": self.bath.gamma_gas,
            "gamma_recoil_rad_s": self.bath.gamma_recoil,
            "gamma_cold_damp_rad_s": self.bath.gamma_cold_damp,
        }


def feedback_to_dict(fb: FeedbackParams):
    return {
        "beta": fb.beta,
        "tau_s": fb.tau,
        "phi0_rad": fb.phi0,
        "sigma_phi_rad_sqrt_s": fb.sigma_phi,
        "efficiency": fb.efficiency,
    }


# ---------------------------------------------------------------------------
# closed forms


def coherent_damping(beta, omega, tau):
    """Damping rate added by the delayed loop; negative values heat."""
    return beta * omega * np.sin(omega * tau)


def sigma_gas(mass, temperature, gamma_gas):
    return math.sqrt(2 * mass * CONST.k_B * temperature * gamma_gas)


def sigma_recoil(gouy_factor, scattered_power, wavelength):
    return math.sqrt(
        (0.4 + gouy_factor**2) * CONST.hbar * 2 * math.pi * scattered_power / (CONST.c * wavelength)
    )


def sigma_phase_force(mass, beta, omega, sigma_phi, phase_factor):
    if phase_factor <= 0:
        raise InvalidParams("phase_factor must be > 0")
    return mass * abs(beta) * omega**2 * sigma_phi / phase_factor


def total_damping(system: SystemParams, feedback: FeedbackParams):
    return system.gamma0 + coherent_damping(feedback.beta_eff, system.omega, feedback.tau)


def _stable_damping(system, feedback):
    g = total_damping(system, feedback)
    if g <= 0:
        raise UnstableSystem(f"total damping {g:g} rad/s is not positive")
    return g


def psd_analytic(omega_eval, system: SystemParams, feedback: FeedbackParams):
    """Displacement PSD of the linearised equation of motion [m^2 s]."""
    g = _stable_damping(system, feedback)
    w = np.asarray(omega_eval, dtype=float)
    m, om = system.mass, system.omega
    num = 2 * system.noise(feedback).total_sq
    return num / (m**2 * ((om**2 - w**2) ** 2 + w**2 * g**2))


def variance_analytic(system: SystemParams, feedback: FeedbackParams):
    """Closed-form integral of :func:`psd_analytic` over d omega / 2 pi."""
    g = _stable_damping(system, feedback)
    return system.noise(feedback).total_sq / (2 * system.mass**2 * system.omega**2 * g)


def t_eff(system: SystemParams, feedback: FeedbackParams):
    g = _stable_damping(system, feedback)
    m, om, B = system.mass, system.omega, system.phase_factor
    force_sq = system.noise().force_sq
    phase_term = (feedback.sigma_phi**2 * om**2 / B**2) * feedback.beta_eff**2 / g
    return m * om**2 / (2 * CONST.k_B) * (force_sq / (m**2 * om**2 * g) + phase_term)


def t_eff_weak(t0, gamma0, gamma_c):
    if gamma0 <= 0:
        raise InvalidParams("gamma0 must be > 0")
    g = gamma0 + gamma_c
    if g <= 0:
        raise UnstableSystem(f"total damping {g:g} rad/s is not positive")
    return t0 * gamma0 / g


def beta_opt(system: SystemParams, feedback: FeedbackParams):
    if feedback.sigma_phi == 0:
        raise DivisionByZeroNoise("no optimum without phase noise; T_eff decreases monotonically")
    force = math.sqrt(system.noise().force_sq)
    return force * system.phase_factor / (system.mass * system.omega**2 * feedback.sigma_phi)


def t_min(system: SystemParams, feedback: FeedbackParams):
    s = math.sin(system.omega * feedback.tau)
    if s <= 0:
        raise HeatingDelay(f"sin(Omega*tau) = {s:.3g} <= 0")
    force = math.sqrt(system.noise().force_sq)
    return feedback.sigma_phi * system.omega * force / (CONST.k_B * system.phase_factor * s)


def phonons(t, omega):
    if omega <= 0:
        raise InvalidParams("omega must be > 0")
    return CONST.k_B * t / (CONST.hbar * omega)


def delay_from_fiber(length, n_eff=1.46):
    if length < 0 or n_eff < 1:
        raise InvalidParams("need length >= 0 and n_eff >= 1")
    return length * n_eff / CONST.c


def sigma_phi_from_floor(floor_psd, phase_factor):
    """Invert the in-loop floor 2 sigma_phi^2 / B^2 [m^2/Hz] for sigma_phi."""
    return phase_factor * math.sqrt(floor_psd / 2)


def in_loop_floor(sigma_phi, phase_factor):
    return 2 * sigma_phi**2 / phase_factor**2


# ---------------------------------------------------------------------------
# physical estimates for parameter sets


def gas_damping(pressure, radius, mass, gas_temperature=300.0, molar_mass=AIR_MOLAR_MASS):
    """Free-molecular (Epstein, diffuse reflection) damping rate [rad/s].

    Gamma_m = (32/3) (1 + pi/8) R^2 p / (m v_gas), v_gas the mean molecular speed.
    For a sphere this is proportional to p / (R rho v_gas).
    """
    m_gas = molar_mass / _sc.N_A
    v_gas = math.sqrt(8 * CONST.k_B * gas_temperature / (math.pi * m_gas))
    return 32.0 / 3.0 * (1 + math.pi / 8) * radius**2 * pressure / (mass * v_gas)


def rayleigh_scattered_power(radius, wavelength, trap_power, numerical_aperture, index=SILICA_INDEX_1064):
    """Dipole-scattered power at the focus of a paraxial Gaussian beam.

    Waist taken as lambda / (pi NA); peak intensity 2 P / (pi w0^2).
    """
    k = 2 * math.pi / wavelength
    eps = index**2
    cross_section = 8 * math.pi / 3 * k**4 * radius**6 * ((eps - 1) / (eps + 2)) ** 2
    w0 = wavelength / (math.pi * numerical_aperture)
    intensity = 2 * trap_power / (math.pi * w0**2)
    return cross_section * intensity


@dataclass(frozen=True)
class ReferenceSetup:
    """Inputs for the phase-noise-limited operating point (trap + delay line)."""

    radius: float = 97e-9
    mass: float = 7.07e-18
    omega: float = 2 * math.pi * 47e3
    wavelength: float = 1064e-9
    trap_power: float = 0.3
    numerical_aperture: float = 0.77
    gouy_factor: float = 0.83
    pressure: float = 3e-5  # 3e-7 mbar
    temperature: float = 300.0
    gamma_cold_damp: float = 2 * math.pi * 25.0
    tau: float = 6.34e-6
    in_loop_floor: float = 4e-24  # m^2/Hz


def reference_system(setup: ReferenceSetup = ReferenceSetup()) -> SystemParams:
    particle = ParticleParams.from_radius_mass(setup.radius, setup.mass)
    p_d = rayleigh_scattered_power(setup.radius, setup.wavelength, setup.trap_power, setup.numerical_aperture)
    trap = TrapParams(
        omega=setup.omega,
        wavelength=setup.wavelength,
        trap_power=setup.trap_power,
        scattered_power=p_d,
        gouy_factor=setup.gouy_factor,
        phase_factor=4 * math.pi / setup.wavelength,
    )
    bath = BathParams(
        temperature=setup.temperature,
        gamma_gas=gas_damping(setup.pressure, setup.radius, setup.mass, setup.temperature),
        gamma_cold_damp=setup.gamma_cold_damp,
        pressure=setup.pressure,
    )
    return SystemParams(particle, trap, bath)


def reference_feedback(system: SystemParams, setup: ReferenceSetup = ReferenceSetup(), beta=None) -> FeedbackParams:
    sigma_phi = sigma_phi_from_floor(setup.in_loop_floor, system.phase_factor)
    fb = FeedbackParams(beta=0.0, tau=setup.tau, sigma_phi=sigma_phi)
    if beta is None:
        beta = beta_opt(system, fb)
    return replace(fb, beta=beta)


# ---------------------------------------------------------------------------
# projection


@dataclass(frozen=True)
class Projection:
    t_min: float
    phonons: float
    sigma_m: float
    sigma_r: float
    sigma_phi: float
    mass: float
    assumptions: tuple[str, ...]

    def to_dict(self):
        return {
            "t_min_k": self.t_min,
            "phonons": self.phonons,
            "sigma_m": self.sigma_m,
            "sigma_r": self.sigma_r,
            "sigma_phi": self.sigma_phi,
            "mass_kg": self.mass,
            "assumptions": list(self.assumptions),
        }


PROJECTION_ASSUMPTIONS = (
    "sigma_phi scaled by 10^(-dB/20)",
    "sigma_r^2 ~ R^6 (scattered power of a dipole)",
    "sigma_m^2 ~ p R^2 (free-molecular gas at fixed gas temperature)",
    "m ~ R^3; Omega, tau, B unchanged",
)


def project_params(system: SystemParams, feedback: FeedbackParams, phase_noise_reduction_db=0.0,
                   radius_scale=1.0, pressure=None) -> Projection:
    if radius_scale <= 0:
        raise InvalidParams("radius_scale must be > 0")
    base = system.noise()
    p0 = system.bath.pressure
    if pressure is None:
        p_ratio = 1.0
    elif p0 > 0:
        p_ratio = pressure / p0
    else:
        raise InvalidParams("base pressure is 0; cannot rescale gas noise")
    sm = base.sigma_m * math.sqrt(p_ratio) * radius_scale
    sr = base.sigma_r * radius_scale**3
    sphi = feedback.sigma_phi * 10 ** (-phase_noise_reduction_db / 20)
    s = math.sin(system.omega * feedback.tau)
    if s <= 0:
        raise HeatingDelay(f"sin(Omega*tau) = {s:.3g} <= 0")
    tmin = sphi * system.omega * math.hypot(sm, sr) / (CONST.k_B * system.phase_factor * s)
    return Projection(
        t_min=tmin,
        phonons=phonons(tmin, system.omega),
        sigma_m=sm,
        sigma_r=sr,
        sigma_phi=sphi,
        mass=system.mass * radius_scale**3,
        assumptions=PROJECTION_ASSUMPTIONS,
    )
