"""Scenario files: YAML with SI-suffixed keys, validated by pydantic.

Unknown keys are errors; every error message carries the offending field path
and, where available, its line in the source file.
"""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import model as M
from .errors import ConfigError, InvalidParams

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemCfg(_Strict):
    radius_m: float = Field(97e-9, gt=0)
    mass_kg: Optional[float] = Field(7.07e-18, gt=0)
    density_kg_m3: Optional[float] = Field(None, gt=0)
    omega_rad_s: float = Field(2 * math.pi * 47e3, gt=0)
    wavelength_m: float = Field(1064e-9, gt=0)
    trap_power_w: float = Field(0.3, ge=0)
    scattered_power_w: Optional[float] = Field(0.0, ge=0)  # null: Rayleigh estimate
    numerical_aperture: float = Field(0.77, gt=0, lt=1)
    gouy_factor: float = 0.83
    phase_factor_rad_m: Optional[float] = Field(None, gt=0)
    pressure_pa: float = Field(0.0, ge=0)
    temperature_k: float = Field(300.0, ge=0)
    gamma_gas_rad_s: Optional[float] = Field(None, ge=0)
    gamma_recoil_rad_s: float = Field(0.0, ge=0)
    gamma_cold_damp_rad_s: float = Field(0.0, ge=0)

    def build(self, omega=None) -> M.SystemParams:
        if self.density_kg_m3 is not None:
            particle = M.ParticleParams.from_radius_density(self.radius_m, self.density_kg_m3)
        elif self.mass_kg is not None:
            particle = M.ParticleParams.from_radius_mass(self.radius_m, self.mass_kg)
        else:
            raise InvalidParams("give mass_kg or density_kg_m3")
        p_d = self.scattered_power_w
        if p_d is None:
            p_d = M.rayleigh_scattered_power(self.radius_m, self.wavelength_m, self.trap_power_w,
                                             self.numerical_aperture)
        trap = M.TrapParams(
            omega=self.omega_rad_s if omega is None else omega,
            wavelength=self.wavelength_m,
            trap_power=self.trap_power_w,
            scattered_power=p_d,
            gouy_factor=self.gouy_factor,
            phase_factor=self.phase_factor_rad_m or 4 * math.pi / self.wavelength_m,
        )
        g_gas = self.gamma_gas_rad_s
        if g_gas is None:
            g_gas = M.gas_damping(self.pressure_pa, particle.radius, particle.mass, self.temperature_k)
        bath = M.BathParams(
            temperature=self.temperature_k,
            gamma_gas=g_gas,
            gamma_recoil=self.gamma_recoil_rad_s,
            gamma_cold_damp=self.gamma_cold_damp_rad_s,
            pressure=self.pressure_pa,
        )
        return M.SystemParams(particle, trap, bath)


class FeedbackCfg(_Strict):
    beta: Union[float, Literal["opt"]] = 0.0
    tau_s: Optional[float] = Field(None, ge=0)
    fiber_length_m: Optional[float] = Field(None, ge=0)
    n_eff: float = Field(1.46, gt=0)
    phi0_rad: float = 0.0
    sigma_phi_rad_sqrt_s: Optional[float] = Field(None, ge=0)
    in_loop_floor_m2_per_hz: Optional[float] = Field(None, ge=0)
    efficiency: float = Field(1.0, ge=0, le=1)

    @model_validator(mode="after")
    def _one_delay(self):
        if self.tau_s is not None and self.fiber_length_m is not None:
            raise ValueError("give either tau_s or fiber_length_m, not both")
        if self.sigma_phi_rad_sqrt_s is not None and self.in_loop_floor_m2_per_hz is not None:
            raise ValueError("give either sigma_phi_rad_sqrt_s or in_loop_floor_m2_per_hz, not both")
        return self

    def tau(self):
        if self.fiber_length_m is not None:
            return M.delay_from_fiber(self.fiber_length_m, self.n_eff)
        return self.tau_s if self.tau_s is not None else 0.0

    def build(self, system: M.SystemParams, beta=None, phi0=None) -> M.FeedbackParams:
        if self.in_loop_floor_m2_per_hz is not None:
            sigma_phi = M.sigma_phi_from_floor(self.in_loop_floor_m2_per_hz, system.phase_factor)
        else:
            sigma_phi = self.sigma_phi_rad_sqrt_s or 0.0
        fb = M.FeedbackParams(beta=0.0, tau=self.tau(), phi0=self.phi0_rad if phi0 is None else phi0,
                              sigma_phi=sigma_phi, efficiency=self.efficiency)
        if beta is None:
            beta = M.beta_opt(system, fb) if self.beta == "opt" else self.beta
        return M.FeedbackParams(beta=beta, tau=fb.tau, phi0=fb.phi0, sigma_phi=sigma_phi,
                                efficiency=self.efficiency)


class SimCfg(_Strict):
    duration_s: Optional[float] = Field(None, gt=0)
    damping_times: float = Field(1000.0, gt=0)
    warmup_s: Optional[float] = Field(None, ge=0)
    steps_per_period: int = Field(50, ge=50)
    decimate: int = Field(1, ge=1)
    seed: int = 0
    n_runs: int = Field(5, ge=1)
    initial_position_m: float = 0.0
    initial_velocity_m_s: float = 0.0
    runaway_factor: float = Field(1e6, gt=1)


class SweepCfg(_Strict):
    axis: Literal["phi0", "omega", "gamma_c", "beta"]
    values: Optional[list[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: Optional[int] = None
    spacing: Literal["linear", "log"] = "linear"
    include_off: bool = False

    @model_validator(mode="after")
    def _grid(self):
        if self.values is None:
            if None in (self.start, self.stop, self.num):
                raise ValueError("give values, or start/stop/num")
        grid = self.grid()
        if grid.size == 0:
            raise ValueError("sweep grid is empty")
        d = np.diff(grid)
        if grid.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("sweep grid must be strictly monotone")
        return self

    def grid(self):
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.num)
        return np.linspace(self.start, self.stop, self.num)


class DetectorCfg(_Strict):
    ol_imprecision_m2_per_hz: float = Field(0.0, ge=0)
    il_imprecision_m2_per_hz: float = Field(0.0, ge=0)
    psd_resolution_hz: float = Field(50.0, gt=0)


class FreeRunCfg(_Strict):
    window_s: Optional[float] = Field(None, gt=0)  # default: 50 / Gamma_0
    n_windows: int = Field(ge=2)
    phase_step_rad: float = 0.6


class AnalysisCfg(_Strict):
    outputs: list[Literal["psd", "traj", "fits"]] = ["psd", "fits"]
    bins_per_linewidth: float = Field(20.0, gt=0)
    detectors: Optional[DetectorCfg] = None
    free_running: Optional[FreeRunCfg] = None
    fit_eq3: bool = False
    fit_eq6: bool = False


class Scenario(_Strict):
    version: Literal[1]
    name: str
    system: SystemCfg = SystemCfg()
    feedback: FeedbackCfg = FeedbackCfg()
    sim: SimCfg = SimCfg()
    sweep: Optional[SweepCfg] = None
    analysis: AnalysisCfg = AnalysisCfg()

    @field_validator("name")
    @classmethod
    def _safe_name(cls, v):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", v) or v in (".", ".."):
            raise ValueError("name must be filesystem-safe ([A-Za-z0-9_.-])")
        return v


def _line_of(node, loc):
    """Line number (1-based) of a key path in a composed YAML node tree."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    line = k.start_mark.line + 1
                    nxt = v
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def loads(text, source="<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            line = _line_of(node, loc)
            where = ".".join(str(p) for p in loc) or "<root>"
            at = f" (line {line})" if line else ""
            msgs.append(f"{source}: {where}{at}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return loads(text, str(path))


def dump(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False)
