"""Stochastic integration of the delayed equation of motion.

The integrator works on the pre-linearisation form

    z'' + Gamma_0 z' + Omega^2 (z(t) - beta_eff [z(t - tau) + dphi(t)/B]) = (sigma_m chi_m + sigma_r chi_r)/m

so the coherent damping and the phase-noise force are emergent rather than
injected. Time stepping uses the Gronbech-Jensen/Farago stochastic
velocity-Verlet scheme, which reproduces the exact configurational
temperature of a damped harmonic oscillator at any step size. The delay is an
integer number of steps held in a ring buffer.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigRejected, InvalidParams, NoConvergence, UnstableSystem
from .model import FeedbackParams, SystemParams, feedback_to_dict, total_damping

CHUNK = 1 << 20

CHANNELS = {"gas": 0, "recoil": 1, "phase": 2, "detector_ol": 3, "detector_il": 4}

MIN_STEPS_PER_PERIOD = 50
DELAY_SNAP_TOL = 1e-3


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float
    seed: int = 0
    warmup: float = 0.0
    initial_position: float = 0.0
    initial_velocity: float = 0.0
    decimate: int = 1
    runaway_factor: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigRejected("dt must be > 0")
        if not (self.duration > self.warmup >= 0):
            raise ConfigRejected("need duration > warmup >= 0")
        if self.decimate < 1:
            raise ConfigRejected("decimate must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigRejected("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    @property
    def warmup_steps(self):
        return int(round(self.warmup / self.dt))

    def check(self, system: SystemParams, feedback: FeedbackParams):
        """Validate against the physical parameters; return the delay in steps."""
        limit = 2 * math.pi / (MIN_STEPS_PER_PERIOD * system.omega)
        if self.dt > limit * (1 + 1e-12):
            raise ConfigRejected(
                f"dt={self.dt:.4g} s exceeds 2*pi/(50*Omega)={limit:.4g} s"
            )
        tau = feedback.tau
        if tau == 0:
            if feedback.beta_eff != 0:
                raise ConfigRejected("feedback with zero delay is not supported")
            return 1
        n_d = int(round(tau / self.dt))
        if n_d < 1 or abs(tau - n_d * self.dt) / tau > DELAY_SNAP_TOL:
            raise ConfigRejected(
                f"tau={tau:.6g} s is not within 0.1% of an integer number of dt={self.dt:.6g} s steps"
            )
        return n_d

    @classmethod
    def for_system(cls, system, feedback, duration, seed=0, warmup=None, steps_per_period=50,
                   decimate=1, **kw):
        """Pick dt so the delay is an exact number of steps and >= steps_per_period steps fit in a period."""
        target = 2 * math.pi / (max(steps_per_period, MIN_STEPS_PER_PERIOD) * system.omega)
        if feedback.tau > 0:
            n_d = max(1, math.ceil(feedback.tau / target))
            dt = feedback.tau / n_d
        else:
            dt = target
        if warmup is None:
            g = total_damping(system, feedback)
            g = g if g > 0 else system.gamma0
            warmup = 10.0 / g if g > 0 else 0.0
        return cls(dt=float(dt), duration=float(duration + warmup), seed=seed, warmup=float(warmup),
                   decimate=decimate, **kw)


class NoiseRealization:
    """Independent Gaussian sub-streams keyed by channel, all derived from one seed.

    Each channel gets its own counter-based Philox generator, so drawing
    from (or skipping) one channel never shifts another.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def generator(self, channel):
        ss = np.random.SeedSequence(self.seed, spawn_key=(CHANNELS[channel],))
        return np.random.Generator(np.random.Philox(ss))

    def digest(self, channel, params_digest):
        tag = f"{params_digest}:{self.seed}:{channel}"
        return hashlib.sha256(tag.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Trajectory:
    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    seed: int
    params_digest: str
    delay_steps: int = 1
    sim_dt: float | None = None
    start_step: int = 0
    head: np.ndarray | None = None
    phase_digest: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.positions) != len(self.velocities) or len(self.positions) < 2:
            raise InvalidParams("positions and velocities need equal length >= 2")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise InvalidParams("trajectory contains non-finite values")

    def __len__(self):
        return len(self.positions)

    @property
    def times(self):
        return np.arange(len(self.positions)) * self.dt

    def delayed_positions(self):
        """z(t - tau) over the recorded window (requires an undecimated trajectory)."""
        if self.head is None or (self.sim_dt is not None and self.sim_dt != self.dt):
            raise InvalidParams("delayed positions need an undecimated trajectory with its history")
        n = len(self.positions)
        return np.concatenate([self.head, self.positions])[:n]


def params_digest(system: SystemParams, feedback: FeedbackParams, config: SimConfig, extra=None):
    payload = {
        "system": system.to_dict(),
        "feedback": feedback_to_dict(feedback),
        "coupling": getattr(feedback.coupling, "__name__", repr(feedback.coupling)),
        "config": asdict(config),
        "extra": extra,
    }
    blob = json.dumps(payload, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@numba.njit(cache=True, nogil=True)
def _advance(state, buf, head, n0, nsteps, nd, om2, ca, cb, dt, betas, e_next, eta,
             out_z, out_v, rec_start, dec, head_at, win, mon, factor):
    z = state[0]
    v = state[1]
    a = state[2]
    half_dt = 0.5 * dt
    for i in range(nsteps):
        n = n0 + i
        if n == head_at:
            for j in range(nd):
                head[j] = buf[(n - nd + 1 + j) % nd]
        if n >= rec_start:
            k = n - rec_start
            if k % dec == 0:
                out_z[k // dec] = z
                out_v[k // dec] = v
        # runaway monitor: mean square per window of `win` steps
        mon[0] += z * z
        mon[1] += 1.0
        if mon[1] >= win:
            ms = mon[0] / mon[1]
            mon[0] = 0.0
            mon[1] = 0.0
            if not math.isfinite(ms):
                state[0] = z
                state[1] = v
                state[2] = a
                return 2
            if mon[2] == 0.0:
                if ms > 0.0:
                    mon[2] = ms
            elif ms > factor * mon[2]:
                state[0] = z
                state[1] = v
                state[2] = a
                return 1
        imp = eta[i]
        z_new = z + cb * dt * v + cb * dt * half_dt * a + cb * half_dt * imp
        slot = (n + 1) % nd
        z_del = buf[slot]
        buf[slot] = z_new
        a_new = -om2 * (z_new - betas[i] * (z_del + e_next[i]))
        v = ca * v + half_dt * (ca * a + a_new) + cb * imp
        z = z_new
        a = a_new
    state[0] = z
    state[1] = v
    state[2] = a
    return 0


def _phase_scale(system, feedback, dt):
    return feedback.sigma_phi / system.phase_factor / math.sqrt(dt)


def integrate(system: SystemParams, feedback: FeedbackParams, config: SimConfig,
              phi0_path=None, window_steps=None) -> Trajectory:
    """Integrate one trajectory.

    ``phi0_path`` optionally gives a loop phase per block of ``window_steps``
    integration steps (free-running phase emulation); otherwise ``feedback.phi0``
    is held fixed.
    """
    nd = config.check(system, feedback)
    dt = config.dt
    n_total = config.n_steps
    w = config.warmup_steps
    dec = config.decimate
    n_rec = (n_total - w + dec - 1) // dec
    if n_rec < 2:
        raise ConfigRejected("recorded window shorter than two samples")

    extra = None
    if phi0_path is not None:
        phi0_path = np.asarray(phi0_path, dtype=float)
        if window_steps is None or window_steps < 1:
            raise ConfigRejected("phi0_path needs window_steps >= 1")
        extra = {"phi0_path": phi0_path.tolist(), "window_steps": int(window_steps)}
    digest = params_digest(system, feedback, config, extra)

    noise = NoiseRealization(config.seed)
    amps = system.noise()
    m = system.mass
    g_gas = noise.generator("gas") if amps.sigma_m > 0 else None
    g_rec = noise.generator("recoil") if amps.sigma_r > 0 else None
    phase_scale = _phase_scale(system, feedback, dt)
    g_phase = noise.generator("phase") if phase_scale > 0 else None

    gdt = system.gamma0 * dt
    cb = 1.0 / (1.0 + 0.5 * gdt)
    ca = (1.0 - 0.5 * gdt) * cb
    om2 = system.omega**2
    sq = math.sqrt(dt)

    def beta_at(idx):
        if phi0_path is None:
            return np.full(len(idx), feedback.beta_eff)
        blocks = np.minimum(idx // window_steps, len(phi0_path) - 1)
        return feedback.beta * np.cos(phi0_path[blocks])

    z0 = config.initial_position
    buf = np.full(nd, z0)
    head = np.full(nd, z0)
    e0 = phase_scale * g_phase.standard_normal() if g_phase is not None else 0.0
    a0 = -om2 * (z0 - beta_at(np.array([0]))[0] * (z0 + e0))
    state = np.array([z0, config.initial_velocity, a0])
    out_z = np.empty(n_rec)
    out_v = np.empty(n_rec)
    mon = np.zeros(3)
    win = max(1, int(round(10 * 2 * math.pi / (system.omega * dt))))
    head_at = w - 1 if w > 0 else -1

    n0 = 0
    while n0 < n_total:
        L = min(CHUNK, n_total - n0)
        eta = np.zeros(L)
        if g_gas is not None:
            eta += (amps.sigma_m * sq / m) * g_gas.standard_normal(L)
        if g_rec is not None:
            eta += (amps.sigma_r * sq / m) * g_rec.standard_normal(L)
        if g_phase is not None:
            e_next = phase_scale * g_phase.standard_normal(L)
        else:
            e_next = np.zeros(L)
        betas = beta_at(np.arange(n0 + 1, n0 + L + 1))
        status = _advance(state, buf, head, n0, L, nd, om2, ca, cb, dt, betas, e_next, eta,
                          out_z, out_v, w, dec, head_at, win, mon, config.runaway_factor)
        if status == 1:
            raise UnstableSystem(
                f"runaway: mean-square position grew beyond {config.runaway_factor:g}x its first window"
            )
        if status == 2:
            raise UnstableSystem("non-finite state during integration")
        n0 += L

    return Trajectory(
        dt=dt * dec,
        positions=out_z,
        velocities=out_v,
        seed=config.seed,
        params_digest=digest,
        delay_steps=nd,
        sim_dt=dt,
        start_step=w,
        head=head if dec == 1 else None,
        phase_digest=noise.digest("phase", digest),
        meta={"n_steps": n_total},
    )


def integrate_ensemble(system, feedback, config: SimConfig, n_runs, workers=1, **kw):
    """Independent runs with seeds ``config.seed + i``; output order follows run index."""
    if n_runs < 1:
        raise InvalidParams("n_runs must be >= 1")
    configs = [_with_seed(config, config.seed + i) for i in range(n_runs)]
    if workers <= 1 or n_runs == 1:
        return [integrate(system, feedback, c, **kw) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: integrate(system, feedback, c, **kw), configs))


def _with_seed(config, seed):
    d = asdict(config)
    d["seed"] = seed
    return SimConfig(**d)


@dataclass(frozen=True)
class PhaseNoise:
    """Loop phase noise dphi [rad] over a trajectory's recorded window."""

    samples: np.ndarray
    digest: str


def phase_noise(traj: Trajectory, system: SystemParams, feedback: FeedbackParams, seed=None) -> PhaseNoise:
    """Regenerate the phase-noise samples the integrator consumed for ``traj``.

    Passing a different ``seed`` yields an independent realization (with a
    different digest), which breaks the correlation with the motion.
    """
    seed = traj.seed if seed is None else seed
    noise = NoiseRealization(seed)
    sim_dt = traj.sim_dt or traj.dt
    if traj.sim_dt is not None and traj.sim_dt != traj.dt:
        raise InvalidParams("phase noise is only available for undecimated trajectories")
    scale = feedback.sigma_phi / math.sqrt(sim_dt)
    start = traj.start_step
    n = len(traj)
    if scale == 0:
        return PhaseNoise(np.zeros(n), noise.digest("phase", traj.params_digest))
    gen = noise.generator("phase")
    out = np.empty(n)
    # sequence: e_0, then e_1.. drawn in CHUNK blocks, exactly as in integrate()
    first = gen.standard_normal()
    if start == 0:
        out[0] = first
    pos = 1
    total = start + n
    while pos < total:
        L = min(CHUNK, total - pos)
        block = gen.standard_normal(L)
        lo = max(pos, start)
        hi = pos + L
        if hi > lo:
            out[lo - start:hi - start] = block[lo - pos:]
        pos += L
    return PhaseNoise(scale * out, noise.digest("phase", traj.params_digest))


@dataclass(frozen=True)
class ModeRoot:
    s: complex
    decay: float
    frequency: float


def characteristic_roots(system: SystemParams, feedback: FeedbackParams, max_iter=100, tol=1e-13) -> ModeRoot:
    """Dominant root of s^2 + Gamma_0 s + Omega^2 (1 - beta e^{-s tau}) = 0 near +i Omega.

    ``decay`` is the energy damping rate -2 Re(s); ``frequency`` is Im(s).
    """
    beta = feedback.beta_eff
    if abs(beta) >= 1:
        raise InvalidParams("|beta| must be < 1")
    om, g0, tau = system.omega, system.gamma0, feedback.tau
    s = complex(-g0 / 2, om)
    for _ in range(max_iter):
        ex = np.exp(-s * tau)
        f = s * s + g0 * s + om**2 * (1 - beta * ex)
        fp = 2 * s + g0 + om**2 * beta * tau * ex
        step = f / fp
        s = s - step
        if abs(step) <= tol * abs(s):
            return ModeRoot(s, -2 * s.real, s.imag)
    raise NoConvergence("characteristic root did not converge in 100 iterations")


def loop_denominator(omega_eval, system: SystemParams, feedback: FeedbackParams):
    w = np.asarray(omega_eval, dtype=float)
    om2 = system.omega**2
    return om2 - w**2 + 1j * w * system.gamma0 - om2 * feedback.beta_eff * np.exp(-1j * w * feedback.tau)


def response_psd(omega_eval, system: SystemParams, feedback: FeedbackParams):
    """Exact stationary displacement PSD of the delayed (unlinearised) loop.

    Same normalisation as :func:`levcool.model.psd_analytic`; reduces to it
    when the loop terms are expanded to first order around the resonance.
    """
    m, om2 = system.mass, system.omega**2
    s_force = 2 * system.noise().force_sq / m**2
    s_phase = 2 * (feedback.sigma_phi / system.phase_factor) ** 2
    drive = s_force + (om2 * feedback.beta_eff) ** 2 * s_phase
    return drive / np.abs(loop_denominator(omega_eval, system, feedback)) ** 2


# ---------------------------------------------------------------------------
# serialisation


def write_csv(traj: Trajectory, path):
    path = Path(path)
    header = (
        f"dt={traj.dt!r}, seed={traj.seed}, params_digest={traj.params_digest}, "
        f"delay_steps={traj.delay_steps}, start_step={traj.start_step}, phase_digest={traj.phase_digest}"
    )
    data = np.column_stack([traj.times, traj.positions, traj.velocities])
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header=header + "\nt,z,v")


def read_csv(path) -> Trajectory:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().lstrip("#").strip()
    meta = dict(item.strip().split("=", 1) for item in first.split(","))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return Trajectory(
        dt=float(meta["dt"]),
        positions=data[:, 1].copy(),
        velocities=data[:, 2].copy(),
        seed=int(meta["seed"]),
        params_digest=meta["params_digest"],
        delay_steps=int(meta.get("delay_steps", 1)),
        start_step=int(meta.get("start_step", 0)),
        phase_digest=meta.get("phase_digest", ""),
    )
