"""Batch harness: runs scenarios, writes the output directory, re-analyses it.

Layout of an output directory::

    manifest.json          resolved scenario, per-point parameters and seeds, checksums
    psd/<point>_rNN.csv    displacement PSD of each run (plus _ol/_il/_ilx detector PSDs)
    windows/<point>_rNN.csv  per-window temperatures (free-running phase mode)
    traj/<point>_rNN.csv   trajectories, only when requested
    fits/<point>.json      Lorentzian fit of the run-averaged PSD
    fits/eq3.json, fits/eq6.json  sweep-level fits, when requested
    summary.csv            one row per sweep point
    plots/*.py             matplotlib scripts that render from the CSVs

Simulation writes the data files; every derived file comes from
:func:`analyze`, so a fresh run and a later re-analysis share one code path.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import detection, dynamics, fitting, spectral
from . import model as M
from .errors import ConfigError, LevcoolError, ManifestMissing, UnstableSystem
from .scenario import Scenario, load

MANIFEST = "manifest.json"
DATA_DIRS = ("psd", "windows", "traj")
DERIVED_DIRS = ("fits", "plots")
POINT_SEED_STRIDE = 10_000
BROKEN_SEED_OFFSET = 7_919_000_003  # seed shift for the decorrelated in-loop phase noise
FREE_RUN_CHANNEL = 100

SUMMARY_COLUMNS = (
    "point", "axis", "value", "status",
    "t_eff_area_k", "t_eff_area_err_k", "t_eff_fit_k", "t_eff_fit_err_k",
    "gamma_tot_fit_rad_s", "gamma_tot_fit_err_rad_s", "omega_fit_rad_s", "omega_fit_err_rad_s",
    "phonons", "phonons_err", "n_runs",
    "beta", "gamma_c_theory_rad_s", "gamma_tot_theory_rad_s", "t_eff_theory_k",
    "t0_k", "t0_sigma_k", "t_min_k", "t_max_k",
    "il_squash", "il_squash_broken", "ol_peak_ratio",
    "error",
)


@dataclass
class Point:
    index: int
    value: float | None
    system: M.SystemParams | None = None
    feedback: M.FeedbackParams | None = None
    error: str | None = None

    @property
    def label(self):
        return f"p{self.index:03d}"


def _err(exc):
    return f"{type(exc).__name__}: {exc}"


def resolve_points(sc: Scenario) -> list[Point]:
    """Expand the sweep into per-point parameters. Bad points carry an error tag."""
    try:
        base = sc.system.build()
        base_fb = sc.feedback.build(base, beta=None if sc.sweep is None or sc.sweep.axis != "beta" else 0.0)
    except (LevcoolError, ValueError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    if sc.sweep is None:
        return [Point(0, None, base, base_fb)]
    axis = sc.sweep.axis
    points = []
    for i, v in enumerate(sc.sweep.grid()):
        v = float(v)
        try:
            system, fb = base, None
            if axis == "omega":
                system = sc.system.build(omega=v)
                fb = sc.feedback.build(system)
            elif axis == "phi0":
                fb = sc.feedback.build(system, phi0=v)
            elif axis == "beta":
                fb = sc.feedback.build(system, beta=v)
            else:
                probe = sc.feedback.build(system, beta=0.0)
                gain = system.omega * math.sin(system.omega * probe.tau) * probe.coupling(probe.phi0)
                if abs(gain) < 1e-12 * system.omega:
                    raise M.InvalidParams("loop phase gives no coherent damping; gamma_c sweep undefined")
                fb = sc.feedback.build(system, beta=v / gain)
            points.append(Point(i, v, system, fb))
        except (LevcoolError, ValueError) as exc:
            points.append(Point(i, v, error=_err(exc)))
    if sc.sweep.include_off:
        fb = sc.feedback.build(base, beta=0.0)
        points.append(Point(len(points), None, base, fb))
    return points


# ---------------------------------------------------------------------------
# simulation


def _pow2(x):
    return 1 << max(int(round(math.log2(max(x, 2)))), 1)


def _segment_length(n, dt, gamma, bins_per_linewidth):
    seg = _pow2(2 * math.pi * bins_per_linewidth / (gamma * dt))
    cap = 1 << max(int(math.floor(math.log2(max(n // 4, 2)))), 1)
    return max(min(seg, cap), 16)


def _seeds(sc: Scenario, point: Point):
    return [sc.sim.seed + POINT_SEED_STRIDE * point.index + k for k in range(sc.sim.n_runs)]


def _sim_config(sc: Scenario, point: Point, seed):
    system, fb = point.system, point.feedback
    g = M.total_damping(system, fb)
    fr = sc.analysis.free_running
    kw = dict(initial_position=sc.sim.initial_position_m, initial_velocity=sc.sim.initial_velocity_m_s,
              runaway_factor=sc.sim.runaway_factor)
    if fr is not None:
        if not system.gamma0 > 0:
            raise UnstableSystem("free-running mode needs Gamma_0 > 0")
        probe = dynamics.SimConfig.for_system(system, fb, 1.0, seed=seed, warmup=0.0,
                                              steps_per_period=sc.sim.steps_per_period)
        dec = sc.sim.decimate
        window = fr.window_s if fr.window_s is not None else 50.0 / system.gamma0
        ws = max(dec, int(round(window / probe.dt / dec)) * dec)
        warm = sc.sim.warmup_s if sc.sim.warmup_s is not None else 10.0 / system.gamma0
        k = max(1, math.ceil(warm / (ws * probe.dt)))
        cfg = dynamics.SimConfig(dt=probe.dt, duration=(k + fr.n_windows) * ws * probe.dt, seed=seed,
                                 warmup=k * ws * probe.dt, decimate=dec, **kw)
        return cfg, ws
    if not g > 0:
        raise UnstableSystem(f"total damping {g:.4g} rad/s is not positive")
    duration = sc.sim.duration_s if sc.sim.duration_s is not None else sc.sim.damping_times / g
    cfg = dynamics.SimConfig.for_system(system, fb, duration, seed=seed, warmup=sc.sim.warmup_s,
                                        steps_per_period=sc.sim.steps_per_period,
                                        decimate=sc.sim.decimate, **kw)
    return cfg, None


def _run_name(point, run):
    return f"{point.label}_r{run:02d}"


def _simulate_run(sc: Scenario, point: Point, run: int, seed: int, out: Path):
    """One ensemble member; writes its data files and returns a small record."""
    cfg, ws = _sim_config(sc, point, seed)
    name = _run_name(point, run)
    system, fb = point.system, point.feedback
    info = {"dt": cfg.dt, "duration_s": cfg.duration, "warmup_s": cfg.warmup, "n_steps": cfg.n_steps,
            "decimate": cfg.decimate}
    if ws is not None:
        fr = sc.analysis.free_running
        n_blocks = cfg.n_steps // ws + 1
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(FREE_RUN_CHANNEL,))))
        start = gen.uniform(0, 2 * math.pi)
        path = start + np.concatenate([[0.0], np.cumsum(fr.phase_step_rad * gen.standard_normal(n_blocks - 1))])
        traj = dynamics.integrate(system, fb, cfg, phi0_path=path, window_steps=ws)
        ref = dynamics.integrate(system, fb.off(), cfg)
        k = cfg.warmup_steps // ws
        per = ws // cfg.decimate
        scale = system.mass * system.omega**2 / M.CONST.k_B
        t_fb = scale * traj.positions[: fr.n_windows * per].reshape(fr.n_windows, per).var(axis=1)
        t_ref = scale * ref.positions[: fr.n_windows * per].reshape(fr.n_windows, per).var(axis=1)
        phases = np.mod(path[k: k + fr.n_windows], 2 * math.pi)
        rows = np.column_stack([np.arange(fr.n_windows), phases, t_fb, t_ref])
        np.savetxt(out / "windows" / f"{name}.csv", rows, delimiter=",", fmt="%.17g",
                   header=f"window_s={ws * cfg.dt!r}\nwindow,phi0_rad,t_eff_k,t0_k")
        info["window_steps"] = ws
        return info

    traj = dynamics.integrate(system, fb, cfg)
    seg = _segment_length(len(traj), traj.dt, M.total_damping(system, fb), sc.analysis.bins_per_linewidth)
    info["segment_length"] = seg
    info["delay_steps"] = traj.delay_steps
    spectral.welch_psd(traj, seg).write_csv(out / "psd" / f"{name}.csv")
    if "traj" in sc.analysis.outputs:
        dynamics.write_csv(traj, out / "traj" / f"{name}.csv")
    det = sc.analysis.detectors
    if det is not None:
        dseg = _pow2(1.0 / (det.psd_resolution_hz * traj.dt))
        ol = detection.synthesize_ol(traj, det.ol_imprecision_m2_per_hz, seed)
        pn = dynamics.phase_noise(traj, system, fb)
        il = detection.synthesize_il(traj, pn, system.phase_factor, det.il_imprecision_m2_per_hz, fb.tau, seed)
        pn_x = dynamics.phase_noise(traj, system, fb, seed=(seed + BROKEN_SEED_OFFSET) % 2**63)
        il_x = detection.synthesize_il(traj, pn_x, system.phase_factor, det.il_imprecision_m2_per_hz,
                                       fb.tau, seed, allow_mismatch=True)
        for tag, rec in (("ol", ol), ("il", il), ("ilx", il_x)):
            spectral.welch_psd(rec, dseg).write_csv(out / "psd" / f"{name}_{tag}.csv")
    return info


def _prepare(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for d in DATA_DIRS + DERIVED_DIRS:
        target = out / d
        if target.exists():
            shutil.rmtree(target)
        target.mkdir()
    for f in ("summary.csv", MANIFEST):
        if (out / f).exists():
            (out / f).unlink()


def run(sc: Scenario, out, workers=1) -> Path:
    """Simulate every point of ``sc`` into ``out`` and analyse the result."""
    out = Path(out)
    if sc.analysis.detectors is not None and sc.sim.decimate != 1:
        raise ConfigError("sim.decimate: detector synthesis needs decimate = 1")
    points = resolve_points(sc)
    _prepare(out)

    tasks = [(p, k, s) for p in points if p.error is None for k, s in enumerate(_seeds(sc, p))]

    def job(task):
        p, k, s = task
        try:
            return _simulate_run(sc, p, k, s, out), None
        except (LevcoolError, ValueError, ArithmeticError) as exc:
            return None, _err(exc)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, tasks))
    else:
        results = [job(t) for t in tasks]

    by_point = {}
    for (p, k, s), (info, err) in zip(tasks, results):
        by_point.setdefault(p.index, []).append({"run": k, "seed": s, "info": info, "error": err})

    resolved = []
    for p in points:
        runs = by_point.get(p.index, [])
        err = p.error or next((r["error"] for r in runs if r["error"]), None)
        resolved.append({
            "point": p.label,
            "index": p.index,
            "value": p.value,
            "status": "ok" if err is None else "error",
            "error": err,
            "system": p.system.to_dict() if p.system else None,
            "feedback": M.feedback_to_dict(p.feedback) if p.feedback else None,
            "seeds": _seeds(sc, p),
            "runs": runs,
        })
    manifest = {
        "format": "levcool-run",
        "schema_version": 1,
        "scenario": sc.model_dump(mode="json"),
        "points": resolved,
        "data_files": _checksums(out, DATA_DIRS),
        "derived_files": {},
    }
    _write_text(out / MANIFEST, _json(manifest))
    analyze(out)
    return out


# ---------------------------------------------------------------------------
# analysis


def _sha256(path: Path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _checksums(out: Path, dirs):
    files = {}
    for d in dirs:
        for f in sorted((out / d).glob("*")):
            if f.is_file():
                files[f"{d}/{f.name}"] = _sha256(f)
    return files


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_text(path: Path, text):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def load_manifest(out) -> dict:
    path = Path(out) / MANIFEST
    if not path.is_file():
        raise ManifestMissing(f"no {MANIFEST} in {out}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestMissing(f"unreadable manifest: {exc}") from exc


def verify(out, manifest) -> None:
    """Raise :class:`ManifestMissing` if any recorded data file is absent or altered."""
    out = Path(out)
    for rel, digest in manifest["data_files"].items():
        f = out / rel
        if not f.is_file():
            raise ManifestMissing(f"data file {rel} listed in the manifest is missing")
        if _sha256(f) != digest:
            raise ManifestMissing(f"checksum mismatch for {rel}")


def _point_params(rec):
    s, f = rec["system"], rec["feedback"]
    particle = M.ParticleParams(s["radius_m"], s["density_kg_m3"], s["mass_kg"])
    trap = M.TrapParams(omega=s["omega_rad_s"], wavelength=s["wavelength_m"], trap_power=s["trap_power_w"],
                        scattered_power=s["scattered_power_w"], gouy_factor=s["gouy_factor"],
                        phase_factor=s["phase_factor_rad_m"])
    bath = M.BathParams(temperature=s["temperature_k"], gamma_gas=s["gamma_gas_rad_s"],
                        gamma_recoil=s["gamma_recoil_rad_s"], gamma_cold_damp=s["gamma_cold_damp_rad_s"],
                        pressure=s["pressure_pa"])
    fb = M.FeedbackParams(beta=f["beta"], tau=f["tau_s"], phi0=f["phi0_rad"],
                          sigma_phi=f["sigma_phi_rad_sqrt_s"], efficiency=f["efficiency"])
    return M.SystemParams(particle, trap, bath), fb


def _mean_std(x):
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1))


def _theory(row, system, fb):
    row["beta"] = fb.beta_eff
    row["gamma_c_theory_rad_s"] = float(M.coherent_damping(fb.beta_eff, system.omega, fb.tau))
    row["gamma_tot_theory_rad_s"] = float(M.total_damping(system, fb))
    try:
        row["t_eff_theory_k"] = M.t_eff(system, fb)
    except UnstableSystem:
        pass


def _analyze_spectra(out, rec, system, fb, row, fits):
    n = len(rec["runs"])
    label = rec["point"]
    psds = [spectral.Psd.read_csv(out / "psd" / f"{label}_r{k:02d}.csv") for k in range(n)]
    avg = spectral.average_psds(psds)
    fit = spectral.fit_lorentzian(avg)
    fits[f"{label}.json"] = fit.to_record()
    m, om = system.mass, system.omega
    areas = [spectral.temperature_from_area(p, m, om, fit=fit).t_eff for p in psds]
    t_area, t_area_sd = _mean_std(areas)
    if n == 1:
        t_area_sd = spectral.temperature_from_area(psds[0], m, om, fit=fit).t_err
    t_fit = spectral.temperature_from_fit(avg, m, om, fit=fit)
    row.update(
        t_eff_area_k=t_area, t_eff_area_err_k=t_area_sd,
        t_eff_fit_k=t_fit.t_eff, t_eff_fit_err_k=t_fit.t_err,
        gamma_tot_fit_rad_s=fit["linewidth"], gamma_tot_fit_err_rad_s=fit.sigma("linewidth"),
        omega_fit_rad_s=fit["center"], omega_fit_err_rad_s=fit.sigma("center"),
        phonons=M.phonons(t_area, fit["center"]),
        phonons_err=M.phonons(t_area_sd, fit["center"]) if not math.isnan(t_area_sd) else float("nan"),
    )
    if (out / "psd" / f"{label}_r00_il.csv").is_file():
        def avg_of(tag):
            return spectral.average_psds(
                spectral.Psd.read_csv(out / "psd" / f"{label}_r{k:02d}_{tag}.csv") for k in range(n))
        row["il_squash"] = detection.squashing_metric(avg_of("il"), om)
        row["il_squash_broken"] = detection.squashing_metric(avg_of("ilx"), om)
        row["ol_peak_ratio"] = detection.peak_to_floor(avg_of("ol"), om)


def _analyze_windows(out, rec, system, row):
    """T_min per run: median of windows colder than T_0 + 2 Sigma(T_0) of the reference run."""
    t_mins, t_maxs, t0s, s0s = [], [], [], []
    for k in range(len(rec["runs"])):
        data = np.loadtxt(out / "windows" / f"{rec['point']}_r{k:02d}.csv", delimiter=",", ndmin=2)
        t_fb, t_ref = data[:, 2], data[:, 3]
        t0, s0 = float(t_ref.mean()), float(t_ref.std(ddof=1))
        cold = t_fb[t_fb < t0 + 2 * s0]
        t_mins.append(float(np.median(cold)) if cold.size else float("nan"))
        t_maxs.append(float(t_fb.max()))
        t0s.append(t0)
        s0s.append(s0)
    t_min, t_min_sd = _mean_std(t_mins)
    row.update(t_min_k=t_min, t_eff_area_k=t_min, t_eff_area_err_k=t_min_sd,
               t_max_k=float(np.mean(t_maxs)), t0_k=float(np.mean(t0s)), t0_sigma_k=float(np.mean(s0s)),
               phonons=M.phonons(t_min, system.omega))


def _sweep_fits(sc: Scenario, rows, points_rec, fits):
    ok = [(r, p) for r, p in zip(rows, points_rec) if r["status"] == "ok" and p["value"] is not None]
    if sc.analysis.fit_eq3:
        try:
            gc = np.array([r["gamma_c_theory_rad_s"] for r, _ in ok])
            t = np.array([r["t_eff_area_k"] for r, _ in ok])
            sd = np.array([r["t_eff_area_err_k"] for r, _ in ok])
            system, fb = _point_params(ok[0][1])
            order = np.argsort(gc)
            res = fitting.fit_eq3(gc[order], t[order], None if np.any(~(sd > 0)) else sd[order],
                                  mass=system.mass, omega=system.omega, phase_factor=system.phase_factor,
                                  gamma0=system.gamma0, tau=fb.tau)
            record = res.to_record()
            try:
                record["t_min_closed_form_k"] = M.t_min(system, fb)
            except LevcoolError:
                pass
            fits["eq3.json"] = record
        except (LevcoolError, ValueError, IndexError) as exc:
            fits["eq3.json"] = {"error": _err(exc)}
    if sc.analysis.fit_eq6:
        try:
            om = np.array([p["system"]["omega_rad_s"] for _, p in ok])
            t = np.array([r["t_min_k"] for r, _ in ok])
            t0 = np.array([r["t0_k"] for r, _ in ok])
            sd = np.array([r["t_eff_area_err_k"] for r, _ in ok])
            g0 = np.array([M.BathParams(
                temperature=p["system"]["temperature_k"], gamma_gas=p["system"]["gamma_gas_rad_s"],
                gamma_recoil=p["system"]["gamma_recoil_rad_s"],
                gamma_cold_damp=p["system"]["gamma_cold_damp_rad_s"]).gamma_total() for _, p in ok])
            sigma = None if np.any(~(sd > 0)) else sd
            res = fitting.fit_eq6(om, t, t0, g0, sigma_t=sigma, magnitude=sc.analysis.free_running is not None)
            fits["eq6.json"] = res.to_record()
        except (LevcoolError, ValueError, IndexError) as exc:
            fits["eq6.json"] = {"error": _err(exc)}


def summarize(out, manifest) -> tuple[str, dict]:
    """Summary CSV text and fit records, computed from the stored data only."""
    out = Path(out)
    sc = Scenario.model_validate(manifest["scenario"])
    axis = sc.sweep.axis if sc.sweep is not None else "none"
    rows, fits = [], {}
    for rec in manifest["points"]:
        value = "off" if rec["value"] is None and sc.sweep is not None else rec["value"]
        row = {"point": rec["point"], "axis": axis, "value": value, "status": rec["status"],
               "error": rec["error"], "n_runs": len(rec["runs"])}
        if rec["status"] == "ok":
            try:
                system, fb = _point_params(rec)
                _theory(row, system, fb)
                if sc.analysis.free_running is not None:
                    _analyze_windows(out, rec, system, row)
                else:
                    _analyze_spectra(out, rec, system, fb, row, fits)
            except (LevcoolError, ValueError, ArithmeticError) as exc:
                row["status"] = "error"
                row["error"] = _err(exc)
        rows.append(row)
    _sweep_fits(sc, rows, manifest["points"], fits)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue(), fits


def analyze(out) -> Path:
    """Recompute fits and summary from stored data. Idempotent; no re-simulation.

    Everything is computed before anything is written, so a corrupted
    directory is left untouched.
    """
    out = Path(out)
    manifest = load_manifest(out)
    verify(out, manifest)
    summary, fits = summarize(out, manifest)
    texts = {"summary.csv": summary}
    for name, rec in sorted(fits.items()):
        texts[f"fits/{name}"] = _json(rec)
    texts.update(_plot_scripts(manifest))
    for d in DERIVED_DIRS:
        (out / d).mkdir(exist_ok=True)
        for f in (out / d).glob("*"):
            if f"{d}/{f.name}" not in texts and f.is_file():
                f.unlink()
    for rel, text in texts.items():
        _write_text(out / rel, text)
    manifest = copy.deepcopy(manifest)
    manifest["derived_files"] = {rel: hashlib.sha256(t.encode()).hexdigest() for rel, t in sorted(texts.items())}
    _write_text(out / MANIFEST, _json(manifest))
    return out


def read_summary(out) -> list[dict]:
    with open(Path(out) / "summary.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _plot_scripts(manifest):
    sc = manifest["scenario"]
    axis = sc["sweep"]["axis"] if sc.get("sweep") else "none"
    summary = f'''import csv
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "..", "summary.csv")) as fh:
    rows = [r for r in csv.DictReader(fh) if r["status"] == "ok" and r["value"] not in ("", "off")]
x = [float(r["value"]) for r in rows]
y = [float(r["t_eff_area_k"]) for r in rows]
e = [float(r["t_eff_area_err_k"] or 0) for r in rows]
plt.errorbar(x, y, yerr=e, fmt="o", label="area")
th = [(float(r["value"]), float(r["t_eff_theory_k"])) for r in rows if r["t_eff_theory_k"]]
if th:
    plt.plot(*zip(*th), "-", label="linear theory")
plt.xlabel("{axis}")
plt.ylabel("T_eff [K]")
plt.yscale("log")
plt.legend()
plt.savefig(os.path.join(here, "summary.png"), dpi=150)
'''
    psd = '''import glob
import os

import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "..", "psd", "*_r00*.csv"))):
    f, p = np.loadtxt(path, delimiter=",", unpack=True)
    plt.semilogy(f, p, lw=0.7, label=os.path.basename(path)[:-4])
plt.xlabel("frequency [Hz]")
plt.ylabel("PSD [m^2/Hz]")
plt.legend(fontsize=6)
plt.savefig(os.path.join(here, "psd.png"), dpi=150)
'''
    return {"plots/summary.py": summary, "plots/psd.py": psd}


# ---------------------------------------------------------------------------
# built-in scenarios


FIGURES = {
    "fig2": ("fig2", "fig2_inset"),
    "fig3": ("fig3",),
    "fig4": ("fig4a", "fig4b"),
}


def builtin(name) -> Scenario:
    text = resources.files("levcool").joinpath("scenarios", f"{name}.yaml").read_text()
    from .scenario import loads
    return loads(text, f"<builtin {name}>")


def quick(sc: Scenario) -> Scenario:
    """Smaller desk-scale variant for smoke tests: fewer runs and windows, shorter records.

    An explicit ``duration_s`` is kept, since it is what resolves the narrowest line.
    """
    d = sc.model_dump()
    d["sim"]["n_runs"] = min(d["sim"]["n_runs"], 2)
    d["sim"]["damping_times"] = min(d["sim"]["damping_times"], 400.0)
    fr = d["analysis"].get("free_running")
    if fr:
        fr["n_windows"] = min(fr["n_windows"], 8)
    return Scenario.model_validate(d)


def reproduce(figure, out, workers=1, seed=None, fast=False) -> list[Path]:
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    dirs = []
    for name in FIGURES[figure]:
        sc = builtin(name)
        if seed is not None:
            sc = with_seed(sc, seed)
        if fast:
            sc = quick(sc)
        dirs.append(run(sc, Path(out) / name, workers=workers))
    return dirs


def with_seed(sc: Scenario, seed) -> Scenario:
    d = sc.model_dump()
    d["sim"]["seed"] = int(seed)
    return Scenario.model_validate(d)


def load_any(path) -> Scenario:
    """A scenario YAML, or the ``manifest.json`` of an earlier run (re-run with identical settings)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if path.name.endswith(".json"):
        try:
            data = json.loads(path.read_text())
            return Scenario.model_validate(data["scenario"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from exc
    return load(path)
