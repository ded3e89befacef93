"""End-to-end acceptance checks, one test per criterion at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import csv
import io
import json
import math

import numpy as np
import pytest

from levcool import dynamics as D
from levcool import fitting as F
from levcool import harness as H
from levcool import model as M
from levcool import scenario as SC
from levcool import spectral as S
from levcool.cli import EXIT_OK, main

from conftest import BETA_FIG3, OMEGA_47K, TAU, TAU_PRIME, TWO_PI, fig3_synthetic

pytestmark = pytest.mark.slow


def _scenario(**parts):
    return SC.Scenario.model_validate({"version": 1, **parts})


def _rows(out):
    return H.read_summary(out)


def _f(row, key):
    return float(row[key])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def produced():
    """Run directories created in this module, re-run by the determinism check."""
    return {}


def _run(sc, workdir, produced):
    out = H.run(sc, workdir / sc.name)
    produced[sc.name] = out
    return out


# 1 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def damping_law(workdir, produced):
    sc = _scenario(
        name="damping_law",
        system={"omega_rad_s": OMEGA_47K, "gamma_gas_rad_s": TWO_PI * 78, "scattered_power_w": 0.0},
        feedback={"tau_s": TAU},
        sweep={"axis": "beta", "values": [1e-3, 1e-2, 4.1e-2]},
        sim={"n_runs": 5, "damping_times": 4000, "seed": 101},
    )
    return _rows(_run(sc, workdir, produced))


def test_criterion_1_damping_law(damping_law, verdict):
    parts, ok = [], True
    for row in damping_law:
        beta = _f(row, "value")
        expected = TWO_PI * 78 + beta * OMEGA_47K * math.sin(OMEGA_47K * TAU)
        got = _f(row, "gamma_tot_fit_rad_s")
        ok &= abs(got / expected - 1) < 0.05
        parts.append(f"beta={beta:g}: {got / TWO_PI:.1f} Hz vs {expected / TWO_PI:.1f} Hz")
    strong = _f(damping_law[-1], "gamma_tot_fit_rad_s") / TWO_PI
    ok &= abs(strong / 1.92e3 - 1) < 0.05
    verdict("1", ok, "; ".join(parts) + f"; quoted 1.92 kHz vs {strong / 1e3:.3f} kHz")


# 2 ---------------------------------------------------------------------------------


def test_criterion_2_equipartition(workdir, produced, verdict):
    sc = H.builtin("gas_only")
    (row,) = _rows(_run(sc, workdir, produced))
    t = _f(row, "t_eff_area_k")
    verdict("2", row["n_runs"] == "5" and abs(t / 300 - 1) < 0.05,
            f"area T_eff = {t:.1f} +- {_f(row, 't_eff_area_err_k'):.1f} K over {row['n_runs']} runs (300 K bath)")


# 3 ---------------------------------------------------------------------------------


def test_criterion_3_weak_cooling_law(workdir, produced, verdict):
    g0 = TWO_PI * 100
    sc = _scenario(
        name="weak_cooling",
        system={"omega_rad_s": OMEGA_47K, "gamma_gas_rad_s": g0, "scattered_power_w": 0.0},
        feedback={"tau_s": TAU},
        sweep={"axis": "gamma_c", "start": TWO_PI * 100, "stop": TWO_PI * 1000, "num": 4, "spacing": "log"},
        sim={"n_runs": 5, "damping_times": 1000, "seed": 103},
    )
    rows = _rows(_run(sc, workdir, produced))
    prod = np.array([_f(r, "t_eff_area_k") * (g0 + _f(r, "value")) for r in rows])
    dev = np.max(np.abs(prod / prod.mean() - 1))
    verdict("3", len(rows) == 4 and dev < 0.07,
            f"T_eff (Gamma_0 + Gamma_c) over Gamma_c/2pi = 100..1000 Hz varies by at most {100 * dev:.1f}%")


# 4 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fig4(workdir, produced):
    return {name: _run(H.builtin(name), workdir, produced) for name in ("fig4a", "fig4b")}


def test_criterion_4a_fitted_minimum(fig4, verdict):
    rows = _rows(fig4["fig4a"])
    t = [_f(r, "t_eff_area_k") for r in rows]
    k = int(np.argmin(t))
    eq3 = json.loads((fig4["fig4a"] / "fits" / "eq3.json").read_text())
    fitted, closed = eq3["t_min"], eq3["t_min_closed_form_k"]
    ok = 0 < k < len(rows) - 1 and abs(fitted / closed - 1) < 0.10
    verdict("4a", ok, f"simulated minimum {1e3 * t[k]:.3f} mK at Gamma_c/2pi = {_f(rows[k], 'value') / TWO_PI:.0f} Hz; "
                      f"fitted T_min {1e3 * fitted:.3f} mK vs closed form {1e3 * closed:.3f} mK")


def test_criterion_4b_quoted_minimum(verdict):
    system = M.reference_system()
    t = M.t_min(system, M.reference_feedback(system))
    verdict("4b", abs(t / 847e-6 - 1) < 0.05, f"closed-form T_min {1e6 * t:.0f} uK from the stated inputs vs 847 uK")


# 5 ---------------------------------------------------------------------------------


def test_criterion_5_phonons(verdict):
    est = S.TemperatureEstimate(705e-6, 133e-6, "area", OMEGA_47K, 1.0)
    n, dn = S.phonons_from_estimate(est)
    verdict("5", abs(n / 344 - 1) <= 0.20, f"n = {n:.0f} +- {dn:.0f} at 705 uK, 47 kHz vs 344 +- 55")


# 6 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def eq6_fit():
    omega, t, t0, g0, sig = fig3_synthetic(seed=2024)
    return F.fit_eq6(omega, t, t0, g0, sigma_t=sig)


def test_criterion_6a_delay_and_gain(eq6_fit, verdict):
    tau, beta = eq6_fit["tau"], eq6_fit.extras["beta"]
    ok = abs(tau / TAU_PRIME - 1) < 0.005 and abs(beta / BETA_FIG3 - 1) < 0.05
    verdict("6a", ok, f"tau' = {1e6 * tau:.3f} +- {1e6 * eq6_fit.sigma('tau'):.3f} us (12.7), "
                      f"beta = {beta:.3e} +- {eq6_fit.extras['beta_sigma']:.1e} (6.18e-4)")


def test_criterion_6b_damping_at_three_quarter_phase(eq6_fit, verdict):
    gc = F.coherent_damping_from_fit(eq6_fit, 3 * math.pi / (4 * eq6_fit["tau"])) / TWO_PI
    verdict("6b", abs(gc / 12 - 1) < 0.10, f"Gamma_c/2pi = {gc:.2f} Hz at Omega tau' = 3pi/4 vs 12 Hz")


def test_criterion_6c_damping_at_quarter_phase(eq6_fit, verdict):
    gc = F.coherent_damping_from_fit(eq6_fit, math.pi / (2 * eq6_fit["tau"])) / TWO_PI
    verdict("6c", abs(gc / 0.55 - 1) < 0.10, f"Gamma_c/2pi = {gc:.2f} Hz at Omega tau' = pi/2 vs 0.55 Hz")


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_noise_squashing(fig4, verdict):
    on, off = _rows(fig4["fig4b"])
    shared, broken, ol = _f(on, "il_squash"), _f(on, "il_squash_broken"), _f(on, "ol_peak_ratio")
    ok = shared < 0.8 and broken > 0.95 and ol >= 3
    verdict("7", ok, f"IL metric {shared:.3f} shared / {broken:.3f} decorrelated; OL peak/floor {ol:.1f} "
                     f"(feedback off: IL {_f(off, 'il_squash'):.2f})")


# 8 ---------------------------------------------------------------------------------


@pytest.mark.parametrize("phase", [math.pi / 6, math.pi / 3, 5 * math.pi / 6], ids=["pi_6", "pi_3", "5pi_6"])
def test_criterion_8_frequency_shift(phase, workdir, produced, verdict):
    tau = phase / OMEGA_47K
    name = f"shift_{round(6 * phase / math.pi)}pi_6"
    sc = _scenario(
        name=name,
        system={"omega_rad_s": OMEGA_47K, "gamma_gas_rad_s": TWO_PI * 200, "scattered_power_w": 0.0},
        feedback={"tau_s": tau},
        sweep={"axis": "beta", "values": [0.0, 1e-2]},
        sim={"n_runs": 5, "damping_times": 1000, "seed": 108},
    )
    base, fed = _rows(_run(sc, workdir, produced))
    measured = _f(fed, "omega_fit_rad_s") - _f(base, "omega_fit_rad_s")
    system = SC.SystemCfg(omega_rad_s=OMEGA_47K, gamma_gas_rad_s=TWO_PI * 200, scattered_power_w=0.0).build()
    roots = [D.characteristic_roots(system, M.FeedbackParams(beta=b, tau=tau)).frequency for b in (0.0, 1e-2)]
    predicted = roots[1] - roots[0]
    formula = -(1e-2 * OMEGA_47K / 2) * math.cos(phase)
    ok = abs(measured / predicted - 1) < 0.10 and abs(predicted / formula - 1) < 0.10
    verdict(f"8.{name}", ok, f"Omega tau = {phase:.3f}: shift {measured / TWO_PI:.1f} Hz simulated, "
                             f"{predicted / TWO_PI:.1f} Hz root finder, {formula / TWO_PI:.1f} Hz first order")


# 9 ---------------------------------------------------------------------------------


def test_criterion_9_projection(capsys, verdict):
    assert main(["project", "--db", "30", "--radius-scale", "0.4", "--pressure-pa", "1e-6"]) == EXIT_OK
    rec = dict(csv.reader(io.StringIO(capsys.readouterr().out)))
    n = float(rec["phonons"])
    verdict("9", 0.45 <= n <= 1.8, f"projected occupation {n:.3f} vs 0.9 (factor 2)")


# 10 --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def quick_figures(workdir, produced):
    for name in ("fig2", "fig2_inset", "fig3"):
        _run(H.quick(H.builtin(name)), workdir, produced)


def test_criterion_10_determinism(quick_figures, damping_law, fig4, workdir, produced, verdict):
    same, names = [], sorted(produced)
    for name in names:
        first = produced[name]
        again = H.run(H.load_any(first / "manifest.json"), workdir / "rerun" / name)
        same.append((again / "summary.csv").read_bytes() == (first / "summary.csv").read_bytes())
    verdict("10", all(same) and len(names) >= 8,
            f"{sum(same)}/{len(names)} scenarios bit-identical on re-run from the manifest ({', '.join(names)})")
