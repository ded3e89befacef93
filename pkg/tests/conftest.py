import math

import pytest

from levcool import model as M

TWO_PI = 2 * math.pi
OMEGA_47K = TWO_PI * 47e3
TAU = 6.34e-6


def gas_system(gamma_gas, omega=OMEGA_47K, temperature=300.0, gamma_cold=0.0, mass=7.07e-18,
               scattered_power=0.0):
    particle = M.ParticleParams.from_radius_mass(97e-9, mass)
    trap = M.TrapParams(omega=omega, scattered_power=scattered_power)
    bath = M.BathParams(temperature=temperature, gamma_gas=gamma_gas, gamma_cold_damp=gamma_cold)
    return M.SystemParams(particle, trap, bath)


@pytest.fixture(scope="session")
def reference():
    system = M.reference_system()
    return system, M.reference_feedback(system)


TAU_PRIME = 12.7e-6
BETA_FIG3 = 6.18e-4


def fig3_synthetic(seed=0, rel_noise=0.01, n=15, gamma0=TWO_PI * 40, t0=298.0):
    """Temperatures vs. trap frequency from the inverse-temperature law with Gaussian errors."""
    import numpy as np

    omega = TWO_PI * np.linspace(28e3, 56e3, n)
    gc = BETA_FIG3 * omega * np.sin(omega * TAU_PRIME)
    t_true = t0 * gamma0 / (gamma0 + gc)
    sigma = rel_noise * t_true
    t = t_true + sigma * np.random.default_rng(seed).standard_normal(n)
    return omega, t, t0, gamma0, sigma


ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(criterion, ok, detail):
        ACCEPTANCE[criterion] = (bool(ok), detail)
        assert ok, f"criterion {criterion}: {detail}"

    return record


def _criterion_key(c):
    digits = len(c) - len(c.lstrip("0123456789"))
    return int(c[:digits]), c[digits:]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE, key=_criterion_key):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {c}: {detail}")
