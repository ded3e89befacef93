"""Levenberg-Marquardt least squares and the temperature fit recipes.

Recipes:

* :func:`fit_eq6` - inverse-temperature difference vs. trap frequency,
  ``1/T_eff - 1/T_0 = (beta / (Gamma_0 T_0)) Omega sin(Omega tau)``
* :func:`fit_eq3` - temperature vs. coherent damping including phase-noise heating
* :func:`fit_eq4` - weak-cooling tail ``T_0 Gamma_0 / (Gamma_0 + Gamma_c)``
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSpan, NoConvergence, SingularJacobian
from .model import CONST

XTOL = 1e-10
GTOL = 1e-12


@dataclass
class FitResult:
    params: np.ndarray
    sigmas: np.ndarray
    residual_norm: float
    n_iterations: int
    converged: bool
    covariance: np.ndarray
    names: tuple = ()
    dof: int = 0
    chi2: float = 0.0
    extras: dict = field(default_factory=dict)
    input_digest: str = ""

    def __getitem__(self, name):
        return self.params[self.names.index(name)]

    def sigma(self, name):
        return self.sigmas[self.names.index(name)]

    def to_record(self):
        rec = {
            "names": list(self.names),
            "params": [float(p) for p in self.params],
            "sigmas": [float(s) for s in self.sigmas],
            "residual_norm": float(self.residual_norm),
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "covariance": np.asarray(self.covariance).tolist(),
            "input_digest": self.input_digest,
        }
        rec.update({k: _plain(v) for k, v in self.extras.items()})
        return rec

    def report(self):
        lines = [f"{'parameter':<24}{'value':>16}{'sigma':>16}"]
        for n, p, s in zip(self.names, self.params, self.sigmas):
            lines.append(f"{n:<24}{p:>16.8g}{s:>16.4g}")
        for k, v in self.extras.items():
            if np.isscalar(v):
                lines.append(f"{k:<24}{v:>16.8g}")
        lines.append(f"converged={self.converged} iterations={self.n_iterations} "
                     f"chi2={self.chi2:.6g} dof={self.dof}")
        if self.input_digest:
            lines.append(f"input_digest={self.input_digest}")
        return "\n".join(lines)


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def digest_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def _jacobian(fun, x, r0):
    J = np.empty((r0.size, x.size))
    # a parameter sitting at zero borrows the scale of the others
    big = float(np.max(np.abs(x)))
    typical = 1e-3 * big if big > 0 else 1.0
    for j in range(x.size):
        h = 1e-7 * max(abs(x[j]), typical)
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (fun(xp) - fun(xm)) / (2 * h)
    return J


def least_squares(model, x0, weights=None, jac=None, max_iter=500, names=()):
    """Minimise sum((model(x) / weights)**2) with Levenberg-Marquardt.

    ``model`` returns the residual vector. ``weights`` are per-point 1-sigma
    values; when given the covariance is absolute (chi-square objective),
    otherwise it is scaled by the residual variance. Damping uses Marquardt's
    diagonal scaling with a x10 / /10 schedule on reject / accept.
    """
    x = np.array(x0, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)

    def fun(p):
        r = np.asarray(model(p), dtype=float)
        return r / w if w is not None else r

    def jacobian(p, r):
        if jac is None:
            return _jacobian(fun, p, r)
        J = np.asarray(jac(p), dtype=float)
        return J / w[:, None] if w is not None else J

    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial point")
    cost = r @ r
    lam = 1e-3
    converged = False
    it = 0
    J = jacobian(x, r)
    while it < max_iter:
        it += 1
        A = J.T @ J
        g = J.T @ r
        d = np.diag(A).copy()
        if np.any(d <= 0) or not np.all(np.isfinite(A)):
            raise SingularJacobian("Jacobian has a vanishing column")
        if cost == 0 or _scaled_gradient(J, r, d) < GTOL:
            converged = True
            break
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + step
            r_new = fun(x_new)
            c_new = r_new @ r_new if np.all(np.isfinite(r_new)) else np.inf
            if c_new < cost:
                accepted = True
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not accepted:
            # no downhill step exists at working precision
            converged = _scaled_gradient(J, r, d) < 1e-6
            break
        # norm-wise test in Jacobian-scaled variables, so parameters near zero do not stall it
        sd = np.sqrt(d)
        rel_step = np.linalg.norm(sd * step) / max(np.linalg.norm(sd * x_new), 1e-300)
        x, r, cost = x_new, r_new, c_new
        J = jacobian(x, r)
        if rel_step < XTOL:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"Levenberg-Marquardt stopped after {it} iterations without converging")

    A = J.T @ J
    scale = np.sqrt(np.diag(A))
    if np.any(scale == 0):
        raise SingularJacobian("Jacobian has a vanishing column")
    As = A / np.outer(scale, scale)
    if np.linalg.cond(As) > 1e14:
        raise SingularJacobian("normal matrix is numerically singular")
    cov = np.linalg.inv(As) / np.outer(scale, scale)
    dof = max(r.size - x.size, 0)
    if w is None:
        cov = cov * (cost / dof if dof > 0 else 0.0)
    cov = 0.5 * (cov + cov.T)
    return FitResult(
        params=x,
        sigmas=np.sqrt(np.clip(np.diag(cov), 0, None)),
        residual_norm=math.sqrt(cost),
        n_iterations=it,
        converged=converged,
        covariance=cov,
        names=tuple(names),
        dof=dof,
        chi2=cost,
    )


def _scaled_gradient(J, r, d):
    rn = math.sqrt(r @ r)
    if rn == 0:
        return 0.0
    return float(np.max(np.abs(J.T @ r) / (np.sqrt(d) * rn)))


def bootstrap(fit_fn, n_points, n_resamples=200, seed=0):
    """Standard deviation of ``fit_fn(indices)`` over resampled index sets."""
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_resamples):
        idx = rng.integers(0, n_points, n_points)
        try:
            draws.append(np.asarray(fit_fn(idx), dtype=float))
        except (NoConvergence, SingularJacobian):
            continue
    return np.std(draws, axis=0, ddof=1)


# ---------------------------------------------------------------------------
# recipe: inverse temperature vs. trap frequency


def _tau_guess_from_crossings(omega, y):
    order = np.argsort(omega)
    om, yy = omega[order], y[order]
    sign = np.sign(yy)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if idx.size == 0:
        return None
    # linear interpolation of each zero crossing
    zeros = om[idx] - yy[idx] * (om[idx + 1] - om[idx]) / (yy[idx + 1] - yy[idx])
    if zeros.size >= 2:
        return math.pi / np.mean(np.diff(zeros))
    return math.pi / zeros[0]


def fit_eq6(omega, t_eff, t0, gamma0, sigma_t=None, tau_guess=None, angular=True, magnitude=False):
    """Fit ``beta/(Gamma_0 T_0)`` and the loop delay from temperatures vs. trap frequency.

    ``omega`` is in rad/s, or in Hz with ``angular=False``. Per-point
    ``Gamma_0 T_0`` enters relative to its mean, whose product with the fitted
    prefactor gives ``beta`` (reported in ``extras``).

    With ``magnitude=True`` the model uses ``|sin(omega tau)|``, appropriate
    when every point is the coldest state of an unlocked loop phase; the
    delay guess then comes from the point of weakest cooling (omega tau = pi).
    """
    omega = np.asarray(omega, dtype=float)
    if not angular:
        omega = 2 * math.pi * omega
    t_eff = np.asarray(t_eff, dtype=float)
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), omega.shape)
    gamma0 = np.broadcast_to(np.asarray(gamma0, dtype=float), omega.shape)
    if omega.size < 4:
        raise InsufficientSpan("need at least 4 points")
    y = 1 / t_eff - 1 / t0
    sy = None
    if sigma_t is not None:
        sy = np.broadcast_to(np.asarray(sigma_t, dtype=float), omega.shape) / t_eff**2
    g = gamma0 * t0
    g_ref = float(np.mean(g))
    rel = g_ref / g

    if tau_guess is None and magnitude:
        tau_guess = math.pi / omega[int(np.argmin(y))]
    if tau_guess is None:
        tau_guess = _tau_guess_from_crossings(omega, y)
        if tau_guess is None:
            raise InsufficientSpan("no zero crossing of the inverse-temperature difference")
    if (omega.max() - omega.min()) * tau_guess < math.pi / 2:
        raise InsufficientSpan("frequency span covers less than pi/2 of loop phase")

    wts = np.ones_like(y) if sy is None else 1 / sy

    sine = (lambda x: np.abs(np.sin(x))) if magnitude else np.sin

    def best_amp(tau):
        basis = rel * omega * sine(omega * tau)
        a = np.sum(wts**2 * basis * y) / np.sum(wts**2 * basis**2)
        res = (a * basis - y) * wts
        return a, res @ res

    # refine the branch nearest the guess by a scan, then polish with LM
    grid = tau_guess * np.linspace(0.85, 1.15, 601)
    costs = [best_amp(t)[1] for t in grid]
    tau1 = grid[int(np.argmin(costs))]
    a1 = best_amp(tau1)[0]

    def model(p):
        return p[0] * rel * omega * sine(omega * p[1]) - y

    def jac(p):
        s = sine(omega * p[1])
        c = np.cos(omega * p[1])
        if magnitude:
            c = c * np.sign(np.sin(omega * p[1]))
        return np.column_stack([rel * omega * s, p[0] * rel * omega**2 * c])

    res = least_squares(model, [a1, tau1], weights=sy, jac=jac, names=("beta_over_gamma0T0", "tau"))
    q, tau = res.params
    res.extras["beta"] = q * g_ref
    res.extras["beta_sigma"] = res.sigmas[0] * g_ref
    res.extras["gamma0T0_ref"] = g_ref
    res.extras["magnitude"] = bool(magnitude)
    res.input_digest = digest_arrays(omega, t_eff, t0, gamma0, [] if sigma_t is None else sigma_t)
    return res


def coherent_damping_from_fit(res: FitResult, omega):
    """Gamma_c implied by a temperature-versus-frequency fit at trap frequency ``omega`` [rad/s]."""
    return res.extras["beta"] * omega * np.sin(omega * res["tau"])


# ---------------------------------------------------------------------------
# recipe: temperature vs. coherent damping


def _eq3_model(gamma_c, force_sq, sigma_phi, mass, omega, phase_factor, gamma0, tau):
    g = gamma0 + gamma_c
    beta = gamma_c / (omega * math.sin(omega * tau))
    return mass * omega**2 / (2 * CONST.k_B) * (
        force_sq / (mass**2 * omega**2 * g) + (sigma_phi**2 * omega**2 / phase_factor**2) * beta**2 / g
    )


def eq3_curve(gamma_c, force_sq, sigma_phi, mass, omega, phase_factor, gamma0, tau):
    return _eq3_model(np.asarray(gamma_c, dtype=float), force_sq, sigma_phi, mass, omega,
                      phase_factor, gamma0, tau)


def fit_eq3(gamma_c, t_eff, sigma_t=None, *, mass, omega, phase_factor, gamma0, tau):
    """Fit force noise ``sigma_m^2 + sigma_r^2`` and phase noise ``sigma_phi``.

    Derived outputs (``beta_opt``, ``t_min`` and their 1-sigma errors) are
    stored in ``extras``.
    """
    gc = np.asarray(gamma_c, dtype=float)
    t = np.asarray(t_eff, dtype=float)
    if gc.size < 3:
        raise InsufficientSpan("need at least 3 points")
    k = int(np.argmin(t[np.argsort(gc)]))
    if k == 0 or k == gc.size - 1:
        raise InsufficientSpan("data do not bracket the temperature minimum")
    s = math.sin(omega * tau)
    g = gamma0 + gc
    beta = gc / (omega * s)
    # the model is linear in (force_sq, sigma_phi^2); use that for the start point
    c1 = 1 / (2 * CONST.k_B * mass * g)
    c2 = mass * omega**4 * beta**2 / (2 * CONST.k_B * phase_factor**2 * g)
    w = np.ones_like(t) if sigma_t is None else 1 / np.broadcast_to(sigma_t, t.shape)
    A = np.column_stack([c1, c2]) * w[:, None]
    cs = np.linalg.norm(A, axis=0)  # columns differ by ~30 decades
    (f0, p0), *_ = np.linalg.lstsq(A / cs, t * w, rcond=None)
    f0, p0 = f0 / cs[0], p0 / cs[1]
    f0 = abs(f0) if f0 != 0 else 1e-40
    p0 = math.sqrt(abs(p0)) if p0 != 0 else 1e-6

    def model(p):
        return c1 * p[0] + c2 * p[1] ** 2 - t

    def jac(p):
        return np.column_stack([c1, 2 * c2 * p[1]])

    res = least_squares(model, [f0, p0], weights=sigma_t, jac=jac, names=("sigma_forces_sq", "sigma_phi"))
    fsq, sphi = res.params
    cov = res.covariance
    b_opt = math.sqrt(fsq) * phase_factor / (mass * omega**2 * sphi)
    t_min = sphi * omega * math.sqrt(fsq) / (CONST.k_B * phase_factor * s)
    # first-order propagation through the covariance
    gb = np.array([0.5 / fsq, -1 / sphi]) * b_opt
    gt = np.array([0.5 / fsq, 1 / sphi]) * t_min
    res.extras.update(
        beta_opt=b_opt,
        beta_opt_sigma=math.sqrt(max(gb @ cov @ gb, 0)),
        gamma_c_opt=b_opt * omega * s,
        t_min=t_min,
        t_min_sigma=math.sqrt(max(gt @ cov @ gt, 0)),
    )
    res.input_digest = digest_arrays(gc, t, [] if sigma_t is None else sigma_t)
    return res


def fit_eq4(gamma_c, t_eff, sigma_t=None):
    """Weak-cooling law ``T_0 Gamma_0 / (Gamma_0 + Gamma_c)``; fits ``t0`` and ``gamma0``."""
    gc = np.asarray(gamma_c, dtype=float)
    t = np.asarray(t_eff, dtype=float)
    # 1/T is linear in Gamma_c: 1/T = 1/T0 + Gamma_c/(T0 Gamma0)
    slope, icpt = np.polyfit(gc, 1 / t, 1)
    t0 = 1 / icpt if icpt > 0 else t.max()
    g0 = abs(icpt / slope) if slope != 0 else 1.0

    def model(p):
        return p[0] * p[1] / (p[1] + gc) - t

    def jac(p):
        d = p[1] + gc
        return np.column_stack([p[1] / d, p[0] * gc / d**2])

    res = least_squares(model, [t0, g0], weights=sigma_t, jac=jac, names=("t0", "gamma0"))
    res.input_digest = digest_arrays(gc, t, [] if sigma_t is None else sigma_t)
    return res


def to_json(res: FitResult, path):
    with open(path, "w") as fh:
        json.dump(res.to_record(), fh, indent=2, sort_keys=True)
