"""Levenberg-Marquardt least squares and the three analysis models.

Box bounds are enforced by smooth reparametrisation (sine map for two-sided
bounds, square-root map for one-sided), so the optimiser works on an
unconstrained vector and a parameter can still sit exactly on its bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import InvalidParameterError, NoPeakError
from .spectral import TWO_PI, estimate_fwhm, voigt_density
from .tls import TlsParams, g2_with_background

MAX_ITER = 200
FTOL = 1e-10
GTOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class DataSeries:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise InvalidParameterError("x and y must be 1D arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidParameterError("data must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != x.shape or np.any(~np.isfinite(s)) or np.any(s <= 0):
                raise InvalidParameterError("sigma must be finite, > 0 and match x")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.x.size

    def poisson_weighted(self):
        """Copy with sigma = sqrt(y), floored at 1 (count data)."""
        return DataSeries(self.x, self.y, np.sqrt(np.maximum(self.y, 1.0)))


@dataclass
class FitResult:
    params: dict
    stderr: dict
    residual_norm: float
    converged: bool
    iterations: int
    at_bound: tuple = ()
    warnings: list = field(default_factory=list)
    message: str = ""

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self):
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "at_bound": list(self.at_bound),
            "warnings": list(self.warnings),
            "message": self.message,
        }


class _Transform:
    """Map between bounded parameter p and free variable q."""

    def __init__(self, lo, hi, p0):
        self.lo, self.hi = lo, hi
        if np.isfinite(lo) and np.isfinite(hi):
            self.kind = "both"
        elif np.isfinite(lo):
            self.kind = "lower"
        elif np.isfinite(hi):
            self.kind = "upper"
        else:
            self.kind = "none"
        d = {"lower": p0 - lo, "upper": hi - p0}.get(self.kind, 1.0)
        self.scale = d if d > 0 else 1.0

    def to_free(self, p):
        if self.kind == "both":
            return np.arcsin(np.clip(2.0 * (p - self.lo) / (self.hi - self.lo) - 1.0, -1, 1))
        if self.kind == "lower":
            return np.sqrt(max((((p - self.lo) / self.scale) + 1.0) ** 2 - 1.0, 0.0))
        if self.kind == "upper":
            return np.sqrt(max((((self.hi - p) / self.scale) + 1.0) ** 2 - 1.0, 0.0))
        return p

    def to_param(self, q):
        if self.kind == "both":
            return self.lo + 0.5 * (self.hi - self.lo) * (np.sin(q) + 1.0)
        if self.kind == "lower":
            return self.lo + self.scale * (np.sqrt(q * q + 1.0) - 1.0)
        if self.kind == "upper":
            return self.hi - self.scale * (np.sqrt(q * q + 1.0) - 1.0)
        return q

    def dp_dq(self, q):
        if self.kind == "both":
            return 0.5 * (self.hi - self.lo) * np.cos(q)
        if self.kind == "lower":
            return self.scale * q / np.sqrt(q * q + 1.0)
        if self.kind == "upper":
            return -self.scale * q / np.sqrt(q * q + 1.0)
        return 1.0

    def at_bound(self, p, tol=1e-6):
        span = self.scale if self.kind != "both" else (self.hi - self.lo)
        near = lambda b: np.isfinite(b) and abs(p - b) <= tol * max(span, abs(b), 1e-300)
        return near(self.lo) or near(self.hi)


def _fd_jacobian(fun, v, f0, upper=None):
    """Forward differences; steps go backwards where ``v + h`` would pass ``upper``."""
    jac = np.empty((f0.size, v.size))
    for k in range(v.size):
        h = FD_STEP * max(abs(v[k]), 1.0)
        if upper is not None and v[k] + h > upper[k]:
            h = -h
        vk = v.copy()
        vk[k] += h
        jac[:, k] = (fun(vk) - f0) / h
    return jac


def least_squares(
    model: Callable,
    data: DataSeries,
    init: dict,
    bounds: dict | None = None,
    jac: Callable | None = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Minimise sum(((model(x, **p) - y) / sigma)**2) by Levenberg-Marquardt.

    ``bounds`` maps parameter names to ``(lo, hi)``; omitted names are free.
    ``jac(x, **p)`` may return the analytic (n, k) Jacobian of the model in
    parameter order; otherwise forward differences are used. Failure to
    converge is reported in the result, not raised.
    """
    names = list(init)
    bounds = bounds or {}
    unknown = set(bounds) - set(names)
    if unknown:
        raise InvalidParameterError(f"bounds for unknown parameters: {sorted(unknown)}")
    if len(data) < len(names) + 1:
        raise InvalidParameterError("need more data points than free parameters")
    p0 = np.array([float(init[n]) for n in names])
    tr = []
    for n, v in zip(names, p0):
        lo, hi = bounds.get(n, (-np.inf, np.inf))
        if not lo <= v <= hi:
            raise InvalidParameterError(f"initial {n}={v} outside bounds ({lo}, {hi})")
        if lo < hi:
            # a start exactly on a bound has zero derivative in the free variable
            eps = 1e-3 * (min(hi - lo, max(abs(v), 1.0)))
            if v == lo:
                v = lo + eps
            elif v == hi:
                v = hi - eps
        tr.append(_Transform(lo, hi, v))
        p0[names.index(n)] = v
    x, y = data.x, data.y
    wt = 1.0 / data.sigma if data.sigma is not None else np.ones_like(y)

    def params_of(q):
        return np.array([t.to_param(qi) for t, qi in zip(tr, q)])

    def resid_p(p):
        try:
            with np.errstate(all="ignore"):
                f = np.asarray(model(x, **dict(zip(names, p))), dtype=float)
        except InvalidParameterError:
            # a parameter sits exactly on a bound the model itself rejects
            return np.full(y.shape, np.inf)
        return (f - y) * wt

    def resid(q):
        return resid_p(params_of(q))

    def jac_q(q, r):
        if jac is None:
            return _fd_jacobian(resid, q, r)
        p = params_of(q)
        jp = np.asarray(jac(x, **dict(zip(names, p))), dtype=float) * wt[:, None]
        return jp * np.array([t.dp_dq(qi) for t, qi in zip(tr, q)])[None, :]

    q = np.array([t.to_free(v) for t, v in zip(tr, p0)])
    r = resid(q)
    if not np.all(np.isfinite(r)):
        raise InvalidParameterError("model is not finite at the initial parameters")
    cost = float(r @ r)
    lam = None
    converged = False
    message = "iteration limit reached"
    it = 0
    for it in range(1, max_iter + 1):
        jq = jac_q(q, r)
        grad = jq.T @ r
        if np.linalg.norm(grad) < GTOL or cost == 0.0:
            converged, message = True, "gradient below tolerance"
            break
        a = jq.T @ jq
        diag = np.maximum(np.diag(a), 1e-12 * max(np.max(np.diag(a)), 1e-300))
        if lam is None:
            lam = 1e-3
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q_new = q + step
            r_new = resid(q_new)
            with np.errstate(over="ignore"):
                cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel = (cost - cost_new) / cost
        q, r, cost = q_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-15)
        if rel < FTOL:
            converged, message = True, "relative decrease below tolerance"
            break

    p = params_of(q)
    result_warnings = []
    # standard errors from the Jacobian in parameter space
    if jac is None:
        jp = _fd_jacobian(resid_p, p, resid_p(p), upper=np.array([t.hi for t in tr]))
    else:
        jp = np.asarray(jac(x, **dict(zip(names, p))), dtype=float) * wt[:, None]
    a = jp.T @ jp
    k = len(names)
    if np.linalg.matrix_rank(a) < k:
        result_warnings.append("rank-deficient Jacobian")
    cov = np.linalg.pinv(a)
    if data.sigma is None:
        dof = max(len(data) - k, 1)
        cov = cov * cost / dof
    stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    at_bound = tuple(n for n, t, v in zip(names, tr, p) if t.at_bound(v))
    return FitResult(
        params=dict(zip(names, p)),
        stderr=dict(zip(names, stderr)),
        residual_norm=cost,
        converged=converged,
        iterations=it,
        at_bound=at_bound,
        warnings=result_warnings,
        message=message,
    )


def peak_initial_guess(x, y):
    """(height, center, fwhm, baseline) starting values for a single peak."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    base = float(np.min(y))
    i = int(np.argmax(y))
    height = float(y[i] - base)
    try:
        width = estimate_fwhm(x, y - base)
    except NoPeakError:
        width = 0.25 * float(np.ptp(x))
    return height, float(x[i]), max(width, 2.0 * float(np.min(np.diff(np.sort(x))))), base


# ---- PLE: Voigt with the Lorentzian width pinned by the power-broadening relation

def ple_lorentzian_fwhm(omega_r, gamma):
    """sqrt(gamma**2 + 2*omega_r**2) in GHz, for rates in rad/ns and 1/ns."""
    return np.sqrt(gamma**2 + 2.0 * omega_r**2) / TWO_PI


def _voigt_g_from_total(total, l_fwhm):
    # invert the Olivero-Longbothum width formula for the Gaussian part
    return float(np.sqrt(max((total - 0.5346 * l_fwhm) ** 2 - 0.2166 * l_fwhm**2, 0.0)))


def fit_ple_voigt(data: DataSeries, omega_r, gamma, init=None) -> FitResult:
    """Fit counts versus laser frequency (GHz) with a fixed-Lorentzian Voigt.

    Free parameters: ``amplitude`` (area, counts*GHz), ``center`` (GHz),
    ``gaussian_fwhm`` (GHz, >= 0) and ``baseline``. A result with
    ``gaussian_fwhm`` on its zero bound means the data look purely
    Lorentzian.
    """
    if omega_r <= 0 or gamma <= 0:
        raise InvalidParameterError("omega_r and gamma must be > 0")
    lw = ple_lorentzian_fwhm(omega_r, gamma)

    def model(x, amplitude, center, gaussian_fwhm, baseline):
        return baseline + amplitude * voigt_density(x - center, lw, max(gaussian_fwhm, 0.0))

    if init is None:
        h, c, w, b = peak_initial_guess(data.x, data.y)
        g0 = _voigt_g_from_total(w, lw)
        g0 = g0 if g0 > 0.05 * w else 0.5 * w
        peak_density = voigt_density(0.0, lw, g0)
        init = {"amplitude": h / peak_density, "center": c, "gaussian_fwhm": g0, "baseline": b}
    res = least_squares(model, data, dict(init), {"gaussian_fwhm": (0.0, np.inf)})
    # the Voigt depends on the Gaussian width only through its square near zero,
    # so the optimiser creeps towards the bound; anything this small is the bound
    if res.params["gaussian_fwhm"] < 1e-3 * lw and "gaussian_fwhm" not in res.at_bound:
        res.at_bound = res.at_bound + ("gaussian_fwhm",)
    if "gaussian_fwhm" in res.at_bound:
        res.warnings.append("gaussian_fwhm at zero: data consistent with a pure Lorentzian")
    return res


# ---- g2 with background

def g2_model(x, omega, gamma, signal_fraction):
    return g2_with_background(TlsParams(gamma, omega), signal_fraction, x)


def fit_g2(data: DataSeries, init=None) -> FitResult:
    """Fit g2 versus delay (ns): resonant drive, free omega, gamma, signal_fraction."""
    bounds = {"omega": (0.0, np.inf), "gamma": (0.0, np.inf), "signal_fraction": (0.0, 1.0)}
    if init is None:
        init = _g2_initial_guess(data)
    res = least_squares(g2_model, data, dict(init), bounds)
    om, ga = res.params["omega"], res.params["gamma"]
    if abs(om / (0.25 * ga) - 1.0) < 0.2:
        res.warnings.append(
            "omega close to the oscillation threshold gamma/4: omega and gamma weakly identifiable"
        )
    return res


def _g2_initial_guess(data: DataSeries):
    x, y = data.x, data.y
    order = np.argsort(x)
    x, y = x[order], y[order]
    y0 = float(np.mean(y[: max(1, min(3, y.size // 20))]))
    rho = float(np.sqrt(np.clip(1.0 - y0, 0.05, 1.0)))
    rho = min(rho, 0.999)
    best = None
    span = max(float(x[-1] - x[0]), 1e-3)
    rates = np.geomspace(0.5 / span, 200.0 / span, 16)
    for ga in rates:
        for om in rates:
            f = g2_model(x, om, ga, rho)
            c = float(np.sum((f - y) ** 2))
            if best is None or c < best[0]:
                best = (c, om, ga)
    return {"omega": best[1], "gamma": best[2], "signal_fraction": rho}


# ---- linewidth narrowing: plateau plus exponential

def plateau_model(x, amplitude, decay, plateau):
    return plateau + amplitude * np.exp(-x / decay)


def plateau_jacobian(x, amplitude, decay, plateau):
    e = np.exp(-x / decay)
    return np.column_stack([e, amplitude * x * e / decay**2, np.ones_like(x)])


def fit_exponential_plateau(data: DataSeries, init=None) -> FitResult:
    """Fit ``plateau + amplitude*exp(-P/decay)`` to linewidth versus power."""
    if len(data) < 5:
        raise InvalidParameterError("narrowing fit needs at least 5 points")
    if np.any(data.x < 0):
        raise InvalidParameterError("powers must be >= 0")
    x, y = data.x, data.y
    slope = np.polyfit(x, y, 1)[0]
    if slope > 0 and np.all(np.diff(y[np.argsort(x)]) >= 0) and np.ptp(y) > 0:
        return FitResult(
            params={"amplitude": np.nan, "decay": np.nan, "plateau": np.nan},
            stderr={"amplitude": np.nan, "decay": np.nan, "plateau": np.nan},
            residual_norm=np.nan, converged=False, iterations=0,
            message="linewidth increases monotonically with power; no decaying component",
        )
    if init is None:
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        c0 = float(np.min(ys))
        a0 = float(max(ys[0] - c0, 1e-3 * max(abs(c0), 1.0)))
        target = c0 + a0 / np.e
        below = np.nonzero(ys <= target)[0]
        d0 = float(xs[below[0]]) if below.size and xs[below[0]] > 0 else 0.3 * float(np.ptp(xs))
        init = {"amplitude": a0, "decay": max(d0, 1e-6 * max(np.ptp(xs), 1.0)),
                "plateau": 0.95 * c0 if c0 > 0 else c0 + 1e-3}
    bounds = {"amplitude": (0.0, np.inf), "decay": (0.0, np.inf), "plateau": (0.0, np.inf)}
    init = {k: max(float(v), 0.0) for k, v in init.items()}
    res = least_squares(plateau_model, data, init, bounds, jac=plateau_jacobian)
    p = res.params
    rel_amp = p["amplitude"] / max(abs(p["plateau"]), 1e-300)
    amp_err = res.stderr["amplitude"]
    if ("amplitude" in res.at_bound or rel_amp < 1e-6 or not amp_err < 0.5 * p["amplitude"]
            or "rank-deficient Jacobian" in res.warnings):
        # an amplitude consistent with zero leaves the decay scale free, and the
        # three-parameter optimum can trade plateau against a flat exponential;
        # report the constant model instead
        w = np.ones_like(y) if data.sigma is None else data.sigma**-2
        c = float(np.sum(w * y) / np.sum(w))
        r = y - c
        rss = float(np.sum(w * r * r))
        c_err = float(np.sqrt(rss / max(y.size - 1, 1) / np.sum(w))) if data.sigma is None \
            else float(np.sqrt(1.0 / np.sum(w)))
        res.params = {"amplitude": 0.0, "decay": np.nan, "plateau": c}
        res.stderr = {"amplitude": float(amp_err), "decay": np.inf, "plateau": c_err}
        res.residual_norm = rss
        res.warnings.append("amplitude vanishes: decay scale unidentifiable")
    elif not np.isfinite(res.stderr["decay"]) or res.stderr["decay"] > 10 * p["decay"]:
        res.warnings.append("decay scale poorly constrained")
    return res
