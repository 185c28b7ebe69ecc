"""Optical Bloch equations of a coherently driven two-level system.

All observables come from one linear generator acting on the vector
``x = (<s->, <s+>, rho_ee)`` in the frame rotating at the laser frequency::

    dx/dt = M x + b

with Hamiltonian ``-Delta s+s- + (Omega/2)(s+ + s-)``, radiative decay
``gamma`` and coherence decay ``gamma/2 + dephasing``. Steady state is a 3x3
solve, the incoherent spectrum is the resolvent of ``M`` applied to the
fluctuation vector (quantum regression), and g2 propagates ``x`` from the
ground state.

Units: rates and detunings in rad/ns (angular); spectra are returned per GHz
on GHz offset grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import InvalidParameterError, NumericalError
from .spectral import TWO_PI, Grid1D, ghz_to_angular


@dataclass(frozen=True)
class TlsParams:
    """Driven two-level system.

    gamma: radiative decay rate (1/ns). rabi: Rabi frequency (rad/ns).
    detuning: laser minus transition frequency (rad/ns).
    dephasing: pure dephasing rate (1/ns).
    """

    gamma: float
    rabi: float
    detuning: float = 0.0
    dephasing: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "rabi", "detuning", "dephasing"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.gamma <= 0:
            raise InvalidParameterError("gamma must be > 0")
        if self.rabi < 0:
            raise InvalidParameterError("rabi must be >= 0")
        if self.dephasing < 0:
            raise InvalidParameterError("dephasing must be >= 0")

    @property
    def coherence_decay(self):
        return 0.5 * self.gamma + self.dephasing

    def with_detuning(self, detuning):
        return TlsParams(self.gamma, self.rabi, detuning, self.dephasing)


@dataclass(frozen=True)
class BlochState:
    population: float
    coherence: complex


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    """Emission spectrum at one laser frequency.

    coherent_weight: photon rate (1/ns) in the elastic line at zero offset.
    offsets: photon minus laser frequency (GHz).
    incoherent: inelastic photon rate density (1/ns per GHz) on ``offsets``.
    total_rate: gamma * rho_ee, the full emitted photon rate.
    """

    coherent_weight: float
    offsets: np.ndarray
    incoherent: np.ndarray
    total_rate: float


def generator(p: TlsParams):
    """Return ``(M, b)`` of the Bloch equations for ``p``."""
    g = p.coherence_decay
    d, w = p.detuning, p.rabi
    m = np.array(
        [
            [-(g - 1j * d), 0.0, 1j * w],
            [0.0, -(g + 1j * d), -1j * w],
            [0.5j * w, -0.5j * w, -p.gamma],
        ],
        dtype=complex,
    )
    b = np.array([-0.5j * w, 0.5j * w, 0.0], dtype=complex)
    return m, b


def _steady_vector(p: TlsParams):
    m, b = generator(p)
    return np.linalg.solve(m, -b)


def steady_state(p: TlsParams) -> BlochState:
    x = _steady_vector(p)
    return BlochState(population=float(x[2].real), coherence=complex(x[0]))


def excited_population(p: TlsParams, detunings):
    """Steady-state rho_ee for each detuning (rad/ns); other parameters from ``p``.

    Batched version of :func:`steady_state` used for PLE sweeps.
    """
    d = np.atleast_1d(np.asarray(detunings, dtype=float))
    g, w = p.coherence_decay, p.rabi
    m = np.zeros((d.size, 3, 3), dtype=complex)
    m[:, 0, 0] = -(g - 1j * d)
    m[:, 1, 1] = -(g + 1j * d)
    m[:, 0, 2] = 1j * w
    m[:, 1, 2] = -1j * w
    m[:, 2, 0] = 0.5j * w
    m[:, 2, 1] = -0.5j * w
    m[:, 2, 2] = -p.gamma
    rhs = np.broadcast_to(np.array([0.5j * w, -0.5j * w, 0.0]), (d.size, 3))
    x = np.linalg.solve(m, rhs[..., None])[..., 0]
    return x[:, 2].real.reshape(np.shape(detunings))


def coherent_fraction(p: TlsParams) -> float:
    """Share of the emitted photons that are elastically scattered."""
    if p.rabi == 0:
        raise InvalidParameterError("coherent fraction is undefined for an undriven system")
    s = steady_state(p)
    return abs(s.coherence) ** 2 / s.population


def _offsets(photon_grid):
    if isinstance(photon_grid, Grid1D):
        return photon_grid.points
    return np.asarray(photon_grid, dtype=float)


def emission_spectrum(p: TlsParams, photon_grid) -> SpectrumResult:
    """Coherent weight and incoherent density of the resonance fluorescence.

    ``photon_grid`` holds photon-minus-laser offsets in GHz (a Grid1D or an
    array). The incoherent density integrates to ``gamma*(rho_ee - |<s->|^2)``
    over the whole real line.
    """
    nu = _offsets(photon_grid)
    m, b = generator(p)
    x = np.linalg.solve(m, -b)
    s, sp, n = x
    coh2 = abs(s) ** 2
    # <ds+(0) dx(tau)> at tau = 0, i.e. <s+ x> - <s+><x>
    dy0 = np.array([n - coh2, -sp * sp, -sp * n])
    if p.rabi == 0:
        return SpectrumResult(0.0, nu, np.zeros_like(nu), 0.0)
    w = ghz_to_angular(nu)
    a = m[None, :, :] + 1j * w[:, None, None] * np.eye(3)[None]
    lap = np.linalg.solve(a, np.broadcast_to(dy0, (w.size, 3))[..., None])[:, 0, 0]
    # (gamma/pi) per rad/ns, times 2*pi for a density per GHz
    dens = 2.0 * p.gamma * (-lap).real
    floor = -1e-9 * max(1.0, float(np.max(np.abs(dens))) if dens.size else 1.0)
    if np.any(dens < floor):
        raise NumericalError(f"incoherent spectrum negative ({dens.min():.3g})")
    np.clip(dens, 0.0, None, out=dens)
    return SpectrumResult(
        coherent_weight=float(p.gamma * coh2),
        offsets=nu,
        incoherent=dens,
        total_rate=float(p.gamma * n.real),
    )


def _tau_array(tau_grid):
    t = tau_grid.points if isinstance(tau_grid, Grid1D) else np.asarray(tau_grid, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise InvalidParameterError("delays must be finite and >= 0")
    return t


def g2(p: TlsParams, tau_grid):
    """Second-order correlation g2(tau) for delays in ns.

    After a photon detection the emitter is in the ground state, so g2 is the
    excited population re-grown from the ground state divided by its
    steady-state value. Propagation uses the exact matrix exponential;
    uniform grids reuse a single one-step propagator.
    """
    t = _tau_array(tau_grid)
    if p.rabi == 0:
        raise InvalidParameterError("g2 is undefined for an undriven system")
    m, _ = generator(p)
    xss = _steady_vector(p)
    d0 = -xss
    flat = t.ravel()
    out = np.empty(flat.size)
    w, v = np.linalg.eig(m)
    if np.linalg.cond(v) < 1e6:
        # diagonalisable away from the oscillation threshold: closed-form propagation
        c = np.linalg.solve(v, d0) * v[2]
        out = (xss[2] + np.exp(np.outer(flat, w)) @ c).real
    elif flat.size > 1 and np.allclose(np.diff(flat), flat[1] - flat[0], rtol=1e-9, atol=1e-12) \
            and flat[1] > flat[0]:
        prop = expm(m * (flat[1] - flat[0]))
        d = expm(m * flat[0]) @ d0
        for k in range(flat.size):
            out[k] = (xss[2] + d[2]).real
            d = prop @ d
    else:
        for k, tk in enumerate(flat):
            out[k] = (xss[2] + (expm(m * tk) @ d0)[2]).real
    return out.reshape(t.shape) / xss[2].real


def g2_with_background(p: TlsParams, signal_fraction, tau_grid):
    """g2 with uncorrelated background: ``1 + rho**2 (g2 - 1)``."""
    rho = float(signal_fraction)
    if not (0.0 < rho <= 1.0):
        raise InvalidParameterError("signal_fraction must be in (0, 1]")
    return 1.0 + rho**2 * (g2(p, tau_grid) - 1.0)


def natural_linewidth(gamma):
    """Weak-drive FWHM in GHz for a radiative rate ``gamma`` (1/ns)."""
    if gamma <= 0:
        raise InvalidParameterError("gamma must be > 0")
    return gamma / TWO_PI


def power_broadened_fwhm(p: TlsParams):
    """FWHM (GHz) of rho_ee versus detuning: a Lorentzian in the laser frequency."""
    g = p.coherence_decay
    return 2.0 * np.sqrt(g**2 + g * p.rabi**2 / p.gamma) / TWO_PI
