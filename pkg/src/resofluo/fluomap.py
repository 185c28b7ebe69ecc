"""Fluorescence maps I(laser, photon), PLE sweeps and broadening analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import GridMismatchError, InvalidParameterError, NoPeakError, ResofluoError
from .spectral import (
    Grid1D,
    LineShape,
    Map2D,
    convolve_map,
    gaussian_density,
    ghz_to_angular,
    lorentzian_density,
)
from .tls import TlsParams, emission_spectrum, excited_population

log = logging.getLogger(__name__)

DEFAULT_HALF_SPAN = 6.0
DEFAULT_COUNT = 256


@dataclass(frozen=True)
class MapConfig:
    """Geometry and broadening of a fluorescence map.

    Frequencies and widths are in GHz. ``tls`` carries gamma, rabi and
    dephasing; its detuning is ignored and set per laser frequency.
    ``regime`` selects which part of the emission is deposited: the elastic
    (coherent) line, the inelastic (incoherent) spectrum, or both. ``point``
    is the narrow-line limit of the elastic map: the whole on-resonance
    emission rate sits at (center, center), with no homogeneous width.
    ``diagonal_lorentzian_fwhm`` is an optional post-hoc homogeneous
    broadening, only meaningful for elastic maps; physical homogeneous
    broadening should go through ``tls.dephasing`` instead.
    """

    tls: TlsParams
    center: float = 0.0
    laser_axis: Grid1D | None = None
    photon_axis: Grid1D | None = None
    laser_linewidth: float = 0.0
    detector_fwhm: float = 0.0
    inhomogeneous_fwhm: float = 0.0
    diagonal_lorentzian_fwhm: float = 0.0
    regime: Literal["total", "elastic", "inelastic", "point"] = "total"

    def __post_init__(self):
        default = Grid1D.centered(self.center, DEFAULT_HALF_SPAN, DEFAULT_COUNT)
        if self.laser_axis is None:
            object.__setattr__(self, "laser_axis", default)
        if self.photon_axis is None:
            object.__setattr__(self, "photon_axis", default)
        for name in ("laser_linewidth", "detector_fwhm", "inhomogeneous_fwhm",
                     "diagonal_lorentzian_fwhm"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidParameterError(f"{name} must be >= 0")
        if self.regime not in ("total", "elastic", "inelastic", "point"):
            raise InvalidParameterError(f"unknown regime {self.regime!r}")
        if not np.isclose(self.laser_axis.step, self.photon_axis.step, rtol=1e-12, atol=0):
            raise GridMismatchError("laser and photon axes must share the same step")
        for ax in (self.laser_axis, self.photon_axis):
            if not ax.start <= self.center <= ax.stop:
                raise InvalidParameterError("axes must bracket the transition frequency")


def ideal_map(config: MapConfig) -> Map2D:
    """Unbroadened map: one emission spectrum per laser frequency.

    The elastic line is split linearly between the two photon pixels that
    bracket the laser frequency so its weight is conserved exactly.
    """
    la, pa = config.laser_axis, config.photon_axis
    if not np.isclose(la.step, pa.step, rtol=1e-12, atol=0):
        raise GridMismatchError("laser and photon axes must share the same step")
    values = np.zeros((la.count, pa.count))
    if config.regime == "point":
        rate = excited_population(config.tls, np.array([0.0]))[0] * config.tls.gamma
        for i, wi in _split(la, config.center):
            for j, wj in _split(pa, config.center):
                values[i, j] += wi * wj * rate / (la.step * pa.step)
        return Map2D(la, pa, values)
    photon = pa.points
    for i, wl in enumerate(la.points):
        p = config.tls.with_detuning(ghz_to_angular(wl - config.center))
        spec = emission_spectrum(p, photon - wl)
        if config.regime != "elastic":
            values[i] += spec.incoherent
        if config.regime != "inelastic" and spec.coherent_weight > 0:
            for j, w in _split(pa, wl):
                values[i, j] += w * spec.coherent_weight / pa.step
    return Map2D(la, pa, values)


def _split(axis: Grid1D, x):
    """Linear-interpolation weights of ``x`` on the two bracketing pixels."""
    f = (x - axis.start) / axis.step
    j = int(np.floor(f))
    frac = f - j
    return [(jj, w) for jj, w in ((j, 1.0 - frac), (j + 1, frac))
            if 0 <= jj < axis.count and w > 0]


def broaden_map(m: Map2D, config: MapConfig) -> Map2D:
    """Laser lineshape along the laser axis, detector along the photon axis,
    spectral wandering (Gaussian) along the diagonal.

    Zero widths are skipped. Widths below the grid step are applied but are
    effectively an identity.
    """
    step = m.laser_axis.step
    for name in ("laser_linewidth", "detector_fwhm", "inhomogeneous_fwhm",
                 "diagonal_lorentzian_fwhm"):
        w = getattr(config, name)
        if 0 < w < step:
            log.debug("%s=%g GHz is below the grid step %g GHz", name, w, step)
    m = convolve_map(m, LineShape.lorentzian(config.laser_linewidth), "laser")
    m = convolve_map(m, LineShape.lorentzian(config.detector_fwhm), "photon")
    m = convolve_map(m, LineShape.gaussian(config.inhomogeneous_fwhm), "diagonal")
    if config.diagonal_lorentzian_fwhm > 0:
        m = convolve_map(m, LineShape.lorentzian(config.diagonal_lorentzian_fwhm), "diagonal")
    return m


def fluorescence_map(config: MapConfig) -> Map2D:
    return broaden_map(ideal_map(config), config)


@dataclass(frozen=True, eq=False)
class Envelope:
    """Per-laser-frequency maximum of a map (the PL peak of each spectrum)."""

    laser: np.ndarray
    peak: np.ndarray
    location: np.ndarray
    valid: np.ndarray = field(repr=False)


def envelope(m: Map2D) -> Envelope:
    """Peak amplitude and photon frequency for every laser frequency.

    Uses a three-point parabola around the discrete maximum. Rows whose
    maximum is on the photon-axis boundary (or all zero) are flagged
    invalid and carry NaN.
    """
    v = np.asarray(m.values)
    photon = m.photon_axis.points
    n = v.shape[0]
    peak = np.full(n, np.nan)
    loc = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for i, row in enumerate(v):
        j = int(np.argmax(row))
        if j == 0 or j == row.size - 1 or row[j] <= 0:
            continue
        y0, y1, y2 = row[j - 1], row[j], row[j + 1]
        den = y0 - 2.0 * y1 + y2
        dx = 0.0 if den == 0 else 0.5 * (y0 - y2) / den
        peak[i] = y1 - 0.25 * (y0 - y2) * dx
        loc[i] = photon[j] + dx * m.photon_axis.step
        valid[i] = True
    return Envelope(m.laser_axis.points, peak, loc, valid)


def diagonal_cut(m: Map2D):
    """Values along photon == laser, returned as (laser GHz, value)."""
    la, pa = m.laser_axis, m.photon_axis
    if not np.isclose(la.step, pa.step, rtol=1e-12, atol=0):
        raise GridMismatchError("diagonal cut needs equal steps")
    off = (la.start - pa.start) / pa.step
    shift = int(np.rint(off))
    if abs(off - shift) > 1e-6:
        raise GridMismatchError("photon and laser axes are not aligned on a common lattice")
    i = np.arange(la.count)
    j = i + shift
    ok = (j >= 0) & (j < pa.count)
    return la.points[ok], np.asarray(m.values)[i[ok], j[ok]]


def _line_cut(m: Map2D, center, direction):
    la, pa = m.laser_axis, m.photon_axis
    i0, j0 = la.nearest_index(center[0]), pa.nearest_index(center[1])
    di, dj = direction
    ks = np.arange(-max(la.count, pa.count), max(la.count, pa.count) + 1)
    i, j = i0 + ks * di, j0 + ks * dj
    ok = (i >= 0) & (i < la.count) & (j >= 0) & (j < pa.count)
    ks = ks[ok]
    length = la.step * np.hypot(di, dj)
    return ks * length, np.asarray(m.values)[i[ok], j[ok]]


def _variance(x, w):
    w = np.asarray(w, dtype=float)
    tot = w.sum()
    if tot <= 0:
        return 0.0
    mu = (x * w).sum() / tot
    return float(((x - mu) ** 2 * w).sum() / tot)


@dataclass(frozen=True)
class MapShape:
    """Second moments describing the map's morphology.

    ``laser_var``/``photon_var``/``diagonal_var`` are variances of 1D cuts
    through the centre along the laser axis, photon axis and diagonal (the
    diagonal measured in path length); a diamond has axis cuts wider than
    the diagonal cut. ``along_var``/``across_var`` are whole-map variances
    along and across the diagonal; an oval elongated on the diagonal has
    ``along_var >> across_var``.
    """

    laser_var: float
    photon_var: float
    diagonal_var: float
    along_var: float
    across_var: float

    @property
    def elongation(self):
        return self.along_var / self.across_var

    @property
    def is_diamond(self):
        return min(self.laser_var, self.photon_var) > self.diagonal_var


def map_shape(m: Map2D, center=None) -> MapShape:
    """Cut and whole-map second moments around ``center`` (defaults to the peak)."""
    v = np.asarray(m.values)
    if center is None:
        i, j = np.unravel_index(int(np.argmax(v)), v.shape)
        center = (m.laser_axis.points[i], m.photon_axis.points[j])
    x_l, c_l = _line_cut(m, center, (1, 0))
    x_p, c_p = _line_cut(m, center, (0, 1))
    x_d, c_d = _line_cut(m, center, (1, 1))
    wl, wp = np.meshgrid(m.laser_axis.points, m.photon_axis.points, indexing="ij")
    u = (wl + wp) / np.sqrt(2.0)
    a = (wp - wl) / np.sqrt(2.0)
    return MapShape(
        laser_var=_variance(x_l, c_l),
        photon_var=_variance(x_p, c_p),
        diagonal_var=_variance(x_d, c_d),
        along_var=_variance(u.ravel(), v.ravel()),
        across_var=_variance(a.ravel(), v.ravel()),
    )


class ClassificationError(ResofluoError):
    pass


@dataclass(frozen=True)
class BroadeningClass:
    label: Literal["gaussian", "lorentzian", "ambiguous"]
    gaussian_fit: object
    lorentzian_fit: object

    @property
    def ambiguous(self):
        return self.label == "ambiguous"


def _peak_model(shape):
    def model(x, amplitude, center, fwhm, baseline):
        return baseline + amplitude * shape(x - center, fwhm)
    return model


def classify_broadening(x, y, ambiguity=0.05) -> BroadeningClass:
    """Fit Gaussian and Lorentzian peaks (with baseline) and pick the better.

    Returns ``ambiguous`` when the residual sums of squares differ by less
    than ``ambiguity`` (relative to the larger).
    """
    from .fitting import DataSeries, least_squares, peak_initial_guess

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 15:
        raise InvalidParameterError("classification needs at least 15 points")
    data = DataSeries(x, y)
    amp, ctr, width, base = peak_initial_guess(x, y)
    # area guesses differ between the shapes for the same peak height
    area_g = amp * width * 1.0645
    area_l = amp * width * np.pi / 2.0
    bounds = {"fwhm": (0.0, np.inf)}
    fg = least_squares(_peak_model(gaussian_density), data,
                       {"amplitude": area_g, "center": ctr, "fwhm": width, "baseline": base},
                       bounds)
    fl = least_squares(_peak_model(lorentzian_density), data,
                       {"amplitude": area_l, "center": ctr, "fwhm": width, "baseline": base},
                       bounds)
    if not fg.converged and not fl.converged:
        raise ClassificationError("neither the Gaussian nor the Lorentzian fit converged")
    rg = fg.residual_norm if fg.converged else np.inf
    rl = fl.residual_norm if fl.converged else np.inf
    hi, lo = max(rg, rl), min(rg, rl)
    if np.isfinite(hi) and hi > 0 and (hi - lo) / hi < ambiguity:
        label = "ambiguous"
    else:
        label = "gaussian" if rg < rl else "lorentzian"
    return BroadeningClass(label, fg, fl)


def ple_spectrum(config: MapConfig, laser_sweep: Grid1D, quad_step=None):
    """Total emitted photon rate versus laser frequency (no spectral filter).

    The rate ``gamma*rho_ee`` is averaged over a Gaussian distribution of
    transition frequencies of FWHM ``inhomogeneous_fwhm`` by trapezoidal
    quadrature on a fine offset grid. Returns (laser GHz, rate 1/ns).
    """
    wl = laser_sweep.points if isinstance(laser_sweep, Grid1D) else np.asarray(laser_sweep, float)
    p = config.tls
    if config.inhomogeneous_fwhm == 0:
        rate = p.gamma * excited_population(p, ghz_to_angular(wl - config.center))
        return wl, rate
    g = config.inhomogeneous_fwhm
    if quad_step is None:
        lor = 2.0 * p.coherence_decay / (2.0 * np.pi)
        quad_step = min(g, lor) / 40.0
    half = 5.0 * g
    delta = np.arange(-half, half + 0.5 * quad_step, quad_step)
    weights = gaussian_density(delta, g) * quad_step
    weights[[0, -1]] *= 0.5
    rate = np.empty(wl.size)
    for k, w in enumerate(wl):
        pop = excited_population(p, ghz_to_angular(w - config.center - delta))
        rate[k] = p.gamma * np.dot(weights, pop)
    return wl, rate
