"""Lineshape kernels, frequency grids and map convolutions.

Frequencies crossing the public boundary are ordinary frequencies in GHz.
Rates used by the Bloch-equation code are angular, in rad/ns; the two are
related by ``omega = 2*pi*nu`` and converted only through the helpers below.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import wofz

from . import GridMismatchError, InvalidParameterError, NoPeakError

TWO_PI = 2.0 * np.pi
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
# kernels are truncated at this many FWHM on each side, then renormalized
KERNEL_SPAN_FWHM = 8.0


def ghz_to_angular(nu):
    """GHz -> rad/ns."""
    return TWO_PI * nu


def angular_to_ghz(omega):
    """rad/ns -> GHz."""
    return omega / TWO_PI


def _check_width(name, value):
    if not np.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} must be > 0, got {value!r}")


def lorentzian_density(x, fwhm):
    """Unit-area Lorentzian with full width at half maximum ``fwhm``."""
    _check_width("fwhm", fwhm)
    x = np.asarray(x, dtype=float)
    return (2.0 / (np.pi * fwhm)) / (1.0 + (2.0 * x / fwhm) ** 2)


def gaussian_density(x, fwhm):
    """Unit-area Gaussian with full width at half maximum ``fwhm``."""
    _check_width("fwhm", fwhm)
    sigma = fwhm * FWHM_TO_SIGMA
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * np.sqrt(TWO_PI))


def voigt_density(x, l_fwhm, g_fwhm):
    """Convolution of a Lorentzian (``l_fwhm``) with a Gaussian (``g_fwhm``).

    Evaluated as Re w(z) / (sigma*sqrt(2*pi)) with w the Faddeeva function.
    Either width may be zero, in which case the pure profile of the other is
    returned.
    """
    if l_fwhm < 0 or g_fwhm < 0 or not (np.isfinite(l_fwhm) and np.isfinite(g_fwhm)):
        raise InvalidParameterError("voigt widths must be finite and >= 0")
    if l_fwhm == 0 and g_fwhm == 0:
        raise InvalidParameterError("voigt needs at least one non-zero width (use a delta kernel)")
    if g_fwhm == 0:
        return lorentzian_density(x, l_fwhm)
    if l_fwhm == 0:
        return gaussian_density(x, g_fwhm)
    sigma = g_fwhm * FWHM_TO_SIGMA
    z = (np.asarray(x, dtype=float) + 0.5j * l_fwhm) / (sigma * np.sqrt(2.0))
    return wofz(z).real / (sigma * np.sqrt(TWO_PI))


def voigt_fwhm_approx(l_fwhm, g_fwhm):
    """Olivero-Longbothum estimate of the Voigt FWHM (about 0.02 % accurate)."""
    return 0.5346 * l_fwhm + np.sqrt(0.2166 * l_fwhm**2 + g_fwhm**2)


@dataclass(frozen=True)
class LineShape:
    kind: Literal["delta", "lorentzian", "gaussian", "voigt"]
    l_fwhm: float = 0.0
    g_fwhm: float = 0.0

    def __post_init__(self):
        l, g = self.l_fwhm, self.g_fwhm
        ok = {
            "delta": l == 0 and g == 0,
            "lorentzian": l > 0 and g == 0,
            "gaussian": l == 0 and g > 0,
            "voigt": l > 0 and g > 0,
        }.get(self.kind)
        if ok is None:
            raise InvalidParameterError(f"unknown lineshape kind {self.kind!r}")
        if not ok:
            raise InvalidParameterError(
                f"{self.kind} lineshape inconsistent with widths l_fwhm={l}, g_fwhm={g}"
            )

    @classmethod
    def delta(cls):
        return cls("delta")

    @classmethod
    def lorentzian(cls, fwhm):
        return cls("lorentzian", l_fwhm=float(fwhm)) if fwhm > 0 else cls.delta()

    @classmethod
    def gaussian(cls, fwhm):
        return cls("gaussian", g_fwhm=float(fwhm)) if fwhm > 0 else cls.delta()

    def density(self, x):
        if self.kind == "delta":
            raise InvalidParameterError("a delta lineshape has no density")
        return voigt_density(x, self.l_fwhm, self.g_fwhm)

    def kernel(self, step):
        """Discrete kernel on offsets ``k*step``, truncated and summing to one.

        Returned length is odd; the centre tap is the zero offset.
        """
        if self.kind == "delta":
            return np.ones(1)
        half = int(np.floor(KERNEL_SPAN_FWHM * (self.l_fwhm + self.g_fwhm) / step))
        offsets = np.arange(-half, half + 1) * step
        k = self.density(offsets)
        return k / k.sum()


@dataclass(frozen=True)
class Grid1D:
    """Uniform axis ``start + i*step`` for ``i < count`` (GHz)."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.step)) or self.step <= 0:
            raise InvalidParameterError("grid step must be finite and > 0")
        if int(self.count) != self.count or self.count < 1:
            raise InvalidParameterError("grid count must be a positive integer")

    @classmethod
    def centered(cls, center, half_span, count):
        """``count`` points spanning ``center +/- half_span`` inclusive."""
        if count < 2:
            raise InvalidParameterError("centered grid needs count >= 2")
        step = 2.0 * half_span / (count - 1)
        return cls(center - half_span, step, int(count))

    @property
    def points(self):
        return self.start + self.step * np.arange(self.count)

    @property
    def stop(self):
        return self.start + self.step * (self.count - 1)

    def nearest_index(self, x):
        return int(np.rint((x - self.start) / self.step))


@dataclass(frozen=True, eq=False)
class Map2D:
    """Intensity over (laser frequency, photon frequency).

    ``values[i, j]`` is the spectral density at laser frequency
    ``laser_axis.points[i]`` and photon frequency ``photon_axis.points[j]``.
    """

    laser_axis: Grid1D
    photon_axis: Grid1D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.laser_axis.count, self.photon_axis.count):
            raise GridMismatchError(
                f"values shape {v.shape} does not match axes "
                f"({self.laser_axis.count}, {self.photon_axis.count})"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidParameterError("map values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def cell_area(self):
        return self.laser_axis.step * self.photon_axis.step

    def total(self):
        return float(self.values.sum() * self.cell_area)

    def with_values(self, values):
        return replace(self, values=values)


def _shift_accumulate(values, kernel, di, dj):
    """out[i, j] = sum_k kernel[k] * values[i - k*di, j - k*dj], zero outside."""
    n0, n1 = values.shape
    half = len(kernel) // 2
    out = np.zeros_like(values)
    for idx, w in enumerate(kernel):
        k = idx - half
        a, b = k * di, k * dj
        if abs(a) >= n0 or abs(b) >= n1:
            continue
        src = values[max(0, -a):n0 - max(0, a), max(0, -b):n1 - max(0, b)]
        out[max(0, a):n0 - max(0, -a), max(0, b):n1 - max(0, -b)] += w * src
    return out


def convolve_map(m: Map2D, kernel: LineShape, axis: str) -> Map2D:
    """Convolve a map with a lineshape along ``laser``, ``photon`` or ``diagonal``.

    The diagonal direction moves both frequencies together, i.e. it smears
    intensity along lines of constant ``photon - laser``; it requires equal
    steps on both axes. Outside the grid the map is taken as zero, so the
    total is conserved only when the kernel fits inside the grid margins.
    """
    if axis not in ("laser", "photon", "diagonal"):
        raise InvalidParameterError(f"axis must be laser, photon or diagonal, got {axis!r}")
    if kernel.kind == "delta":
        return m
    if axis == "laser":
        k, d = kernel.kernel(m.laser_axis.step), (1, 0)
    elif axis == "photon":
        k, d = kernel.kernel(m.photon_axis.step), (0, 1)
    else:
        if not np.isclose(m.laser_axis.step, m.photon_axis.step, rtol=1e-12, atol=0):
            raise GridMismatchError(
                "diagonal convolution needs equal laser and photon steps "
                f"({m.laser_axis.step} vs {m.photon_axis.step})"
            )
        k, d = kernel.kernel(m.laser_axis.step), (1, 1)
    out = _shift_accumulate(np.asarray(m.values), k, *d)
    # round-off can leave -1e-300 style values where the input was zero
    np.clip(out, 0.0, None, out=out)
    return m.with_values(out)


def estimate_fwhm(x, y):
    """FWHM of a sampled single-peaked curve by linear interpolation.

    Raises NoPeakError if the maximum sits on the boundary or the curve does
    not drop below half maximum on both sides.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 5:
        raise InvalidParameterError("estimate_fwhm needs matching arrays with >= 5 points")
    i = int(np.argmax(y))
    if i == 0 or i == y.size - 1:
        raise NoPeakError("maximum lies on the boundary")
    half = 0.5 * y[i]
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i + 1:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise NoPeakError("profile does not fall below half maximum on both sides")
    l0 = left[-1]
    r1 = i + 1 + right[0]
    xl = np.interp(half, [y[l0], y[l0 + 1]], [x[l0], x[l0 + 1]])
    # np.interp needs increasing abscissa, so flip the falling edge
    xr = np.interp(half, [y[r1], y[r1 - 1]], [x[r1], x[r1 - 1]])
    return float(xr - xl)
