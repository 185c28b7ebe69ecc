import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bloch_ode_g2, bloch_ode_population, g2_closed_form
from resofluo import InvalidParameterError
from resofluo.spectral import Grid1D, estimate_fwhm, ghz_to_angular
from resofluo.tls import (
    TlsParams,
    coherent_fraction,
    emission_spectrum,
    excited_population,
    g2,
    g2_with_background,
    natural_linewidth,
    power_broadened_fwhm,
    steady_state,
)


@pytest.mark.parametrize("kw", [dict(gamma=0, rabi=1), dict(gamma=-1, rabi=1),
                                dict(gamma=1, rabi=-0.1), dict(gamma=1, rabi=1, dephasing=-1),
                                dict(gamma=np.nan, rabi=1)])
def test_params_validation(kw):
    with pytest.raises(InvalidParameterError):
        TlsParams(**kw)


def test_saturation_example():
    s = steady_state(TlsParams(1.5, 1.5))
    assert s.population == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(gamma=st.floats(0.1, 5), rabi=st.floats(0.0, 10), det=st.floats(-10, 10),
       deph=st.floats(0, 3))
def test_steady_state_matches_ode(gamma, rabi, det, deph):
    p = TlsParams(gamma, rabi, det, deph)
    s = steady_state(p)
    pop, coh2 = bloch_ode_population(gamma, rabi, det, deph, 60.0 / min(gamma, 0.5 * gamma + deph))
    assert 0 <= s.population <= 0.5 + 1e-12
    assert s.population == pytest.approx(pop, abs=1e-7)
    assert abs(s.coherence) ** 2 == pytest.approx(coh2, abs=1e-7)
    # density-matrix positivity
    assert abs(s.coherence) ** 2 <= s.population * (1 - s.population) + 1e-12


def test_excited_population_batched_matches_scalar():
    p = TlsParams(1.5, 0.8, 0.0, 0.2)
    d = np.linspace(-20, 20, 41)
    batched = excited_population(p, d)
    single = [steady_state(p.with_detuning(x)).population for x in d]
    np.testing.assert_allclose(batched, single, atol=1e-14)


def test_natural_linewidth():
    assert natural_linewidth(1.5) == pytest.approx(0.2387, rel=1e-3)
    with pytest.raises(InvalidParameterError):
        natural_linewidth(0)


@pytest.mark.parametrize("rabi", [0.15, 0.47, 1.5, 4.5])
def test_power_broadened_fwhm_matches_scan(rabi):
    p = TlsParams(1.5, rabi)
    nu = np.linspace(-5, 5, 40001)
    pop = excited_population(p, ghz_to_angular(nu))
    assert estimate_fwhm(nu, pop) == pytest.approx(power_broadened_fwhm(p), rel=1e-4)
    assert power_broadened_fwhm(p) == pytest.approx(np.sqrt(1.5**2 + 2 * rabi**2) / (2 * np.pi))


def test_coherent_fraction_limits():
    assert coherent_fraction(TlsParams(1.5, 1.5 / 50)) > 0.99
    assert coherent_fraction(TlsParams(1.5, 15.0)) < 0.01
    with pytest.raises(InvalidParameterError):
        coherent_fraction(TlsParams(1.5, 0.0))


@pytest.mark.parametrize("rabi,det,deph", [(0.47, 0.0, 0.0), (3.0, 2.0, 0.0), (1.0, -1.0, 0.5)])
def test_spectrum_total_is_scattered_rate(rabi, det, deph):
    p = TlsParams(1.5, rabi, det, deph)
    grid = Grid1D.centered(0.0, 60.0, 24001)
    s = emission_spectrum(p, grid)
    inc = np.trapezoid(s.incoherent, s.offsets)
    assert s.coherent_weight + inc == pytest.approx(s.total_rate, rel=5e-3)
    assert s.total_rate == pytest.approx(1.5 * steady_state(p).population, rel=1e-12)
    assert np.all(s.incoherent >= 0)


def test_undriven_spectrum_is_empty():
    s = emission_spectrum(TlsParams(1.5, 0.0), np.linspace(-1, 1, 11))
    assert s.total_rate == 0 and not np.any(s.incoherent)


def test_mollow_triplet_resonant():
    gamma = 1.5
    p = TlsParams(gamma, 5 * gamma)
    grid = Grid1D.centered(0.0, 6.0, 256)
    s = emission_spectrum(p, grid)
    y = s.incoherent
    peaks = [k for k in range(1, y.size - 1) if y[k] > y[k - 1] and y[k] >= y[k + 1]]
    found = sorted(s.offsets[peaks])
    side = 5 * gamma / (2 * np.pi)
    assert len(found) == 3
    for f, target in zip(found, (-side, 0.0, side)):
        assert abs(f - target) <= grid.step


def test_mollow_sidebands_detuned_generalised_rabi():
    gamma = 1.5
    p = TlsParams(gamma, 3 * gamma, 4 * gamma)
    grid = Grid1D.centered(0.0, 6.0, 256)
    s = emission_spectrum(p, grid)
    y = s.incoherent
    peaks = [k for k in range(1, y.size - 1) if y[k] > y[k - 1] and y[k] >= y[k + 1]]
    side = 5 * gamma / (2 * np.pi)
    outer = [s.offsets[peaks].min(), s.offsets[peaks].max()]
    assert abs(outer[0] + side) <= grid.step and abs(outer[1] - side) <= grid.step


def test_spectrum_symmetric_on_resonance():
    p = TlsParams(1.5, 2.0)
    s = emission_spectrum(p, Grid1D.centered(0.0, 5.0, 201))
    np.testing.assert_allclose(s.incoherent, s.incoherent[::-1], rtol=1e-9, atol=1e-14)


def test_g2_matches_closed_form_and_ode():
    tau = np.linspace(0, 10, 501)
    p = TlsParams(1.5, 0.47)
    g = g2(p, tau)
    np.testing.assert_allclose(g, g2_closed_form(1.5, 0.47, tau), atol=1e-9)
    np.testing.assert_allclose(g, bloch_ode_g2(1.5, 0.47, tau), atol=1e-8)


def test_g2_limits():
    p = TlsParams(1.5, 0.66, 0.4, 0.1)
    g = g2(p, np.array([0.0, 400.0]))
    assert abs(g[0]) < 1e-12
    assert g[1] == pytest.approx(1.0, abs=1e-6)


def test_g2_irregular_grid_matches_uniform():
    p = TlsParams(1.5, 0.47)
    t = np.array([0.0, 0.3, 1.7, 2.0, 9.5])
    np.testing.assert_allclose(g2(p, t), g2_closed_form(1.5, 0.47, t), atol=1e-9)


def test_g2_background():
    p = TlsParams(1.5, 0.47)
    rho = np.sqrt(0.78)
    g = g2_with_background(p, rho, np.array([0.0, 300.0]))
    assert g[0] == pytest.approx(0.22, abs=1e-12)
    assert g[1] == pytest.approx(1.0, abs=1e-6)
    for bad in (0.0, 1.2):
        with pytest.raises(InvalidParameterError):
            g2_with_background(p, bad, [0.0])


def test_g2_errors():
    with pytest.raises(InvalidParameterError):
        g2(TlsParams(1.5, 0.0), [0.0])
    with pytest.raises(InvalidParameterError):
        g2(TlsParams(1.5, 1.0), [-1.0])


@pytest.mark.parametrize("rabi", [0.05, 0.2, 0.375, 0.3749])
def test_g2_below_and_at_threshold_matches_ode(rabi):
    # overdamped and critically damped drives, where the closed form does not apply
    tau = np.linspace(0, 20, 201)
    np.testing.assert_allclose(g2(TlsParams(1.5, rabi), tau), bloch_ode_g2(1.5, rabi, tau),
                               atol=1e-8)
