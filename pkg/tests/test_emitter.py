import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topoqed.edge_model import build_edge_model, landau_level_energy
from topoqed.emitter import (
    DivergenceWarning,
    EmitterSpec,
    cancel_couplings,
    channel_rate,
    dispersion_broadening,
    distinguishability,
    elementary_symmetric,
    golden_rule_rate,
    model_rates,
    model_total_rate,
    momentum_coupling,
    pulse_broadening,
    rate_curve_rows,
)
from topoqed.lattice import Flux, LatticeSpec, build_real_space, k_grid
from topoqed.spectrum import cylinder_bands, diagonalize

amplitudes = st.lists(
    st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False), min_size=1, max_size=5
)


@pytest.fixture(scope="module")
def model_9():
    return build_edge_model(LatticeSpec(60, 60, flux=Flux(1, 9)), nk=1024)


def test_emitter_validation():
    with pytest.raises(ValueError, match="distinct"):
        EmitterSpec(-3, (((0, 1), 0.1), ((0, 1), 0.2)))
    with pytest.raises(ValueError, match="one column"):
        EmitterSpec(-3, (((0, 1), 0.1), ((1, 2), 0.2)))
    with pytest.raises(ValueError):
        EmitterSpec(-3, ())
    with pytest.raises(ValueError):
        EmitterSpec.local(-3, 0.1, gamma_star=-1)
    free = EmitterSpec.local(-3, 0.0)
    assert not free.coupled


def test_emitter_dict_round_trip():
    em = EmitterSpec.giant(-2.1, [0.1, 0.1j, -0.05 + 0.02j], x=0, y0=7, gamma_star=0.01)
    again = EmitterSpec.from_dict(em.to_dict())
    assert again == em
    assert em.shifted(3).ys.tolist() == [10, 11, 12]
    assert em.with_omega(-1.0).omega_e == -1.0


@given(amplitudes, st.integers(8, 64))
def test_momentum_coupling_parseval(amps, ly):
    em = EmitterSpec.giant(-2.0, amps)
    gk = momentum_coupling(em, ly)
    assert np.sum(np.abs(gk) ** 2) == pytest.approx(em.g_tot**2, rel=1e-12, abs=1e-14)


@given(st.lists(st.floats(-math.pi, math.pi), min_size=1, max_size=4, unique=True), st.floats(0.05, 1.0))
def test_cancellation_zeros(ks, g):
    ks = np.array(ks)
    gaps = np.abs(np.angle(np.exp(1j * (ks[:, None] - ks[None, :]))))
    if ks.size > 1 and gaps[~np.eye(ks.size, dtype=bool)].min() < 1e-3:
        return
    em = EmitterSpec(-2.0, tuple(cancel_couplings(ks, g, y0=4)))
    assert len(em.couplings) == ks.size + 1
    gk = momentum_coupling(em, 100, ks)
    assert np.max(np.abs(gk)) < 1e-10 * max(1.0, em.g_tot)


def test_cancel_coefficients_are_symmetric_polynomials():
    ks = [0.3, -1.2, 2.0]
    z = np.exp(1j * (np.pi + np.array(ks)))
    cpl = cancel_couplings(ks, 0.2)
    for m, (_, amp) in enumerate(cpl):
        assert amp == pytest.approx(0.2 * elementary_symmetric(z, m))


def test_two_site_closed_form():
    kc, g, ly = 0.7, 0.15, 40
    em = EmitterSpec(-2.0, tuple(cancel_couplings([kc], g)))
    phi0 = np.pi + kc
    ks = k_grid(ly)
    expect = 2 * g * g / ly * (1 + np.cos(ks - phi0))
    assert np.allclose(np.abs(momentum_coupling(em, ly)) ** 2, expect)


def test_cancel_rejects_duplicates():
    with pytest.raises(ValueError, match="distinct"):
        cancel_couplings([0.5, 0.5 + 2 * np.pi])
    with pytest.raises(ValueError):
        cancel_couplings([])


def test_golden_rule_band_matches_real_space():
    spec = LatticeSpec(12, 16, flux=Flux(1, 4))
    em = EmitterSpec.giant(-2.0, [0.1, 0.05j], y0=3)
    w = np.linspace(-3.5, -0.5, 31)
    a = golden_rule_rate(cylinder_bands(spec), em, 0.15, w)
    b = golden_rule_rate(diagonalize(build_real_space(spec)), em, 0.15, w)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-14)


@pytest.mark.parametrize("kappa", [0.0, 0.1])
def test_golden_rule_sum_rule(kappa):
    spec = LatticeSpec(20, 24, flux=Flux(1, 6))
    em = EmitterSpec.local(0.0, 0.1)
    w = np.linspace(-12, 12, 24001)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gam = golden_rule_rate(cylinder_bands(spec), em, 0.1, w, kappa=kappa)
    assert np.trapezoid(gam, w) == pytest.approx(2 * np.pi * em.g_tot**2, rel=0.01)


def test_golden_rule_scalar_and_guard():
    band = cylinder_bands(LatticeSpec(10, 10, flux=Flux(1, 5)))
    em = EmitterSpec.local(-2.5, 0.1)
    assert isinstance(golden_rule_rate(band, em, 0.2), float)
    with pytest.raises(ValueError):
        golden_rule_rate(band, em, 0.0)


def test_channel_rate_against_golden_rule(model_9):
    spec = LatticeSpec(60, 60, flux=Flux(1, 9))
    band = cylinder_bands(spec, 4096, max_energy=0.0)
    g = 0.1
    # gaps where every active channel lies inside its fit window
    for l in range(2):
        mid = 0.5 * (landau_level_energy(l, spec.flux) + landau_level_energy(l + 1, spec.flux))
        gr = golden_rule_rate(band, EmitterSpec.local(mid, g), 0.02)
        assert model_total_rate(model_9, mid, g) == pytest.approx(gr, rel=0.15)


def test_channel_rate_onset(model_9):
    c0 = model_9.channels[0]
    assert channel_rate(model_9, 0, c0.omega_l - 0.1, 0.1) is None
    with pytest.warns(DivergenceWarning):
        r = channel_rate(model_9, 0, c0.omega_l + 0.01, 0.1, theta=0.05)
    assert not r.reliable
    rates = model_rates(model_9, -2.16, 0.1)
    assert sorted(rates) == [0, 1]
    assert all(r.gamma > 0 and r.velocity < 0 for r in rates.values())


def test_rates_scale_as_g_squared(model_9):
    a = model_total_rate(model_9, -2.16, 0.1)
    b = model_total_rate(model_9, -2.16, 0.2)
    assert b == pytest.approx(4 * a)


def test_distinguishability(model_9):
    assert distinguishability(model_9, 0, 0, -2.16, 0.1) == 0.0
    r = distinguishability(model_9, 0, 1, -2.16, 0.1)
    assert r > 0
    assert distinguishability(model_9, 1, 0, -2.16, 0.1) == pytest.approx(r)
    with pytest.raises(ValueError):
        distinguishability(model_9, 0, 2, -2.16, 0.1)


@given(st.floats(0.5, 50), st.floats(0, 5), st.floats(0, 500))
def test_dispersion_broadening_closed_form(s0, gam, t):
    s = dispersion_broadening(s0, gam, t)
    assert s == pytest.approx(math.sqrt(s0**2 + (gam * t / s0) ** 2))
    assert s >= s0


def test_pulse_broadening_uses_curvature(model_9):
    est = pulse_broadening(model_9, 0, -2.16, 0.1, 200.0)
    assert est.gamma_dis == pytest.approx(2 * model_9.channels[0].a)
    assert est.sigma_t >= est.sigma0
    with pytest.raises(ValueError):
        dispersion_broadening(0.0, 1.0, 1.0)


def test_rate_curve_rows(model_9):
    w = np.array([-3.0, -2.16])
    rows = rate_curve_rows(w, [0.01, 0.02], model_9, 0.1)
    assert rows[0]["gamma_1"] == 0.0 and rows[1]["gamma_1"] > 0
    assert set(rows[0]) >= {"omega_e", "gamma_total", "gamma_0"}
