import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topoqed.lattice import Flux, LatticeSpec, build_real_space
from topoqed.spectrum import (
    ResolutionWarning,
    band_clusters,
    band_ldos,
    chern_numbers,
    count_edge_branches,
    cylinder_bands,
    diagonalize,
    dos,
    edge_crossings,
    gap_windows,
    ldos,
    localization_index,
    magnetic_bloch_matrix,
    torus_band_edges,
)


def coprime_fluxes(max_q=24):
    return st.integers(2, max_q).flatmap(
        lambda q: st.sampled_from([p for p in range(1, q) if math.gcd(p, q) == 1]).map(lambda p: Flux(p, q))
    )


def test_localization_index_extremes():
    lx = 6
    left = np.zeros(lx); left[0] = 1
    right = np.zeros(lx); right[-1] = 1
    assert localization_index(left, lx) == -1
    assert localization_index(right, lx) == 1
    assert localization_index(np.ones(lx), lx) == pytest.approx(0)
    full = np.zeros((lx, 4)); full[0] = 0.5
    assert localization_index(full.ravel(), lx, 4) == -1


def test_diagonalize_sorted_and_normalized():
    sol = diagonalize(build_real_space(LatticeSpec(6, 6, flux=Flux(1, 3))))
    assert np.all(np.diff(sol.energies) >= 0)
    assert np.allclose(np.linalg.norm(sol.states, axis=0), 1)
    assert sol.geometry == "cylinder"


def test_dense_limit_needs_iterative(monkeypatch):
    import topoqed.spectrum as spectrum

    monkeypatch.setattr(spectrum, "DENSE_LIMIT", 20)
    op = build_real_space(LatticeSpec(5, 6, flux=Flux(1, 5)))
    with pytest.raises(ValueError, match="dense limit"):
        diagonalize(op)
    part = diagonalize(op, iterative=True, n_eigs=6, target=-2.0)
    full = np.linalg.eigvalsh(op.toarray())
    nearest = full[np.argsort(np.abs(full + 2.0))[:6]]
    assert np.allclose(np.sort(part.energies.real), np.sort(nearest), atol=1e-9)


def test_lossy_diagonalization_is_complex():
    sol = diagonalize(build_real_space(LatticeSpec(4, 4, kappa=0.1)))
    assert np.allclose(sol.energies.imag, -0.05)


def test_dos_completeness_and_ldos_sum():
    spec = LatticeSpec(8, 8, flux=Flux(1, 4))
    sol = diagonalize(build_real_space(spec))
    grid = np.linspace(-5, 5, 4001)
    d = dos(sol.energies, grid, 0.1)
    assert np.trapezoid(d, grid) == pytest.approx(spec.n_sites, rel=0.01)
    total = sum(ldos(sol, i, grid, 0.1) for i in range(spec.n_sites))
    assert np.allclose(total, d, rtol=1e-10, atol=1e-12)


def test_resolution_warning():
    sol = diagonalize(build_real_space(LatticeSpec(6, 6)))
    with pytest.warns(ResolutionWarning):
        dos(sol.energies, [0.0], 1e-4)
    with pytest.raises(ValueError):
        dos(sol.energies, [0.0], 0.0)


def test_band_ldos_matches_real_space():
    spec = LatticeSpec(10, 12, flux=Flux(1, 5))
    band = cylinder_bands(spec)
    sol = diagonalize(build_real_space(spec))
    grid = np.linspace(-4, 4, 101)
    a = band_ldos(band, 0, grid, 0.2)
    b = ldos(sol, build_real_space(spec).site(0, 3), grid, 0.2)
    assert np.allclose(a, b, atol=1e-10)


def test_cylinder_bands_match_real_space():
    spec = LatticeSpec(9, 10, flux=Flux(1, 3))
    band = cylinder_bands(spec, keep_states=True)
    e_real = np.linalg.eigvalsh(build_real_space(spec).toarray())
    assert np.allclose(np.sort(band.energies.ravel()), e_real, atol=1e-10)
    p = band.profile(3, 2)
    assert np.isclose(abs(p[0]) ** 2, band.edge_amplitude[3, 2])


def test_cylinder_bands_energy_cap():
    spec = LatticeSpec(20, 8, flux=Flux(1, 5))
    capped = cylinder_bands(spec, 16, max_energy=-1.0)
    full = cylinder_bands(spec, 16)
    for i in range(16):
        e = capped.energies[i][np.isfinite(capped.energies[i])]
        ref = full.energies[i][full.energies[i] <= -1.0]
        assert np.allclose(e, ref)


@given(coprime_fluxes())
def test_diophantine_solution(flux):
    data = chern_numbers(flux)
    p, q = flux.p, flux.q
    for l, (s, t) in enumerate(zip(data.s, data.t)):
        if t is None:
            assert q % 2 == 0 and l + 1 == q // 2
            continue
        assert l + 1 == q * s + p * t
        assert abs(t) <= q / 2
    if q % 2:
        assert sum(data.chern) == 0


def test_chern_ladder_at_one_ninth():
    data = chern_numbers(Flux(1, 9))
    assert data.edge_mode_count == (1, 2, 3, 4, 4, 3, 2, 1)
    assert data.chern[0] == data.sign
    assert chern_numbers(Flux(4, 9)).edge_modes(0) == 2
    assert chern_numbers(Flux(5, 14)).edge_modes(0) == 3


def test_even_q_central_gap_is_ambiguous():
    data = chern_numbers(Flux(1, 12))
    assert data.t[5] is None
    with pytest.raises(ValueError, match="ambiguous"):
        data.edge_modes(5)
    assert data.to_dict()["edge_mode_count"][5] is None


@given(coprime_fluxes(12), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_magnetic_bloch_matrix_hermitian(flux, kx, ky):
    h = magnetic_bloch_matrix(flux, kx, ky)
    assert np.allclose(h, h.conj().T)


def test_torus_gaps_and_clusters():
    flux = Flux(1, 9)
    edges = torus_band_edges(flux)
    assert edges.shape == (9, 2)
    win = gap_windows(flux, 0.05)
    assert np.all(win[:, 0] < win[:, 1])
    e = np.linalg.eigvalsh(build_real_space(LatticeSpec(18, 18, flux=flux, boundary_x="periodic")).toarray())
    clusters = band_clusters(e, 9)
    assert all(c.size == 36 for c in clusters)
    with pytest.raises(ValueError):
        band_clusters(e[:-1], 9)


def test_left_branches_have_one_chirality():
    spec = LatticeSpec(60, 60, flux=Flux(1, 9))
    band = cylinder_bands(spec, 512, max_energy=0.0)
    win = gap_windows(spec.flux, 0.05)
    for lo, hi in win[:4]:
        for e in np.linspace(lo, hi, 5)[1:-1]:
            left = edge_crossings(band, e, "left")
            right = edge_crossings(band, e, "right")
            assert left and right
            assert all(c.slope < 0 for c in left)
            assert all(c.slope > 0 for c in right)


@pytest.mark.parametrize("gap,count", [(0, 1), (1, 2), (2, 3)])
def test_edge_branch_count_one_ninth(gap, count):
    band = cylinder_bands(LatticeSpec(60, 60, flux=Flux(1, 9)), 512, max_energy=0.0)
    for side in ("left", "right"):
        res = count_edge_branches(band, gap, side)
        assert res.count == count
        assert not res.diagnostics


def test_closed_window_is_an_error():
    band = cylinder_bands(LatticeSpec(30, 16, flux=Flux(1, 9)), max_energy=0.0)
    with pytest.raises(ValueError, match="closed"):
        count_edge_branches(band, 0, theta=5.0)
