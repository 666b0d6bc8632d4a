import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topoqed.lattice import (
    Flux,
    LatticeSpec,
    apply_disorder,
    build_harper_bloch,
    build_real_space,
    coordination,
    disorder_shifts,
    harper_tridiagonal,
    k_grid,
    magnetic_length,
    rect,
)

fluxes = st.sampled_from([Flux(0, 1), Flux(1, 3), Flux(1, 4), Flux(2, 5), Flux(1, 9), Flux(4, 9), Flux(5, 14)])


def test_flux_parse_forms():
    assert Flux.parse("1/9") == Flux(1, 9)
    assert Flux.parse(Fraction(2, 8)) == Flux(1, 4)
    assert Flux.parse("0") == Flux(0, 1)
    assert Flux(0, 5).q == 1
    assert Flux(1, 9).value == pytest.approx(1 / 9)


@pytest.mark.parametrize("bad", [(2, 4), (3, 2), (-1, 3), (1, 0)])
def test_flux_rejects_invalid(bad):
    with pytest.raises(ValueError):
        Flux(*bad)


def test_magnetic_length():
    assert magnetic_length(Flux(1, 9)) == pytest.approx(1 / math.sqrt(2 * math.pi / 9))
    assert magnetic_length(Flux()) == math.inf


def test_k_grid_is_periodic_axis_momenta():
    ks = k_grid(8)
    assert ks[0] == -math.pi and len(ks) == 8
    assert np.allclose(np.diff(ks), 2 * math.pi / 8)
    odd = k_grid(5)
    assert np.allclose(np.exp(5j * odd), 1)
    assert np.all((odd >= -math.pi) & (odd < math.pi))


def test_spec_validation():
    with pytest.raises(ValueError, match="multiple of q"):
        LatticeSpec(10, 10, flux=Flux(1, 3), boundary_x="periodic")
    with pytest.raises(ValueError):
        LatticeSpec(5, 5, boundary_y="twisted")
    with pytest.raises(ValueError):
        LatticeSpec(5, 5, kappa=np.zeros((4, 5)))
    with pytest.raises(ValueError):
        LatticeSpec(5, 5, defects=(rect((3, 6), (0, 0)),))
    with pytest.raises(ValueError):
        LatticeSpec(5, 5, sigma=-0.1)


def test_spec_dict_round_trip():
    spec = LatticeSpec(6, 7, flux="2/5", sigma=0.2, seed=3, kappa=0.05, defects=(rect((0, 1), (2, 3)),))
    again = LatticeSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


@given(fluxes, st.integers(2, 7), st.integers(2, 7), st.sampled_from(["open", "periodic"]))
def test_real_space_is_hermitian(flux, lx, ly, by):
    spec = LatticeSpec(lx, ly, flux=flux, boundary_y=by)
    h = build_real_space(spec)
    assert h.hermitian
    assert abs(h.matrix - h.matrix.conj().T).max() < 1e-14


def test_coordination_open_rectangle():
    spec = LatticeSpec(5, 6, flux=Flux(1, 5), boundary_y="open")
    c = coordination(build_real_space(spec)).reshape(5, 6)
    assert c[2, 2] == 4
    assert c[0, 3] == 3 and c[2, 0] == 3
    assert c[0, 0] == 2 and c[4, 5] == 2


def test_plaquette_phase_matches_flux():
    flux = Flux(2, 7)
    spec = LatticeSpec(6, 6, flux=flux, boundary_y="open")
    h = build_real_space(spec)
    m = h.matrix

    def hop(a, b):  # amplitude for a -> b
        return m[h.site(*b), h.site(*a)]

    for x, y in [(0, 0), (2, 3), (4, 1)]:
        loop = [(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1), (x, y)]
        prod = np.prod([hop(a, b) for a, b in zip(loop, loop[1:])])
        # counter-clockwise product of -J hops: J^4 exp(-2 pi i phi)
        assert np.isclose(prod, np.exp(-2j * np.pi * flux.value))


@given(fluxes, st.integers(2, 8), st.integers(3, 9))
def test_bloch_and_real_space_spectra_agree(flux, lx, ly):
    spec = LatticeSpec(lx, ly, flux=flux)
    e_real = np.linalg.eigvalsh(build_real_space(spec).toarray())
    e_bloch = np.concatenate([np.linalg.eigvalsh(build_harper_bloch(spec, k).toarray()) for k in k_grid(ly)])
    assert np.allclose(np.sort(e_real), np.sort(e_bloch), atol=1e-10)


def test_bloch_label_convention():
    """exp(-i k y) psi(x) with psi a Harper eigenvector is a real-space eigenstate."""
    spec = LatticeSpec(9, 12, flux=Flux(1, 3))
    h = build_real_space(spec).toarray()
    k = k_grid(12)[5]
    e, v = np.linalg.eigh(build_harper_bloch(spec, k).toarray())
    y = np.arange(12)
    state = np.outer(v[:, 2], np.exp(-1j * k * y)).ravel()
    assert np.allclose(h @ state, e[2] * state, atol=1e-12)


def test_harper_tridiagonal_matches_operator():
    spec = LatticeSpec(7, 4, flux=Flux(2, 7))
    d, off = harper_tridiagonal(spec, 0.3)
    dense = np.diag(d) + np.diag(off, 1) + np.diag(off, -1)
    assert np.allclose(dense, build_harper_bloch(spec, 0.3).toarray())


def test_bloch_rejects_dirty_lattice():
    with pytest.raises(ValueError):
        build_harper_bloch(LatticeSpec(4, 4, sigma=0.1), 0.0)
    with pytest.raises(ValueError):
        build_harper_bloch(LatticeSpec(4, 4, boundary_y="open"), 0.0)


def test_loss_enters_diagonal():
    spec = LatticeSpec(3, 3, kappa=0.2)
    h = build_real_space(spec)
    assert not h.hermitian
    assert np.allclose(h.matrix.diagonal(), -0.1j)


def test_defects_remove_sites():
    spec = LatticeSpec(6, 6, defects=(rect((0, 1), (2, 3)),), boundary_y="open")
    h = build_real_space(spec)
    assert h.dimension == 32
    assert h.index[0, 2] == -1
    with pytest.raises(KeyError):
        h.site(1, 3)
    grid = h.to_grid(np.ones(h.dimension))
    assert grid[0, 2] == 0 and grid[5, 5] == 1


def test_disconnecting_defect_warns():
    spec = LatticeSpec(3, 5, defects=(rect((0, 2), (2, 2)),), boundary_y="open")
    with pytest.warns(RuntimeWarning, match="disconnected"):
        h = build_real_space(spec)
    assert h.warnings


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 2.0))
def test_disorder_deterministic_and_bounded(seed, sigma):
    spec = LatticeSpec(4, 5, sigma=sigma, seed=seed)
    a = disorder_shifts(spec)
    assert np.array_equal(a, disorder_shifts(spec))
    assert np.all(np.abs(a) <= sigma)


def test_disorder_independent_of_defects():
    clean = LatticeSpec(5, 5, sigma=0.3, seed=7, boundary_y="open")
    holed = clean.with_(defects=(rect((0, 0), (1, 1)),))
    a = build_real_space(clean)
    b = build_real_space(holed)
    assert np.isclose(a.matrix[a.site(3, 3), a.site(3, 3)], b.matrix[b.site(3, 3), b.site(3, 3)])


def test_apply_disorder_matches_spec_disorder():
    base = LatticeSpec(4, 4, flux=Flux(1, 4))
    direct = build_real_space(base.with_(sigma=0.5, seed=11))
    added = apply_disorder(build_real_space(base), 0.5, 11)
    assert abs(direct.matrix - added.matrix).max() < 1e-15
