"""Eigensolutions, band structures, densities of states and Chern data."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .lattice import (
    OPEN,
    PERIODIC,
    BathOperator,
    Flux,
    LatticeSpec,
    harper_tridiagonal,
    k_grid,
)

DENSE_LIMIT = 20_000
ETA_THRESHOLD = 0.5

# Sign relating t_l differences to Chern numbers.  Calibrated once: with the
# e^{-i k y} Bloch label, left-edge modes below omega_a at phi = 1/9 run with
# d omega / d k < 0, and those bands are assigned C = -1.
CHERN_SIGN = -1


class ResolutionWarning(UserWarning):
    """Gaussian width below the mean level spacing."""


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Eigenpairs sorted by ascending real part; ``states[:, n]`` is unit-norm."""

    energies: np.ndarray
    states: np.ndarray
    geometry: str
    k_y: float | None = None
    op: BathOperator | None = None

    def __len__(self):
        return len(self.energies)

    def weights(self, site: int) -> np.ndarray:
        """``|<site|E_n>|^2`` for every eigenstate."""
        return np.abs(self.states[site]) ** 2


def geometry_of(spec: LatticeSpec) -> str:
    bx, by = spec.boundary_x, spec.boundary_y
    if bx == PERIODIC and by == PERIODIC:
        return "torus"
    if bx == OPEN and by == OPEN:
        return "open"
    return "cylinder"


def diagonalize(
    op: BathOperator,
    *,
    iterative: bool = False,
    n_eigs: int = 200,
    target: float | None = None,
) -> EigenSolution:
    """Eigen-decompose a bath operator.

    Dense solve below :data:`DENSE_LIMIT` sites; above it ``iterative=True``
    returns the ``n_eigs`` eigenpairs closest to ``target`` via ARPACK.
    Lossy (non-Hermitian) operators return complex energies.
    """
    n = op.dimension
    geom = geometry_of(op.spec)
    if n > DENSE_LIMIT and not iterative:
        raise ValueError(
            f"dimension {n} exceeds the dense limit {DENSE_LIMIT}; pass iterative=True"
        )
    if iterative and n > n_eigs + 1:
        sigma = 0.0 if target is None else target
        if op.hermitian:
            e, v = spla.eigsh(op.matrix, k=n_eigs, sigma=sigma, which="LM")
        else:
            e, v = spla.eigs(op.matrix, k=n_eigs, sigma=sigma, which="LM")
    elif op.hermitian:
        e, v = np.linalg.eigh(op.toarray())
    else:
        e, v = np.linalg.eig(op.toarray())
    order = np.argsort(e.real, kind="stable")
    e, v = e[order], v[:, order]
    v = v / np.linalg.norm(v, axis=0)
    return EigenSolution(e, v, geom, op=op)


def _column_weights(state: np.ndarray, lx: int, ly: int | None) -> np.ndarray:
    w = np.abs(np.asarray(state)) ** 2
    if ly is not None and w.size == lx * ly:
        w = w.reshape(lx, ly).sum(axis=1)
    if w.size != lx:
        raise ValueError(f"state of size {w.size} does not match lx={lx}")
    return w


def localization_index(state: np.ndarray, lx: int, ly: int | None = None) -> float:
    """Signed edge weight: -1 fully on column 0, +1 fully on column lx-1.

    ``state`` is either a Harper profile ``psi(x)`` (length ``lx``) or a
    full-lattice amplitude (length ``lx*ly``, column-major along y).
    """
    w = _column_weights(state, lx, ly)
    w = w / w.sum()
    if lx == 1:
        return 0.0
    x = np.arange(lx)
    return float(np.clip(np.dot(-1 + 2 * x / (lx - 1), w), -1.0, 1.0))


def _eta_matrix(states: np.ndarray) -> np.ndarray:
    """eta for every column of an ``(lx, n)`` block of normalized profiles."""
    lx = states.shape[0]
    if lx == 1:
        return np.zeros(states.shape[1])
    lever = -1 + 2 * np.arange(lx) / (lx - 1)
    return np.clip(lever @ (np.abs(states) ** 2), -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Cylinder spectrum resolved in ``k_y`` (Bloch label ``exp(-i k_y y)``).

    ``energies[i, n]`` and ``eta[i, n]`` are the n-th Harper eigenpair at
    ``k_grid[i]``; ``edge_amplitude[i, n] = |psi(0)|^2`` and
    ``far_amplitude[i, n] = |psi(lx-1)|^2``.  Full profiles are kept only when
    requested.
    """

    spec: LatticeSpec
    k_grid: np.ndarray
    energies: np.ndarray
    eta: np.ndarray
    edge_amplitude: np.ndarray
    far_amplitude: np.ndarray
    states: np.ndarray | None = None

    @property
    def lx(self) -> int:
        return self.spec.lx

    def profile(self, i: int, n: int) -> np.ndarray:
        """Harper eigenvector ``psi(x)`` at ``k_grid[i]``, band index ``n``."""
        if self.states is not None:
            return self.states[i][:, n]
        d, e = harper_tridiagonal(self.spec, self.k_grid[i])
        _, v = sla.eigh_tridiagonal(d, e, select="i", select_range=(n, n))
        return v[:, 0]

    def ldos_weights(self, x: int = 0) -> np.ndarray:
        if x == 0:
            return self.edge_amplitude
        if x == self.lx - 1:
            return self.far_amplitude
        if self.states is None:
            raise ValueError("full profiles were not stored")
        return np.abs(self.states[:, x, :]) ** 2


def cylinder_bands(
    spec: LatticeSpec,
    k_values: np.ndarray | int | None = None,
    *,
    keep_states: bool = False,
    max_energy: float | None = None,
    workers: int = 1,
) -> BandStructure:
    """Diagonalize the Harper chain at every ``k_y`` of a cylinder.

    ``k_values`` defaults to the ``ly`` momenta of the periodic axis; an
    integer requests that many evenly spaced momenta.  ``max_energy`` limits
    the solve to eigenvalues below it (faster; arrays padded with NaN).
    """
    if spec.boundary_y != PERIODIC:
        spec = spec.with_(boundary_y=PERIODIC)
    if k_values is None:
        ks = k_grid(spec.ly)
    elif np.ndim(k_values) == 0:
        ks = k_grid(int(k_values))
    else:
        ks = np.asarray(k_values, dtype=float)
    lx = spec.lx
    periodic_x = spec.boundary_x == PERIODIC

    def solve(k):
        d, e = harper_tridiagonal(spec, k)
        if periodic_x:
            h = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
            h = h.astype(complex)
            if lx > 1:
                h[0, -1] += -spec.j
                h[-1, 0] += -spec.j
            return np.linalg.eigh(h)
        if lx == 1:
            return d.copy(), np.ones((1, 1))
        try:
            if max_energy is not None:
                return sla.eigh_tridiagonal(d, e, select="v", select_range=(-np.inf, max_energy))
            return sla.eigh_tridiagonal(d, e)
        except np.linalg.LinAlgError:
            # MRRR occasionally fails on near-degenerate pairs; fall back to dense
            w, v = np.linalg.eigh(np.diag(d) + np.diag(e, 1) + np.diag(e, -1))
            if max_energy is not None:
                keep = w <= max_energy
                w, v = w[keep], v[:, keep]
            return w, v

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve, ks))
    else:
        results = [solve(k) for k in ks]

    width = max(len(r[0]) for r in results)
    nk = len(ks)
    energies = np.full((nk, width), np.nan)
    eta = np.full((nk, width), np.nan)
    edge = np.zeros((nk, width))
    far = np.zeros((nk, width))
    states = np.zeros((nk, lx, width), dtype=complex) if keep_states else None
    for i, (e, v) in enumerate(results):
        m = len(e)
        energies[i, :m] = e
        eta[i, :m] = _eta_matrix(v)
        edge[i, :m] = np.abs(v[0]) ** 2
        far[i, :m] = np.abs(v[-1]) ** 2
        if keep_states:
            states[i, :, :m] = v
    return BandStructure(spec, ks, energies, eta, edge, far, states)


def gaussian(x, theta: float):
    """Normalized Gaussian ``exp(-x^2 / 2 theta^2) / sqrt(2 pi theta^2)``."""
    return np.exp(-np.square(x) / (2 * theta**2)) / math.sqrt(2 * math.pi * theta**2)


def _check_resolution(energies: np.ndarray, theta: float):
    e = np.sort(np.real(energies[np.isfinite(energies)]))
    if e.size > 1:
        spacing = (e[-1] - e[0]) / (e.size - 1)
        if theta < spacing:
            warnings.warn(
                f"theta={theta:g} is below the mean level spacing {spacing:.3g}; "
                "the smoothed density resolves individual levels",
                ResolutionWarning,
                stacklevel=3,
            )


def smoothed_sum(energies, weights, e_grid, theta: float) -> np.ndarray:
    """``sum_n w_n f_theta(E - E_n)`` on ``e_grid`` (chunked to bound memory)."""
    e = np.real(np.asarray(energies)).ravel()
    w = np.broadcast_to(np.asarray(weights, dtype=float), np.shape(energies)).ravel()
    ok = np.isfinite(e)
    e, w = e[ok], w[ok]
    grid = np.atleast_1d(np.asarray(e_grid, dtype=float))
    out = np.zeros(grid.shape)
    step = max(1, 2_000_000 // max(e.size, 1))
    for s in range(0, grid.size, step):
        g = grid[s : s + step]
        out[s : s + step] = gaussian(g[:, None] - e[None, :], theta) @ w
    return out


def dos(energies, e_grid, theta: float) -> np.ndarray:
    """Gaussian-smoothed density of states."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    _check_resolution(np.asarray(energies), theta)
    return smoothed_sum(energies, 1.0, e_grid, theta)


def ldos(eig: EigenSolution, site: int, e_grid, theta: float) -> np.ndarray:
    """Gaussian-smoothed local density of states at operator row ``site``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    _check_resolution(eig.energies, theta)
    return smoothed_sum(eig.energies, eig.weights(site), e_grid, theta)


def band_ldos(band: BandStructure, x: int, e_grid, theta: float) -> np.ndarray:
    """LDoS on column ``x`` of a cylinder, per site (averaged over ``k_y``)."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    _check_resolution(band.energies, theta)
    return smoothed_sum(band.energies, band.ldos_weights(x), e_grid, theta) / len(band.k_grid)


def band_dos(band: BandStructure, e_grid, theta: float) -> np.ndarray:
    """Total DoS of the cylinder the band structure samples (all ``lx * nk`` states)."""
    _check_resolution(band.energies, theta)
    return smoothed_sum(band.energies, 1.0, e_grid, theta)


# --- torus bands -----------------------------------------------------------

def magnetic_bloch_matrix(flux: Flux, kx: float, ky: float, j: float = 1.0, omega_a: float = 0.0) -> np.ndarray:
    """``q x q`` Bloch Hamiltonian of the magnetic unit cell (torus bands)."""
    q, phi = flux.q, flux.value
    x = np.arange(q)
    h = np.diag(omega_a - 2 * j * np.cos(2 * np.pi * phi * x - ky)).astype(complex)
    for a in range(q):
        b = (a + 1) % q
        phase = np.exp(1j * kx * q) if b == 0 else 1.0
        h[b, a] += -j * phase
        h[a, b] += -j * np.conj(phase)
    return h


def torus_bands(flux: Flux, nkx: int = 16, nky: int = 64, j: float = 1.0, omega_a: float = 0.0) -> np.ndarray:
    """Band energies ``(q, nkx*nky)`` of the infinite torus on a momentum grid."""
    q = flux.q
    kxs = 2 * np.pi * np.arange(nkx) / (nkx * q)
    kys = k_grid(nky)
    out = np.empty((q, nkx * nky))
    i = 0
    for kx in kxs:
        for ky in kys:
            out[:, i] = np.linalg.eigvalsh(magnetic_bloch_matrix(flux, kx, ky, j, omega_a))
            i += 1
    return out


def torus_band_edges(flux: Flux, nkx: int = 16, nky: int = 64, j: float = 1.0, omega_a: float = 0.0) -> np.ndarray:
    """``(q, 2)`` array of [min, max] per torus band."""
    b = torus_bands(flux, nkx, nky, j, omega_a)
    return np.column_stack([b.min(axis=1), b.max(axis=1)])


def gap_windows(flux: Flux, theta: float = 0.0, *, j: float = 1.0, omega_a: float = 0.0, nkx: int = 16, nky: int = 64) -> np.ndarray:
    """``(q-1, 2)`` energy windows of the torus gaps, shrunk by ``theta`` per side.

    Gaps closed by the shrink come back with ``lo > hi``.
    """
    edges = torus_band_edges(flux, nkx, nky, j, omega_a)
    lo = edges[:-1, 1] + theta
    hi = edges[1:, 0] - theta
    return np.column_stack([lo, hi])


def band_clusters(energies: np.ndarray, q: int) -> list[np.ndarray]:
    """Split a sorted torus spectrum into ``q`` equal-count bands."""
    e = np.sort(np.real(energies))
    if e.size % q:
        raise ValueError("spectrum size is not a multiple of q")
    return np.split(e, q)


# --- topology ----------------------------------------------------------------

@dataclass(frozen=True)
class ChernData:
    """Diophantine solution ``l+1 = q s_l + p t_l`` per gap, Chern numbers per band.

    For even ``q`` the central gap has ``|t| = q/2`` and no unique solution;
    its ``s``/``t`` entries and the Chern numbers of the two bands touching
    there are ``None``.
    """

    flux: Flux
    s: tuple[int | None, ...]
    t: tuple[int | None, ...]
    chern: tuple[int | None, ...]
    sign: int = CHERN_SIGN

    @property
    def edge_mode_count(self) -> tuple[int | None, ...]:
        return tuple(None if t is None else abs(t) for t in self.t)

    def edge_modes(self, gap: int) -> int:
        """Edge modes per boundary in ``gap``; raises for the ambiguous gap."""
        t = self.t[gap]
        if t is None:
            raise ValueError(
                f"gap {gap} of flux {self.flux}: |t| = q/2 is ambiguous for even q"
            )
        return abs(t)

    def to_dict(self) -> dict:
        return {
            "flux": str(self.flux),
            "s": list(self.s),
            "t": list(self.t),
            "chern": list(self.chern),
            "edge_mode_count": list(self.edge_mode_count),
            "chern_sign_convention": self.sign,
        }


def chern_numbers(flux: Flux) -> ChernData:
    """Solve the gap Diophantine equation and difference it into band Chern numbers."""
    flux = Flux.parse(flux)
    p, q = flux.p, flux.q
    if q == 1:
        return ChernData(flux, (), (), (0,))
    pinv = pow(p, -1, q)
    ss, ts = [], []
    for l in range(q - 1):
        t = ((l + 1) * pinv) % q
        if 2 * t > q:
            t -= q
        if 2 * abs(t) == q:
            ss.append(None)
            ts.append(None)
            continue
        s, rem = divmod(l + 1 - p * t, q)
        assert rem == 0
        ss.append(s)
        ts.append(t)
    padded = [0] + ts + [0]
    chern = tuple(
        None if padded[i] is None or padded[i + 1] is None
        else CHERN_SIGN * (padded[i + 1] - padded[i])
        for i in range(q)
    )
    return ChernData(flux, tuple(ss), tuple(ts), chern)


@dataclass(frozen=True)
class EdgeCrossing:
    k: float
    energy: float
    slope: float
    eta: float


@dataclass(frozen=True)
class EdgeCount:
    count: int
    crossings: tuple[EdgeCrossing, ...] = field(default=())
    energy: float = math.nan
    window: tuple[float, float] = (math.nan, math.nan)
    diagnostics: tuple[str, ...] = ()


def edge_crossings(band: BandStructure, energy: float, side: str = "left", eta_thresh: float = ETA_THRESHOLD) -> list[EdgeCrossing]:
    """States on one edge whose energy crosses ``energy`` between adjacent momenta.

    The k-grid is treated as periodic.  Each crossing reports the discrete
    slope ``d omega / d k`` with the ``exp(-i k y)`` label.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    ks = band.k_grid
    nk = len(ks)
    out = []
    sgn = -1 if side == "left" else 1
    e, eta = band.energies, band.eta
    for i in range(nk):
        i2 = (i + 1) % nk
        dk = ks[i2] - ks[i]
        if i2 == 0:
            dk += 2 * np.pi
        a, b = e[i] - energy, e[i2] - energy
        hit = np.flatnonzero(np.isfinite(a) & np.isfinite(b) & (np.sign(a) != np.sign(b)))
        for n in hit:
            m = 0.5 * (eta[i, n] + eta[i2, n])
            if sgn * m > eta_thresh:
                frac = a[n] / (a[n] - b[n])
                out.append(
                    EdgeCrossing(
                        k=float(ks[i] + frac * dk),
                        energy=energy,
                        slope=float((e[i2, n] - e[i, n]) / dk),
                        eta=float(m),
                    )
                )
    return out


def count_edge_branches(
    band: BandStructure,
    gap_index: int,
    side: str = "left",
    eta_thresh: float = ETA_THRESHOLD,
    *,
    theta: float = 0.0,
    windows: np.ndarray | None = None,
) -> EdgeCount:
    """Number of edge branches on ``side`` crossing the mid-energy of a gap.

    Gap windows come from the torus spectrum of the same flux unless given.
    A diagnostic is attached when the shrunk window is narrower than the
    energy step of the sampled branches (branches merging with bulk levels).
    """
    spec = band.spec
    if windows is None:
        windows = gap_windows(spec.flux, theta, j=spec.j, omega_a=spec.omega_a)
    lo, hi = windows[gap_index]
    notes = []
    if not lo < hi:
        raise ValueError(f"gap {gap_index} is closed after shrinking by theta")
    mid = 0.5 * (lo + hi)
    cr = edge_crossings(band, mid, side, eta_thresh)
    if cr:
        signs = {np.sign(c.slope) for c in cr}
        if len(signs) > 1:
            notes.append("crossings with both chiralities on one edge")
        dk = 2 * np.pi / len(band.k_grid)
        if max(abs(c.slope) for c in cr) * dk > 0.5 * (hi - lo):
            notes.append("k-grid too coarse for the gap width; counts may merge with bulk")
    return EdgeCount(len(cr), tuple(cr), mid, (float(lo), float(hi)), tuple(notes))
