"""Harper-Hofstadter bath Hamiltonians.

Sites are indexed column-major along y: ``index = x * ly + y``, so the left
boundary column ``x = 0`` occupies the first ``ly`` entries.  Removed (defect)
sites are dropped from the operator; :class:`BathOperator` keeps the map
between lattice coordinates and operator rows.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

RNG_ALGORITHM = "numpy.random.PCG64"

OPEN = "open"
PERIODIC = "periodic"
_BOUNDARIES = (OPEN, PERIODIC)


@dataclass(frozen=True)
class Flux:
    """Rational flux ``p/q`` per plaquette."""

    p: int = 0
    q: int = 1

    def __post_init__(self):
        if self.q < 1 or self.p < 0:
            raise ValueError(f"invalid flux {self.p}/{self.q}")
        if self.p >= self.q and not (self.p == 0 and self.q == 1):
            raise ValueError(f"flux {self.p}/{self.q} must lie in [0, 1)")
        if self.p > 0 and math.gcd(self.p, self.q) != 1:
            raise ValueError(f"flux {self.p}/{self.q} is not in lowest terms")
        if self.p == 0 and self.q != 1:
            object.__setattr__(self, "q", 1)

    @classmethod
    def parse(cls, text: str | Fraction | "Flux") -> "Flux":
        """Build from ``"p/q"``, a :class:`~fractions.Fraction` or a Flux."""
        if isinstance(text, Flux):
            return text
        if isinstance(text, Fraction):
            return cls(text.numerator, text.denominator)
        s = str(text).strip()
        if "/" in s:
            p, q = s.split("/")
            return cls(int(p), int(q))
        if int(s) != 0:
            raise ValueError(f"flux must be written as 'p/q', got {text!r}")
        return cls(0, 1)

    @property
    def value(self) -> float:
        return self.p / self.q

    def __str__(self):
        return f"{self.p}/{self.q}"


def magnetic_length(flux: Flux) -> float:
    """Cyclotron radius ``1/sqrt(2 pi phi)`` in lattice constants (inf at zero flux)."""
    if flux.p == 0:
        return math.inf
    return 1.0 / math.sqrt(2 * math.pi * flux.value)


Rect = tuple[tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class LatticeSpec:
    """Full definition of the photonic bath.

    ``kappa`` is either a scalar (uniform loss) or an ``(lx, ly)`` array.
    ``defects`` holds inclusive rectangles ``((x0, x1), (y0, y1))`` of removed
    sites.
    """

    lx: int
    ly: int
    flux: Flux = Flux()
    j: float = 1.0
    boundary_x: str = OPEN
    boundary_y: str = PERIODIC
    omega_a: float = 0.0
    sigma: float = 0.0
    seed: int = 0
    kappa: float | np.ndarray = 0.0
    defects: tuple[Rect, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flux", Flux.parse(self.flux))
        object.__setattr__(
            self,
            "defects",
            tuple(((int(a), int(b)), (int(c), int(d))) for (a, b), (c, d) in self.defects),
        )
        if self.lx < 1 or self.ly < 1:
            raise ValueError("lattice dimensions must be positive")
        for b in (self.boundary_x, self.boundary_y):
            if b not in _BOUNDARIES:
                raise ValueError(f"unknown boundary condition {b!r}")
        if self.sigma < 0:
            raise ValueError("disorder strength must be non-negative")
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim not in (0, 2) or (k.ndim == 2 and k.shape != (self.lx, self.ly)):
            raise ValueError("kappa must be a scalar or an (lx, ly) array")
        if np.any(k < 0):
            raise ValueError("loss rates must be non-negative")
        for (x0, x1), (y0, y1) in self.defects:
            if not (0 <= x0 <= x1 < self.lx and 0 <= y0 <= y1 < self.ly):
                raise ValueError(f"defect {((x0, x1), (y0, y1))} lies outside the lattice")
        if (
            self.boundary_x == PERIODIC
            and self.flux.p > 0
            and self.lx % self.flux.q != 0
        ):
            raise ValueError(
                f"periodic x requires lx to be a multiple of q={self.flux.q} "
                f"(got lx={self.lx})"
            )

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def lossy(self) -> bool:
        return bool(np.any(np.asarray(self.kappa) > 0))

    def kappa_map(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.kappa, dtype=float), (self.lx, self.ly))

    def defect_mask(self) -> np.ndarray:
        """Boolean ``(lx, ly)`` array, True on removed sites."""
        mask = np.zeros((self.lx, self.ly), dtype=bool)
        for (x0, x1), (y0, y1) in self.defects:
            mask[x0 : x1 + 1, y0 : y1 + 1] = True
        return mask

    def with_(self, **changes) -> "LatticeSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        k = np.asarray(self.kappa)
        return {
            "lx": self.lx,
            "ly": self.ly,
            "j": self.j,
            "flux": str(self.flux),
            "boundary_x": self.boundary_x,
            "boundary_y": self.boundary_y,
            "omega_a": self.omega_a,
            "sigma": self.sigma,
            "seed": self.seed,
            "kappa": float(k) if k.ndim == 0 else k.tolist(),
            "defects": [[list(xr), list(yr)] for xr, yr in self.defects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        d = dict(d)
        kappa = d.pop("kappa", 0.0)
        kappa = float(kappa) if np.ndim(kappa) == 0 else np.asarray(kappa, dtype=float)
        defects = tuple(
            (tuple(xr), tuple(yr)) for xr, yr in d.pop("defects", [])
        )
        return cls(kappa=kappa, defects=defects, **d)


@dataclass(frozen=True, eq=False)
class BathOperator:
    """Sparse single-particle bath Hamiltonian on the active sites."""

    matrix: sp.csr_matrix
    spec: LatticeSpec
    sites: np.ndarray  # (n, 2) integer coordinates of active rows
    index: np.ndarray  # (lx, ly) -> row, -1 on removed sites
    hermitian: bool
    warnings: tuple[str, ...] = field(default=())

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def hermitian_flag(self) -> bool:
        return self.hermitian

    def __matmul__(self, v):
        return self.matrix @ v

    def site(self, x: int, y: int) -> int:
        """Operator row of lattice site ``(x, y)``."""
        i = int(self.index[x, y])
        if i < 0:
            raise KeyError(f"site {(x, y)} is a defect")
        return i

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_grid(self, amplitudes: np.ndarray, fill=0.0) -> np.ndarray:
        """Scatter a vector over active sites into an ``(lx, ly)`` array."""
        grid = np.full((self.spec.lx, self.spec.ly), fill, dtype=np.asarray(amplitudes).dtype)
        grid[self.sites[:, 0], self.sites[:, 1]] = amplitudes
        return grid


def _hopping_triplets(spec: LatticeSpec):
    lx, ly, J = spec.lx, spec.ly, spec.j
    phi = spec.flux.value
    xs, ys = np.meshgrid(np.arange(lx), np.arange(ly), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    src = xs * ly + ys
    rows, cols, vals = [], [], []

    # x hops: a^dag_{x+1,y} a_{x,y}
    ok = xs + 1 < lx if spec.boundary_x == OPEN else np.ones_like(xs, dtype=bool)
    if lx > 1:
        dst = ((xs + 1) % lx) * ly + ys
        rows.append(dst[ok]); cols.append(src[ok]); vals.append(np.full(ok.sum(), -J, complex))
    # y hops: e^{-2 pi i phi x} a^dag_{x,y+1} a_{x,y}
    ok = ys + 1 < ly if spec.boundary_y == OPEN else np.ones_like(ys, dtype=bool)
    if ly > 1:
        dst = xs * ly + (ys + 1) % ly
        ph = -J * np.exp(-2j * np.pi * phi * xs)
        rows.append(dst[ok]); cols.append(src[ok]); vals.append(ph[ok])
    if not rows:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, complex)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def disorder_shifts(spec: LatticeSpec, sigma: float | None = None, seed: int | None = None) -> np.ndarray:
    """Uniform(-sigma, sigma) on-site shifts on the full ``(lx, ly)`` grid.

    Drawn for every lattice site (defects included) so that a given seed maps
    to the same shift on a given site regardless of which sites are removed.
    """
    sigma = spec.sigma if sigma is None else sigma
    seed = spec.seed if seed is None else seed
    if sigma == 0:
        return np.zeros((spec.lx, spec.ly))
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-sigma, sigma, size=(spec.lx, spec.ly))


def build_real_space(spec: LatticeSpec) -> BathOperator:
    """Assemble the bath Hamiltonian in real space.

    Hops along x carry ``-J``; the hop from ``(x, y)`` to ``(x, y+1)`` carries
    ``-J exp(-2 pi i phi x)``.  The diagonal is
    ``omega_a + disorder - i kappa/2``.  Defect rows and columns are removed.
    """
    n = spec.n_sites
    r, c, v = _hopping_triplets(spec)
    hop = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    hop = hop + hop.conj().T

    diag = spec.omega_a + disorder_shifts(spec).ravel().astype(complex)
    lossy = spec.lossy
    if lossy:
        diag = diag - 0.5j * spec.kappa_map().ravel()
    h = (hop + sp.diags(diag)).tocsr()

    mask = spec.defect_mask()
    keep = np.flatnonzero(~mask.ravel())
    if keep.size != n:
        h = h[keep][:, keep].tocsr()
    index = np.full(n, -1, dtype=np.int64)
    index[keep] = np.arange(keep.size)
    index = index.reshape(spec.lx, spec.ly)
    sites = np.column_stack(np.unravel_index(keep, (spec.lx, spec.ly)))
    h.sort_indices()

    notes = []
    if spec.defects and keep.size:
        ncomp, _ = connected_components(abs(h) > 0, directed=False)
        if ncomp > 1:
            msg = f"defects split the lattice into {ncomp} disconnected pieces"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
    return BathOperator(h, spec, sites, index, hermitian=not lossy, warnings=tuple(notes))


def build_harper_bloch(spec: LatticeSpec, k_y: float) -> BathOperator:
    """Bloch-reduced operator at momentum ``k_y`` (dimension ``lx``).

    Bloch states are ``exp(-i k_y y) psi(x)``; with this label the reduced
    problem is ``-J[psi(x+1) + psi(x-1)] - 2J cos(2 pi phi x - k_y) psi(x)``.
    """
    if spec.boundary_y != PERIODIC:
        raise ValueError("Bloch reduction needs periodic boundary_y")
    if spec.sigma > 0 or spec.defects or spec.lossy:
        raise ValueError("Bloch reduction needs a clean, loss-free lattice")
    lx, J = spec.lx, spec.j
    x = np.arange(lx)
    diag = spec.omega_a - 2 * J * np.cos(2 * np.pi * spec.flux.value * x - k_y)
    off = np.full(lx - 1, -J)
    h = sp.diags([off, diag, off], [-1, 0, 1], format="lil", dtype=complex)
    if spec.boundary_x == PERIODIC and lx > 2:
        h[0, lx - 1] += -J
        h[lx - 1, 0] += -J
    elif spec.boundary_x == PERIODIC and lx == 2:
        h[0, 1] += -J
        h[1, 0] += -J
    h = h.tocsr()
    sites = np.column_stack([x, np.zeros(lx, dtype=np.int64)])
    index = x.reshape(lx, 1)
    return BathOperator(h, spec, sites, index, hermitian=True)


def harper_tridiagonal(spec: LatticeSpec, k_y: float) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the open-x Harper chain (for banded solvers)."""
    x = np.arange(spec.lx)
    d = spec.omega_a - 2 * spec.j * np.cos(2 * np.pi * spec.flux.value * x - k_y)
    return d, np.full(spec.lx - 1, -spec.j)


def apply_disorder(op: BathOperator, sigma: float, seed: int) -> BathOperator:
    """Add i.i.d. uniform(-sigma, sigma) on-site shifts, deterministic per seed."""
    if sigma < 0:
        raise ValueError("disorder strength must be non-negative")
    if sigma == 0:
        return op
    shifts = disorder_shifts(op.spec, sigma, seed)[op.sites[:, 0], op.sites[:, 1]]
    h = (op.matrix + sp.diags(shifts.astype(complex))).tocsr()
    return BathOperator(h, op.spec, op.sites, op.index, op.hermitian, op.warnings)


def k_grid(n: int) -> np.ndarray:
    """Allowed momenta ``2 pi m / n`` of a periodic axis, ordered from the lowest in ``[-pi, pi)``."""
    return 2 * np.pi * (np.arange(n) - n // 2) / n


def coordination(op: BathOperator) -> np.ndarray:
    """Number of hopping partners of each active site."""
    off = op.matrix - sp.diags(op.matrix.diagonal())
    off.eliminate_zeros()
    return np.diff(off.tocsr().indptr)


def rect(x: Sequence[int], y: Sequence[int]) -> Rect:
    return ((int(x[0]), int(x[1])), (int(y[0]), int(y[1])))
