"""Emitter-bath couplings and Markovian decay rates.

Coupling footprints live on a single lattice column.  In momentum space the
footprint is ``G(k) = Ly^{-1/2} sum_y g_y exp(-i k y)``; with the
``exp(-i k y)`` Bloch label this is exactly the factor multiplying
``psi(x_e)`` in the emitter-mode matrix element, so zeros of ``G`` decouple
the corresponding edge mode.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import voigt_profile

from .edge_model import EdgeModeModel, group_velocity
from .lattice import k_grid
from .spectrum import BandStructure, EigenSolution, _check_resolution, gaussian


class DivergenceWarning(UserWarning):
    """Emitter energy sits within the smoothing width of a channel onset."""


@dataclass(frozen=True)
class EmitterSpec:
    """Two-level emitter at ``omega_e`` coupled to sites ``(x, y)`` with complex ``g_y``."""

    omega_e: float
    couplings: tuple[tuple[tuple[int, int], complex], ...]
    gamma_star: float = 0.0

    def __post_init__(self):
        cpl = tuple(((int(s[0]), int(s[1])), complex(g)) for s, g in self.couplings)
        object.__setattr__(self, "couplings", cpl)
        if not cpl:
            raise ValueError("emitter needs at least one coupling site")
        sites = [s for s, _ in cpl]
        if len(set(sites)) != len(sites):
            raise ValueError("coupling sites must be distinct")
        if len({x for x, _ in sites}) != 1:
            raise ValueError("all coupling sites must lie on one column")
        if self.gamma_star < 0:
            raise ValueError("gamma_star must be >= 0")

    @classmethod
    def local(cls, omega_e: float, g: float, site: tuple[int, int] = (0, 0), gamma_star: float = 0.0):
        return cls(omega_e, ((site, g),), gamma_star)

    @classmethod
    def giant(cls, omega_e: float, amplitudes, x: int = 0, y0: int = 0, gamma_star: float = 0.0):
        """Consecutive sites ``(x, y0), (x, y0+1), ...`` with the given amplitudes."""
        return cls(omega_e, tuple(((x, y0 + i), a) for i, a in enumerate(amplitudes)), gamma_star)

    @property
    def g_tot(self) -> float:
        return math.sqrt(sum(abs(g) ** 2 for _, g in self.couplings))

    @property
    def coupled(self) -> bool:
        return self.g_tot > 0

    @property
    def column(self) -> int:
        return self.couplings[0][0][0]

    @property
    def ys(self) -> np.ndarray:
        return np.array([s[1] for s, _ in self.couplings])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([g for _, g in self.couplings], dtype=complex)

    def with_omega(self, omega_e: float) -> "EmitterSpec":
        return EmitterSpec(omega_e, self.couplings, self.gamma_star)

    def shifted(self, dy: int) -> "EmitterSpec":
        return EmitterSpec(self.omega_e, tuple(((x, y + dy), g) for (x, y), g in self.couplings),
                           self.gamma_star)

    def to_dict(self) -> dict:
        return {
            "omega_e": self.omega_e,
            "gamma_star": self.gamma_star,
            "couplings": [{"site": list(s), "g": [g.real, g.imag]} for s, g in self.couplings],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "EmitterSpec":
        cpl = []
        for c in d["couplings"]:
            g = c["g"]
            g = complex(g[0], g[1]) if isinstance(g, (list, tuple)) else complex(g)
            cpl.append((tuple(c["site"]), g))
        return cls(float(d["omega_e"]), tuple(cpl), float(d.get("gamma_star", 0.0)))


# --- golden rule ---------------------------------------------------------------

def _profile(delta, theta: float, kappa: float):
    if kappa > 0:
        return voigt_profile(delta, theta, kappa / 2)
    return gaussian(delta, theta)


def _overlaps_real_space(eig: EigenSolution, em: EmitterSpec) -> np.ndarray:
    op = eig.op
    rows = [op.site(x, y) for (x, y), _ in em.couplings]
    if min(rows) < 0:
        raise ValueError("emitter couples to a removed site")
    amp = em.amplitudes @ eig.states[rows, :]
    return np.abs(amp) ** 2


def momentum_coupling(em: EmitterSpec, ly: int, k=None) -> np.ndarray:
    """``G(k)`` on the ``ly``-point grid (default) or at the given momenta."""
    ks = k_grid(ly) if k is None else np.asarray(k, dtype=float)
    ph = np.exp(-1j * np.multiply.outer(ks, em.ys))
    return ph @ em.amplitudes / math.sqrt(ly)


def golden_rule_rate(
    bath: EigenSolution | BandStructure,
    em: EmitterSpec,
    theta: float,
    omegas=None,
    *,
    kappa: float = 0.0,
) -> np.ndarray | float:
    """Fermi golden-rule rate ``2 pi sum_B |<e|H_I|B>|^2 f(omega_e - E_B)``.

    ``f`` is a normalized Gaussian of width ``theta``; with ``kappa > 0`` it
    is convolved with the Lorentzian of a uniformly lossy bath (HWHM
    ``kappa/2``).  A ``BandStructure`` is treated as a continuum in ``k``:
    the sum over the ``Ly`` physical momenta is replaced by
    ``Ly / n_k`` times the sum over the sampled grid.
    ``omegas`` defaults to ``em.omega_e``; an array returns a rate curve.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    scalar = omegas is None or np.ndim(omegas) == 0
    om = np.atleast_1d(em.omega_e if omegas is None else omegas).astype(float)
    if isinstance(bath, BandStructure):
        ly = bath.spec.ly
        x = em.column
        w_x = bath.ldos_weights(x)
        gk = np.abs(momentum_coupling(em, ly, bath.k_grid)) ** 2
        weights = w_x * gk[:, None] * ly / len(bath.k_grid)
        energies = bath.energies
    else:
        weights = _overlaps_real_space(bath, em)
        energies = np.real(bath.energies)
    _check_resolution(energies, theta)
    ok = np.isfinite(energies)
    e = energies[ok]
    w = weights[ok]
    out = np.empty(om.size)
    for i in range(0, om.size, 64):
        chunk = om[i:i + 64]
        out[i:i + 64] = _profile(chunk[:, None] - e[None, :], theta, kappa) @ w
    out *= 2 * math.pi
    return float(out[0]) if scalar else out


# --- effective-model rates --------------------------------------------------------

@dataclass(frozen=True)
class ChannelRate:
    l: int
    gamma: float
    velocity: float
    k_e: float
    reliable: bool


def channel_rate(model: EdgeModeModel, l: int, omega_e: float, g: float, theta: float = 0.0) -> ChannelRate | None:
    """``Gamma_l = 2 g^2 / (lambda_l |v_l|)``; None when the channel is closed.

    ``lambda_l`` is evaluated at ``omega_e``.  Within ``theta`` of the channel
    onset the rate is flagged unreliable.
    """
    c = model.channels[l]
    v = group_velocity(model, l, omega_e)
    if v is None:
        return None
    lam = c.localization_length(omega_e)
    reliable = omega_e - c.omega_l > theta
    if not reliable:
        warnings.warn(f"omega_e within {theta} of channel {l} onset", DivergenceWarning, stacklevel=2)
    gamma = math.inf if v == 0 else 2 * g * g / (lam * abs(v))
    k_e = c.k_l + model.sign * math.sqrt((omega_e - c.omega_l) / c.a)
    return ChannelRate(l, gamma, v, k_e, reliable)


def model_rates(model: EdgeModeModel, omega_e: float, g: float, theta: float = 0.0) -> dict[int, ChannelRate]:
    out = {}
    for l in model.active(omega_e):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DivergenceWarning)
            r = channel_rate(model, l, omega_e, g, theta)
        if r is not None:
            out[l] = r
    return out


def model_total_rate(model: EdgeModeModel, omega_e: float, g: float) -> float:
    return sum(r.gamma for r in model_rates(model, omega_e, g).values())


def rate_curve_rows(omegas, golden, model: EdgeModeModel | None, g: float, theta: float = 0.0) -> list[dict]:
    """CSV rows ``omega_e, gamma_total, gamma_0, gamma_1, ...`` (model columns when given)."""
    nch = max(model.channels) + 1 if model and model.channels else 0
    rows = []
    for w, gt in zip(np.atleast_1d(omegas), np.atleast_1d(golden)):
        row = {"omega_e": float(w), "gamma_total": float(gt)}
        if model is not None:
            rates = model_rates(model, float(w), g, theta)
            for l in range(nch):
                row[f"gamma_{l}"] = rates[l].gamma if l in rates else 0.0
        rows.append(row)
    return rows


# --- giant atoms ------------------------------------------------------------------

def cancel_couplings(k_cancel, g: float = 1.0, *, x: int = 0, y0: int = 0) -> list[tuple[tuple[int, int], complex]]:
    """Footprint of ``N + 1`` consecutive sites whose ``G(k)`` vanishes at each given momentum.

    ``G(k)`` is proportional to ``prod_d (1 + exp(i (phi_d - k)))`` with
    ``phi_d = pi + k_d``; expanding the product gives site ``y0 + M`` the
    amplitude ``g * e_M(exp(i phi))`` (elementary symmetric polynomial).
    """
    ks = np.atleast_1d(np.asarray(k_cancel, dtype=float))
    if ks.size == 0:
        raise ValueError("need at least one momentum")
    wrapped = np.angle(np.exp(1j * ks))
    if np.min(np.abs(np.angle(np.exp(1j * (wrapped[:, None] - wrapped[None, :]))) + np.eye(ks.size))) < 1e-12:
        raise ValueError("cancellation momenta must be distinct")
    z = np.exp(1j * (math.pi + ks))
    # polynomial prod (1 + z_d t): coefficients are e_M(z)
    coef = np.array([1.0 + 0j])
    for zd in z:
        coef = np.concatenate([coef, [0]]) + np.concatenate([[0], zd * coef])
    return [((x, y0 + m), complex(g * c)) for m, c in enumerate(coef)]


def elementary_symmetric(values, m: int) -> complex:
    """``e_m`` by brute-force subset sums (reference implementation)."""
    return complex(sum(np.prod(c) for c in itertools.combinations(values, m))) if m else 1.0 + 0j


# --- pulse separation -------------------------------------------------------------

def distinguishability(model: EdgeModeModel, l: int, lp: int, omega_e: float, g: float) -> float:
    """``R = |v_l - v_l'| / (1/Gamma_l + 1/Gamma_l')``; zero for ``l == lp``."""
    if l == lp:
        return 0.0
    ra = channel_rate(model, l, omega_e, g)
    rb = channel_rate(model, lp, omega_e, g)
    if ra is None or rb is None:
        raise ValueError("both channels must be active at omega_e")
    return abs(ra.velocity - rb.velocity) / (1 / ra.gamma + 1 / rb.gamma)


def dispersion_broadening(sigma0: float, gamma_dis: float, t):
    """Wavepacket width ``sigma0 sqrt(1 + gamma^2 t^2 / sigma0^4)``."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    t = np.asarray(t, dtype=float)
    return sigma0 * np.sqrt(1 + gamma_dis**2 * t**2 / sigma0**4)


@dataclass(frozen=True)
class BroadeningEstimate:
    sigma0: float
    sigma_t: float
    gamma_dis: float
    negligible: bool


def pulse_broadening(model: EdgeModeModel, l: int, omega_e: float, g: float, t: float) -> BroadeningEstimate:
    """Dispersive spreading of channel ``l``'s pulse after time ``t``.

    The initial width is the emission length ``|v_l| / Gamma_l`` and the
    dispersion coefficient is the branch curvature ``2 a_l``.  The pulse is
    flagged negligible when ``gamma_dis^2 t^2 / sigma0^4 < 0.1``.
    """
    r = channel_rate(model, l, omega_e, g)
    if r is None:
        raise ValueError("channel inactive")
    sigma0 = abs(r.velocity) / r.gamma
    gdis = 2 * model.channels[l].a
    st = float(dispersion_broadening(sigma0, gdis, t))
    return BroadeningEstimate(sigma0, st, gdis, gdis**2 * t**2 / sigma0**4 < 0.1)
