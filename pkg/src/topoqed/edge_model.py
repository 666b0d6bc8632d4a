"""Effective multi-mode waveguide model of the edge channels.

Each left-edge branch emerging from Landau level ``l`` is described by a
parabola ``omega_l + a_l (k - k_l)^2`` on the side ``k < k_l`` (negative group
velocity with the ``exp(-i k y)`` Bloch label), plus an energy-resolved
localization length ``lambda_l`` anchored to the edge weight,
``|psi(0)|^2 = 2 / lambda_l``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .lattice import Flux, LatticeSpec
from .spectrum import ETA_THRESHOLD, BandStructure, cylinder_bands


class FitWarning(UserWarning):
    """Fit is ill-conditioned or the profile is not exponential."""


def landau_level_energy(l: int, flux: Flux, j: float = 1.0, omega_a: float = 0.0) -> float:
    """Perturbative Landau-level energy, ``-4 + 4 pi phi (l+1/2) - (pi phi)^2 (l^2+l+1/2)`` in units of J.

    Loses accuracy as ``phi`` grows; no error is raised.
    """
    phi = Flux.parse(flux).value
    return omega_a + j * (
        -4 + 4 * math.pi * phi * (l + 0.5) - (math.pi * phi) ** 2 * (l * l + l + 0.5)
    )


def n_landau_levels(flux: Flux) -> int:
    """Number of lower bands treated as Landau levels, ``(q-1)//2``."""
    return (Flux.parse(flux).q - 1) // 2


# --- branch extraction -------------------------------------------------------

@dataclass
class Branch:
    """Samples of one edge branch; ``k`` is unwrapped to be contiguous."""

    channel: int
    k: np.ndarray
    omega: np.ndarray
    edge_weight: np.ndarray
    eta: np.ndarray
    side: str = "left"

    def __len__(self):
        return len(self.k)


def _side_sign(side: str) -> int:
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    return -1 if side == "left" else 1


def extract_branches(
    band: BandStructure,
    side: str = "left",
    *,
    eta_thresh: float = ETA_THRESHOLD,
    max_channel: int | None = None,
    e_max: float | None = None,
) -> dict[int, Branch]:
    """Group edge-localized samples into branches labelled by their Landau level.

    Samples are linked between neighbouring momenta (periodic grid, up to two
    missing points bridged) when their energies differ by less than a
    tolerance set by the Landau spacing; each connected chain is assigned to
    the level closest to its lowest energy.  Only energies between the lowest
    level and ``e_max`` (default: the highest treated level, below
    ``omega_a``) are considered.
    """
    sgn = _side_sign(side)
    spec = band.spec
    flux = spec.flux
    nll = n_landau_levels(flux)
    if flux.p == 0 or nll == 0:
        return {}
    if max_channel is None:
        max_channel = nll - 1
    levels = np.array([landau_level_energy(l, flux, spec.j, spec.omega_a) for l in range(nll)])
    spacing = 4 * math.pi * flux.value * spec.j
    if e_max is None:
        e_max = min(levels[-1], spec.omega_a)
    e_min = levels[0] - 0.5 * spacing

    ks = band.k_grid
    nk = len(ks)
    dk = 2 * math.pi / nk
    tol = min(0.45 * spacing, max(6.0 * spec.j * dk, 0.02 * spacing))

    E, eta, w = band.energies, band.eta, band.edge_amplitude
    ok = np.isfinite(E) & (sgn * eta > eta_thresh) & (E > e_min) & (E < e_max)
    nodes = [(i, n) for i in range(nk) for n in np.flatnonzero(ok[i])]
    if not nodes:
        return {}
    node_id = {nd: t for t, nd in enumerate(nodes)}
    parent = list(range(len(nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    per_k = [np.flatnonzero(ok[i]) for i in range(nk)]
    for i in range(nk):
        for n in per_k[i]:
            for step in (1, 2, 3):
                i2 = (i + step) % nk
                cand = per_k[i2]
                if cand.size == 0:
                    continue
                d = np.abs(E[i2, cand] - E[i, n])
                best = int(np.argmin(d))
                if d[best] < tol * step:
                    a, b = find(node_id[(i, n)]), find(node_id[(i2, int(cand[best]))])
                    parent[a] = b
                    break

    chains: dict[int, list[tuple[int, int]]] = {}
    for t, nd in enumerate(nodes):
        chains.setdefault(find(t), []).append(nd)

    grouped: dict[int, list[tuple[int, int]]] = {}
    for members in chains.values():
        if len(members) < 3:
            continue
        lowest = min(E[i, n] for i, n in members)
        l = int(np.argmin(np.abs(levels - lowest)))
        if abs(levels[l] - lowest) > 0.5 * spacing or l > max_channel:
            continue
        grouped.setdefault(l, []).extend(members)

    out = {}
    for l, members in sorted(grouped.items()):
        members.sort()
        idx = np.array([i for i, _ in members])
        kk = ks[idx].astype(float)
        # unwrap: cut the circle at its largest empty arc
        u = np.unique(kk)
        if u.size > 1:
            gaps = np.diff(np.concatenate([u, [u[0] + 2 * math.pi]]))
            cut = u[(int(np.argmax(gaps)) + 1) % u.size]
            kk = np.where(kk < cut, kk + 2 * math.pi, kk)
        order = np.argsort(kk)
        om = np.array([E[i, n] for i, n in members])[order]
        ew = np.array([w[i, n] for i, n in members])[order]
        et = np.array([eta[i, n] for i, n in members])[order]
        out[l] = Branch(l, kk[order], om, ew, et, side)
    return out


# --- fits --------------------------------------------------------------------

@dataclass(frozen=True)
class DispersionFit:
    a: float
    k0: float
    eps: float
    eps_lin: float
    n_samples: int
    window: tuple[float, float]
    omega0: float
    side: str = "left"
    well_conditioned: bool = True

    def __call__(self, k):
        return self.omega0 + self.a * (np.asarray(k) - self.k0) ** 2


def fit_dispersion(
    k: np.ndarray,
    omega: np.ndarray,
    omega0: float,
    side: str = "left",
    window: tuple[float, float] | None = None,
) -> DispersionFit:
    """Least-squares parabola with its vertex pinned at ``omega0``.

    Free parameters are the curvature ``a`` and vertex momentum ``k0``; the
    branch lies on ``k < k0`` for the left edge, ``k > k0`` for the right.
    ``eps`` / ``eps_lin`` are mean squared residuals of this fit and of an
    unconstrained straight line over the same samples.
    """
    sgn = _side_sign(side)
    k = np.asarray(k, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if window is not None:
        sel = (omega >= window[0]) & (omega <= window[1])
        k, omega = k[sel], omega[sel]
    else:
        window = (float(omega.min()), float(omega.max())) if omega.size else (math.nan, math.nan)
    if k.size < 8:
        raise ValueError(f"need at least 8 samples in the fit window, got {k.size}")
    span = float(k.max() - k.min())
    good = span >= 0.2
    if not good:
        warnings.warn(f"fit window spans only {span:.3f} rad", FitWarning, stacklevel=2)

    # sqrt(omega - omega0) = sqrt(a) * sgn * (k - k0) is linear in k
    above = omega > omega0
    if above.sum() >= 2:
        s = np.sqrt(omega[above] - omega0)
        slope, icpt = np.polyfit(k[above], s, 1)
        a0 = max(slope**2, 1e-6)
        k00 = -icpt / slope if slope != 0 else float(k.mean())
    else:
        a0, k00 = 0.5, float(k.max() if sgn < 0 else k.min())

    def resid(par):
        a, k0 = par
        return omega0 + a * (k - k0) ** 2 - omega

    sol = optimize.least_squares(
        resid, [a0, k00], bounds=([0, -np.inf], [np.inf, np.inf]),
        xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf",
    )
    a, k0 = (float(v) for v in sol.x)
    eps = float(np.mean(resid(sol.x) ** 2))
    lin = np.polyfit(k, omega, 1)
    eps_lin = float(np.mean((np.polyval(lin, k) - omega) ** 2))
    return DispersionFit(a, k0, eps, eps_lin, int(k.size), tuple(window), omega0, side, good)


@dataclass(frozen=True)
class LocalizationFit:
    """``length`` is anchored to the edge weight, ``|psi(0)|^2 = 2 / length``.

    ``slope_length`` and ``r2`` come from a straight-line fit of
    ``log |psi(x)|^2`` over the first columns.
    """

    length: float
    slope_length: float
    r2: float
    edge_weight: float
    exponential: bool


def fit_localization_length(profile: np.ndarray, ly: int | None = None) -> LocalizationFit:
    """Localization length of an edge state from its column weights.

    ``profile`` is a Harper amplitude ``psi(x)`` or a full ``(lx, ly)``
    amplitude (summed over y).  The regression uses the first
    ``max(3, 3 * lambda_hat)`` columns, with ``lambda_hat`` the anchored
    estimate; ``R^2 < 0.9`` is reported as non-exponential.
    """
    w = np.abs(np.asarray(profile)) ** 2
    if w.ndim == 2:
        w = w.sum(axis=1)
    elif ly is not None and w.size % ly == 0 and w.size > ly:
        w = w.reshape(-1, ly).sum(axis=1)
    edge = float(w[0])
    if edge <= 0:
        raise ValueError("profile has no weight on the edge column")
    anchored = 2.0 / edge
    n = int(min(w.size, max(3, math.ceil(3 * anchored))))
    x = np.arange(n)
    good = w[:n] > 0
    logw = np.log(w[:n][good])
    xs = x[good]
    if xs.size >= 2:
        slope, icpt = np.polyfit(xs, logw, 1)
        pred = slope * xs + icpt
        ss = np.sum((logw - logw.mean()) ** 2)
        r2 = 1.0 - np.sum((logw - pred) ** 2) / ss if ss > 0 else 1.0
        slope_len = -2.0 / slope if slope < 0 else math.inf
    else:
        r2, slope_len = 0.0, math.nan
    exp_ok = r2 >= 0.9
    if not exp_ok:
        warnings.warn(f"edge profile is not exponential (R^2={r2:.3f})", FitWarning, stacklevel=2)
    return LocalizationFit(anchored, float(slope_len), float(r2), edge, exp_ok)


@dataclass(frozen=True)
class BetaFit:
    beta: float
    intercept: float
    rms: float
    n: int


def _wrap(x):
    return (np.asarray(x) + math.pi) % (2 * math.pi) - math.pi


def fit_beta(omegas, ks, *, beta_range: tuple[float, float] = (-5.0, 5.0),
             intercept: bool = True) -> BetaFit:
    """Slope of ``k = beta * omega + c (mod 2 pi)``.

    Residuals are wrapped onto ``(-pi, pi]`` so points on either side of the
    branch cut are fitted as one line.  For a given slope the best offset is
    the circular mean of ``k - beta * omega``.  ``intercept=False`` pins
    ``c = 0``.
    """
    om = np.asarray(omegas, dtype=float)
    kk = np.asarray(ks, dtype=float)
    if om.size < 4:
        raise ValueError("need at least 4 fluxes to fit beta")

    def offset(b):
        if not intercept:
            return 0.0
        return float(np.angle(np.mean(np.exp(1j * (kk - b * om)))))

    def cost(b):
        return float(np.mean(_wrap(kk - b * om - offset(b)) ** 2))

    grid = np.linspace(*beta_range, 20001)
    costs = np.array([cost(b) for b in grid])
    b0 = grid[int(np.argmin(costs))]
    step = grid[1] - grid[0]
    res = optimize.minimize_scalar(cost, bounds=(b0 - step, b0 + step), method="bounded",
                                   options={"xatol": 1e-12})
    b = float(res.x)
    return BetaFit(b, offset(b), math.sqrt(cost(b)), int(om.size))


def fit_beta_models(models: list["EdgeModeModel"], **kw) -> dict[int, BetaFit]:
    """Per-channel ``fit_beta`` over a flux sweep; channels present in < 4 models are skipped."""
    pts: dict[int, list[tuple[float, float]]] = {}
    for m in models:
        for l, c in m.channels.items():
            pts.setdefault(l, []).append((c.omega_l, c.k_l))
    out = {}
    for l, v in sorted(pts.items()):
        if len(v) >= 4:
            om, kk = np.array(v).T
            out[l] = fit_beta(om, kk, **kw)
            for m in models:
                if l in m.channels:
                    m.channels[l].beta = out[l].beta
    return out


# --- model -------------------------------------------------------------------

@dataclass
class ChannelModel:
    l: int
    omega_l: float
    a: float
    k_l: float
    eps: float
    eps_lin: float
    window: tuple[float, float]
    n_samples: int
    lam_omega: list[float]
    lam_values: list[float]
    lam: float
    well_conditioned: bool = True
    beta: float | None = None

    def localization_length(self, omega: float) -> float:
        """Anchored localization length at energy ``omega`` (interpolated)."""
        return float(np.interp(omega, self.lam_omega, self.lam_values))

    def omega(self, k):
        return self.omega_l + self.a * (np.asarray(k) - self.k_l) ** 2


@dataclass
class EdgeModeModel:
    """Fitted channels of one edge; ``side`` fixes the branch half-parabola."""

    flux: Flux
    side: str
    channels: dict[int, ChannelModel]
    j: float = 1.0
    omega_a: float = 0.0
    lx: int = 0
    theta: float = 0.0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def sign(self) -> int:
        return _side_sign(self.side)

    def active(self, omega_e: float) -> list[int]:
        return [l for l, c in sorted(self.channels.items()) if omega_e > c.omega_l]

    def to_dict(self) -> dict:
        return {
            "flux": str(self.flux),
            "side": self.side,
            "j": self.j,
            "omega_a": self.omega_a,
            "lx": self.lx,
            "theta": self.theta,
            "diagnostics": list(self.diagnostics),
            "channels": [asdict(c) for _, c in sorted(self.channels.items())],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeModeModel":
        ch = {}
        for c in d["channels"]:
            c = dict(c)
            c["window"] = tuple(c["window"])
            ch[c["l"]] = ChannelModel(**c)
        return cls(Flux.parse(d["flux"]), d["side"], ch, d.get("j", 1.0), d.get("omega_a", 0.0),
                   d.get("lx", 0), d.get("theta", 0.0), list(d.get("diagnostics", [])))


def fit_window(branch: Branch, levels: np.ndarray, theta: float, e_max: float) -> tuple[float, float, np.ndarray]:
    """Samples at least ``theta`` away from every Landau level, above the branch's own."""
    om = branch.omega
    own = levels[branch.channel]
    sel = (om > own + theta) & (om < e_max)
    for lv in levels:
        sel &= np.abs(om - lv) >= theta
    return own + theta, e_max, sel


def build_edge_model(
    spec: LatticeSpec,
    *,
    nk: int = 1024,
    theta: float = 0.05,
    side: str = "left",
    max_channel: int | None = None,
    n_gaps: int | None = 2,
    band: BandStructure | None = None,
) -> EdgeModeModel:
    """Fit the effective edge model from the cylinder band structure of ``spec``.

    The fit window of channel ``l`` covers the ``n_gaps`` gaps above its own
    level (None: up to the highest treated level), minus a margin ``theta``
    around every Landau level.
    """
    flux = spec.flux
    nll = n_landau_levels(flux)
    if max_channel is None:
        max_channel = nll - 1
    levels = np.array([landau_level_energy(l, flux, spec.j, spec.omega_a) for l in range(nll)])
    if band is None:
        band = cylinder_bands(spec, nk, max_energy=spec.omega_a)
    branches = extract_branches(band, side, max_channel=max_channel)
    model = EdgeModeModel(flux, side, {}, spec.j, spec.omega_a, spec.lx, theta)
    e_top = min(levels[-1], spec.omega_a) if nll else spec.omega_a
    for l, br in branches.items():
        e_max = e_top
        if n_gaps is not None and l + n_gaps < nll:
            e_max = min(e_top, levels[l + n_gaps])
        lo, hi, sel = fit_window(br, levels, theta, e_max)
        if sel.sum() < 8:
            model.diagnostics.append(f"channel {l}: only {int(sel.sum())} samples in window")
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitWarning)
            fit = fit_dispersion(br.k[sel], br.omega[sel], levels[l], side)
        if not fit.well_conditioned:
            model.diagnostics.append(f"channel {l}: narrow fit window")
        order = np.argsort(br.omega)
        lam_om = br.omega[order]
        lam_v = 2.0 / br.edge_weight[order]
        mid = 0.5 * (lo + hi)
        model.channels[l] = ChannelModel(
            l=l,
            omega_l=float(levels[l]),
            a=fit.a,
            k_l=fit.k0,
            eps=fit.eps,
            eps_lin=fit.eps_lin,
            window=(float(lo), float(hi)),
            n_samples=fit.n_samples,
            lam_omega=lam_om.tolist(),
            lam_values=lam_v.tolist(),
            lam=float(np.interp(mid, lam_om, lam_v)),
            well_conditioned=fit.well_conditioned,
        )
    return model


def dispersion_table(model: EdgeModeModel, branches: dict[int, Branch]) -> list[dict]:
    """Rows ``(channel, k, omega_exact, omega_fit, in_window)`` for plotting or CSV export."""
    rows = []
    for l, c in sorted(model.channels.items()):
        br = branches.get(l)
        if br is None:
            continue
        fit = c.omega(br.k)
        inside = (br.omega >= c.window[0]) & (br.omega <= c.window[1])
        for kk, oe, of, w in zip(br.k, br.omega, fit, inside):
            rows.append({"channel": l, "k": float(kk), "omega_exact": float(oe),
                         "omega_fit": float(of), "in_window": bool(w)})
    return rows


def resonant_momentum(model: EdgeModeModel, l: int, omega_e: float) -> float | None:
    """Momentum where channel ``l`` is resonant with ``omega_e``; None if inactive."""
    c = model.channels[l]
    if omega_e < c.omega_l:
        return None
    return c.k_l + model.sign * math.sqrt((omega_e - c.omega_l) / c.a)


def group_velocity(model: EdgeModeModel, l: int, omega_e: float) -> float | None:
    """``d omega / d k`` of channel ``l`` at ``omega_e`` (negative on the left edge)."""
    k = resonant_momentum(model, l, omega_e)
    if k is None:
        return None
    c = model.channels[l]
    return 2 * c.a * (k - c.k_l)


def real_space_velocity(model: EdgeModeModel, l: int, omega_e: float) -> float | None:
    """Velocity along +y of a wavepacket in channel ``l``.

    With the ``exp(-i k y)`` label a packet moves at ``-d omega/d k``.
    """
    v = group_velocity(model, l, omega_e)
    return None if v is None else -v
