"""SVG rendering of experiment CSV files.

Plots depend only on the CSV contents; SVG metadata is pinned so repeated
renders are byte-identical.
"""
from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_csv  # noqa: E402


class SchemaError(ValueError):
    """CSV columns do not match any known plot kind."""


SCHEMAS = {
    "bands": {"k", "band", "energy", "eta"},
    "eigen": {"index", "energy", "eta"},
    "dos": {"omega", "dos"},
    "ldos": {"omega", "ldos"},
    "rates": {"omega_e", "gamma_total"},
    "ensemble": {"omega_e", "mean", "std"},
    "loss": {"omega_e", "kappa", "gamma"},
    "edge": {"y", "population"},
    "momentum": {"k", "population"},
    "field": {"x", "y", "population"},
    "timeseries": {"t", "emitter_population", "norm"},
    "dispersion": {"channel", "k", "omega_exact", "omega_fit"},
}


def detect_kind(header: list[str]) -> str:
    cols = set(header)
    best = None
    for kind, need in SCHEMAS.items():
        if need <= cols and (best is None or len(need) > len(SCHEMAS[best])):
            best = kind
    if best is None:
        raise SchemaError(f"unrecognized columns {header}")
    return best


def _save(fig, out: Path):
    plt.rcParams["svg.hashsalt"] = "topoqed"
    fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def render_plot(csv_path: str | Path, out_path: str | Path | None = None, kind: str | None = None) -> Path:
    """Render one CSV file to SVG; the plot kind is inferred from its header."""
    csv_path = Path(csv_path)
    out = Path(out_path) if out_path else csv_path.with_suffix(".svg")
    header, d = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    n = len(next(iter(d.values()))) if d else 0
    if not header or n == 0:
        warnings.warn(f"{csv_path.name} holds no data; writing empty axes", RuntimeWarning, stacklevel=2)
        _save(fig, out)
        return out
    kind = kind or detect_kind(header)
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown plot kind {kind!r}")
    if not SCHEMAS[kind] <= set(header):
        raise SchemaError(f"{csv_path.name} lacks columns for {kind}")

    if kind in ("bands", "eigen"):
        x = d["k"] if kind == "bands" else d["index"]
        sc = ax.scatter(x, d["energy"], c=d["eta"], cmap="coolwarm", vmin=-1, vmax=1, s=2, lw=0)
        fig.colorbar(sc, ax=ax, label=r"$\eta$")
        ax.set_xlabel(r"$k_y$" if kind == "bands" else "index")
        ax.set_ylabel(r"$E/J$")
    elif kind in ("dos", "ldos"):
        ax.plot(d["omega"], d[kind], lw=1)
        ax.set_xlabel(r"$\omega/J$")
        ax.set_ylabel(kind.upper())
    elif kind == "rates":
        w = d["omega_e"]
        chans = sorted((c for c in header if c.startswith("gamma_") and c[6:].isdigit()), key=lambda c: int(c[6:]))
        if chans:
            ax.stackplot(w, *[d[c] for c in chans], labels=[f"$\\Gamma_{c[6:]}$" for c in chans], alpha=0.5)
        ax.plot(w, d["gamma_total"], "k", lw=1, label="golden rule")
        ax.set_xlabel(r"$\omega_e/J$")
        ax.set_ylabel(r"$\Gamma/J$")
        ax.legend(fontsize=7)
    elif kind == "ensemble":
        w, m, s = d["omega_e"], d["mean"], d["std"]
        ax.fill_between(w, m - s, m + s, alpha=0.3)
        ax.plot(w, m, lw=1)
        ax.set_xlabel(r"$\omega_e/J$")
        ax.set_ylabel(r"$\langle\Gamma\rangle/J$")
    elif kind == "loss":
        for kap in np.unique(d["kappa"]):
            sel = d["kappa"] == kap
            ax.plot(d["omega_e"][sel], d["gamma"][sel], lw=1, label=f"$\\kappa={kap:g}$")
        ax.set_xlabel(r"$\omega_e/J$")
        ax.set_ylabel(r"$\Gamma/J$")
        ax.legend(fontsize=7)
    elif kind == "edge":
        ax.plot(d["y"], d["population"], lw=1)
        ax.set_xlabel("y")
        ax.set_ylabel("edge population")
    elif kind == "momentum":
        for c in header:
            if c != "k":
                ax.plot(d["k"], d[c], lw=1, label=c)
        ax.set_xlabel(r"$k_y$")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    elif kind == "field":
        x, y, p = d["x"].astype(int), d["y"].astype(int), d["population"]
        grid = np.zeros((x.max() + 1, y.max() + 1))
        grid[x, y] = p
        im = ax.imshow(grid.T, origin="lower", aspect="auto", cmap="viridis")
        fig.colorbar(im, ax=ax, label=r"$|A|^2$")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    elif kind == "timeseries":
        ax.plot(d["t"], d["emitter_population"], lw=1, label=r"$|C_e|^2$")
        ax.plot(d["t"], d["norm"], lw=1, ls="--", label="norm")
        ax.set_xlabel(r"$tJ$")
        ax.legend(fontsize=7)
    elif kind == "dispersion":
        for ch in np.unique(d["channel"]):
            sel = d["channel"] == ch
            ax.plot(d["k"][sel], d["omega_exact"][sel], ".", ms=1)
            ax.plot(d["k"][sel], d["omega_fit"][sel], lw=0.8)
        ax.set_xlabel(r"$k_y$")
        ax.set_ylabel(r"$\omega/J$")
    _save(fig, out)
    return out


def render_plots(csv_paths, out_dir: str | Path | None = None) -> list[Path]:
    outs = []
    for p in csv_paths:
        p = Path(p)
        target = Path(out_dir) / p.with_suffix(".svg").name if out_dir else None
        outs.append(render_plot(p, target))
    return outs
