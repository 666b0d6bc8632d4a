"""Bulk versus boundary at flux 1/12.

On a torus the spectrum splits into q = 12 narrow Landau-like bands with
empty gaps between them.  Opening the x boundary (a cylinder) fills every gap
with states whose weight sits on one edge, which shows up as |eta| close to 1.
"""
import numpy as np

from _common import run_config
from topoqed.io import read_csv

torus_dir, torus = run_config("spectrum_torus")
cyl_dir, cyl = run_config("spectrum_cylinder")
print(f"torus:    {torus['n_states']} states, {torus['edge_states']} edge-localized")
print(f"cylinder: {cyl['n_states']} states, {cyl['edge_states']} edge-localized")

_, bands = read_csv(cyl_dir / "bands.csv")
left = bands["eta"] < -0.5
print(f"left-edge states span E in [{bands['energy'][left].min():.2f}, {bands['energy'][left].max():.2f}]")

dos_dir, _ = run_config("dos")
ldos_dir, ldos = run_config("ldos")
_, d = read_csv(dos_dir / "dos.csv")
_, l = read_csv(ldos_dir / "ldos.csv")
print(f"DoS integrates to {np.trapezoid(d['dos'], d['omega']):.3f} per site")
print(f"edge-site LDoS below E=0 carries weight {ldos['integral']:.3f}")
print("plots:", *(p.name for p in (torus_dir, cyl_dir, dos_dir, ldos_dir)))
