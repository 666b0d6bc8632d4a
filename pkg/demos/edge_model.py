"""Quadratic edge dispersion at flux 1/19.

Each edge branch is fitted by omega = omega_l + a_l (k - k_l)^2 over the two
gaps above its Landau level.  The residual of the parabola is compared with a
straight-line fit over the same window; the ratio measures how much of the
band bending the quadratic model captures.
"""
from _common import run_config

_, s = run_config("fit_edge")
for l, c in s["channels"].items():
    print(f"channel {l}: a={c['a']:.3f}  k_l={c['k_l']:+.3f}  eps_lin/eps={c['eps_lin'] / c['eps']:.0f}"
          f"  lambda={c['lambda']:.2f}")
