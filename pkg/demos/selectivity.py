"""Switching off one channel with a two-site giant atom.

Two couplings with a relative phase exp(i(pi + k)) make G(k) vanish at the
resonant momentum of channel 0.  The emitter then radiates into the other
open channel only; the momentum-space population at the cancelled k drops by
orders of magnitude.
"""
from _common import run_config

_, s = run_config("selectivity")
for k, r in s["suppression"].items():
    print(f"cancelled k={k}: local/giant population ratio {r:.0f}")
for c in s["couplings"]:
    print(f"  site {c['site']}: g={complex(*c['g']):.3f}")
