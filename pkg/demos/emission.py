"""Chiral emission and time-bin structure at flux 1/9.

With omega_e in the second gap the emitter feeds two edge channels that move
at different speeds, so the emitted photon splits into two pulses.  On a
50x50 block the pulses wrap the corners before T = 200; the long strip keeps
both on one edge and the bins can be read off.
"""
import json

from _common import run_config

_, block = run_config("emit_two_mode")
print(f"50x50 with edge defect: peaks at y={block['peaks']}, emitter left with "
      f"{block['emitter_population_final']:.3f}, norm drift {block['norm_drift']:.1e}")

out, strip = run_config("timebins")
bins = json.loads((out / "timebins.json").read_text())
print(f"50x470 strip: peaks at y={strip['peaks']}")
for l in bins["channels"]:
    print(f"  channel {l}: |c|^2={bins['populations'][str(l)]:.3f}  bin={bins['windows'][str(l)]}")
print(f"  overlap={bins['overlap']}  contamination={bins['contamination']:.3f}  R*T={bins['r_times_t']}")
