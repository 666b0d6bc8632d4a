"""Quasi-quantized spontaneous-emission ladder.

A locally coupled emitter on the edge decays into every edge channel that is
open at its frequency, so the golden-rule rate steps up each time omega_e
crosses a Landau level.  Disorder blurs the steps without reordering them,
and uniform cavity loss lowers them.
"""
from _common import run_config

_, rates = run_config("decay_rate")
print("clean 1/25 ladder, step heights at successive levels:")
for lv, st in zip(rates["landau_levels"], rates["steps"]):
    print(f"  omega_l={lv:+.3f}  step={st:.5f}")

_, ens = run_config("disorder_ensemble")
print("disordered 1/12, plateau means:", [round(x, 5) for x in ens["plateau_means"]],
      "ordering preserved" if ens["ordering_preserved"] else "ordering broken")

_, loss = run_config("loss_scan")
for kappa, steps in loss["steps"].items():
    print(f"kappa={kappa}: steps {[round(x, 5) for x in steps]}")
