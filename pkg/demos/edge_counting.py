"""Counting edge channels against the Diophantine prediction.

The number of chiral branches on one edge inside gap r equals |t_r| from
r + 1 = q s_r + p t_r.  At flux 4/9 the ladder is no longer 1, 2, 3, ...
because p > 1 folds the sequence.
"""
from _common import run_config

_, s = run_config("chern")
print("gap  predicted  counted")
for gap, n in enumerate(s["edge_mode_count"]):
    print(f"{gap:>3}  {n!s:>9}  {s['edge_count_measured'].get(str(gap), '-'):>7}")
