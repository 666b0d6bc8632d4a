"""Run every demo in turn."""
import runpy
from pathlib import Path

for name in ("spectrum", "edge_counting", "edge_model", "decay_ladder", "emission", "selectivity"):
    print(f"\n## {name}")
    runpy.run_path(str(Path(__file__).with_name(f"{name}.py")), run_name="__main__")
