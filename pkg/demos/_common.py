"""Run a demo config through the command-line entry point and load its manifest."""
import json
import sys
from pathlib import Path

from topoqed import cli

HERE = Path(__file__).resolve().parent
OUT = HERE / "out"


def run_config(name: str, *extra: str) -> tuple[Path, dict]:
    cfg = HERE / "configs" / f"{name}.toml"
    experiment = next(line.split('"')[1] for line in cfg.read_text().splitlines() if line.startswith("experiment"))
    out = OUT / name
    code = cli.main([experiment, "--config", str(cfg), "--out", str(out), *extra])
    manifest = json.loads((out / "manifest.json").read_text())
    if code != 0:
        sys.exit(f"{name}: exit {code}: {manifest['error']}")
    return out, manifest["summary"]
