"""Command-line experiment runner.

    topoqed <experiment> --config FILE [--out DIR] [--threads N] [--seed S] [--iterative] [--force]

Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 resource guard.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import PLOTTABLE, RUNNERS, ResourceGuardError, RunContext
from .io import environment, spec_hash, write_json
from .lattice import RNG_ALGORITHM

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GUARD = 0, 1, 2, 3

log = logging.getLogger("topoqed")

CONVENTIONS = {
    "bloch_label": "exp(-i k y) psi(x)",
    "golden_rule_prefactor": "2*pi",
    "smoothing": "normalized gaussian exp(-x^2/2theta^2)/sqrt(2 pi theta^2)",
    "landau_coefficient": "4*pi*phi",
    "localization_length": "2/|psi(0)|^2",
    "cancellation_phase": "phi_d = pi + k_d",
    "rng": RNG_ALGORITHM,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topoqed", description="Emitters on Harper-Hofstadter lattice edges.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="TOML configuration file")
    p.add_argument("--out", help="output directory (overrides [output].dir)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, help="override lattice.seed")
    p.add_argument("--iterative", action="store_true", help="allow sparse eigensolvers above the dense limit")
    p.add_argument("--force", action="store_true", help="allow dynamics above the size guard")
    p.add_argument("--no-plots", action="store_true", help="skip SVG rendering")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.experiment)
        if args.seed is not None:
            cfg.lattice = cfg.lattice.with_(seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", "threads")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out, args.threads, args.iterative, args.force)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    status, error, summary = EXIT_OK, None, {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            summary = RUNNERS[cfg.experiment](cfg, ctx)
        except ResourceGuardError as exc:
            status, error = EXIT_GUARD, str(exc)
        except ConfigError as exc:
            status, error = EXIT_CONFIG, str(exc)
        except (ValueError, ArithmeticError, RuntimeError, KeyError, IndexError, MemoryError) as exc:
            status, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    warn_msgs = sorted({str(w.message) for w in caught})

    plots = []
    if status == EXIT_OK and not args.no_plots and "svg" in cfg.output.formats:
        from .plots import render_plot

        for name in list(ctx.outputs):
            if name in PLOTTABLE:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    plots.append(render_plot(out / name).name)

    resolved = cfg.resolved()
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "config": resolved,
        "spec_hash": spec_hash(resolved["lattice"]),
        "cli": {"threads": args.threads, "seed": args.seed, "iterative": args.iterative, "force": args.force},
        "conventions": CONVENTIONS,
        "outputs": ctx.outputs + plots,
        "summary": summary,
        "notes": ctx.notes,
        "warnings": warn_msgs,
        "status": status,
        "error": error,
        "environment": environment(),
        "started": started,
        "wall_time": time.perf_counter() - t0,
    }
    write_json(out / "manifest.json", manifest)
    if error:
        print(f"error: {error}", file=sys.stderr)
    else:
        log.info("wrote %s", ", ".join(manifest["outputs"]))
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
