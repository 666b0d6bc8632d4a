"""Experiment configuration: strict TOML parsing into typed records."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .lattice import Flux, LatticeSpec

EXPERIMENTS = (
    "spectrum", "dos", "ldos", "chern", "fit-edge", "decay-rate", "emit",
    "timebins", "selectivity", "disorder-ensemble", "loss-scan",
)

LATTICE_KEYS = {"lx", "ly", "j", "flux", "boundary_x", "boundary_y", "omega_a", "sigma", "seed", "kappa", "defects"}
LATTICE_TYPES = {"lx": int, "ly": int, "seed": int, "j": float, "omega_a": float, "sigma": float, "kappa": float,
                 "boundary_x": str, "boundary_y": str}
EMITTER_KEYS = {"omega_e", "g", "x", "y", "gamma_star", "couplings", "cancel", "cancel_source"}
COUPLING_KEYS = {"site", "g"}


@dataclass
class Numerics:
    theta: float = 0.05
    tol: float = 1e-10
    t_final: float = 200.0
    dt_sample: float = 1.0
    nk: int = 1024
    omega_min: float = -4.5
    omega_max: float = 0.0
    n_omega: int = 200
    eta_thresh: float = 0.5
    ensemble: int = 100
    kappas: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2])
    site: list[int] = field(default_factory=lambda: [0, 0])
    snapshot_every: int = 0
    strip: int = 0
    n_gaps: int = 2
    max_channel: int = -1
    loss_dynamics: bool = False


@dataclass
class Output:
    dir: str = "out"
    formats: list[str] = field(default_factory=lambda: ["csv", "json", "svg"])


@dataclass
class EmitterConfig:
    omega_e: float = -3.0
    g: float = 0.1
    x: int = 0
    y: int | None = None
    gamma_star: float = 0.0
    couplings: list[dict] | None = None
    cancel: list[float] | str | None = None
    cancel_source: str = "model"


@dataclass
class ExperimentConfig:
    experiment: str
    lattice: LatticeSpec
    emitter: EmitterConfig
    numerics: Numerics
    output: Output
    source: str = ""

    def resolved(self) -> dict:
        return {
            "experiment": self.experiment,
            "lattice": self.lattice.to_dict(),
            "emitter": asdict(self.emitter),
            "numerics": asdict(self.numerics),
            "output": asdict(self.output),
        }


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source when known."""

    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        where = []
        if key:
            where.append(f"key '{key}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.key = key
        self.line = line


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _check_keys(table: dict, allowed: set[str], section: str, text: str):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"unknown key in [{section}]", f"{section}.{k}", _line_of(text, k))


def _typed(dc_cls, table: dict, section: str, text: str):
    fields = dc_cls.__dataclass_fields__
    _check_keys(table, set(fields), section, text)
    obj = dc_cls()
    for k, v in table.items():
        default = getattr(obj, k)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError("expected a boolean", f"{section}.{k}", _line_of(text, k))
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError("expected a number", f"{section}.{k}", _line_of(text, k))
            if isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float):
                raise ConfigError("expected an integer", f"{section}.{k}", _line_of(text, k))
        setattr(obj, k, v)
    return obj


def parse_config(text: str, experiment: str | None = None) -> ExperimentConfig:
    """Parse TOML ``text``; ``experiment`` (from the command line) overrides the file."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"TOML syntax error: {exc}", line=line) from exc
    _check_keys(data, {"experiment", "lattice", "emitter", "numerics", "output"}, "top level", text)
    name = experiment or data.get("experiment")
    if name is None:
        raise ConfigError("no experiment given", "experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}", "experiment", _line_of(text, "experiment"))
    if experiment and "experiment" in data and data["experiment"] != experiment:
        raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}", "experiment",
                          _line_of(text, "experiment"))

    lat = dict(data.get("lattice", {}))
    _check_keys(lat, LATTICE_KEYS, "lattice", text)
    for req in ("lx", "ly"):
        if req not in lat:
            raise ConfigError("missing required key", f"lattice.{req}")
    for k, v in lat.items():
        kind = LATTICE_TYPES.get(k)
        bad = (kind is int and (isinstance(v, bool) or not isinstance(v, int))
               or kind is float and (isinstance(v, bool) or not isinstance(v, (int, float)))
               or kind is str and not isinstance(v, str))
        if bad:
            name = {int: "an integer", float: "a number", str: "a string"}[kind]
            raise ConfigError(f"expected {name}", f"lattice.{k}", _line_of(text, k))
    try:
        if "flux" in lat:
            lat["flux"] = Flux.parse(str(lat["flux"]))
        if "defects" in lat:
            lat["defects"] = tuple(tuple(tuple(int(a) for a in ax) for ax in r) for r in lat["defects"])
        spec = LatticeSpec(**lat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid lattice: {exc}", "lattice") from exc

    em_table = dict(data.get("emitter", {}))
    _check_keys(em_table, EMITTER_KEYS, "emitter", text)
    for c in em_table.get("couplings") or []:
        _check_keys(c, COUPLING_KEYS, "emitter.couplings", text)
    emitter = _typed(EmitterConfig, {k: v for k, v in em_table.items() if k not in ("y", "couplings", "cancel")},
                     "emitter", text)
    emitter.y = em_table.get("y")
    emitter.couplings = em_table.get("couplings")
    emitter.cancel = em_table.get("cancel")
    if emitter.cancel_source not in ("model", "exact"):
        raise ConfigError("cancel_source must be 'model' or 'exact'", "emitter.cancel_source",
                          _line_of(text, "cancel_source"))
    numerics = _typed(Numerics, data.get("numerics", {}), "numerics", text)
    if numerics.theta <= 0:
        raise ConfigError("theta must be positive", "numerics.theta", _line_of(text, "theta"))
    output = _typed(Output, data.get("output", {}), "output", text)
    return ExperimentConfig(name, spec, emitter, numerics, output, text)


def load_config(path: str | Path, experiment: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text, experiment)
