import json
import textwrap

import pytest

from topoqed import cli
from topoqed.config import ConfigError, parse_config
from topoqed.io import read_csv, write_csv
from topoqed.plots import SchemaError, detect_kind, render_plot


def write(tmp_path, body, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body))
    return p


def run(tmp_path, experiment, cfg, *extra):
    out = tmp_path / "out"
    code = cli.main([experiment, "--config", str(cfg), "--out", str(out), "--threads", "1", *extra])
    return code, out


SMALL_DOS = """
    experiment = "dos"

    [lattice]
    lx = 8
    ly = 8
    flux = "1/4"

    [numerics]
    theta = 0.2
    omega_min = -4.0
    omega_max = 4.0
    n_omega = 41
"""


def test_parse_defaults():
    cfg = parse_config(textwrap.dedent(SMALL_DOS))
    assert cfg.experiment == "dos"
    assert cfg.lattice.flux.q == 4
    assert cfg.numerics.n_omega == 41
    assert cfg.emitter.g == 0.1


def test_unknown_key_reports_line():
    text = 'experiment = "dos"\n[lattice]\nlx = 4\nly = 4\nfluxx = "1/3"\n'
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == 5
    assert "lattice.fluxx" in str(err.value)


def test_type_errors():
    with pytest.raises(ConfigError, match="integer"):
        parse_config('experiment = "dos"\n[lattice]\nlx = 4.5\nly = 4\n')
    with pytest.raises(ConfigError, match="number"):
        parse_config('experiment = "dos"\n[lattice]\nlx = 4\nly = 4\n[numerics]\ntheta = "wide"\n')
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("experiment = \n")


def test_experiment_mismatch():
    with pytest.raises(ConfigError, match="not 'emit'"):
        parse_config(textwrap.dedent(SMALL_DOS), "emit")
    with pytest.raises(ConfigError, match="unknown experiment"):
        parse_config('experiment = "magic"\n[lattice]\nlx = 4\nly = 4\n')


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, 'experiment = "dos"\n[lattice]\nlx = 4\nly = 4\nbogus = 1\n')
    code, _ = run(tmp_path, "dos", cfg)
    assert code == cli.EXIT_CONFIG
    assert "line 5" in capsys.readouterr().err


def test_cli_dense_guard(tmp_path):
    cfg = write(tmp_path, """
        [lattice]
        lx = 150
        ly = 150
        flux = "1/5"
        boundary_x = "periodic"
    """)
    code, out = run(tmp_path, "spectrum", cfg, "--no-plots")
    assert code == cli.EXIT_GUARD
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == 3 and "--iterative" in man["error"]


def test_cli_dynamics_guard(tmp_path):
    cfg = write(tmp_path, """
        [lattice]
        lx = 10
        ly = 60000
        flux = "1/5"
        boundary_y = "open"
    """)
    code, _ = run(tmp_path, "emit", cfg, "--no-plots")
    assert code == cli.EXIT_GUARD


def test_cli_numeric_failure(tmp_path):
    # channel 1 has not opened yet at omega_e = -2.8
    cfg = write(tmp_path, """
        [lattice]
        lx = 20
        ly = 20
        flux = "1/9"
        boundary_y = "open"

        [emitter]
        omega_e = -2.8
        cancel = [1]

        [numerics]
        nk = 256
        t_final = 2.0
    """)
    code, out = run(tmp_path, "emit", cfg, "--no-plots")
    assert code == cli.EXIT_NUMERIC
    assert "not active" in json.loads((out / "manifest.json").read_text())["error"]


def test_cli_chern_four_ninths(tmp_path):
    cfg = write(tmp_path, """
        [lattice]
        lx = 60
        ly = 60
        flux = "4/9"

        [numerics]
        nk = 256
    """)
    code, out = run(tmp_path, "chern", cfg)
    assert code == cli.EXIT_OK
    data = json.loads((out / "chern.json").read_text())
    assert data["edge_mode_count"][0] == 2
    assert data["edge_count_measured"]["0"] == 2
    man = json.loads((out / "manifest.json").read_text())
    for key in ("config", "spec_hash", "conventions", "environment", "wall_time", "outputs", "warnings"):
        assert key in man
    assert man["conventions"]["cancellation_phase"] == "phi_d = pi + k_d"


def test_cli_outputs_are_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL_DOS)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["dos", "--config", str(cfg), "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["dos", "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    for name in ("dos.csv", "dos.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, cols = read_csv(a / "dos.csv")
    assert cols["dos"].size == 41


def test_cli_seed_override_changes_disorder(tmp_path):
    body = SMALL_DOS.replace('flux = "1/4"', 'flux = "1/4"\n    sigma = 0.5\n    seed = 3')
    cfg = write(tmp_path, body)
    outs = []
    for seed in ("3", "3", "4"):
        o = tmp_path / f"s{len(outs)}"
        assert cli.main(["dos", "--config", str(cfg), "--out", str(o), "--seed", seed, "--no-plots"]) == 0
        outs.append((o / "dos.csv").read_bytes())
    assert outs[0] == outs[1] != outs[2]


def test_plot_schema_detection(tmp_path):
    assert detect_kind(["omega", "dos"]) == "dos"
    assert detect_kind(["x", "y", "population"]) == "field"
    with pytest.raises(SchemaError):
        detect_kind(["apples", "pears"])
    bad = write_csv(tmp_path / "bad.csv", [{"apples": 1, "pears": 2}])
    with pytest.raises(SchemaError):
        render_plot(bad)


def test_empty_csv_plots_empty_axes(tmp_path):
    empty = write_csv(tmp_path / "dos.csv", [], ["omega", "dos"])
    with pytest.warns(RuntimeWarning, match="no data"):
        svg = render_plot(empty)
    assert svg.exists() and svg.suffix == ".svg"


def test_svg_is_deterministic(tmp_path):
    csv = write_csv(tmp_path / "ts.csv", [{"t": t, "emitter_population": 1 - t / 10, "norm": 1.0} for t in range(10)])
    a = render_plot(csv, tmp_path / "a.svg").read_bytes()
    b = render_plot(csv, tmp_path / "b.svg").read_bytes()
    assert a == b


@pytest.mark.parametrize("boundary_x", ["open", "periodic"])
def test_cli_dos_is_per_site(tmp_path, boundary_x):
    body = SMALL_DOS.replace("omega_min = -4.0", "omega_min = -5.5").replace("omega_max = 4.0", "omega_max = 5.5")
    body = body.replace("n_omega = 41", "n_omega = 401").replace('flux = "1/4"', f'flux = "1/4"\n    boundary_x = "{boundary_x}"')
    code, out = run(tmp_path, "dos", write(tmp_path, body), "--no-plots")
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["summary"]["integral"] == pytest.approx(1.0, rel=1e-3)
