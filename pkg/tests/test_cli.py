import csv
import json
import os

import pytest

from esp import cli

SMALL = {
    "dof-table": "lengths: [2, 4]\n  dimension: 2",
    "modes": "tx_length: 2\n  rx_length: 4\n  distance: 3\n  pitch: 0.5",
    "dsa-precoder": "rings: 1\n  n_modes: 3\n  restarts: 1\n  leakage_limit_db: 100",
    "sim-train": "n_layers: 1\n  n_atoms: 9\n  n_antennas: 4\n  max_iter: 20\n  stop_threshold: 0.5",
    "sim-doa": "n_layers: 1\n  n_atoms: 9\n  n_antennas: 4\n  max_iter: 20\n  stop_threshold: 0.5\n"
               "  snr_db: [0, 10]\n  trials: 5",
    "ris-pattern": "side: 4\n  pairs: 2\n  step_deg: 5",
    "scm-link": "n_ap: 8\n  n_cells: 4\n  iterations: 5\n  snr_max_db: 30",
}


def write_config(tmp_path, kind, params=None, seeds="[0, 1]", name="cfg.yaml", extra=""):
    body = SMALL[kind] if params is None else params
    text = (f"schema: 1\nkind: {kind}\nid: t-{kind}\nseeds: {seeds}\n"
            f"out: {tmp_path / 'out'}\n{extra}params:\n  {body}\n")
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("kind", cli.KINDS)
def test_every_kind_runs_and_is_deterministic(tmp_path, kind):
    cfg = write_config(tmp_path, kind)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([kind, "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main([kind, "--config", str(cfg), "--out", str(b)]) == 0
    files = sorted(os.listdir(a))
    assert "summary.json" in files and any(f.endswith(".csv") for f in files)
    assert files == sorted(os.listdir(b))
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["kind"] == kind and summary["seeds"] == [0, 1]
    for f in files:
        if f.endswith(".csv"):
            rows = read_csv(a / f)
            assert rows and rows[0]["version"] == cli.VERSION


def test_worker_count_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path, "scm-link", seeds="[0, 1, 2]")
    assert cli.main(["scm-link", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["scm-link", "--config", str(cfg), "--out", str(tmp_path / "b"),
                     "--workers", "2"]) == 0
    for f in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path, "ris-pattern")
    out = tmp_path / "o"
    assert cli.main(["ris-pattern", "--config", str(cfg), "--seed-override", "7",
                     "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["seeds"] == [7]
    assert {r["seed"] for r in read_csv(out / "ris_pattern.csv")} == {"7"}


def test_modes_table_header(tmp_path):
    cfg = write_config(tmp_path, "modes", seeds="[0]")
    out = tmp_path / "o"
    assert cli.main(["modes", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "modes.csv") as fh:
        assert fh.readline().strip() == "seed,index,singular_value,relative_db,version"


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: 1\nkind: modes\nparams: [unclosed\n")
    assert cli.main(["modes", "--config", str(bad)]) == cli.EXIT_PARSE
    assert "line" in capsys.readouterr().err


@pytest.mark.parametrize("params", [
    "tx_length: -1\n  rx_length: 4\n  distance: 3",
    "tx_length: 2\n  rx_length: 4",
    "tx_length: 2\n  rx_length: 4\n  distance: 3\n  colour: red",
    "tx_length: two\n  rx_length: 4\n  distance: 3",
])
def test_validation_errors_write_nothing(tmp_path, params):
    cfg = write_config(tmp_path, "modes", params)
    assert cli.main(["modes", "--config", str(cfg)]) == cli.EXIT_INVALID
    assert not (tmp_path / "out").exists()


def test_kind_mismatch_and_unknown_top_level(tmp_path):
    cfg = write_config(tmp_path, "modes")
    assert cli.main(["scm-link", "--config", str(cfg)]) == cli.EXIT_INVALID
    cfg = write_config(tmp_path, "modes", extra="colour: red\n", name="c2.yaml")
    assert cli.main(["modes", "--config", str(cfg)]) == cli.EXIT_INVALID


def test_missing_config_is_io_error(tmp_path):
    assert cli.main(["modes", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    cfg = write_config(tmp_path, "dof-table")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["dof-table", "--config", str(cfg), "--out", str(blocker / "sub")]) \
        == cli.EXIT_IO


def test_non_convergence_flagged(tmp_path):
    cfg = write_config(tmp_path, "dsa-precoder",
                       "rings: 1\n  n_modes: 3\n  restarts: 0\n  leakage_limit_db: -400",
                       seeds="[0]")
    out = tmp_path / "o"
    assert cli.main(["dsa-precoder", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_NOCONV
    assert json.loads((out / "summary.json").read_text())["converged"] is False


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert cli.VERSION in capsys.readouterr().out


def test_emit_results_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        cli.emit_results({}, tmp_path)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "f.txt"
    cli.atomic_write(p, "one")
    cli.atomic_write(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_exponent_floats_parse():
    doc = cli.parse_config("a: 28.0e9\nb: 1e-3\n")
    assert doc == {"a": 28.0e9, "b": 1e-3}


def test_shipped_scenarios_validate():
    here = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    for name in sorted(os.listdir(here)):
        scn = cli.load_scenario(os.path.join(here, name))
        assert scn.kind in cli.KINDS
