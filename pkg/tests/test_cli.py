"""Command line surface: exit codes, files, determinism."""

import json

import numpy as np
import pytest

from cubegof import sampleio
from cubegof.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def cli_tables(tmp_path_factory):
    """A small pre-tabulated store the CLI commands can use read-only."""
    root = tmp_path_factory.mktemp("cli_tables")
    rc = run(["--tables", str(root), "--seed", "1", "tabulate",
              "--test", "ks", "--m", "1:30", "--trials", "1e5"])
    assert rc == 0
    # the pcs range must cover the Poisson windows probed while solving
    rc = run(["--tables", str(root), "--seed", "1", "tabulate",
              "--test", "pcs", "--m", "1:100", "--trials", "1e5"])
    assert rc == 0
    return root


def test_usage_errors_exit_1(capsys):
    assert run(["bogus-subcommand"]) == 1
    assert run(["discover", "--method", "nope", "--input", "x.csv"]) == 1
    capsys.readouterr()


def test_missing_table_exits_2(tmp_path, capsys):
    cube = tmp_path / "cube.csv"
    sampleio.write_points(cube, np.random.default_rng(0).random((10, 2)))
    rc = run(["--tables", str(tmp_path / "none"), "discover",
              "--method", "prod-p", "--test", "ks", "--input", str(cube)])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_discover_on_uniform_data(cli_tables, tmp_path, capsys):
    cube = tmp_path / "cube.csv"
    sampleio.write_points(cube, np.random.default_rng(1).random((25, 2)))
    rc = run(["--tables", str(cli_tables), "discover", "--method", "prod-p",
              "--test", "ks", "--input", str(cube)])
    out = capsys.readouterr().out
    assert rc == 0
    rows = out.strip().splitlines()
    header = rows[0].split(",")
    assert "p_final" in header and "p_axes" in header
    p_final = float(dict(zip(header, rows[1].split(",")))["p_final"])
    assert 0.0 <= p_final <= 1.0


def test_limit_empty_input_gives_counting_limit(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    rc = run(["--tables", str(tmp_path / "t"), "--format", "json", "limit",
              "--method", "pcs-sum", "--cl", "0.9", "--input", str(empty)])
    out = capsys.readouterr().out
    assert rc == 0
    rec = json.loads(out)
    assert rec["mu_lim"] == pytest.approx(2.302585, abs=1e-3)


def test_limit_volume_pcs(cli_tables, tmp_path, capsys):
    data = tmp_path / "d.csv"
    sampleio.write_points(data, np.random.default_rng(3).random((2, 2)))
    rc = run(["--tables", str(cli_tables), "--format", "json", "limit",
              "--method", "volume-pcs", "--cl", "0.9", "--input", str(data)])
    out = capsys.readouterr().out
    assert rc == 0
    rec = json.loads(out)
    assert rec["mu_lim"] > 2.3


def test_tabulate_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        rc = run(["--tables", str(root), "--seed", "7", "tabulate",
                  "--test", "pcs", "--m", "2:3", "--trials", "1e5"])
        assert rc == 0
    for name in ("pcs_m0000002.cgt", "pcs_m0000003.cgt", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_transform_model_file_and_volume(tmp_path, capsys):
    model = tmp_path / "model.txt"
    model.write_text("normal 0 1\nexponential 0.1\n")
    data = tmp_path / "raw.csv"
    sampleio.write_points(data, np.array([[0.0, np.log(2) / 0.1]]))
    rc = run(["--tables", str(tmp_path / "t"), "transform", "--model", str(model),
              "--volume", "--input", str(data)])
    assert rc == 0
    capsys.readouterr()
    cube = sampleio.read_points(tmp_path / "raw.cube.csv")
    np.testing.assert_allclose(cube, [[0.5, 0.5]], atol=1e-12)
    z = sampleio.read_points(tmp_path / "raw.volume.csv")
    assert z.shape == (1, 1)


def test_transform_hierarchical_builtin(tmp_path, capsys):
    data = tmp_path / "raw.csv"
    sampleio.write_points(data, np.array([[0.0, 0.0], [1.0, 1.0]]))
    rc = run(["--tables", str(tmp_path / "t"), "transform", "--hierarchical",
              "normal-chain", "--input", str(data)])
    assert rc == 0
    capsys.readouterr()
    cube = sampleio.read_points(tmp_path / "raw.cube.csv")
    np.testing.assert_allclose(cube[0], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(cube[1, 1], 0.5, atol=1e-12)


def test_study_config_roundtrip(tmp_path, capsys):
    cfg = tmp_path / "study.ini"
    cfg.write_text(
        "[tiny]\n"
        "kind = limit\n"
        "background = uniform\n"
        "n = 1\n"
        "mu_grid = 3\n"
        "trials = 20\n"
        "methods = poisson\n"
    )
    rc = run(["--tables", str(tmp_path / "t"), "--config", str(cfg),
              "--format", "json", "study"])
    out = capsys.readouterr().out
    assert rc == 0
    rows = [json.loads(line) for line in out.strip().splitlines()]
    assert rows[0]["section"] == "tiny"
    assert rows[0]["count"] == 20


@pytest.mark.slow
def test_calibrate_then_corrected_limit(cli_tables, tmp_path, capsys):
    rc = run(["--tables", str(cli_tables), "--seed", "1", "calibrate",
              "--test", "pcs", "--n", "2", "--trials", "1e4",
              "--mu-grid", "2,5,12,30,60"])
    assert rc == 0
    capsys.readouterr()
    data = tmp_path / "d.csv"
    sampleio.write_points(data, np.random.default_rng(4).random((8, 2)))
    rc = run(["--tables", str(cli_tables), "--build-missing", "--format", "json",
              "limit", "--method", "corrected-pcs", "--cl", "0.9",
              "--input", str(data)])
    out = capsys.readouterr().out
    assert rc == 0
    rec = json.loads(out)
    assert rec["mu_lim"] > 2.3
    assert len(rec["mu_axes"]) == 2


def test_study_discovery_section(store, tmp_path, capsys):
    cfg = tmp_path / "study.ini"
    cfg.write_text(
        "[mini-disc]\n"
        "kind = discovery\n"
        "background = uniform\n"
        "n = 2\n"
        "n_b = 20\n"
        "signal = gauss-cluster\n"
        "sigma = 0.05\n"
        "ns_grid = 0, 10\n"
        "trials = 25\n"
        "test = ks\n"
        "methods = prod-p, volume\n"
    )
    rc = run(["--tables", str(store.root), "--config", str(cfg), "--format",
              "json", "study", "--section", "mini-disc"])
    out = capsys.readouterr().out
    assert rc == 0
    rows = [json.loads(line) for line in out.strip().splitlines()]
    assert {r["value"] for r in rows} == {"p_prod-p", "p_volume"}
    assert all(r["count"] == 25 for r in rows)


def test_output_file_and_csv_format(cli_tables, tmp_path):
    data = tmp_path / "d.csv"
    sampleio.write_points(data, np.random.default_rng(3).random((8, 2)))
    out = tmp_path / "res.csv"
    rc = run(["--tables", str(cli_tables), "--output", str(out), "discover",
              "--method", "min-p", "--test", "ks", "--input", str(data)])
    assert rc == 0
    text = out.read_text()
    assert "p_final" in text.splitlines()[0]
