import numpy as np
import pytest

from robustgne.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_NUMERIC, EXIT_OK, main
from robustgne.dynamics import read_trajectory_csv
from robustgne.polytope import loads_polytope
from robustgne.scenario import SWEEP_COLUMNS, read_sweep_csv, sweep_to_csv

from test_config import SMALL


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL + "verify: {lipschitz_samples: 100}\n")
    return p


def _kv(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def test_run_writes_artifacts_and_is_deterministic(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(small_cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(small_cfg), "--out", str(b)]) == EXIT_OK
    for name in ("trajectory.csv", "kkt.txt", "epsilon.txt", "kkt.csv", "epsilon.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header, rows = read_trajectory_csv((a / "trajectory.csv").read_text())
    assert header[0] == "t" and rows.shape[1] == len(header)
    assert float(_kv(a / "kkt.txt")["stationarity"]) < 1e-3
    assert float(_kv(a / "epsilon.txt")["empirical_eps"]) >= 0


def test_output_dir_from_environment(small_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("ROBUSTGNE_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(small_cfg), "--tol", "1e-3"]) == EXIT_OK
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_run_nonconvergence_exit_code(small_cfg, tmp_path):
    small_cfg.write_text(small_cfg.read_text() + "integrator: {max_time: 0.5}\n")
    assert main(["run", "--config", str(small_cfg), "--out", str(tmp_path / "o")]) == EXIT_NONCONVERGED
    assert (tmp_path / "o" / "trajectory.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(SMALL.replace("[[1, 2], [2, 3]]", "[[1, 2]]"))
    assert main(["validate", "--config", str(p)]) == EXIT_CONFIG
    assert "game.graph" in capsys.readouterr().err
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["validate", "--config", "no-such-scenario"]) == EXIT_CONFIG


def test_validate_builtin(capsys):
    assert main(["validate"]) == EXIT_OK
    assert "demo-demand-response" in capsys.readouterr().out


def test_sweep_rows_and_round_trip(small_cfg, tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(small_cfg), "--vertices", "4", "3", "6", "--out", str(out)]) == EXIT_OK
    text = (out / "sweep.csv").read_text()
    rows = read_sweep_csv(text)
    assert [r["v"] for r in rows] == [3, 4, 6]
    assert list(rows[0]) == SWEEP_COLUMNS
    assert all(r["status"] == "converged" for r in rows)
    assert sweep_to_csv(rows) == text
    assert "rank_correlation_delta_eps" in (out / "sweep_summary.txt").read_text()


def test_sweep_failure_recorded_in_row(small_cfg, tmp_path):
    small_cfg.write_text(SMALL.replace("budget: 2.0", "budget: -30.0")
                         + "integrator: {divergence_limit: 200}\n")
    out = tmp_path / "f"
    with pytest.warns(RuntimeWarning, match="Slater"):
        code = main(["sweep", "--config", str(small_cfg), "--vertices", "3", "4", "--out", str(out)])
    assert code == EXIT_NUMERIC
    rows = read_sweep_csv((out / "sweep.csv").read_text())
    assert [r["status"] for r in rows] == ["failed", "failed"]
    assert all("DivergenceError" in r["error"] for r in rows)


def test_run_numeric_failure_exit_code(small_cfg, tmp_path):
    small_cfg.write_text(SMALL.replace("budget: 2.0", "budget: -30.0")
                         + "integrator: {divergence_limit: 200}\n")
    with pytest.warns(RuntimeWarning):
        assert main(["run", "--config", str(small_cfg), "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_approx_square_and_metrics(tmp_path):
    assert main(["approx", "--vertices", "4", "--out", str(tmp_path)]) == EXIT_OK
    P = loads_polytope((tmp_path / "polytope.txt").read_text())
    assert np.allclose(P.vertices, [[5, 2], [2, 4], [-1, 2], [2, 0]])
    m = _kv(tmp_path / "metrics.txt")
    assert int(m["q"]) == 4 and float(m["hausdorff"]) > 0


def test_approx_refine_tenfold(tmp_path):
    assert main(["approx", "--vertices", "4", "--out", str(tmp_path / "sq")]) == EXIT_OK
    assert main(["approx", "--refine", "60", "--out", str(tmp_path / "r")]) == EXIT_OK
    h0 = float(_kv(tmp_path / "sq" / "metrics.txt")["hausdorff"])
    h1 = float(_kv(tmp_path / "r" / "metrics.txt")["hausdorff"])
    assert h1 * 10 <= h0


def test_approx_hexagon_unit_circle(tmp_path):
    assert main(["approx", "--center", "0", "0", "--semiaxes", "1", "1", "--vertices", "6",
                 "--out", str(tmp_path)]) == EXIT_OK
    P = loads_polytope((tmp_path / "polytope.txt").read_text())
    assert np.allclose(P.offsets, np.cos(np.pi / 6))


def test_approx_invalid_semiaxes(tmp_path, capsys):
    assert main(["approx", "--semiaxes", "3", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "semiaxes" in capsys.readouterr().err
