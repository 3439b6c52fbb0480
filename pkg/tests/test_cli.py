import json

import numpy as np
import pytest

from cavi_mf import jsonio
from cavi_mf.cli import RunConfig, main, read_regression_csv
from cavi_mf.errors import ParseError

two_by_two = {
    "target": {"type": "quadratic", "A": [[2.0, 1.0], [1.0, 2.0]], "m": [0.0, 0.0]},
    "backend": {"type": "grid", "n_nodes": 1024},
    "schedule": {"mode": "sequential", "sweeps": 100, "tol": 1e-8},
    "init": {"kind": "narrow", "point": [1.0, 1.0]},
}
coupled3 = {
    "target": {"type": "quadratic", "A": (np.eye(3) + 0.6 * (np.ones((3, 3)) - np.eye(3))).tolist(),
               "m": [0.0, 0.0, 0.0]},
    "backend": {"type": "grid", "n_nodes": 512},
    "schedule": {"mode": "parallel", "sweeps": 100, "tol": 1e-8},
    "init": {"kind": "gaussian", "means": [1.0, 1.0, 1.0], "variances": [1.0, 1.0, 1.0]},
}


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def synthetic_csv(path, m=50, k=4, seed=0, sigma=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, k))
    y = X @ rng.normal(size=k) + sigma * rng.normal(size=m)
    header = ",".join(["y"] + [f"x{j}" for j in range(k)])
    np.savetxt(path, np.column_stack([y, X]), delimiter=",", header=header, comments="", fmt="%.17g")
    return y, X


@pytest.fixture(scope="module")
def grid_report(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["run", "--config", write_config(d, two_by_two), "--out", str(d / "out")]) == 0
    return d / "out" / "report.json"


@pytest.fixture(scope="module")
def gaussian_report(tmp_path_factory):
    d = tmp_path_factory.mktemp("grun")
    cfg = dict(two_by_two, backend={"type": "gaussian"},
               init={"kind": "gaussian", "means": [1.0, 1.0], "variances": [1.0, 1.0]})
    assert main(["run", "--config", write_config(d, cfg), "--out", str(d / "out")]) == 0
    return d / "out" / "report.json"


class TestRun:
    def test_converges(self, grid_report):
        report = json.loads(grid_report.read_text())
        assert report["termination"] == "converged"
        assert report["n_sweeps"] <= 60
        assert (grid_report.parent / "state.json").exists()

    def test_parallel_divergence(self, tmp_path):
        assert main(["run", "--config", write_config(tmp_path, coupled3), "--out", str(tmp_path)]) == 4

    def test_max_sweeps(self, tmp_path):
        cfg = dict(two_by_two, schedule={"sweeps": 2, "tol": 1e-14})
        assert main(["run", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 2

    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    @pytest.mark.parametrize("bad", [
        {"target": {"type": "cubic"}},
        {"target": {"type": "quadratic", "A": [[1, 2], [2, 1]], "m": [0, 0]}},
        {"target": {"type": "quadratic", "A": [[1, 0], [0, 1]], "m": [0, 0]}, "backend": {"type": "gpu"}},
        {"target": {"type": "regression", "data_path": "missing.csv", "sigma": 1.0}},
    ])
    def test_bad_config(self, tmp_path, bad):
        assert main(["run", "--config", write_config(tmp_path, bad), "--out", str(tmp_path)]) == 1

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 1

    def test_deterministic_apart_from_timing(self, tmp_path):
        cfg = write_config(tmp_path, two_by_two)
        main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        a.pop("timing"), b.pop("timing")
        assert jsonio.dumps(a) == jsonio.dumps(b)
        assert (tmp_path / "a" / "state.json").read_bytes() == (tmp_path / "b" / "state.json").read_bytes()

    def test_seventeen_digits(self, grid_report):
        text = grid_report.read_text()
        fe = json.loads(text)["sweeps"][1]["free_energy"]
        assert repr(fe) in text or format(fe, ".17g") in text

    def test_regression_config(self, tmp_path):
        synthetic_csv(tmp_path / "data.csv")
        cfg = {"target": {"type": "regression", "data_path": "data.csv", "sigma": 1.0,
                          "prior": {"name": "gaussian", "params": {"scale": 1.0}}},
               "backend": {"type": "gaussian"}}
        assert main(["run", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0


class TestVerify:
    def test_strongly_convex_run(self, grid_report):
        code = main(["verify", "--report", str(grid_report), "--kinds", "monotone,exponential,w2lower"])
        assert code == 0
        certs = json.loads((grid_report.parent / "certificates.json").read_text())
        assert certs["all_pass"] and len(certs["certificates"]) == 3

    def test_every_kind_on_its_backend(self, grid_report, gaussian_report):
        assert main(["verify", "--report", str(grid_report), "--kinds", "linear"]) == 0
        assert main(["verify", "--report", str(gaussian_report),
                     "--kinds", "gaussian-dimfree,exponential,monotone,w2lower,linear"]) == 0

    def test_dimfree_on_grid_is_error(self, grid_report, capsys):
        assert main(["verify", "--report", str(grid_report), "--kinds", "gaussian-dimfree"]) == 1
        assert "gaussian" in capsys.readouterr().err

    def test_failing_certificate(self, grid_report, tmp_path):
        out = tmp_path / "certs.json"
        code = main(["verify", "--report", str(grid_report), "--kinds", "exponential",
                     "--lambda", "50", "--lipschitz", "1", "--out", str(out)])
        assert code == 3
        assert json.loads(out.read_text())["all_pass"] is False

    def test_slack_from_environment(self, grid_report, tmp_path, monkeypatch):
        out = tmp_path / "certs.json"
        monkeypatch.setenv("CAVI_MF_SLACK", "0.25")
        main(["verify", "--report", str(grid_report), "--kinds", "monotone", "--out", str(out)])
        rows = json.loads(out.read_text())["certificates"][0]["rows"]
        assert all(r["slack"] >= 0.25 for r in rows)

    def test_unknown_kind(self, grid_report):
        assert main(["verify", "--report", str(grid_report), "--kinds", "quadratic"]) == 1

    def test_missing_report(self, tmp_path):
        assert main(["verify", "--report", str(tmp_path / "r.json"), "--kinds", "monotone"]) == 1

    def test_schema_error(self, tmp_path):
        path = tmp_path / "r.json"
        path.write_text(json.dumps({"schema": "something-else"}))
        assert main(["verify", "--report", str(path), "--kinds", "monotone"]) == 1


class TestRegress:
    def test_matches_gaussian_backend(self, tmp_path):
        y, X = synthetic_csv(tmp_path / "d.csv")
        assert main(["regress", "--data", str(tmp_path / "d.csv"), "--sigma", "1",
                     "--prior", "gaussian", "--out", str(tmp_path / "o")]) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        means = np.array([row["mean"] for row in summary["coefficients"]])
        # conjugate oracle: the mean-field fixed point has the posterior mean
        A = X.T @ X + np.eye(4)
        np.testing.assert_allclose(means, np.linalg.solve(A, X.T @ y), atol=1e-3)
        for row in summary["coefficients"]:
            assert row["q05"] < row["mean"] < row["q95"]
        assert main(["verify", "--report", str(tmp_path / "o" / "report.json"),
                     "--kinds", "exponential,monotone"]) == 0

    def test_nonconvex_prior_offset_by_data(self, tmp_path):
        synthetic_csv(tmp_path / "d.csv", seed=4)
        code = main(["regress", "--data", str(tmp_path / "d.csv"), "--sigma", "1", "--prior", "custom",
                     "--prior-param", "c=1.5", "--out", str(tmp_path / "o")])
        assert code == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["lambda"] > 0
        assert main(["verify", "--report", str(tmp_path / "o" / "report.json"), "--kinds", "exponential"]) == 0

    def test_empty_csv(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        assert main(["regress", "--data", str(tmp_path / "e.csv"), "--sigma", "1",
                     "--out", str(tmp_path)]) == 1

    def test_header_only(self, tmp_path):
        (tmp_path / "h.csv").write_text("y,x0\n")
        assert main(["regress", "--data", str(tmp_path / "h.csv"), "--sigma", "1",
                     "--out", str(tmp_path)]) == 1

    @pytest.mark.parametrize("sigma", ["0", "-1"])
    def test_nonpositive_sigma(self, tmp_path, sigma):
        synthetic_csv(tmp_path / "d.csv")
        assert main(["regress", "--data", str(tmp_path / "d.csv"), "--sigma", sigma,
                     "--out", str(tmp_path)]) == 1

    def test_bad_prior_param(self, tmp_path):
        synthetic_csv(tmp_path / "d.csv")
        assert main(["regress", "--data", str(tmp_path / "d.csv"), "--sigma", "1",
                     "--prior-param", "c", "--out", str(tmp_path)]) == 1


def test_csv_parse_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,x0\n1.0,abc\n")
    with pytest.raises(ParseError):
        read_regression_csv(path)
    path.write_text("1.0,2.0\n3.0,4.0\n")
    with pytest.raises(ParseError):
        read_regression_csv(path)


def test_config_defaults():
    cfg = RunConfig.from_dict({"target": {"type": "quadratic", "A": [[1.0]], "m": [0.0]}})
    assert cfg.backend == "grid" and cfg.schedule.mode == "sequential"
    assert cfg.init == {"kind": "standard_gaussian"}
