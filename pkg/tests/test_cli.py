import json
import subprocess
import sys
import warnings

import numpy as np
import pytest

from netprop.cli import ModelConfig, run_cli, stars
from netprop.cli.io import DuplicateEdgeWarning, load_panel, write_panel
from netprop.dgp import DgpConfig, simulate
from netprop.errors import PanelFormatError, UnknownNodeRef, ValidationError
from netprop.estimator import EstimatorOptions, estimate_tau, fit_theta, prepare


def write_files(root, nodes, edges, groups="group_id\n0\n"):
    root.mkdir(exist_ok=True)
    (root / "groups.csv").write_text(groups)
    (root / "nodes.csv").write_text(nodes)
    (root / "edges.csv").write_text(edges)
    return root


PATH_NODES = "group_id,node_id,d,y,c_1\n0,0,0,1.0,0\n0,1,1,2.0,1\n0,2,0,3.0,0\n"
PATH_EDGES = "group_id,node_i,node_j\n0,0,1\n0,1,2\n"


@pytest.fixture(scope="module")
def simulated_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run_cli(["simulate", "--groups", "40", "--seed", "3", "--out", str(out)]) == 0
    return out


class TestLoadPanel:
    def test_path_graph(self, tmp_path):
        panel = load_panel(write_files(tmp_path / "p", PATH_NODES, PATH_EDGES))
        assert panel.num_groups == 1
        assert list(panel.groups[0].links) == [1, 2, 1]

    def test_unknown_node(self, tmp_path):
        d = write_files(tmp_path / "p", PATH_NODES, PATH_EDGES + "0,1,7\n")
        with pytest.raises(UnknownNodeRef, match=r"edges.csv:4"):
            load_panel(d)

    def test_duplicate_edge_both_ways(self, tmp_path):
        d = write_files(tmp_path / "p", PATH_NODES, PATH_EDGES + "0,1,0\n")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            panel = load_panel(d)
        dup = [w for w in caught if issubclass(w.category, DuplicateEdgeWarning)]
        assert len(dup) == 1 and "edges.csv:4" in str(dup[0].message)
        assert list(panel.groups[0].links) == [1, 2, 1]

    @pytest.mark.parametrize("nodes, edges, where", [
        (PATH_NODES, PATH_EDGES + "0,2,2\n", "edges.csv:4"),
        (PATH_NODES.replace("0,1,1,2.0", "0,1,2,2.0"), PATH_EDGES, "nodes.csv:3"),
        (PATH_NODES.replace("3.0", "nan"), PATH_EDGES, "nodes.csv:4"),
        (PATH_NODES + "0,2,1,1.0,0\n", PATH_EDGES, "nodes.csv:5"),
    ])
    def test_format_errors_name_the_line(self, tmp_path, nodes, edges, where):
        with pytest.raises(PanelFormatError, match=where):
            load_panel(write_files(tmp_path / "p", nodes, edges))

    def test_missing_file(self, tmp_path):
        d = write_files(tmp_path / "p", PATH_NODES, PATH_EDGES)
        (d / "edges.csv").unlink()
        with pytest.raises(PanelFormatError, match="missing file"):
            load_panel(d)

    def test_unknown_covariate_column(self, tmp_path):
        d = write_files(tmp_path / "p", PATH_NODES, PATH_EDGES)
        with pytest.raises(PanelFormatError):
            load_panel(d, covariates=["c_9"])

    def test_round_trip(self, tmp_path, small_sim):
        write_panel(small_sim.panel, tmp_path / "rt")
        back = load_panel(tmp_path / "rt")
        for a, b in zip(small_sim.panel.groups, back.groups):
            assert np.array_equal(a.adjacency, b.adjacency)
            assert np.array_equal(a.d, b.d)
            np.testing.assert_allclose(b.y, a.y, rtol=0, atol=1e-12)
            np.testing.assert_allclose(b.c, a.c, rtol=0, atol=1e-12)
        opts = EstimatorOptions()
        s1, s2 = prepare(small_sim.panel), prepare(back)
        f1, f2 = fit_theta(s1, options=opts), fit_theta(s2, options=opts)
        np.testing.assert_allclose(estimate_tau(s2, f2.theta_hat, opts).as_array(),
                                   estimate_tau(s1, f1.theta_hat, opts).as_array(), atol=1e-12)


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            ModelConfig(quad_order=4)
        with pytest.raises(ValidationError):
            ModelConfig(estimand="LATE")
        with pytest.raises(ValidationError):
            ModelConfig.from_dict({"bogus": 1})

    def test_stars(self):
        assert [stars(p) for p in (0.005, 0.03, 0.07, 0.2)] == ["***", "**", "*", ""]


class TestCommands:
    def test_estimate_deterministic(self, simulated_dir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli(["estimate", "--data", str(simulated_dir), "--out", str(a)]) == 0
        assert run_cli(["estimate", "--data", str(simulated_dir), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        report = json.loads(a.read_text())
        assert report["diagnostics"]["converged"]
        assert all(r["se"] >= 0 for r in report["tau"] + report["theta"])

    def test_exact_scores_match_in_process(self, simulated_dir, tmp_path):
        out = tmp_path / "exact.json"
        truth = simulated_dir / "truth.csv"
        assert run_cli(["estimate", "--data", str(simulated_dir), "--exact-scores", str(truth),
                        "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        sim = simulate(DgpConfig(num_groups=40), seed=3)
        t = sim.node_truth()
        sample = prepare(sim.panel, {"p_d": t["p_d"], "p_f": t["p_f"]})
        est = estimate_tau(sample, scores=(sample.extra["p_d"], sample.extra["p_f"]),
                           options=EstimatorOptions())
        assert [r["coef"] for r in report["tau"]] == est.as_array().tolist()

    def test_balance(self, simulated_dir, tmp_path):
        out = tmp_path / "bal.json"
        assert run_cli(["balance", "--data", str(simulated_dir), "--out", str(out)]) == 0
        table = json.loads(out.read_text())["balance"]
        assert [row["covariate"] for row in table] == ["c_1"]

    def test_mc(self, tmp_path):
        cfg = tmp_path / "mc.json"
        cfg.write_text(json.dumps({"reps": 2, "seed": 1, "scores": "exact",
                                   "dgp": {"num_groups": 20}}))
        out, rows = tmp_path / "mc_out.json", tmp_path / "rows.csv"
        assert run_cli(["mc", "--config", str(cfg), "--out", str(out), "--rows", str(rows)]) == 0
        assert json.loads(out.read_text())["reps_completed"] == 2
        assert len(rows.read_text().splitlines()) == 3

    def test_diagnose_tv_grid(self, tmp_path, capsys):
        out = tmp_path / "diag.json"
        assert run_cli(["diagnose", "--tv-grid", "--out", str(out)]) == 0
        res = json.loads(out.read_text())
        assert set(res) == {"tv-grid"} and res["tv-grid"]["passed"] and res["tv-grid"]["failures"] == 0


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run_cli(["estimate", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_data_dir(self, tmp_path, capsys):
        assert run_cli(["estimate", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r.json")]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "PanelFormatError"

    def test_numerical_failure(self, tmp_path, capsys):
        # a panel where everybody is treated cannot support the score model
        nodes = "group_id,node_id,d,y,c_1\n0,0,1,1.0,0\n0,1,1,2.0,1\n0,2,1,3.0,0\n"
        d = write_files(tmp_path / "p", nodes, PATH_EDGES)
        code = run_cli(["estimate", "--data", str(d), "--out", str(tmp_path / "r.json")])
        assert code == 2

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "netprop.cli", "--bogus"], capture_output=True, text=True)
        assert proc.returncode == 1 and "usage" in proc.stderr
