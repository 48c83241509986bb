import numpy as np
import pytest
import yaml

from diffpareto.cli import main, read_table
from diffpareto.config import ConfigError, ExperimentConfig, decade_grid, load_config
from diffpareto.io import parse_block_vector, read_topology_document
from diffpareto.strategies import LearningCurve

RING = [[0, 1], [1, 2], [2, 3], [3, 0]]


def quadratic_doc(minimizers, noise_std=0.0, **extra):
    doc = {
        "network": {"builder": "edges", "nodes": 4, "edges": RING},
        "costs": {"family": "quadratic", "dim": 2, "curvatures": [1.0, 2.0, 1.0, 3.0],
                  "minimizers": minimizers, "noise_std": noise_std},
        "strategies": ["atc", "cta", "consensus"],
    }
    for key, val in extra.items():
        doc[key] = val
    return doc


def write_config(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig({})
        assert cfg.n_nodes == 10 and cfg.data["costs"]["dim"] == 5
        assert cfg.data["costs"]["subset_sizes"] == {"U": 3, "S": 4, "H": 2, "K": 1}
        assert cfg.sweep_values[0] == pytest.approx(1e-3) and cfg.sweep_values[-1] == pytest.approx(0.1)
        assert len(cfg.sweep_values) == 11

    def test_build_roles_partition(self, finance):
        roles = finance.roles
        assert sorted(roles) == sorted("UUUSSSSHHK")
        assert finance.topology.is_connected()

    def test_hash_ignores_layout_and_defaults(self):
        a = ExperimentConfig.from_yaml("simulation: {runs: 200}\n")
        b = ExperimentConfig.from_yaml("simulation:\n  runs: 200\n  horizon: 10000\n")
        assert a.hash == b.hash == ExperimentConfig({}).hash
        assert ExperimentConfig({"simulation": {"runs": 5}}).hash != a.hash

    def test_yaml_round_trip(self):
        cfg = ExperimentConfig({"step_size": {"mu": 0.02}})
        assert ExperimentConfig.from_yaml(cfg.to_yaml()).hash == cfg.hash

    @pytest.mark.parametrize("doc, msg", [
        ({"simulaton": {}}, "unknown key"),
        ({"costs": {"subset_sizes": {"U": 3, "S": 3, "H": 2, "K": 1}}}, "partition"),
        ({"strategies": ["gossip"]}, "unknown strategies"),
        ({"step_size": {"sweep": [0.1, 0.01]}}, "ascending"),
        ({"simulation": {"horizon": 0}}, "horizon"),
        ({"step_size": {"mu": [0.1, 0.2]}}, "step_size.mu"),
    ])
    def test_rejects(self, doc, msg):
        with pytest.raises(ConfigError, match=msg):
            ExperimentConfig(doc)

    def test_decade_grid(self):
        assert decade_grid(1e-3, 1e-1, 1) == pytest.approx([1e-3, 1e-2, 1e-1])

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")


class TestValidate:
    def test_default_passes(self, capsys, tmp_path):
        assert main(["validate", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "PASS connectivity" in out
        assert "PASS atc: theta^T A2^T Omega C^T = c0 1^T" in out
        topo, mats = read_topology_document((tmp_path / "topology.yaml").read_text())
        assert topo.n_nodes == 10 and set(mats) == {"A", "A1", "A2", "C"}

    def test_step_size_too_large(self, capsys, tmp_path):
        path = write_config(tmp_path, {"step_size": {"mu": 5.0}})
        assert main(["validate", "--config", path]) == 1
        assert "FAIL atc: 0 < mu_k < 2/sigma_k,max" in capsys.readouterr().out

    def test_disconnected_edges(self, capsys, tmp_path):
        path = write_config(tmp_path, quadratic_doc([[0, 0]] * 4, network={
            "builder": "edges", "nodes": 4, "edges": [[0, 1], [2, 3]]}))
        assert main(["validate", "--config", path]) == 1
        assert "FAIL connectivity" in capsys.readouterr().out

    def test_unconnectable_geometric_graph(self, capsys, tmp_path):
        path = write_config(tmp_path, {"network": {"radius": 0.01}})
        assert main(["validate", "--config", path]) == 1
        assert "connectivity" in capsys.readouterr().out

    def test_bad_config_exit_code(self, capsys, tmp_path):
        path = write_config(tmp_path, {"simulation": {"bogus": 1}})
        assert main(["validate", "--config", path]) == 1


class TestSimulate:
    def test_single_iteration(self, tmp_path):
        path = write_config(tmp_path, {"simulation": {"horizon": 1, "runs": 2}})
        assert main(["simulate", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 0
        for variant in ("atc", "cta", "consensus", "centralized"):
            parsed = LearningCurve.read_csv((tmp_path / "o" / f"curve_{variant}.csv").read_text())
            assert parsed["iteration"].tolist() == [0]

    def test_byte_identical_rerun(self, tmp_path):
        path = write_config(tmp_path, {"simulation": {"horizon": 50, "runs": 3}})
        for d in ("a", "b"):
            assert main(["simulate", "--config", path, "--out", str(tmp_path / d), "--quiet"]) == 0
        for name in ("curve_atc.csv", "curve_centralized.csv", "comparison.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        path = write_config(tmp_path, {"simulation": {"horizon": 20, "runs": 2}, "strategies": ["atc"]})
        main(["simulate", "--config", path, "--out", str(tmp_path / "a"), "--quiet"])
        main(["simulate", "--config", path, "--out", str(tmp_path / "b"), "--quiet", "--seed", "9"])
        assert (tmp_path / "a" / "curve_atc.csv").read_bytes() != (tmp_path / "b" / "curve_atc.csv").read_bytes()

    def test_header_and_round_trip(self, tmp_path):
        doc = {"simulation": {"horizon": 30, "runs": 2}, "strategies": ["atc", "cta"]}
        path = write_config(tmp_path, doc)
        main(["simulate", "--config", path, "--out", str(tmp_path), "--quiet", "--runs", "2"])
        meta, rows = read_table((tmp_path / "comparison.csv").read_text())
        assert meta["config_hash"] == load_config(path).hash
        assert len(rows) == 30 and set(rows[0]) == {"iteration", "atc_mse_db", "cta_mse_db"}
        curve_meta, _ = read_table((tmp_path / "curve_atc.csv").read_text())
        assert curve_meta["config_hash"] == meta["config_hash"]


class TestSweep:
    def test_noise_free_matches_bias(self, tmp_path):
        rng = np.random.default_rng(3)
        doc = quadratic_doc(rng.standard_normal((4, 2)).tolist(),
                            step_size={"mu": 0.05, "sweep": [0.05, 0.1]},
                            simulation={"horizon": 2000, "runs": 1})
        path = write_config(tmp_path, doc)
        assert main(["sweep", "--config", path, "--out", str(tmp_path), "--quiet"]) == 0
        meta, rows = read_table((tmp_path / "sweep.csv").read_text())
        assert "config_hash" in meta and len(rows) == 6
        for row in rows:
            assert abs(float(row["sim_mse_db"]) - float(row["bias_power_db"])) < 0.1
            if row["strategy"] != "consensus":
                # theory and iteration agree for quadratics
                assert abs(float(row["pred_mse_db"]) - float(row["bias_power_db"])) < 1e-6

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_error_column_records_failures(self, tmp_path):
        doc = quadratic_doc(np.eye(4, 2).tolist(), noise_std=0.1,
                            step_size={"mu": 0.05, "sweep": [0.05, 0.6]},
                            simulation={"horizon": 100, "runs": 2})
        path = write_config(tmp_path, doc)
        assert main(["sweep", "--config", path, "--out", str(tmp_path), "--quiet"]) == 0
        _, rows = read_table((tmp_path / "sweep.csv").read_text())
        big = [r for r in rows if float(r["mu"]) == 0.6]
        assert all(r["error"] for r in big)


class TestFixedPoint:
    def test_common_minimizer(self, tmp_path):
        path = write_config(tmp_path, quadratic_doc([[0.5, -1.0]] * 4, step_size={"mu": 0.2}))
        assert main(["fixed-point", "--config", path, "--out", str(tmp_path), "--quiet"]) == 0
        _, rows = read_table((tmp_path / "fixed_point.csv").read_text())
        assert all(float(r["error_power"]) < 1e-20 for r in rows)
        w = parse_block_vector((tmp_path / "w_inf_atc_mu0.2.txt").read_text())
        np.testing.assert_allclose(w, np.tile([0.5, -1.0], (4, 1)), atol=1e-12)

    def test_diffusion_beats_consensus(self, tmp_path):
        # the ordering is a property of the investment example, not of every network
        path = write_config(tmp_path, {"step_size": {"mu": 0.1}, "strategies": ["atc", "cta", "consensus"]})
        assert main(["fixed-point", "--config", path, "--out", str(tmp_path), "--quiet"]) == 0
        _, rows = read_table((tmp_path / "fixed_point.csv").read_text())
        power = {r["strategy"]: float(r["error_power"]) for r in rows}
        assert power["atc"] < power["cta"] < power["consensus"]
        assert all(float(r["relative_agreement"]) < 1e-8 for r in rows if r["strategy"] != "consensus")

    def test_non_convergence_exit_code(self, tmp_path):
        path = write_config(tmp_path, quadratic_doc(np.eye(4, 2).tolist(), fixed_point={"max_iters": 3}))
        assert main(["fixed-point", "--config", path, "--out", str(tmp_path), "--quiet"]) == 2
        _, rows = read_table((tmp_path / "fixed_point.csv").read_text())
        assert all(r["status"].startswith("failed") for r in rows)
