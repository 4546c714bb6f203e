import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from cbgopt import cli, runconfig as rc
from cbgopt.devices import PARAM_NAMES
from cbgopt.errors import ConfigError


def write_config(tmp_path, **overrides):
    cfg = {
        "seed": 11,
        "out_dir": str(tmp_path / "run"),
        "oracle": {"kind": "toy"},
        "objective": {"lambda_des": 930.3},
        "center": "NIR_I",
        "optimize": {
            "budget": 24,
            "init_count": 12,
            "domain": {
                "R": [150, 250], "W": [100, 200], "P": [300, 400],
                "t_cbg": [150, 300], "t_sio2": [100, 300], "t_hsq_gap": [50, 900],
            },
            "fixed": {"t_ito": 50},
        },
        "robustness": {"train_count": 64, "n_samples": 2000},
        "robust_optimize": {"budget": 12, "n_samples": 400, "init_count": 8},
        "verify": {"count": 32},
        "capacitor": {
            "design": "NIR_I",
            "u_list": [0, 10, 20, 30],
            "grid": {"max_dz": 20, "max_dr_cbg": 25, "max_dr_outer": 200},
            "radius_um": 3.0,
        },
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestConfigValidation:
    def test_missing_seed_rejected(self, tmp_path):
        path, cfg = write_config(tmp_path)
        del cfg["seed"]
        path.write_text(json.dumps(cfg))
        assert cli.main(["toy-eval", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_seed_flag_overrides(self, tmp_path):
        path, cfg = write_config(tmp_path)
        del cfg["seed"]
        path.write_text(json.dumps(cfg))
        assert cli.main(["toy-eval", "--config", str(path), "--seed", "5"]) == 0
        doc = json.loads((tmp_path / "run" / "toy_eval.json").read_text())
        assert doc["seed"] == 5

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["toy-eval", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["toy-eval", "--config", str(bad)]) == cli.EXIT_CONFIG

    def test_missing_table_rejected_at_validation(self, tmp_path):
        path, cfg = write_config(tmp_path, oracle={"kind": "table", "path": "absent.csv"})
        path.write_text(json.dumps(cfg))
        assert cli.main(["verify", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_sigma_rule_rejected_before_compute(self, tmp_path):
        path, cfg = write_config(tmp_path)
        cfg["robustness"]["training_scales"] = 2.0  # cannot hold 3 sigma
        path.write_text(json.dumps(cfg))
        assert cli.main(["robustness", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_mu_bounds_vs_scales_rejected(self, tmp_path):
        path, cfg = write_config(tmp_path)
        cfg["robust_optimize"]["mu_bounds_sigma"] = 4.0  # 4 + 3 > default 5
        path.write_text(json.dumps(cfg))
        assert cli.main(["robust-optimize", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_unknown_reference_design(self, tmp_path):
        path, cfg = write_config(tmp_path, center="NIR_IX")
        path.write_text(json.dumps(cfg))
        assert cli.main(["toy-eval", "--config", str(path)]) == cli.EXIT_CONFIG


class TestExternalTable:
    def test_round_trip_and_duplicate_detection(self, tmp_path):
        rows = np.array([[201.0, 114, 318, 261, 136, 702, 50, 930.3, 22.1, 0.866],
                         [211.0, 114, 318, 261, 136, 702, 50, 934.0, 18.0, 0.80]])
        table = tmp_path / "evals.csv"
        header = ",".join(PARAM_NAMES + ("lambda_c", "fp", "eta_smf"))
        np.savetxt(table, rows, delimiter=",", header=header, comments="")
        oracle = rc.ExternalTable(table)
        lam, fp, eta = oracle(rows[:, :7])
        assert np.allclose(lam, rows[:, 7])
        assert np.allclose(eta, rows[:, 9])
        # unknown rows surface as NaN failures
        lam2, _, _ = oracle(rows[:, :7] + 1.0)
        assert np.all(np.isnan(lam2))
        dup = np.vstack([rows, rows[0]])
        np.savetxt(table, dup, delimiter=",", header=header, comments="")
        with pytest.raises(ConfigError, match="duplicate"):
            rc.ExternalTable(table)

    def test_missing_columns(self, tmp_path):
        table = tmp_path / "evals.csv"
        table.write_text("R,W\n1,2\n")
        with pytest.raises(ConfigError, match="missing columns"):
            rc.ExternalTable(table)


class TestCommands:
    def test_toy_eval_outputs(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["toy-eval", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "run" / "toy_eval.json").read_text())
        assert doc["lambda_c"] == pytest.approx(930.3)
        assert doc["config_sha256"]

    def test_optimize_writes_artifacts(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["optimize", "--config", str(path)]) == 0
        out = tmp_path / "run"
        assert (out / "best.json").exists()
        assert (out / "surrogate.bin").exists()
        lines = (out / "history.csv").read_text().splitlines()
        assert lines[0].startswith("# config_sha256=")
        assert lines[2].split(",")[0] == "iteration"
        assert len(lines) == 3 + cfg["optimize"]["budget"]
        best = json.loads((out / "best.json").read_text())
        assert set(best["design"]) == set(PARAM_NAMES)
        assert best["design"]["t_ito"] == 50.0

    def test_optimize_resume_spends_only_new_budget(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["optimize", "--config", str(path)]) == 0
        cfg["optimize"]["budget"] = 30
        path.write_text(json.dumps(cfg))
        assert cli.main(["optimize", "--config", str(path), "--resume"]) == 0
        lines = (tmp_path / "run" / "history.csv").read_text().splitlines()
        assert len(lines) == 3 + 30

    def test_robustness_report_and_histograms(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["robustness", "--config", str(path)]) == 0
        out = tmp_path / "run"
        report = json.loads((out / "robustness_report.json").read_text())
        assert report["tolerances"] == dict(
            zip(PARAM_NAMES, [10.0, 10.0, 1.0, 5.0, 10.0, 10.0, 5.0])
        )
        for q in ("lambda_c", "fp", "eta_smf"):
            assert (out / f"hist_{q}.csv").exists()
            assert "triple" in report[q]
        assert "±" in report["eta_smf"]["triple"]

    def test_robust_optimize_outputs(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["robust-optimize", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "run" / "robust_best.json").read_text())
        assert set(doc["mu"]) == set(PARAM_NAMES)
        assert "median_target" in doc and "point_target" in doc
        assert doc["mu_bounds_sigma"][2] == 22.0  # pitch default

    def test_verify_outputs(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["verify", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "run" / "verification.json").read_text())
        assert doc["sample_count"] == 32
        assert set(doc["median_discrepancy"]) == {"lambda_c", "fp", "eta_smf"}

    def test_capacitor_outputs(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert cli.main(["capacitor", "--config", str(path)]) == 0
        out = tmp_path / "run"
        summary = json.loads((out / "capacitor_summary.json").read_text())
        assert summary["planar_rel_diff"] < 0.01
        sweep = (out / "bias_sweep.csv").read_text().splitlines()
        assert sweep[2] == "u_volts,e_abs_kv_cm"
        assert (out / "field_map.csv").exists()

    def test_byte_reproducibility_toy_eval(self, tmp_path):
        path, _ = write_config(tmp_path)
        for d in ("a", "b"):
            assert cli.main(["toy-eval", "--config", str(path),
                             "--out", str(tmp_path / d)]) == 0
        assert (tmp_path / "a" / "toy_eval.json").read_bytes() == \
            (tmp_path / "b" / "toy_eval.json").read_bytes()

    def test_constant_external_table_degenerate_report(self, tmp_path):
        from cbgopt import devices, sampling

        cfg_path, cfg = write_config(tmp_path)
        center = devices.REFERENCE_DESIGNS["NIR_I"]
        tol = devices.fab_tolerances()
        dom = sampling.training_domain(center.as_array(), tol)
        pts = sampling.sobol(7, 64, dom)
        const = np.column_stack([
            pts,
            np.full(64, 930.3), np.full(64, 22.0), np.full(64, 0.85),
        ])
        table = tmp_path / "const.csv"
        header = ",".join(PARAM_NAMES + ("lambda_c", "fp", "eta_smf"))
        np.savetxt(table, const, delimiter=",", header=header, comments="", fmt="%.17g")
        cfg["oracle"] = {"kind": "table", "path": str(table)}
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["robustness", "--config", str(cfg_path)]) == 0
        report = json.loads((tmp_path / "run" / "robustness_report.json").read_text())
        assert report["eta_smf"]["p50"] == pytest.approx(0.85, abs=1e-6)
        assert report["eta_smf"]["sigma_plus"] == pytest.approx(0.0, abs=1e-6)
        assert report["lambda_c"]["sigma_minus"] == pytest.approx(0.0, abs=1e-6)

    def test_external_table_replay(self, tmp_path):
        # generate a table from the toy oracle on the exact MVN sample stream,
        # then verify via table lookup only
        from cbgopt import devices, sampling

        cfg_path, cfg = write_config(tmp_path)
        center = devices.REFERENCE_DESIGNS["NIR_I"]
        tol = devices.fab_tolerances()
        train_dom = sampling.training_domain(center.as_array(), tol)
        pts_train = sampling.sobol(7, 64, train_dom)
        pts_mvn = sampling.mvn_sample(center.as_array(), tol, 32, seed=11)
        pts = np.vstack([pts_train, pts_mvn])
        lam, fp, eta = devices.toy_oracle()(pts)
        table = tmp_path / "table.csv"
        header = ",".join(PARAM_NAMES + ("lambda_c", "fp", "eta_smf"))
        np.savetxt(table, np.column_stack([pts, lam, fp, eta]),
                   delimiter=",", header=header, comments="", fmt="%.17g")
        cfg["oracle"] = {"kind": "table", "path": str(table)}
        cfg_path.write_text(json.dumps(cfg))
        assert cli.main(["verify", "--config", str(cfg_path)]) == 0
        doc = json.loads((tmp_path / "run" / "verification.json").read_text())
        assert doc["sample_count"] == 32
