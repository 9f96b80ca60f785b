import hashlib
import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from sphere_clt import experiments as ex
from sphere_clt.distance import ks_exact_discrete, rademacher_sum_distribution


def small_rate_config(**kw):
    base = dict(model_name="uniform_product", n_list=[16, 32],
                directions_per_n=10, distance_method="inversion",
                inversion_accuracy=1e-6, samples=5000, seed=7,
                pairs=20_000, output_dir="unused")
    base.update(kw)
    return ex.ExperimentConfig(**base)


class TestConfig:
    def test_unknown_model(self):
        with pytest.raises(ValueError, match="unknown model"):
            small_rate_config(model_name="beta").validate()

    def test_descending_n(self):
        with pytest.raises(ValueError, match="ascending"):
            small_rate_config(n_list=[32, 16]).validate()

    def test_direction_floor(self):
        with pytest.raises(ValueError, match="10 directions"):
            small_rate_config(directions_per_n=3).validate()

    def test_equal_coefficients_waives_direction_floor(self):
        cfg = small_rate_config(model_name="rademacher",
                                distance_method="exact",
                                directions_per_n=1, equal_coefficients=True)
        cfg.validate()

    def test_method_model_mismatch_before_compute(self):
        cfg = small_rate_config(model_name="rademacher",
                                distance_method="inversion")
        with pytest.raises(ValueError, match="atomic"):
            ex.check_method_model(cfg)
        cfg2 = small_rate_config(distance_method="exact")
        with pytest.raises(ValueError, match="rademacher"):
            ex.check_method_model(cfg2)

    def test_hash_stable(self):
        assert small_rate_config().config_hash == small_rate_config().config_hash
        assert (small_rate_config(seed=8).config_hash
                != small_rate_config().config_hash)

    def test_parse_rule(self):
        assert ex.parse_rule("4*sqrt(log n)")(16) == pytest.approx(
            4.0 * math.sqrt(math.log(16)))
        assert ex.parse_rule("4*n")(16) == 64.0
        assert ex.parse_rule("T0*n")(16, T0=2.0) == 32.0
        assert ex.parse_rule("7.5")(16) == 7.5
        with pytest.raises(ValueError):
            ex.parse_rule("__import__('os')")


@pytest.fixture(scope="module")
def sweep():
    return ex.run_rate_sweep(small_rate_config())


@pytest.fixture(scope="module")
def tail():
    cfg = small_rate_config(n_list=[16], directions_per_n=500)
    return ex.run_tail_sweep(cfg)


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    out = tmp_path_factory.mktemp("emit")
    cfg = small_rate_config(output_dir=str(out))
    res = ex.run_rate_sweep(cfg)
    files = ex.emit_outputs(res, cfg)
    return cfg, res, files, out


class TestRateSweep:
    def test_rows_schema(self, sweep):
        keys = {"n", "mean_rho", "median_rho", "q90", "q99", "max_rho", "se"}
        assert all(set(r) == keys for r in sweep.rows)

    def test_quantiles_monotone(self, sweep):
        for r in sweep.rows:
            assert r["median_rho"] <= r["q90"] <= r["q99"] <= r["max_rho"]

    def test_distance_decreases(self, sweep):
        assert sweep.rows[1]["mean_rho"] < sweep.rows[0]["mean_rho"]

    def test_gaussian_null_lane(self):
        cfg = small_rate_config(model_name="gaussian", n_list=[16],
                                inversion_accuracy=1e-6)
        res = ex.run_rate_sweep(cfg)
        assert res.rows[0]["max_rho"] <= 1e-6

    def test_equal_coefficient_baseline(self):
        cfg = small_rate_config(model_name="rademacher",
                                distance_method="exact",
                                n_list=[16, 32, 64, 128],
                                equal_coefficients=True)
        res = ex.run_rate_sweep(cfg)
        assert -0.6 <= res.slope <= -0.4

    def test_typical_beats_worst_direction(self):
        cfg = small_rate_config(n_list=[64], directions_per_n=10)
        typical = ex.run_rate_sweep(cfg).rows[0]["mean_rho"]
        baseline = ks_exact_discrete(
            rademacher_sum_distribution(np.full(64, 1 / 8.0))).value
        assert typical < baseline


class TestTailSweep:
    def test_direction_floor(self):
        cfg = small_rate_config(n_list=[16], directions_per_n=100)
        with pytest.raises(ValueError, match="500"):
            ex.run_tail_sweep(cfg)

    def test_survival_monotone(self, tail):
        surv = [row["survival"] for row in tail.tail_table]
        assert all(b <= a for a, b in zip(surv, surv[1:]))

    def test_fit_reported(self, tail):
        assert tail.tail_fit is not None
        assert 0.0 <= tail.tail_fit["r2"] <= 1.0

    def test_gaussian_degenerate_flag(self):
        cfg = small_rate_config(model_name="gaussian", n_list=[16],
                                directions_per_n=500)
        res = ex.run_tail_sweep(cfg)
        names = [r.name for r in res.records]
        assert "tail_degenerate_n16" in names


class TestLinearPartReport:
    def test_symmetric_flat(self):
        cfg = small_rate_config(model_name="uniform_product", n_list=[16],
                                pairs=30_000, t_count=5)
        rep = ex.run_linear_part_report(cfg)
        block = rep["per_n"][0]
        for val, se in zip(block["I_exact"], block["I_exact_se"]):
            assert abs(val) <= 3 * max(se, 1e-15)
        assert block["sqrt_I_integral"] <= block["sqrt_I_integral_se"] + 1e-9

    def test_nonsymmetric_records(self):
        cfg = small_rate_config(model_name="centered_exp", n_list=[16, 32],
                                pairs=50_000, t_count=4)
        rep = ex.run_linear_part_report(cfg)
        names = [r.name for r in rep["records"]]
        assert "lemma11_ratio_span" in names
        assert len(rep["per_n"]) == 2


class TestEmitOutputs:
    def test_csv_header_exact(self, emitted):
        _, _, files, _ = emitted
        lines = open(files["csv"]).read().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == "n,mean_rho,median_rho,q90,q99,max_rho,se"

    def test_json_schema(self, emitted):
        _, _, files, _ = emitted
        doc = json.load(open(files["json"]))
        assert set(doc) >= {"config", "git_describe", "records", "summary"}
        assert "config_hash" in doc["config"]
        assert set(doc["summary"]) >= {"pass", "failures"}
        # model specs ride along for provenance
        assert doc["model_specs"]["16"]["name"] == "uniform_product"

    def test_distances_csv_schema(self, emitted):
        _, _, files, _ = emitted
        lines = open(files["distances"]).read().splitlines()
        assert lines[1] == "theta_id,method,value,error_radius,T0,T,L_theta"
        assert lines[2].startswith("n16_d0,inversion,")

    def test_rerun_byte_identical(self, emitted):
        cfg, res, files, out = emitted
        digest1 = hashlib.sha256(open(files["json"], "rb").read()).hexdigest()
        files2 = ex.emit_outputs(res, cfg)
        digest2 = hashlib.sha256(open(files2["json"], "rb").read()).hexdigest()
        assert digest1 == digest2

    def test_svg_reference_slopes(self, emitted):
        _, _, files, _ = emitted
        svg = open(files["rate_loglog.svg"]).read()
        assert "slope -1" in svg
        assert "slope -0.5" in svg


class TestDeterminism:
    def test_worker_count_invariant(self):
        cfg1 = small_rate_config(n_list=[16], directions_per_n=10, workers=1)
        cfg2 = replace(cfg1, workers=2)
        res1 = ex.run_rate_sweep(cfg1)
        res2 = ex.run_rate_sweep(cfg2)
        assert res1.per_direction == res2.per_direction


class TestCLI:
    def test_usage_error_exit_code(self, tmp_path, capsys):
        rc = ex.main(["rate", "--model", "rademacher", "--method", "inversion",
                      "--n", "16", "--out", str(tmp_path)])
        assert rc == 2

    def test_lambda_command(self, tmp_path, capsys):
        rc = ex.main(["lambda", "--model", "gaussian", "--n", "6",
                      "--samples", "20000", "--seed", "1",
                      "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "lambda_cap_gaussian_n6" in out
        assert os.path.exists(tmp_path / "results.json")

    def test_config_file_with_flag_override(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(
            {"model_name": "gaussian", "n_list": [16], "samples": 4000,
             "directions_per_n": 10, "distance_method": "inversion",
             "inversion_accuracy": 1e-6}))
        rc = ex.main(["rate", "--config", str(cfg_path), "--seed", "3",
                      "--out", str(tmp_path / "out")])
        assert rc == 0
        doc = json.load(open(tmp_path / "out" / "results.json"))
        assert doc["config"]["seed"] == 3
        assert doc["config"]["model_name"] == "gaussian"

    def test_unknown_config_key(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"model": "gaussian"}))
        rc = ex.main(["rate", "--config", str(cfg_path)])
        assert rc == 2
