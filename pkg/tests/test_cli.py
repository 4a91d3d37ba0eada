import json
import os

import numpy as np
import pytest

from bcrb.cli import main
from bcrb.errors import ScenarioError
from bcrb.scenarios import canonical_json, load_config, scenario_hash


def write_config(tmp_path, config, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def gaussian_optimal_config(nodes=2001):
    return {
        "kind": "optimal",
        "name": "gaussian-closed-form",
        "grid": {"lower": -8.0, "upper": 8.0, "nodes": nodes},
        "model": {
            "fisher": {"type": "constant", "value": 1.0},
            "weight": {"type": "constant", "value": 1.0},
        },
        "prior": {"type": "gaussian", "variance": 1.0},
        "n": 10.0,
    }


class TestCanonicalJson:
    def test_sorted_keys_and_float_format(self):
        out = canonical_json({"b": 1.0 / 3.0, "a": 2})
        assert out.index('"a"') < out.index('"b"')
        assert "3.333333333333e-01" in out
        assert json.loads(out) == {"a": 2, "b": pytest.approx(1 / 3, rel=1e-12)}

    def test_non_finite_encoded(self):
        out = canonical_json({"x": float("inf"), "y": float("nan")})
        parsed = json.loads(out)
        assert parsed["x"] == "inf" and parsed["y"] == "nan"

    def test_hash_stable_under_reserialization(self):
        cfg = gaussian_optimal_config()
        reloaded = json.loads(json.dumps(cfg))
        assert scenario_hash(cfg) == scenario_hash(reloaded)


class TestValidation:
    def test_empty_config_exit_2(self, tmp_path, capsys):
        path = tmp_path / "empty.json"
        path.write_text("")
        code = main(["optimal", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_missing_field_names_path(self, tmp_path):
        cfg = gaussian_optimal_config()
        del cfg["prior"]
        with pytest.raises(ScenarioError) as exc:
            load_config(write_config(tmp_path, cfg))
        assert "prior" in str(exc.value)

    def test_bad_enum_reports_field(self, tmp_path):
        cfg = gaussian_optimal_config()
        cfg["prior"] = {"type": "cauchy"}
        with pytest.raises(ScenarioError) as exc:
            load_config(write_config(tmp_path, cfg))
        assert "prior" in str(exc.value)

    def test_kind_subcommand_mismatch(self, tmp_path, capsys):
        path = write_config(tmp_path, gaussian_optimal_config())
        code = main(["bound", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "kind" in capsys.readouterr().err

    def test_unwritable_output_exit_4(self, tmp_path, capsys):
        path = write_config(tmp_path, gaussian_optimal_config(nodes=201))
        blocker = tmp_path / "blocked"
        blocker.write_text("file, not a directory")
        code = main(["optimal", "--config", path, "--out", str(blocker)])
        assert code == 4


class TestOptimalScenario:
    def test_gaussian_value_and_artifacts(self, tmp_path, capsys):
        path = write_config(tmp_path, gaussian_optimal_config())
        out = tmp_path / "out"
        assert main(["optimal", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["results"]["bmax"] - 1.0 / 11.0) <= 1e-6
        assert (out / "least_favorable.csv").exists()
        assert (out / "bound.csv").exists()
        assert report["artifacts"] == ["bound.csv", "least_favorable.csv"]

    def test_determinism_byte_identical(self, tmp_path):
        path = write_config(tmp_path, gaussian_optimal_config(nodes=401))
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["optimal", "--config", path, "--out", str(out1)]) == 0
        assert main(["optimal", "--config", path, "--out", str(out2)]) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "bound.csv").read_bytes() == (out2 / "bound.csv").read_bytes()

    def test_round_trip_from_embedded_config(self, tmp_path):
        path = write_config(tmp_path, gaussian_optimal_config(nodes=401))
        out1 = tmp_path / "o1"
        main(["optimal", "--config", path, "--out", str(out1)])
        report = json.loads((out1 / "report.json").read_text())
        embedded = write_config(tmp_path, report["config"], "embedded.json")
        out2 = tmp_path / "o2"
        main(["optimal", "--config", embedded, "--out", str(out2)])
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_grid_scale_refines(self, tmp_path):
        path = write_config(tmp_path, gaussian_optimal_config(nodes=201))
        out = tmp_path / "o"
        assert main(["optimal", "--config", path, "--out", str(out),
                     "--grid-scale", "4"]) == 0
        report = json.loads((out / "report.json").read_text())
        rows = (out / "least_favorable.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 801


class TestBoundScenario:
    def test_unit_v_gaussian(self, tmp_path):
        cfg = gaussian_optimal_config()
        cfg["kind"] = "bound"
        cfg["v"] = {"choice": "unit"}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["bound", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["results"]["bound_report"]["bound"] - 1.0 / 11.0) <= 1e-6

    def test_van_trees_choice(self, tmp_path):
        cfg = gaussian_optimal_config()
        cfg["kind"] = "bound"
        cfg["v"] = {"choice": "van_trees"}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["bound", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["results"]["bound_report"]["bound"] - 1.0 / 11.0) <= 1e-6


class TestMinimaxScenario:
    def test_quadratic_rate_csv(self, tmp_path):
        cfg = {
            "kind": "minimax",
            "name": "harmonic-rates",
            "potential": {"type": "power", "exponent": 2.0, "amplitude": 1.0},
            "domain": {"half_width": 0.5, "nodes": 1501},
            "n_list": {"start": 1e2, "stop": 1e6, "count": 5},
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["minimax", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["results"]["slope"] + 0.5) <= 0.05
        rows = (out / "rates.csv").read_text().strip().splitlines()
        assert rows[0] == "n,e_min,b_worst"
        assert len(rows) == 6


class TestQuantumScenario:
    def test_qubit_snr(self, tmp_path):
        cfg = {"kind": "quantum", "name": "qubit-snr", "problem": "qubit",
               "theta": 0.35, "snr_trials": 50}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["quantum", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        res = report["results"]
        assert res["all_bounded"] is True
        assert res["equality_gap"] <= 1e-8

    def test_gaussian_shift(self, tmp_path):
        cfg = {
            "kind": "quantum", "name": "shift", "problem": "gaussian_shift",
            "helstrom": [[2.0]], "prior_curvature": [[1.0]],
            "weight_vector": [1.0],
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["quantum", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        assert abs(res["qmax"] - 1.0 / 3.0) <= 1e-12
        assert abs(res["achieved_risk"] - 0.5) <= 1e-12
        assert res["sandwich_holds"] is True

    def test_seed_changes_random_sweep(self, tmp_path):
        cfg = {"kind": "quantum", "name": "qubit-snr", "problem": "qubit",
               "theta": 0.35, "snr_trials": 8}
        path = write_config(tmp_path, cfg)
        o1, o2, o3 = (tmp_path / x for x in ("a", "b", "c"))
        main(["quantum", "--config", path, "--out", str(o1)])
        main(["quantum", "--config", path, "--out", str(o2)])
        main(["quantum", "--config", path, "--out", str(o3), "--seed", "7"])
        r1 = (o1 / "report.json").read_bytes()
        r2 = (o2 / "report.json").read_bytes()
        r3 = json.loads((o3 / "report.json").read_text())
        assert r1 == r2  # same default seed -> byte identical
        assert r3["seed"] == 7


class TestWaveformScenario:
    def test_rectangle_with_circulant_sweep(self, tmp_path):
        cfg = {
            "kind": "waveform",
            "name": "rectangle",
            "spectra": {"type": "rectangle", "nodes": 400001},
            "discretization": {"slots": 2048, "dt": 0.25,
                               "sweep": [128, 512, 2048]},
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["waveform", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        assert abs(res["qmax"] - 0.5) <= 5e-6
        assert abs(res["circulant_bound"] - 0.5) <= 0.01 * 0.5
        rows = (out / "circulant.csv").read_text().strip().splitlines()
        assert len(rows) == 4

    def test_csv_spectra_with_violations(self, tmp_path):
        import csv

        omega = np.linspace(-40, 40, 4001)
        spath = tmp_path / "spec.csv"
        with open(spath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega", "s_q", "s_theta", "s_z", "h_abs2", "hx_abs2"])
            for w in omega:
                writer.writerow([w, 0.25, 1.0 / (1.0 + w * w) ** 2,
                                 0.5 * 1.0, 1.0 / (1.0 + w * w), 1.0])
        cfg = {"kind": "waveform", "name": "csv-case",
               "spectra": {"csv": str(spath)}}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["waveform", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        # noise floor: S_Z/|hX|^2 = 0.5 < 1/(4*0.25) = 1 -> violated everywhere
        assert len(res["violations"]) == 4001
        omegas = [v["omega"] for v in res["violations"]]
        assert omegas == sorted(omegas)
        assert "wiener_risk" in res


class TestImagingScenario:
    def test_fisher_task(self, tmp_path):
        cfg = {"kind": "imaging", "name": "one-source",
               "psf": {"catalog": "gaussian", "sigma": 1.0},
               "task": "fisher", "sources": [0.0]}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["imaging", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        assert abs(res["fisher"][0][0] - 1.0) <= 1e-3

    def test_rank_table(self, tmp_path):
        cfg = {"kind": "imaging", "name": "rank-trend",
               "psf": {"catalog": "gaussian", "sigma": 1.0},
               "task": "helstrom_rank", "halvings": 2}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["imaging", "--config", path, "--out", str(out)]) == 0
        rows = (out / "eigenvalues.csv").read_text().strip().splitlines()
        assert rows[0] == "scale,lambda1,lambda2,lambda3"
        assert len(rows) == 4
        res = json.loads((out / "report.json").read_text())["results"]
        assert res["rank_trend_monotone"] is True


class TestInvarianceScenario:
    def test_cube_map_report(self, tmp_path):
        cfg = {
            "kind": "invariance",
            "name": "cube-map",
            "grid": {"lower": 0.5, "upper": 2.0, "nodes": 2001},
            "model": {
                "fisher": {"type": "polynomial", "coeffs": [1.0, 0.0, 1.0]},
                "weight": {"type": "constant", "value": 1.0},
            },
            "prior": {"type": "gaussian_bump", "center": 1.2, "variance": 0.09},
            "v": {"choice": "unit"},
            "n": 10.0,
            "map": {"catalog": "odd_power", "power": 3, "target_nodes": 9001},
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["invariance", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        assert res["relative_difference"] <= 1e-5
        assert res["control_relative_difference"] > 1e-3
        assert res["invariant"] is True


class TestNumericalFailureExit:
    def test_boundary_violation_exit_3(self, tmp_path, capsys):
        cfg = gaussian_optimal_config(nodes=201)
        cfg["kind"] = "bound"
        cfg["prior"] = {"type": "uniform"}  # rho*v cannot vanish on the boundary
        cfg["v"] = {"choice": "unit"}
        path = write_config(tmp_path, cfg)
        code = main(["bound", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 3
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip()


class TestShippedConfigs:
    def test_all_shipped_configs_validate(self):
        import glob

        paths = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..",
                                              "configs", "*.json")))
        assert len(paths) >= 7
        kinds = set()
        for path in paths:
            cfg = load_config(path)
            kinds.add(cfg["kind"])
        assert kinds == {"bound", "optimal", "minimax", "quantum", "waveform",
                         "imaging", "invariance"}

    def test_imaging_rate_task(self, tmp_path):
        cfg = {
            "kind": "imaging", "name": "rate-task",
            "psf": {"catalog": "gaussian", "sigma": 1.0},
            "task": "rate", "direction": [1.0, -1.0],
            "n_list": {"start": 1e2, "stop": 1e5, "count": 4},
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["imaging", "--config", path, "--out", str(out)]) == 0
        res = json.loads((out / "report.json").read_text())["results"]
        assert abs(res["slope"] + 0.5) <= 0.1
