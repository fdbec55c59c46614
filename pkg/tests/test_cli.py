import os
import csv
import json
import hashlib

import pytest

from cobound.cli import (
    EXIT_ACCEPTANCE,
    EXIT_INVALID,
    EXIT_OK,
    EXIT_RESOURCE,
    main,
)

RADEMACHER = {"alphabet": [-1, 1], "probabilities": [0.5, 0.5], "kind": "iid", "centered": True}


def model(coeffs, window=(-6, 6), seed=7):
    return {
        "law": RADEMACHER,
        "window": list(window),
        "functionals": [{"i": 0, "coeffs": coeffs}],
        "seed": seed,
    }


MA1 = {"0": 1.0, "-1": 0.5}
COBOUNDARY = {"0": 1.0, "1": -1.0}


def write_config(directory, name, data):
    path = os.path.join(str(directory), name)
    with open(path, "w") as f:
        json.dump(data, f)
    return path


def read_json(*parts):
    with open(os.path.join(*parts)) as f:
        return json.load(f)


class TestSingleCommand:
    def test_decompose(self, tmp_path):
        config = write_config(
            tmp_path,
            "ma1.json",
            {"command": "decompose", "model": model(MA1), "checks": {"residual": 1e-12, "exact": True}},
        )
        out = tmp_path / "out"
        assert main(["decompose", "--config", config, "--check", "--quiet", "--out", str(out)]) == EXIT_OK

        assert sorted(os.listdir(out)) == ["decomposition.csv", "decomposition.json", "manifest.json"]
        manifest = read_json(out, "manifest.json")
        assert manifest["command"] == "decompose"
        assert manifest["seed"] == 7
        with open(out / "decomposition.csv", "rb") as f:
            assert manifest["artifacts"]["decomposition.csv"] == hashlib.sha256(f.read()).hexdigest()

        with open(out / "decomposition.csv") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["k"]) for r in rows] == list(range(-3, 4))
        assert float(rows[0]["U_l2"]) == pytest.approx(0.5)

    def test_output_dir_from_config(self, tmp_path):
        config = write_config(
            tmp_path,
            "ma1.json",
            {"command": "verify", "model": model(MA1), "parameters": {"out": "results"}},
        )
        assert main(["verify", "--config", config, "--quiet"]) == EXIT_OK
        report = read_json(tmp_path, "results", "verification.json")["report"]
        assert max(report.values()) <= 1e-12

    def test_unknown_field_writes_nothing(self, tmp_path):
        config = write_config(
            tmp_path,
            "bad.json",
            {"command": "decompose", "model": model(MA1), "parameters": {"I_maxx": 2}},
        )
        out = tmp_path / "out"
        assert main(["decompose", "--config", config, "--out", str(out)]) == EXIT_INVALID
        assert not out.exists()

    @pytest.mark.parametrize(
        "parameters",
        [{"I_max": "2"}, {"I_max": True}, {"I_max": 2.5}, {"k_range": [0, "3"]}, {"k_range": [0]}, {"out": 3}],
    )
    def test_mistyped_parameter_writes_nothing(self, tmp_path, parameters):
        config = write_config(
            tmp_path,
            "bad.json",
            {"command": "decompose", "model": model(MA1), "parameters": parameters},
        )
        out = tmp_path / "out"
        assert main(["decompose", "--config", config, "--out", str(out)]) == EXIT_INVALID
        assert not out.exists()

    def test_command_must_match_config(self, tmp_path):
        config = write_config(tmp_path, "ma1.json", {"command": "decompose", "model": model(MA1)})
        assert main(["verify", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID

    def test_missing_config(self, tmp_path):
        assert main(["decompose", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID
        assert main(["decompose"]) == EXIT_INVALID

    def test_monte_carlo_needs_seed(self, tmp_path):
        data = {"command": "tightness", "model": model(COBOUNDARY), "parameters": {"replicas": 10}}
        del data["model"]["seed"]
        config = write_config(tmp_path, "t.json", data)
        assert main(["tightness", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID

    def test_atom_budget(self, tmp_path):
        config = write_config(
            tmp_path, "big.json", {"command": "decompose", "model": model(MA1, window=(-15, 15))}
        )
        assert main(["decompose", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_RESOURCE

    def test_failed_check_still_writes_artifacts(self, tmp_path):
        config = write_config(
            tmp_path,
            "ma1.json",
            {"command": "decompose", "model": model(MA1), "checks": {"exact": False}},
        )
        out = tmp_path / "out"
        assert main(["decompose", "--config", config, "--check", "--quiet", "--out", str(out)]) == EXIT_ACCEPTANCE
        assert (out / "decomposition.json").exists()

    def test_checks_ignored_without_flag(self, tmp_path):
        config = write_config(
            tmp_path,
            "ma1.json",
            {"command": "decompose", "model": model(MA1), "checks": {"exact": False}},
        )
        assert main(["decompose", "--config", config, "--quiet", "--out", str(tmp_path / "out")]) == EXIT_OK


class TestOrlicz:
    def test_flags_without_config(self, tmp_path):
        out = tmp_path / "orlicz"
        argv = ["orlicz", "--n", "3", "--lambda", "1.1", "--M", "2", "--quiet", "--out", str(out)]
        assert main(argv) == EXIT_OK

        (certificate,) = read_json(out, "certificates.json")
        assert certificate["n"] == 3
        assert certificate["lambda"] == 1.1
        assert certificate["partial_sum"] > 2.0
        summary = read_json(out, "orlicz.json")
        assert summary["decreasing"]
        assert all(b["bound"] >= 0.99 for b in summary["lower_bounds"])

    def test_n_needs_lambda(self, tmp_path):
        assert main(["orlicz", "--n", "3", "--out", str(tmp_path / "out")]) == EXIT_INVALID

    def test_lambda_must_exceed_one(self, tmp_path):
        out = tmp_path / "out"
        assert main(["orlicz", "--lambda", "0.5", "--out", str(out)]) == EXIT_INVALID
        assert not out.exists()

    def test_mistyped_orlicz_parameters(self, tmp_path):
        for (name, parameters) in (("a", {"lambda": "2"}), ("b", {"scales": [0.9, None]})):
            config = write_config(tmp_path, f"{name}.json", {"command": "orlicz", "parameters": parameters})
            out = tmp_path / name
            assert main(["orlicz", "--config", config, "--out", str(out)]) == EXIT_INVALID
            assert not out.exists()

    def test_divergence_cap_is_a_resource_limit(self, tmp_path):
        config = write_config(
            tmp_path,
            "slow.json",
            {
                "command": "orlicz",
                "parameters": {"N_max": 5, "n": 1, "lambda": 1.0001, "M": 1e6, "k_cap": 1000},
            },
        )
        out = tmp_path / "out"
        assert main(["orlicz", "--config", config, "--quiet", "--out", str(out)]) == EXIT_RESOURCE
        assert not out.exists()

    def test_flags_only_for_orlicz(self, tmp_path):
        config = write_config(tmp_path, "ma1.json", {"command": "decompose", "model": model(MA1)})
        assert main(["decompose", "--config", config, "--lambda", "2"]) == EXIT_INVALID


class TestMonteCarloCommands:
    def tightness(self, tmp_path):
        return write_config(
            tmp_path,
            "tight.json",
            {
                "command": "tightness",
                "model": model(COBOUNDARY, seed=99),
                "parameters": {"n_list": [10, 100], "replicas": 300},
                "checks": {"max_quantile": 2.0, "bounded": True},
            },
        )

    def test_tightness_is_reproducible(self, tmp_path):
        config = self.tightness(tmp_path)
        outputs = []
        for (name, threads) in (("a", "1"), ("b", "3")):
            out = tmp_path / name
            argv = ["tightness", "--config", config, "--check", "--quiet", "--threads", threads, "--out", str(out)]
            assert main(argv) == EXIT_OK
            with open(out / "tightness.csv") as f:
                outputs.append(f.read())
        assert outputs[0] == outputs[1]

    def test_deviations(self, tmp_path):
        config = write_config(
            tmp_path,
            "dev.json",
            {
                "command": "deviations",
                "model": model({"0": 1.0}, seed=5),
                "parameters": {"n_list": [16], "x_list": [0.25, 0.5], "replicas": 2000},
                "checks": {"azuma": True},
            },
        )
        out = tmp_path / "out"
        assert main(["deviations", "--config", config, "--check", "--quiet", "--out", str(out)]) == EXIT_OK
        with open(out / "deviations.csv") as f:
            rows = list(csv.DictReader(f))
        assert [float(r["x"]) for r in rows] == [0.25, 0.5]
        assert rows[0]["bound_iii"] == ""

    def test_limits_flag_degenerate_coboundary(self, tmp_path):
        config = write_config(
            tmp_path,
            "lim.json",
            {
                "command": "limits",
                "model": model(COBOUNDARY),
                "parameters": {"n_list": [10, 100]},
                "checks": {"martingale_part_degenerate": True},
            },
        )
        out = tmp_path / "out"
        assert main(["limits", "--config", config, "--check", "--quiet", "--out", str(out)]) == EXIT_OK
        assert read_json(out, "limits.json")["martingale_part_degenerate"] is True


class TestCheckSuite:
    def test_empty_directory(self, tmp_path):
        assert main(["check-suite", "--config", str(tmp_path), "--quiet"]) == EXIT_OK

    def test_needs_a_directory(self, tmp_path):
        assert main(["check-suite", "--config", str(tmp_path / "missing")]) == EXIT_INVALID
        assert main(["check-suite"]) == EXIT_INVALID

    def test_reports_each_config(self, tmp_path, capsys):
        suite = tmp_path / "suite"
        suite.mkdir()
        write_config(
            suite,
            "good.json",
            {"command": "decompose", "model": model(MA1), "checks": {"residual": 1e-12}},
        )
        write_config(
            suite,
            "wrong.json",
            {"command": "decompose", "model": model(MA1), "checks": {"exact": False}},
        )
        out = tmp_path / "out"
        assert main(["check-suite", "--config", str(suite), "--out", str(out)]) == EXIT_ACCEPTANCE

        printed = capsys.readouterr().out
        assert "PASS good" in printed
        assert "FAIL wrong" in printed
        assert (out / "good" / "manifest.json").exists()
        assert (out / "wrong" / "decomposition.json").exists()

    def test_invalid_config_wins_over_acceptance(self, tmp_path):
        suite = tmp_path / "suite"
        suite.mkdir()
        write_config(
            suite,
            "a_wrong.json",
            {"command": "decompose", "model": model(MA1), "checks": {"exact": False}},
        )
        write_config(suite, "b_broken.json", {"command": "decompose"})
        code = main(["check-suite", "--config", str(suite), "--out", str(tmp_path / "out"), "--quiet"])
        assert code == EXIT_INVALID

    def test_divergence_cap_does_not_stop_the_suite(self, tmp_path, capsys):
        suite = tmp_path / "suite"
        suite.mkdir()
        write_config(
            suite,
            "a_slow.json",
            {
                "command": "orlicz",
                "parameters": {"N_max": 5, "n": 1, "lambda": 1.0001, "M": 1e6, "k_cap": 1000},
            },
        )
        write_config(
            suite,
            "b_good.json",
            {"command": "decompose", "model": model(MA1), "checks": {"residual": 1e-12}},
        )
        code = main(["check-suite", "--config", str(suite), "--out", str(tmp_path / "out")])
        assert code == EXIT_RESOURCE

        printed = capsys.readouterr().out
        assert "FAIL a_slow" in printed
        assert "PASS b_good" in printed

