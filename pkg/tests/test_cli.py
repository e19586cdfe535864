import json

import numpy as np
import pytest

from poisonbench.cli import (
    UsageError,
    _parse_float_list,
    _parse_synthetic,
    build_synthetic_spec,
    main,
    parse_args,
)


def write_line_csv(path, n=12):
    xs = np.linspace(0.0, 1.0, n)
    rows = ["x,y"] + [f"{x},{x}" for x in xs]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def write_poisoned_csv(path, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=40)
    y = np.clip(0.3 * x + 0.4 + rng.normal(0, 0.02, 40), 0, 1)
    px = rng.uniform(size=8)
    py = np.where(0.3 * px + 0.4 < 0.5, 1.0, 0.0)
    rows = ["x,y"] + [f"{a},{b}" for a, b in zip(x, y)] + [f"{a},{b}" for a, b in zip(px, py)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestParsing:
    def test_alpha_range_five_points(self):
        assert _parse_float_list("0.04:0.20:0.04") == (0.04, 0.08, 0.12, 0.16, 0.2)

    def test_alpha_comma_list(self):
        assert _parse_float_list("0.1,0.2") == (0.1, 0.2)

    def test_synthetic_spec_fields(self):
        fields = _parse_synthetic("d=3,n=60,noise=0.05,seed=4,w=0.1;0.2;0.3,b=0.4")
        spec = build_synthetic_spec(fields)
        assert spec.d == 3 and spec.n == 60
        assert spec.true_weights == (0.1, 0.2, 0.3)
        assert spec.true_bias == 0.4

    def test_synthetic_default_weights_deterministic(self):
        a = build_synthetic_spec(_parse_synthetic("d=4,n=50,noise=0.1,seed=2"))
        b = build_synthetic_spec(_parse_synthetic("d=4,n=50,noise=0.1,seed=2"))
        assert a.true_weights == b.true_weights

    def test_sweep_config_resolution(self):
        cfg = parse_args(
            ["sweep", "--synthetic", "d=2,n=60,noise=0.1", "--attack", "nopt",
             "--alphas", "0.04:0.20:0.04"]
        )
        assert cfg.command == "sweep"
        assert cfg.options["alphas"] == (0.04, 0.08, 0.12, 0.16, 0.2)
        assert cfg.options["seed"] == 1337

    def test_missing_target_is_usage_error(self):
        with pytest.raises(UsageError, match="--target"):
            parse_args(["fit", "--csv", "data.csv"])

    def test_both_dataset_sources_rejected(self):
        with pytest.raises(UsageError, match="exactly one"):
            parse_args(["fit", "--csv", "a.csv", "--target", "y",
                        "--synthetic", "d=1,n=10,noise=0"])

    def test_defend_requires_method(self):
        with pytest.raises(UsageError, match="--method"):
            parse_args(["defend", "--synthetic", "d=1,n=10,noise=0.1"])

    def test_proda_requires_gamma(self):
        with pytest.raises(UsageError, match="--gamma"):
            parse_args(["defend", "--synthetic", "d=1,n=10,noise=0.1", "--method", "proda"])

    def test_config_file_overridden_by_flag(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("attack.alpha=0.12\nseed=9\n# comment\n", encoding="utf-8")
        cfg = parse_args(
            ["--config", str(cfg_file), "attack", "--synthetic", "d=1,n=20,noise=0.1",
             "--alpha", "0.2"]
        )
        assert cfg.options["alpha"] == 0.2  # flag wins
        assert cfg.options["seed"] == 9  # config beats default

    def test_config_file_unknown_key(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("nonsense=1\n", encoding="utf-8")
        with pytest.raises(UsageError, match="unknown config key"):
            parse_args(["--config", str(cfg_file), "fit",
                        "--synthetic", "d=1,n=10,noise=0.1"])

    def test_env_out_dir(self, monkeypatch):
        monkeypatch.setenv("POISONBENCH_OUT", "/tmp/envout")
        cfg = parse_args(["fit", "--synthetic", "d=1,n=10,noise=0.1"])
        assert cfg.options["out"] == "/tmp/envout"


class TestMainExitCodes:
    def test_usage_error_exits_2(self, tmp_path, capsys):
        code = main(["fit", "--csv", str(tmp_path / "a.csv")])
        assert code == 2
        assert "--target" in capsys.readouterr().err

    def test_help_exits_0(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--nonsense"])
        assert exc.value.code == 2

    def test_computational_failure_exits_1(self, tmp_path, capsys):
        # proda gamma below d+1 passes usage validation, fails in the defense
        csv = write_poisoned_csv(tmp_path / "p.csv")
        code = main(["defend", "--csv", str(csv), "--target", "y", "--method", "proda",
                     "--gamma", "1", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_invalid_config_creates_no_files(self, tmp_path):
        out = tmp_path / "fresh"
        code = main(["defend", "--csv", str(tmp_path / "missing.csv"), "--target", "y",
                     "--out", str(out)])
        assert code == 2  # --method missing
        assert not out.exists()


class TestFitCommand:
    def test_noiseless_line_prints_zero_mse(self, tmp_path, capsys):
        csv = write_line_csv(tmp_path / "line.csv")
        out = tmp_path / "out"
        code = main(["fit", "--csv", str(csv), "--target", "y", "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "train_mse=" in printed
        assert float(printed.split("train_mse=")[1].split()[0]) <= 1e-18
        model = json.loads((out / "line_model.json").read_text())
        assert model["family"] == "ols"
        assert abs(model["weights"][0] - 1.0) <= 1e-8
        assert (out / "line_fit.svg").exists()  # d=1 scatter+line view

    def test_auto_lambda(self, tmp_path, capsys):
        code = main(["fit", "--synthetic", "d=2,n=60,noise=0.1", "--family", "ridge",
                     "--lambda", "auto", "--out", str(tmp_path / "out")])
        assert code == 0
        assert "lambda=" in capsys.readouterr().out


class TestAttackCommand:
    def test_writes_poison_and_trace(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["attack", "--synthetic", "d=2,n=40,noise=0.1", "--alpha", "0.2",
                     "--max-iters", "2", "--out", str(out)])
        assert code == 0
        poison = (out / "synthetic_poison.csv").read_text().strip().splitlines()
        assert poison[0] == "x0,x1,y"
        assert len(poison) == 11  # floor(0.2*40/0.8) = 10 points + header
        trace = [json.loads(l) for l in (out / "synthetic_attack_trace.jsonl").read_text().splitlines()]
        assert trace[0]["iter"] == 0
        summary = json.loads((out / "synthetic_attack.json").read_text())
        assert summary["method"] == "nopt"


class TestDefendCommand:
    def test_proda_beta_in_json(self, tmp_path):
        csv = write_poisoned_csv(tmp_path / "p.csv")
        out = tmp_path / "out"
        code = main(["defend", "--csv", str(csv), "--target", "y", "--method", "proda",
                     "--gamma", "6", "--alpha", "0.2", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "p_defense.json").read_text())
        assert doc["beta_used"] == 38
        assert doc["alpha_assumed"] == 0.2
        assert len(doc["group_mses"]) == 38

    def test_trim_reports_worst_case(self, tmp_path):
        csv = write_poisoned_csv(tmp_path / "p.csv")
        out = tmp_path / "out"
        code = main(["defend", "--csv", str(csv), "--target", "y", "--method", "trim",
                     "--alpha-assumed", "0.2", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "p_defense.json").read_text())
        assert "trim_worst_case_iterations" in doc
        assert doc["max_iters"] == 100
        assert doc["iterations"] <= 100


class TestSweepAndReport:
    def test_sweep_writes_records_summary_and_plot(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["sweep", "--synthetic", "d=2,n=45,noise=0.1", "--attack", "nopt",
                     "--alphas", "0.1,0.2", "--repeats", "1", "--out", str(out),
                     "--seed", "3"])
        assert code == 0
        assert (out / "records.jsonl").exists()
        assert (out / "summary.csv").exists()
        assert (out / "mse_vs_alpha.svg").exists()
        assert (out / "mse_vs_alpha.csv").exists()

    def test_report_from_records(self, tmp_path):
        out1 = tmp_path / "a"
        main(["sweep", "--synthetic", "d=2,n=45,noise=0.1", "--alphas", "0.1,0.2",
              "--repeats", "1", "--out", str(out1), "--seed", "3"])
        out2 = tmp_path / "b"
        code = main(["report", "--records", str(out1 / "records.jsonl"), "--out", str(out2)])
        assert code == 0
        assert (out2 / "summary.csv").read_text() == (out1 / "summary.csv").read_text()
        assert (out2 / "report.txt").exists()

    def test_report_requires_records(self):
        with pytest.raises(UsageError, match="--records"):
            parse_args(["report"])
