import csv
import json

import numpy as np
import pytest

from tcgm import probcore as pc
from tcgm.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--preset", "gaussian3", "--n", "300", "--label-rate", "0.1", "--seed", "7",
                 "--out", str(out)]) == EXIT_OK
    return out


def _read(path):
    return path.read_bytes()


def test_gen_writes_files_and_summary(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["gen", "--preset", "gaussian3", "--n", "1000", "--label-rate", "0.1", "--seed", "7",
                 "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n"] == 1000 and manifest["n_modalities"] == 3 and manifest["n_classes"] == 3
    assert len((out / "data.jsonl").read_text().splitlines()) == 1000
    text = capsys.readouterr().out
    assert "n=1000" in text and "M=3" in text and "label_rate=0.1" in text


@pytest.mark.parametrize("rate", ["1.5", "0", "-0.2"])
def test_gen_rejects_bad_label_rate(tmp_path, rate):
    assert main(["gen", "--label-rate", rate, "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_gen_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["gen", "--n", "200", "--label-rate", "0.2", "--seed", "3", "--out", str(tmp_path / name)])
    for f in ("data.jsonl", "manifest.json"):
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "b" / f)


def test_gen_discrete_from_table(tmp_path):
    t = pc.DiscreteJointTable.random_factored(np.random.default_rng(0), (2, 3), 2)
    spec = tmp_path / "table.json"
    spec.write_text(t.to_json())
    out = tmp_path / "d"
    assert main(["gen", "--preset", "discrete", "--spec-file", str(spec), "--n", "50", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["dims"] == [2, 3]
    assert main(["gen", "--preset", "discrete", "--out", str(out)]) == EXIT_USAGE


def test_train_outputs_and_determinism(tmp_path, dataset):
    args = ["train", "--data", str(dataset), "--epochs", "3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "r2")]) == EXIT_OK
    assert _read(tmp_path / "r1" / "report.csv") == _read(tmp_path / "r2" / "report.csv")
    assert (tmp_path / "r1" / "report.json").exists()
    assert (tmp_path / "r1" / "checkpoints" / "manifest.json").exists()
    rows = list(csv.DictReader(open(tmp_path / "r1" / "report.csv")))
    assert len(rows) == 3 and rows[0]["label_rate"] == "0.1"


def test_train_ce_equals_tcgm_with_zero_gamma_u(tmp_path, dataset):
    main(["train", "--data", str(dataset), "--epochs", "2", "--method", "ce", "--out", str(tmp_path / "ce")])
    main(["train", "--data", str(dataset), "--epochs", "2", "--method", "tcgm", "--gamma-u", "0",
          "--out", str(tmp_path / "tg")])
    for f in ("modality_1.json", "modality_2.json", "modality_3.json"):
        a = json.loads((tmp_path / "ce" / "checkpoints" / f).read_text())["params"]
        b = json.loads((tmp_path / "tg" / "checkpoints" / f).read_text())["params"]
        assert a == b
    ra = [r["acc_agg"] for r in csv.DictReader(open(tmp_path / "ce" / "report.csv"))]
    rb = [r["acc_agg"] for r in csv.DictReader(open(tmp_path / "tg" / "report.csv"))]
    assert ra == rb


def test_train_zero_epochs(tmp_path, dataset):
    assert main(["train", "--data", str(dataset), "--epochs", "0", "--out", str(tmp_path / "z")]) == EXIT_OK
    assert (tmp_path / "z" / "report.csv").read_text().count("\n") == 1
    assert json.loads((tmp_path / "z" / "report.json").read_text())["epochs"] == []


def test_train_defaults_follow_reference_values(tmp_path, dataset):
    main(["train", "--data", str(dataset), "--epochs", "0", "--out", str(tmp_path / "d")])
    cfg = json.loads((tmp_path / "d" / "report.json").read_text())["config"]
    assert (cfg["lr_labeled"], cfg["lr_unlabeled"], cfg["batch_size"]) == (0.01, 0.0001, 32)


def test_train_usage_errors(tmp_path, dataset):
    assert main(["train", "--data", str(tmp_path / "missing")]) == EXIT_USAGE
    assert main(["train", "--data", str(dataset), "--batch-size", "0", "--out", str(tmp_path / "e")]) == EXIT_USAGE
    assert main(["train", "--data", str(dataset), "--bogus-flag"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "gamma_u": 0.001, "data": str(dataset)}))
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(tmp_path / "c")]) == EXIT_OK
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert len(report["epochs"]) == 1
    assert report["config"]["lr_unlabeled"] == 0.001
    cfg.write_text(json.dumps({"epochs": 2, "nonsense": 1}))
    assert main(["train", "--config", str(cfg), "--data", str(dataset)]) == EXIT_USAGE


def test_output_dir_env_override(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv("TCGM_OUTPUT_DIR", str(tmp_path / "envout"))
    assert main(["train", "--data", str(dataset), "--epochs", "1"]) == EXIT_OK
    assert (tmp_path / "envout" / "report.csv").exists()


def test_eval_command(tmp_path, dataset):
    main(["train", "--data", str(dataset), "--epochs", "2", "--out", str(tmp_path / "t")])
    assert main(["eval", "--data", str(dataset), "--checkpoints", str(tmp_path / "t" / "checkpoints"),
                 "--split", "test", "--out", str(tmp_path / "e")]) == EXIT_OK
    result = json.loads((tmp_path / "e" / "eval.json").read_text())
    final = json.loads((tmp_path / "t" / "report.json").read_text())["final"]
    assert result["acc_agg"] == final["acc_agg"]
    assert 0 < result["bayes_acc"] <= 1
    assert main(["eval", "--data", str(dataset), "--checkpoints", str(tmp_path / "nope")]) == EXIT_USAGE


def test_verify_default_and_filtering(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path / "v")]) == EXIT_OK
    report = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert report["passed"] and report["max_error"] < 1e-9
    assert {c["name"] for c in report["checks"]} == {"tc", "ctc", "ptc", "dual", "fdual", "maximum", "aggregator"}
    assert main(["verify", "--checks", "ptc", "--out", str(tmp_path / "p")]) == EXIT_OK
    assert [c["name"] for c in json.loads((tmp_path / "p" / "verify.json").read_text())["checks"]] == ["ptc"]
    assert main(["verify", "--checks", "nope", "--out", str(tmp_path / "n")]) == EXIT_USAGE


def test_verify_perturb(tmp_path):
    assert main(["verify", "--checks", "tc", "--perturb", "--out", str(tmp_path / "v")]) == EXIT_OK
    checks = json.loads((tmp_path / "v" / "verify.json").read_text())["checks"]
    perturb = [c for c in checks if c["name"] == "perturb"][0]
    assert perturb["passed"] and perturb["cases"] == 20 * 200


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    from tcgm import cli
    from tcgm.verify import CheckResult

    monkeypatch.setitem(cli.CHECKS, "tc", lambda seed=0: CheckResult("tc", False, 1.0, 1e-10, 1))
    monkeypatch.setattr(cli, "run_checks", lambda names, seed=0: [cli.CHECKS[n](seed=seed) for n in names])
    assert main(["verify", "--checks", "tc", "--out", str(tmp_path / "f")]) == EXIT_FAIL


def test_sweep_grid_and_aggregate(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--n", "150", "--methods", "tcgm,ce", "--label-rates", "0.1,0.3,1.0",
                 "--seeds", "5", "--epochs", "1", "--out", str(out)]) == EXIT_OK
    detail = list(csv.DictReader(open(out / "sweep_detail.csv")))
    agg = list(csv.DictReader(open(out / "sweep_aggregate.csv")))
    assert len(detail) == 30 and len(agg) == 6
    for row in agg:
        vals = [float(d["acc_agg"]) for d in detail
                if d["method"] == row["method"] and d["label_rate"] == row["label_rate"]]
        assert len(vals) == 5
        assert float(row["acc_agg_mean"]) == pytest.approx(np.mean(vals), abs=1e-12)
        assert float(row["acc_agg_std"]) == pytest.approx(np.std(vals, ddof=1), abs=1e-12)


def test_sweep_parallel_matches_serial(tmp_path):
    base = ["sweep", "--n", "120", "--methods", "tcgm", "--label-rates", "0.2,0.5", "--seeds", "0,3",
            "--epochs", "1"]
    assert main(base + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(base + ["--workers", "2", "--out", str(tmp_path / "b")]) == EXIT_OK
    for f in ("sweep_detail.csv", "sweep_aggregate.csv"):
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "b" / f)


def test_sweep_empty_grid(tmp_path):
    assert main(["sweep", "--methods", "", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert main(["sweep", "--label-rates", "", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert main(["sweep", "--seeds", "0", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_config_label_rate_validated_and_unwritable_out(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"label_rate": 2.0}))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_USAGE
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen", "--n", "10", "--out", str(blocker / "sub")]) == EXIT_USAGE
