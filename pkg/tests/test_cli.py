"""
Тесты командной строки: стадии конвейера, коды возврата и слои конфигурации
"""

import json
import shutil
from pathlib import Path

import pandas as pd
import pytest
import torch

from main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from src.models.config import DATA_ROOT_ENV, RunConfig

TRAIN_FLAGS = ["--epochs", "1", "--batch-size", "4", "--seed", "0"]


def run(argv, log_file: Path) -> int:
    return main([*argv, "--log-file", str(log_file)])


def run_pipeline(corpus: Path, workdir: Path) -> Path:
    """Эксперты по двум доменам, MoE enhanced и оценка всех систем"""
    log = workdir / "pipeline.log"
    experts = []
    for k in range(2):
        out = workdir / f"expert_synth_{k}"
        code = run(["train-expert", "--manifest", str(corpus / f"manifest_synth_{k}.csv"),
                    "--out", str(out), *TRAIN_FLAGS], log)
        assert code == EXIT_OK
        experts.append(str(out))

    manifests = [str(corpus / f"manifest_synth_{k}.csv") for k in range(2)]
    moe = workdir / "moe_enhanced"
    assert run(["train-moe", "--variant", "enhanced", "--experts", *experts,
                "--manifests", *manifests, "--out", str(moe), *TRAIN_FLAGS], log) == EXIT_OK

    reports = workdir / "reports"
    assert run(["evaluate", "--model", *experts, str(moe), "--ensemble", *experts,
                "--manifests", str(corpus / "manifest.csv"), "--out", str(reports), "--seed", "0"],
               log) == EXIT_OK
    return reports


@pytest.fixture(autouse=True)
def no_data_root_env(monkeypatch):
    monkeypatch.delenv(DATA_ROOT_ENV, raising=False)


@pytest.fixture(scope="module")
def pipeline(tiny_corpus, tmp_path_factory):
    with pytest.MonkeyPatch.context() as patch:
        patch.delenv(DATA_ROOT_ENV, raising=False)
        workdir = tmp_path_factory.mktemp("pipeline")
        return workdir, run_pipeline(tiny_corpus, workdir)


class TestSynthCorpusCommand:

    def test_happy_path(self, tmp_path):
        out = tmp_path / "corpus"
        code = run(["synth-corpus", "--out", str(out), "--domains", "2", "--per-domain", "8",
                    "--unseen", "1", "--clip-seconds", "0.5", "--seed", "4"], tmp_path / "run.log")
        assert code == EXIT_OK
        assert len(list(out.rglob("*.wav"))) == 48
        frame = pd.read_csv(out / "manifest.csv")
        assert list(frame.columns) == ["path", "label", "domain", "split"]
        assert sorted(frame["domain"].unique()) == ["synth_0", "synth_1", "unseen_0"]

        run_config = json.loads((out / "run_config.json").read_text(encoding="utf-8"))
        assert run_config["command"] == "synth-corpus"
        assert run_config["seed"] == 4
        assert run_config["inputs"]["corpus"]["clips_per_domain_per_class"] == 8

    def test_invalid_spec_is_runtime_failure(self, tmp_path):
        code = run(["synth-corpus", "--out", str(tmp_path / "c"), "--per-domain", "4"], tmp_path / "run.log")
        assert code == EXIT_FAILURE


class TestTrainingCommands:

    def test_expert_checkpoint_layout(self, pipeline):
        workdir, _ = pipeline
        ckpt = workdir / "expert_synth_0"
        for name in ("model.pt", "model.json", "train_log.csv", "run_config.json"):
            assert (ckpt / name).exists(), name
        sidecar = json.loads((ckpt / "model.json").read_text(encoding="utf-8"))
        assert sidecar["kind"] == "expert" and sidecar["domain"] == "synth_0"
        assert sidecar["arch_tag"] == "lcnn9-mel80-v1"
        log = pd.read_csv(ckpt / "train_log.csv")
        assert list(log.columns) == ["epoch", "train_loss", "dev_loss", "lr", "stopped"]
        assert len(log) == 1

    def test_moe_sidecar(self, pipeline):
        workdir, _ = pipeline
        sidecar = json.loads((workdir / "moe_enhanced" / "model.json").read_text(encoding="utf-8"))
        assert sidecar["kind"] == "moe" and sidecar["variant"] == "enhanced"
        assert sidecar["num_experts"] == 2
        assert sidecar["domains"] == ["synth_0", "synth_1"]
        assert sidecar["batch_size"] == 4

    def test_joint_baseline(self, tiny_corpus, tmp_path):
        out = tmp_path / "joint"
        code = run(["train-joint", "--manifests", str(tiny_corpus / "manifest_synth_0.csv"),
                    str(tiny_corpus / "manifest_synth_1.csv"), "--out", str(out), *TRAIN_FLAGS],
                   tmp_path / "run.log")
        assert code == EXIT_OK
        sidecar = json.loads((out / "model.json").read_text(encoding="utf-8"))
        assert sidecar["domain"] == "joint"
        assert sidecar["source_domains"] == ["synth_0", "synth_1"]

    def test_missing_manifest_is_usage_error(self, tmp_path):
        code = run(["train-expert", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path / "e")],
                   tmp_path / "run.log")
        assert code == EXIT_USAGE


class TestEvaluateCommand:

    def test_reports_written(self, pipeline):
        _, reports = pipeline
        for system in ("expert_synth_0", "expert_synth_1", "moe_enhanced", "ensemble"):
            frame = pd.read_csv(reports / f"report_{system}.csv")
            assert list(frame["dataset"]) == ["synth_0", "synth_1", "unseen_0", "Known", "All"]
            assert (reports / f"scores_{system}.csv").exists()

        table = pd.read_csv(reports / "results_table.csv")
        assert list(table["system"]) == ["expert_synth_0", "expert_synth_1", "moe_enhanced", "ensemble"]
        assert list(table.columns[-4:]) == ["Known_eer_pct", "Known_auc_pct", "All_eer_pct", "All_auc_pct"]

        run_config = json.loads((reports / "run_config.json").read_text(encoding="utf-8"))
        assert run_config["inputs"]["known_used"] == ["synth_0", "synth_1"]

    def test_explicit_known_set(self, pipeline, tiny_corpus, tmp_path):
        workdir, _ = pipeline
        code = run(["evaluate", "--model", str(workdir / "moe_enhanced"),
                    "--manifests", str(tiny_corpus / "manifest.csv"), "--known", "synth_1",
                    "--out", str(tmp_path)], tmp_path / "run.log")
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "report_moe_enhanced.csv").set_index("dataset")
        assert frame.loc["Known", "eer_pct"] == frame.loc["synth_1", "eer_pct"]

    def test_missing_model_names_path(self, tiny_corpus, tmp_path):
        missing = tmp_path / "no_such_checkpoint"
        log_file = tmp_path / "run.log"
        code = run(["evaluate", "--model", str(missing), "--manifests", str(tiny_corpus / "manifest.csv"),
                    "--out", str(tmp_path / "reports")], log_file)
        assert code == EXIT_USAGE
        assert str(missing) in log_file.read_text(encoding="utf-8")

    def test_unreadable_entries_fail_run(self, pipeline, tiny_corpus, tmp_path):
        workdir, _ = pipeline
        corpus = tmp_path / "corpus"
        shutil.copytree(tiny_corpus, corpus)
        victim = pd.read_csv(corpus / "manifest_synth_0.csv").query("split == 'eval'")["path"].iloc[0]
        (corpus / victim).unlink()

        code = run(["evaluate", "--model", str(workdir / "expert_synth_0"),
                    "--manifests", str(corpus / "manifest.csv"), "--out", str(tmp_path / "reports")],
                   tmp_path / "run.log")
        assert code == EXIT_FAILURE
        scores = pd.read_csv(tmp_path / "reports" / "scores_expert_synth_0.csv")
        assert victim not in set(scores["path"])

    def test_gate_profile(self, pipeline, tiny_corpus, tmp_path):
        workdir, _ = pipeline
        code = run(["gate-profile", "--model", str(workdir / "moe_enhanced"),
                    "--manifests", str(tiny_corpus / "manifest.csv"), "--out", str(tmp_path)],
                   tmp_path / "run.log")
        assert code == EXIT_OK
        profile = pd.read_csv(tmp_path / "gate_profile.csv")
        assert list(profile.columns) == ["dataset", "alpha_1", "alpha_2"]
        assert (profile[["alpha_1", "alpha_2"]].sum(axis=1) - 1.0).abs().max() <= 1e-5
        assert (tmp_path / "gate_synth_0.png").exists()

    def test_gate_profile_rejects_expert(self, pipeline, tiny_corpus, tmp_path):
        workdir, _ = pipeline
        code = run(["gate-profile", "--model", str(workdir / "expert_synth_0"),
                    "--manifests", str(tiny_corpus / "manifest.csv"), "--out", str(tmp_path)],
                   tmp_path / "run.log")
        assert code == EXIT_FAILURE


class TestUsage:

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["train-expert", "--manifest", "m.csv", "--out", "o", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_config_file(self, tmp_path):
        code = main(["synth-corpus", "--out", str(tmp_path), "--config", str(tmp_path / "absent.json")])
        assert code == EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"train": {"epochz": 3}}), encoding="utf-8")
        code = main(["synth-corpus", "--out", str(tmp_path), "--config", str(config)])
        assert code == EXIT_USAGE


class TestConfigLayers:

    def test_defaults(self):
        config = RunConfig.resolve(environ={})
        assert config.seed == 0 and config.data_root is None
        assert config.train.epochs == 100 and config.mel.n_mels == 80

    def test_precedence(self, tmp_path):
        config_file = tmp_path / "config.json"
        config_file.write_text(json.dumps({
            "seed": 5,
            "data_root": "/from/file",
            "train": {"epochs": 7, "patience": 3},
            "mel": {"n_mels": 64},
        }), encoding="utf-8")

        from_file = RunConfig.resolve(str(config_file), environ={})
        assert from_file.seed == 5 and from_file.train.seed == 5
        assert from_file.data_root == "/from/file"
        assert (from_file.train.epochs, from_file.mel.n_mels) == (7, 64)

        from_env = RunConfig.resolve(str(config_file), environ={DATA_ROOT_ENV: "/from/env"})
        assert from_env.data_root == "/from/env"

        overrides = {"seed": 9, "data_root": "/from/flag", "train.epochs": None, "train.patience": 11}
        from_flags = RunConfig.resolve(str(config_file), overrides, environ={DATA_ROOT_ENV: "/from/env"})
        assert from_flags.data_root == "/from/flag"
        assert from_flags.seed == 9 and from_flags.train.seed == 9
        assert (from_flags.train.epochs, from_flags.train.patience) == (7, 11)

    def test_env_data_root_used_by_cli(self, tiny_corpus, tmp_path, monkeypatch):
        relative = tmp_path / "relative.csv"
        shutil.copy(tiny_corpus / "manifest_synth_0.csv", relative)
        monkeypatch.setenv(DATA_ROOT_ENV, str(tiny_corpus))
        code = run(["train-expert", "--manifest", str(relative), "--out", str(tmp_path / "e"), *TRAIN_FLAGS],
                   tmp_path / "run.log")
        assert code == EXIT_OK
        run_config = json.loads((tmp_path / "e" / "run_config.json").read_text(encoding="utf-8"))
        assert run_config["data_root"] == str(tiny_corpus)

    def test_invalid_value(self):
        with pytest.raises(ValueError):
            RunConfig.resolve(overrides={"train.epochs": 0}, environ={})


class TestReproducibility:

    def test_pipeline_twice_gives_identical_outputs(self, tiny_corpus, tmp_path, file_handler):
        first = run_pipeline(tiny_corpus, tmp_path / "first")
        second = run_pipeline(tiny_corpus, tmp_path / "second")
        for name in ("results_table.csv", "report_moe_enhanced.csv", "scores_moe_enhanced.csv",
                     "scores_expert_synth_0.csv", "scores_ensemble.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

        checkpoints = [
            (file_handler.load_expert, "expert_synth_0"),
            (file_handler.load_expert, "expert_synth_1"),
            (file_handler.load_moe, "moe_enhanced"),
        ]
        for load, name in checkpoints:
            a = load(tmp_path / "first" / name).model.state_dict()
            b = load(tmp_path / "second" / name).model.state_dict()
            assert a.keys() == b.keys()
            for key in a:
                assert torch.equal(a[key], b[key]), f"{name}: {key}"
            assert (tmp_path / "first" / name / "train_log.csv").read_bytes() == (
                tmp_path / "second" / name / "train_log.csv"
            ).read_bytes()
