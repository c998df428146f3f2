import json

import numpy as np
import pytest

from relspeaker.cli import main
from relspeaker.config import (EncoderConfig, EvalConfig, RelationNetConfig,
                               RunConfig, TrainConfig, save_config)
from relspeaker.data import load_manifest
from relspeaker.evaluation import make_trial_list, save_trials


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Corpus + config + one trained checkpoint, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--out-dir", str(root / "corpus"),
                 "--n-speakers", "5", "--n-heldout", "2",
                 "--clips-per-speaker", "5", "--clip-seconds", "1.0",
                 "--seed", "3"]) == 0
    cfg = RunConfig(
        encoder=EncoderConfig(channels=32, embedding_dim=8,
                              attention_bottleneck=8, res2net_scale=4),
        relation=RelationNetConfig(embedding_dim=8, hidden_dims=(16,)),
        train=TrainConfig(n_way=2, k_shot=1, n_query=2, epochs_local=2,
                          epochs_finetune=1, episodes_per_epoch=2,
                          val_targets=10, val_nontargets=10),
        eval=EvalConfig(ident_q=3),
        manifest_path=str(root / "corpus" / "manifest.tsv"),
    )
    save_config(cfg, root / "config.json")
    assert main(["train", "--config", str(root / "config.json"),
                 "--seed", "7", "--run-dir", str(root / "run")]) == 0
    manifest = load_manifest(root / "corpus" / "manifest.tsv")
    trials = make_trial_list(manifest.clips_by_speaker("test"), 15, 15,
                             np.random.default_rng(0))
    save_trials(trials, root / "trials.txt")
    return root


class TestSynthData:
    def test_counts(self, cli_workspace):
        manifest = load_manifest(cli_workspace / "corpus" / "manifest.tsv")
        assert len(manifest.entries) == 25


class TestTrain:
    def test_run_dir_contents(self, cli_workspace):
        run = cli_workspace / "run"
        assert (run / "config.json").is_file()
        assert (run / "metrics.log").is_file()
        assert (run / "checkpoints" / "final" / "params.npz").is_file()

    def test_same_seed_identical_metrics(self, cli_workspace, tmp_path):
        assert main(["train", "--config", str(cli_workspace / "config.json"),
                     "--seed", "7", "--run-dir", str(tmp_path / "rerun")]) == 0
        assert ((tmp_path / "rerun" / "metrics.log").read_text()
                .count("\n")) == (cli_workspace / "run" / "metrics.log").read_text().count("\n")
        a = [json.loads(l)["total"] for l in
             (cli_workspace / "run" / "metrics.log").read_text().splitlines()]
        b = [json.loads(l)["total"] for l in
             (tmp_path / "rerun" / "metrics.log").read_text().splitlines()]
        assert a == b

    def test_invalid_config_nonzero_exit(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text('{"no_such_key": 1}')
        assert main(["train", "--config", str(tmp_path / "bad.json"),
                     "--run-dir", str(tmp_path / "r")]) == 1
        record = json.loads(capsys.readouterr().err)
        assert "unknown keys" in record["error"]


class TestEvalVerify:
    def test_report_written(self, cli_workspace, capsys):
        assert main(["eval-verify",
                     "--checkpoint", str(cli_workspace / "run" / "checkpoints" / "final"),
                     "--trials", str(cli_workspace / "trials.txt"),
                     "--run-dir", str(cli_workspace / "verify")]) == 0
        report = json.loads((cli_workspace / "verify" / "verification_report.json")
                            .read_text())
        assert 0.0 <= report["eer"] <= 1.0
        assert report["min_dcf"] <= 1.0 + 1e-9
        assert report["n_trials"] == 30
        scores = (cli_workspace / "verify" / "scores.txt").read_text().splitlines()
        assert len(scores) == 30
        assert all(len(l.split()) == 3 for l in scores)


class TestEvalIdentify:
    def test_report_written(self, cli_workspace):
        assert main(["eval-identify",
                     "--checkpoint", str(cli_workspace / "run" / "checkpoints" / "final"),
                     "--n-way", "2", "--episodes", "10", "--seed", "0",
                     "--run-dir", str(cli_workspace / "ident")]) == 0
        report = json.loads((cli_workspace / "ident" / "identification_report.json")
                            .read_text())
        assert report["n_way"] == 2
        assert 0.0 <= report["mean_accuracy"] <= 1.0


class TestExportAndPlot:
    def test_export_embeddings(self, cli_workspace):
        assert main(["export-embeddings",
                     "--checkpoint", str(cli_workspace / "run" / "checkpoints" / "final"),
                     "--split", "test",
                     "--run-dir", str(cli_workspace / "emb")]) == 0
        with np.load(cli_workspace / "emb" / "embeddings.npz") as npz:
            assert len(npz.files) == 10  # 2 held-out speakers x 5 clips
            assert npz[npz.files[0]].shape == (8,)

    def test_plot_curves(self, cli_workspace):
        assert main(["plot-curves", "--run-dir", str(cli_workspace / "plots"),
                     str(cli_workspace / "run" / "metrics.log"),
                     str(cli_workspace / "run" / "metrics.log")]) == 0
        assert (cli_workspace / "plots" / "convergence.png").stat().st_size > 0
