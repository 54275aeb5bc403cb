import json
from pathlib import Path

import numpy as np
import pytest

from restyle.cli import main
from restyle.synthetic import generate_marker_corpus, write_corpus_files


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """Tiny corpus on disk plus a config file sized for fast CLI runs."""
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    corpus = generate_marker_corpus(n_train=400, n_dev=80, n_test=40, seed=3)
    write_corpus_files(corpus, corpus_dir)
    cfg_path = root / "config.ini"
    cfg_path.write_text(f"""
[run]
root_seed = 11

[data]
train_style0 = {corpus_dir}/train.style0.txt
train_style1 = {corpus_dir}/train.style1.txt
dev_style0 = {corpus_dir}/dev.style0.txt
dev_style1 = {corpus_dir}/dev.style1.txt
test_style0 = {corpus_dir}/test.style0.txt
test_style1 = {corpus_dir}/test.style1.txt
test_refs_style0 = {",".join(str(corpus_dir / f"test.style0.ref{r}.txt") for r in range(4))}
test_refs_style1 = {",".join(str(corpus_dir / f"test.style1.ref{r}.txt") for r in range(4))}
min_freq = 1

[classifier]
embed_dim = 24
num_filters = 12
epochs = 3

[lm]
embed_dim = 16
hidden_dim = 16
epochs = 2

[model]
embed_dim = 24
hidden_dim = 24
attn_dim = 24
head_dim = 12
style_dim = 8
mlp_dim = 16

[stage1]
epochs = 4
learning_rate = 2e-3
optimizer = adam
patience = 2

[stage2]
epochs = 1
learning_rate = 1e-3
clip_norm = 1.0
optimizer = adam
gumbel_noise = false
""")
    run_dir = root / "run"
    return {"root": root, "config": str(cfg_path), "run_dir": str(run_dir),
            "corpus_dir": corpus_dir, "corpus": corpus}


def run_cli(cli_env, *argv):
    return main(["--config", cli_env["config"], "--run-dir", cli_env["run_dir"],
                 *argv])


class TestPipelineCommands:
    def test_01_missing_dependency_named(self, cli_env, capsys):
        rc = run_cli(cli_env, "train-stage1")
        captured = capsys.readouterr()
        assert rc == 3
        assert "error: missing-dependency:" in captured.err
        assert "classifier" in captured.err

    def test_02_train_classifier(self, cli_env, capsys):
        assert run_cli(cli_env, "train-classifier") == 0
        out = capsys.readouterr().out
        assert "held-out accuracy" in out
        run_dir = Path(cli_env["run_dir"])
        assert (run_dir / "classifier.ckpt").exists()
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert "classifier.ckpt" in manifest["artifacts"]
        assert manifest["classifier_dev_accuracy"] > 0.9

    def test_03_train_lms(self, cli_env):
        assert run_cli(cli_env, "train-lm") == 0
        run_dir = Path(cli_env["run_dir"])
        for style in (0, 1):
            for direction in ("forward", "backward"):
                assert (run_dir / f"lm.{style}.{direction}.ckpt").exists()

    def test_04_train_stage1(self, cli_env, capsys):
        assert run_cli(cli_env, "train-stage1") == 0
        out = capsys.readouterr().out
        assert "token_accuracy" in out
        run_dir = Path(cli_env["run_dir"])
        assert (run_dir / "stage1.ckpt").exists()
        assert (run_dir / "train_log.stage1.csv").exists()
        header = (run_dir / "train_log.stage1.csv").read_text().splitlines()[0]
        assert header == "step,l_sr,l_xlambda,l_st,l_ylambda,l_cp,l_lm,total,grad_norm_preclip"

    def test_05_train_stage2(self, cli_env):
        assert run_cli(cli_env, "train-stage2") == 0
        assert (Path(cli_env["run_dir"]) / "stage2.ckpt").exists()

    def test_06_transfer_with_relevance_dump(self, cli_env, capsys):
        src = Path(cli_env["run_dir"]) / "transfer_in.txt"
        src.write_text("the food was awful .\nmy room looked dreadful today .\n")
        rc = run_cli(cli_env, "transfer", "--target-style", "1", "--input", str(src),
                     "--dump-relevance")
        out = capsys.readouterr().out
        assert rc == 0
        rel = Path(cli_env["run_dir"]) / "relevance.jsonl"
        assert rel.exists()
        records = [json.loads(line) for line in rel.read_text().splitlines()]
        assert len(records) == 2
        assert set(records[0]) == {"input", "output_tokens", "lambda"}
        assert len(records[0]["lambda"]) == len(records[0]["output_tokens"])
        assert "\t" in out  # token<TAB>lambda lines

    def test_07_evaluate_outputs(self, cli_env, capsys):
        run_dir = Path(cli_env["run_dir"])
        corpus_dir = cli_env["corpus_dir"]
        rc = run_cli(cli_env, "transfer", "--target-style", "1",
                     "--input", str(corpus_dir / "test.style0.input.txt"),
                     "--output", str(run_dir / "eval_outputs.txt"))
        assert rc == 0
        refs = ",".join(str(corpus_dir / f"test.style0.ref{r}.txt") for r in range(4))
        rc = run_cli(cli_env, "evaluate", "--outputs", str(run_dir / "eval_outputs.txt"),
                     "--refs", refs, "--target-style", "1")
        out = capsys.readouterr().out
        assert rc == 0
        assert "Acc" in out and "BLEU" in out
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert set(metrics) == {"acc", "bleu", "g2", "h2", "n_sentences"}

    def test_08_metrics_recomputable_from_artifacts(self, cli_env, capsys):
        run_dir = Path(cli_env["run_dir"])
        corpus_dir = cli_env["corpus_dir"]
        refs = ",".join(str(corpus_dir / f"test.style0.ref{r}.txt") for r in range(4))
        first = json.loads((run_dir / "metrics.json").read_text())
        rc = run_cli(cli_env, "evaluate", "--outputs", str(run_dir / "eval_outputs.txt"),
                     "--refs", refs, "--target-style", "1")
        capsys.readouterr()
        assert rc == 0
        again = json.loads((run_dir / "metrics.json").read_text())
        assert first == again

    def test_09_lrp_inspect_format(self, cli_env, capsys):
        src = Path(cli_env["run_dir"]) / "inspect_in.txt"
        src.write_text("the food was great .\n")
        rc = run_cli(cli_env, "lrp-inspect", "--input", str(src))
        out = capsys.readouterr().out
        assert rc == 0
        lines = [l for l in out.splitlines() if l]
        assert len(lines) == 5
        for line in lines:
            tok, lam, raw = line.split("\t")
            float(lam), float(raw)
        rel = Path(cli_env["run_dir"]) / "relevance.jsonl"
        record = json.loads(rel.read_text().splitlines()[0])
        assert set(record) >= {"sentence", "tokens", "lambda", "raw_relevance",
                               "eta", "epsilon"}

    def test_10_ablate_appends_csv(self, cli_env, capsys):
        rc = run_cli(cli_env, "ablate", "--variant", "no-nsc")
        capsys.readouterr()
        assert rc == 0
        csv_path = Path(cli_env["run_dir"]) / "ablations.csv"
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "variant,acc,bleu,g2,h2,n_sentences"
        assert lines[1].startswith("no-nsc,")

    def test_11_manifest_artifacts_exist_and_hash(self, cli_env):
        run_dir = Path(cli_env["run_dir"])
        manifest = json.loads((run_dir / "manifest.json").read_text())
        from restyle.checkpoint import file_hash
        for name, digest in manifest["artifacts"].items():
            assert (run_dir / name).exists()
        assert manifest["artifacts"]["stage1.ckpt"] == file_hash(run_dir / "stage1.ckpt")
        assert manifest["root_seed"] == 11
        assert "stage1" in manifest["seeds"]

    def test_12_unknown_variant_rejected(self, cli_env, capsys):
        rc = run_cli(cli_env, "ablate", "--variant", "bogus")
        captured = capsys.readouterr()
        assert rc == 1
        assert "error:" in captured.err


class TestGradcheckCommand:
    def test_gradcheck_passes_and_prints_error(self, capsys):
        rc = main(["gradcheck", "--coords-per-param", "2"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "overall max relative error" in out
        for name in ("l_sr", "l_xlambda", "l_st", "l_ylambda", "l_cp", "l_lm",
                     "l2_combined"):
            assert name in out

    def test_gradcheck_threshold_failure(self, capsys):
        rc = main(["gradcheck", "--coords-per-param", "1", "--threshold", "1e-12"])
        captured = capsys.readouterr()
        assert rc == 1
        assert "error: gradcheck-failed:" in captured.err


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[stage2]\nbogus = 1\n")
        rc = main(["--config", str(bad), "gradcheck"])
        assert rc == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_set_overrides(self, capsys):
        rc = main(["--set", "stage2.alpha=2.5", "gradcheck", "--coords-per-param", "1"])
        assert rc == 0
