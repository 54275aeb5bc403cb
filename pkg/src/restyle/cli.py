"""Command-line entry point.

Subcommands: train-classifier, train-lm, train-stage1, train-stage2,
transfer, evaluate, lrp-inspect, gradcheck, ablate. Each reads its section of
the config file, writes artifacts into the run directory, and refreshes
manifest.json. Failures print one machine-parsable line ``error: <kind>:
<message>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from restyle import autodiff as ad
from restyle.checkpoint import (
    config_hash,
    file_hash,
    load_checkpoint,
    restore_params,
    save_checkpoint,
)
from restyle.config import ExperimentConfig, load_config
from restyle.data import LabeledCorpus, Vocabulary, build_vocab, load_style_files, pack_batch, read_sentences
from restyle.language_model import DirectionalLanguageModel
from restyle.lrp import calibrate_eta, hard_word_relevance
from restyle.metrics import build_report, corpus_bleu, transfer_accuracy
from restyle.pipeline import evaluate_transfer, transfer_sentences
from restyle.seq2seq import Seq2seqModel
from restyle.textcnn import TextCnnStyleClassifier
from restyle.training import (
    LambdaTargetCache,
    Stage1Trainer,
    Stage2Trainer,
    TrainLog,
    resolve_ablation,
)

EXIT_USAGE = 2
EXIT_MISSING_DEPENDENCY = 3
EXIT_FAILURE = 1


class CliError(Exception):
    kind = "runtime"
    code = EXIT_FAILURE


class MissingDependencyError(CliError):
    kind = "missing-dependency"
    code = EXIT_MISSING_DEPENDENCY


class GradCheckFailure(CliError):
    kind = "gradcheck-failed"
    code = EXIT_FAILURE


# ---------------------------------------------------------------------------
# manifest


def update_manifest(run_dir: Path, cfg: ExperimentConfig, updates: dict) -> dict:
    path = run_dir / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest.setdefault("artifacts", {})
    manifest.setdefault("corpus_hashes", {})
    manifest.setdefault("seeds", {})
    manifest["config"] = cfg.to_dict()
    manifest["config_hash"] = config_hash(cfg.to_dict())
    manifest["root_seed"] = cfg.root_seed
    for key, value in updates.items():
        if key in ("artifacts", "corpus_hashes", "seeds"):
            manifest[key].update(value)
        else:
            manifest[key] = value
    for name in manifest["artifacts"]:
        if not (run_dir / name).exists():
            raise CliError(f"manifest references missing artifact {name}")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingDependencyError(f"{what} not found at {path}")
    return path


# ---------------------------------------------------------------------------
# corpora and artifacts


def load_or_build_vocab(run_dir: Path, cfg: ExperimentConfig) -> Vocabulary:
    vpath = run_dir / "vocab.txt"
    if vpath.exists():
        return Vocabulary.load(vpath)
    sentences = []
    for path in (cfg.data.train_style0, cfg.data.train_style1):
        if not path:
            raise CliError("data.train_style0/1 must be set to build a vocabulary")
        require(Path(path), "training corpus")
        sentences.extend(_maybe_lower(read_sentences(path), cfg))
    vocab = build_vocab(sentences, min_freq=cfg.data.min_freq)
    vocab.save(vpath)
    return vocab


def _maybe_lower(sentences, cfg):
    return [s.lower() for s in sentences] if cfg.data.lowercase else sentences


def load_split(cfg: ExperimentConfig, vocab: Vocabulary, split: str) -> LabeledCorpus:
    p0 = getattr(cfg.data, f"{split}_style0")
    p1 = getattr(cfg.data, f"{split}_style1")
    if not p0 or not p1:
        raise CliError(f"data.{split}_style0/1 must be set")
    require(Path(p0), f"{split} corpus")
    require(Path(p1), f"{split} corpus")
    if cfg.data.lowercase:
        sentences, labels = [], []
        for style, p in ((0, p0), (1, p1)):
            for line in read_sentences(p):
                sentences.append(vocab.encode(line.lower()))
                labels.append(style)
        return LabeledCorpus(sentences, labels)
    return load_style_files(p0, p1, vocab)


def corpus_file_hashes(cfg: ExperimentConfig, split: str) -> dict:
    out = {}
    for style in (0, 1):
        p = getattr(cfg.data, f"{split}_style{style}")
        if p and Path(p).exists():
            out[f"{split}.style{style}"] = file_hash(p)
    return out


def save_classifier(path: Path, clf: TextCnnStyleClassifier, vocab: Vocabulary,
                    cfg: ExperimentConfig) -> None:
    header = {"kind": "classifier", "vocab_hash": vocab.content_hash(),
              "embed_dim": clf.embed_dim, "num_filters": clf.num_filters,
              "filter_widths": list(clf.filter_widths),
              "config_hash": config_hash(cfg.to_dict()), "seed": clf.seed}
    save_checkpoint(path, clf.params_, header)


def load_classifier(path: Path, vocab: Vocabulary) -> TextCnnStyleClassifier:
    header, arrays = load_checkpoint(require(path, "classifier checkpoint"))
    if header.get("kind") != "classifier":
        raise CliError(f"{path} is not a classifier checkpoint")
    if header["vocab_hash"] != vocab.content_hash():
        raise CliError(f"classifier checkpoint {path} was trained on a different vocabulary")
    clf = TextCnnStyleClassifier(vocab_size=len(vocab), embed_dim=header["embed_dim"],
                                 num_filters=header["num_filters"],
                                 filter_widths=tuple(header["filter_widths"]),
                                 seed=header.get("seed", 0))
    clf._init_params()
    restore_params(clf.params_, arrays)
    return clf


def save_lm(path: Path, lm: DirectionalLanguageModel, vocab: Vocabulary,
            cfg: ExperimentConfig) -> None:
    header = {"kind": "lm", "style": lm.style, "direction": lm.direction,
              "vocab_hash": vocab.content_hash(), "embed_dim": lm.embed_dim,
              "hidden_dim": lm.hidden_dim,
              "config_hash": config_hash(cfg.to_dict()), "seed": lm.seed}
    save_checkpoint(path, lm.params_, header)


def load_lm(path: Path, vocab: Vocabulary) -> DirectionalLanguageModel:
    header, arrays = load_checkpoint(require(path, "language-model checkpoint"))
    if header.get("kind") != "lm":
        raise CliError(f"{path} is not a language-model checkpoint")
    if header["vocab_hash"] != vocab.content_hash():
        raise CliError(f"lm checkpoint {path} was trained on a different vocabulary")
    lm = DirectionalLanguageModel(vocab_size=len(vocab), style=header["style"],
                                  direction=header["direction"],
                                  embed_dim=header["embed_dim"],
                                  hidden_dim=header["hidden_dim"],
                                  seed=header.get("seed", 0))
    lm._init_params()
    restore_params(lm.params_, arrays)
    return lm


def save_seq2seq(path: Path, model: Seq2seqModel, vocab: Vocabulary, stage: int,
                 cfg: ExperimentConfig, eta: float, epsilon: float) -> None:
    header = {"kind": "seq2seq", "stage": stage, "vocab_hash": vocab.content_hash(),
              "embed_dim": model.embed_dim, "hidden_dim": model.hidden_dim,
              "attn_dim": model.attn_dim, "head_dim": model.head_dim,
              "style_dim": model.style_dim, "mlp_dim": model.mlp_dim,
              "eta": eta, "epsilon": epsilon,
              "config_hash": config_hash(cfg.to_dict()), "seed": model.seed}
    save_checkpoint(path, model.params, header)


def load_seq2seq(path: Path, vocab: Vocabulary, what: str = "model checkpoint"):
    header, arrays = load_checkpoint(require(path, what))
    if header.get("kind") != "seq2seq":
        raise CliError(f"{path} is not a sequence-model checkpoint")
    if header["vocab_hash"] != vocab.content_hash():
        raise CliError(f"checkpoint {path} was trained on a different vocabulary")
    model = Seq2seqModel(len(vocab), embed_dim=header["embed_dim"],
                         hidden_dim=header["hidden_dim"], attn_dim=header["attn_dim"],
                         head_dim=header["head_dim"], style_dim=header["style_dim"],
                         mlp_dim=header["mlp_dim"], seed=header.get("seed", 0))
    restore_params(model.params, arrays)
    return model, header


def resolve_eta(cfg: ExperimentConfig, clf, corpus) -> float:
    if cfg.lrp.eta == "auto":
        return calibrate_eta(clf, corpus.sentences, corpus.labels,
                             target_lambda=cfg.lrp.eta_target,
                             seed=cfg.seed_for("eta"))
    return float(cfg.lrp.eta)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_classifier(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab = load_or_build_vocab(run_dir, cfg)
    train = load_split(cfg, vocab, "train")
    seed = cfg.seed_for("classifier")
    clf = TextCnnStyleClassifier(vocab_size=len(vocab),
                                 embed_dim=cfg.classifier.embed_dim,
                                 num_filters=cfg.classifier.num_filters,
                                 filter_widths=cfg.classifier.filter_widths,
                                 epochs=cfg.classifier.epochs,
                                 learning_rate=cfg.classifier.learning_rate,
                                 clip_norm=cfg.classifier.clip_norm,
                                 batch_size=cfg.classifier.batch_size,
                                 optimizer=cfg.classifier.optimizer,
                                 label_smoothing=cfg.classifier.label_smoothing,
                                 word_dropout=cfg.classifier.word_dropout,
                                 seed=seed)
    clf.fit(train.sentences, train.labels)
    save_classifier(run_dir / "classifier.ckpt", clf, vocab, cfg)
    update_manifest(run_dir, cfg, {
        "artifacts": {"classifier.ckpt": file_hash(run_dir / "classifier.ckpt"),
                      "vocab.txt": file_hash(run_dir / "vocab.txt")},
        "corpus_hashes": corpus_file_hashes(cfg, "train"),
        "seeds": {"classifier": seed},
        "classifier_dev_accuracy": clf.dev_accuracy_,
    })
    print(f"classifier trained: held-out accuracy {clf.dev_accuracy_:.4f}")
    return 0


def cmd_train_lm(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab = load_or_build_vocab(run_dir, cfg)
    train = load_split(cfg, vocab, "train")
    styles = [args.style] if args.style is not None else [0, 1]
    directions = [args.direction] if args.direction else ["forward", "backward"]
    updates = {"artifacts": {}, "seeds": {}}
    for style in styles:
        styled = train.by_style(style)
        for direction in directions:
            seed = cfg.seed_for(f"lm.{style}.{direction}")
            lm = DirectionalLanguageModel(vocab_size=len(vocab), style=style,
                                          direction=direction,
                                          embed_dim=cfg.lm.embed_dim,
                                          hidden_dim=cfg.lm.hidden_dim,
                                          epochs=cfg.lm.epochs,
                                          learning_rate=cfg.lm.learning_rate,
                                          clip_norm=cfg.lm.clip_norm,
                                          batch_size=cfg.lm.batch_size,
                                          max_len=cfg.data.max_len,
                                          optimizer=cfg.lm.optimizer, seed=seed)
            lm.fit(styled.sentences)
            name = f"lm.{style}.{direction}.ckpt"
            save_lm(run_dir / name, lm, vocab, cfg)
            updates["artifacts"][name] = file_hash(run_dir / name)
            updates["seeds"][f"lm.{style}.{direction}"] = seed
            print(f"lm style={style} direction={direction}: "
                  f"held-out perplexity {lm.dev_perplexity_:.3f}")
    update_manifest(run_dir, cfg, updates)
    return 0


def cmd_train_stage1(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab = load_or_build_vocab(run_dir, cfg)
    clf = load_classifier(run_dir / "classifier.ckpt", vocab)
    train = load_split(cfg, vocab, "train")
    dev = load_split(cfg, vocab, "dev") if cfg.data.dev_style0 else None
    eta = resolve_eta(cfg, clf, train)
    lrp_cfg = cfg.lrp_config(calibrated_eta=eta)
    cache = LambdaTargetCache(clf, lrp_cfg)
    cache.precompute(train)
    model = Seq2seqModel(len(vocab), embed_dim=cfg.model.embed_dim,
                         hidden_dim=cfg.model.hidden_dim, attn_dim=cfg.model.attn_dim,
                         head_dim=cfg.model.head_dim, style_dim=cfg.model.style_dim,
                         mlp_dim=cfg.model.mlp_dim, seed=cfg.seed_for("stage1-init"))
    cfg.stage1.max_len = cfg.data.max_len
    log = TrainLog(run_dir / "train_log.stage1.csv")
    trainer = Stage1Trainer(model, clf, cache, cfg.stage1, train, dev_corpus=dev,
                            log=log)
    trainer.train()
    log.close()
    metrics = trainer.evaluate(dev if dev is not None else train)
    save_seq2seq(run_dir / "stage1.ckpt", model, vocab, 1, cfg, eta, lrp_cfg.epsilon)
    update_manifest(run_dir, cfg, {
        "artifacts": {"stage1.ckpt": file_hash(run_dir / "stage1.ckpt")},
        "seeds": {"stage1": cfg.stage1.seed},
        "eta": eta,
        "stage1_metrics": metrics,
    })
    print(f"stage1 trained: token_accuracy {metrics['token_accuracy']:.4f} "
          f"relevance_mse {metrics['relevance_mse']:.5f} (eta {eta:.4f})")
    return 0


def _load_lms(run_dir: Path, vocab: Vocabulary) -> dict:
    lms = {}
    for style in (0, 1):
        for direction in ("forward", "backward"):
            lms[(style, direction)] = load_lm(
                run_dir / f"lm.{style}.{direction}.ckpt", vocab)
    return lms


def cmd_train_stage2(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab = load_or_build_vocab(run_dir, cfg)
    clf = load_classifier(run_dir / "classifier.ckpt", vocab)
    model, header = load_seq2seq(run_dir / "stage1.ckpt", vocab, "stage1 checkpoint")
    lms = _load_lms(run_dir, vocab)
    train = load_split(cfg, vocab, "train")
    variant = getattr(args, "variant", None) or "full"
    ablation = resolve_ablation(variant)
    if "nsc_off" in ablation:
        raise CliError("variant no-nsc has no stage-2 training; evaluate stage1.ckpt instead")
    cfg.stage2.ablation = ablation
    cfg.stage2.max_len = cfg.data.max_len
    if "lxlambda_off" in ablation:
        # the matching stage-1 variant must also drop the relevance loss
        print("note: no-lxlambda applies to stage 1; retrain stage1 with "
              "stage1.lxlambda_off = true for the full variant")
    lrp_cfg = cfg.lrp_config(calibrated_eta=header.get("eta"))
    cache = LambdaTargetCache(clf, lrp_cfg)
    suffix = "" if variant == "full" else f".{variant}"
    log = TrainLog(run_dir / f"train_log.stage2{suffix}.csv")
    trainer = Stage2Trainer(model, clf, lms, cache, cfg.stage2, lrp_cfg, train, log=log)
    trainer.train()
    log.close()
    name = f"stage2{suffix}.ckpt"
    save_seq2seq(run_dir / name, model, vocab, 2, cfg, lrp_cfg.eta, lrp_cfg.epsilon)
    update_manifest(run_dir, cfg, {
        "artifacts": {name: file_hash(run_dir / name)},
        "seeds": {"stage2": cfg.stage2.seed},
        "stage2_skipped_sentences": trainer.skipped_sentences,
    })
    print(f"stage2 trained ({variant}): {trainer.step_count} steps, "
          f"{trainer.skipped_sentences} zero-length sentences skipped")
    return 0


def _read_input_sentences(args, cfg) -> list[str]:
    if args.input and args.input != "-":
        lines = read_sentences(args.input)
    else:
        lines = [line.strip() for line in sys.stdin if line.strip()]
    return _maybe_lower(lines, cfg)


def cmd_transfer(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    vocab = Vocabulary.load(require(run_dir / "vocab.txt", "vocabulary"))
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "stage2.ckpt"
    model, header = load_seq2seq(ckpt, vocab, "stage2 checkpoint")
    sentences = _read_input_sentences(args, cfg)
    if not sentences:
        raise CliError("no input sentences")
    if args.mode != "greedy":
        raise CliError(f"unsupported decode mode {args.mode!r}")
    ids = [vocab.encode(s) for s in sentences]
    styled = header.get("stage", 2) == 2
    outputs, gates = transfer_sentences(model, ids, args.target_style,
                                        max_len=cfg.data.max_len, styled=styled)
    decoded = [vocab.decode(o) for o in outputs]
    out_path = Path(args.output) if args.output else run_dir / "outputs.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(line + "\n" for line in decoded))
    if args.dump_relevance:
        rel_path = run_dir / "relevance.jsonl"
        with open(rel_path, "w", encoding="utf-8") as f:
            for src, out, g in zip(sentences, outputs, gates):
                tokens = [vocab.id_to_token[t] for t in out]
                lam = [round(float(x), 6) for x in g[:len(out)]]
                f.write(json.dumps({"input": src, "output_tokens": tokens,
                                    "lambda": lam}) + "\n")
                for tok, x in zip(tokens, lam):
                    print(f"{tok}\t{x:.4f}")
                print()
    for line in decoded:
        print(line)
    if run_dir.joinpath("manifest.json").exists():
        update_manifest(run_dir, cfg, {
            "artifacts": {out_path.name: file_hash(out_path)}})
    return 0


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    vocab = Vocabulary.load(require(run_dir / "vocab.txt", "vocabulary"))
    clf = load_classifier(Path(args.classifier) if args.classifier
                          else run_dir / "classifier.ckpt", vocab)
    outputs = _maybe_lower(read_sentences(require(Path(args.outputs), "outputs file")), cfg)
    ref_files = [Path(p) for p in args.refs.split(",") if p]
    ref_columns = [read_sentences(require(p, "reference file")) for p in ref_files]
    for col in ref_columns:
        if len(col) != len(outputs):
            raise CliError(f"reference count {len(col)} does not match outputs "
                           f"{len(outputs)}")
    references = [[col[i] for col in ref_columns] for i in range(len(outputs))]
    encoded = [vocab.encode(s) for s in outputs]
    nonempty = [i for i, e in enumerate(encoded) if e]
    acc_hits = 0
    if nonempty:
        pred = clf.predict([encoded[i] for i in nonempty])
        acc_hits = int((pred == args.target_style).sum())
    acc = 100.0 * acc_hits / len(outputs)
    bleu = corpus_bleu(outputs, references, smooth=args.smooth_bleu)
    report = build_report(acc, bleu, len(outputs))
    (run_dir / "metrics.json").write_text(report.to_json())
    print(report.to_table())
    if run_dir.joinpath("manifest.json").exists():
        update_manifest(run_dir, cfg, {
            "artifacts": {"metrics.json": file_hash(run_dir / "metrics.json")},
            "metrics": json.loads(report.to_json()),
        })
    return 0


def cmd_lrp_inspect(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    vocab = Vocabulary.load(require(run_dir / "vocab.txt", "vocabulary"))
    clf = load_classifier(Path(args.classifier) if args.classifier
                          else run_dir / "classifier.ckpt", vocab)
    sentences = _read_input_sentences(args, cfg)
    if not sentences:
        raise CliError("no input sentences")
    eta = float(args.eta) if args.eta else resolve_eta(
        cfg, clf, LabeledCorpus([vocab.encode(s) for s in sentences],
                                [0] * len(sentences)))
    records = []
    for sentence in sentences:
        ids = vocab.encode(sentence)
        batch = pack_batch([ids], min_width=max(clf.filter_widths))
        if args.target_style == "pred":
            target = int(clf.predict([ids])[0])
        else:
            target = int(args.target_style)
        wr = hard_word_relevance(clf, batch.enc_ids, batch.lengths, target,
                                 eta=eta, epsilon=args.epsilon)
        tokens = sentence.split()
        lam = wr.lam.values[0, :len(tokens)]
        raw = wr.raw.values[0, :len(tokens)]
        for tok, l, r in zip(tokens, lam, raw):
            print(f"{tok}\t{l:.4f}\t{r:.6f}")
        print()
        records.append({"sentence": sentence, "target_style": target,
                        "tokens": tokens,
                        "lambda": [round(float(x), 6) for x in lam],
                        "raw_relevance": [round(float(x), 8) for x in raw],
                        "eta": eta, "epsilon": args.epsilon})
    with open(run_dir / "relevance.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return 0


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    from restyle.gradcheck import run_gradient_suite

    results = run_gradient_suite(seed=args.seed,
                                 max_coords_per_param=args.coords_per_param)
    for loss_name in ("l_sr", "l_xlambda", "l_st", "l_ylambda", "l_cp", "l_lm",
                      "l2_combined"):
        per = results[loss_name]
        worst_param = max(per, key=per.get)
        print(f"{loss_name:12s} max_rel_error {per[worst_param]:.3e} ({worst_param})")
    worst = results["max_relative_error"]
    print(f"overall max relative error: {worst:.3e}")
    if not worst < args.threshold:
        raise GradCheckFailure(
            f"max relative error {worst:.3e} exceeds threshold {args.threshold}")
    return 0


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    run_dir = Path(args.run_dir)
    vocab = Vocabulary.load(require(run_dir / "vocab.txt", "vocabulary"))
    clf = load_classifier(run_dir / "classifier.ckpt", vocab)
    variant = args.variant
    ablation = resolve_ablation(variant)

    test = load_split(cfg, vocab, "test")
    references = _load_references(cfg, test)

    if "nsc_off" in ablation:
        model, _ = load_seq2seq(run_dir / "stage1.ckpt", vocab, "stage1 checkpoint")
        styled = False
    else:
        rc = cmd_train_stage2(argparse.Namespace(run_dir=args.run_dir, variant=variant),
                              cfg)
        if rc != 0:
            return rc
        suffix = "" if variant == "full" else f".{variant}"
        model, _ = load_seq2seq(run_dir / f"stage2{suffix}.ckpt", vocab,
                                "stage2 checkpoint")
        styled = True
    sentences = [vocab.decode(s) for s in test.sentences]
    gate_override = 1.0 if "gate_off" in ablation else None
    report, _ = evaluate_transfer(model, clf, vocab, sentences, test.labels,
                                  references, max_len=cfg.data.max_len,
                                  gate_override=gate_override, styled=styled)
    csv_path = run_dir / "ablations.csv"
    new = not csv_path.exists()
    with open(csv_path, "a", encoding="utf-8") as f:
        if new:
            f.write("variant,acc,bleu,g2,h2,n_sentences\n")
        f.write(f"{variant},{report.acc:.2f},{report.bleu:.2f},{report.g2:.2f},"
                f"{report.h2:.2f},{report.n_sentences}\n")
    print(report.to_table())
    update_manifest(run_dir, cfg, {
        "artifacts": {"ablations.csv": file_hash(csv_path)},
        f"ablation_{variant}": json.loads(report.to_json()),
    })
    return 0


def _load_references(cfg: ExperimentConfig, test: LabeledCorpus) -> list:
    """References aligned with the test corpus order (style0 rows then style1)."""
    refs_by_style = {}
    for style in (0, 1):
        raw = getattr(cfg.data, f"test_refs_style{style}", "")
        if not raw:
            raise CliError(f"data.test_refs_style{style} must list reference files")
        cols = [read_sentences(require(Path(p), "reference file"))
                for p in raw.split(",") if p]
        refs_by_style[style] = [[c[i] for c in cols] for i in range(len(cols[0]))]
    counters = {0: 0, 1: 0}
    references = []
    for label in test.labels:
        references.append(refs_by_style[label][counters[label]])
        counters[label] += 1
    return references


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restyle",
        description="Relevance-gated unsupervised text style transfer")
    parser.add_argument("--config", help="INI config file (flat key = value sections)")
    parser.add_argument("--run-dir", default="runs/default",
                        help="directory for checkpoints, logs and the manifest")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-classifier", help="pre-train the style classifier")

    p = sub.add_parser("train-lm", help="pre-train directional language models")
    p.add_argument("--style", type=int, choices=(0, 1), default=None,
                   help="style to train (default: both)")
    p.add_argument("--direction", choices=("forward", "backward"), default=None,
                   help="direction to train (default: both)")

    sub.add_parser("train-stage1", help="denoising reconstruction + relevance reprediction")

    p = sub.add_parser("train-stage2", help="fine-tune the style component")
    p.add_argument("--variant", default="full", help="ablation variant name")

    p = sub.add_parser("transfer", help="rewrite sentences toward a target style")
    p.add_argument("--target-style", type=int, choices=(0, 1), required=True)
    p.add_argument("--input", default="-", help="sentence file ('-' for stdin)")
    p.add_argument("--output", default=None, help="output file (default run dir)")
    p.add_argument("--checkpoint", default=None, help="model checkpoint to decode with")
    p.add_argument("--mode", default="greedy", help="decoding mode")
    p.add_argument("--dump-relevance", action="store_true",
                   help="emit per-token relevance alongside output tokens")

    p = sub.add_parser("evaluate", help="score outputs against references")
    p.add_argument("--outputs", required=True)
    p.add_argument("--refs", required=True, help="comma-separated reference files")
    p.add_argument("--classifier", default=None)
    p.add_argument("--target-style", type=int, choices=(0, 1), required=True)
    p.add_argument("--smooth-bleu", action="store_true")

    p = sub.add_parser("lrp-inspect", help="per-word style relevance of input sentences")
    p.add_argument("--input", default="-")
    p.add_argument("--classifier", default=None)
    p.add_argument("--target-style", default="pred",
                   help="0, 1, or 'pred' for the classifier's own prediction")
    p.add_argument("--eta", default=None, help="scaling factor (default: calibrated)")
    p.add_argument("--epsilon", type=float, default=0.3)

    p = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords-per-param", type=int, default=4)

    p = sub.add_parser("ablate", help="train and score an ablation variant")
    p.add_argument("--variant", required=True)
    return parser


COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "train-lm": cmd_train_lm,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "lrp-inspect": cmd_lrp_inspect,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            key, _, value = item.partition("=")
            if not _ or not key.strip():
                raise CliError(f"bad --set value {item!r}, expected SECTION.KEY=VALUE")
            overrides[key.strip()] = value.strip()
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except CliError as e:
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return e.code
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
