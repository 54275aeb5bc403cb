"""Two-stage training: denoising reconstruction with relevance reprediction,
then fine-tuning of the style component under the four-term objective.

Stage 1 feeds a corrupted sentence to the encoder and teacher-forces the clean
sentence through the decoder, minimizing token cross-entropy plus the mean
squared error between head-predicted and propagation-derived word relevance.

Stage 2 free-runs soft generation toward the opposite style and combines the
frozen-classifier transfer loss, soft-relevance consistency, the
relevance-weighted content anchor, and the frozen-LM fluency terms. Batches
alternate transfer directions so both styles train symmetrically.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from restyle import autodiff as ad
from restyle.autodiff import constant
from restyle.data import Batcher, LabeledCorpus, corrupt, pack_batch
from restyle.language_model import DirectionalLanguageModel, fluency_loss
from restyle.lrp import hard_word_relevance, soft_word_relevance
from restyle.seq2seq import Seq2seqModel, sample_gumbel
from restyle.textcnn import TextCnnStyleClassifier

logger = logging.getLogger(__name__)

ABLATION_FLAGS = ("nsc_off", "gate_off", "lxlambda_off", "lcp_prime",
                  "lylambda_off", "llm_off", "freeze_stage1")

# canonical ablation variants and their accepted spellings
ABLATION_VARIANTS = {
    "no-nsc": frozenset({"nsc_off"}),
    "nsc-lambda": frozenset({"gate_off"}),
    "no-lxlambda": frozenset({"lxlambda_off"}),
    "lcp-prime": frozenset({"lcp_prime"}),
    "no-lylambda": frozenset({"lylambda_off"}),
    "no-lm": frozenset({"llm_off"}),
    "no-finetune": frozenset({"freeze_stage1"}),
}
ABLATION_ALIASES = {
    "-nsc": "no-nsc",
    "nsc-lambda-yj": "nsc-lambda",
    "-lxlambda": "no-lxlambda",
    "lcp-to-lcp-prime": "lcp-prime",
    "-lylambda": "no-lylambda",
    "-llm": "no-lm",
    "finetuning-": "no-finetune",
}


def resolve_ablation(variant: str) -> frozenset:
    key = variant.strip().lower()
    key = ABLATION_ALIASES.get(key, key)
    if key == "full":
        return frozenset()
    if key not in ABLATION_VARIANTS:
        valid = ["full"] + sorted(ABLATION_VARIANTS) + sorted(ABLATION_ALIASES)
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {valid}")
    return ABLATION_VARIANTS[key]


@dataclass
class LrpConfig:
    eta: float = 1.0
    epsilon: float = 0.3
    stabilizer: float = 1e-9


@dataclass
class Stage1Config:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.5
    clip_norm: float = 5.0
    replace_prob: float = 0.15
    optimizer: str = "sgd"
    patience: int = 3
    max_len: int = 16
    seed: int = 0
    lxlambda_off: bool = False

    def __post_init__(self):
        if min(self.epochs, self.batch_size) <= 0 or self.learning_rate <= 0 \
                or self.clip_norm <= 0:
            raise ValueError("stage-1 config values must be positive")


@dataclass
class Stage2Config:
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 0.5
    learning_rate: float = 1e-5
    clip_norm: float = 1e-2
    optimizer: str = "sgd"
    epochs: int = 1
    batch_size: int = 32
    max_len: int = 16
    tau_start: float = 0.5
    tau_end: float = 0.1
    gumbel_noise: bool = True
    lm_loss_sign_flipped: bool = False
    seed: int = 0
    ablation: frozenset = frozenset()

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        unknown = set(self.ablation) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")


@dataclass
class LossBreakdown:
    l_sr: float = 0.0
    l_xlambda: float = 0.0
    l_st: float = 0.0
    l_ylambda: float = 0.0
    l_cp: float = 0.0
    l_lm: float = 0.0
    total: float = 0.0
    grad_norm_preclip: float = 0.0

    CSV_FIELDS = ("step", "l_sr", "l_xlambda", "l_st", "l_ylambda", "l_cp",
                  "l_lm", "total", "grad_norm_preclip")


class TrainLog:
    """CSV log: one row per step with all six losses and the pre-clip norm."""

    def __init__(self, path=None):
        self.path = path
        self.rows: list[dict] = []
        if path is not None:
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.DictWriter(self._fh, fieldnames=LossBreakdown.CSV_FIELDS)
            self._writer.writeheader()
        else:
            self._fh = self._writer = None

    def record(self, step: int, br: LossBreakdown) -> None:
        row = {"step": step, "l_sr": br.l_sr, "l_xlambda": br.l_xlambda,
               "l_st": br.l_st, "l_ylambda": br.l_ylambda, "l_cp": br.l_cp,
               "l_lm": br.l_lm, "total": br.total,
               "grad_norm_preclip": br.grad_norm_preclip}
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow(row)
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


class LambdaTargetCache:
    """Propagation-derived relevance targets, computed once per sentence.

    Keyed by the frozen classifier's weight hash and the (eta, epsilon)
    mapping, so a stale cache can never serve a retrained classifier.
    """

    def __init__(self, classifier: TextCnnStyleClassifier, lrp_cfg: LrpConfig):
        self.classifier = classifier
        self.cfg = lrp_cfg
        self.key = (classifier.weights_hash(), lrp_cfg.eta, lrp_cfg.epsilon)
        self._store: dict[tuple, np.ndarray] = {}

    def precompute(self, corpus: LabeledCorpus, batch_size: int = 64) -> None:
        for lo in range(0, len(corpus), batch_size):
            seqs = corpus.sentences[lo:lo + batch_size]
            labels = np.asarray(corpus.labels[lo:lo + batch_size])
            self._compute(seqs, labels)

    def _compute(self, seqs, labels) -> np.ndarray:
        batch = pack_batch(seqs, min_width=max(self.classifier.filter_widths))
        with ad.no_grad():
            wr = hard_word_relevance(self.classifier, batch.enc_ids, batch.lengths,
                                     labels, self.cfg.eta, self.cfg.epsilon,
                                     self.cfg.stabilizer)
        lam = wr.lam.values
        for i, s in enumerate(seqs):
            self._store[(tuple(s), int(labels[i]))] = lam[i, :len(s)].copy()
        return lam

    def get_matrix(self, seqs, labels, width: int) -> np.ndarray:
        """(B, width) padded target matrix; missing entries recomputed on the fly."""
        out = np.zeros((len(seqs), width))
        missing = [i for i, s in enumerate(seqs)
                   if (tuple(s), int(labels[i])) not in self._store]
        if missing:
            self._compute([seqs[i] for i in missing],
                          np.asarray([labels[i] for i in missing]))
        for i, s in enumerate(seqs):
            lam = self._store[(tuple(s), int(labels[i]))]
            out[i, :len(lam)] = lam
        return out


# ---------------------------------------------------------------------------
# stage 1


class Stage1Trainer:
    def __init__(self, model: Seq2seqModel, classifier: TextCnnStyleClassifier,
                 lam_cache: LambdaTargetCache, cfg: Stage1Config,
                 train_corpus: LabeledCorpus, dev_corpus: LabeledCorpus | None = None,
                 log: TrainLog | None = None):
        self.model = model
        self.classifier = classifier
        self.lam_cache = lam_cache
        self.cfg = cfg
        self.train_corpus = train_corpus
        self.dev_corpus = dev_corpus
        self.log = log or TrainLog()
        self.rng = np.random.default_rng(cfg.seed)
        groups = model.parameter_groups()
        names = groups["s2s"] + groups["head"]
        self.optimizer = ad.make_optimizer(cfg.optimizer,
                                           [model.params[k] for k in sorted(names)],
                                           cfg.learning_rate, cfg.clip_norm)
        self.step_count = 0

    def _losses(self, batch, replace_prob: float):
        corrupted = np.array([
            corrupt(list(row[:l]), self.model.vocab_size, replace_prob, self.rng)
            + [0] * (batch.enc_ids.shape[1] - l)
            for row, l in zip(batch.enc_ids, batch.lengths)], dtype=np.int64)
        logits, gates = self.model.teacher_forced_pass(batch, corrupted_enc_ids=corrupted)
        ce = ad.cross_entropy_with_indices(logits, batch.targets, batch.target_mask)
        l_sr = ce.sum(axis=1).mean()

        T = batch.enc_ids.shape[1]
        lam_x = self.lam_cache.get_matrix([s[:l] for s, l in
                                           zip(batch.enc_ids.tolist(), batch.lengths)],
                                          batch.labels, T)
        lam_hat = ad.narrow(gates, 1, 0, T)
        sq = ad.squared_error(constant(lam_x), lam_hat) * constant(batch.token_mask)
        l_xlambda = (sq.sum(axis=1) * constant(1.0 / batch.lengths)).mean()
        return l_sr, l_xlambda, logits

    def step(self, batch) -> LossBreakdown:
        l_sr, l_xlambda, _ = self._losses(batch, self.cfg.replace_prob)
        if self.cfg.lxlambda_off:
            total = l_sr
            ad.backward(total)
            br = LossBreakdown(l_sr=l_sr.item(), l_xlambda=0.0, total=total.item())
        else:
            total = l_sr + l_xlambda
            ad.backward(total)
            br = LossBreakdown(l_sr=l_sr.item(), l_xlambda=l_xlambda.item(),
                               total=total.item())
        br.grad_norm_preclip = self.optimizer.step()
        self.step_count += 1
        self.log.record(self.step_count, br)
        return br

    def evaluate(self, corpus: LabeledCorpus, replace_prob: float = 0.0,
                 batch_size: int = 64) -> dict:
        """Teacher-forced token accuracy and relevance MSE on clean input."""
        correct = tokens = 0
        mse_sum = 0.0
        n = 0
        with ad.no_grad():
            for lo in range(0, len(corpus), batch_size):
                batch = pack_batch(corpus.sentences[lo:lo + batch_size],
                                   labels=corpus.labels[lo:lo + batch_size])
                logits, gates = self.model.teacher_forced_pass(batch)
                pred = logits.values.argmax(axis=2)
                correct += int(((pred == batch.targets) * batch.target_mask).sum())
                tokens += int(batch.target_mask.sum())
                T = batch.enc_ids.shape[1]
                lam_x = self.lam_cache.get_matrix(
                    [s[:l] for s, l in zip(batch.enc_ids.tolist(), batch.lengths)],
                    batch.labels, T)
                sq = (lam_x - gates.values[:, :T]) ** 2 * batch.token_mask
                mse_sum += float((sq.sum(axis=1) / batch.lengths).sum())
                n += len(batch.lengths)
        return {"token_accuracy": correct / max(tokens, 1),
                "relevance_mse": mse_sum / max(n, 1)}

    def train(self) -> dict:
        batcher = Batcher(self.train_corpus, self.cfg.batch_size, self.cfg.max_len,
                          seed=self.cfg.seed + 1)
        best = np.inf
        stall = 0
        history = []
        for epoch in range(self.cfg.epochs):
            for batch in batcher.epoch():
                self.step(batch)
            if self.dev_corpus is None:
                continue
            metrics = self.evaluate(self.dev_corpus)
            dev_loss = (1.0 - metrics["token_accuracy"]) + metrics["relevance_mse"]
            history.append({"epoch": epoch, **metrics})
            logger.info("stage1 epoch %d: token_acc=%.4f rel_mse=%.5f",
                        epoch, metrics["token_accuracy"], metrics["relevance_mse"])
            if dev_loss < best - 1e-5:
                best, stall = dev_loss, 0
            else:
                stall += 1
                if stall >= self.cfg.patience:
                    logger.info("stage1 early stop at epoch %d", epoch)
                    break
        return {"steps": self.step_count, "history": history}


# ---------------------------------------------------------------------------
# stage 2


def pad_rows_to_width(rows3, lengths, min_width: int):
    """Right-pad the soft row stack with zero rows so classifier filters fit."""
    B, T, V = rows3.shape
    if T >= min_width:
        return rows3
    pad = constant(np.zeros((B, min_width - T, V)))
    return ad.concat([rows3, pad], axis=1)


class Stage2Trainer:
    def __init__(self, model: Seq2seqModel, classifier: TextCnnStyleClassifier,
                 lms: dict, lam_cache: LambdaTargetCache, cfg: Stage2Config,
                 lrp_cfg: LrpConfig, train_corpus: LabeledCorpus,
                 log: TrainLog | None = None):
        """``lms`` maps (style, direction) -> DirectionalLanguageModel."""
        self.model = model
        self.classifier = classifier
        self.lms = lms
        self.lam_cache = lam_cache
        self.cfg = cfg
        self.lrp_cfg = lrp_cfg
        self.log = log or TrainLog()
        self.rng = np.random.default_rng(cfg.seed)
        self.skipped_sentences = 0
        self.step_count = 0

        self.classifier.set_trainable(False)
        for lm in self.lms.values():
            lm.set_trainable(False)
        groups = model.parameter_groups()
        if "freeze_stage1" in cfg.ablation:
            names = groups["style"]
        else:
            names = groups["s2s"] + groups["head"] + groups["style"]
        self.trainable_names = sorted(names)
        self.optimizer = ad.make_optimizer(cfg.optimizer,
                                           [model.params[k] for k in self.trainable_names],
                                           cfg.learning_rate, cfg.clip_norm)
        self.batchers = {
            s: Batcher(train_corpus.by_style(s), cfg.batch_size, cfg.max_len,
                       seed=cfg.seed + 10 + s)
            for s in (0, 1)
        }

    def tau_at(self, step: int, total_steps: int) -> float:
        if total_steps <= 1:
            return self.cfg.tau_start
        frac = min(step / (total_steps - 1), 1.0)
        return self.cfg.tau_start + (self.cfg.tau_end - self.cfg.tau_start) * frac

    def step(self, batch, source_style: int, tau: float | None = None) -> LossBreakdown:
        cfg = self.cfg
        tau = cfg.tau_start if tau is None else tau
        target_style = 1 - source_style
        B = batch.enc_ids.shape[0]
        noise = None
        if cfg.gumbel_noise:
            noise = sample_gumbel(self.rng, (cfg.max_len, B, self.model.vocab_size))
        gate_override = 1.0 if "gate_off" in cfg.ablation else None
        soft = self.model.generate_soft(batch.enc_ids, batch.lengths, target_style,
                                        max_len=cfg.max_len, tau=tau,
                                        gumbel_noise=noise, gate_override=gate_override)
        valid = soft.lengths > 0
        self.skipped_sentences += int((~valid).sum())
        if not valid.any():
            br = LossBreakdown()
            self.step_count += 1
            self.log.record(self.step_count, br)
            return br
        n_valid = int(valid.sum())
        vmask = constant(valid.astype(float))
        T = len(soft.rows)
        rows3 = soft.stacked_rows()
        gates = soft.stacked_gates()
        rmask = soft.length_mask()

        # transfer loss through the frozen classifier
        rows_clf = pad_rows_to_width(rows3, soft.lengths, max(self.classifier.filter_widths))
        _, logits = self.classifier.classify_soft(rows_clf, soft.lengths)
        ce = ad.cross_entropy_with_indices(
            logits, np.full(B, target_style, dtype=np.int64))
        l_st = (ce * vmask).sum() * (1.0 / n_valid)

        # soft-word relevance consistency
        if cfg.alpha > 0 and "lylambda_off" not in cfg.ablation:
            wr = soft_word_relevance(self.classifier, rows_clf, soft.lengths,
                                     target_style, self.lrp_cfg.eta,
                                     self.lrp_cfg.epsilon, self.lrp_cfg.stabilizer)
            lam_hat = ad.narrow(wr.lam, 1, 0, T)
            sq = ad.squared_error(gates, lam_hat) * constant(rmask)
            per_sentence = sq.sum(axis=1) * constant(1.0 / np.maximum(soft.lengths, 1))
            l_ylambda = (per_sentence * vmask).sum() * (1.0 / n_valid)
        else:
            l_ylambda = constant(0.0)

        # relevance-weighted content anchor
        lam_x = self.lam_cache.get_matrix(
            [s[:l] for s, l in zip(batch.enc_ids.tolist(), batch.lengths)],
            batch.labels, batch.enc_ids.shape[1])
        x_emb = self.model.embed(batch.enc_ids)
        if "lcp_prime" in cfg.ablation:
            x_w = constant(batch.token_mask[:, :, None])
            y_w = constant(rmask[:, :, None])
        else:
            x_w = constant(((1.0 - np.abs(lam_x)) * batch.token_mask)[:, :, None])
            y_w = (1.0 - ad.absolute(gates)).reshape(B, T, 1) * constant(rmask[:, :, None])
        x_content = (x_emb * x_w).sum(axis=1)
        y_emb = ad.matmul(rows3, self.model.params["emb"])
        y_content = (y_emb * y_w).sum(axis=1)
        diff = x_content - y_content
        l_cp = ((diff * diff).sum(axis=1) * vmask).sum() * (1.0 / n_valid)

        # fluency against the frozen directional models
        if cfg.gamma > 0 and "llm_off" not in cfg.ablation:
            l_lm = fluency_loss(self.lms[(target_style, "forward")],
                                self.lms[(target_style, "backward")],
                                soft, target_style,
                                flip_sign=cfg.lm_loss_sign_flipped)
        else:
            l_lm = constant(0.0)

        alpha = 0.0 if "lylambda_off" in cfg.ablation else cfg.alpha
        gamma = 0.0 if "llm_off" in cfg.ablation else cfg.gamma
        total = l_st + alpha * l_ylambda + cfg.beta * l_cp + gamma * l_lm
        ad.backward(total)
        br = LossBreakdown(l_st=l_st.item(), l_ylambda=l_ylambda.item(),
                           l_cp=l_cp.item(), l_lm=l_lm.item(), total=total.item())
        br.grad_norm_preclip = self.optimizer.step()
        self.step_count += 1
        self.log.record(self.step_count, br)
        return br

    def train(self, max_steps: int | None = None) -> dict:
        """Alternate 0->1 and 1->0 batches with a linear temperature schedule."""
        per_epoch = sum(int(np.ceil(len(b.corpus) / self.cfg.batch_size))
                        for b in self.batchers.values())
        total = self.cfg.epochs * per_epoch if max_steps is None else max_steps
        step = 0
        for _ in range(self.cfg.epochs):
            iters = {s: self.batchers[s].epoch() for s in (0, 1)}
            live = {0, 1}
            turn = 0
            while live:
                if turn in live:
                    batch = next(iters[turn], None)
                    if batch is None:
                        live.discard(turn)
                    else:
                        self.step(batch, source_style=turn,
                                  tau=self.tau_at(step, total))
                        step += 1
                        if max_steps is not None and step >= max_steps:
                            return {"steps": self.step_count}
                turn = 1 - turn
        return {"steps": self.step_count}


def grads_all_zero(params: dict) -> bool:
    return all((p._grad is None or not p._grad.any()) for p in params.values())
