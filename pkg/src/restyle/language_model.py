"""Directional GRU language models and the fluency loss.

One forward and one backward model are trained per style; the backward model
simply consumes reversed sequences. During stage 2 both are frozen and score
soft sentences token by token, consuming the expected embedding of each prior
soft word.
"""

from __future__ import annotations

import logging

import numpy as np

from restyle import autodiff as ad
from restyle.autodiff import Tensor, constant, parameter
from restyle.base import ParamMixin, check_fitted, check_token_sequences
from restyle.checkpoint import params_hash
from restyle.data import BOS, EOS, PAD, LabeledCorpus, Batcher, pack_batch
from restyle.seq2seq import GruCell, SoftSentence

logger = logging.getLogger(__name__)


class DirectionalLanguageModel(ParamMixin):
    """Next-token GRU model for one (style, direction) pair."""

    def __init__(self, vocab_size=None, style=None, direction="forward",
                 embed_dim=64, hidden_dim=64, epochs=5, learning_rate=2e-3,
                 clip_norm=5.0, batch_size=32, max_len=16, optimizer="adam",
                 seed=0, dev_fraction=0.1):
        if direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {direction!r}")
        self.vocab_size = vocab_size
        self.style = style
        self.direction = direction
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.max_len = max_len
        self.optimizer = optimizer
        self.seed = seed
        self.dev_fraction = dev_fraction
        self.params_ = None
        self.dev_perplexity_ = None

    def _init_params(self):
        rng = np.random.default_rng(self.seed)
        p: dict[str, Tensor] = {}
        p["emb"] = parameter(rng.normal(0.0, 0.1, (self.vocab_size, self.embed_dim)),
                             name="lm.emb")
        p["emb"].values[PAD] = 0.0
        self.cell_ = GruCell(p, "gru", self.embed_dim, self.hidden_dim, rng)
        k = 1.0 / np.sqrt(self.hidden_dim)
        p["out.w"] = parameter(rng.uniform(-k, k, (self.hidden_dim, self.vocab_size)),
                               name="lm.out.w")
        p["out.b"] = parameter(np.zeros(self.vocab_size), name="lm.out.b")
        self.params_ = p

    def parameters(self) -> dict[str, Tensor]:
        check_fitted(self, "params_")
        return self.params_

    def set_trainable(self, flag: bool) -> None:
        for p in self.params_.values():
            p.requires_grad = flag
            if not flag:
                p.zero_grad()

    def weights_hash(self) -> str:
        return params_hash(self.parameters())

    def _oriented(self, seqs: list[list[int]]) -> list[list[int]]:
        if self.direction == "backward":
            return [list(reversed(s)) for s in seqs]
        return seqs

    # ------------------------------------------------------------------
    def _batch_nll(self, batch) -> Tensor:
        """Summed next-token NLL per sentence, averaged over the batch."""
        B, S = batch.dec_inputs.shape
        emb = ad.gather_rows(self.params_["emb"], batch.dec_inputs)
        h = constant(np.zeros((B, self.hidden_dim)))
        logits = []
        for j in range(S):
            h = self.cell_(ad.narrow(emb, 1, j, 1).reshape(B, self.embed_dim), h)
            logits.append((ad.matmul(h, self.params_["out.w"]) + self.params_["out.b"])
                          .reshape(B, 1, self.vocab_size))
        ce = ad.cross_entropy_with_indices(ad.concat(logits, axis=1), batch.targets,
                                           batch.target_mask)
        return ce.sum(axis=1).mean()

    def fit(self, X):
        """Train on a single-style list of id sequences."""
        X = check_token_sequences(X)
        if not X:
            raise ValueError("empty corpus for language model")
        self._init_params()
        seqs = self._oriented(X)
        corpus = LabeledCorpus(seqs, [0] * len(seqs))
        from restyle.data import train_dev_split
        train, dev = train_dev_split(corpus, self.dev_fraction, self.seed)
        batcher = Batcher(train, self.batch_size, self.max_len, seed=self.seed + 1)
        opt = ad.make_optimizer(self.optimizer,
                                [self.params_[k] for k in sorted(self.params_)],
                                self.learning_rate, self.clip_norm)
        for _ in range(self.epochs):
            for batch in batcher.epoch():
                loss = self._batch_nll(batch)
                ad.backward(loss)
                opt.step()
        self.dev_perplexity_ = self.perplexity([s for s in dev.sentences],
                                               already_oriented=True)
        logger.info("lm style=%s dir=%s held-out perplexity: %.3f",
                    self.style, self.direction, self.dev_perplexity_)
        return self

    def perplexity(self, X, already_oriented: bool = False,
                   include_eos: bool = True) -> float:
        check_fitted(self, "params_")
        seqs = X if already_oriented else self._oriented(check_token_sequences(X))
        total_nll, total_tokens = 0.0, 0
        with ad.no_grad():
            for lo in range(0, len(seqs), 64):
                batch = pack_batch(seqs[lo:lo + 64])
                B, S = batch.dec_inputs.shape
                mask = batch.target_mask
                if not include_eos:
                    mask = mask * (batch.targets != EOS)
                emb = ad.gather_rows(self.params_["emb"], batch.dec_inputs)
                h = constant(np.zeros((B, self.hidden_dim)))
                nll = 0.0
                for j in range(S):
                    h = self.cell_(ad.narrow(emb, 1, j, 1).reshape(B, self.embed_dim), h)
                    logits = ad.matmul(h, self.params_["out.w"]) + self.params_["out.b"]
                    ce = ad.cross_entropy_with_indices(logits, batch.targets[:, j],
                                                       mask[:, j])
                    nll += float(ce.values.sum())
                total_nll += nll
                total_tokens += int(mask.sum())
        return float(np.exp(total_nll / max(total_tokens, 1)))

    # ------------------------------------------------------------------
    def step_distribution(self, x_emb: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
        """One scoring step: returns (log-probabilities over V, next state)."""
        h = self.cell_(x_emb, h)
        logits = ad.matmul(h, self.params_["out.w"]) + self.params_["out.b"]
        return ad.log_softmax(logits, axis=-1), h


def fluency_loss(lm_forward: DirectionalLanguageModel,
                 lm_backward: DirectionalLanguageModel,
                 soft: SoftSentence, target_style: int,
                 flip_sign: bool = False) -> Tensor:
    """Average of forward and backward distribution cross-entropies.

    Each term is sum_j H(P_model(.|y_<j), P_lm(.|context)), with the language
    model fed the expected embedding of each prior soft word. ``flip_sign``
    reverses the sign of the per-step terms (the literal printed form of the
    objective, which rewards divergence instead of penalizing it).
    """
    if lm_forward.style != target_style or lm_backward.style != target_style:
        raise ValueError(
            f"style mismatch: soft sentence targets style {target_style}, "
            f"models were trained on styles {lm_forward.style}/{lm_backward.style}")
    if lm_forward.direction != "forward" or lm_backward.direction != "backward":
        raise ValueError("fluency_loss needs one forward and one backward model")
    T = len(soft.rows)
    B = soft.rows[0].shape[0]
    mask = soft.length_mask()
    n_sentences = max(int((soft.lengths > 0).sum()), 1)

    def directional(lm: DirectionalLanguageModel, rows, dists, step_mask) -> Tensor:
        h = constant(np.zeros((B, lm.hidden_dim)))
        x = ad.gather_rows(lm.params_["emb"], np.full(B, BOS, dtype=np.int64))
        total = None
        for j in range(T):
            logq, h = lm.step_distribution(x, h)
            ce = ad.neg(ad.tsum(dists[j] * logq, axis=-1)) * constant(step_mask[:, j])
            total = ce if total is None else total + ce
            x = ad.matmul(rows[j], lm.params_["emb"])
        # per-sentence sums averaged over sentences with nonzero length
        return total.sum() * (1.0 / n_sentences)

    fwd = directional(lm_forward, soft.rows, soft.dists, mask)

    # reversed-within-realized-length view of the soft sentence
    perm = np.zeros((B, T, T))
    for b in range(B):
        L = soft.lengths[b]
        for j in range(L):
            perm[b, j, L - 1 - j] = 1.0
    rows3 = soft.stacked_rows()
    dists3 = soft.stacked_dists()
    rev_rows3 = ad.matmul(constant(perm), rows3)
    rev_dists3 = ad.matmul(constant(perm), dists3)
    rev_rows = [ad.narrow(rev_rows3, 1, j, 1).reshape(B, rows3.shape[2]) for j in range(T)]
    rev_dists = [ad.narrow(rev_dists3, 1, j, 1).reshape(B, dists3.shape[2]) for j in range(T)]
    bwd = directional(lm_backward, rev_rows, rev_dists, mask)

    loss = (fwd + bwd) * 0.5
    return ad.neg(loss) if flip_sign else loss
