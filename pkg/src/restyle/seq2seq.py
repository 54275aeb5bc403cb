"""Attentional GRU encoder-decoder with a relevance head and a gated style
component.

The decoder input is the previous word embedding concatenated with the
attention context. Attention is scored against the previous (revised) decoder
state, so the context is available before the GRU update. In basic mode the
revised state equals the raw state; in styled mode the state is revised as
h~ = h + gate * delta, where the gate is the head-predicted word relevance and
delta comes from an MLP over (previous embedding, previous revised state,
target-style embedding). The MLP's output layer starts at zero, so styled
decoding initially reproduces basic decoding exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from restyle import autodiff as ad
from restyle.autodiff import Tensor, constant, parameter
from restyle.checkpoint import params_hash
from restyle.data import BOS, EOS, PAD

N_STYLES = 2


@dataclass
class EncoderState:
    states: Tensor            # (B, T, H)
    final: Tensor             # (B, H) state at each sentence's last real token
    attn_mask: np.ndarray     # (B, T) 1.0 on real tokens
    score_proj: Tensor        # (B, T, A) cached W_e h^e_i


@dataclass
class DecoderStep:
    hidden: Tensor            # (B, H) raw GRU state
    revised: Tensor           # (B, H) gated revision (== hidden in basic mode)
    context: Tensor           # (B, H)
    attn_weights: Tensor      # (B, T)
    logits: Tensor            # (B, V)
    gate: Tensor              # (B,) head-predicted relevance of this step's word
    applied_gate: Tensor      # (B,) value actually used in the revision


@dataclass
class SoftSentence:
    """Differentiable generated sentence: one probability row per step."""

    rows: list                # step-wise gumbel-softmax rows, each (B, V)
    dists: list               # step-wise model distributions softmax(logits), each (B, V)
    gates: list               # step-wise head-predicted relevance, each (B,)
    lengths: np.ndarray       # (B,) realized length: steps before first EOS argmax
    applied_gates: list = field(default_factory=list)  # values used in the revision

    def stacked_rows(self) -> Tensor:
        return ad.concat([r.reshape(r.shape[0], 1, r.shape[1]) for r in self.rows], axis=1)

    def stacked_dists(self) -> Tensor:
        return ad.concat([d.reshape(d.shape[0], 1, d.shape[1]) for d in self.dists], axis=1)

    def stacked_gates(self) -> Tensor:
        return ad.concat([g.reshape(g.shape[0], 1) for g in self.gates], axis=1)

    def length_mask(self) -> np.ndarray:
        T = len(self.rows)
        return (np.arange(T)[None, :] < self.lengths[:, None]).astype(float)


class GruCell:
    def __init__(self, params: dict, prefix: str, input_dim: int, hidden_dim: int, rng):
        self.prefix = prefix
        self.hidden_dim = hidden_dim
        k = 1.0 / np.sqrt(hidden_dim)
        params[f"{prefix}.w"] = parameter(rng.uniform(-k, k, (input_dim, 3 * hidden_dim)),
                                          name=f"{prefix}.w")
        params[f"{prefix}.u"] = parameter(rng.uniform(-k, k, (hidden_dim, 3 * hidden_dim)),
                                          name=f"{prefix}.u")
        params[f"{prefix}.bi"] = parameter(np.zeros(3 * hidden_dim), name=f"{prefix}.bi")
        params[f"{prefix}.bh"] = parameter(np.zeros(3 * hidden_dim), name=f"{prefix}.bh")
        self.params = params

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.hidden_dim
        gi = ad.matmul(x, self.params[f"{self.prefix}.w"]) + self.params[f"{self.prefix}.bi"]
        gh = ad.matmul(h, self.params[f"{self.prefix}.u"]) + self.params[f"{self.prefix}.bh"]
        z = ad.sigmoid(ad.narrow(gi, 1, 0, H) + ad.narrow(gh, 1, 0, H))
        r = ad.sigmoid(ad.narrow(gi, 1, H, H) + ad.narrow(gh, 1, H, H))
        n = ad.tanh(ad.narrow(gi, 1, 2 * H, H) + r * ad.narrow(gh, 1, 2 * H, H))
        return (1.0 - z) * n + z * h


class Seq2seqModel:
    """Encoder-decoder network; holds every trainable tensor in ``params``."""

    def __init__(self, vocab_size: int, embed_dim: int = 64, hidden_dim: int = 64,
                 attn_dim: int = 64, head_dim: int = 32, style_dim: int = 16,
                 mlp_dim: int = 64, seed: int = 0):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attn_dim = attn_dim
        self.head_dim = head_dim
        self.style_dim = style_dim
        self.mlp_dim = mlp_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        p["emb"] = parameter(rng.normal(0.0, 0.1, (vocab_size, embed_dim)), name="s2s.emb")
        p["emb"].values[PAD] = 0.0
        self.encoder_cell = GruCell(p, "enc", embed_dim, hidden_dim, rng)
        self.decoder_cell = GruCell(p, "dec", embed_dim + hidden_dim, hidden_dim, rng)
        k = 1.0 / np.sqrt(hidden_dim)
        p["attn.we"] = parameter(rng.uniform(-k, k, (hidden_dim, attn_dim)), name="attn.we")
        p["attn.wd"] = parameter(rng.uniform(-k, k, (hidden_dim, attn_dim)), name="attn.wd")
        p["attn.b"] = parameter(np.zeros(attn_dim), name="attn.b")
        p["attn.v"] = parameter(rng.uniform(-k, k, (attn_dim, 1)), name="attn.v")
        p["out.w"] = parameter(rng.uniform(-k, k, (hidden_dim, vocab_size)), name="out.w")
        p["out.b"] = parameter(np.zeros(vocab_size), name="out.b")
        # relevance head (theta_lambda)
        kh = 1.0 / np.sqrt(head_dim)
        p["head.w"] = parameter(rng.uniform(-k, k, (hidden_dim, head_dim)), name="head.w")
        p["head.b"] = parameter(np.zeros(head_dim), name="head.b")
        p["head.v"] = parameter(rng.uniform(-kh, kh, (head_dim, 1)), name="head.v")
        p["head.vb"] = parameter(np.zeros(1), name="head.vb")
        # style component (theta_delta); output layer zero so stage 2 starts
        # exactly at the stage-1 model
        km = 1.0 / np.sqrt(embed_dim + hidden_dim + style_dim)
        p["style.emb"] = parameter(rng.normal(0.0, 0.1, (N_STYLES, style_dim)),
                                   name="style.emb")
        p["style.w1"] = parameter(
            rng.uniform(-km, km, (embed_dim + hidden_dim + style_dim, mlp_dim)),
            name="style.w1")
        p["style.b1"] = parameter(np.zeros(mlp_dim), name="style.b1")
        p["style.w2"] = parameter(np.zeros((mlp_dim, hidden_dim)), name="style.w2")
        p["style.b2"] = parameter(np.zeros(hidden_dim), name="style.b2")
        self.params = p

    # ------------------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def parameter_groups(self) -> dict[str, list[str]]:
        """Spec'd parameter sets: seq2seq body, relevance head, style component."""
        head = [k for k in self.params if k.startswith("head.")]
        style = [k for k in self.params if k.startswith("style.")]
        body = [k for k in self.params if k not in head and k not in style]
        return {"s2s": body, "head": head, "style": style}

    def weights_hash(self) -> str:
        return params_hash(self.params)

    def embed(self, ids: np.ndarray) -> Tensor:
        mask = constant((ids != PAD).astype(float)[..., None])
        return ad.gather_rows(self.params["emb"], ids) * mask

    # ------------------------------------------------------------------
    def encode(self, ids: np.ndarray, lengths: np.ndarray) -> EncoderState:
        if ids.ndim != 2:
            raise ValueError(f"encode: expected (B, T) ids, got shape {ids.shape}")
        B, T = ids.shape
        emb = self.embed(ids)
        h = constant(np.zeros((B, self.hidden_dim)))
        states = []
        for t in range(T):
            x = ad.narrow(emb, 1, t, 1).reshape(B, self.embed_dim)
            h = self.encoder_cell(x, h)
            states.append(h.reshape(B, 1, self.hidden_dim))
        hs = ad.concat(states, axis=1)
        pick = np.zeros((B, 1, T))
        pick[np.arange(B), 0, np.maximum(lengths - 1, 0)] = 1.0
        final = ad.matmul(constant(pick), hs).reshape(B, self.hidden_dim)
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
        score_proj = ad.matmul(hs, self.params["attn.we"])
        return EncoderState(hs, final, mask, score_proj)

    def attend(self, h_prev: Tensor, enc: EncoderState) -> tuple[Tensor, Tensor]:
        B, T, _ = enc.states.shape
        query = (ad.matmul(h_prev, self.params["attn.wd"]) + self.params["attn.b"])
        scores = ad.matmul(ad.tanh(enc.score_proj + query.reshape(B, 1, self.attn_dim)),
                           self.params["attn.v"]).reshape(B, T)
        scores = scores + constant((enc.attn_mask - 1.0) * ad.MASK_BIG)
        weights = ad.softmax(scores, axis=-1)
        context = ad.matmul(weights.reshape(B, 1, T), enc.states).reshape(B, self.hidden_dim)
        return context, weights

    def predict_relevance(self, h_prev: Tensor) -> Tensor:
        """Gate in (0,1): sigmoid(v' tanh(W h + b) + b'). The raw bilinear form
        is unbounded, but the gate and its mean-squared target both live in the
        unit interval, hence the final squash."""
        B = h_prev.shape[0]
        hidden = ad.tanh(ad.matmul(h_prev, self.params["head.w"]) + self.params["head.b"])
        return ad.sigmoid(ad.matmul(hidden, self.params["head.v"]) + self.params["head.vb"]).reshape(B)

    def delta_h(self, x_emb: Tensor, h_prev: Tensor, style_ids: np.ndarray) -> Tensor:
        if not np.isin(style_ids, np.arange(N_STYLES)).all():
            raise ValueError(f"unknown style id in {np.unique(style_ids)}")
        s_emb = ad.gather_rows(self.params["style.emb"], style_ids)
        inp = ad.concat([x_emb, h_prev, s_emb], axis=1)
        hidden = ad.tanh(ad.matmul(inp, self.params["style.w1"]) + self.params["style.b1"])
        return ad.matmul(hidden, self.params["style.w2"]) + self.params["style.b2"]

    def decode_step(self, x_emb: Tensor, h_prev: Tensor, enc: EncoderState,
                    style_ids: np.ndarray | None = None, styled: bool = False,
                    gate_override: float | None = None) -> DecoderStep:
        B = x_emb.shape[0]
        context, weights = self.attend(h_prev, enc)
        h = self.decoder_cell(ad.concat([x_emb, context], axis=1), h_prev)
        gate = self.predict_relevance(h_prev)
        applied = gate
        if styled:
            if style_ids is None:
                raise ValueError("styled decoding requires target style ids")
            if gate_override is not None:
                applied = constant(np.full(B, float(gate_override)))
            delta = self.delta_h(x_emb, h_prev, style_ids)
            revised = h + applied.reshape(B, 1) * delta
        else:
            revised = h
        logits = ad.matmul(revised, self.params["out.w"]) + self.params["out.b"]
        return DecoderStep(h, revised, context, weights, logits, gate, applied)

    # ------------------------------------------------------------------
    def teacher_forced_pass(self, batch, corrupted_enc_ids: np.ndarray | None = None,
                            styled: bool = False, style_ids: np.ndarray | None = None):
        """Decode with gold inputs; returns (logits (B,T+1,V), gates (B,T+1))."""
        enc_ids = batch.enc_ids if corrupted_enc_ids is None else corrupted_enc_ids
        enc = self.encode(enc_ids, batch.lengths)
        B, S = batch.dec_inputs.shape
        emb = self.embed(batch.dec_inputs)
        h = enc.final
        logits, gates = [], []
        for j in range(S):
            x = ad.narrow(emb, 1, j, 1).reshape(B, self.embed_dim)
            step = self.decode_step(x, h, enc, style_ids=style_ids, styled=styled)
            h = step.revised
            logits.append(step.logits.reshape(B, 1, self.vocab_size))
            gates.append(step.gate.reshape(B, 1))
        return ad.concat(logits, axis=1), ad.concat(gates, axis=1)

    def generate_greedy(self, ids: np.ndarray, lengths: np.ndarray,
                        target_style: int | np.ndarray | None = None,
                        styled: bool = True, max_len: int = 16,
                        gate_override: float | None = None):
        """Argmax decoding; returns (token lists without EOS, gate matrix)."""
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        B = ids.shape[0]
        style_ids = None
        if styled:
            style_ids = np.broadcast_to(np.asarray(target_style, dtype=np.int64), (B,)).copy()
        with ad.no_grad():
            enc = self.encode(ids, lengths)
            h = enc.final
            tokens = np.full((B, max_len), PAD, dtype=np.int64)
            gates = np.zeros((B, max_len))
            done = np.zeros(B, dtype=bool)
            prev = np.full(B, BOS, dtype=np.int64)
            for j in range(max_len):
                step = self.decode_step(self.embed(prev), h, enc, style_ids=style_ids,
                                        styled=styled, gate_override=gate_override)
                h = step.revised
                nxt = step.logits.values.argmax(axis=1)
                gates[:, j] = step.applied_gate.values
                nxt[done] = EOS
                tokens[:, j] = nxt
                done |= nxt == EOS
                if done.all():
                    break
                prev = nxt
        out = []
        for b in range(B):
            row = tokens[b]
            stop = np.where(row == EOS)[0]
            out.append(row[:stop[0]].tolist() if len(stop) else row.tolist())
        return out, gates

    def generate_soft(self, ids: np.ndarray, lengths: np.ndarray, target_style,
                      max_len: int = 16, tau: float = 0.5,
                      gumbel_noise: np.ndarray | None = None,
                      gate_override: float | None = None) -> SoftSentence:
        """Differentiable free-running decoding toward the target style.

        Each step emits softmax((logits + g) / tau); the row's expected
        embedding feeds the next step. ``gumbel_noise`` of shape
        (max_len, B, V) enables stochastic relaxation; None decodes with the
        temperature alone.
        """
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        if tau <= 0:
            raise ValueError(f"tau must be positive, got {tau}")
        B = ids.shape[0]
        style_ids = np.broadcast_to(np.asarray(target_style, dtype=np.int64), (B,)).copy()
        enc = self.encode(ids, lengths)
        h = enc.final
        x = self.embed(np.full(B, BOS, dtype=np.int64))
        rows, dists, gates, applied = [], [], [], []
        realized = np.full(B, max_len, dtype=np.int64)
        open_mask = np.ones(B, dtype=bool)
        for j in range(max_len):
            step = self.decode_step(x, h, enc, style_ids=style_ids, styled=True,
                                    gate_override=gate_override)
            h = step.revised
            noisy = step.logits
            if gumbel_noise is not None:
                noisy = noisy + constant(gumbel_noise[j])
            row = ad.softmax(noisy * (1.0 / tau), axis=-1)
            hit_eos = open_mask & (row.values.argmax(axis=1) == EOS)
            realized[hit_eos] = j
            open_mask &= ~hit_eos
            rows.append(row)
            dists.append(ad.softmax(step.logits, axis=-1))
            gates.append(step.gate)
            applied.append(step.applied_gate)
            if not open_mask.any():
                break
            x = ad.matmul(row, self.params["emb"])
        return SoftSentence(rows, dists, gates, realized, applied)


def sample_gumbel(rng, shape, eps: float = 1e-12) -> np.ndarray:
    u = rng.uniform(eps, 1.0 - eps, size=shape)
    return -np.log(-np.log(u))
