"""Forward computation: embeddings -> stacked multi-head self-attention ->
bidirectional GRU -> sigmoid score, with attention maps captured.

All model math runs through the autodiff tensors in `sarcattn.tensor`; the
GRU recurrence and the masked softmax additionally route through the
selected kernel backend. Functions here come in two flavours: single
sequence (the documented inference surface) and padded batch (what the
training loop drives). The single-sequence entry points delegate to the
batched ones with a batch of one, so there is exactly one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import Tensor
from .text import PAD_ID, TokenSequence


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture and run hyperparameters.

    The training defaults (heads, layers, gru width, dropout) follow the
    reference setup; embed_dim is free because it tracks whichever
    embedding source is used.
    """

    num_layers: int = 3
    num_heads: int = 8
    embed_dim: int = 128
    gru_hidden: int = 512
    dropout_rate: float = 0.2
    max_len: int = 128
    vocab_size: int = 0
    seed: int = 0
    scale_full_dim: bool = False   # scores / sqrt(D) instead of sqrt(D/#H)
    no_residual: bool = False      # drop residual+layernorm, for ablations

    def validate(self):
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.embed_dim < 1 or self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be a positive multiple "
                f"of num_heads ({self.num_heads})")
        if self.gru_hidden < 2 or self.gru_hidden % 2 != 0:
            raise ConfigError(
                f"gru_hidden must be even and >= 2, got {self.gru_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class AttentionLayerParams:
    """One self-attention layer. The per-head D x (D/#H) projections are
    stored column-stacked as D x D matrices (head h owns columns
    [h*dh, (h+1)*dh))."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    def head_slice(self, h: int, dh: int):
        """The (wk, wq, wv) column block for head h, as graph ops so
        gradients flow back to the stacked matrices."""
        return (T.narrow(self.wk, 1, h * dh, dh),
                T.narrow(self.wq, 1, h * dh, dh),
                T.narrow(self.wv, 1, h * dh, dh))


@dataclass
class GRUDirectionParams:
    w_r: Tensor
    w_z: Tensor
    w_h: Tensor
    u_r: Tensor
    u_z: Tensor
    u_h: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor


@dataclass
class GRUParams:
    fwd: GRUDirectionParams
    bwd: GRUDirectionParams


@dataclass
class HeadParams:
    w: Tensor
    b: Tensor


@dataclass
class ModelParams:
    embedding: Tensor
    layers: list[AttentionLayerParams]
    gru: GRUParams
    head: HeadParams
    embedding_trainable: bool = True

    def named_tensors(self):
        """(name, tensor) pairs in a fixed order; includes the embedding
        whether or not it is trainable."""
        out = [("embedding", self.embedding)]
        for i, layer in enumerate(self.layers):
            for f in ("wq", "wk", "wv", "wo", "ln_gain", "ln_bias"):
                out.append((f"layers.{i}.{f}", getattr(layer, f)))
        for dname, dp in (("fwd", self.gru.fwd), ("bwd", self.gru.bwd)):
            for f in ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h",
                      "b_r", "b_z", "b_h"):
                out.append((f"gru.{dname}.{f}", getattr(dp, f)))
        out.append(("head.w", self.head.w))
        out.append(("head.b", self.head.b))
        return out

    def trainable_tensors(self):
        named = self.named_tensors()
        if not self.embedding_trainable:
            named = [(n, t) for n, t in named if n != "embedding"]
        return named

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


def _xavier(rng, fan_in, fan_out, shape):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape))


def init_params(cfg: ModelConfig, embedding_table=None) -> ModelParams:
    """Fresh parameters drawn from cfg.seed. `embedding_table` (an
    EmbeddingTable) overrides the random embedding init."""
    cfg.validate()
    if cfg.vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {cfg.vocab_size}")
    rng = np.random.default_rng(cfg.seed)
    d, h = cfg.embed_dim, cfg.num_heads
    dh = d // h
    u = cfg.gru_hidden // 2

    if embedding_table is None:
        emb = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, d))
        emb[PAD_ID] = 0.0
        embedding = Tensor(emb)
        emb_trainable = True
    else:
        if embedding_table.matrix.shape != (cfg.vocab_size, d):
            raise ConfigError(
                f"embedding table shape {embedding_table.matrix.shape} does "
                f"not match (vocab_size, embed_dim) = "
                f"({cfg.vocab_size}, {d})")
        embedding = embedding_table.matrix
        emb_trainable = embedding_table.trainable

    layers = []
    for _ in range(cfg.num_layers):
        layers.append(AttentionLayerParams(
            wq=_xavier(rng, d, dh, (d, d)),
            wk=_xavier(rng, d, dh, (d, d)),
            wv=_xavier(rng, d, dh, (d, d)),
            wo=_xavier(rng, d, d, (d, d)),
            ln_gain=Tensor(np.ones(d)),
            ln_bias=Tensor(np.zeros(d)),
        ))

    def direction():
        return GRUDirectionParams(
            w_r=_xavier(rng, d, u, (d, u)),
            w_z=_xavier(rng, d, u, (d, u)),
            w_h=_xavier(rng, d, u, (d, u)),
            u_r=_xavier(rng, u, u, (u, u)),
            u_z=_xavier(rng, u, u, (u, u)),
            u_h=_xavier(rng, u, u, (u, u)),
            b_r=Tensor(np.zeros(u)),
            b_z=Tensor(np.zeros(u)),
            b_h=Tensor(np.zeros(u)),
        )

    gru = GRUParams(fwd=direction(), bwd=direction())
    head = HeadParams(w=_xavier(rng, cfg.gru_hidden, 1, (cfg.gru_hidden, 1)),
                      b=Tensor(np.zeros(1)))
    return ModelParams(embedding=embedding, layers=layers, gru=gru, head=head,
                       embedding_trainable=emb_trainable)


@dataclass
class AttentionRecord:
    """Per-layer, per-head attention maps over the true (unpadded)
    positions of one sequence: maps[layer][head] is an N x N row-stochastic
    array."""

    maps: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.maps)

    @property
    def num_heads(self) -> int:
        return len(self.maps[0]) if self.maps else 0


# attention ---------------------------------------------------------------


def attention_head(x: Tensor, head_params, mask, scale_dim: int):
    """Single attention head on one sequence.

    x           (N, D)
    head_params (wk, wq, wv), each (D, dh)
    mask        length-N booleans, True for real tokens
    scale_dim   width used in the 1/sqrt(.) score scaling

    Returns (output (N, dh), attention map (N, N)); masked key columns get
    exactly zero weight.
    """
    wk, wq, wv = head_params
    k = T.matmul(x, wk)
    q = T.matmul(x, wq)
    v = T.matmul(x, wv)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(scale_dim))
    mask = np.asarray(mask, dtype=bool)
    probs = T.masked_softmax(scores, mask[None, :])
    return T.matmul(probs, v), probs


def _split_heads(t: Tensor, heads: int):
    b, n, d = t.shape
    dh = d // heads
    return T.transpose(T.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))


def _attention_layer_batched(x: Tensor, params: AttentionLayerParams,
                             key_mask: np.ndarray, cfg: ModelConfig):
    """One multi-head layer over a padded batch.

    x (B, N, D), key_mask (B, N) bool. Returns (y (B, N, D),
    probs (B, #H, N, N))."""
    b, n, d = x.shape
    dh = d // cfg.num_heads
    q = _split_heads(T.matmul(x, params.wq), cfg.num_heads)
    k = _split_heads(T.matmul(x, params.wk), cfg.num_heads)
    v = _split_heads(T.matmul(x, params.wv), cfg.num_heads)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
    denom = d if cfg.scale_full_dim else dh
    scores = T.scale(scores, 1.0 / math.sqrt(denom))
    probs = T.masked_softmax(scores, key_mask[:, None, None, :])
    ctx = T.matmul(probs, v)                      # B, H, N, dh
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    mixed = T.matmul(merged, params.wo)
    if not cfg.no_residual:
        mixed = T.add(mixed, x)
        mixed = T.layer_norm(mixed, params.ln_gain, params.ln_bias)
    return mixed, probs


def attention_layer(x: Tensor, params: AttentionLayerParams, mask,
                    cfg: ModelConfig):
    """Multi-head attention layer on one (N, D) sequence: per-head outputs
    concatenated, mixed by the output projection, then residual +
    layernorm. Returns (y (N, D), per-head maps as an (#H, N, N) array)."""
    n, d = x.shape
    mask = np.asarray(mask, dtype=bool).reshape(1, n)
    xb = T.reshape(x, (1, n, d))
    y, probs = _attention_layer_batched(xb, params, mask, cfg)
    return T.reshape(y, (n, d)), probs.data[0].copy()


# GRU ----------------------------------------------------------------------


def gru_sequence(xg: Tensor, u_r: Tensor, u_z: Tensor, u_h: Tensor,
                 lengths, reverse: bool) -> Tensor:
    """Kernel-backed recurrence over a padded batch of precomputed input
    projections xg (B, N, 3u); returns the final hidden state (B, u)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    h, cache = kernels.gru_seq_fwd(
        np.ascontiguousarray(xg.data), u_r.data, u_z.data, u_h.data,
        lengths, reverse)

    def vjp(g):
        return kernels.gru_seq_bwd(
            np.ascontiguousarray(g), u_r.data, u_z.data, u_h.data,
            lengths, reverse, cache)

    return T._result(h, (xg, u_r, u_z, u_h), vjp)


def _gru_direction(x: Tensor, dp: GRUDirectionParams, lengths,
                   reverse: bool) -> Tensor:
    w = T.concat([dp.w_r, dp.w_z, dp.w_h], axis=1)       # D x 3u
    bias = T.concat([dp.b_r, dp.b_z, dp.b_h], axis=0)    # 3u
    xg = T.add(T.matmul(x, w), bias)
    return gru_sequence(xg, dp.u_r, dp.u_z, dp.u_h, lengths, reverse)


def bigru_batched(x: Tensor, params: GRUParams, lengths) -> Tensor:
    """(B, N, D) -> (B, d): forward and backward final states concatenated."""
    hf = _gru_direction(x, params.fwd, lengths, reverse=False)
    hb = _gru_direction(x, params.bwd, lengths, reverse=True)
    return T.concat([hf, hb], axis=1)


def bigru(x: Tensor, params: GRUParams, length: int) -> Tensor:
    """Single sequence (N, D) -> (d,). The forward direction consumes
    positions 1..length, the backward direction length..1; padded positions
    never touch the state."""
    n, d = x.shape
    if not 1 <= length <= n:
        raise ValueError(f"length must be in [1, {n}], got {length}")
    h = bigru_batched(T.reshape(x, (1, n, d)), params,
                      np.array([length], dtype=np.int64))
    return T.reshape(h, (h.shape[1],))


def gru_cell(a_t: Tensor, h_prev: Tensor, dp: GRUDirectionParams) -> Tensor:
    """One GRU step built from primitive tensor ops; the reference the
    fused recurrence kernel is checked against.

    r = sigmoid(W_r a + U_r h + b_r)
    z = sigmoid(W_z a + U_z h + b_z)
    hcand = tanh(W_h a + U_h (r*h) + b_h)
    h' = z*h + (1-z)*hcand
    """
    (d,) = a_t.shape
    (u,) = h_prev.shape
    a2 = T.reshape(a_t, (1, d))
    h2 = T.reshape(h_prev, (1, u))
    r = T.sigmoid(T.add(T.add(T.matmul(a2, dp.w_r), T.matmul(h2, dp.u_r)), dp.b_r))
    z = T.sigmoid(T.add(T.add(T.matmul(a2, dp.w_z), T.matmul(h2, dp.u_z)), dp.b_z))
    hc = T.tanh(T.add(T.add(T.matmul(a2, dp.w_h),
                            T.matmul(T.mul(r, h2), dp.u_h)), dp.b_h))
    h_new = T.add(T.mul(z, h2), T.mul(T.sub(1.0, z), hc))
    return T.reshape(h_new, (u,))


# full model ----------------------------------------------------------------


def forward_batch(ids, mask, lengths, params: ModelParams, cfg: ModelConfig,
                  train_mode: bool = False, rng=None):
    """Padded-batch forward pass.

    ids      (B, N) int token ids, PAD-filled
    mask     (B, N) bool, True at real tokens
    lengths  (B,) ints
    rng      numpy Generator, required when train_mode and dropout > 0

    Returns (scores Tensor (B,), probs_list), where probs_list holds one
    (B, #H, N, N) attention tensor per layer.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    b, n = ids.shape
    use_dropout = train_mode and cfg.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")

    x = T.embedding_lookup(params.embedding, ids)
    if use_dropout:
        x = T.dropout(x, cfg.dropout_rate, rng)
    probs_list = []
    for layer in params.layers:
        x, probs = _attention_layer_batched(x, layer, mask, cfg)
        if use_dropout:
            x = T.dropout(x, cfg.dropout_rate, rng)
        probs_list.append(probs)
    h = bigru_batched(x, params.gru, lengths)
    logits = T.add(T.matmul(h, params.head.w), params.head.b)
    scores = T.sigmoid(T.reshape(logits, (b,)))
    return scores, probs_list


def extract_records(probs_list, lengths) -> list[AttentionRecord]:
    """Slice per-layer (B, #H, N, N) attention tensors into per-sample
    records over true positions only."""
    lengths = np.asarray(lengths)
    records = []
    for bi in range(len(lengths)):
        ln = int(lengths[bi])
        layers = []
        for probs in probs_list:
            layers.append([probs.data[bi, h, :ln, :ln].copy()
                           for h in range(probs.shape[1])])
        records.append(AttentionRecord(maps=layers))
    return records


def forward(seq: TokenSequence, params: ModelParams, cfg: ModelConfig,
            train_mode: bool = False, rng=None):
    """Single-sequence forward pass: returns (score Tensor scalar,
    AttentionRecord). With train_mode False this is a pure function of
    (sequence, parameters)."""
    ids = np.array([seq.ids])
    mask = np.ones((1, seq.length), dtype=bool)
    lengths = np.array([seq.length], dtype=np.int64)
    scores, probs_list = forward_batch(ids, mask, lengths, params, cfg,
                                       train_mode=train_mode, rng=rng)
    record = extract_records(probs_list, lengths)[0]
    return T.reshape(scores, ()), record
