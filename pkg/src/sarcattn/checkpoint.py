"""Checkpoint persistence.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON
header (format version, model config, vocabulary, tensor shape table,
optional optimizer shape table, metadata), then the raw float64
little-endian payload with tensors in shape-table order. The header is
greppable; the payload round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor
from .model import (ModelConfig, ModelParams, AttentionLayerParams,
                    GRUDirectionParams, GRUParams, HeadParams)
from .text import Vocabulary

MAGIC = b"SARCCKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    params: ModelParams
    adam: "AdamState | None"
    metadata: dict


def save_checkpoint(path, cfg: ModelConfig, vocab: Vocabulary,
                    params: ModelParams, adam_state=None, metadata=None):
    named = params.named_tensors()
    table = [{"name": n, "shape": list(t.data.shape)} for n, t in named]
    payload = [np.ascontiguousarray(t.data).astype("<f8").tobytes()
               for _, t in named]

    opt = None
    if adam_state is not None:
        opt_entries = []
        for kind, store in (("m", adam_state.m), ("v", adam_state.v)):
            for name in sorted(store):
                arr = store[name]
                opt_entries.append(
                    {"name": f"{kind}.{name}", "shape": list(arr.shape)})
                payload.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
        opt = {"t": adam_state.t, "lr": adam_state.lr,
               "beta1": adam_state.beta1, "beta2": adam_state.beta2,
               "eps": adam_state.eps, "tensors": opt_entries}

    header = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "vocab": vocab.itos,
        "embedding_trainable": params.embedding_trainable,
        "tensors": table,
        "optimizer": opt,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: {what} "
                              f"(wanted {n} bytes, got {len(data)})")
    return data


def _expected_table(cfg: ModelConfig):
    d = cfg.embed_dim
    u = cfg.gru_hidden // 2
    table = {"embedding": (cfg.vocab_size, d)}
    for i in range(cfg.num_layers):
        for f in ("wq", "wk", "wv", "wo"):
            table[f"layers.{i}.{f}"] = (d, d)
        table[f"layers.{i}.ln_gain"] = (d,)
        table[f"layers.{i}.ln_bias"] = (d,)
    for dirname in ("fwd", "bwd"):
        for f in ("w_r", "w_z", "w_h"):
            table[f"gru.{dirname}.{f}"] = (d, u)
        for f in ("u_r", "u_z", "u_h"):
            table[f"gru.{dirname}.{f}"] = (u, u)
        for f in ("b_r", "b_z", "b_h"):
            table[f"gru.{dirname}.{f}"] = (u,)
    table["head.w"] = (cfg.gru_hidden, 1)
    table["head.b"] = (1,)
    return table


def _build_params(cfg: ModelConfig, arrays: dict, trainable: bool) -> ModelParams:
    def t(name):
        return Tensor(arrays[name])

    layers = [AttentionLayerParams(
        wq=t(f"layers.{i}.wq"), wk=t(f"layers.{i}.wk"),
        wv=t(f"layers.{i}.wv"), wo=t(f"layers.{i}.wo"),
        ln_gain=t(f"layers.{i}.ln_gain"), ln_bias=t(f"layers.{i}.ln_bias"))
        for i in range(cfg.num_layers)]

    def direction(d):
        return GRUDirectionParams(**{
            f: t(f"gru.{d}.{f}")
            for f in ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h",
                      "b_r", "b_z", "b_h")})

    return ModelParams(
        embedding=t("embedding"), layers=layers,
        gru=GRUParams(fwd=direction("fwd"), bwd=direction("bwd")),
        head=HeadParams(w=t("head.w"), b=t("head.b")),
        embedding_trainable=trainable)


def load_checkpoint(path) -> Checkpoint:
    """Load and validate; any structural problem raises CheckpointError
    without returning a partial model."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(
                f"not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}")
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"incompatible checkpoint format version {version!r} "
                f"(this build reads version {FORMAT_VERSION})")
        try:
            cfg = ModelConfig.from_dict(header["config"])
            itos = list(header["vocab"])
            table = header["tensors"]
            trainable = bool(header["embedding_trainable"])
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"malformed checkpoint header: {exc}")

        expected = _expected_table(cfg)
        found = [e["name"] for e in table]
        if found != list(expected):
            raise CheckpointError(
                "checkpoint tensor table does not match its config "
                f"(expected {len(expected)} tensors, found {len(found)})")
        for entry in table:
            want = expected[entry["name"]]
            if tuple(entry["shape"]) != want:
                raise CheckpointError(
                    f"tensor {entry['name']!r} has shape "
                    f"{tuple(entry['shape'])}, config implies {want}")
        if len(itos) != cfg.vocab_size:
            raise CheckpointError(
                f"vocabulary size {len(itos)} does not match config "
                f"vocab_size {cfg.vocab_size}")

        arrays = {}
        for entry in table:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * 8, f"tensor {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(
                raw, dtype="<f8").reshape(shape).copy()

        adam = None
        opt = header.get("optimizer")
        if opt is not None:
            from .training import AdamState
            adam = AdamState(lr=opt["lr"], beta1=opt["beta1"],
                             beta2=opt["beta2"], eps=opt["eps"], t=opt["t"])
            for entry in opt["tensors"]:
                shape = tuple(int(s) for s in entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = _read_exact(fh, count * 8,
                                  f"optimizer tensor {entry['name']!r}")
                kind, _, name = entry["name"].partition(".")
                store = adam.m if kind == "m" else adam.v
                store[name] = np.frombuffer(
                    raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("checkpoint has trailing bytes past the "
                                  "declared payload")

    params = _build_params(cfg, arrays, trainable)
    stoi = {t: i for i, t in enumerate(itos)}
    vocab = Vocabulary(itos=itos, stoi=stoi)
    return Checkpoint(config=cfg, vocab=vocab, params=params, adam=adam,
                      metadata=header.get("metadata", {}))
