"""Item embedding table and the two interchangeable sequence encoders.

Both encoders map a left-padded id batch to per-position representations H
(B, N, D) plus the representation at each row's final valid position. They
share one interface so the augmentation plugin stays encoder-agnostic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .numkernel import (
    ParamStore,
    Substream,
    Tensor,
    add,
    constant,
    dropout,
    embedding_gather,
    gather_rows_at,
    layer_norm,
    matmul,
    mul,
    relu,
    scale,
    select_time,
    sigmoid,
    softmax_masked,
    stack_time,
    tanh,
    transpose_last2,
)

CHECKPOINT_MAGIC = b"BASR"
CHECKPOINT_VERSION = 1
KIND_CODES = {"attention": 1, "recurrent": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass
class EncoderOutput:
    H: Tensor  # (B, N, D)
    last_state: Tensor  # (B, D), representation at each row's last valid position


class EmbeddingTable:
    """Item embedding matrix of shape (n_items + 1, dim); row 0 is the padding
    row and is pinned to zero."""

    def __init__(self, store: ParamStore, n_items: int, dim: int, init_stream: Substream | None):
        self.n_items = n_items
        self.dim = dim
        if init_stream is None:
            values = np.zeros((n_items + 1, dim))
        else:
            values = init_stream.normal(0.0, 0.02, (n_items + 1, dim))
            values[0, :] = 0.0
        self.weights = store.add("item_emb", values)

    def lookup(self, ids: np.ndarray) -> Tensor:
        return embedding_gather(self.weights, ids)

    def zero_padding_row(self) -> None:
        self.weights.data[0, :] = 0.0

    def rows(self) -> np.ndarray:
        """Embedding rows for real items (1..n_items)."""
        return self.weights.data[1:]


def _xavier(init_stream: Substream | None, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    if init_stream is None:
        return np.zeros(shape)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return init_stream.random(shape) * 2.0 * limit - limit


def last_state_from(H: Tensor, mask: np.ndarray) -> Tensor:
    """Gather H at each row's last mask-true position; all-pad rows get zeros."""
    n = mask.shape[1]
    nonempty = mask.any(axis=1)
    idx = np.where(nonempty, n - 1 - mask[:, ::-1].argmax(axis=1), 0)
    ls = gather_rows_at(H, idx)
    if not nonempty.all():
        ls = mul(ls, constant(nonempty[:, None].astype(H.data.dtype), H.data.dtype))
    return ls


class AttentionEncoder:
    """Causal single-head self-attention blocks with pointwise feed-forward,
    pre-layer-norm residual wiring and learned positional embeddings."""

    def __init__(self, store: ParamStore, dim: int, max_len: int, blocks: int, dropout_rate: float, init_stream):
        self.dim = dim
        self.max_len = max_len
        self.blocks = blocks
        self.dropout_rate = dropout_rate
        self.p = {}
        pos = init_stream.normal(0.0, 0.02, (max_len, dim)) if init_stream is not None else np.zeros((max_len, dim))
        self.p["pos_emb"] = store.add("pos_emb", pos)
        hidden = 4 * dim
        for i in range(blocks):
            pre = f"blk{i}."
            self.p[pre + "ln1.gain"] = store.add(pre + "ln1.gain", np.ones(dim))
            self.p[pre + "ln1.bias"] = store.add(pre + "ln1.bias", np.zeros(dim))
            for w in ("wq", "wk", "wv", "wo"):
                self.p[pre + w] = store.add(pre + w, _xavier(init_stream, dim, dim, (dim, dim)))
                self.p[pre + w[1] + "b"] = store.add(pre + w[1] + "b", np.zeros(dim))
            self.p[pre + "ln2.gain"] = store.add(pre + "ln2.gain", np.ones(dim))
            self.p[pre + "ln2.bias"] = store.add(pre + "ln2.bias", np.zeros(dim))
            self.p[pre + "ffn.w1"] = store.add(pre + "ffn.w1", _xavier(init_stream, dim, hidden, (dim, hidden)))
            self.p[pre + "ffn.b1"] = store.add(pre + "ffn.b1", np.zeros(hidden))
            self.p[pre + "ffn.w2"] = store.add(pre + "ffn.w2", _xavier(init_stream, hidden, dim, (hidden, dim)))
            self.p[pre + "ffn.b2"] = store.add(pre + "ffn.b2", np.zeros(dim))
        self.p["ln_f.gain"] = store.add("ln_f.gain", np.ones(dim))
        self.p["ln_f.bias"] = store.add("ln_f.bias", np.zeros(dim))

    def forward(self, E: Tensor, mask: np.ndarray, dropout_stream=None, training: bool = False) -> EncoderOutput:
        if E.data.ndim != 3 or E.shape[2] != self.dim:
            raise ShapeError(f"attention encoder expects (B, N, {self.dim}), got {E.shape}")
        n = E.shape[1]
        dt = E.data.dtype
        rate = self.dropout_rate
        mask3 = constant(mask[:, :, None].astype(dt), dt)
        attend = np.tril(np.ones((n, n), dtype=bool))[None, :, :] & mask[:, None, :]

        x = add(E, self.p["pos_emb"])
        x = dropout(x, rate, dropout_stream, training)
        x = mul(x, mask3)
        for i in range(self.blocks):
            pre = f"blk{i}."
            h = layer_norm(x, self.p[pre + "ln1.gain"], self.p[pre + "ln1.bias"])
            q = add(matmul(h, self.p[pre + "wq"]), self.p[pre + "qb"])
            k = add(matmul(h, self.p[pre + "wk"]), self.p[pre + "kb"])
            v = add(matmul(h, self.p[pre + "wv"]), self.p[pre + "vb"])
            scores = scale(matmul(q, transpose_last2(k)), 1.0 / np.sqrt(self.dim))
            probs = softmax_masked(scores, attend)
            probs = dropout(probs, rate, dropout_stream, training)
            attn = add(matmul(matmul(probs, v), self.p[pre + "wo"]), self.p[pre + "ob"])
            x = add(x, dropout(attn, rate, dropout_stream, training))
            f = layer_norm(x, self.p[pre + "ln2.gain"], self.p[pre + "ln2.bias"])
            ff = add(matmul(relu(add(matmul(f, self.p[pre + "ffn.w1"]), self.p[pre + "ffn.b1"])), self.p[pre + "ffn.w2"]), self.p[pre + "ffn.b2"])
            x = add(x, dropout(ff, rate, dropout_stream, training))
            x = mul(x, mask3)
        H = mul(layer_norm(x, self.p["ln_f.gain"], self.p["ln_f.bias"]), mask3)
        return EncoderOutput(H, last_state_from(H, mask))


class RecurrentEncoder:
    """Single-layer gated recurrent scan; pad positions carry the hidden state
    through unchanged."""

    def __init__(self, store: ParamStore, dim: int, max_len: int, blocks: int, dropout_rate: float, init_stream):
        self.dim = dim
        self.max_len = max_len
        self.blocks = 1
        self.dropout_rate = dropout_rate
        self.p = {}
        for gate in ("z", "r", "h"):
            self.p["w" + gate] = store.add(f"gru.w{gate}", _xavier(init_stream, dim, dim, (dim, dim)))
            self.p["u" + gate] = store.add(f"gru.u{gate}", _xavier(init_stream, dim, dim, (dim, dim)))
            self.p["b" + gate] = store.add(f"gru.b{gate}", np.zeros(dim))

    def forward(self, E: Tensor, mask: np.ndarray, dropout_stream=None, training: bool = False) -> EncoderOutput:
        if E.data.ndim != 3 or E.shape[2] != self.dim:
            raise ShapeError(f"recurrent encoder expects (B, N, {self.dim}), got {E.shape}")
        b, n, _ = E.shape
        dt = E.data.dtype
        x = dropout(E, self.dropout_rate, dropout_stream, training)
        one = constant(1.0, dt)
        h = constant(np.zeros((b, self.dim)), dt)
        states = []
        for t in range(n):
            xt = select_time(x, t)
            z = sigmoid(add(add(matmul(xt, self.p["wz"]), matmul(h, self.p["uz"])), self.p["bz"]))
            r = sigmoid(add(add(matmul(xt, self.p["wr"]), matmul(h, self.p["ur"])), self.p["br"]))
            cand = tanh(add(add(matmul(xt, self.p["wh"]), matmul(mul(r, h), self.p["uh"])), self.p["bh"]))
            h_new = add(mul(sub_from_one(z, one), h), mul(z, cand))
            mt = constant(mask[:, t : t + 1].astype(dt), dt)
            h = add(mul(h_new, mt), mul(h, sub_from_one(mt, one)))
            states.append(h)
        H = stack_time(states)
        return EncoderOutput(H, last_state_from(H, mask))


def sub_from_one(x: Tensor, one: Tensor) -> Tensor:
    return add(one, scale(x, -1.0))


ENCODER_CLASSES = {"attention": AttentionEncoder, "recurrent": RecurrentEncoder}


class SeqModel:
    """Embedding table plus one encoder; scoring ties output weights to the
    item embeddings (dot products against table rows)."""

    def __init__(self, kind: str, n_items: int, dim: int, max_len: int, blocks: int, dropout_rate: float, dtype, init_stream):
        if kind not in ENCODER_CLASSES:
            raise DataError(f"unknown encoder kind '{kind}'")
        self.kind = kind
        self.n_items = n_items
        self.dim = dim
        self.max_len = max_len
        self.blocks = blocks if kind == "attention" else 1
        self.dropout_rate = dropout_rate
        self.store = ParamStore(dtype)
        self.table = EmbeddingTable(self.store, n_items, dim, init_stream)
        self.encoder = ENCODER_CLASSES[kind](self.store, dim, max_len, self.blocks, dropout_rate, init_stream)

    def encode_ids(self, input_ids: np.ndarray, mask: np.ndarray, dropout_stream=None, training: bool = False) -> EncoderOutput:
        E = self.table.lookup(input_ids)
        return self.encoder.forward(E, mask, dropout_stream=dropout_stream, training=training)

    def encode_repr(self, E: Tensor, mask: np.ndarray, dropout_stream=None, training: bool = False) -> EncoderOutput:
        return self.encoder.forward(E, mask, dropout_stream=dropout_stream, training=training)


def save_checkpoint(path: str, model: SeqModel) -> None:
    """Header (magic, version, kind, dims) followed by every parameter tensor
    in declared order as little-endian float32."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIII",
                CHECKPOINT_VERSION,
                KIND_CODES[model.kind],
                model.n_items,
                model.dim,
                model.max_len,
                model.blocks,
            )
        )
        for _, p in model.store.items():
            fh.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path: str, dropout_rate: float = 0.0) -> SeqModel:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint '{path}': {exc}") from exc
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"'{path}' is not a checkpoint (bad magic)")
    version, kind_code, n_items, dim, max_len, blocks = struct.unpack_from("<IIIIII", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if kind_code not in KIND_NAMES:
        raise DataError(f"unknown encoder kind code {kind_code}")
    model = SeqModel(KIND_NAMES[kind_code], n_items, dim, max_len, blocks, dropout_rate, np.float32, init_stream=None)
    off = 4 + struct.calcsize("<IIIIII")
    for _, p in model.store.items():
        count = p.data.size
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(p.data.shape)
        p.data[...] = arr
        off += count * 4
    if off != len(raw):
        raise DataError(f"checkpoint '{path}' has trailing or missing bytes")
    return model
