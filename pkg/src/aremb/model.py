"""A small decoder-only causal transformer over the autodiff tensors.

The same architecture serves three roles: the trainable encoder (which
additionally owns a table of compressed-token input vectors), the frozen
decoder that scores sequences given a soft prefix, and the frozen reference
snapshot used for log-ratio normalization. Soft prefix vectors bypass the
token-embedding lookup and enter at the input layer, occupying positions
``0..k-1`` under the learned absolute positional embeddings.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    CapacityError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    ShapeError,
    VocabularyError,
)
from .tensor import (
    Tensor,
    concat,
    embedding,
    gelu,
    log_softmax,
    matmul,
    softmax,
    take_per_row,
    transpose,
    tslice,
)

CHECKPOINT_MAGIC = b"AREMB1"
_LN_EPS = 1e-5
_MASK_FILL = -1e9  # finite, so masked logits never produce NaN gradients


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq: int = 64
    seed: int = 0
    n_compress: int = 0

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigurationError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.dim % self.n_heads != 0:
            raise ConfigurationError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.n_compress < 0:
            raise ConfigurationError(f"n_compress must be >= 0, got {self.n_compress}")


def _param_shapes(config: LmConfig) -> dict[str, tuple[int, ...]]:
    """Declared parameter order; checkpoints serialize in exactly this order."""
    d, v = config.dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_seq, d),
    }
    for i in range(config.n_layers):
        shapes[f"layers.{i}.ln1.g"] = (d,)
        shapes[f"layers.{i}.ln1.b"] = (d,)
        shapes[f"layers.{i}.attn.wq"] = (d, d)
        shapes[f"layers.{i}.attn.wk"] = (d, d)
        shapes[f"layers.{i}.attn.wv"] = (d, d)
        shapes[f"layers.{i}.attn.wo"] = (d, d)
        shapes[f"layers.{i}.ln2.g"] = (d,)
        shapes[f"layers.{i}.ln2.b"] = (d,)
        shapes[f"layers.{i}.mlp.w1"] = (d, 4 * d)
        shapes[f"layers.{i}.mlp.b1"] = (4 * d,)
        shapes[f"layers.{i}.mlp.w2"] = (4 * d, d)
        shapes[f"layers.{i}.mlp.b2"] = (d,)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    shapes["head"] = (d, v)
    if config.n_compress > 0:
        shapes["compress_tokens"] = (config.n_compress, d)
    return shapes


class LmModel:
    """Config plus named parameter tensors; ``frozen`` models take no gradients."""

    def __init__(self, config: LmConfig, params: dict[str, Tensor], frozen: bool = False):
        self.config = config
        self.params = params
        self.frozen = frozen
        for p in params.values():
            p.requires_grad = not frozen
            p.grad = np.zeros_like(p.data) if p.requires_grad else None

    @classmethod
    def init(cls, config: LmConfig, dtype=np.float32) -> "LmModel":
        """Seeded init: layernorm gains 1, biases 0, embeddings normal(0, 1/sqrt(d)),
        other weights normal(0, 2/sqrt(d)).

        The frozen decoder is never trained, so it must be steerable at init:
        contracting weights (e.g. the usual 0.02) bound its logits so tightly
        that no soft prefix can make it reconstruct anything. The 2/sqrt(d)
        scale keeps the frozen network an expressive mixing function,
        reservoir-style.
        """
        rng = np.random.default_rng(config.seed)
        w_std = 2.0 / np.sqrt(config.dim)
        emb_std = 1.0 / np.sqrt(config.dim)
        params: dict[str, Tensor] = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith(".g"):
                data = np.ones(shape, dtype=dtype)
            elif name.endswith((".b", ".b1", ".b2")):
                data = np.zeros(shape, dtype=dtype)
            elif name in ("tok_emb", "pos_emb", "compress_tokens"):
                data = (emb_std * rng.standard_normal(shape)).astype(dtype)
            else:
                data = (w_std * rng.standard_normal(shape)).astype(dtype)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    def copy(self, frozen: bool | None = None) -> "LmModel":
        params = {name: Tensor(p.data.copy()) for name, p in self.params.items()}
        return LmModel(self.config, params, frozen=self.frozen if frozen is None else frozen)

    def freeze(self) -> "LmModel":
        return self.copy(frozen=True)

    def astype(self, dtype) -> "LmModel":
        params = {name: Tensor(p.data.astype(dtype)) for name, p in self.params.items()}
        return LmModel(self.config, params, frozen=self.frozen)

    def trainable(self) -> dict[str, Tensor]:
        return {name: p for name, p in self.params.items() if p.requires_grad}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_bytes(self) -> bytes:
        """Concatenated raw parameter bytes, for bitwise comparisons."""
        return b"".join(p.data.tobytes() for p in self.params.values())


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + _LN_EPS) ** -0.5 * g + b


_mask_cache: dict[tuple[int, str], np.ndarray] = {}


def _causal_mask(length: int, dtype) -> np.ndarray:
    key = (length, np.dtype(dtype).name)
    mask = _mask_cache.get(key)
    if mask is None:
        mask = np.triu(np.full((length, length), _MASK_FILL, dtype=dtype), k=1)
        _mask_cache[key] = mask
    return mask


def _attention(model: LmModel, i: int, x: Tensor) -> Tensor:
    cfg = model.config
    length = x.data.shape[0]
    head_dim = cfg.dim // cfg.n_heads
    scale = 1.0 / np.sqrt(head_dim)
    q = matmul(x, model.params[f"layers.{i}.attn.wq"])
    k = matmul(x, model.params[f"layers.{i}.attn.wk"])
    v = matmul(x, model.params[f"layers.{i}.attn.wv"])
    mask = Tensor(_causal_mask(length, x.data.dtype))
    outs = []
    for h in range(cfg.n_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        q_h = tslice(q, (slice(None), cols))
        k_h = tslice(k, (slice(None), cols))
        v_h = tslice(v, (slice(None), cols))
        scores = matmul(q_h, transpose(k_h)) * scale + mask
        outs.append(matmul(softmax(scores), v_h))
    return matmul(concat(outs, axis=1), model.params[f"layers.{i}.attn.wo"])


def _mlp(model: LmModel, i: int, x: Tensor) -> Tensor:
    h = gelu(matmul(x, model.params[f"layers.{i}.mlp.w1"]) + model.params[f"layers.{i}.mlp.b1"])
    return matmul(h, model.params[f"layers.{i}.mlp.w2"]) + model.params[f"layers.{i}.mlp.b2"]


def run_transformer(model: LmModel, x: Tensor) -> Tensor:
    """Positions + pre-LN blocks + final layernorm over an input-embedding matrix."""
    length = x.data.shape[0]
    if length > model.config.max_seq:
        raise CapacityError(f"sequence length {length} exceeds max_seq {model.config.max_seq}")
    h = x + tslice(model.params["pos_emb"], (slice(0, length), slice(None)))
    for i in range(model.config.n_layers):
        a = _layer_norm(h, model.params[f"layers.{i}.ln1.g"], model.params[f"layers.{i}.ln1.b"])
        h = h + _attention(model, i, a)
        m = _layer_norm(h, model.params[f"layers.{i}.ln2.g"], model.params[f"layers.{i}.ln2.b"])
        h = h + _mlp(model, i, m)
    return _layer_norm(h, model.params["ln_f.g"], model.params["ln_f.b"])


def _check_tokens(model: LmModel, tokens) -> np.ndarray:
    ids = np.asarray(list(tokens), dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= model.config.vocab_size):
        raise VocabularyError(
            f"token id out of range [0, {model.config.vocab_size}): {ids.min()}..{ids.max()}"
        )
    return ids


def input_embeddings(model: LmModel, prefix: Tensor | None, tokens) -> Tensor:
    """Assemble the input matrix: optional soft prefix rows, then token rows."""
    ids = _check_tokens(model, tokens)
    pieces: list[Tensor] = []
    if prefix is not None:
        if prefix.data.ndim != 2 or prefix.data.shape[1] != model.config.dim:
            raise ShapeError(f"prefix shape {prefix.data.shape} vs model dim {model.config.dim}")
        pieces.append(prefix)
    if ids.size:
        pieces.append(embedding(model.params["tok_emb"], ids))
    if not pieces:
        raise ValueError("forward requires a prefix or at least one token")
    return pieces[0] if len(pieces) == 1 else concat(pieces, axis=0)


def forward(model: LmModel, prefix: Tensor | None, tokens) -> Tensor:
    """Next-token logits at every position, shape (k + len(tokens), vocab)."""
    hidden = run_transformer(model, input_embeddings(model, prefix, tokens))
    return matmul(hidden, model.params["head"])


def sequence_log_prob(model: LmModel, prefix: Tensor, d) -> Tensor:
    """Teacher-forced log p(d | prefix) = sum_t log p(d_t | d_<t, prefix).

    The model conditions on the soft prefix and the target's own earlier
    tokens only; no other context enters. Differentiable with respect to the
    prefix and any unfrozen model parameters.
    """
    d = list(d)
    if not d:
        raise ValueError("sequence_log_prob: target sequence is empty")
    k = prefix.data.shape[0]
    logits = forward(model, prefix, d[:-1])
    rows = tslice(logits, (slice(k - 1, k - 1 + len(d)), slice(None)))
    return take_per_row(log_softmax(rows), np.asarray(d, dtype=np.intp)).sum()


# ---- checkpoint io --------------------------------------------------------


def save_checkpoint(model: LmModel, path) -> None:
    """Magic, length-prefixed config JSON, then named float32 blobs in declared order."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    header = dict(asdict(model.config))
    header["frozen"] = model.frozen
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", p.data.ndim))
        for dim in p.data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    chunk = fh.read(n)
    if len(chunk) != n:
        raise CheckpointTruncatedError(f"expected {n} more bytes, got {len(chunk)}")
    return chunk


def load_checkpoint(path, dtype=np.float32) -> LmModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointVersionError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        frozen = bool(header.pop("frozen", False))
        config = LmConfig(**header)
        expected = _param_shapes(config)
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict[str, Tensor] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            if name not in expected:
                raise CheckpointShapeError(f"unexpected tensor {name!r} for this config")
            if shape != expected[name]:
                raise CheckpointShapeError(
                    f"tensor {name!r}: stored shape {shape} vs config shape {expected[name]}"
                )
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * count)
            data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
            params[name] = Tensor(data, requires_grad=True)
        missing = set(expected) - set(params)
        if missing:
            raise CheckpointShapeError(f"missing tensors: {sorted(missing)}")
    return LmModel(config, params, frozen=frozen)
