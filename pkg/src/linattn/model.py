"""Desk-scale transformer encoder over kernel attention.

Pre-norm blocks (layer norm -> attention -> residual, layer norm -> gelu
FFN -> residual), learned positional embeddings, a final layer norm, and
either a linear classification head over pooled features or a two-layer
matching head over [u, v, u*v, |u-v|] of two independently encoded
sequences.

The encoder runs with one of three attention evaluators so the same
weights can be checked linear-vs-quadratic and benchmarked against the
softmax baseline. Parameter accounting separates the feature-map weights
from everything else to enforce the additional-parameter budget.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import (AttentionLayerParams, init_attention_params,
                        multi_head_kernel_attention, multi_head_softmax_attention)
from .errors import ConfigError, DataError, ShapeError
from .kernels import KernelSpec
from .tensor import Tensor

ATTENTION_KINDS = ("softmax", "kernel_linear", "kernel_quadratic")
POOLINGS = ("mean", "cls")
HEADS = ("classify", "match")

LAYERNORM_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_size: int = 32
    d_model: int = 64
    n_heads: int = 4
    head_dim: int = 16
    n_layers: int = 1
    ffn_dim: int = 128
    max_len: int = 128
    classes: int = 2
    kernel: KernelSpec = field(default_factory=KernelSpec)
    attention_kind: str = "kernel_linear"
    eps: float = 1e-6
    dropout_rate: float = 0.1
    pooling: str = "mean"
    head: str = "classify"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError(
                f"d_model must equal n_heads * head_dim: {self.d_model} != "
                f"{self.n_heads} * {self.head_dim}")
        if self.kernel.head_dim != self.head_dim:
            raise ConfigError(
                f"kernel head_dim {self.kernel.head_dim} does not match model head_dim "
                f"{self.head_dim}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError(f"attention_kind must be one of {ATTENTION_KINDS}, "
                              f"got {self.attention_kind!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["kernel"] = KernelSpec(**d["kernel"])
        return cls(**d)


@dataclass
class ParamAccount:
    """Exact parameter counts: the encoder body vs the feature-map stacks."""

    base_params: int
    kernel_params: int

    @property
    def ratio(self) -> float:
        return self.kernel_params / self.base_params


@dataclass
class BudgetVerdict:
    passed: bool
    ratio: float
    limit: float

    def __str__(self):
        word = "PASS" if self.passed else "FAIL"
        return f"{word}: kernel/base parameter ratio {self.ratio:.4f} vs limit {self.limit:.2f}"


@dataclass
class Block:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn: AttentionLayerParams
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


class Model:
    """A built encoder: immutable during evaluation, single-writer in
    training (the optimizer rewrites parameter data in place)."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.embed_tokens: Tensor | None = None
        self.embed_pos: Tensor | None = None
        self.blocks: list[Block] = []
        self.final_gamma: Tensor | None = None
        self.final_beta: Tensor | None = None
        self.head_params: dict[str, Tensor] = {}

    # -- parameter registry ------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embed.tokens": self.embed_tokens, "embed.pos": self.embed_pos}
        for i, blk in enumerate(self.blocks):
            p = f"block{i}"
            out[f"{p}.ln1.gamma"] = blk.ln1_gamma
            out[f"{p}.ln1.beta"] = blk.ln1_beta
            out.update(blk.attn.named(f"{p}.attn"))
            out[f"{p}.ln2.gamma"] = blk.ln2_gamma
            out[f"{p}.ln2.beta"] = blk.ln2_beta
            out[f"{p}.ffn.w1"] = blk.ffn_w1
            out[f"{p}.ffn.b1"] = blk.ffn_b1
            out[f"{p}.ffn.w2"] = blk.ffn_w2
            out[f"{p}.ffn.b2"] = blk.ffn_b2
        out["final.gamma"] = self.final_gamma
        out["final.beta"] = self.final_beta
        for k, t in self.head_params.items():
            out[f"head.{k}"] = t
        return out

    def regularized_matrices(self) -> list[Tensor]:
        from .kernels import regularized_matrices
        mats: list[Tensor] = []
        for blk in self.blocks:
            for kp in blk.attn.head_kernels:
                mats.extend(regularized_matrices(self.config.kernel, kp))
            if blk.attn.key_kernels:
                for kp in blk.attn.key_kernels:
                    mats.extend(regularized_matrices(self.config.kernel, kp))
        return mats

    # -- forward -----------------------------------------------------------

    def _layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = T.mean(x, axis=-1, keepdims=True)
        centered = T.sub(x, mu)
        var = T.mean(T.square(centered), axis=-1, keepdims=True)
        inv = T.div(centered, T.sqrt(T.add(var, float(LAYERNORM_EPS))))
        return T.add(T.mul(inv, gamma), beta)

    def _dropout(self, x: Tensor, train: bool, rng) -> Tensor:
        rate = self.config.dropout_rate
        if not train or rate == 0.0 or rng is None:
            return x
        keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
        return T.mul(x, Tensor(keep))

    def encode(self, tokens: np.ndarray, mask: np.ndarray, train: bool = False,
               rng=None) -> Tensor:
        """Token ids (B, L) + mask -> pooled features (B, d_model)."""
        tokens = np.asarray(tokens)
        mask = np.asarray(mask, dtype=bool)
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be (batch, length), got {tokens.shape}")
        if tokens.shape != mask.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match tokens {tokens.shape}")
        b, length = tokens.shape
        cfg = self.config
        if length > cfg.max_len:
            raise ShapeError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise DataError(
                f"token ids must lie in [0, {cfg.vocab_size}), got "
                f"[{tokens.min()}, {tokens.max()}]")

        h = T.add(T.embedding(self.embed_tokens, tokens), self.embed_pos[:length])

        for blk in self.blocks:
            normed = self._layer_norm(h, blk.ln1_gamma, blk.ln1_beta)
            if cfg.attention_kind == "softmax":
                attn_out = multi_head_softmax_attention(normed, blk.attn, mask)
            else:
                evaluator = "linear" if cfg.attention_kind == "kernel_linear" else "quadratic"
                attn_out = multi_head_kernel_attention(
                    normed, blk.attn, cfg.kernel, mask, eps=cfg.eps, evaluator=evaluator)
            h = T.add(h, self._dropout(attn_out, train, rng))

            normed = self._layer_norm(h, blk.ln2_gamma, blk.ln2_beta)
            inner = T.gelu(T.add(T.matmul(normed, blk.ffn_w1), blk.ffn_b1))
            inner = self._dropout(inner, train, rng)
            ffn_out = T.add(T.matmul(inner, blk.ffn_w2), blk.ffn_b2)
            h = T.add(h, ffn_out)

        h = self._layer_norm(h, self.final_gamma, self.final_beta)

        if cfg.pooling == "cls":
            return h[:, 0, :]
        mask_col = Tensor(mask[..., None].astype(self.dtype))
        counts = Tensor(mask.sum(axis=-1, keepdims=True).astype(self.dtype))
        summed = T.sum(T.mul(h, mask_col), axis=-2)
        return T.div(summed, counts)


def _uniform(rng, rows, cols, dtype, bound=None):
    if bound is None:
        bound = 1.0 / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministically initialize a model from a seed.

    Embeddings are N(0, 0.02); projections and FFN weights are
    uniform(+-1/sqrt(fan_in)); norms start at identity; kernel stacks
    follow their spec (orthogonal or uniform).
    """
    config.validate()
    model = Model(config, dtype=dtype)
    rng = np.random.default_rng(seed)
    d, dtype = config.d_model, model.dtype

    def param(arr):
        return Tensor(arr, requires_grad=True)

    model.embed_tokens = param((rng.standard_normal((config.vocab_size, d)) * 0.02).astype(dtype))
    model.embed_pos = param((rng.standard_normal((config.max_len, d)) * 0.02).astype(dtype))

    with_kernels = config.attention_kind != "softmax"
    for _ in range(config.n_layers):
        attn = init_attention_params(d, config.n_heads, config.kernel, rng, dtype,
                                     with_kernels=with_kernels)
        model.blocks.append(Block(
            ln1_gamma=param(np.ones(d, dtype=dtype)),
            ln1_beta=param(np.zeros(d, dtype=dtype)),
            attn=attn,
            ln2_gamma=param(np.ones(d, dtype=dtype)),
            ln2_beta=param(np.zeros(d, dtype=dtype)),
            ffn_w1=param(_uniform(rng, d, config.ffn_dim, dtype)),
            ffn_b1=param(np.zeros(config.ffn_dim, dtype=dtype)),
            ffn_w2=param(_uniform(rng, config.ffn_dim, d, dtype)),
            ffn_b2=param(np.zeros(d, dtype=dtype)),
        ))

    model.final_gamma = param(np.ones(d, dtype=dtype))
    model.final_beta = param(np.zeros(d, dtype=dtype))

    if config.head == "classify":
        model.head_params = {
            "w": param(_uniform(rng, d, config.classes, dtype)),
            "b": param(np.zeros(config.classes, dtype=dtype)),
        }
    else:
        hidden = d
        model.head_params = {
            "w1": param(_uniform(rng, 4 * d, hidden, dtype)),
            "b1": param(np.zeros(hidden, dtype=dtype)),
            "w2": param(_uniform(rng, hidden, 2, dtype)),
            "b2": param(np.zeros(2, dtype=dtype)),
        }
    return model


def forward_classify(model: Model, tokens, mask, train: bool = False, rng=None) -> Tensor:
    """Logits (B, classes) for a batch of padded token sequences."""
    if model.config.head != "classify":
        raise ConfigError("model was built with a matching head")
    pooled = model.encode(tokens, mask, train=train, rng=rng)
    return T.add(T.matmul(pooled, model.head_params["w"]), model.head_params["b"])


def forward_match(model: Model, tokens_a, mask_a, tokens_b, mask_b,
                  train: bool = False, rng=None) -> Tensor:
    """Logits (B, 2) for sequence pairs encoded independently.

    Head input is [u, v, u*v, |u-v|] through a gelu hidden layer.
    """
    if model.config.head != "match":
        raise ConfigError("model was built with a classification head")
    u = model.encode(tokens_a, mask_a, train=train, rng=rng)
    v = model.encode(tokens_b, mask_b, train=train, rng=rng)
    feats = T.concat([u, v, T.mul(u, v), T.abs(T.sub(u, v))], axis=-1)
    hidden = T.gelu(T.add(T.matmul(feats, model.head_params["w1"]), model.head_params["b1"]))
    return T.add(T.matmul(hidden, model.head_params["w2"]), model.head_params["b2"])


def count_params(model: Model) -> ParamAccount:
    """Exact counts with the feature-map weights isolated.

    Both sides are enumerated directly from the parameter registry: kernel
    parameters are the per-head stack weights; base parameters are
    everything else (the same set a softmax model of this architecture
    carries).
    """
    base = 0
    kernel = 0
    for name, t in model.named_parameters().items():
        if ".kernel." in name or ".key_kernel." in name:
            kernel += t.size
        else:
            base += t.size
    return ParamAccount(base_params=base, kernel_params=kernel)


def budget_check(account: ParamAccount, limit: float = 0.10) -> BudgetVerdict:
    """Pass iff kernel params stay strictly below ``limit`` of the base."""
    ratio = account.ratio
    return BudgetVerdict(passed=ratio < limit, ratio=ratio, limit=limit)


# ---------------------------------------------------------------------------
# checkpoint container: little-endian binary with a canonical-text header
# ---------------------------------------------------------------------------

_MAGIC = b"LINATTN1"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(model: Model, path):
    """Write magic, version, canonical-JSON config, then named parameter
    blobs (name, dtype code, shape, raw little-endian data)."""
    params = model.named_parameters()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", _DTYPE_CODES[t.dtype]))
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        data = t.data.astype(t.data.dtype.newbyteorder("<"), copy=False)
        buf.write(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Model:
    """Rebuild a model from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(len(_MAGIC)) != _MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<Q", buf.read(8))
    config = ModelConfig.from_dict(json.loads(buf.read(cfg_len).decode("utf-8")))

    (n_params,) = struct.unpack("<I", buf.read(4))
    blobs: dict[str, np.ndarray] = {}
    dtype = np.float32
    for _ in range(n_params):
        (name_len,) = struct.unpack("<I", buf.read(4))
        name = buf.read(name_len).decode("utf-8")
        (code,) = struct.unpack("<B", buf.read(1))
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
        dt = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf.read(count * dt.itemsize), dtype=dt).reshape(shape)
        blobs[name] = np.ascontiguousarray(arr, dtype=dt.newbyteorder("="))
        dtype = np.float32 if code == 0 else np.float64

    model = build_model(config, seed=0, dtype=dtype)
    params = model.named_parameters()
    if set(params) != set(blobs):
        missing = set(params) ^ set(blobs)
        raise DataError(f"{path}: parameter names do not match the config ({sorted(missing)[:4]}...)")
    for name, t in params.items():
        if blobs[name].shape != t.shape:
            raise DataError(f"{path}: shape mismatch for {name}: "
                            f"{blobs[name].shape} vs {t.shape}")
        t.data[...] = blobs[name]
    return model
