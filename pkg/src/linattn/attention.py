"""Attention evaluators: exact softmax, quadratic kernel oracle, and the
linear factorized form.

The two kernel evaluators compute the same weighted average of values,
with weights proportional to the dot products of positive query/key
features. The quadratic form materializes the full L x L weight matrix
and serves as the correctness oracle; the linear form instead accumulates
the key-feature/value outer-product sum S (C x d) and the key-feature sum
z (C) once, bringing the cost down to O(L * C * d).

All evaluators accept arbitrary leading batch axes. Padding masks are
plain boolean arrays (True = real token) broadcastable against the
evaluator's (..., L) key axis; masked positions contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .kernels import KernelParams, KernelSpec, init_kernel_params, kernel_stack_forward
from .tensor import Tensor


def _as_mask(mask, length: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape[-1] != length:
        raise ShapeError(f"mask length {m.shape[-1]} does not match sequence length {length}")
    if not np.all(np.any(m, axis=-1)):
        raise ContractError("every sequence must have at least one unmasked position")
    return m


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, mask) -> Tensor:
    """Exact softmax attention with 1/sqrt(d) logit scaling.

    Masked key positions receive -inf logits and therefore zero weight.
    """
    length, d = k.shape[-2], q.shape[-1]
    m = _as_mask(mask, length)
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d))
    bias = np.where(m, 0.0, -np.inf).astype(q.dtype)
    scores = T.add(scores, Tensor(np.expand_dims(bias, -2)))
    return T.matmul(T.softmax_rows(scores), v)


def _check_positive(feats: Tensor, name: str):
    lo = float(feats.data.min())
    if not lo > 0:
        raise ContractError(f"{name} must be strictly positive kernel features, min={lo}")


def kernel_attention_quadratic(qf: Tensor, kf: Tensor, v: Tensor, mask,
                               eps: float = 0.0) -> Tensor:
    """Explicit O(L^2) kernel attention; the oracle for the linear form.

    out_i = sum_j w_ij v_j with w_ij = qf_i . kf_j over unmasked j,
    normalized by sum_j w_ij (+ eps).
    """
    _check_positive(qf, "query features")
    _check_positive(kf, "key features")
    length = kf.shape[-2]
    m = _as_mask(mask, length)
    mcol = Tensor(np.expand_dims(m, -2).astype(qf.dtype))  # (..., 1, L)
    scores = T.mul(T.matmul(qf, T.swapaxes(kf, -1, -2)), mcol)
    denom = T.sum(scores, axis=-1, keepdims=True)
    if eps:
        denom = T.add(denom, float(eps))
    return T.div(T.matmul(scores, v), denom)


def kernel_attention_linear(qf: Tensor, kf: Tensor, v: Tensor, mask,
                            eps: float = 0.0) -> Tensor:
    """Factorized kernel attention in O(L * C * d).

    Accumulates S = sum_j m_j kf_j v_j^T and z = sum_j m_j kf_j once, then
    out_i = (qf_i S) / (qf_i . z + eps). Positive features make the
    denominator positive whenever a sequence has an unmasked position.
    """
    length = kf.shape[-2]
    m = _as_mask(mask, length)
    mcol = Tensor(np.expand_dims(m, -1).astype(qf.dtype))  # (..., L, 1)
    kf_m = T.mul(kf, mcol)
    s = T.matmul(T.swapaxes(kf_m, -1, -2), v)                   # (..., C, d)
    z = T.sum(kf_m, axis=-2, keepdims=True)                     # (..., 1, C)
    num = T.matmul(qf, s)                                       # (..., L, d)
    den = T.matmul(qf, T.swapaxes(z, -1, -2))                   # (..., L, 1)
    if eps:
        den = T.add(den, float(eps))
    return T.div(num, den)


@dataclass
class AttentionLayerParams:
    """Projection matrices plus per-head kernel weights for one layer.

    ``head_kernels[i]`` feeds both the query and key slices of head i;
    when ``key_kernels`` is present (spec.share_query_key = False) keys
    get their own stack. Softmax-only layers carry no kernel stacks.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int = 1
    head_kernels: list[KernelParams] = field(default_factory=list)
    key_kernels: list[KernelParams] | None = None

    def named(self, prefix: str = "attn") -> dict[str, Tensor]:
        out = {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k,
               f"{prefix}.w_v": self.w_v, f"{prefix}.w_o": self.w_o}
        for i, kp in enumerate(self.head_kernels):
            out.update(kp.named(f"{prefix}.head{i}.kernel"))
        if self.key_kernels is not None:
            for i, kp in enumerate(self.key_kernels):
                out.update(kp.named(f"{prefix}.head{i}.key_kernel"))
        return out


def init_attention_params(d_model: int, n_heads: int, spec: KernelSpec, seed,
                          dtype=np.float32, with_kernels: bool = True) -> AttentionLayerParams:
    """Uniform(+-1/sqrt(d)) projections; kernel stacks drawn per head."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d_model)

    def proj():
        return Tensor(rng.uniform(-bound, bound, size=(d_model, d_model)).astype(dtype),
                      requires_grad=True)

    params = AttentionLayerParams(w_q=proj(), w_k=proj(), w_v=proj(), w_o=proj(),
                                  n_heads=n_heads)
    if with_kernels:
        params.head_kernels = [init_kernel_params(spec, rng, dtype) for _ in range(n_heads)]
        if not spec.share_query_key:
            params.key_kernels = [init_kernel_params(spec, rng, dtype) for _ in range(n_heads)]
    return params


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., L, d_model) -> (..., h, L, n)"""
    *lead, length, d_model = x.shape
    n = d_model // n_heads
    return T.swapaxes(T.reshape(x, (*lead, length, n_heads, n)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    """(..., h, L, n) -> (..., L, h*n)"""
    *lead, h, length, n = x.shape
    return T.reshape(T.swapaxes(x, -2, -3), (*lead, length, h * n))


def _stack_head_features(x_heads: Tensor, kernels: list[KernelParams],
                         spec: KernelSpec) -> Tensor:
    """Apply each head's feature-map stack to its slice of (..., h, L, n)."""
    feats = []
    for i, kp in enumerate(kernels):
        head = x_heads[..., i, :, :]
        out = kernel_stack_forward(head, spec, kp)
        feats.append(T.reshape(out, out.shape[:-2] + (1,) + out.shape[-2:]))
    return T.concat(feats, axis=-3)


def multi_head_kernel_attention(x: Tensor, params: AttentionLayerParams,
                                spec: KernelSpec, mask, eps: float = 0.0,
                                evaluator: str = "linear") -> Tensor:
    """Project, split into heads, map queries/keys through each head's
    feature stack, run kernel attention per head, merge, project out.

    ``evaluator`` selects the linear factorized path or the quadratic
    oracle (used to cross-check full layers).
    """
    d_model = params.w_q.shape[0]
    if x.shape[-1] != d_model:
        raise ShapeError(f"input dim {x.shape[-1]} does not match projections ({d_model})")
    n_heads = params.n_heads
    if len(params.head_kernels) != n_heads:
        raise ShapeError(f"expected {n_heads} kernel stacks, got {len(params.head_kernels)}")

    q = _split_heads(T.matmul(x, params.w_q), n_heads)
    k = _split_heads(T.matmul(x, params.w_k), n_heads)
    v = _split_heads(T.matmul(x, params.w_v), n_heads)

    qf = _stack_head_features(q, params.head_kernels, spec)
    key_kernels = params.key_kernels if params.key_kernels is not None else params.head_kernels
    kf = _stack_head_features(k, key_kernels, spec)

    m = np.asarray(mask, dtype=bool)
    m_heads = np.expand_dims(m, -2)  # broadcast over heads: (..., 1, L)

    if evaluator == "linear":
        heads_out = kernel_attention_linear(qf, kf, v, m_heads, eps=eps)
    elif evaluator == "quadratic":
        heads_out = kernel_attention_quadratic(qf, kf, v, m_heads, eps=eps)
    else:
        raise ShapeError(f"unknown evaluator {evaluator!r}")

    return T.matmul(_merge_heads(heads_out), params.w_o)


def multi_head_softmax_attention(x: Tensor, params: AttentionLayerParams, mask) -> Tensor:
    """Standard multi-head softmax attention (the quadratic baseline)."""
    d_model = params.w_q.shape[0]
    if x.shape[-1] != d_model:
        raise ShapeError(f"input dim {x.shape[-1]} does not match projections ({d_model})")
    n_heads = params.n_heads
    q = _split_heads(T.matmul(x, params.w_q), n_heads)
    k = _split_heads(T.matmul(x, params.w_k), n_heads)
    v = _split_heads(T.matmul(x, params.w_v), n_heads)
    m = np.expand_dims(np.asarray(mask, dtype=bool), -2)
    heads_out = softmax_attention(q, k, v, m)
    return T.matmul(_merge_heads(heads_out), params.w_o)
