"""Sequence-length scaling benchmark: factorized vs softmax attention.

Times single-sequence forward passes of a one-layer encoder at a range of
lengths, takes the median over repeats (warmup passes discarded), and
fits the log-log slope of time against length. The factorized path should
fit an exponent near 1, the softmax baseline near 2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import KernelSpec
from .model import ModelConfig, build_model, forward_classify
from .tensor import no_grad

BENCH_KINDS = ("kernel_linear", "softmax")
WARMUP_PASSES = 2
MIN_MEDIAN_MS = 1.0


@dataclass
class BenchRow:
    kind: str
    length: int
    median_ms: float
    repeats: int


@dataclass
class BenchResult:
    rows: list[BenchRow] = field(default_factory=list)
    exponents: dict[str, float] = field(default_factory=dict)
    resolution_warnings: list[str] = field(default_factory=list)

    def csv(self) -> str:
        lines = ["kind,length,median_ms,repeats"]
        for r in self.rows:
            lines.append(f"{r.kind},{r.length},{r.median_ms:.6f},{r.repeats}")
        return "\n".join(lines) + "\n"


def linear_attention_op_count(length: int, feat_dim: int, value_dim: int) -> int:
    """Exact multiply-add count of the factorized evaluator's four
    aggregation products: building S and z, then applying them per query."""
    s_build = length * feat_dim * value_dim
    z_build = length * feat_dim
    numerator = length * feat_dim * value_dim
    denominator = length * feat_dim
    return s_build + z_build + numerator + denominator


def _bench_config(kind: str, max_len: int, d_model: int, n_heads: int,
                  ffn_dim: int) -> ModelConfig:
    head_dim = d_model // n_heads
    return ModelConfig(
        vocab_size=32, d_model=d_model, n_heads=n_heads, head_dim=head_dim,
        n_layers=1, ffn_dim=ffn_dim, max_len=max_len, classes=2,
        kernel=KernelSpec(variant="linear_softplus", depth=1, head_dim=head_dim),
        attention_kind=kind, eps=1e-6, dropout_rate=0.0, pooling="mean")


def _time_forward(model, tokens, mask, repeats: int) -> float:
    times = []
    with no_grad():
        for _ in range(WARMUP_PASSES):
            forward_classify(model, tokens, mask)
        for _ in range(repeats):
            t0 = time.perf_counter()
            forward_classify(model, tokens, mask)
            times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def bench_scaling(lengths, repeats: int = 5, d_model: int = 64, n_heads: int = 4,
                  ffn_dim: int = 64, seed: int = 0, dtype=np.float32,
                  max_repeats: int = 64) -> BenchResult:
    """Measure both attention kinds across ``lengths`` and fit exponents.

    When the median lands under 1 ms the repeat count doubles (up to
    ``max_repeats``) for a steadier median; if it still cannot resolve, a
    warning is recorded instead of failing.
    """
    lengths = [int(x) for x in lengths]
    if len(lengths) < 3:
        raise ConfigError(f"need >= 3 lengths to fit an exponent, got {lengths}")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError(f"lengths must be strictly increasing, got {lengths}")

    rng = np.random.default_rng(seed)
    result = BenchResult()
    for kind in BENCH_KINDS:
        model = build_model(_bench_config(kind, max(lengths), d_model, n_heads, ffn_dim),
                            seed=seed, dtype=dtype)
        samples = []
        for length in lengths:
            tokens = rng.integers(1, 32, size=(1, length))
            mask = np.ones((1, length), dtype=bool)
            reps = repeats
            median = _time_forward(model, tokens, mask, reps)
            while median < MIN_MEDIAN_MS and reps < max_repeats:
                reps = min(reps * 2, max_repeats)
                median = _time_forward(model, tokens, mask, reps)
            if median < MIN_MEDIAN_MS:
                result.resolution_warnings.append(
                    f"{kind} at L={length}: median {median:.3f} ms below timer "
                    f"comfort zone even at {reps} repeats")
            result.rows.append(BenchRow(kind=kind, length=length,
                                        median_ms=median, repeats=reps))
            samples.append(median)
        slope = np.polyfit(np.log(lengths), np.log(samples), 1)[0]
        result.exponents[kind] = float(slope)
    return result
