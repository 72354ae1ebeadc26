"""Self-contained verification battery behind the ``verify`` subcommand.

Every check runs in 64-bit and prints one pass/fail line: factorized
attention against the quadratic oracle for each kernel variant and depth,
finite-difference gradient checks on every parameter group of a small
model, positivity sweeps, orthogonal initialization, low-rank gate
materialization, and the closed-form parameter counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (init_attention_params, kernel_attention_linear,
                        kernel_attention_quadratic, multi_head_kernel_attention)
from .kernels import (KernelSpec, aoglu_forward, init_kernel_params,
                      kernel_stack_forward, oglu_output_forward, orthogonal_init)
from .model import ModelConfig, build_model, count_params, forward_classify
from .tensor import Tensor, cross_entropy, finite_difference_check

VARIANT_GRID = [("linear_softplus", 1), ("linear_softplus", 2), ("linear_softplus", 3),
                ("glu", 1), ("glu", 2), ("glu", 3),
                ("oglu", 1), ("oglu", 2), ("oglu", 3),
                ("aoglu", 1), ("aoglu", 2), ("aoglu", 3)]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _spec(variant: str, depth: int, n: int = 8) -> KernelSpec:
    return KernelSpec(variant=variant, depth=depth, head_dim=n,
                      gate_rank=max(1, n // 4) if variant == "aoglu" else 0)


def check_oracle_equivalence(trials: int = 10, tol: float = 1e-10) -> list[CheckResult]:
    rng = np.random.default_rng(0)
    results = []
    for variant, depth in VARIANT_GRID:
        spec = _spec(variant, depth)
        worst = 0.0
        for _ in range(trials):
            kp = init_kernel_params(spec, rng, dtype=np.float64)
            length = int(rng.integers(2, 33))
            d = int(rng.integers(2, 17))
            x_q = Tensor(rng.standard_normal((length, spec.head_dim)))
            x_k = Tensor(rng.standard_normal((length, spec.head_dim)))
            v = Tensor(rng.standard_normal((length, d)))
            mask = np.ones(length, dtype=bool)
            if length > 2:
                mask[rng.random(length) < 0.2] = False
                mask[0] = True
            qf = kernel_stack_forward(x_q, spec, kp)
            kf = kernel_stack_forward(x_k, spec, kp)
            lin = kernel_attention_linear(qf, kf, v, mask)
            quad = kernel_attention_quadratic(qf, kf, v, mask)
            worst = max(worst, float(np.abs(lin.data - quad.data).max()))
        results.append(CheckResult(
            name=f"oracle equivalence {variant} depth {depth}",
            passed=worst <= tol,
            detail=f"max |linear - quadratic| = {worst:.3e} (tol {tol:.0e})"))
    return results


def check_gradients(tol: float = 1e-4) -> list[CheckResult]:
    spec = KernelSpec(variant="oglu", depth=2, head_dim=4)
    config = ModelConfig(vocab_size=12, d_model=8, n_heads=2, head_dim=4, n_layers=1,
                         ffn_dim=16, max_len=8, classes=3, kernel=spec,
                         attention_kind="kernel_linear", eps=0.0, dropout_rate=0.0)
    model = build_model(config, seed=5, dtype=np.float64)
    rng = np.random.default_rng(1)
    tokens = rng.integers(1, 12, size=(2, 6))
    mask = np.ones((2, 6), dtype=bool)
    mask[1, -2:] = False
    labels = np.array([0, 2])
    params = model.named_parameters()

    def loss_fn(p):
        return cross_entropy(forward_classify(model, tokens, mask), labels)

    report = finite_difference_check(loss_fn, params, step=1e-5)
    worst_name, worst = max(((n, r.max_rel_err) for n, r in report.items()),
                            key=lambda kv: kv[1])
    any_failed = any(r.failed for r in report.values())
    return [CheckResult(
        name="finite-difference gradients (all parameter groups)",
        passed=worst <= tol and not any_failed,
        detail=f"worst group {worst_name}: rel err {worst:.3e} (tol {tol:.0e})")]


def check_positivity(samples: int = 10_000) -> list[CheckResult]:
    rng = np.random.default_rng(2)
    results = []
    for variant, depth in VARIANT_GRID:
        spec = _spec(variant, depth)
        kp = init_kernel_params(spec, rng, dtype=np.float64)
        x = Tensor(rng.normal(0.0, 3.0, size=(samples, spec.head_dim)))
        out = kernel_stack_forward(x, spec, kp)
        lo = float(out.data.min())
        results.append(CheckResult(
            name=f"positivity {variant} depth {depth}",
            passed=lo > 0.0,
            detail=f"min output {lo:.3e} over {samples} draws from N(0, 9)"))
    return results


def check_orthogonal_init(tol: float = 1e-12) -> list[CheckResult]:
    worst = 0.0
    for n in (1, 4, 16, 64, 128):
        q = orthogonal_init(n, seed=n)
        worst = max(worst, float(np.abs(q.T @ q - np.eye(n)).max()))
    return [CheckResult(name="orthogonal initialization",
                        passed=worst <= tol,
                        detail=f"max |Q^T Q - I| = {worst:.3e} over n <= 128")]


def check_gate_materialization(tol: float = 1e-12) -> list[CheckResult]:
    rng = np.random.default_rng(3)
    spec = KernelSpec(variant="aoglu", depth=1, head_dim=16, gate_rank=4)
    kp = init_kernel_params(spec, rng, dtype=np.float64)
    layer = kp.layers[0]
    x = Tensor(rng.standard_normal((32, 16)))
    factored = aoglu_forward(x, layer["w_feat"], layer["gate_in"], layer["gate_out"])
    dense_gate = Tensor(layer["gate_in"].data @ layer["gate_out"].data)
    dense = oglu_output_forward(x, layer["w_feat"], dense_gate)
    diff = float(np.abs(factored.data - dense.data).max())
    return [CheckResult(name="low-rank gate materialization",
                        passed=diff <= tol,
                        detail=f"max diff factored vs dense gate = {diff:.3e}")]


def _kernel_param_formula(spec: KernelSpec) -> int:
    n, r = spec.head_dim, spec.gate_rank
    if spec.variant == "linear_softplus":
        return spec.depth * n * n
    if spec.variant in ("glu", "oglu"):
        return spec.depth * 2 * n * n
    low_rank_layer = n * n + 2 * n * r
    if spec.low_rank_all_layers:
        return spec.depth * low_rank_layer
    return (spec.depth - 1) * 2 * n * n + low_rank_layer


def check_param_counts() -> list[CheckResult]:
    results = []
    for variant, depth in (("linear_softplus", 1), ("glu", 2), ("aoglu", 3)):
        spec = _spec(variant, depth, n=16)
        config = ModelConfig(vocab_size=16, d_model=32, n_heads=2, head_dim=16,
                             n_layers=2, ffn_dim=64, max_len=32, classes=2, kernel=spec,
                             attention_kind="kernel_linear", dropout_rate=0.0)
        model = build_model(config, seed=0)
        account = count_params(model)
        d, f = config.d_model, config.ffn_dim
        base_expected = (config.vocab_size * d + config.max_len * d
                         + config.n_layers * (4 * d * d + d * f + f + f * d + d + 4 * d)
                         + 2 * d + d * config.classes + config.classes)
        kernel_expected = config.n_layers * config.n_heads * _kernel_param_formula(spec)
        ok = account.base_params == base_expected and account.kernel_params == kernel_expected
        results.append(CheckResult(
            name=f"parameter closed form {variant} depth {depth}",
            passed=ok,
            detail=f"base {account.base_params} (expected {base_expected}), "
                   f"kernel {account.kernel_params} (expected {kernel_expected})"))

    n = 64
    linear = _kernel_param_formula(KernelSpec(variant="linear_softplus", depth=1, head_dim=n))
    glu = _kernel_param_formula(KernelSpec(variant="glu", depth=1, head_dim=n))
    aoglu = _kernel_param_formula(KernelSpec(variant="aoglu", depth=1, head_dim=n,
                                             gate_rank=n // 4))
    results.append(CheckResult(
        name="gated layer doubles the linear parametrization",
        passed=glu == 2 * linear,
        detail=f"glu {glu} vs 2 * linear {2 * linear}"))
    results.append(CheckResult(
        name="rank-n/4 gate cuts the gated layer by 25%",
        passed=aoglu * 4 == glu * 3,
        detail=f"aoglu {aoglu} vs 0.75 * glu {int(glu * 0.75)}"))
    return results


def run_verify(log=print) -> bool:
    """Run the whole battery; prints one line per property."""
    checks: list[CheckResult] = []
    checks += check_oracle_equivalence()
    checks += check_gradients()
    checks += check_positivity()
    checks += check_orthogonal_init()
    checks += check_gate_materialization()
    checks += check_param_counts()
    all_ok = True
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        log(f"[{status}] {c.name}: {c.detail}")
        all_ok &= c.passed
    log(f"{'all checks passed' if all_ok else 'CHECKS FAILED'} "
        f"({sum(c.passed for c in checks)}/{len(checks)})")
    return all_ok
