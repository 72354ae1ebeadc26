"""Acceptance gates.

Each test exercises one release criterion at its stated tolerance and
prints a pass/fail line (run with ``pytest tests/test_acceptance.py -v -s``
to see them). Quantitative gates run at desk scale: the synthetic tasks
and timing thresholds stand in for full-size long-sequence benchmarks.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import linattn.tensor as T
from linattn.attention import (init_attention_params, kernel_attention_linear,
                               kernel_attention_quadratic)
from linattn.bench import bench_scaling
from linattn.config import parse_config_file
from linattn.data import gen_text_classification
from linattn.errors import ConfigError
from linattn.kernels import (KernelSpec, init_kernel_params, kernel_stack_forward,
                             orthogonal_init)
from linattn.model import (ModelConfig, ParamAccount, budget_check, build_model,
                           count_params, forward_classify)
from linattn.tensor import Tensor, cross_entropy, finite_difference_check
from linattn.training import run_seeds, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

ALL_VARIANTS = ("linear_softplus", "glu", "oglu", "aoglu")
ALL_DEPTHS = (1, 2, 3)


def report(name: str, ok: bool, detail: str = ""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


def spec_for(variant, depth, n=8):
    return KernelSpec(variant=variant, depth=depth, head_dim=n,
                      gate_rank=n // 4 if variant == "aoglu" else 0)


class TestOracleEquivalence:
    def test_linear_matches_quadratic_for_every_variant_and_depth(self):
        t0 = time.time()
        rng = np.random.default_rng(2024)
        worst = 0.0
        worst_case = ""
        for variant in ALL_VARIANTS:
            for depth in ALL_DEPTHS:
                spec = spec_for(variant, depth)
                for _ in range(100):
                    kp = init_kernel_params(spec, rng, dtype=np.float64)
                    length = int(rng.integers(2, 65))
                    d = int(rng.integers(2, 17))
                    qf = kernel_stack_forward(
                        Tensor(rng.standard_normal((length, 8))), spec, kp)
                    kf = kernel_stack_forward(
                        Tensor(rng.standard_normal((length, 8))), spec, kp)
                    v = Tensor(rng.standard_normal((length, d)))
                    mask = np.ones(length, bool)
                    if length > 2:
                        mask[rng.random(length) < 0.25] = False
                        mask[0] = True
                    lin = kernel_attention_linear(qf, kf, v, mask, eps=0.0)
                    quad = kernel_attention_quadratic(qf, kf, v, mask, eps=0.0)
                    diff = float(np.abs(lin.data - quad.data).max())
                    if diff > worst:
                        worst, worst_case = diff, f"{variant} depth {depth} L={length}"
        elapsed = time.time() - t0
        report("oracle equivalence (4 variants x 3 depths x 100 trials)",
               worst <= 1e-10 and elapsed < 60,
               f"max |linear - quadratic| = {worst:.3e} at {worst_case}, "
               f"tol 1e-10, {elapsed:.1f}s")


class TestGradientCorrectness:
    def test_full_model_gradients_match_finite_differences(self):
        t0 = time.time()
        spec = KernelSpec(variant="aoglu", depth=2, head_dim=4, gate_rank=1)
        config = ModelConfig(vocab_size=12, d_model=8, n_heads=2, head_dim=4,
                             n_layers=1, ffn_dim=16, max_len=8, classes=3, kernel=spec,
                             attention_kind="kernel_linear", eps=0.0, dropout_rate=0.0)
        model = build_model(config, seed=7, dtype=np.float64)
        rng = np.random.default_rng(3)
        tokens = rng.integers(1, 12, size=(2, 7))
        mask = np.ones((2, 7), bool)
        mask[0, -2:] = False
        labels = np.array([1, 2])
        params = model.named_parameters()

        def loss_fn(_):
            from linattn.kernels import orthogonality_penalty
            ce = cross_entropy(forward_classify(model, tokens, mask), labels)
            return T.add(ce, orthogonality_penalty(model.regularized_matrices(), 0.01))

        rep = finite_difference_check(loss_fn, params, step=1e-5)
        worst_name, worst = max(((n, r.max_rel_err) for n, r in rep.items()),
                                key=lambda kv: kv[1])
        failed = [n for n, r in rep.items() if r.failed]
        elapsed = time.time() - t0
        report("gradient correctness (1-layer 2-head kernel attention model)",
               worst <= 1e-4 and not failed and elapsed < 300,
               f"worst {worst_name}: rel err {worst:.3e}, tol 1e-4, "
               f"{len(params)} parameter groups, {elapsed:.1f}s")


class TestPositivity:
    def test_kernel_outputs_strictly_positive(self):
        rng = np.random.default_rng(11)
        worst = np.inf
        worst_case = ""
        for variant in ALL_VARIANTS:
            for depth in ALL_DEPTHS:
                spec = spec_for(variant, depth)
                kp = init_kernel_params(spec, rng, dtype=np.float64)
                x = Tensor(rng.normal(0.0, 3.0, size=(10_000, 8)))
                lo = float(kernel_stack_forward(x, spec, kp).data.min())
                if lo < worst:
                    worst, worst_case = lo, f"{variant} depth {depth}"
        report("positivity (10^4 draws from N(0,9) per variant x depth)",
               worst > 0.0, f"min kernel output = {worst:.3e} at {worst_case}")


class TestParameterAccounting:
    def test_gated_kernel_doubles_linear(self):
        h, n = 4, 16
        def kernel_count(variant, **kw):
            cfg = ModelConfig(vocab_size=16, d_model=h * n, n_heads=h, head_dim=n,
                              n_layers=1, ffn_dim=64, max_len=32, classes=2,
                              kernel=KernelSpec(variant=variant, depth=1, head_dim=n, **kw),
                              attention_kind="kernel_linear", dropout_rate=0.0)
            return count_params(build_model(cfg, 0)).kernel_params

        linear = kernel_count("linear_softplus")
        glu = kernel_count("glu")
        aoglu = kernel_count("aoglu", gate_rank=n // 4)
        ok = glu == 2 * linear and 4 * aoglu == 3 * glu
        report("parameter accounting (gating doubles, rank-n/4 cuts 25%)",
               ok, f"linear {linear}, glu {glu} (=2x), aoglu {aoglu} (=0.75x glu)")

    def test_budget_gate_rejects_at_limit(self):
        at_limit = budget_check(ParamAccount(base_params=1000, kernel_params=100), 0.10)
        below = budget_check(ParamAccount(base_params=1000, kernel_params=99), 0.10)
        config = parse_config_file(CONFIGS / "glu3.cfg")
        over = budget_check(count_params(build_model(config.model, 0)),
                            config.budget_limit)
        with pytest.raises(ConfigError):
            train(config, seed=1)
        ok = (not at_limit.passed) and below.passed and (not over.passed)
        report("budget gate (strict: ratio >= 0.10 rejected, training refused)",
               ok, f"ratio 0.100 -> fail, 0.099 -> pass, shipped 3x gated config "
                   f"ratio {over.ratio:.4f} -> refused")


class TestOrthogonality:
    def test_initialization_is_orthogonal(self):
        worst = 0.0
        for n in (2, 8, 32, 64, 128):
            q = orthogonal_init(n, seed=n + 1)
            worst = max(worst, float(np.abs(q.T @ q - np.eye(n)).max()))
        report("orthogonal initialization (n <= 128)",
               worst <= 1e-12, f"max |Q^T Q - I| = {worst:.3e}, tol 1e-12")

    def test_regularized_run_ends_with_smaller_penalty(self):
        from linattn.config import (OptimizerConfig, ScheduleConfig, TaskSpec,
                                    TrainConfig)

        def run(lam):
            spec = KernelSpec(variant="oglu", depth=1, head_dim=8, ortho_reg_weight=lam)
            cfg = TrainConfig(
                model=ModelConfig(vocab_size=24, d_model=16, n_heads=2, head_dim=8,
                                  n_layers=1, ffn_dim=32, max_len=64, classes=2,
                                  kernel=spec, attention_kind="kernel_linear",
                                  eps=0.0, dropout_rate=0.0),
                task=TaskSpec(source="text_classification", count=96, eval_count=64,
                              length=64, vocab_size=24, classes=2),
                optimizer=OptimizerConfig(lr=1e-3),
                schedule=ScheduleConfig(warmup_steps=0, total_steps=200),
                micro_batch=16, eval_every=0)
            return train(cfg, seed=5, dtype=np.float64).final.ortho_penalty

        with_reg = run(0.01)
        without = run(0.0)
        report("orthogonality regularization (weight 0.01 vs 0, same seed)",
               with_reg < without,
               f"measured penalty {with_reg:.4e} < {without:.4e}")


class TestGradientAccumulation:
    def test_micro_batches_equal_one_large_batch(self):
        from linattn.config import (OptimizerConfig, ScheduleConfig, TaskSpec,
                                    TrainConfig)

        def run(micro, accum):
            spec = KernelSpec(variant="oglu", depth=1, head_dim=8)
            cfg = TrainConfig(
                model=ModelConfig(vocab_size=24, d_model=16, n_heads=2, head_dim=8,
                                  n_layers=1, ffn_dim=32, max_len=64, classes=2,
                                  kernel=spec, attention_kind="kernel_linear",
                                  eps=0.0, dropout_rate=0.0),
                task=TaskSpec(source="text_classification", count=96, eval_count=64,
                              length=64, vocab_size=24, classes=2),
                optimizer=OptimizerConfig(lr=1e-3),
                schedule=ScheduleConfig(warmup_steps=0, total_steps=3),
                micro_batch=micro, accumulation_steps=accum, eval_every=0)
            return train(cfg, seed=3, dtype=np.float64).model.named_parameters()

        p_micro = run(8, 4)
        p_large = run(32, 1)
        worst = max(float(np.abs(p_micro[k].data - p_large[k].data).max())
                    for k in p_micro)
        report("gradient accumulation (4 x 8 vs 1 x 32, three steps, 64-bit)",
               worst <= 1e-12, f"max parameter diff = {worst:.3e}, tol 1e-12")


class TestComplexityScaling:
    def test_fitted_exponents(self):
        t0 = time.time()
        result = bench_scaling([256, 512, 1024, 2048], repeats=5)
        lin = result.exponents["kernel_linear"]
        soft = result.exponents["softmax"]
        elapsed = time.time() - t0
        report("complexity scaling (log-log exponents over L in 256..2048)",
               lin < 1.3 and soft > 1.7 and elapsed < 600,
               f"factorized {lin:.2f} < 1.3, softmax {soft:.2f} > 1.7, {elapsed:.0f}s")


class TestDeskScaleLearning:
    def test_linear_and_gated_kernels_learn_the_separable_task(self):
        t0 = time.time()
        results = {}
        for name in ("classify_linear.cfg", "classify_oglu.cfg"):
            config = parse_config_file(CONFIGS / name)
            res = train(config, seed=1)
            results[name] = res
        elapsed = time.time() - t0
        ok = all(r.final_accuracy >= 0.95 and r.steps_run <= 2000
                 for r in results.values()) and elapsed < 1800
        detail = ", ".join(f"{n.split('.')[0]}: {r.final_accuracy:.3f} in "
                           f"{r.steps_run} steps" for n, r in results.items())
        report("desk-scale learning (>= 95% within 2000 steps, both kernels)",
               ok, f"{detail}, {elapsed:.0f}s total")


class TestFiveSeedProtocol:
    def test_seeds_summary_and_variance_flag(self, capsys):
        from linattn.cli import main

        cfg_text = (CONFIGS / "classify_linear.cfg").read_text()
        cfg_text = cfg_text.replace("total_steps = 2000", "total_steps = 8")
        cfg_text = cfg_text.replace("warmup_steps = 50", "warmup_steps = 0")
        cfg_text = cfg_text.replace("count = 2000", "count = 128")
        cfg_text = cfg_text.replace("eval_count = 500", "eval_count = 64")
        cfg_text = cfg_text.replace("target_accuracy = 0.95", "")
        import tempfile, os
        fd, path = tempfile.mkstemp(suffix=".cfg")
        out_dir = tempfile.mkdtemp()
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(cfg_text)
            code = main(["seeds", "--config", path, "--out-dir", out_dir])
            text = capsys.readouterr().out
            rows = [line for line in text.splitlines() if line.startswith("seed ")]
            has_aggregate = "mean" in text and "best" in text and "std" in text
            summary_path = os.path.join(out_dir, "summary.json")
            ok = code == 0 and len(rows) == 5 and has_aggregate and os.path.exists(summary_path)

            import json
            summary = json.loads(open(summary_path).read())
            flag_consistent = summary["high_variance"] == (summary["std"] > 0.02)
        finally:
            os.unlink(path)
        report("five-seed protocol (per-seed rows, mean/best/std, variance flag)",
               ok and flag_consistent,
               f"5 rows emitted, mean {summary['mean']:.3f}, std {summary['std']:.4f}, "
               f"flagged: {summary['high_variance']}")
