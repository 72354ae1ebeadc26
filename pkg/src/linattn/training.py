"""Training loop, Adam optimizer, evaluation, and the multi-seed protocol.

One optimizer step averages gradients over ``accumulation_steps``
micro-batches (each micro-batch loss is an example mean; the summed
micro gradients are divided by the number of micro-batches), which makes
k micro-batches of size b equivalent to one batch of size k*b. The loss
is cross-entropy plus the weighted orthogonality penalty; the metrics
stream records the penalty unweighted so runs with different weights are
comparable.

A non-finite loss aborts the run with a diverged flag instead of
continuing on garbage.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import Batch, Dataset, MatchBatch, batch_iter
from .errors import ConfigError
from .kernels import orthogonality_penalty
from .model import (Model, budget_check, build_model, count_params,
                    forward_classify, forward_match, save_checkpoint)
from .tensor import Tensor, backward, no_grad


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    task_loss: float
    ortho_penalty: float
    eval_accuracy: float | None
    wall_time_ms: float
    seed: int
    diverged: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    final: MetricsRecord
    records: list[MetricsRecord]
    model: Model
    final_accuracy: float
    diverged: bool
    checkpoint_path: str | None = None
    steps_run: int = 0


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype, copy=False)


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int,
          decay: str = "linear") -> float:
    """Linear warmup to ``base_lr`` then linear-to-zero or inverse-sqrt decay."""
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    if decay == "linear":
        span = max(total_steps - warmup_steps, 1)
        return base_lr * max(total_steps - step, 0) / span
    return base_lr * math.sqrt(max(warmup_steps, 1) / step)


def _forward_loss(model: Model, batch, ortho_weight: float, train: bool, rng):
    if isinstance(batch, MatchBatch):
        logits = forward_match(model, batch.tokens_a, batch.mask_a,
                               batch.tokens_b, batch.mask_b, train=train, rng=rng)
    else:
        logits = forward_classify(model, batch.tokens, batch.mask, train=train, rng=rng)
    task_loss = T.cross_entropy(logits, batch.labels)
    mats = model.regularized_matrices()
    if ortho_weight > 0 and mats:
        penalty = orthogonality_penalty(mats, ortho_weight)
        return T.add(task_loss, penalty), task_loss, logits
    return task_loss, task_loss, logits


def _measure_penalty(model: Model) -> float:
    mats = model.regularized_matrices()
    if not mats:
        return 0.0
    with no_grad():
        return float(orthogonality_penalty(mats, 1.0).item())


def _batch_stream(ds: Dataset, micro_batch: int, max_len: int, seed: int):
    """Endless micro-batches; each epoch reshuffles deterministically."""
    epoch = 0
    while True:
        shuffle_seed = seed * 1_000_003 + epoch
        yield from batch_iter(ds, micro_batch, max_len, shuffle_seed=shuffle_seed)
        epoch += 1


def evaluate(model: Model, ds: Dataset, batch_size: int = 64,
             max_len: int | None = None) -> tuple[float, float]:
    """Deterministic accuracy and mean loss (dropout off, no graphs)."""
    if (model.config.head == "match") != (ds.kind == "match"):
        raise ConfigError(f"dataset kind {ds.kind!r} does not match model head "
                          f"{model.config.head!r}")
    max_len = max_len or model.config.max_len
    correct = 0
    loss_sum = 0.0
    n = 0
    with no_grad():
        for batch in batch_iter(ds, batch_size, max_len, shuffle_seed=None):
            if isinstance(batch, MatchBatch):
                logits = forward_match(model, batch.tokens_a, batch.mask_a,
                                       batch.tokens_b, batch.mask_b)
            else:
                logits = forward_classify(model, batch.tokens, batch.mask)
            preds = np.argmax(logits.data, axis=-1)
            correct += int((preds == batch.labels).sum())
            loss_sum += float(T.cross_entropy(logits, batch.labels).item()) * len(batch.labels)
            n += len(batch.labels)
    return correct / n, loss_sum / n


def train(config: TrainConfig, seed: int, out_dir: str | None = None,
          dtype=np.float32, override_budget: bool = False,
          log=None) -> TrainResult:
    """Train one model; writes ``metrics.jsonl`` and a final checkpoint
    when ``out_dir`` is given.

    Refuses to start when the kernel parameter budget fails, unless
    overridden. Stops early once ``target_accuracy`` is reached.
    """
    config.validate()
    train_ds, eval_ds = config.task.build()

    model = build_model(config.model, seed, dtype=dtype)
    verdict = budget_check(count_params(model), config.budget_limit)
    if not verdict.passed and not override_budget:
        raise ConfigError(
            f"over parameter budget: kernel/base ratio {verdict.ratio:.4f} >= "
            f"{verdict.limit:.2f} (pass --override-budget to train anyway)")

    params = model.named_parameters()
    opt = Adam(params, beta1=config.optimizer.beta1, beta2=config.optimizer.beta2,
               eps=config.optimizer.eps, weight_decay=config.optimizer.weight_decay)
    ortho_weight = config.resolved_ortho_weight
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    stream = _batch_stream(train_ds, config.micro_batch, config.model.max_len, seed)

    metrics_path = None
    metrics_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        metrics_fh = open(metrics_path, "w", encoding="utf-8")

    records: list[MetricsRecord] = []
    final_acc = 0.0
    diverged = False

    def emit(rec: MetricsRecord):
        records.append(rec)
        if metrics_fh:
            metrics_fh.write(rec.to_json() + "\n")
            metrics_fh.flush()
        if log:
            log(f"step {rec.step:5d}  loss {rec.train_loss:.4f}  "
                f"task {rec.task_loss:.4f}  penalty {rec.ortho_penalty:.4e}"
                + (f"  acc {rec.eval_accuracy:.4f}" if rec.eval_accuracy is not None else ""))

    try:
        for step in range(1, config.schedule.total_steps + 1):
            t0 = time.perf_counter()
            grad_sum: dict[str, np.ndarray] = {}
            loss_sum = 0.0
            task_sum = 0.0
            for _ in range(config.accumulation_steps):
                batch = next(stream)
                loss, task_loss, _ = _forward_loss(model, batch, ortho_weight,
                                                   train=True, rng=dropout_rng)
                loss_val = float(loss.item())
                if not math.isfinite(loss_val):
                    diverged = True
                    break
                loss_sum += loss_val
                task_sum += float(task_loss.item())
                grads = backward(loss, params=params)
                for name, p in params.items():
                    g = grads[p].data
                    if name in grad_sum:
                        grad_sum[name] += g
                    else:
                        grad_sum[name] = g.copy()

            if diverged:
                rec = MetricsRecord(step=step, train_loss=float("nan"),
                                    task_loss=float("nan"),
                                    ortho_penalty=_measure_penalty(model),
                                    eval_accuracy=None,
                                    wall_time_ms=(time.perf_counter() - t0) * 1e3,
                                    seed=seed, diverged=True)
                emit(rec)
                return TrainResult(final=rec, records=records, model=model,
                                   final_accuracy=0.0, diverged=True,
                                   steps_run=step)

            k = config.accumulation_steps
            for name in grad_sum:
                grad_sum[name] /= k
            opt.step(grad_sum, lr_at(step, config.optimizer.lr,
                                     config.schedule.warmup_steps,
                                     config.schedule.total_steps,
                                     config.schedule.decay))

            is_final = step == config.schedule.total_steps
            eval_acc = None
            if (config.eval_every and step % config.eval_every == 0) or is_final:
                eval_acc, _ = evaluate(model, eval_ds, batch_size=64)
                final_acc = eval_acc

            emit(MetricsRecord(step=step, train_loss=loss_sum / k, task_loss=task_sum / k,
                               ortho_penalty=_measure_penalty(model),
                               eval_accuracy=eval_acc,
                               wall_time_ms=(time.perf_counter() - t0) * 1e3,
                               seed=seed))

            if (config.target_accuracy is not None and eval_acc is not None
                    and eval_acc >= config.target_accuracy):
                break
    finally:
        if metrics_fh:
            metrics_fh.close()

    checkpoint_path = None
    if out_dir:
        checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
        save_checkpoint(model, checkpoint_path)

    return TrainResult(final=records[-1], records=records, model=model,
                       final_accuracy=final_acc, diverged=False,
                       checkpoint_path=checkpoint_path,
                       steps_run=records[-1].step if records else 0)


@dataclass
class SeedsSummary:
    """Per-seed accuracies plus aggregate statistics.

    ``high_variance`` flags a standard deviation above two accuracy
    points; diverged seeds are excluded from the aggregate and listed.
    """

    rows: list[dict] = field(default_factory=list)
    mean: float = 0.0
    best: float = 0.0
    std: float = 0.0
    high_variance: bool = False
    diverged_seeds: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "mean": self.mean, "best": self.best,
                           "std": self.std, "high_variance": self.high_variance,
                           "diverged_seeds": self.diverged_seeds}, sort_keys=True)


VARIANCE_FLAG_STD = 0.02


def run_seeds(config: TrainConfig, out_dir: str | None = None, dtype=np.float32,
              override_budget: bool = False, log=None) -> SeedsSummary:
    """Train one model per configured seed and aggregate final accuracy."""
    summary = SeedsSummary()
    accs = []
    for seed in config.seeds:
        seed_dir = os.path.join(out_dir, f"seed{seed}") if out_dir else None
        result = train(config, seed, out_dir=seed_dir, dtype=dtype,
                       override_budget=override_budget, log=log)
        row = {"seed": seed, "accuracy": result.final_accuracy,
               "steps": result.steps_run, "diverged": result.diverged}
        summary.rows.append(row)
        if result.diverged:
            summary.diverged_seeds.append(seed)
        else:
            accs.append(result.final_accuracy)
    if accs:
        summary.mean = float(np.mean(accs))
        summary.best = float(np.max(accs))
        summary.std = float(np.std(accs))
        summary.high_variance = summary.std > VARIANCE_FLAG_STD
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            fh.write(summary.to_json() + "\n")
    return summary
