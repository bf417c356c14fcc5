"""Reweighted fine-tuning loop with periodic score refresh, plus greedy selection.

Every step samples a batch from a seeded epoch shuffle, computes
per-example gradients of the unconditional loss, weights them using the
most recently stored raw scores of the batch members, and applies one
optimizer update. Scores for the whole training set are recomputed on the
refresh schedule; between refreshes the stored raw scores are reused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Dataset
from .embed import build_index
from .model import DPO_LOSS, Gradients, LossSpec, ModelParams, example_loss, loss_and_grad
from .reweight import UNIFORM, WeightingMode, compute_weights, weighted_gradient
from .score import ICA, ONE_SHOT, RHO, SCORER_KINDS, ScoreTable, ScorerContext, score_dataset, score_example

SGD = "sgd"
ADAM = "adam"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    """All knobs of one training run."""

    steps: int = 100
    batch_size: int = 8
    refreshes: int = 1
    knn_k: int = 3
    lr: float = 1e-3
    optimizer: str = ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    scorer: str | None = ICA
    weighting: WeightingMode = field(default_factory=WeightingMode)
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0
    eval_every: int = 0
    grad_normalize: bool = False
    oracle_lr: float = 1e-2
    position_matched: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.refreshes < 1:
            raise ValueError("refreshes must be at least 1")
        if self.knn_k < 1:
            raise ValueError("knn_k must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in (SGD, ADAM):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.scorer is not None and self.scorer not in SCORER_KINDS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.eval_every < 0:
            raise ValueError("eval_every must be nonnegative")

    def control_variant(self) -> "TrainConfig":
        """Standard training: no scoring, uniform weights, same everything else."""
        return replace(self, scorer=None, weighting=WeightingMode(UNIFORM))


def refresh_schedule(dataset_size: int, batch_size: int, refreshes: int, steps: int) -> list[int]:
    """Steps at which scores are recomputed: every F = max(1, |D| // (n_B * R))."""
    if dataset_size < 1 or batch_size < 1 or refreshes < 1 or steps < 1:
        raise ValueError("all schedule inputs must be positive")
    period = max(1, dataset_size // (batch_size * refreshes))
    return [t for t in range(steps) if t % period == 0]


@dataclass
class OptimizerState:
    step: int = 0
    m: Gradients | None = None
    v: Gradients | None = None


def apply_update(params: ModelParams, grads: Gradients, cfg: TrainConfig, state: OptimizerState) -> None:
    """One in-place optimizer step on the parameter tree."""
    if cfg.optimizer == SGD:
        for k, p in params.tensors.items():
            p -= cfg.lr * grads[k]
        return
    if state.m is None:
        state.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.tensors.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        p -= cfg.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + cfg.adam_eps)


@dataclass
class RunMetrics:
    """Append-only event stream: step records, eval records, refresh tags."""

    records: list[dict] = field(default_factory=list)

    def log_step(self, step: int, train_loss: float, weights: np.ndarray) -> None:
        self.records.append({
            "event": "step",
            "step": step,
            "train_loss": float(train_loss),
            "w_min": float(weights.min()),
            "w_mean": float(weights.mean()),
            "w_max": float(weights.max()),
        })

    def log_eval(self, step: int, holdout_loss: float, test_loss: float | None) -> None:
        rec = {"event": "eval", "step": step, "holdout_loss": float(holdout_loss)}
        if test_loss is not None:
            rec["test_loss"] = float(test_loss)
        self.records.append(rec)

    def log_refresh(self, step: int) -> None:
        self.records.append({"event": "refresh", "step": step})

    @property
    def refresh_steps(self) -> list[int]:
        return [r["step"] for r in self.records if r["event"] == "refresh"]

    def eval_points(self) -> list[dict]:
        return [r for r in self.records if r["event"] == "eval"]

    def step_losses(self) -> list[float]:
        return [r["train_loss"] for r in self.records if r["event"] == "step"]

    def final_holdout_loss(self) -> float:
        evals = self.eval_points()
        if not evals:
            raise ValueError("run recorded no evaluations")
        return evals[-1]["holdout_loss"]

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "RunMetrics":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return cls(records)


def evaluate_holdout(params: ModelParams, dataset: Dataset, loss_spec: LossSpec) -> float:
    """Arithmetic mean per-example loss."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if dataset.kind != loss_spec.dataset_kind():
        raise ValueError(f"{loss_spec.kind} loss cannot evaluate a {dataset.kind} dataset")
    return float(np.mean([example_loss(params, loss_spec, ex) for ex in dataset]))


class _EpochSampler:
    """Without-replacement batches; every example appears once per epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order: np.ndarray = rng.permutation(n)
        self.cursor = 0

    def next_batch(self) -> np.ndarray:
        if self.cursor >= self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        batch = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += len(batch)
        return batch


def _prepare_scoring(train_set: Dataset, holdout: Dataset, init_params: ModelParams,
                     cfg: TrainConfig, spec: LossSpec):
    """Embedding index plus any auxiliary checkpoints the scorer needs."""
    ctx = ScorerContext(oracle_lr=cfg.oracle_lr)
    index = None
    if cfg.scorer == ICA:
        index = build_index(holdout, init_params.config.vocab)
    elif cfg.scorer == RHO:
        ref_cfg = replace(cfg.control_variant(), batch_size=min(cfg.batch_size, len(holdout)), eval_every=0)
        ctx.rho_ref, _ = train(holdout, holdout, init_params, ref_cfg)
    elif cfg.scorer == ONE_SHOT:
        ctx.initial = init_params.copy()
    return index, ctx


def train(train_set: Dataset, holdout: Dataset, init_params: ModelParams, cfg: TrainConfig,
          test_set: Dataset | None = None) -> tuple[ModelParams, RunMetrics]:
    """Run the reweighted loop; returns final parameters and the metric stream."""
    if len(train_set) == 0:
        raise ValueError("training set may not be empty")
    if cfg.batch_size > len(train_set):
        raise ValueError("batch_size exceeds training set size")
    spec = cfg.loss
    if train_set.kind != spec.dataset_kind():
        raise ValueError(f"{spec.kind} loss cannot train on a {train_set.kind} dataset")
    if spec.kind == DPO_LOSS and spec.ref_params is None:
        spec = spec.with_ref(init_params.copy())

    params = init_params.copy()
    index, ctx = _prepare_scoring(train_set, holdout, init_params, cfg, spec)
    schedule = set(refresh_schedule(len(train_set), cfg.batch_size, cfg.refreshes, cfg.steps))
    sampler = _EpochSampler(len(train_set), cfg.batch_size, np.random.default_rng(cfg.seed))
    opt_state = OptimizerState()
    metrics = RunMetrics()
    table: ScoreTable | None = None

    def run_eval(step: int) -> None:
        ho = evaluate_holdout(params, holdout, spec)
        te = evaluate_holdout(params, test_set, spec) if test_set is not None else None
        metrics.log_eval(step, ho, te)

    if cfg.eval_every > 0:
        run_eval(0)
    for t in range(cfg.steps):
        if cfg.scorer is not None and t in schedule:
            table = score_dataset(params, train_set, holdout, cfg.scorer, cfg.knn_k,
                                  index, ctx, spec, step=t,
                                  match_positions=cfg.position_matched)
            metrics.log_refresh(t)
        batch = sampler.next_batch()
        losses, grads = [], []
        for i in batch:
            loss_i, grad_i = loss_and_grad(params, spec, train_set[int(i)])
            if not np.isfinite(loss_i):
                raise TrainingDiverged(t, loss_i)
            losses.append(loss_i)
            grads.append(grad_i)
        raw = table.scores[batch] if table is not None else np.zeros(len(batch))
        weights = compute_weights(raw, cfg.weighting,
                                  dataset_scores=table.scores if table is not None else None)
        apply_update(params, weighted_gradient(weights, grads, cfg.grad_normalize), cfg, opt_state)
        metrics.log_step(t, float(np.mean(losses)), weights)
        if cfg.eval_every > 0 and (t + 1) % cfg.eval_every == 0:
            run_eval(t + 1)
    if not metrics.eval_points() or metrics.eval_points()[-1]["step"] != cfg.steps:
        run_eval(cfg.steps)
    return params, metrics


def greedy_select(train_set: Dataset, holdout: Dataset, init_params: ModelParams, m: int,
                  cfg: TrainConfig) -> list[int]:
    """Repeatedly score remaining candidates, take the argmax (ties toward the
    lowest id), train one step on it, and record the selection order."""
    if m > len(train_set):
        raise ValueError("cannot select more examples than the training set holds")
    cfg = replace(cfg, scorer=cfg.scorer or ICA)
    spec = cfg.loss
    if spec.kind == DPO_LOSS and spec.ref_params is None:
        spec = spec.with_ref(init_params.copy())
    params = init_params.copy()
    index, ctx = _prepare_scoring(train_set, holdout, init_params, cfg, spec)
    opt_state = OptimizerState()
    remaining = list(range(len(train_set)))
    selected: list[int] = []
    for _ in range(m):
        scored = [
            (score_example(cfg.scorer, params, train_set[i], holdout, index,
                           cfg.knn_k, ctx, spec,
                           match_positions=cfg.position_matched), i)
            for i in remaining
        ]
        best = min(scored, key=lambda pair: (-pair[0], pair[1]))[1]
        selected.append(best)
        remaining.remove(best)
        _, grad = loss_and_grad(params, spec, train_set[best])
        apply_update(params, grad, cfg, opt_state)
    return selected
