"""Data-value scorers: in-context (ICA), RHO, one-shot, and the one-step
and full-retrain holdout oracles used to validate them.

All scorers are pure functions of their inputs; scoring a dataset is an
embarrassingly parallel map, done serially here for determinism.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Dataset, Example
from .embed import EmbedIndex, embed_example, knn
from .model import (
    Gradients,
    LossSpec,
    ModelParams,
    example_loss,
    loss_and_grad,
    loss_with_context,
)

ICA = "ica"
RHO = "rho"
ONE_SHOT = "one_shot"
ORACLE_ONE_STEP = "oracle_one_step"

SCORER_KINDS = (ICA, RHO, ONE_SHOT, ORACLE_ONE_STEP)


class OracleBudgetError(ValueError):
    """Raised when the retraining oracle is asked for more than it should do."""


@dataclass
class ScoreTable:
    """Raw per-example scores plus the step each was computed at."""

    scores: np.ndarray
    computed_at_step: np.ndarray

    @classmethod
    def from_list(cls, values, step: int) -> "ScoreTable":
        scores = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        return cls(scores, np.full(len(scores), step, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class ScorerContext:
    """Auxiliary checkpoints and knobs some scorers require."""

    rho_ref: ModelParams | None = None  # model trained on the holdout set only
    initial: ModelParams | None = None  # pretrained starting checkpoint
    oracle_lr: float = 1e-2


def ica_score(params: ModelParams, example: Example, demos, loss_spec: LossSpec | None = None,
              match_positions: bool = False) -> float:
    """Plain loss minus demonstration-conditioned loss; empty demos give 0 exactly."""
    spec = loss_spec or LossSpec()
    plain, cond = loss_with_context(params, spec, example, demos, match_positions=match_positions)
    return plain - cond


def rho_score(params: ModelParams, ref_params: ModelParams, example: Example,
              loss_spec: LossSpec | None = None) -> float:
    """Loss under the current model minus loss under the holdout-trained reference."""
    spec = loss_spec or LossSpec()
    if set(params.tensors) != set(ref_params.tensors):
        raise ValueError("reference parameters do not match the model shape")
    return example_loss(params, spec, example) - example_loss(ref_params, spec, example)


def oneshot_score(init_params: ModelParams, example: Example, holdout: Dataset,
                  loss_spec: LossSpec | None = None, match_positions: bool = False) -> float:
    """Mean holdout loss drop when the candidate is prepended as a single demo."""
    spec = loss_spec or LossSpec()
    if len(holdout) == 0:
        raise ValueError("holdout set may not be empty")
    plains, conds = [], []
    for ho in holdout:
        plain, cond = loss_with_context(init_params, spec, ho, [example], match_positions=match_positions)
        plains.append(plain)
        conds.append(cond)
    return float(np.mean(plains) - np.mean(conds))


def _mean_loss(params: ModelParams, dataset: Dataset, spec: LossSpec) -> float:
    return float(np.mean([example_loss(params, spec, ex) for ex in dataset]))


def oracle_one_step_gain(params: ModelParams, example: Example, holdout: Dataset,
                         loss_spec: LossSpec | None = None, lr: float = 1e-2) -> float:
    """Drop in mean holdout loss after one SGD step on the example (params untouched)."""
    spec = loss_spec or LossSpec()
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    before = _mean_loss(params, holdout, spec)
    _, grads = loss_and_grad(params, spec, example)
    stepped = ModelParams(params.config, {k: v - lr * grads[k] for k, v in params.tensors.items()})
    after = _mean_loss(stepped, holdout, spec)
    return before - after


def oracle_retrain(base_set: Dataset, candidate: Example, holdout: Dataset,
                   init_params: ModelParams, train_cfg) -> float:
    """Mean holdout loss of a fresh model trained on base ∪ {candidate}.

    Deliberately expensive; refuses more than 64 training examples.
    """
    from dataclasses import replace

    from .trainloop import train  # local import to avoid a module cycle

    if len(base_set) + 1 > 64:
        raise OracleBudgetError(f"retraining oracle limited to 64 examples, got {len(base_set) + 1}")
    combined = Dataset(base_set.kind, list(base_set.examples) + [candidate])
    cfg = replace(train_cfg.control_variant(),
                  batch_size=min(train_cfg.batch_size, len(combined)), eval_every=0)
    final, _ = train(combined, holdout, init_params, cfg)
    return _mean_loss(final, holdout, cfg.loss)


def score_example(kind: str, params: ModelParams, example: Example, holdout: Dataset,
                  index: EmbedIndex | None, k: int, ctx: ScorerContext,
                  loss_spec: LossSpec | None = None, match_positions: bool = False) -> float:
    """One raw score under the named scorer."""
    spec = loss_spec or LossSpec()
    if kind == ICA:
        if index is None:
            raise ValueError("ICA scoring requires an embedding index")
        demos = knn(index, embed_example(example, params.config.vocab), k)
        return ica_score(params, example, demos, spec, match_positions=match_positions)
    if kind == RHO:
        if ctx.rho_ref is None:
            raise ValueError("RHO scoring requires a holdout-trained reference checkpoint")
        return rho_score(params, ctx.rho_ref, example, spec)
    if kind == ONE_SHOT:
        if ctx.initial is None:
            raise ValueError("one-shot scoring requires the initial checkpoint")
        return oneshot_score(ctx.initial, example, holdout, spec, match_positions=match_positions)
    if kind == ORACLE_ONE_STEP:
        return oracle_one_step_gain(params, example, holdout, spec, lr=ctx.oracle_lr)
    raise ValueError(f"unknown scorer kind {kind!r}")


def score_dataset(params: ModelParams, dataset: Dataset, holdout: Dataset, scorer_kind: str,
                  k: int, index: EmbedIndex | None, ctx: ScorerContext,
                  loss_spec: LossSpec | None = None, step: int = 0,
                  match_positions: bool = False) -> ScoreTable:
    """One raw score per example; kNN demos are recomputed per example for ICA."""
    values = [
        score_example(scorer_kind, params, ex, holdout, index, k, ctx, loss_spec,
                      match_positions=match_positions)
        for ex in dataset
    ]
    return ScoreTable.from_list(values, step)


def dump_scores_csv(table: ScoreTable, dataset: Dataset, path: str | Path) -> None:
    """Score dump with generator metadata for downstream distribution analysis."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "score", "computed_at_step", "corrupted_flag", "domain"])
        for i, ex in enumerate(dataset):
            writer.writerow([
                i,
                repr(float(table.scores[i])),
                int(table.computed_at_step[i]),
                int(ex.corrupted),
                "" if ex.domain is None else ex.domain,
            ])
