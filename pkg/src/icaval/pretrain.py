"""Backbone pretraining: a small checkpoint that already uses demonstrations.

The fine-tuning experiments assume a starting model that (a) knows the
string-transform tasks as an ambiguous mixture and (b) reads in-context
demonstrations to disambiguate them, mirroring how a pretrained assistant
behaves before fine-tuning. Training samples are drawn fresh every step
(no finite pool to memorize): a candidate pair preceded by a variable
number of same-transform demo pairs, with loss on the candidate's response
positions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Alphabet, DEFAULT_ALPHABET, Example, SFT, TRANSFORMS
from .model import LossSpec, ModelConfig, ModelParams, init_params, loss_and_grad
from .reweight import weighted_gradient
from .trainloop import ADAM, OptimizerState, TrainConfig, apply_update


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 12000
    batch_size: int = 8
    lr: float = 2e-3
    lr_final_factor: float = 0.1
    max_demos: int = 3
    len_min: int = 5
    len_max: int = 5
    num_transforms: int = 5
    alphabet: str = DEFAULT_ALPHABET
    seed: int = 7

    def __post_init__(self) -> None:
        if not 1 <= self.num_transforms <= len(TRANSFORMS):
            raise ValueError(f"num_transforms must be in [1, {len(TRANSFORMS)}]")
        if self.max_demos < 0 or self.steps < 1 or self.batch_size < 1:
            raise ValueError("invalid pretraining sizes")
        if not 0.0 < self.lr_final_factor <= 1.0:
            raise ValueError("lr_final_factor must be in (0, 1]")
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError("need 1 <= len_min <= len_max")


def _sample_pair(rng: np.random.Generator, alpha: Alphabet, g: int,
                 len_min: int, len_max: int) -> Example:
    length = int(rng.integers(len_min, len_max + 1))
    ids = rng.integers(0, alpha.size, size=length)
    prompt = "".join(alpha.chars[i] for i in ids)
    return Example(kind=SFT, prompt=alpha.tokenize(prompt),
                   response=alpha.tokenize(TRANSFORMS[g](prompt)))


def pretrain_backbone(model_cfg: ModelConfig, pcfg: PretrainConfig | None = None) -> ModelParams:
    """Train a fresh model into a demonstration-following multi-task backbone."""
    pcfg = pcfg or PretrainConfig()
    rng = np.random.default_rng(pcfg.seed)
    alpha = Alphabet(pcfg.alphabet)
    params = init_params(model_cfg)
    spec = LossSpec()
    opt_cfg = TrainConfig(steps=pcfg.steps, batch_size=pcfg.batch_size, lr=pcfg.lr,
                          optimizer=ADAM, scorer=None)
    state = OptimizerState()
    lo = pcfg.lr * pcfg.lr_final_factor
    for step in range(pcfg.steps):
        frac = step / max(1, pcfg.steps - 1)
        lr_t = lo + 0.5 * (pcfg.lr - lo) * (1.0 + math.cos(math.pi * frac))
        grads = []
        for _ in range(pcfg.batch_size):
            g = int(rng.integers(0, pcfg.num_transforms))
            n_demo = int(rng.integers(0, pcfg.max_demos + 1))
            candidate = _sample_pair(rng, alpha, g, pcfg.len_min, pcfg.len_max)
            demos = [_sample_pair(rng, alpha, g, pcfg.len_min, pcfg.len_max)
                     for _ in range(n_demo)]
            _, grad = loss_and_grad(params, spec, candidate, demos)
            grads.append(grad)
        apply_update(params, weighted_gradient(np.ones(len(grads)), grads, mean_normalize=True),
                     replace(opt_cfg, lr=lr_t), state)
    return params
