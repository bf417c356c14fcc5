"""Run configuration files: strict schema, versioned, one seed funnel.

A run spec is a JSON object with sections for data generation, model
shape, optional backbone pretraining, and the training loop. Unknown keys
anywhere are rejected. Every section has its own seed; missing seeds are
derived from the top-level seed with fixed offsets so one --seed flag
reproduces the whole run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import DEFAULT_ALPHABET, GenConfig
from .model import DPO_LOSS, LossSpec, ModelConfig, SFT_LOSS, SIMPO_LOSS
from .pretrain import PretrainConfig
from .reweight import WeightingMode
from .trainloop import TrainConfig

SPEC_VERSION = 1

SEED_OFFSET_DATA = 0
SEED_OFFSET_MODEL = 1
SEED_OFFSET_TRAIN = 2
SEED_OFFSET_PRETRAIN = 3


class RunSpecError(ValueError):
    """Raised for malformed or inconsistent run spec files."""


@dataclass
class RunSpec:
    seed: int
    gen: GenConfig
    gen_seed: int
    data_dir: str | None
    model: ModelConfig
    pretrain: PretrainConfig | None
    init_checkpoint: str | None
    train: TrainConfig
    out_dir: str | None


def _take(section: dict, allowed: dict, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise RunSpecError(f"unknown keys in {where}: {sorted(unknown)}")
    out = dict(allowed)
    out.update(section)
    return out


def _parse_weighting(raw: dict) -> WeightingMode:
    fields = _take(raw, {"kind": "maxmin", "temperature": 1.0, "percentile": 50.0,
                         "scope": "batch"}, "train.weighting")
    try:
        return WeightingMode(**fields)
    except ValueError as exc:
        raise RunSpecError(str(exc)) from exc


def _parse_loss(raw: dict) -> LossSpec:
    fields = _take(raw, {"kind": SFT_LOSS, "beta": 1.0, "gamma": None,
                         "gamma_beta_ratio": None}, "train.loss")
    gamma, ratio = fields.pop("gamma"), fields.pop("gamma_beta_ratio")
    if gamma is not None and ratio is not None:
        raise RunSpecError("give either gamma or gamma_beta_ratio, not both")
    if ratio is not None:
        gamma = ratio * fields["beta"]
    if gamma is None:
        gamma = 0.0
    if fields["kind"] not in (SFT_LOSS, DPO_LOSS, SIMPO_LOSS):
        raise RunSpecError(f"unknown loss kind {fields['kind']!r}")
    try:
        return LossSpec(kind=fields["kind"], beta=fields["beta"], gamma=gamma)
    except ValueError as exc:
        raise RunSpecError(str(exc)) from exc


def parse_runspec(raw: dict) -> RunSpec:
    top = _take(raw, {"version": None, "seed": 0, "data": {}, "model": {}, "pretrain": None,
                      "train": {}, "out_dir": None}, "run spec")
    if top["version"] != SPEC_VERSION:
        raise RunSpecError(f"run spec version must be {SPEC_VERSION}, got {top['version']}")
    seed = int(top["seed"])

    data = _take(top["data"], {
        "scenario": "noise", "kind": "sft", "n_train": 256, "n_holdout": 32, "n_test": 32,
        "noise_rate": 0.3, "num_domains": 1, "target_domain": 0, "len_min": 5, "len_max": 5,
        "alphabet": DEFAULT_ALPHABET, "seed": None, "dir": None,
    }, "data")
    gen_seed = data.pop("seed")
    if gen_seed is None:
        gen_seed = seed + SEED_OFFSET_DATA
    data_dir = data.pop("dir")
    try:
        gen = GenConfig(**data)
    except ValueError as exc:
        raise RunSpecError(str(exc)) from exc

    model = _take(top["model"], {"vocab": 32, "dim": 32, "layers": 2, "heads": 2,
                                 "ctx_len": 256, "seed": None, "init_checkpoint": None}, "model")
    init_checkpoint = model.pop("init_checkpoint")
    if model["seed"] is None:
        model["seed"] = seed + SEED_OFFSET_MODEL
    try:
        model_cfg = ModelConfig(**model)
    except ValueError as exc:
        raise RunSpecError(str(exc)) from exc

    pretrain_cfg = None
    if top["pretrain"] is not None:
        pre = _take(top["pretrain"], {
            "steps": 12000, "batch_size": 8, "lr": 2e-3, "lr_final_factor": 0.1,
            "max_demos": 3, "len_min": None, "len_max": None,
            "num_transforms": 5, "alphabet": None, "seed": None,
        }, "pretrain")
        if pre["alphabet"] is None:
            pre["alphabet"] = gen.alphabet
        if pre["len_min"] is None:
            pre["len_min"] = gen.len_min
        if pre["len_max"] is None:
            pre["len_max"] = gen.len_max
        if pre["seed"] is None:
            pre["seed"] = seed + SEED_OFFSET_PRETRAIN
        try:
            pretrain_cfg = PretrainConfig(**pre)
        except ValueError as exc:
            raise RunSpecError(str(exc)) from exc
    if pretrain_cfg is not None and init_checkpoint is not None:
        raise RunSpecError("give either a pretrain section or model.init_checkpoint, not both")

    train_raw = _take(top["train"], {
        "steps": 100, "batch_size": 8, "refreshes": 1, "knn_k": 3, "lr": 1e-3,
        "optimizer": "adam", "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
        "scorer": "ica", "weighting": {}, "loss": {}, "seed": None, "eval_every": 0,
        "grad_normalize": False, "oracle_lr": 1e-2, "position_matched": False,
    }, "train")
    train_raw["weighting"] = _parse_weighting(train_raw["weighting"])
    train_raw["loss"] = _parse_loss(train_raw["loss"])
    if train_raw["seed"] is None:
        train_raw["seed"] = seed + SEED_OFFSET_TRAIN
    try:
        train_cfg = TrainConfig(**train_raw)
    except ValueError as exc:
        raise RunSpecError(str(exc)) from exc

    loss_kind_needs = train_cfg.loss.dataset_kind()
    if gen.kind != loss_kind_needs:
        raise RunSpecError(
            f"{train_cfg.loss.kind} loss needs {loss_kind_needs!r} data, but data.kind is {gen.kind!r}")

    return RunSpec(
        seed=seed,
        gen=gen,
        gen_seed=int(gen_seed),
        data_dir=data_dir,
        model=model_cfg,
        pretrain=pretrain_cfg,
        init_checkpoint=init_checkpoint,
        train=train_cfg,
        out_dir=top["out_dir"],
    )


def load_runspec(path: str | Path, seed_override: int | None = None,
                 out_override: str | None = None) -> RunSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RunSpecError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise RunSpecError(f"{path}: run spec must be a JSON object")
    if seed_override is not None:
        raw["seed"] = seed_override
        for section in ("data", "model", "train", "pretrain"):
            if isinstance(raw.get(section), dict):
                raw[section].pop("seed", None)
    spec = parse_runspec(raw)
    if out_override is not None:
        spec.out_dir = out_override
    return spec
