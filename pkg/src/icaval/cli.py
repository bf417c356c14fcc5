"""Command-line experiment runner.

Subcommands: gen, train, compare, score-report, oracle. Every command is
deterministic given the seeds in its config and idempotent under --force;
outputs are JSONL metrics, CSV tables, plain-text summaries, and versioned
checkpoints.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Alphabet, Dataset, generate, load_jsonl, save_jsonl
from .embed import build_index, dump_demo_assignments, embed_example, knn
from .model import ModelParams, init_params
from .pretrain import pretrain_backbone
from .reports import (
    compare_metrics,
    oracle_correlations,
    render_compare_text,
    score_distribution,
    write_compare_csv,
    write_oracle_csv,
    write_score_csv,
)
from .runspec import RunSpec, RunSpecError, load_runspec
from .score import (
    ICA,
    ONE_SHOT,
    RHO,
    ScorerContext,
    ica_score,
    oneshot_score,
    oracle_one_step_gain,
    oracle_retrain,
    rho_score,
    score_dataset,
)
from .trainloop import RunMetrics, train


class CliError(RuntimeError):
    pass


def _prepare_out_dir(out_dir: str | None, force: bool) -> Path:
    if not out_dir:
        raise CliError("an output directory is required (--out or out_dir in the config)")
    path = Path(out_dir)
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"{path} exists and is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_or_generate(spec: RunSpec) -> tuple[Dataset, Dataset, Dataset]:
    if spec.data_dir is not None:
        alpha = Alphabet(spec.gen.alphabet)
        base = Path(spec.data_dir)
        return tuple(load_jsonl(base / f"{name}.jsonl", alpha, kind=spec.gen.kind)
                     for name in ("train", "holdout", "test"))
    return generate(spec.gen, spec.gen_seed)


def _resolve_init(spec: RunSpec) -> ModelParams:
    if spec.init_checkpoint is not None:
        params = load_checkpoint(spec.init_checkpoint)
        if params.config != spec.model:
            raise CliError("init checkpoint config does not match the run spec model section")
        return params
    if spec.pretrain is not None:
        return pretrain_backbone(spec.model, spec.pretrain)
    return init_params(spec.model)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen(args) -> int:
    spec = load_runspec(args.config, seed_override=args.seed, out_override=args.out)
    out = _prepare_out_dir(spec.out_dir, args.force)
    train_set, holdout, test_set = _load_or_generate(spec)
    alpha = Alphabet(spec.gen.alphabet)
    for name, ds in (("train", train_set), ("holdout", holdout), ("test", test_set)):
        save_jsonl(ds, out / f"{name}.jsonl", alpha)
    manifest = {
        "version": 1,
        "seed": spec.gen_seed,
        "scenario": spec.gen.scenario,
        "kind": spec.gen.kind,
        "counts": {"train": len(train_set), "holdout": len(holdout), "test": len(test_set)},
        "corrupted": sum(ex.corrupted for ex in train_set),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out}/train.jsonl,holdout.jsonl,test.jsonl (corrupted={manifest['corrupted']})")
    return 0


def cmd_train(args) -> int:
    spec = load_runspec(args.config, seed_override=args.seed, out_override=args.out)
    out = _prepare_out_dir(spec.out_dir, args.force)
    train_set, holdout, test_set = _load_or_generate(spec)
    init = _resolve_init(spec)
    save_checkpoint(init, out / "init.ckpt")

    final, metrics = train(train_set, holdout, init, spec.train, test_set)
    save_checkpoint(final, out / "final.ckpt")
    metrics.to_jsonl(out / "metrics.jsonl")
    summary = {
        "seed": spec.seed,
        "scorer": spec.train.scorer,
        "weighting": spec.train.weighting.kind,
        "loss": spec.train.loss.kind,
        "steps": spec.train.steps,
        "refresh_steps": metrics.refresh_steps,
        "final_holdout_loss": metrics.final_holdout_loss(),
        "final_test_loss": metrics.eval_points()[-1].get("test_loss"),
    }
    _write_json(out / "summary.json", summary)
    print(f"final holdout loss {summary['final_holdout_loss']:.6f} -> {out}")
    return 0


def cmd_compare(args) -> int:
    a = RunMetrics.from_jsonl(args.metrics_a)
    b = RunMetrics.from_jsonl(args.metrics_b)
    report = compare_metrics(a, b)
    text = render_compare_text(report)
    sys.stdout.write(text)
    if args.out:
        out = _prepare_out_dir(args.out, args.force)
        (out / "compare.txt").write_text(text, encoding="utf-8")
        write_compare_csv(report, out / "compare.csv")
    return 0


def _scorer_context(spec: RunSpec, init: ModelParams, holdout: Dataset, args) -> ScorerContext:
    ctx = ScorerContext(oracle_lr=spec.train.oracle_lr)
    scorers = {spec.train.scorer} if args.command == "score-report" else {ICA, RHO, ONE_SHOT}
    if RHO in scorers:
        if getattr(args, "rho_ref", None):
            ctx.rho_ref = load_checkpoint(args.rho_ref)
        else:
            ref_cfg = replace(spec.train.control_variant(),
                              batch_size=min(spec.train.batch_size, len(holdout)), eval_every=0)
            ctx.rho_ref, _ = train(holdout, holdout, init, ref_cfg)
    if ONE_SHOT in scorers:
        ctx.initial = init
    return ctx


def cmd_score_report(args) -> int:
    spec = load_runspec(args.config, seed_override=args.seed, out_override=args.out)
    out = _prepare_out_dir(spec.out_dir, args.force)
    train_set, holdout, _ = _load_or_generate(spec)
    init = _resolve_init(spec)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else init
    index = build_index(holdout, spec.model.vocab)
    ctx = _scorer_context(spec, init, holdout, args)
    loss_spec = spec.train.loss
    if loss_spec.kind == "dpo":
        loss_spec = loss_spec.with_ref(init)
    table = score_dataset(params, train_set, holdout, spec.train.scorer or ICA,
                          spec.train.knn_k, index, ctx, loss_spec,
                          match_positions=spec.train.position_matched)
    write_score_csv(table, train_set, out / "scores.csv")
    summary = score_distribution(table, train_set)
    summary["scorer"] = spec.train.scorer or ICA
    _write_json(out / "score_summary.json", summary)
    if args.dump_demos:
        dump_demo_assignments(index, train_set, spec.model.vocab, spec.train.knn_k,
                              out / "demos.csv")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    spec = load_runspec(args.config, seed_override=args.seed, out_override=args.out)
    out = _prepare_out_dir(spec.out_dir, args.force)
    train_set, holdout, _ = _load_or_generate(spec)
    if args.mode == "retrain" and len(train_set) > 64:
        raise CliError("retrain oracle is limited to 64 training examples")
    init = _resolve_init(spec)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else init
    index = build_index(holdout, spec.model.vocab)
    ctx = _scorer_context(spec, init, holdout, args)
    loss_spec = spec.train.loss
    if loss_spec.kind == "dpo":
        loss_spec = loss_spec.with_ref(init)

    columns: dict[str, list[float]] = {"ica": [], "rho": [], "one_shot": [], "oracle": []}
    for ex in train_set:
        demos = knn(index, embed_example(ex, spec.model.vocab), spec.train.knn_k)
        columns["ica"].append(ica_score(params, ex, demos, loss_spec,
                                        match_positions=spec.train.position_matched))
        columns["rho"].append(rho_score(params, ctx.rho_ref, ex, loss_spec))
        columns["one_shot"].append(oneshot_score(ctx.initial, ex, holdout, loss_spec,
                                                 match_positions=spec.train.position_matched))
        if args.mode == "one_step":
            columns["oracle"].append(
                oracle_one_step_gain(params, ex, holdout, loss_spec, lr=ctx.oracle_lr))
        else:
            empty = Dataset(train_set.kind, [])
            columns["oracle"].append(
                oracle_retrain(empty, ex, holdout, params, spec.train))
    write_oracle_csv(columns, out / "oracle.csv")
    correlations = oracle_correlations(columns, "oracle",
                                       higher_is_better=args.mode == "one_step")
    summary = {"mode": args.mode, "n": len(train_set), "correlations": correlations}
    _write_json(out / "oracle_summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icaval",
                                     description="Data valuation and reweighted fine-tuning runs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run spec JSON file")
        p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the top-level seed")
        p.add_argument("--force", action="store_true", help="overwrite non-empty output dirs")

    p_gen = sub.add_parser("gen", help="generate dataset files plus a manifest")
    common(p_gen)
    p_gen.set_defaults(fn=cmd_gen)

    p_train = sub.add_parser("train", help="run the (re)weighted training loop")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_cmp = sub.add_parser("compare", help="compare two metrics.jsonl streams")
    p_cmp.add_argument("metrics_a")
    p_cmp.add_argument("metrics_b")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--force", action="store_true")
    p_cmp.set_defaults(fn=cmd_compare)

    p_score = sub.add_parser("score-report", help="score the training set and summarize")
    common(p_score)
    p_score.add_argument("--checkpoint", default=None, help="model to score with (default: run init)")
    p_score.add_argument("--rho-ref", default=None, help="holdout-trained reference checkpoint")
    p_score.add_argument("--dump-demos", action="store_true", help="also dump kNN demo assignments")
    p_score.set_defaults(fn=cmd_score_report)

    p_oracle = sub.add_parser("oracle", help="correlate all scorers against a holdout oracle")
    common(p_oracle)
    p_oracle.add_argument("--checkpoint", default=None, help="model to score with (default: run init)")
    p_oracle.add_argument("--rho-ref", default=None)
    p_oracle.add_argument("--mode", choices=("one_step", "retrain"), default="one_step")
    p_oracle.set_defaults(fn=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, RunSpecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
