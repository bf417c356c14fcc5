"""Machine-readable reports: run comparison, score distributions, oracle
correlations. Every report is recomputable from the emitted CSV alone."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy import stats

from .corpus import Dataset
from .reweight import maxmin_weights
from .score import ScoreTable
from .trainloop import RunMetrics


class CadenceMismatch(ValueError):
    """Two metric streams evaluated at different steps cannot be compared."""


def _series(metrics: RunMetrics, key: str) -> tuple[list[int], list[float]]:
    steps, vals = [], []
    for rec in metrics.eval_points():
        if key in rec:
            steps.append(rec["step"])
            vals.append(rec[key])
    return steps, vals


def compare_metrics(a: RunMetrics, b: RunMetrics) -> dict:
    """Final and area-under-curve deltas (a minus b) per loss metric."""
    out: dict = {"metrics": {}, "points": []}
    for key in ("holdout_loss", "test_loss"):
        steps_a, vals_a = _series(a, key)
        steps_b, vals_b = _series(b, key)
        if not steps_a and not steps_b:
            continue
        if steps_a != steps_b:
            raise CadenceMismatch(f"eval steps differ for {key}: {steps_a} vs {steps_b}")
        final_delta = vals_a[-1] - vals_b[-1]
        auc_a = float(np.trapezoid(vals_a, steps_a)) if len(steps_a) > 1 else vals_a[-1]
        auc_b = float(np.trapezoid(vals_b, steps_b)) if len(steps_b) > 1 else vals_b[-1]
        out["metrics"][key] = {
            "final_a": vals_a[-1],
            "final_b": vals_b[-1],
            "final_delta": final_delta,
            "auc_delta": auc_a - auc_b,
            "a_better": bool(vals_a[-1] < vals_b[-1]),
        }
        for step, va, vb in zip(steps_a, vals_a, vals_b):
            out["points"].append({"metric": key, "step": step, "a": va, "b": vb, "delta": va - vb})
    if not out["metrics"]:
        raise CadenceMismatch("no evaluation records to compare")
    return out


def render_compare_text(report: dict) -> str:
    lines = []
    for key, m in report["metrics"].items():
        lines.append(
            f"{key}: final A={m['final_a']:.6f} B={m['final_b']:.6f} "
            f"delta={m['final_delta']:+.6f} auc_delta={m['auc_delta']:+.6f} "
            f"A_better={m['a_better']}"
        )
    return "\n".join(lines) + "\n"


def write_compare_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "step", "a", "b", "delta"])
        for p in report["points"]:
            writer.writerow([p["metric"], p["step"], repr(p["a"]), repr(p["b"]), repr(p["delta"])])


def score_distribution(table: ScoreTable, dataset: Dataset) -> dict:
    """Min-max-normalized score means per domain label and per corruption flag.

    Normalization runs over the full table; with all-equal scores every
    normalized value is 1 (the degenerate max-min policy).
    """
    norm = maxmin_weights(table.scores)
    out: dict = {"n": len(dataset), "overall_mean": float(np.mean(norm))}
    domains = sorted({ex.domain for ex in dataset if ex.domain is not None})
    if domains:
        out["domain_means"] = {
            int(d): float(np.mean([norm[i] for i, ex in enumerate(dataset) if ex.domain == d]))
            for d in domains
        }
    flags = {ex.corrupted for ex in dataset}
    if len(flags) > 1 or True in flags:
        out["clean_mean"] = float(np.mean([norm[i] for i, ex in enumerate(dataset) if not ex.corrupted]))
        corrupted = [norm[i] for i, ex in enumerate(dataset) if ex.corrupted]
        out["corrupted_mean"] = float(np.mean(corrupted)) if corrupted else None
    return out


def write_score_csv(table: ScoreTable, dataset: Dataset, path: str | Path) -> None:
    norm = maxmin_weights(table.scores)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "score", "normalized", "computed_at_step",
                         "corrupted_flag", "domain"])
        for i, ex in enumerate(dataset):
            writer.writerow([
                i,
                repr(float(table.scores[i])),
                repr(float(norm[i])),
                int(table.computed_at_step[i]),
                int(ex.corrupted),
                "" if ex.domain is None else ex.domain,
            ])


def rank_correlation(x, y) -> float | None:
    """Spearman rho, or None when undefined (constant input)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    rho = stats.spearmanr(x, y).statistic
    return None if math.isnan(rho) else float(rho)


def linear_correlation(x, y) -> float | None:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    r = stats.pearsonr(x, y).statistic
    return None if math.isnan(r) else float(r)


def oracle_correlations(columns: dict[str, list[float]], oracle_key: str,
                        higher_is_better: bool) -> dict:
    """Spearman/Pearson of every scorer column against the oracle column.

    For oracle columns where lower is better (retraining holdout loss) the
    correlation target is the negated column.
    """
    target = np.asarray(columns[oracle_key], dtype=np.float64)
    if not higher_is_better:
        target = -target
    out = {}
    for name, vals in columns.items():
        if name == oracle_key:
            continue
        out[name] = {
            "spearman": rank_correlation(vals, target),
            "pearson": linear_correlation(vals, target),
        }
    out[oracle_key] = {"spearman": rank_correlation(target, target),
                       "pearson": linear_correlation(target, target)}
    return out


def write_oracle_csv(columns: dict[str, list[float]], path: str | Path) -> None:
    names = list(columns)
    n = len(columns[names[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id"] + names)
        for i in range(n):
            writer.writerow([i] + [repr(float(columns[name][i])) for name in names])
