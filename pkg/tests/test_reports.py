"""Comparison, score-distribution, and correlation report logic."""

import numpy as np
import pytest

from icaval.corpus import Dataset, Example
from icaval.reports import (
    CadenceMismatch,
    compare_metrics,
    linear_correlation,
    oracle_correlations,
    rank_correlation,
    render_compare_text,
    score_distribution,
    write_compare_csv,
    write_oracle_csv,
    write_score_csv,
)
from icaval.score import ScoreTable
from icaval.trainloop import RunMetrics


def metrics_with(evals):
    m = RunMetrics()
    for step, ho, te in evals:
        m.log_eval(step, ho, te)
    return m


def test_compare_self_all_zero_deltas():
    m = metrics_with([(0, 2.0, 2.5), (10, 1.0, 1.5)])
    report = compare_metrics(m, m)
    for key in ("holdout_loss", "test_loss"):
        assert report["metrics"][key]["final_delta"] == 0.0
        assert report["metrics"][key]["auc_delta"] == 0.0
        assert not report["metrics"][key]["a_better"]
    assert all(p["delta"] == 0.0 for p in report["points"])


def test_compare_known_order():
    better = metrics_with([(0, 2.0, None), (10, 1.0, None)])
    worse = metrics_with([(0, 2.0, None), (10, 1.8, None)])
    report = compare_metrics(better, worse)
    assert report["metrics"]["holdout_loss"]["a_better"]
    assert report["metrics"]["holdout_loss"]["final_delta"] == pytest.approx(-0.8)


def test_compare_deltas_match_hand_computation():
    a = metrics_with([(0, 3.0, None), (5, 2.0, None), (10, 1.0, None)])
    b = metrics_with([(0, 2.5, None), (5, 2.5, None), (10, 2.5, None)])
    report = compare_metrics(a, b)
    auc_a = np.trapezoid([3.0, 2.0, 1.0], [0, 5, 10])
    auc_b = np.trapezoid([2.5, 2.5, 2.5], [0, 5, 10])
    assert report["metrics"]["holdout_loss"]["auc_delta"] == pytest.approx(auc_a - auc_b)
    assert [p["delta"] for p in report["points"]] == pytest.approx([0.5, -0.5, -1.5])


def test_compare_cadence_mismatch():
    a = metrics_with([(0, 1.0, None), (10, 0.5, None)])
    b = metrics_with([(0, 1.0, None), (5, 0.7, None)])
    with pytest.raises(CadenceMismatch):
        compare_metrics(a, b)


def test_compare_csv_roundtrip(tmp_path):
    a = metrics_with([(0, 2.0, None), (10, 1.0, None)])
    b = metrics_with([(0, 2.0, None), (10, 1.5, None)])
    report = compare_metrics(a, b)
    text = render_compare_text(report)
    assert "A_better=True" in text
    path = tmp_path / "cmp.csv"
    write_compare_csv(report, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "metric,step,a,b,delta"
    assert len(rows) == 3


def ds_with_flags(flags, domains=None):
    examples = []
    for i, bad in enumerate(flags):
        examples.append(Example(kind="sft", prompt=(1, 2), response=(2, 1),
                                corrupted=bad,
                                domain=None if domains is None else domains[i]))
    return Dataset("sft", examples)


def test_score_distribution_degenerate_all_ones():
    ds = ds_with_flags([False, False, True], domains=[0, 1, 0])
    table = ScoreTable.from_list([2.0, 2.0, 2.0], step=0)
    out = score_distribution(table, ds)
    assert out["domain_means"] == {0: 1.0, 1: 1.0}
    assert out["clean_mean"] == 1.0 and out["corrupted_mean"] == 1.0


def test_score_distribution_matches_recomputation(tmp_path):
    ds = ds_with_flags([False, True, False, True], domains=[0, 0, 1, 1])
    table = ScoreTable.from_list([1.0, 5.0, 3.0, 2.0], step=2)
    out = score_distribution(table, ds)
    norm = (np.array([1.0, 5.0, 3.0, 2.0]) - 1.0) / 4.0
    assert out["domain_means"][0] == pytest.approx(float(norm[:2].mean()))
    assert out["domain_means"][1] == pytest.approx(float(norm[2:].mean()))
    assert out["clean_mean"] == pytest.approx(float(norm[[0, 2]].mean()))

    path = tmp_path / "scores.csv"
    write_score_csv(table, ds, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 5
    # summary must be recomputable from the CSV alone
    import csv as csvmod

    with open(path) as fh:
        rows = list(csvmod.DictReader(fh))
    by_domain = {}
    for row in rows:
        by_domain.setdefault(int(row["domain"]), []).append(float(row["normalized"]))
    for d, vals in by_domain.items():
        assert out["domain_means"][d] == pytest.approx(float(np.mean(vals)))


def test_rank_correlation_basics():
    assert rank_correlation([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert rank_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert rank_correlation([1.0, 1.0, 1.0], [1, 2, 3]) is None
    assert linear_correlation([1.0, 1.0], [1, 2]) is None


def test_oracle_correlations_self_is_one():
    cols = {"ica": [0.1, 0.5, 0.3], "oracle": [1.0, 3.0, 2.0]}
    out = oracle_correlations(cols, "oracle", higher_is_better=True)
    assert out["oracle"]["spearman"] == pytest.approx(1.0)
    assert out["ica"]["spearman"] == pytest.approx(1.0)
    flipped = oracle_correlations(cols, "oracle", higher_is_better=False)
    assert flipped["ica"]["spearman"] == pytest.approx(-1.0)


def test_oracle_correlations_constant_scorer_undefined():
    cols = {"flat": [2.0, 2.0, 2.0], "oracle": [1.0, 3.0, 2.0]}
    out = oracle_correlations(cols, "oracle", higher_is_better=True)
    assert out["flat"]["spearman"] is None
    assert out["flat"]["pearson"] is None


def test_oracle_csv(tmp_path):
    cols = {"ica": [0.1, 0.2], "oracle": [1.0, 2.0]}
    path = tmp_path / "oracle.csv"
    write_oracle_csv(cols, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "example_id,ica,oracle"
    assert len(lines) == 3
