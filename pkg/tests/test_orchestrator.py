import io

import numpy as np
import pytest

from submfl.config import ExperimentConfig
from submfl.orchestrator import (
    COMPARISON_COLUMNS,
    ReportError,
    compare_reports,
    prepare,
    run_sfl_baseline,
    run_submfl,
    sm9_trainable,
)
from submfl.nn import evaluate
from submfl.pruning import prune_count
from submfl.reporting import comparison_to_csv, read_comparison_csv

SMALL = ExperimentConfig(
    layer_sizes=(20, 16, 10),
    dataset="synthetic",
    synthetic_n=1200,
    synthetic_separation=8.0,
    n_devices=30,
    dense_capable_fraction=0.2,
    availability_fraction=0.5,
    rounds=4,
    local_epochs=1,
    seed=3,
)


@pytest.fixture(scope="module")
def experiment():
    return prepare(SMALL)


@pytest.fixture(scope="module")
def arms(experiment):
    snapshots = []
    submfl = run_submfl(experiment, on_round=lambda label, rep, p: snapshots.append((label, p)))
    return submfl, run_sfl_baseline(experiment), snapshots


def test_prepare(experiment):
    assert len(experiment.holdout) == 120 and len(experiment.train) == 1080
    assert experiment.partition.sizes() == [36] * 30
    assert sum(d.capacity == experiment.spec.n_params for d in experiment.population) == 6


def test_sm9_trainable():
    spec = ExperimentConfig().network
    assert sm9_trainable(spec) == spec.n_params - prune_count(0.9, spec.n_prunable)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        prepare(SMALL.replace(synthetic_dim=5))


def test_ten_rows(arms):
    submfl, sfl, _ = arms
    for report in (submfl, sfl):
        assert [r.stage for r in report.rows] == ["GM"] + [f"sm{i}" for i in range(1, 10)]
        assert [r.threshold for r in report.rows] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def test_round_reports(arms):
    submfl, _, snapshots = arms
    for row in submfl.rows:
        assert len(submfl.rounds[row.stage]) in (0, SMALL.rounds)
    assert len(snapshots) == sum(len(r) for r in submfl.rounds.values())


def test_untrained_rows_agree(arms):
    submfl, sfl, _ = arms
    gm, base = submfl.rows[0], sfl.rows[0]
    assert (base.acc, base.loss) == (gm.pre_acc, gm.pre_loss)
    assert base.participation == gm.participation
    # dense and untrained: only the zero biases count
    params = sfl.models["GM"][0]
    n_bias = sum(b.size for b in params.biases)
    assert base.global_sparsity == pytest.approx(100 * n_bias / params.n_params)


def test_gs_and_participation_monotone(arms):
    submfl, sfl, _ = arms
    gs = [r.global_sparsity for r in submfl.rows]
    assert all(b >= a for a, b in zip(gs, gs[1:]))
    for report in (submfl, sfl):
        eligible = [r.eligible for r in report.rows]
        assert all(b >= a for a, b in zip(eligible, eligible[1:]))
    assert all(r.participation <= r.eligible for r in submfl.rows)


def test_weight_transfer_and_mask(arms):
    submfl, _, snapshots = arms
    gm = submfl.models["GM"][0]
    for label, params in snapshots:
        mask = submfl.models[label][1]
        assert np.all(params.flat[mask.pruned_index()] == 0.0)
    for i in range(1, 10):
        params, mask = submfl.models[f"sm{i}"]
        assert np.all(params.flat[mask.pruned_index()] == 0.0)
        assert mask.n_pruned == prune_count(i / 10, gm.spec.n_prunable)


def test_pre_train_accuracy_uses_transferred_weights(arms, experiment):
    submfl, _, _ = arms
    from submfl.pruning import generate_submodels

    gm = submfl.models["GM"][0]
    for row, sub in zip(submfl.rows[1:], generate_submodels(gm)):
        loss, acc = evaluate(sub.params, experiment.holdout.features, experiment.holdout.labels)
        assert (row.pre_loss, row.pre_acc) == (loss, acc)


def test_deterministic(arms, experiment):
    again = run_submfl(prepare(SMALL))
    assert again.rows == arms[0].rows
    assert all(again.models[k][0].equals(arms[0].models[k][0]) for k in again.models)


def test_comparison_table(arms):
    submfl, sfl, _ = arms
    table = compare_reports(submfl, sfl)
    assert table.columns == COMPARISON_COLUMNS and len(COMPARISON_COLUMNS) == 9
    assert len(table.rows) == 10
    assert table.rows[3]["subMFL Acc"] == submfl.rows[3].acc
    assert table.rows[3]["S-FL P"] == sfl.rows[3].participation


def test_self_join(arms):
    submfl = arms[0]
    table = compare_reports(submfl, submfl)
    for row in table.rows:
        for metric in ("Acc", "Loss", "P", "GS"):
            assert row[f"S-FL {metric}"] == row[f"subMFL {metric}"]


def test_mismatched_arms(arms):
    submfl, sfl, _ = arms
    with pytest.raises(ReportError):
        compare_reports(submfl.rows[:5], sfl.rows)
    with pytest.raises(ReportError):
        compare_reports(submfl.rows[1:], sfl.rows[:-1])


def test_csv_round_trip_at_four_decimals(arms, tmp_path):
    table = compare_reports(*arms[:2])
    path = tmp_path / "c.csv"
    path.write_text(comparison_to_csv(table))
    back = read_comparison_csv(path)
    assert back.labels == table.labels
    for a, b in zip(table.rows, back.rows):
        for col in COMPARISON_COLUMNS:
            assert b[col] == (a[col] if col.endswith(" P") else round(a[col], 4 if col != "T" else 1))
    path.write_text(comparison_to_csv(back))
    assert comparison_to_csv(read_comparison_csv(path)) == comparison_to_csv(back)
