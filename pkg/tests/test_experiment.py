import numpy as np
import pytest

from posefusion.experiment import (
    CSV_FIELDS,
    SweepSettings,
    run_cell,
    run_sweep,
    split_labels,
    stratified_split,
)
from posefusion.simulate import ScenarioConfig, sample_feature_set

SMALL = SweepSettings(train_size=600, test_size=800)


def test_stratified_split_keeps_both_classes():
    labels = np.r_[np.zeros(95, int), np.ones(5, int)]
    for seed in range(50):
        idx = stratified_split(labels, 0.02, np.random.default_rng(seed))
        assert len(idx) == 2
        assert set(labels[idx]) == {0, 1}
        assert len(np.unique(idx)) == len(idx)


def test_stratified_split_proportions():
    labels = (np.random.default_rng(0).random(4500) < 0.15).astype(int)
    idx = stratified_split(labels, 0.2, np.random.default_rng(1))
    assert len(idx) == 900
    assert labels[idx].mean() == pytest.approx(labels.mean(), abs=0.01)
    assert len(stratified_split(labels, 1.0, np.random.default_rng(1))) == 4500


def test_split_labels_hides_labels():
    data = sample_feature_set(ScenarioConfig(), 500, 3)
    lab, unl = split_labels(data, 0.1, np.random.default_rng(0))
    assert len(lab) + len(unl) == 500
    assert np.all(lab.label >= 0)
    assert np.all(unl.label == -1)


def test_cell_reports_both_methods():
    out = run_cell(ScenarioConfig(), 0.2, 0, SMALL)
    assert [r["method"] for r in out] == ["NB", "NB-SEM"]
    for r in out:
        assert 0 <= r["f1"] <= 1 and 0 <= r["ap"] <= 1


def test_full_labels_make_methods_agree():
    res = run_sweep(ScenarioConfig(), [1.0], range(3), SMALL)
    assert abs(res.gap(1.0)) < 0.01


def test_sweep_table_shape_and_determinism():
    a = run_sweep(ScenarioConfig(), (0.02, 0.2, 0.8), range(2), SMALL)
    b = run_sweep(ScenarioConfig(), (0.02, 0.2, 0.8), range(2), SMALL)
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().strip().split("\n")
    assert lines[0].split(",") == list(CSV_FIELDS)
    assert len(lines) == 1 + 3 * 2
    assert len(a.runs) == 3 * 2 * 2


def test_parallel_sweep_matches_serial():
    a = run_sweep(ScenarioConfig(), (0.2,), range(2), SMALL, n_jobs=1)
    b = run_sweep(ScenarioConfig(), (0.2,), range(2), SMALL, n_jobs=2)
    assert a.to_csv() == b.to_csv()


def test_sweep_needs_two_seeds():
    with pytest.raises(ValueError):
        run_sweep(ScenarioConfig(), (0.2,), [0], SMALL)
