import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motilitrack.errors import ConfigError, EvalError, MetricError
from motilitrack.evaluation import EvalReport, FoldSplit, PipelineSpec, json_safe, mae, make_folds, rmse, run_cv


def test_metric_examples():
    t = np.array([[20.0, 20, 20]])
    assert mae(t, t) == 0 and rmse(t, t) == 0
    assert mae([[10, 10, 10]], t) == 10 and rmse([[10, 10, 10]], t) == 10
    p = np.array([[0.0, 0, 0], [6, 6, 6]])
    assert mae(p, np.zeros((2, 3))) == 3
    assert rmse(p, np.zeros((2, 3))) == pytest.approx(math.sqrt(18))
    with pytest.raises(MetricError):
        mae(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(MetricError):
        rmse(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=20),
       st.integers(0, 1000))
def test_rmse_dominates_mae(rows, seed):
    p = np.array(rows)
    t = np.random.default_rng(seed).uniform(0, 100, p.shape)
    assert rmse(p, t) >= mae(p, t) - 1e-12


def test_fold_split_validation():
    with pytest.raises(ConfigError):
        FoldSplit({})
    with pytest.raises(ConfigError):
        FoldSplit({"a": 1, "b": 3})
    with pytest.raises(ConfigError):
        FoldSplit({"a": 1, "b": 1})
    f = FoldSplit({"a": 1, "b": 2, "c": 3, "d": 1})
    assert f.folds == [1, 2, 3] and f.test_ids(1) == ["a", "d"] and f.train_ids(1) == ["b", "c"]


def test_make_folds_groups_subjects():
    vids = [f"v{i}" for i in range(12)]
    subjects = [f"s{i // 2}" for i in range(12)]
    f = make_folds(vids, subjects, 3, seed=1)
    for i in range(0, 12, 2):
        assert f.assignments[vids[i]] == f.assignments[vids[i + 1]]
    assert f.folds == [1, 2, 3]
    assert make_folds(vids, subjects, 3, seed=1) == f
    with pytest.raises(ConfigError):
        make_folds(vids[:2], None, 3)


def dataset(n=18, seed=0, dim=4):
    r = np.random.default_rng(seed)
    samples, labels = {}, {}
    for i in range(n):
        vid = f"v{i:02d}"
        p = r.uniform(10, 70)
        labels[vid] = np.array([p, (100 - p) * 0.4, (100 - p) * 0.6])
        samples[vid] = r.normal(size=(int(r.integers(3, 8)), dim)) + [p / 10, 0, 0, 0][:dim]
    folds = FoldSplit({v: i % 3 + 1 for i, v in enumerate(sorted(samples))})
    return samples, labels, folds


FAST = dict(codebook_size=12, assign=2, C=(1.0, 10.0), scalers=("none", "standard"), internal_folds=3)


def test_zeror_is_closed_form_and_deterministic():
    samples, labels, folds = dataset()
    spec = PipelineSpec(aggregation="mean", model="zeror", internal_folds=3)
    rep = run_cv(samples, labels, folds, spec)
    for entry in rep.folds:
        mean = np.mean([labels[v] for v in entry["train_ids"]], axis=0)
        truth = np.array([labels[v] for v in entry["test_ids"]])
        assert entry["eval"]["mae"] == pytest.approx(np.mean(np.abs(truth - mean)))
        assert entry["eval"]["mae"] == pytest.approx(entry["baseline"]["mae"])
    assert run_cv(samples, labels, folds, spec).to_json() == rep.to_json()


@pytest.mark.parametrize("aggregation", ["bow", "mean", "direct"])
def test_report_structure_and_invariants(aggregation):
    samples, labels, folds = dataset()
    rep = run_cv(samples, labels, folds, PipelineSpec(aggregation=aggregation, **FAST))
    assert [e["fold"] for e in rep.folds] == [1, 2, 3]
    for e in rep.folds:
        assert not set(e["train_ids"]) & set(e["test_ids"])
        assert sorted(e["train_ids"] + e["test_ids"]) == sorted(samples)
        assert sorted(e["predictions"]) == e["test_ids"]
        for m in e["eval"]["per_target"].values():
            assert m["rmse"] >= m["mae"] - 1e-12
        assert e["selected"]["C"] in FAST["C"]
    assert rep.mean["eval_mae"] == pytest.approx(np.mean([e["eval"]["mae"] for e in rep.folds]), abs=1e-12)
    assert len(rep.fingerprint) == 64


def test_fold_permutation_symmetry():
    samples, labels, folds = dataset(seed=3)
    spec = PipelineSpec(**FAST)
    relabel = {1: 2, 2: 3, 3: 1}
    perm = FoldSplit({v: relabel[k] for v, k in folds.assignments.items()})
    a = run_cv(samples, labels, folds, spec).mean
    b = run_cv(samples, labels, perm, spec).mean
    for key in ("eval_mae", "eval_rmse", "val_mae", "val_rmse", "baseline_mae"):
        assert a[key] == pytest.approx(b[key], rel=1e-12)


def test_test_fold_features_do_not_reach_fitted_objects():
    samples, labels, folds = dataset(seed=4)
    spec = PipelineSpec(**FAST)
    seen = {}
    run_cv(samples, labels, folds, spec, on_fold=lambda k, m, cb: seen.setdefault("a", {}).update({k: (m, cb)}))
    poisoned = dict(samples)
    for v in folds.test_ids(1):
        poisoned[v] = samples[v] * 1000 + 5
    poisoned_labels = {v: (np.array([1.0, 2, 97]) if v in folds.test_ids(1) else l) for v, l in labels.items()}
    run_cv(poisoned, poisoned_labels, folds, spec,
           on_fold=lambda k, m, cb: seen.setdefault("b", {}).update({k: (m, cb)}))
    (m1, cb1), (m2, cb2) = seen["a"][1], seen["b"][1]
    np.testing.assert_array_equal(cb1.vectors, cb2.vectors)
    np.testing.assert_array_equal(cb1.idf, cb2.idf)
    np.testing.assert_array_equal(m1.weights, m2.weights)


def test_missing_inputs_raise_eval_error():
    samples, labels, folds = dataset()
    del labels["v05"]
    with pytest.raises(EvalError, match="v05"):
        run_cv(samples, labels, folds, PipelineSpec(**FAST))
    samples, labels, folds = dataset()
    del samples["v07"]
    with pytest.raises(EvalError, match="v07"):
        run_cv(samples, labels, folds, PipelineSpec(**FAST))


def test_threads_do_not_change_results():
    samples, labels, folds = dataset(seed=6)
    spec = PipelineSpec(**FAST)
    assert run_cv(samples, labels, folds, spec, threads=3).to_json() == run_cv(samples, labels, folds, spec).to_json()


def test_pipeline_spec_validation_and_json_safety():
    with pytest.raises(ConfigError):
        PipelineSpec(aggregation="max")
    with pytest.raises(ConfigError):
        PipelineSpec(model="tree")
    with pytest.raises(ConfigError):
        PipelineSpec(codebook_size=5, assign=6)
    assert json_safe({"a": float("nan"), "b": np.float32(1.5), "c": (np.int64(2),)}) == {"a": None, "b": 1.5, "c": [2]}
    assert '"x": null' in EvalReport({"x": float("nan")}).to_json()
