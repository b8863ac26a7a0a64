import numpy as np
import pytest

from conftest import blobs
from wfriction.continual import (
    EWC,
    VANILLA,
    ContinualRunConfig,
    EwcConfig,
    EwcState,
    Task,
    TaskSequence,
    average_accuracy,
    compare_epoch_times,
    cross_validation_sequences,
    ewc_estimate_fisher,
    ewc_penalized_gradients,
    gridsearch_mu,
    method_optimizers,
    resource_report,
    run_continual,
    with_mu,
)
from wfriction.core import NumericError, Prng
from wfriction.nn import Gradients, backward, forward, mlp_specs, softmax, xavier_init
from wfriction.optim import ADAM, LOGISTIC_BELL, SGD, WEIGHT_FRICTION, FrictionFunction, OptimizerConfig


def sequence(n_tasks=2, with_val=True, epochs=2):
    tasks = []
    for k in range(n_tasks):
        # test and validation rows overlap the training data; only bookkeeping is under test
        tr = blobs(90, seed=10 * k, name=f"t{k}")
        tasks.append(Task(f"t{k}", tr, tr.subset(np.arange(30)), epochs, tr.subset(np.arange(30, 60)) if with_val else None))
    return TaskSequence("seq", tasks)


def run_cfg(method, seq=None, mu=2.0, wf_lr=0.05, seeds=(0, 1), **kw):
    first, later = method_optimizers(method, 0.01, wf_lr, FrictionFunction(LOGISTIC_BELL, mu) if method == WEIGHT_FRICTION else None)
    return ContinualRunConfig(
        seq or sequence(), mlp_specs(6, [8], 3), first, later, list(seeds), method, batch_size=16, ewc=EwcConfig(50.0, 40), **kw
    )


def test_average_accuracy():
    assert average_accuracy([0.2609, 0.8529]) == pytest.approx(0.5569)
    assert average_accuracy([0.9]) == 0.9
    with pytest.raises(ValueError):
        average_accuracy([])


def test_config_validation():
    first, later = method_optimizers(VANILLA, 0.01, 0.1, None)
    seq = sequence()
    with pytest.raises(ValueError):
        ContinualRunConfig(seq, mlp_specs(6, [], 3), first, later, [], VANILLA)
    with pytest.raises(ValueError):
        ContinualRunConfig(seq, mlp_specs(6, [], 3), first, later, [0], WEIGHT_FRICTION)
    wf = OptimizerConfig(WEIGHT_FRICTION, 0.1, FrictionFunction())
    with pytest.raises(ValueError):
        ContinualRunConfig(seq, mlp_specs(6, [], 3), wf, wf, [0], WEIGHT_FRICTION)
    with pytest.raises(ValueError):
        ContinualRunConfig(seq, mlp_specs(6, [], 3), first, wf, [0], EWC)
    with pytest.raises(ValueError):
        method_optimizers(WEIGHT_FRICTION, 0.01, 0.1, None)
    assert method_optimizers(EWC, 0.01, 0.1, None)[1].method == ADAM
    assert method_optimizers(SGD, 0.01, 0.1, None)[0].method == SGD


def test_ewc_penalty_by_hand(small_model):
    zeros = Gradients.zeros_like(small_model)
    anchor = [p - 1.0 for p in small_model.params()]
    fisher = [np.full_like(p, 0.5) for p in small_model.params()]
    st = EwcState(4.0, 10, [anchor], [fisher])
    out = ewc_penalized_gradients(zeros, small_model, st)
    for g in out.params():
        np.testing.assert_allclose(g, 2.0)  # 4 * 0.5 * (w - (w - 1))
    st2 = EwcState(4.0, 10, [anchor, anchor], [fisher, fisher])
    np.testing.assert_allclose(ewc_penalized_gradients(zeros, small_model, st2).weights[0], 4.0)
    assert ewc_penalized_gradients(zeros, small_model, EwcState(4.0, 10)) is zeros
    assert st.n_slots == 2 * small_model.n_params


def test_fisher_matches_per_example_loop(small_model):
    ds = blobs(20)
    fisher = ewc_estimate_fisher(small_model, ds, 20, Prng(0))
    expect = [np.zeros_like(p) for p in small_model.params()]
    for i in range(20):
        logits, cache = forward(small_model, ds.inputs[i : i + 1])
        d = softmax(logits)
        d[0, np.argmax(logits)] -= 1.0
        for e, g in zip(expect, backward(small_model, cache, d).params()):
            e += g**2 / 20
    for a, b in zip(fisher, expect):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-18)
    # more samples than data: clipped, same answer
    for a, b in zip(ewc_estimate_fisher(small_model, ds, 500, Prng(0)), expect):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-18)


def test_one_by_one_matrix_and_single_task_methods_agree():
    seq = sequence(1)
    v = run_continual(run_cfg(VANILLA, seq))
    w = run_continual(run_cfg(WEIGHT_FRICTION, seq))
    assert v.test.n_tasks == 1 and len(v.test.mean()) == 1 and len(v.test.mean()[0]) == 1
    assert v.test.per_seed == w.test.per_seed


def test_matrix_shape_determinism_and_jobs():
    a = run_continual(run_cfg(WEIGHT_FRICTION))
    b = run_continual(run_cfg(WEIGHT_FRICTION), jobs=2)
    assert a.test.per_seed == b.test.per_seed
    m = a.test.mean()
    assert [len(r) for r in m] == [1, 2]
    assert all(0 <= x <= 1 for r in m for x in r)
    assert a.effective_mu == 2.0 and set(a.models) == {0, 1}
    ends = [r for r in a.records if r.get("event") == "task_end"]
    assert len(ends) == 4
    epochs = [r for r in a.records if r.get("event") is None]
    assert {r["optimizer"] for r in epochs} == {ADAM, WEIGHT_FRICTION}


def test_memory_proxy():
    v = run_continual(run_cfg(VANILLA, seeds=(0,)))
    w = run_continual(run_cfg(WEIGHT_FRICTION, seeds=(0,)))
    e = run_continual(run_cfg(EWC, seeds=(0,)))
    p = v.models[0].n_params
    assert v.memory_units == w.memory_units == 3 * p
    assert e.memory_units == 5 * p


def test_resource_report():
    r = resource_report({"vanilla": (2.0, 10), "weight_friction": (1.0, 10), "ewc": (4.0, 20)})
    assert r.relative_memory == {"vanilla": 0.5, "weight_friction": 0.5, "ewc": 1.0}
    assert r.relative_time["ewc"] == 1.0 and r.relative_time["weight_friction"] == 0.25
    single = resource_report({"vanilla": (2.0, 10)})
    assert single.relative_time is None and single.rows()[0]["relative_memory"] is None


def test_gridsearch_singleton_empty_and_ties():
    cfg = run_cfg(WEIGHT_FRICTION, seeds=(0,))
    g = gridsearch_mu(cfg, [3.0])
    assert g.best_mu == 3.0 and list(g.scores) == [3.0]
    with pytest.raises(ValueError):
        gridsearch_mu(cfg, [])
    # friction never acts on a one-task sequence, so every mu ties
    one = run_cfg(WEIGHT_FRICTION, sequence(1), seeds=(0,))
    g = gridsearch_mu(one, [5.0, 0.5, 2.0])
    assert len(set(g.scores.values())) == 1 and g.best_mu == 0.5


def test_gridsearch_needs_validation_or_folds():
    cfg = run_cfg(WEIGHT_FRICTION, sequence(2, with_val=False), seeds=(0,))
    with pytest.raises(ValueError):
        gridsearch_mu(cfg, [1.0])
    g = gridsearch_mu(cfg, [1.0, 4.0], cv_folds=2)
    assert set(g.scores) == {1.0, 4.0}
    with pytest.raises(ValueError):
        with_mu(run_cfg(VANILLA), 1.0)


def test_cross_validation_partitions():
    seq = sequence(2, with_val=False)
    folds = cross_validation_sequences(seq, 3)
    assert len(folds) == 3
    for k in range(2):
        sizes = [len(f.tasks[k].validation) for f in folds]
        assert sum(sizes) == len(seq.tasks[k].train)
        assert all(len(f.tasks[k].train) + len(f.tasks[k].validation) == 90 for f in folds)
    with pytest.raises(ValueError):
        cross_validation_sequences(seq, 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_abort_carries_records():
    cfg = run_cfg(WEIGHT_FRICTION, mu=0.0, wf_lr=1e100, seeds=(0,))
    with pytest.raises(NumericError) as info:
        run_continual(cfg)
    recs = info.value.records
    assert any(r.get("event") == "task_end" and r["task"] == 0 for r in recs)


def test_compare_epoch_times(small_model):
    t = compare_epoch_times(small_model, blobs(64), {"sgd": OptimizerConfig(SGD, 0.1)}, trials=2)
    assert set(t) == {"sgd"} and t["sgd"] > 0
