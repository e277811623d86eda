import numpy as np
import pytest
from hypothesis import given, strategies as st

from metav.forge import (
    Composition, ModelEnsemble, ObfuscationSpec, assign_splits, distill, finetune, prune_neurons, prune_weights,
    retrain, suspect_group,
)
from metav.models import SequentialModel, init_model, mlp_spec
from metav.scenarios import build_task
from metav.tasks import Dataset
from oracles import expected_zeroed, smallest_magnitude_mask


def dense(weights, biases=None, task_kind="regressor"):
    """A model built directly from weight matrices with linear head."""
    widths = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    biases = biases or [np.zeros(w.shape[1]) for w in weights]
    return SequentialModel(mlp_spec(widths), [[np.array(w, float), np.array(b, float)]
                                              for w, b in zip(weights, biases)], task_kind)


def weight_zeros(m):
    return sum(int(np.sum(w == 0)) for w, _ in m.params)


def regression_data(n=256, seed=0, d=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, d))
    return Dataset(x, (x @ np.arange(1, d + 1.0))[:, None] * 0.3, "public")


# --- pruning -------------------------------------------------------------------

def test_weight_prune_hand_example():
    m = dense([np.array([[0.1, -0.5, 0.3, -0.05]])])
    out = prune_weights(m, 0.5)
    assert out.params[0][0].tolist() == [[0.0, -0.5, 0.3, 0.0]]
    assert m.params[0][0].tolist() == [[0.1, -0.5, 0.3, -0.05]]  # input untouched


def test_neuron_prune_hand_example():
    w1 = np.array([[0.1, 2.0], [0.1, 3.0]])  # incoming L1 norms 0.2 and 5.0
    out = prune_neurons(dense([w1, np.array([[1.0], [1.0]])], [np.array([0.4, 0.4]), np.array([0.0])]), 0.5)
    w, b = out.params[0]
    assert w[:, 0].tolist() == [0.0, 0.0] and b[0] == 0.0
    assert w[:, 1].tolist() == [2.0, 3.0] and b[1] == 0.4
    assert out.params[1][0].tolist() == [[0.0], [1.0]]


@pytest.mark.parametrize("ratio", [i / 10 for i in range(1, 10)])
def test_weight_prune_counts_decimal_ratios(ratio):
    m = init_model(mlp_spec([8, 32, 3], "softmax"), 0)
    total = sum(w.size for w, _ in m.params)
    assert weight_zeros(prune_weights(m, ratio)) == expected_zeroed(ratio, total)


@pytest.mark.parametrize("k", range(1, 16))
def test_neuron_prune_counts_sixteenths(k):
    m = init_model(mlp_spec([4, 16, 32, 2], "softmax"), 1)
    out = prune_neurons(m, k / 16)
    for (w, b), width in zip(out.params[:-1], (16, 32)):
        dead = np.all(w == 0, axis=0) & (b == 0)
        assert dead.sum() == expected_zeroed(k / 16, width)
    # outgoing rows of dead neurons are zeroed too
    dead0 = np.all(out.params[0][0] == 0, axis=0)
    assert np.all(out.params[1][0][dead0] == 0)


@given(st.integers(0, 2**31), st.floats(0.0, 0.99))
def test_weight_prune_matches_oracle_and_spares_biases(seed, ratio):
    m = init_model(mlp_spec([3, 5, 4, 2], "softmax"), seed)
    rng = np.random.default_rng(seed)
    for _, b in m.params:
        b[:] = rng.standard_normal(b.shape)
    out = prune_weights(m, ratio)
    weights = [w for w, _ in m.params]
    k = expected_zeroed(ratio, sum(w.size for w in weights))
    for w_in, (w_out, b_out), mask, (_, b_in) in zip(weights, out.params, smallest_magnitude_mask(weights, k),
                                                     m.params):
        assert np.all(w_out[mask] == 0)
        assert np.array_equal(w_out[~mask], w_in[~mask])
        assert np.array_equal(b_out, b_in)


def test_prune_ratio_bounds():
    m = init_model(mlp_spec([3, 4, 2]), 0, "regressor")
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            prune_weights(m, bad)
        with pytest.raises(ValueError):
            prune_neurons(m, bad)
    assert np.array_equal(prune_weights(m, 0.0).flat_params(), m.flat_params())


# --- fine-tuning and retraining ---------------------------------------------------

def test_ftll_freezes_everything_but_last_layer():
    m = init_model(mlp_spec([3, 8, 8, 1]), 0, "regressor")
    out = finetune(m, regression_data(), "last-layer", 3, 1e-2, 0)
    for (w0, b0), (w1, b1) in zip(m.params[:-1], out.params[:-1]):
        assert np.array_equal(w0, w1) and np.array_equal(b0, b1)
    assert not np.array_equal(m.params[-1][0], out.params[-1][0])


def test_ftal_moves_every_layer():
    m = init_model(mlp_spec([3, 8, 8, 1]), 0, "regressor")
    out = finetune(m, regression_data(), "all-layers", 3, 1e-2, 0)
    for (w0, _), (w1, _) in zip(m.params, out.params):
        assert not np.array_equal(w0, w1)


def test_rtll_reinitializes_and_freezes():
    m = init_model(mlp_spec([3, 8, 1]), 0, "regressor")
    zero_epochs = retrain(m, regression_data(), "last-layer", 0, 1e-2, 5)
    assert np.array_equal(zero_epochs.params[0][0], m.params[0][0])
    assert not np.array_equal(zero_epochs.params[-1][0], m.params[-1][0])
    assert np.all(zero_epochs.params[-1][1] == 0)
    out = retrain(m, regression_data(), "last-layer", 3, 1e-2, 5)
    assert np.array_equal(out.params[0][0], m.params[0][0]) and np.array_equal(out.params[0][1], m.params[0][1])


def test_unknown_scope():
    m = init_model(mlp_spec([3, 4, 1]), 0, "regressor")
    with pytest.raises(ValueError):
        finetune(m, regression_data(), "middle", 1, 1e-2, 0)


def test_obfuscation_kind_validated():
    with pytest.raises(ValueError):
        ObfuscationSpec("quantize")


# --- distillation -------------------------------------------------------------------

def test_self_distillation_regressor():
    teacher = init_model(mlp_spec([3, 16, 1]), 0, "regressor")
    data = regression_data(512)
    student = distill(teacher.predict, mlp_spec([3, 16, 1]), data, 150, 1.0, 1, "regressor", lr=1e-2)
    assert np.mean((student.predict(data.features) - teacher.predict(data.features)) ** 2) < 1e-2


def test_distill_classifier_matches_teacher_labels():
    teacher = init_model(mlp_spec([2, 16, 3], "softmax"), 0)
    x = np.random.default_rng(0).uniform(-1, 1, (600, 2))
    student = distill(teacher.predict, mlp_spec([2, 16, 3], "softmax"), Dataset(x, np.zeros((600, 3)), "public"),
                      100, 2.0, 1, "classifier", lr=1e-2)
    agree = np.mean(student.predict(x).argmax(1) == teacher.predict(x).argmax(1))
    assert agree > 0.9


# --- ensembles -----------------------------------------------------------------------

def test_default_composition_counts():
    scenario, _ = build_task("classification", 0)
    comp = Composition()
    kinds = [spec.kind for _, spec in comp.obfuscations(scenario, 0)]
    assert kinds.count("weight-prune") == 9 and kinds.count("neuron-prune") == 15
    assert kinds.count("distill") == 6
    assert all(kinds.count(k) == 2 for k in ("ftll", "ftal", "rtll", "rtal"))
    plan = comp.negative_plan(0)
    assert len(plan) == 20
    assert sum(1 for p in plan if p[2] == "irrelevant") == 5
    ids = [sid for sid, _ in comp.obfuscations(scenario, 0)] + [p[0] for p in plan]
    assert len(set(ids)) == len(ids)


def test_tiny_ensemble_structure(tiny_ensemble):
    ens = tiny_ensemble
    pos = [s for s in ens.suspects if s.label == "+"]
    neg = [s for s in ens.suspects if s.label == "-"]
    assert len(pos) == 10 and len(neg) == 8
    assert {s.split for s in ens.suspects} == {"construction", "holdout"}
    for s in ens.suspects:
        assert (s.model.d_in, s.model.d_out) == (ens.target.d_in, ens.target.d_out)
    assert abs(len(ens.members("construction")) - len(ens.holdout())) <= 1


def test_split_stratified_and_deterministic(tiny_ensemble):
    ens = tiny_ensemble
    before = [s.split for s in ens.suspects]
    assign_splits(ens.suspects, ens.seed)
    assert [s.split for s in ens.suspects] == before
    groups = {}
    for s in ens.suspects:
        groups.setdefault(suspect_group(s), []).append(s.split)
    for splits in groups.values():
        assert abs(splits.count("construction") - splits.count("holdout")) <= 1


def test_ensemble_roundtrip(tiny_ensemble, tmp_path):
    tiny_ensemble.save(tmp_path)
    back = ModelEnsemble.load(tmp_path)
    assert np.array_equal(back.target.flat_params(), tiny_ensemble.target.flat_params())
    for a, b in zip(back.suspects, tiny_ensemble.suspects):
        assert (a.id, a.label, a.split, a.utility_ok) == (b.id, b.label, b.split, b.utility_ok)
        assert np.array_equal(a.model.flat_params(), b.model.flat_params())
