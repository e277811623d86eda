import numpy as np
import pytest
from hypothesis import given, strategies as st

from metav import tensor as T
from metav.fingerprint import (
    FingerprintPair, construct_fingerprint, init_fingerprint, init_verifier, objective, smoothed, verifier_score,
)
from metav.forge import EnsembleSplit
from metav.models import init_model, mlp_spec
from metav.textio import FormatError
from oracles import central_diff, max_rel_error


def micro_split(seed=0, d_in=2, d_out=2):
    models = [init_model(mlp_spec([d_in, 3, d_out], "softmax"), seed + i) for i in range(5)]
    return EnsembleSplit(models[0], models[1:3], models[3:5])


def test_init_statistics():
    fp = init_fingerprint(400, 10, 0)
    assert fp.w.shape == (400, 10)
    assert abs(fp.w.std() - 0.5) < 0.02
    assert 0.3 <= fp.x.std() <= 0.6
    assert np.all(np.abs(fp.x) < 1)


def test_zero_verifier_scores_half():
    v = init_verifier(6, 0, hidden=4)
    for w, b in v.params:
        w[:] = 0
        b[:] = 0
    assert verifier_score(v, np.ones((3, 2))) == (0.5, 0.5)


def test_verifier_sensitive_to_row_order(rng):
    v = init_verifier(6, 1, hidden=8)
    out = rng.standard_normal((3, 2))
    assert verifier_score(v, out) != verifier_score(v, out[::-1])


def test_verifier_rejects_wrong_shape():
    with pytest.raises(T.ShapeError):
        verifier_score(init_verifier(6, 0, hidden=4), np.ones((2, 2)))


@given(st.integers(0, 2**31))
def test_objective_is_sum_of_logs(seed):
    split = micro_split(seed % 1000)
    fp = init_fingerprint(3, 2, seed)
    v = init_verifier(6, seed, hidden=5)
    ell = objective(T.Tensor(fp.w), v.param_tensors(), v, split.negatives[0], split.target, split.positives[0])
    assert ell.data[0] <= 0
    pm = verifier_score(v, split.negatives[0].predict(fp.x))[0]
    pf = verifier_score(v, split.target.predict(fp.x))[1]
    pp = verifier_score(v, split.positives[0].predict(fp.x))[1]
    assert ell.data[0] == pytest.approx(np.log(pm) + np.log(pf) + np.log(pp), rel=1e-12)


def test_objective_gradient_matches_finite_differences():
    split = micro_split(3)
    fp = init_fingerprint(4, 2, 1)
    v = init_verifier(8, 2, hidden=6)
    std = (np.array([0.4, 0.6]), np.array([0.2, 0.3]))
    arrays = [a for pair in v.params for a in pair]

    def value():
        return objective(T.Tensor(fp.w), v.param_tensors(trainable=()), v, split.negatives[1], split.target,
                         split.positives[0], std).data[0]

    w = T.Tensor(fp.w, requires_grad=True)
    theta = v.param_tensors()
    grads = T.backward(objective(w, theta, v, split.negatives[1], split.target, split.positives[0], std),
                       [w] + [p for pair in theta for p in pair])
    assert max_rel_error(grads[w], central_diff(value, fp.w)) < 1e-6
    for a, p in zip(arrays, [p for pair in theta for p in pair]):
        assert max_rel_error(grads[p], central_diff(value, a)) < 1e-6


def test_construction_deterministic_and_loss_nonpositive():
    split = micro_split()
    a = construct_fingerprint(split, n=5, iters=60, seed=4, hidden=10)
    b = construct_fingerprint(split, n=5, iters=60, seed=4, hidden=10)
    assert np.array_equal(a.fingerprint.w, b.fingerprint.w)
    assert np.array_equal(a.verifier.flat_params(), b.verifier.flat_params())
    assert a.loss_trace == b.loss_trace and len(a.loss_trace) == 60
    assert all(v <= 0 for v in a.loss_trace)
    assert a.meta == {"seed": 4, "iters": 60, "lr": 1e-3, "n": 5, "hidden": 10}
    c = construct_fingerprint(split, n=5, iters=60, seed=5, hidden=10)
    assert not np.array_equal(a.fingerprint.w, c.fingerprint.w)


def test_construction_improves_objective():
    split = micro_split()
    pair = construct_fingerprint(split, n=8, iters=400, lr=1e-2, seed=0, hidden=16)
    s = smoothed(pair.loss_trace)
    assert s[-1] > s[49]


def test_empty_side_rejected():
    split = micro_split()
    with pytest.raises(ValueError):
        construct_fingerprint(EnsembleSplit(split.target, [], split.negatives), n=2, iters=1)
    with pytest.raises(ValueError):
        construct_fingerprint(EnsembleSplit(split.target, split.positives, []), n=2, iters=1)


def test_mismatched_suspect_dims_rejected():
    split = micro_split()
    odd = init_model(mlp_spec([3, 3, 2], "softmax"), 0)
    with pytest.raises(T.ShapeError):
        construct_fingerprint(EnsembleSplit(split.target, [odd], split.negatives), n=2, iters=1)


def test_pair_roundtrip_bit_exact(tmp_path):
    pair = construct_fingerprint(micro_split(), n=4, iters=20, seed=1, hidden=6, standardize=True)
    pair.save(tmp_path / "pair.json")
    back = FingerprintPair.load(tmp_path / "pair.json")
    assert np.array_equal(back.fingerprint.w, pair.fingerprint.w)
    assert np.array_equal(back.verifier.flat_params(), pair.verifier.flat_params())
    assert back.loss_trace == pair.loss_trace and back.meta == pair.meta
    assert all(np.array_equal(a, b) for a, b in zip(back.standardize, pair.standardize))
    out = np.random.default_rng(0).uniform(size=(4, 2))
    assert back.score_outputs(out) == pair.score_outputs(out)


def test_pair_format_errors(tmp_path):
    d = construct_fingerprint(micro_split(), n=2, iters=2, hidden=3).to_dict()
    with pytest.raises(FormatError, match="version"):
        FingerprintPair.from_dict(dict(d, version="x"))
    with pytest.raises(FormatError):
        FingerprintPair.from_dict(dict(d, n=3))


def test_smoothed_window():
    s = smoothed([1.0, 2.0, 3.0, 4.0], window=2)
    assert s.tolist() == [1.0, 1.5, 2.5, 3.5]
