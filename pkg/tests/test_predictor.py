import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from amr.errors import ContractViolation
from amr.model import total_loss
from amr.predictor import bpr_loss, score, triplet_loss
from amr.synth import toy_fixture
from amr.trainer import TrainConfig, build_model, prepare


def dbl(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def zeros(*shape):
    return torch.zeros(*shape, dtype=torch.float64)


def test_zero_inputs_score_zero():
    assert float(score(zeros(2, 3), zeros(2, 3), zeros(2, 4), zeros(2, 4), zeros(4, 4), 0.0)) == 0.0


def test_unit_alignment_scores_one(rng):
    h = dbl(rng.normal(size=(2, 3)))
    h = h / h.norm()
    assert float(score(h, h, zeros(2, 2), zeros(2, 2), dbl(rng.normal(size=(2, 2))), 0.0)) == pytest.approx(1.0, abs=1e-15)


def test_score_hand_evaluation(rng):
    hl, hk, el, ek, M = (rng.normal(size=(2, 2)) for _ in range(5))
    b = 0.3
    frob = sum(hl[a, j] * hk[a, j] for a in range(2) for j in range(2))
    aspect = sum(el[a, i] * M[i, j] * ek[a, j] for a in range(2) for i in range(2) for j in range(2))
    got = float(score(dbl(hl), dbl(hk), dbl(el), dbl(ek), dbl(M), b))
    assert got == pytest.approx(frob + aspect + b, abs=1e-14)
    assert got == pytest.approx(np.sum(hl * hk) + np.trace(el @ M @ ek.T) + b, abs=1e-14)


def test_score_scales_frobenius_term(rng):
    hl, hk = dbl(rng.normal(size=(2, 3))), dbl(rng.normal(size=(2, 3)))
    M = dbl(rng.normal(size=(3, 3)))
    b = 0.7
    base = score(hl, hk, zeros(2, 3), zeros(2, 3), M, b) - b
    for alpha in (-2.0, 0.5, 3.0):
        assert float(score(alpha * hl, hk, zeros(2, 3), zeros(2, 3), M, b) - b) == pytest.approx(alpha * float(base), abs=1e-12)


def test_score_shape_mismatch():
    with pytest.raises(ValueError):
        score(zeros(2, 3), zeros(3, 3), zeros(2, 2), zeros(2, 2), zeros(2, 2), 0.0)


def test_bpr_values():
    assert float(bpr_loss(dbl(1.0), dbl(1.0))) == pytest.approx(math.log(2), abs=1e-15)
    assert float(bpr_loss(dbl(2.0), dbl(1.0))) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)
    assert float(bpr_loss(dbl(2.0), dbl(1.0))) == pytest.approx(0.3133, abs=1e-4)
    assert float(bpr_loss(dbl(800.0), dbl(0.0))) == 0.0
    assert math.isfinite(float(bpr_loss(dbl(-800.0), dbl(0.0))))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_bpr_pair_bound(a, b):
    total = float(bpr_loss(dbl(a), dbl(b)) + bpr_loss(dbl(b), dbl(a)))
    assert total >= 2 * math.log(2) - 1e-12
    if a == b:
        assert total == pytest.approx(2 * math.log(2), abs=1e-15)


def test_bpr_monotone_decreasing():
    d = dbl(np.linspace(-10, 10, 101))
    vals = bpr_loss(d, torch.zeros_like(d)).numpy()
    assert np.all(np.diff(vals) < 0)


def test_triplet_cases(rng):
    h = dbl(rng.normal(size=(2, 3)))
    assert float(triplet_loss(h, h + 1.0, h + 1.0)) == pytest.approx(1.0)
    n = h.clone()
    n[0, 0] += 3.0
    assert float(triplet_loss(h, h, n)) == 0.0
    assert float(triplet_loss(h, h, n, hinge=False)) == pytest.approx(-2.0)
    p = h.clone()
    p[1, 2] -= 2.0
    assert float(triplet_loss(h, p, h)) == pytest.approx(3.0)


def test_triplet_rotation_invariance(rng):
    hl, hp, hn = (rng.normal(size=(2, 3)) for _ in range(3))
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    rot = lambda x: dbl((Q @ x.reshape(-1)).reshape(2, 3))
    a = float(triplet_loss(dbl(hl), dbl(hp), dbl(hn), hinge=False))
    b = float(triplet_loss(rot(hl), rot(hp), rot(hn), hinge=False))
    assert abs(a - b) <= 1e-8


# -- total loss -----------------------------------------------------------------
@pytest.fixture(scope="module")
def toy_model():
    cfg = TrainConfig(n_aspects=2, h=3, m=3, dtype="float64", val_fraction=0.0)
    ds = toy_fixture(0)
    fit, _, inp = prepare(cfg, ds)
    return build_model(cfg, inp.n_learners, inp.n_kcs), inp


def test_total_loss_all_equal_is_ln2_plus_one(toy_model):
    model, inp = toy_model
    # the same KC as positive and negative makes every term equal
    loss = total_loss(model, inp, torch.tensor([[0, 3, 3]]))
    assert loss.item() == pytest.approx(math.log(2) + 1.0, abs=1e-12)


def test_total_loss_nonnegative_and_mean_invariant(toy_model):
    model, inp = toy_model
    triples = torch.tensor([[0, 1, 5], [2, 3, 7], [4, 6, 0]])
    loss = total_loss(model, inp, triples)
    assert loss.item() >= 0
    assert total_loss(model, inp, torch.cat([triples, triples])).item() == pytest.approx(loss.item(), abs=1e-14)


def test_total_loss_empty_batch(toy_model):
    model, inp = toy_model
    with pytest.raises(ContractViolation):
        total_loss(model, inp, torch.zeros((0, 3), dtype=torch.long))
