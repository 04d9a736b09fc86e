import numpy as np
import pytest
import torch

from amr.importance import CoAttention, affinity, coattend
from amr.trainer import numeric_grad


def dbl(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def params(rng, h=2, m=2):
    return dict(W_5=dbl(rng.normal(size=(h, m))), W_6=dbl(rng.normal(size=(h, m))),
                v_1=dbl(rng.normal(size=m)), v_2=dbl(rng.normal(size=m)))


def test_zero_learner_gives_zero_affinity(rng):
    S = affinity(torch.zeros(3, 4, dtype=torch.float64), dbl(rng.normal(size=(3, 4))), dbl(rng.normal(size=(4, 4))))
    assert not S.any()


def test_orthonormal_rows_identity_affinity():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    h = dbl(q.T[:3])
    torch.testing.assert_close(affinity(h, h, torch.eye(4, dtype=torch.float64)), torch.eye(3, dtype=torch.float64),
                               rtol=0, atol=1e-12)


def test_affinity_hand_bilinear(rng):
    hl, hk, Ws = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    expect = np.array([[max(0.0, sum(hl[a, i] * Ws[i, j] * hk[b, j] for i in range(2) for j in range(2)))
                        for b in range(2)] for a in range(2)])
    np.testing.assert_allclose(affinity(dbl(hl), dbl(hk), dbl(Ws)).numpy(), expect, rtol=0, atol=1e-14)


def test_affinity_shape_mismatch():
    with pytest.raises(ValueError):
        affinity(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(3, 3))


def test_zero_affinity_drops_cross_term(rng):
    p = params(rng, h=3, m=4)
    hl, hk = dbl(rng.normal(size=(2, 3))), dbl(rng.normal(size=(2, 3)))
    L, K = coattend(hl, hk, torch.zeros(2, 2, dtype=torch.float64), **p)
    beta = torch.softmax(torch.relu(hl @ p["W_5"]) @ p["v_1"], 0)
    torch.testing.assert_close(L.e, torch.relu(hl @ p["W_5"]) * beta[:, None], rtol=0, atol=1e-14)


def test_identical_rows_give_uniform_beta(rng):
    p = params(rng, h=3, m=3)
    row = dbl(rng.normal(size=3))
    hl = row.repeat(4, 1)
    L, _ = coattend(hl, hl, torch.zeros(4, 4, dtype=torch.float64), **p)
    torch.testing.assert_close(L.beta, torch.full((4,), 0.25, dtype=torch.float64), rtol=0, atol=1e-15)


def test_step_by_step_hand_evaluation(rng):
    hl, hk, Ws = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    W5, W6, v1, v2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=2)
    S = np.maximum(hl @ Ws @ hk.T, 0)
    relu = lambda x: np.maximum(x, 0)
    ht_l = relu(hl @ W5 + S.T @ (hk @ W6))
    ht_k = relu(hk @ W6 + S @ (hl @ W5))

    def softmax(x):
        z = np.exp(x - x.max())
        return z / z.sum()

    b_l, b_k = softmax(ht_l @ v1), softmax(ht_k @ v2)
    L, K = coattend(dbl(hl), dbl(hk), affinity(dbl(hl), dbl(hk), dbl(Ws)), dbl(W5), dbl(W6), dbl(v1), dbl(v2))
    np.testing.assert_allclose(L.beta.numpy(), b_l, atol=1e-14)
    np.testing.assert_allclose(K.beta.numpy(), b_k, atol=1e-14)
    np.testing.assert_allclose(L.e.numpy(), ht_l * b_l[:, None], atol=1e-14)
    np.testing.assert_allclose(K.e.numpy(), ht_k * b_k[:, None], atol=1e-14)


def test_role_symmetry(rng):
    p = params(rng, h=3, m=2)
    Ws = dbl(rng.normal(size=(3, 3)))
    hl, hk = dbl(rng.normal(size=(4, 3))), dbl(rng.normal(size=(4, 3)))
    L, K = coattend(hl, hk, affinity(hl, hk, Ws), **p)
    K2, L2 = coattend(hk, hl, affinity(hk, hl, Ws.T), p["W_6"], p["W_5"], p["v_2"], p["v_1"])
    for a, b in ((L.e, L2.e), (L.beta, L2.beta), (K.e, K2.e), (K.beta, K2.beta)):
        torch.testing.assert_close(a, b, rtol=0, atol=1e-13)


def test_logit_shift_invariance(rng):
    p = params(rng, h=3, m=2)
    hl, hk = dbl(rng.normal(size=(3, 3))), dbl(rng.normal(size=(3, 3)))
    S = affinity(hl, hk, dbl(rng.normal(size=(3, 3))))
    L, _ = coattend(hl, hk, S, **p)
    # a uniform shift of every aspect logit
    logits = (torch.relu(hl @ p["W_5"] + S.T @ (hk @ p["W_6"]))) @ p["v_1"]
    torch.testing.assert_close(torch.softmax(logits + 7.5, 0), L.beta, rtol=0, atol=1e-8)


def test_beta_distributions_batched(rng):
    co = CoAttention(4, 5).double()
    co.reset_parameters(torch.Generator().manual_seed(0))
    L, K = co(dbl(rng.normal(size=(50, 3, 4))), dbl(rng.normal(size=(50, 3, 4))))
    for beta in (L.beta, K.beta):
        assert torch.all(beta >= 0)
        torch.testing.assert_close(beta.sum(-1), torch.ones(50, dtype=torch.float64), rtol=0, atol=1e-12)


def test_coattention_gradients(rng):
    co = CoAttention(3, 2).double()
    co.reset_parameters(torch.Generator().manual_seed(2))
    hl, hk = dbl(rng.normal(size=(2, 3))), dbl(rng.normal(size=(2, 3)))
    w1, w2 = dbl(rng.normal(size=(2, 2))), dbl(rng.normal(size=(2, 2)))

    def loss():
        L, K = co(hl, hk)
        return (L.e * w1).sum() + (K.e * w2).sum()

    loss().backward()
    for name, p in co.named_parameters():
        num = numeric_grad(loss, p, 1e-5)
        scale = max(float(p.grad.norm()), float(num.norm()))
        assert scale < 1e-12 or float((p.grad - num).norm()) / scale <= 1e-4, name
