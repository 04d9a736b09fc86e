import json
import math

import numpy as np
import pytest

from amr.errors import ContractViolation
from amr.metrics import RankedGroup, build_groups, evaluate, hr_at_k, ndcg_at_k, observed_sets, report


def group_at_rank(rank, n=100):
    """Positive KC 0 placed at ``rank`` among ``n`` candidates with distinct scores."""
    scores = np.linspace(1.0, 0.0, n)
    s = scores.copy()
    s[0], s[rank - 1] = scores[rank - 1], scores[0]
    return RankedGroup(0, np.arange(n), s)


def scan_rank(candidates, scores):
    """Oracle: sort (score desc, id asc) then scan for the positive."""
    items = sorted(zip(scores.tolist(), candidates.tolist()), key=lambda t: (-t[0], t[1]))
    for r, (_, kc) in enumerate(items, 1):
        if kc == candidates[0]:
            return r


def test_hand_cases():
    for rank, nd in ((1, 1.0), (3, 0.5)):
        g = group_at_rank(rank)
        assert g.rank == rank
        assert ndcg_at_k([g], 5) == nd
    assert hr_at_k([group_at_rank(1)] * 4, 5) == 1.0
    g6 = group_at_rank(6)
    assert hr_at_k([g6], 5) == 0.0 and hr_at_k([g6], 10) == 1.0
    assert ndcg_at_k([g6], 5) == 0.0


def test_rank_scan_oracle_on_random_groups(rng):
    groups = []
    for _ in range(1000):
        cand = rng.choice(500, size=100, replace=False)
        scores = rng.integers(0, 40, 100).astype(float)  # many ties
        groups.append(RankedGroup(0, cand, scores))
    for k in (5, 10, 20):
        ranks = [scan_rank(g.candidates, g.scores) for g in groups]
        assert hr_at_k(groups, k) == np.mean([r <= k for r in ranks])
        assert ndcg_at_k(groups, k) == np.mean([1 / math.log2(r + 1) if r <= k else 0.0 for r in ranks])


def test_ranking_is_permutation_with_id_tiebreak():
    g = RankedGroup(0, np.array([7, 3, 9, 1]), np.array([0.5, 0.5, 0.9, 0.5]))
    assert g.ranking.tolist() == [9, 1, 3, 7]
    assert g.rank == 4


def test_candidate_order_invariance(rng):
    cand = rng.choice(300, 100, replace=False)
    scores = rng.integers(0, 10, 100).astype(float)
    g = RankedGroup(0, cand, scores)
    perm = np.concatenate([[0], 1 + rng.permutation(99)])
    g2 = RankedGroup(0, cand[perm], scores[perm])
    assert g.rank == g2.rank
    assert np.array_equal(g.ranking, g2.ranking)


def test_ndcg_never_exceeds_hr(rng):
    groups = [RankedGroup(0, np.arange(100), rng.random(100)) for _ in range(200)]
    for k in (5, 10, 20):
        assert ndcg_at_k(groups, k) <= hr_at_k(groups, k)


def test_empty_groups_contract_violation():
    with pytest.raises(ContractViolation):
        hr_at_k([], 5)
    with pytest.raises(ContractViolation):
        ndcg_at_k([], 5)


def test_groups_have_100_unobserved_candidates():
    observed = {0: {1, 2, 3}}
    cand, skipped = build_groups([(0, 2)], 200, observed, seed=4)
    (l, c), = cand
    assert skipped == 0 and len(c) == 100 and c[0] == 2
    assert len(set(c.tolist())) == 100 and not ({1, 3} & set(c[1:].tolist()))


def test_learner_without_enough_negatives_is_skipped():
    observed = {0: set(range(95))}
    cand, skipped = build_groups([(0, 0), (1, 5)], 100, observed)
    assert skipped == 1 and [l for l, _ in cand] == [1]


def _random_scorer(seed):
    rng = np.random.default_rng(seed)
    return lambda learners, kcs: rng.random(len(kcs))


def test_random_model_hr5_near_chance():
    pairs = [(l, int(k)) for l, k in zip(range(2000), np.random.default_rng(0).integers(0, 500, 2000))]
    rep = evaluate(_random_scorer(1), pairs, 500, {})
    assert abs(rep.hr[5] - 0.05) <= 0.02
    assert rep.groups == 2000


def test_oracle_model_scores_one():
    pairs = [(0, 4), (1, 9), (2, 4)]
    positives = set(pairs)
    oracle = lambda ls, ks: np.array([1e9 if (l, k) in positives else 0.0 for l, k in zip(ls, ks)])
    rep = evaluate(oracle, pairs, 300, {})
    assert all(v == 1.0 for v in (*rep.hr.values(), *rep.ndcg.values()))


def test_same_seed_same_report(tmp_path):
    pairs = [(l, l % 50) for l in range(100)]
    scorer = lambda ls, ks: np.sin(np.asarray(ls) * 7.0 + np.asarray(ks))
    a = evaluate(scorer, pairs, 400, {}, seed=3, config_hash="abc")
    b = evaluate(scorer, pairs, 400, {}, seed=3, config_hash="abc")
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    data = json.loads((tmp_path / "a.json").read_text())
    assert data["config_hash"] == "abc" and set(data) >= {"HR@5", "HR@10", "HR@20", "nDCG@5", "nDCG@10", "nDCG@20"}
    assert all(0.0 <= data[k] <= 1.0 for k in data if "@" in k)


def test_non_finite_scores_rejected():
    with pytest.raises(ValueError):
        evaluate(lambda ls, ks: np.full(len(ks), np.nan), [(0, 1)], 200, {})


def test_observed_sets_union(toy):
    obs = observed_sets(toy.interactions)
    assert sum(len(v) for v in obs.values()) == len(set(toy.interactions.pairs()))
