"""Leave-one-positive-out ranking metrics over 1 + 99 candidate groups."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractViolation

KS = (5, 10, 20)
N_NEG = 99
METRIC_KEYS = tuple(f"HR@{k}" for k in KS) + tuple(f"nDCG@{k}" for k in KS)


@dataclass
class RankedGroup:
    """One positive KC (``candidates[0]``) ranked among sampled negatives."""

    learner: int
    candidates: np.ndarray
    scores: np.ndarray

    @property
    def positive(self) -> int:
        return int(self.candidates[0])

    @property
    def ranking(self) -> np.ndarray:
        """Candidates by descending score, ties by ascending KC id."""
        order = np.lexsort((self.candidates, -np.asarray(self.scores, dtype=float)))
        return self.candidates[order]

    @property
    def rank(self) -> int:
        s = np.asarray(self.scores, dtype=float)
        sp, kp = s[0], self.candidates[0]
        return 1 + int(np.sum(s > sp)) + int(np.sum((s == sp) & (self.candidates < kp)))


def _check(groups, k):
    if len(groups) == 0:
        raise ContractViolation("metrics need at least one group")
    if k < 1:
        raise ContractViolation(f"k must be positive, got {k}")


def hr_at_k(groups: list[RankedGroup], k: int) -> float:
    _check(groups, k)
    return float(np.mean([g.rank <= k for g in groups]))


def ndcg_at_k(groups: list[RankedGroup], k: int) -> float:
    """With one relevant item the ideal DCG is 1, so nDCG is ``1/log2(rank+1)`` inside the top k."""
    _check(groups, k)
    return float(np.mean([1.0 / math.log2(g.rank + 1) if g.rank <= k else 0.0 for g in groups]))


@dataclass
class MetricsReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    groups: int
    skipped: int = 0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"config_hash": self.config_hash, "groups": self.groups, "skipped": self.skipped}
        out.update({f"HR@{k}": v for k, v in self.hr.items()})
        out.update({f"nDCG@{k}": v for k, v in self.ndcg.items()})
        out.update(self.extra)
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def group_rng(seed: int, learner: int, kc: int) -> np.random.Generator:
    return np.random.default_rng([seed, int(learner), int(kc)])


def build_groups(pairs: Iterable[tuple[int, int]], n_kcs: int, observed: Mapping[int, set],
                 n_neg: int = N_NEG, seed: int = 0) -> tuple[list[tuple[int, np.ndarray]], int]:
    """Candidate lists (positive first) with negatives seeded per (learner, positive)."""
    out, skipped = [], 0
    all_kcs = np.arange(n_kcs)
    for l, k in pairs:
        seen = observed.get(l, set()) | {k}
        pool = all_kcs[~np.isin(all_kcs, np.fromiter(seen, dtype=np.int64, count=len(seen)))]
        if len(pool) < n_neg:
            skipped += 1
            continue
        neg = group_rng(seed, l, k).choice(pool, size=n_neg, replace=False)
        out.append((int(l), np.concatenate([[k], neg]).astype(np.int64)))
    return out, skipped


def score_groups(scorer: Callable, cand: list[tuple[int, np.ndarray]]) -> list[RankedGroup]:
    if not cand:
        return []
    learners = np.concatenate([np.full(len(c), l) for l, c in cand])
    kcs = np.concatenate([c for _, c in cand])
    scores = np.asarray(scorer(learners, kcs), dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scorer produced non-finite scores")
    out, pos = [], 0
    for l, c in cand:
        out.append(RankedGroup(l, c, scores[pos:pos + len(c)]))
        pos += len(c)
    return out


def report(groups: list[RankedGroup], skipped: int = 0, config_hash: str = "", ks=KS) -> MetricsReport:
    return MetricsReport({k: hr_at_k(groups, k) for k in ks}, {k: ndcg_at_k(groups, k) for k in ks},
                         len(groups), skipped, config_hash)


def evaluate(scorer: Callable, test_pairs, n_kcs: int, observed: Mapping[int, set],
             n_neg: int = N_NEG, seed: int = 0, config_hash: str = "") -> MetricsReport:
    """Score one candidate group per test positive and compute HR/nDCG at 5, 10, 20.

    ``scorer(learners, kcs)`` returns one score per aligned pair. Positives
    without ``n_neg`` unobserved KCs are skipped and counted.
    """
    cand, skipped = build_groups(test_pairs, n_kcs, observed, n_neg, seed)
    groups = score_groups(scorer, cand)
    if not groups:
        raise ContractViolation("no evaluable test groups")
    return report(groups, skipped, config_hash)


def observed_sets(*logs) -> dict[int, set]:
    out: dict[int, set] = {}
    for log in logs:
        for l, k in zip(log.learner.tolist(), log.kc.tolist()):
            out.setdefault(l, set()).add(k)
    return out
