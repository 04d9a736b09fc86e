"""Planted-structure synthetic datasets and the small gradient-check fixture.

Learners and KCs are split into blocks; learner block ``i`` prefers KC
block ``i``. Each KC additionally carries ``n_aspects - 1`` categorical
attributes and each learner a preferred value per attribute, so a KC's
appeal depends on several independent facets. KC names spell out the
attribute values, which is the only content signal the model sees.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import KC, LEARNER
from .hingraph import Dataset, HeteroGraph, InteractionLog

TRAIN_START = np.datetime64("2017-01-01T00:00:00")
CUTOFF = np.datetime64("2019-11-01T00:00:00")
TEST_END = np.datetime64("2019-12-31T00:00:00")
LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def _words(rng, n_attrs, n_values, length=7):
    return [["".join(rng.choice(LETTERS, size=length)) for _ in range(n_values)] for _ in range(n_attrs)]


def _times(rng, lo, hi, n):
    span = int((hi - lo) / np.timedelta64(1, "s"))
    return lo + np.sort(rng.integers(0, span, size=n)).astype("timedelta64[s]")


def planted_dataset(n_learners: int = 400, n_kcs: int = 400, n_blocks: int = 4, n_aspects: int = 4,
                    n_values: int = 4, courses_per_block: int = 10, interactions_per_learner: int = 6,
                    match_weight: float = 4.0, noise: float = 0.01, deviation: float = 0.2, name_noise: float = 0.3,
                    popularity: float = 1.0, embedding_dim: int = 10, seed: int = 0) -> Dataset:
    """Block-structured learners x KCs on a learner-course-teacher-KC graph.

    Every course has a facet profile (its block plus ``n_aspects - 1``
    attribute values). Each learner takes one course and each KC sits in one
    course of its block; both inherit the course profile with every extra
    attribute resampled with probability ``deviation``. A learner picks KCs
    with weight ``popularity_k * exp(match_weight * matching attributes)``,
    scaled by ``noise`` outside its block. Each word of a KC name shows a
    random value instead of the true one with probability ``name_noise``. Teachers each teach two
    consecutive courses of one block, and those two courses share a profile.
    """
    rng = np.random.default_rng(seed)
    n_extra = n_aspects - 1
    words = _words(rng, n_aspects, n_values)

    n_courses = n_blocks * courses_per_block
    n_teachers = n_courses // 2
    teacher_of = np.arange(n_courses) // 2
    # both courses of a teacher share one profile
    course_profile = np.column_stack(
        [np.arange(n_courses) // courses_per_block]
        + [rng.integers(0, n_values, n_teachers)[teacher_of] for _ in range(n_extra)])

    def members(blocks):
        n = len(blocks)
        course = blocks * courses_per_block + rng.integers(0, courses_per_block, n)
        prof = course_profile[course].copy()
        flip = rng.random((n, n_extra)) < deviation
        prof[:, 1:] = np.where(flip, rng.integers(0, n_values, (n, n_extra)), prof[:, 1:])
        return course, prof

    kc_course, kc_attr = members(np.arange(n_kcs) * n_blocks // n_kcs)
    learner_course, learner_pref = members(np.arange(n_learners) * n_blocks // n_learners)
    kc_block, learner_block = kc_attr[:, 0], learner_pref[:, 0]
    shown = np.where(rng.random((n_kcs, n_aspects)) < name_noise, rng.integers(0, n_values, (n_kcs, n_aspects)), kc_attr)
    names = [" ".join(words[j][shown[k, j]] for j in range(n_aspects)) for k in range(n_kcs)]
    pop = (rng.pareto(2.0, n_kcs) + 1.0) ** popularity
    rows_l, rows_k, stamps, test = [], [], [], []
    for l in range(n_learners):
        matches = (kc_attr[:, 1:] == learner_pref[l, 1:]).sum(axis=1)
        w = pop * np.exp(match_weight * matches)
        w = np.where(kc_block == learner_block[l], w, w * noise)
        items = rng.choice(n_kcs, size=interactions_per_learner, replace=False, p=w / w.sum())
        ts_train = _times(rng, TRAIN_START, CUTOFF, interactions_per_learner - 1)
        ts_test = _times(rng, CUTOFF, TEST_END, 1)
        rows_l += [l] * interactions_per_learner
        rows_k += items.tolist()
        stamps += list(ts_train) + list(ts_test)
        test += [False] * (interactions_per_learner - 1) + [True]

    def incidence(a_idx, n_a, n_b):
        return sp.coo_matrix((np.ones(n_a, dtype=np.int8), (np.arange(n_a), a_idx)), shape=(n_a, n_b))

    graph = HeteroGraph(
        {LEARNER: n_learners, "course": n_courses, "teacher": n_teachers, KC: n_kcs},
        {
            (LEARNER, "course"): incidence(learner_course, n_learners, n_courses),
            ("teacher", "course"): incidence(teacher_of, n_courses, n_teachers).T,
            ("course", KC): incidence(kc_course, n_kcs, n_courses).T,
        },
    )
    log = InteractionLog(np.array(rows_l), np.array(rows_k), np.array(stamps, dtype="datetime64[s]"), np.array(test))
    meta = {"cutoff": str(CUTOFF), "embedder": "trigram", "embedding_dim": embedding_dim, "name": f"planted-s{seed}",
            "n_aspects": n_aspects, "n_blocks": n_blocks,
            "truth": {"kc_attr": kc_attr, "learner_pref": learner_pref, "popularity": pop,
                      "match_weight": match_weight, "noise": noise}}
    return Dataset(graph, log, names, meta)


def toy_fixture(seed: int = 0) -> Dataset:
    """5 learners, 8 KCs, 3 courses and 1 teacher; a few interactions each."""
    rng = np.random.default_rng(seed)
    learner_course = sp.coo_matrix(np.array([[1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 1, 1], [0, 0, 1]]))
    course_kc = sp.coo_matrix(np.array([
        [1, 1, 1, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 0, 0, 0],
        [0, 0, 0, 0, 1, 1, 1, 1],
    ]))
    teacher_course = sp.coo_matrix(np.array([[1, 0, 1]]))
    graph = HeteroGraph({LEARNER: 5, "course": 3, "teacher": 1, KC: 8},
                        {(LEARNER, "course"): learner_course, ("course", KC): course_kc,
                         ("teacher", "course"): teacher_course})
    words = ["database", "algebra", "graph", "neural", "sorting", "calculus", "logic", "network"]
    rows = []
    t0 = np.datetime64("2018-01-01T00:00:00")
    for l in range(5):
        for j, k in enumerate(rng.choice(8, size=3, replace=False)):
            rows.append((l, int(k), t0 + np.timedelta64(int(j * 86400 + l), "s")))
    log = InteractionLog(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                         np.array([r[2] for r in rows], dtype="datetime64[s]"))
    return Dataset(graph, log, words, {"embedder": "trigram", "embedding_dim": 10, "name": "toy"})


def write_dataset(ds: Dataset, out_dir: str | Path, name: str = "dataset") -> Path:
    """Write relation/interaction TSVs and a descriptor that ``load_dataset`` reads back."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = ds.graph
    lines = [f"name = {name}", "entity_types = " + ", ".join(g.node_types)]
    lines += [f"nodes.{t} = {g.num_nodes(t)}" for t in g.node_types]
    for a, b in g.relation_keys:
        fname = f"{a}_{b}.tsv"
        coo = g.relation(a, b).tocoo()
        order = np.lexsort((coo.col, coo.row))
        (out / fname).write_text("".join(f"{coo.row[i]}\t{coo.col[i]}\n" for i in order), encoding="utf-8")
        lines.append(f"relation.{a}.{b} = {fname}")
    (out / "kc_names.tsv").write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(ds.kc_names)), encoding="utf-8")
    log = ds.interactions
    (out / "interactions.tsv").write_text(
        "".join(f"{l}\t{k}\t{str(t)}\n" for l, k, t in zip(log.learner, log.kc, log.timestamp)), encoding="utf-8")
    cutoff = ds.meta.get("cutoff", str(CUTOFF))
    lines += ["kc_names = kc_names.tsv", "interactions = interactions.tsv", f"cutoff = {cutoff}",
              f"embedder = {ds.meta.get('embedder', 'trigram')}", f"embedding_dim = {ds.meta.get('embedding_dim', 10)}"]
    desc = out / f"{name}.desc"
    desc.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return desc
