"""Heterogeneous graph model, dataset ingestion and entity features."""

from __future__ import annotations

import hashlib
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from . import KC, LEARNER
from .errors import ReferentialError, SchemaError

logger = logging.getLogger(__name__)

KNOWN_TYPES = ("learner", "video", "course", "teacher", "kc", "lecture")
DEFAULT_DIM = 10
# Temporal split of the MOOCCube release; PEEK descriptors carry their own.
MOOCCUBE_TRAIN_START = "2017-01-01"
MOOCCUBE_CUTOFF = "2019-11-01"
MOOCCUBE_TEST_END = "2019-12-31T23:59:59"


class HeteroGraph:
    """Typed node registry with binary relation matrices.

    Each relation is stored once under the key it was declared with; the
    reverse direction is served as the transpose, so ``relation(a, b)`` and
    ``relation(b, a).T`` always agree.
    """

    def __init__(self, num_nodes: dict[str, int], relations: dict[tuple[str, str], sp.spmatrix]):
        self._num_nodes = dict(num_nodes)
        self._relations: dict[tuple[str, str], sp.csr_matrix] = {}
        for (a, b), mat in relations.items():
            if a not in self._num_nodes or b not in self._num_nodes:
                raise SchemaError(f"relation {a}-{b} uses an undeclared entity type")
            if a == b:
                raise SchemaError(f"same-type relation {a}-{b} is not supported")
            if (b, a) in self._relations:
                raise SchemaError(f"relation {a}-{b} declared twice")
            mat = sp.csr_matrix(mat, dtype=np.int8)
            if mat.shape != (self._num_nodes[a], self._num_nodes[b]):
                raise SchemaError(
                    f"relation {a}-{b} has shape {mat.shape}, expected "
                    f"{(self._num_nodes[a], self._num_nodes[b])}"
                )
            mat.sum_duplicates()
            mat.eliminate_zeros()
            mat.data[:] = 1
            mat.sort_indices()
            mat.data.setflags(write=False)
            self._relations[(a, b)] = mat
        self.node_types = tuple(sorted(self._num_nodes))
        offsets, start = {}, 0
        for t in self.node_types:
            offsets[t] = start
            start += self._num_nodes[t]
        self._offsets = offsets
        self.total_nodes = start
        self._adjacency: sp.csr_matrix | None = None
        self._type_of: np.ndarray | None = None

    def num_nodes(self, node_type: str) -> int:
        return self._num_nodes[node_type]

    @property
    def relation_keys(self) -> list[tuple[str, str]]:
        return list(self._relations)

    def has_relation(self, a: str, b: str) -> bool:
        return (a, b) in self._relations or (b, a) in self._relations

    def relation(self, a: str, b: str) -> sp.csr_matrix:
        if (a, b) in self._relations:
            return self._relations[(a, b)]
        if (b, a) in self._relations:
            return self._relations[(b, a)].T.tocsr()
        if a in self._num_nodes and b in self._num_nodes:
            return sp.csr_matrix((self._num_nodes[a], self._num_nodes[b]), dtype=np.int8)
        raise SchemaError(f"unknown entity type in relation {a}-{b}")

    def num_edges(self, a: str, b: str) -> int:
        return int(self.relation(a, b).nnz)

    def neighbor_types(self, t: str) -> list[str]:
        out = [b for (a, b) in self._relations if a == t] + [a for (a, b) in self._relations if b == t]
        return sorted(set(out))

    # -- global index space -------------------------------------------------
    def offset(self, node_type: str) -> int:
        return self._offsets[node_type]

    def global_id(self, node_type: str, node_id: int) -> int:
        return self._offsets[node_type] + int(node_id)

    def local(self, gid: int) -> tuple[str, int]:
        t = self.node_types[int(self.type_index[gid])]
        return t, int(gid) - self._offsets[t]

    @property
    def type_index(self) -> np.ndarray:
        """Index into ``node_types`` for every global node id."""
        if self._type_of is None:
            self._type_of = np.concatenate(
                [np.full(self._num_nodes[t], i, dtype=np.int32) for i, t in enumerate(self.node_types)]
            ) if self.total_nodes else np.zeros(0, dtype=np.int32)
        return self._type_of

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric boolean adjacency over all nodes in global index order."""
        if self._adjacency is None:
            n = self.total_nodes
            rows, cols = [], []
            for (a, b), mat in self._relations.items():
                coo = mat.tocoo()
                rows.append(coo.row + self._offsets[a])
                cols.append(coo.col + self._offsets[b])
            r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
            c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
            adj = sp.coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n)).tocsr()
            adj = ((adj + adj.T) > 0).astype(np.int8).tocsr()
            adj.sort_indices()
            self._adjacency = adj
        return self._adjacency

    def __repr__(self) -> str:
        counts = ", ".join(f"{t}={self._num_nodes[t]}" for t in self.node_types)
        rels = ", ".join(f"{a}-{b}:{m.nnz}" for (a, b), m in self._relations.items())
        return f"HeteroGraph({counts}; {rels})"


@dataclass
class FeatureMatrix:
    entity_type: str
    X: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.all(np.isfinite(self.X)):
            raise ValueError(f"non-finite features for {self.entity_type}")

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass
class InteractionLog:
    """Learner-KC interaction records sorted by timestamp."""

    learner: np.ndarray
    kc: np.ndarray
    timestamp: np.ndarray  # datetime64[s]
    is_test: np.ndarray = field(default=None)

    def __post_init__(self):
        self.learner = np.asarray(self.learner, dtype=np.int64)
        self.kc = np.asarray(self.kc, dtype=np.int64)
        self.timestamp = np.asarray(self.timestamp, dtype="datetime64[s]")
        if self.is_test is None:
            self.is_test = np.zeros(len(self.learner), dtype=bool)
        self.is_test = np.asarray(self.is_test, dtype=bool)
        order = np.lexsort((self.kc, self.learner, self.timestamp))
        for name in ("learner", "kc", "timestamp", "is_test"):
            setattr(self, name, getattr(self, name)[order])

    def __len__(self) -> int:
        return len(self.learner)

    def subset(self, mask: np.ndarray) -> "InteractionLog":
        return InteractionLog(self.learner[mask], self.kc[mask], self.timestamp[mask], self.is_test[mask])

    def train(self) -> "InteractionLog":
        return self.subset(~self.is_test)

    def test(self) -> "InteractionLog":
        return self.subset(self.is_test)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.learner.tolist(), self.kc.tolist()))

    def split_validation(self, fraction: float = 0.1) -> tuple["InteractionLog", "InteractionLog"]:
        """Hold out the latest ``fraction`` of each learner's training records.

        Learners with a single record keep it for training.
        """
        train = self.train()
        val_mask = np.zeros(len(train), dtype=bool)
        for lid in np.unique(train.learner):
            idx = np.flatnonzero(train.learner == lid)  # already time-sorted
            if len(idx) < 2:
                continue
            n_val = max(1, int(round(fraction * len(idx))))
            val_mask[idx[-n_val:]] = True
        return train.subset(~val_mask), train.subset(val_mask)

    def matrix(self, n_learners: int, n_kcs: int) -> sp.csr_matrix:
        m = sp.coo_matrix(
            (np.ones(len(self), dtype=np.int8), (self.learner, self.kc)), shape=(n_learners, n_kcs)
        ).tocsr()
        m.data[:] = 1
        return m


@dataclass
class Dataset:
    graph: HeteroGraph
    interactions: InteractionLog
    kc_names: list[str]
    meta: dict = field(default_factory=dict)


# -- embedding providers ----------------------------------------------------
class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def trigrams(word: str) -> list[str]:
    """Character trigrams of one lowercased word with ``<``/``>`` boundaries."""
    w = f"<{word.lower()}>"
    return [w[i:i + 3] for i in range(len(w) - 2)]


class HashedTrigramEmbedder:
    """Deterministic subword embedder.

    Each trigram maps to a normal vector with variance ``1/dim`` per entry,
    drawn from a generator seeded by a BLAKE2b digest of ``"{seed}:{trigram}"``.
    A word is the sum of its trigram vectors; a multi-word name is the mean
    of its word vectors.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def basis(self, gram: str) -> np.ndarray:
        v = self._cache.get(gram)
        if v is None:
            digest = hashlib.blake2b(f"{self.seed}:{gram}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            v = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[gram] = v
        return v

    def word(self, word: str) -> np.ndarray:
        out = np.zeros(self.dim)
        for g in trigrams(word):
            out += self.basis(g)
        return out

    def embed(self, text: str) -> np.ndarray:
        words = text.lower().split()
        if not words:
            return np.zeros(self.dim)
        return np.mean([self.word(w) for w in words], axis=0)


def make_embedder(name: str, dim: int = DEFAULT_DIM, seed: int = 0) -> Embedder:
    if name in ("trigram", "hashed-trigram"):
        return HashedTrigramEmbedder(dim, seed)
    raise SchemaError(f"unknown embedding provider {name!r}")


def kc_content_features(kc_names: Sequence[str], embedder: Embedder) -> FeatureMatrix:
    if len(kc_names) == 0:
        raise ValueError("kc_content_features needs at least one name")
    X = np.zeros((len(kc_names), embedder.dim))
    for i, name in enumerate(kc_names):
        name = (name or "").strip().lower()
        if not name:
            warnings.warn(f"empty KC name at row {i}; using a zero feature vector", stacklevel=2)
            continue
        X[i] = embedder.embed(name)
    return FeatureMatrix(KC, X)


def project_entity_features(R_AK, X_K, entity_type: str = "entity") -> FeatureMatrix:
    """Degree-normalised projection of KC features onto entity ``A``.

    Rows of ``R_AK`` with no KC neighbours produce zero features.
    """
    X_K = X_K.X if isinstance(X_K, FeatureMatrix) else np.asarray(X_K, dtype=float)
    R = sp.csr_matrix(R_AK, dtype=float)
    if R.shape[1] != X_K.shape[0]:
        raise ValueError(f"R_AK has {R.shape[1]} columns but X_K has {X_K.shape[0]} rows")
    deg = np.asarray(R.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    X_A = sp.diags(inv) @ R @ X_K
    return FeatureMatrix(entity_type, np.asarray(X_A))


def entity_kc_incidence(graph: HeteroGraph, learner_kc: sp.spmatrix | None = None) -> dict[str, sp.csr_matrix]:
    """Boolean reachability from each entity to KCs through the type graph.

    Types adjacent to KCs use their relation directly; farther types take the
    union over their neighbour types one level closer. A supplied learner-KC
    matrix (training interactions) replaces the graph-derived learner rows.
    """
    inc: dict[str, sp.csr_matrix] = {KC: sp.identity(graph.num_nodes(KC), dtype=np.int8, format="csr")}
    depth = {KC: 0}
    queue = deque([KC])
    while queue:
        t = queue.popleft()
        for nb in graph.neighbor_types(t):
            if nb not in depth:
                depth[nb] = depth[t] + 1
                queue.append(nb)
    for t in sorted((t for t in depth if t != KC), key=lambda s: (depth[s], s)):
        acc = None
        for nb in graph.neighbor_types(t):
            if depth.get(nb, -1) == depth[t] - 1:
                part = graph.relation(t, nb).astype(np.int32) @ inc[nb].astype(np.int32)
                acc = part if acc is None else acc + part
        inc[t] = (acc > 0).astype(np.int8).tocsr()
    for t in graph.node_types:
        if t not in inc:
            inc[t] = sp.csr_matrix((graph.num_nodes(t), graph.num_nodes(KC)), dtype=np.int8)
    if learner_kc is not None and LEARNER in graph.node_types:
        inc[LEARNER] = (sp.csr_matrix(learner_kc) > 0).astype(np.int8).tocsr()
    return inc


def derive_entity_features(graph: HeteroGraph, X_K: FeatureMatrix,
                           learner_kc: sp.spmatrix | None = None) -> dict[str, FeatureMatrix]:
    inc = entity_kc_incidence(graph, learner_kc)
    feats = {KC: X_K}
    for t in graph.node_types:
        if t != KC:
            feats[t] = project_entity_features(inc[t], X_K, t)
    return feats


def stack_features(graph: HeteroGraph, feats: dict[str, FeatureMatrix]) -> np.ndarray:
    """All node features in global index order."""
    return np.concatenate([feats[t].X for t in graph.node_types], axis=0)


# -- descriptor ingestion -----------------------------------------------------
def parse_descriptor(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.replace(tzinfo=None) - dt.utcoffset()
    return np.datetime64(dt, "s")


def _read_rows(path: Path, ncols: int):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < ncols:
                raise SchemaError(f"{path}:{lineno}: expected {ncols} tab-separated columns: {line!r}")
            rows.append((lineno, parts[:ncols], line))
    return rows


def _parse_id(value: str, where: str, line: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ReferentialError(f"{where}: non-integer id {value!r} in row {line!r}") from None


def load_dataset(descriptor: str | Path) -> Dataset:
    descriptor = Path(descriptor)
    base = descriptor.parent
    fields = parse_descriptor(descriptor)
    if "entity_types" not in fields:
        raise SchemaError(f"{descriptor}: missing entity_types")
    types = [t.strip().lower() for t in fields["entity_types"].split(",") if t.strip()]
    for t in types:
        if t not in KNOWN_TYPES:
            raise SchemaError(f"{descriptor}: unknown entity type {t!r}")
    declared = {t: int(fields[f"nodes.{t}"]) for t in types if f"nodes.{t}" in fields}

    raw_relations = {}
    for key, value in fields.items():
        if not key.startswith("relation."):
            continue
        parts = key.split(".")
        if len(parts) != 3:
            raise SchemaError(f"{descriptor}: malformed relation key {key!r}")
        a, b = parts[1].lower(), parts[2].lower()
        for t in (a, b):
            if t not in types:
                raise SchemaError(f"{descriptor}: relation {key!r} uses unknown entity type {t!r}")
        fpath = base / value
        rows = []
        for lineno, (h, t_), line in _read_rows(fpath, 2):
            where = f"{fpath}:{lineno}"
            rows.append((_parse_id(h, where, line), _parse_id(t_, where, line), where, line))
        raw_relations[(a, b)] = rows

    kc_names: list[str] = []
    if "kc_names" in fields:
        name_rows = _read_rows(base / fields["kc_names"], 2)
        by_id = {}
        for lineno, (i, name), line in name_rows:
            by_id[_parse_id(i, f"{fields['kc_names']}:{lineno}", line)] = name
        n = max(by_id) + 1 if by_id else 0
        kc_names = [by_id.get(i, "") for i in range(n)]

    inter_rows = []
    if "interactions" in fields:
        fpath = base / fields["interactions"]
        for lineno, (l, k, ts), line in _read_rows(fpath, 3):
            where = f"{fpath}:{lineno}"
            try:
                stamp = parse_timestamp(ts)
            except ValueError:
                raise SchemaError(f"{where}: bad ISO-8601 timestamp {ts!r}") from None
            inter_rows.append((_parse_id(l, where, line), _parse_id(k, where, line), stamp, where, line))

    # Undeclared counts are inferred from the largest id seen.
    counts = dict(declared)
    for t in types:
        if t in counts:
            continue
        seen = [-1]
        for (a, b), rows in raw_relations.items():
            if a == t:
                seen += [r[0] for r in rows]
            if b == t:
                seen += [r[1] for r in rows]
        if t == LEARNER:
            seen += [r[0] for r in inter_rows]
        if t == KC:
            seen += [r[1] for r in inter_rows] + [len(kc_names) - 1]
        counts[t] = max(seen) + 1

    relations = {}
    for (a, b), rows in raw_relations.items():
        heads, tails = [], []
        for h, t_, where, line in rows:
            if not (0 <= h < counts[a]) or not (0 <= t_ < counts[b]):
                raise ReferentialError(f"{where}: dangling id in {a}-{b} row {line!r}")
            heads.append(h)
            tails.append(t_)
        relations[(a, b)] = sp.coo_matrix(
            (np.ones(len(heads), dtype=np.int8), (np.asarray(heads, dtype=np.int64), np.asarray(tails, dtype=np.int64))),
            shape=(counts[a], counts[b]),
        )
    graph = HeteroGraph(counts, relations)

    for l, k, _, where, line in inter_rows:
        if not (0 <= l < counts.get(LEARNER, 0)) or not (0 <= k < counts.get(KC, 0)):
            raise ReferentialError(f"{where}: dangling id in interaction row {line!r}")
    cutoff = parse_timestamp(fields.get("cutoff", MOOCCUBE_CUTOFF))
    start = parse_timestamp(fields["train_start"]) if "train_start" in fields else None
    end = parse_timestamp(fields["test_end"]) if "test_end" in fields else None
    keep = [r for r in inter_rows if (start is None or r[2] >= start) and (end is None or r[2] <= end)]
    log = InteractionLog(
        np.array([r[0] for r in keep], dtype=np.int64),
        np.array([r[1] for r in keep], dtype=np.int64),
        np.array([r[2] for r in keep], dtype="datetime64[s]"),
        np.array([r[2] >= cutoff for r in keep], dtype=bool),
    )
    if KC in counts and len(kc_names) < counts[KC]:
        kc_names = kc_names + [""] * (counts[KC] - len(kc_names))
    meta = {
        "cutoff": str(cutoff),
        "embedder": fields.get("embedder", "trigram"),
        "embedding_dim": int(fields.get("embedding_dim", DEFAULT_DIM)),
        "name": fields.get("name", descriptor.stem),
    }
    logger.info("loaded %r with %d interactions", graph, len(log))
    return Dataset(graph, log, kc_names, meta)


# -- graph store ------------------------------------------------------------
def save_dataset(path: str | Path, ds: Dataset) -> None:
    g = ds.graph
    arrays = {"node_types": np.array(g.node_types), "node_counts": np.array([g.num_nodes(t) for t in g.node_types])}
    keys = g.relation_keys
    arrays["relation_keys"] = np.array([f"{a}|{b}" for a, b in keys]) if keys else np.zeros(0, dtype="<U1")
    for i, (a, b) in enumerate(keys):
        m = g.relation(a, b)
        arrays[f"rel{i}_indptr"] = m.indptr
        arrays[f"rel{i}_indices"] = m.indices
    log = ds.interactions
    meta = {k: v for k, v in ds.meta.items() if isinstance(v, (str, int, float))}
    arrays.update(
        int_learner=log.learner, int_kc=log.kc,
        int_ts=log.timestamp.astype(np.int64), int_test=log.is_test,
        kc_names=np.array(ds.kc_names, dtype=str) if ds.kc_names else np.zeros(0, dtype="<U1"),
        meta_keys=np.array(list(meta), dtype=str), meta_values=np.array([str(v) for v in meta.values()], dtype=str),
    )
    np.savez_compressed(Path(path), **arrays)


def load_store(path: str | Path) -> Dataset:
    z = np.load(Path(path), allow_pickle=False)
    counts = {str(t): int(c) for t, c in zip(z["node_types"], z["node_counts"])}
    relations = {}
    for i, key in enumerate(z["relation_keys"]):
        a, b = str(key).split("|")
        indptr, indices = z[f"rel{i}_indptr"], z[f"rel{i}_indices"]
        relations[(a, b)] = sp.csr_matrix(
            (np.ones(len(indices), dtype=np.int8), indices, indptr), shape=(counts[a], counts[b])
        )
    log = InteractionLog(z["int_learner"], z["int_kc"], z["int_ts"].astype("datetime64[s]"), z["int_test"])
    meta = {str(k): str(v) for k, v in zip(z["meta_keys"], z["meta_values"])}
    if "embedding_dim" in meta:
        meta["embedding_dim"] = int(meta["embedding_dim"])
    return Dataset(HeteroGraph(counts, relations), log, [str(s) for s in z["kc_names"]], meta)


def dataset_features(ds: Dataset, train_log: InteractionLog | None = None, seed: int = 0) -> dict[str, FeatureMatrix]:
    """KC content features plus projected features for every other type.

    Learner rows come from ``train_log`` (defaults to the training split) so
    held-out interactions never leak into inputs.
    """
    g = ds.graph
    embedder = make_embedder(ds.meta.get("embedder", "trigram"), int(ds.meta.get("embedding_dim", DEFAULT_DIM)), seed)
    X_K = kc_content_features(ds.kc_names, embedder)
    train_log = ds.interactions.train() if train_log is None else train_log
    lk = train_log.matrix(g.num_nodes(LEARNER), g.num_nodes(KC)) if LEARNER in g.node_types else None
    return derive_entity_features(g, X_K, lk)
