"""Test-split evaluation, ablation sweeps and the analysis exporters behind ``export-plots``."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.spatial.distance import pdist, squareform

from . import KC, LEARNER
from .aspect_gnn import VARIANTS
from .errors import ContractViolation
from .hingraph import Dataset
from .metrics import METRIC_KEYS, MetricsReport, evaluate, observed_sets
from .pathgen import PathSet, biwalk, path_count_stats
from .trainer import TrainConfig, TrainResult, prepare, train

logger = logging.getLogger(__name__)

AXES = {"aspects": "n_aspects", "path_length": "max_len", "gnn_variant": "gnn_variant"}


def evaluate_result(result: TrainResult, ds: Dataset, seed: int | None = None) -> MetricsReport:
    """HR/nDCG on the test split; negatives avoid every KC the learner ever touched."""
    test = ds.interactions.test()
    if len(test) == 0:
        raise ContractViolation("dataset has no test interactions")
    seed = result.config.seed if seed is None else seed
    return evaluate(result.scorer(), test.pairs(), result.inputs.n_kcs, observed_sets(ds.interactions),
                    seed=seed, config_hash=result.config.hash())


def write_csv(path, rows: Sequence[dict], columns: Sequence[str], config_hash: str = "", note: str = "") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash}{(' ' + note) if note else ''}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _ablation_value(axis: str, raw):
    if axis == "gnn_variant":
        if raw not in VARIANTS:
            raise ValueError(f"gnn_variant must be one of {VARIANTS}, got {raw!r}")
        return str(raw)
    v = int(raw)
    if axis == "aspects" and v < 1:
        raise ValueError("aspect count must be positive")
    if axis == "path_length" and v < 3:
        raise ValueError("path length must be at least 3")
    return v


def run_ablation(axis: str, values: Sequence, base: TrainConfig, ds: Dataset,
                 pathsets: dict[int, tuple[PathSet, PathSet]] | None = None) -> list[dict]:
    """Train and test once per value of ``axis``; every run shares ``base.seed``."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {tuple(AXES)}")
    values = [_ablation_value(axis, v) for v in values]
    cache = dict(pathsets or {})
    rows = []
    for v in values:
        cfg = base.replace(**{AXES[axis]: v})
        if cfg.max_len not in cache:
            cache[cfg.max_len] = (biwalk(ds.graph, LEARNER, cfg.max_len, cfg.p), biwalk(ds.graph, KC, cfg.max_len, cfg.p))
        result = train(cfg, ds, pathsets=cache[cfg.max_len])
        rep = evaluate_result(result, ds)
        logger.info("ablation %s=%s %s", axis, v, rep.to_dict())
        row = {"axis": axis, "value": v, "best_epoch": result.history.best_epoch, "config_hash": cfg.hash()}
        row.update({k: rep.to_dict()[k] for k in METRIC_KEYS})
        rows.append(row)
    return rows


def save_ablation(rows: Sequence[dict], path, base: TrainConfig, plot: bool = True) -> None:
    write_csv(path, rows, ["axis", "value", *METRIC_KEYS, "best_epoch", "config_hash"], base.hash())
    if plot and rows:
        from .plots import plot_ablation
        plot_ablation(rows, rows[0]["axis"], Path(path).with_suffix(".png"))


# -- aspect importance -------------------------------------------------------
def sample_pairs(n_learners: int, n_kcs: int, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.integers(0, n_learners, n), rng.integers(0, n_kcs, n)])


def aspect_importance(result: TrainResult, pairs: np.ndarray) -> dict[str, np.ndarray]:
    """Mean co-attention weight per aspect on the learner and KC side over ``pairs``."""
    pairs = np.asarray(pairs).reshape(-1, 2)
    if len(pairs) == 0:
        raise ContractViolation("need at least one pair")
    out = result.scorer().outputs(pairs[:, 0], pairs[:, 1])
    if "beta_l" not in out:
        raise ContractViolation(f"model '{result.config.model}' has no aspect attention")
    return {LEARNER: out["beta_l"].mean(axis=0), KC: out["beta_k"].mean(axis=0)}


def export_aspect_importance(result: TrainResult, pairs: np.ndarray, path,
                             pathsets: tuple[PathSet, PathSet] | None = None, plot: bool = True) -> dict:
    """CSV of per-aspect mean attention (one row per side) plus path-count companion stats."""
    means = aspect_importance(result, pairs)
    A = len(means[LEARNER])
    rows = [{"side": side, **{f"aspect_{a + 1}": float(m[a]) for a in range(A)}} for side, m in means.items()]
    stats = {"pairs": int(len(pairs))}
    if pathsets is not None:
        stats["mean_paths_learner"] = path_count_stats(pathsets[0])
        stats["mean_paths_kc"] = path_count_stats(pathsets[1])
    note = " ".join(f"{k}={v!r}" for k, v in stats.items())
    write_csv(path, rows, ["side", *[f"aspect_{a + 1}" for a in range(A)]], result.config.hash(), note)
    if plot:
        from .plots import plot_aspect_importance
        plot_aspect_importance(means, Path(path).with_suffix(".png"))
    return {"means": means, **stats}


# -- edge feature heatmap ----------------------------------------------------
def pairs_by_signature(ps: PathSet) -> dict[tuple[str, ...], list[tuple[int, int]]]:
    """Group endpoint pairs by the type signature of their shortest stored path."""
    groups: dict[tuple[str, ...], list[tuple[int, int]]] = {}
    for key in ps.pairs():
        groups.setdefault(ps.paths[key][0].type_signature, []).append(key)
    return groups


def cosine_summary(matrix: np.ndarray) -> dict:
    """Pairwise cosine distances between rows, summarised by mean/min/max/std."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] < 2:
        raise ContractViolation("need at least 2 rows for pairwise distances")
    d = pdist(matrix, "cosine")
    return {"mean": float(d.mean()), "min": float(d.min()), "max": float(d.max()), "std": float(d.std()),
            "matrix": squareform(d)}


def edge_feature_matrix(result: TrainResult, ps: PathSet, side: str = LEARNER,
                        signature: tuple[str, ...] | None = None, max_rows: int = 20):
    """Edge features of pairs sharing one type signature (the most common one by default)."""
    groups = pairs_by_signature(ps)
    if signature is None:
        if not groups:
            raise ContractViolation("path set is empty")
        signature = max(groups, key=lambda s: (len(groups[s]), s))
    keys = groups.get(tuple(signature), [])[:max_rows]
    if len(keys) < 2:
        raise ContractViolation(f"need at least 2 pairs with signature {signature}, found {len(keys)}")
    index = {k: i for i, k in enumerate(ps.pairs())}
    with torch.no_grad():
        P, _ = result.model.edge_features(result.inputs, side)
    P = P.numpy()
    if len(P) != len(index):
        raise ContractViolation("path set does not match the model inputs")
    return keys, P[[index[k] for k in keys]], tuple(signature)


def export_edge_feature_heatmap(result: TrainResult, ps: PathSet, path, side: str = LEARNER,
                                signature=None, max_rows: int = 20, plot: bool = True) -> dict:
    if result.config.model != "amr":
        raise ContractViolation("edge features exist only for the full model")
    keys, M, signature = edge_feature_matrix(result, ps, side, signature, max_rows)
    summary = cosine_summary(M)
    cols = [f"f{j}" for j in range(M.shape[1])]
    rows = [{"a": a, "b": b, **{c: float(x) for c, x in zip(cols, row)}} for (a, b), row in zip(keys, M)]
    note = (f"signature={'-'.join(signature)} cos_mean={summary['mean']!r} cos_min={summary['min']!r} "
            f"cos_max={summary['max']!r} cos_std={summary['std']!r}")
    write_csv(path, rows, ["a", "b", *cols], result.config.hash(), note)
    if plot:
        from .plots import plot_heatmap
        plot_heatmap(M, Path(path).with_suffix(".png"), [f"{a}-{b}" for a, b in keys], "-".join(signature))
    return {"pairs": keys, "matrix": M, "signature": signature, **summary}
