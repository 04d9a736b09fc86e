"""Training loop, negative sampling, checkpoints and the finite-difference gradient check."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import KC, LEARNER
from .aspect_gnn import VARIANTS
from .errors import ContractViolation
from .hingraph import Dataset, dataset_features, stack_features
from .metrics import build_groups, observed_sets, report, score_groups
from .model import AMRModel, GraphInputs, MFModel, Scorer, prepare_inputs, total_loss
from .pathgen import PathSet, biwalk

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    d: int = 10
    n_aspects: int = 5
    h: int = 10
    m: int = 10
    max_len: int = 5
    p: int = 10
    gnn_layers: int = 2
    gnn_variant: str = "gcn"
    learning_rate: float = 1e-2
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    neg_per_pos: int = 1
    batch_size: int = 256
    val_fraction: float = 0.1
    model: str = "amr"
    triplet_hinge: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("d", "n_aspects", "h", "m", "max_len", "p", "gnn_layers", "neg_per_pos", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.patience < 1 or not self.learning_rate > 0:
            raise ValueError("epochs must be >= 0, patience >= 1 and learning_rate > 0")
        if self.gnn_variant not in VARIANTS:
            raise ValueError(f"gnn_variant must be one of {VARIANTS}")
        if self.model not in ("amr", "mf"):
            raise ValueError("model must be 'amr' or 'mf'")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")
        if self.max_len < 3:
            raise ValueError("max_len must be at least 3")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


def _coerce(kind, raw: str):
    if kind is bool or kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw.strip()


def read_config(path: str | Path) -> tuple[TrainConfig, dict[str, str]]:
    """Key-value config: TrainConfig fields plus any extra keys (returned separately)."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    kw, extra = {}, {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in known:
            kw[key] = _coerce(known[key], value)
        else:
            extra[key] = value
    return TrainConfig(**kw), extra


def write_config(path: str | Path, cfg: TrainConfig, extra: dict | None = None) -> None:
    lines = [f"{k} = {v}" for k, v in asdict(cfg).items()]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    hr5: float
    ndcg5: float
    wall: float
    batch_losses: list[float] = field(default_factory=list, repr=False)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.records)

    @property
    def best(self) -> EpochRecord | None:
        return None if self.best_epoch is None else self.records[self.best_epoch - 1]

    def to_csv(self, path: str | Path, config_hash: str = "", with_time: bool = False) -> None:
        head = "epoch,loss,HR@5,nDCG@5" + (",wall" if with_time else "")
        lines = [f"# config_hash={config_hash} best_epoch={self.best_epoch}", head]
        for r in self.records:
            row = f"{r.epoch},{r.loss!r},{r.hr5!r},{r.ndcg5!r}"
            lines.append(row + (f",{r.wall:.3f}" if with_time else ""))
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: TrainHistory
    inputs: GraphInputs
    config: TrainConfig
    fit: object
    val: object
    initial_state: dict = None

    def scorer(self) -> Scorer:
        return Scorer(self.model, self.inputs)


def sample_negatives(learner: int, kc_pool, observed, n: int, rng: np.random.Generator) -> list:
    """``n`` distinct uniform draws from ``kc_pool`` minus ``observed``."""
    obs = set(observed)
    cands = sorted(k for k in set(kc_pool) if k not in obs)
    if len(cands) < n:
        raise ContractViolation(f"learner {learner} has only {len(cands)} unobserved KCs, needs {n}")
    return [cands[i] for i in rng.choice(len(cands), size=n, replace=False).tolist()]


def training_triples(fit_learner: np.ndarray, fit_kc: np.ndarray, observed: dict[int, set], n_kcs: int,
                     neg_per_pos: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised rejection sampling of uniform unobserved negatives, one row per (pos, neg)."""
    l = np.repeat(fit_learner, neg_per_pos)
    p = np.repeat(fit_kc, neg_per_pos)
    n = rng.integers(0, n_kcs, size=len(l))
    bad = np.array([k in observed[a] for a, k in zip(l.tolist(), n.tolist())], dtype=bool)
    while bad.any():
        idx = np.flatnonzero(bad)
        n[idx] = rng.integers(0, n_kcs, size=len(idx))
        bad[idx] = [n[i] in observed[l[i]] for i in idx.tolist()]
    return np.column_stack([l, p, n])


def build_model(cfg: TrainConfig, n_learners: int, n_kcs: int):
    if cfg.model == "mf":
        model = MFModel(n_learners, n_kcs, cfg.n_aspects, cfg.h)
    else:
        model = AMRModel(n_kcs, cfg.d, cfg.n_aspects, cfg.h, cfg.m, cfg.gnn_layers, cfg.gnn_variant)
    return model.to(DTYPES[cfg.dtype]).reset_parameters(cfg.seed)


def prepare(cfg: TrainConfig, ds: Dataset, pathsets: tuple[PathSet, PathSet] | None = None):
    """Split interactions, derive features from the fitting split, build model inputs."""
    fit, val = ds.interactions.split_validation(cfg.val_fraction)
    feats = dataset_features(ds, fit)
    X = stack_features(ds.graph, feats)
    if X.shape[1] != cfg.d:
        raise ValueError(f"features are {X.shape[1]}-dimensional but config d = {cfg.d}")
    if pathsets is None:
        pathsets = (biwalk(ds.graph, LEARNER, cfg.max_len, cfg.p), biwalk(ds.graph, KC, cfg.max_len, cfg.p))
    inp = prepare_inputs(ds.graph, X, pathsets[0], pathsets[1], DTYPES[cfg.dtype])
    return fit, val, inp


def train(cfg: TrainConfig, ds: Dataset, pathsets: tuple[PathSet, PathSet] | None = None,
          prepared=None) -> TrainResult:
    """Adam on BPR + triplet loss with early stopping on validation nDCG@5.

    Returns the parameters of the best validation epoch (the initial ones
    when no epoch runs).
    """
    torch.manual_seed(cfg.seed)
    fit, val, inp = prepared if prepared is not None else prepare(cfg, ds, pathsets)
    n_kcs = inp.n_kcs
    model = build_model(cfg, inp.n_learners, n_kcs)
    initial = copy.deepcopy(model.state_dict())
    history = TrainHistory()
    if cfg.epochs == 0:
        return TrainResult(model, history, inp, cfg, fit, val, initial)

    rng = np.random.default_rng(cfg.seed)
    fit_obs = observed_sets(fit)
    val_groups, _ = build_groups(val.pairs(), n_kcs, observed_sets(fit, val), seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    best_ndcg, best_state, stale = -1.0, copy.deepcopy(model.state_dict()), 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        triples = training_triples(fit.learner, fit.kc, fit_obs, n_kcs, cfg.neg_per_pos, rng)
        triples = torch.as_tensor(triples[rng.permutation(len(triples))], dtype=torch.long)
        total, count, batch_losses = 0.0, 0, []
        for b, start in enumerate(range(0, len(triples), cfg.batch_size)):
            batch = triples[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = total_loss(model, inp, batch, hinge=cfg.triplet_hinge)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
            total += batch_losses[-1] * len(batch)
            count += len(batch)
        model.eval()
        if val_groups:
            rep = report(score_groups(Scorer(model, inp), val_groups), ks=(5,))
            hr5, ndcg5 = rep.hr[5], rep.ndcg[5]
        else:
            hr5 = ndcg5 = float("nan")
        history.records.append(EpochRecord(epoch, total / count, hr5, ndcg5, time.perf_counter() - t0, batch_losses))
        logger.info("epoch %d loss %.4f HR@5 %.4f nDCG@5 %.4f", epoch, total / count, hr5, ndcg5)
        if ndcg5 > best_ndcg or history.best_epoch is None:
            best_ndcg, best_state, stale = ndcg5, copy.deepcopy(model.state_dict()), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, history, inp, cfg, fit, val, initial)


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(path: str | Path, result: TrainResult, data: dict | None = None) -> None:
    torch.save({"config": asdict(result.config), "config_hash": result.config.hash(),
                "state_dict": result.model.state_dict(), "data": data or {},
                "best_epoch": result.history.best_epoch}, Path(path))


def load_checkpoint(path: str | Path) -> dict:
    ck = torch.load(Path(path), weights_only=False)
    ck["config"] = TrainConfig(**ck["config"])
    return ck


# -- gradient check -------------------------------------------------------
def _loss_fn(model, inp, triples, hinge):
    return lambda: total_loss(model, inp, triples, hinge=hinge)


def numeric_grad(loss, param: torch.Tensor, eps: float) -> torch.Tensor:
    g = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), g.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(loss())
            flat[i] = orig - eps
            down = float(loss())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return g


def grad_check(cfg: TrainConfig, ds: Dataset, eps: float = 1e-5, n_triples: int = 8,
               floor: float = 1e-12, point_scale: float | None = 2.0) -> dict[str, float]:
    """Relative error ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` per parameter tensor (2-norms).

    Runs in float64. With ``point_scale`` set, every parameter is redrawn from
    U(-point_scale, point_scale) so the check happens at a generic point: at the
    small-scale initialisation the co-attention gradients sit near 1e-10, below
    what central differences resolve at ``eps``. Tensors whose analytic and
    numeric gradients both stay below ``floor`` in norm (exactly inert
    parameters) report 0.
    """
    cfg = cfg.replace(dtype="float64")
    fit, val, inp = prepare(cfg.replace(val_fraction=0.0), ds)
    model = build_model(cfg, inp.n_learners, inp.n_kcs)
    if point_scale is not None:
        gen = torch.Generator().manual_seed(cfg.seed)
        with torch.no_grad():
            for param in model.parameters():
                param.uniform_(-point_scale, point_scale, generator=gen)
    rng = np.random.default_rng(cfg.seed)
    triples = torch.as_tensor(
        training_triples(fit.learner, fit.kc, observed_sets(fit), inp.n_kcs, 1, rng)[:n_triples], dtype=torch.long)
    loss = _loss_fn(model, inp, triples, cfg.triplet_hinge)
    model.zero_grad()
    loss().backward()
    out = {}
    for name, param in model.named_parameters():
        auto = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
        num = numeric_grad(loss, param, eps)
        scale = max(float(auto.norm()), float(num.norm()))
        out[name] = 0.0 if scale < floor else float((auto - num).norm()) / scale
    return out
