"""Full recommender assembly and the matrix-factorisation ablation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import KC, LEARNER
from .aspect_encoder import AspectProjection, PathEncoder, encode_pairs, pad_sequences, pair_sequences, uniform_
from .aspect_gnn import AspectGNN, HomoSubgraph
from .importance import CoAttention
from .pathgen import PathSet
from .predictor import bpr_loss, score, triplet_loss


@dataclass
class SideInputs:
    offset: int
    n: int
    pairs: torch.Tensor    # (P, 2) local endpoint ids
    idx: torch.Tensor      # (P, T) padded global node ids
    lengths: torch.Tensor  # (P,)


@dataclass
class GraphInputs:
    features: torch.Tensor  # (N, d) in global order
    learner: SideInputs
    kc: SideInputs

    @property
    def n_learners(self) -> int:
        return self.learner.n

    @property
    def n_kcs(self) -> int:
        return self.kc.n


def _side(graph, ps: PathSet | None, node_type: str) -> SideInputs:
    n = graph.num_nodes(node_type)
    if ps is None or len(ps) == 0:
        return SideInputs(graph.offset(node_type), n, torch.zeros((0, 2), dtype=torch.long),
                          torch.zeros((0, 1), dtype=torch.long), torch.zeros(0, dtype=torch.long))
    pairs, seqs = pair_sequences(ps, graph)
    idx, lengths = pad_sequences(seqs)
    return SideInputs(graph.offset(node_type), n, torch.tensor(pairs, dtype=torch.long), idx, lengths)


def prepare_inputs(graph, features: np.ndarray, learner_paths: PathSet | None, kc_paths: PathSet | None,
                   dtype=torch.float32) -> GraphInputs:
    return GraphInputs(torch.as_tensor(features, dtype=dtype), _side(graph, learner_paths, LEARNER),
                       _side(graph, kc_paths, KC))


class AMRModel(nn.Module):
    """Path-encoded, aspect-aware learner and KC representations scored pairwise."""

    def __init__(self, n_kcs: int, d: int = 10, n_aspects: int = 5, h: int = 10, m: int = 10,
                 gnn_layers: int = 2, gnn_variant: str = "gcn"):
        super().__init__()
        self.n_aspects, self.h, self.m = n_aspects, h, m
        width = n_aspects * h
        self.learner_proj = AspectProjection(d, n_aspects, h)
        self.kc_proj = AspectProjection(d, n_aspects, h)
        self.learner_encoder = PathEncoder(width)
        self.kc_encoder = PathEncoder(width)
        self.learner_gnn = AspectGNN(width, gnn_layers, gnn_variant)
        self.kc_gnn = AspectGNN(width, gnn_layers, gnn_variant)
        self.coatt = CoAttention(h, m)
        self.M = nn.Parameter(torch.empty(m, m))
        self.bias = nn.Parameter(torch.zeros(n_kcs))

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for mod in (self.learner_proj, self.kc_proj, self.learner_encoder, self.kc_encoder,
                    self.learner_gnn, self.kc_gnn, self.coatt):
            mod.reset_parameters(gen)
        uniform_(self.M, self.m, gen)
        with torch.no_grad():
            self.bias.zero_()
        return self

    def edge_features(self, inp: GraphInputs, side: str):
        s = getattr(inp, side)
        proj, enc = (self.learner_proj, self.learner_encoder) if side == "learner" else (self.kc_proj, self.kc_encoder)
        if len(s.pairs) == 0:
            return torch.zeros((0, self.n_aspects * self.h), dtype=inp.features.dtype), None
        return encode_pairs(inp.features, s.idx, s.lengths, proj, enc)

    def subgraph(self, inp: GraphInputs, side: str) -> HomoSubgraph:
        s = getattr(inp, side)
        proj = self.learner_proj if side == "learner" else self.kc_proj
        P, _ = self.edge_features(inp, side)
        M0 = proj(inp.features[s.offset:s.offset + s.n])
        return HomoSubgraph(s.n, s.pairs, P, M0)

    def node_representations(self, inp: GraphInputs):
        H_l = self.learner_gnn(self.subgraph(inp, "learner"))
        H_k = self.kc_gnn(self.subgraph(inp, "kc"))
        return H_l, H_k

    def pair_outputs(self, H_l, H_k, learners, kcs) -> dict:
        h_l, h_k = H_l[learners], H_k[kcs]
        side_l, side_k = self.coatt(h_l, h_k)
        return {
            "score": score(h_l, h_k, side_l.e, side_k.e, self.M, self.bias[kcs]),
            "beta_l": side_l.beta, "beta_k": side_k.beta, "h_l": h_l, "h_k": h_k,
        }


class MFModel(nn.Module):
    """Free learner/KC embeddings, score = Frobenius match + KC bias."""

    def __init__(self, n_learners: int, n_kcs: int, n_aspects: int = 5, h: int = 10, **_):
        super().__init__()
        self.n_aspects, self.h = n_aspects, h
        self.U = nn.Parameter(torch.empty(n_learners, n_aspects, h))
        self.V = nn.Parameter(torch.empty(n_kcs, n_aspects, h))
        self.bias = nn.Parameter(torch.zeros(n_kcs))

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        uniform_(self.U, self.n_aspects * self.h, gen)
        uniform_(self.V, self.n_aspects * self.h, gen)
        with torch.no_grad():
            self.bias.zero_()
        return self

    def node_representations(self, inp: GraphInputs):
        return self.U, self.V

    def pair_outputs(self, H_l, H_k, learners, kcs) -> dict:
        h_l, h_k = H_l[learners], H_k[kcs]
        return {"score": (h_l * h_k).sum(dim=(-1, -2)) + self.bias[kcs], "h_l": h_l, "h_k": h_k}


def total_loss(model, inp: GraphInputs, triples: torch.Tensor, hinge: bool = True) -> torch.Tensor:
    """Mean over ``(learner, positive, negative)`` rows of BPR plus triplet terms."""
    triples = torch.as_tensor(triples, dtype=torch.long).reshape(-1, 3)
    if len(triples) == 0:
        from .errors import ContractViolation
        raise ContractViolation("total_loss needs a nonempty batch")
    H_l, H_k = model.node_representations(inp)
    l, p, n = triples[:, 0], triples[:, 1], triples[:, 2]
    pos = model.pair_outputs(H_l, H_k, l, p)
    neg = model.pair_outputs(H_l, H_k, l, n)
    trip = triplet_loss(H_l[l], H_k[p], H_k[n], hinge=hinge)
    return (bpr_loss(pos["score"], neg["score"]) + trip).mean()


class Scorer:
    """Frozen scoring view of a trained model; computes node representations once."""

    def __init__(self, model, inp: GraphInputs, chunk: int = 65536):
        self.model = model
        self.chunk = chunk
        with torch.no_grad():
            self.H_l, self.H_k = model.node_representations(inp)

    def outputs(self, learners, kcs) -> dict:
        learners = torch.as_tensor(np.asarray(learners), dtype=torch.long)
        kcs = torch.as_tensor(np.asarray(kcs), dtype=torch.long)
        parts = []
        with torch.no_grad():
            for i in range(0, len(learners), self.chunk):
                parts.append(self.model.pair_outputs(self.H_l, self.H_k, learners[i:i + self.chunk], kcs[i:i + self.chunk]))
        keys = parts[0].keys() if parts else ()
        return {k: torch.cat([p[k] for p in parts]).numpy() for k in keys}

    def __call__(self, learners, kcs) -> np.ndarray:
        return self.outputs(learners, kcs)["score"].astype(np.float64)
