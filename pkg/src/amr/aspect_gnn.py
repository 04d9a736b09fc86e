"""Edge-featured aggregation over learner-learner and KC-KC subgraphs."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .aspect_encoder import uniform_
from .errors import ContractViolation

VARIANTS = ("gcn", "gat", "sage")


@dataclass
class HomoSubgraph:
    """Same-type nodes joined by pooled path features.

    ``edges`` lists each undirected pair once as an (E, 2) long tensor;
    ``edge_features`` is (E, A*h) and ``node_features`` is (n, A, h).
    """

    num_nodes: int
    edges: torch.Tensor
    edge_features: torch.Tensor
    node_features: torch.Tensor

    def __post_init__(self):
        self.edges = torch.as_tensor(self.edges, dtype=torch.long).reshape(-1, 2)
        A, h = self.node_features.shape[1:]
        if self.edge_features.shape != (self.edges.shape[0], A * h):
            raise ValueError(f"edge features {tuple(self.edge_features.shape)} do not match {len(self.edges)} edges of width {A * h}")

    def directed(self):
        """Both directions of every edge: (src, dst, features)."""
        a, b = self.edges[:, 0], self.edges[:, 1]
        return torch.cat([a, b]), torch.cat([b, a]), torch.cat([self.edge_features, self.edge_features])


def _degree(dst: torch.Tensor, n: int, dtype) -> torch.Tensor:
    return torch.zeros(n, dtype=dtype).index_add_(0, dst, torch.ones(len(dst), dtype=dtype))


def gcn_layer(H, src, dst, P, W):
    n = H.shape[0]
    agg = H.index_add(0, dst, H[src] * P)
    agg = agg / (_degree(dst, n, H.dtype) + 1.0)[:, None]
    return F.relu(agg @ W.T)


def gat_layer(H, src, dst, P, W, a_self, a_nbr, slope: float = 0.2):
    """Attention over a node's gated neighbours; isolated nodes keep their own transform."""
    n = H.shape[0]
    z_self = H @ W.T
    if len(dst) == 0:
        return F.relu(z_self)
    z_msg = (H[src] * P) @ W.T
    logit = F.leaky_relu((z_self @ a_self)[dst] + z_msg @ a_nbr, slope)
    top = torch.full((n,), float("-inf"), dtype=H.dtype).scatter_reduce(0, dst, logit.detach(), reduce="amax")
    w = torch.exp(logit - top[dst])
    denom = torch.zeros(n, dtype=H.dtype).index_add(0, dst, w)
    out = torch.zeros_like(z_self).index_add(0, dst, w[:, None] * z_msg)
    has_nbr = denom > 0
    out = torch.where(has_nbr[:, None], out / torch.where(has_nbr, denom, 1.0)[:, None], z_self)
    return F.relu(out)


def sage_layer(H, src, dst, P, W):
    n = H.shape[0]
    deg = _degree(dst, n, H.dtype)
    mean = torch.zeros_like(H).index_add(0, dst, H[src] * P) / deg.clamp(min=1.0)[:, None]
    return F.relu(torch.cat([H, mean], dim=1) @ W.T)


class AspectGNN(nn.Module):
    def __init__(self, width: int, layers: int = 2, variant: str = "gcn"):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"gnn_variant must be one of {VARIANTS}, got {variant!r}")
        if layers < 1:
            raise ContractViolation("at least one GNN layer is required")
        self.variant = variant
        self.width = width
        fan = 2 * width if variant == "sage" else width
        self.weights = nn.ParameterList([nn.Parameter(torch.empty(width, fan)) for _ in range(layers)])
        if variant == "gat":
            self.att_self = nn.ParameterList([nn.Parameter(torch.empty(width)) for _ in range(layers)])
            self.att_nbr = nn.ParameterList([nn.Parameter(torch.empty(width)) for _ in range(layers)])

    def reset_parameters(self, gen: torch.Generator):
        for i, W in enumerate(self.weights):
            uniform_(W, W.shape[1], gen)
            if self.variant == "gat":
                uniform_(self.att_self[i], self.width, gen)
                uniform_(self.att_nbr[i], self.width, gen)

    def forward(self, sub: HomoSubgraph) -> torch.Tensor:
        att = list(zip(self.att_self, self.att_nbr)) if self.variant == "gat" else None
        return propagate(self.variant, sub, list(self.weights), att)


def propagate(variant: str, sub: HomoSubgraph, weights, att=None) -> torch.Tensor:
    n, A, h = sub.node_features.shape
    H = sub.node_features.reshape(n, A * h)
    src, dst, P = sub.directed()
    for i, W in enumerate(weights):
        if variant == "gcn":
            H = gcn_layer(H, src, dst, P, W)
        elif variant == "gat":
            H = gat_layer(H, src, dst, P, W, att[i][0], att[i][1])
        else:
            H = sage_layer(H, src, dst, P, W)
    return H.reshape(n, A, h)


def gcn_forward(sub: HomoSubgraph, weights) -> torch.Tensor:
    """Mean aggregation over neighbours and self with multiplicative edge gates."""
    return propagate("gcn", sub, weights)


def gat_forward(sub: HomoSubgraph, weights, att) -> torch.Tensor:
    """``att`` holds one (self, neighbour) attention-vector pair per layer."""
    return propagate("gat", sub, weights, att)


def sage_forward(sub: HomoSubgraph, weights) -> torch.Tensor:
    return propagate("sage", sub, weights)
