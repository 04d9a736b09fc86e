"""Co-attention estimate of per-aspect importance for a learner-KC pair."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .aspect_encoder import uniform_


class AspectLevel(NamedTuple):
    e: torch.Tensor     # (..., A, m)
    beta: torch.Tensor  # (..., A)


def affinity(h_l: torch.Tensor, h_k: torch.Tensor, W_s: torch.Tensor) -> torch.Tensor:
    """``S[a, b] = ReLU(h_l[a] W_s h_k[b])`` for leading batch dims."""
    if h_l.shape[-1] != W_s.shape[0] or h_k.shape[-1] != W_s.shape[1]:
        raise ValueError(f"shapes {tuple(h_l.shape)}, {tuple(W_s.shape)}, {tuple(h_k.shape)} do not conform")
    return F.relu(h_l @ W_s @ h_k.transpose(-1, -2))


def coattend(h_l, h_k, S, W_5, W_6, v_1, v_2) -> tuple[AspectLevel, AspectLevel]:
    """Aspect importance for both sides of a pair.

    The learner branch mixes KC aspects through ``S^T``, the KC branch
    through ``S``; exchanging the roles of learner and KC (with their
    parameters) exchanges the outputs.
    """
    if h_l.shape[-1] != W_5.shape[0] or h_k.shape[-1] != W_6.shape[0]:
        raise ValueError("aspect representations do not match W_5 / W_6")
    l_proj = h_l @ W_5
    k_proj = h_k @ W_6
    ht_l = F.relu(l_proj + S.transpose(-1, -2) @ k_proj)
    ht_k = F.relu(k_proj + S @ l_proj)
    beta_l = torch.softmax(ht_l @ v_1.reshape(-1), dim=-1)
    beta_k = torch.softmax(ht_k @ v_2.reshape(-1), dim=-1)
    return AspectLevel(ht_l * beta_l[..., None], beta_l), AspectLevel(ht_k * beta_k[..., None], beta_k)


class CoAttention(nn.Module):
    def __init__(self, h: int, m: int):
        super().__init__()
        self.W_s = nn.Parameter(torch.empty(h, h))
        self.W_5 = nn.Parameter(torch.empty(h, m))
        self.W_6 = nn.Parameter(torch.empty(h, m))
        self.v_1 = nn.Parameter(torch.empty(m))
        self.v_2 = nn.Parameter(torch.empty(m))

    def reset_parameters(self, gen: torch.Generator):
        h, m = self.W_5.shape
        for p in (self.W_s, self.W_5, self.W_6):
            uniform_(p, h, gen)
        for p in (self.v_1, self.v_2):
            uniform_(p, m, gen)

    def forward(self, h_l, h_k):
        S = affinity(h_l, h_k, self.W_s)
        return coattend(h_l, h_k, S, self.W_5, self.W_6, self.v_1, self.v_2)
