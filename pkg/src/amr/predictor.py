"""Preference score and the joint BPR + triplet ranking objective."""

from __future__ import annotations

import torch
import torch.nn.functional as F

MARGIN = 1.0


def score(h_l, h_k, e_l, e_k, M, b_k):
    """Frobenius match of aspect representations plus per-aspect bilinear term plus KC bias.

    ``trace(e_l M e_k^T)`` pairs aspect ``a`` of the learner with aspect ``a``
    of the KC. Leading dims broadcast.
    """
    if h_l.shape[-2:] != h_k.shape[-2:] or e_l.shape[-2:] != e_k.shape[-2:]:
        raise ValueError("learner and KC representations differ in shape")
    mf = (h_l * h_k).sum(dim=(-1, -2))
    aspect = ((e_l @ M) * e_k).sum(dim=(-1, -2))
    return mf + aspect + b_k


def bpr_loss(score_pos, score_neg):
    """``-log sigmoid(pos - neg)`` written as a softplus for stability."""
    return F.softplus(-(torch.as_tensor(score_pos) - torch.as_tensor(score_neg)))


def triplet_loss(h_l, h_p, h_n, margin: float = MARGIN, hinge: bool = True):
    """Distance margin on flattened representations; batch dims are all but the last two."""
    flat = lambda t: t.reshape(*t.shape[:-2], -1) if t.dim() >= 2 else t
    d_p = torch.linalg.vector_norm(flat(h_l) - flat(h_p), dim=-1)
    d_n = torch.linalg.vector_norm(flat(h_l) - flat(h_n), dim=-1)
    raw = d_p - d_n + margin
    return F.relu(raw) if hinge else raw
