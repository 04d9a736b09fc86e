"""Aspect projection, bi-LSTM path encoding and attention pooling."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import ContractViolation, ReferentialError
from .pathgen import PathSet


def uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(1.0 / fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=t.dtype) * 2 * bound - bound)
    return t


def aspect_project(x: torch.Tensor, W_a: torch.Tensor) -> torch.Tensor:
    """Project ``(..., d)`` features through each of the ``(A, d, h)`` aspect matrices."""
    if x.shape[-1] != W_a.shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} does not match projection dim {W_a.shape[1]}")
    return torch.einsum("...d,adh->...ah", x, W_a)


class AspectProjection(nn.Module):
    def __init__(self, d: int, n_aspects: int, h: int):
        super().__init__()
        self.W = nn.Parameter(torch.empty(n_aspects, d, h))

    def reset_parameters(self, gen: torch.Generator):
        uniform_(self.W, self.W.shape[1], gen)

    def forward(self, x):
        return aspect_project(x, self.W)


class PathEncoder(nn.Module):
    """Bi-LSTM over a position sequence, directions summed, then attention pooling.

    Input and hidden widths are both ``A * h``; ``attn`` holds the ``A*h -> 1``
    pooling weights.
    """

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.lstm = nn.LSTM(width, width, batch_first=True, bidirectional=True)
        self.attn = nn.Linear(width, 1, bias=False)

    def reset_parameters(self, gen: torch.Generator):
        w = self.width
        for name, param in self.lstm.named_parameters():
            if name.startswith("weight"):
                uniform_(param, w, gen)
            else:
                with torch.no_grad():
                    param.zero_()
                    if name.startswith("bias_ih"):
                        param[w:2 * w] = 1.0  # forget gate
        uniform_(self.attn.weight, w, gen)

    def encode(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """``x``: (B, T, width) padded batch -> (B, T, width), zero past each length."""
        if x.shape[0] == 0:
            return x
        if int(lengths.min()) < 1:
            raise ContractViolation("cannot encode an empty position sequence")
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        return out[..., :self.width] + out[..., self.width:]

    def pool(self, P_tilde: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Masked softmax over positions; returns pooled (B, width) and weights (B, T)."""
        logits = self.attn(P_tilde).squeeze(-1)
        mask = torch.arange(P_tilde.shape[1], device=P_tilde.device)[None, :] < lengths[:, None]
        logits = logits.masked_fill(~mask, float("-inf"))
        beta = torch.softmax(logits, dim=1)
        return torch.einsum("bt,btw->bw", beta, P_tilde), beta

    def forward(self, x, lengths):
        return self.pool(self.encode(x, lengths), lengths)


def encode_path(path_node_features: torch.Tensor, encoder: PathEncoder) -> torch.Tensor:
    """Encode one path given as an ``(I, A, h)`` stack; returns ``(I, A*h)``."""
    if path_node_features.shape[0] == 0:
        raise ContractViolation("encode_path needs at least one position")
    seq = path_node_features.reshape(1, path_node_features.shape[0], -1)
    return encoder.encode(seq, torch.tensor([seq.shape[1]]))[0]


def pool_path(P_tilde: torch.Tensor, W_beta: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention pooling of ``(I, A*h)`` positions with a ``(1, A*h)`` or ``(A*h,)`` weight."""
    logits = P_tilde @ W_beta.reshape(-1)
    beta = torch.softmax(logits, dim=0)
    return beta @ P_tilde, beta


def pair_sequences(ps: PathSet, graph) -> tuple[list[tuple[int, int]], list[list[int]]]:
    """Per pair, the global node ids of all its paths concatenated in stored order."""
    pairs, seqs = [], []
    for key in ps.pairs():
        seq = []
        for q in ps.paths[key]:
            seq.extend(graph.global_id(t, i) for t, i in q.nodes)
        pairs.append(key)
        seqs.append(seq)
    return pairs, seqs


def pad_sequences(seqs: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    T = int(lengths.max()) if len(seqs) else 0
    idx = torch.zeros((len(seqs), T), dtype=torch.long)
    for i, s in enumerate(seqs):
        idx[i, :len(s)] = torch.tensor(s, dtype=torch.long)
    return idx, lengths


def encode_pairs(features: torch.Tensor, idx: torch.Tensor, lengths: torch.Tensor,
                 proj: AspectProjection, encoder: PathEncoder) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched edge features: ``features`` (N, d) global, ``idx`` (P, T) padded node ids."""
    x = proj(features[idx])                      # (P, T, A, h)
    x = x.reshape(x.shape[0], x.shape[1], -1)
    return encoder(x, lengths)


def build_edge_features(ps: PathSet, graph, features, proj: AspectProjection,
                        encoder: PathEncoder) -> dict[tuple[int, int], torch.Tensor]:
    """One pooled ``A*h`` feature per endpoint pair in ``ps``.

    ``features`` maps global node id to a d-vector (tensor or array indexed
    by global id); all of a pair's paths form a single position sequence.
    """
    pairs, seqs = pair_sequences(ps, graph)
    if not pairs:
        return {}
    feats = torch.as_tensor(np.asarray(features) if not torch.is_tensor(features) else features)
    feats = feats.to(proj.W.dtype)
    top = max(max(s) for s in seqs)
    if top >= feats.shape[0]:
        raise ReferentialError(f"path node {graph.local(top)} has no feature vector")
    idx, lengths = pad_sequences(seqs)
    P, _ = encode_pairs(feats, idx, lengths, proj, encoder)
    return {key: P[i] for i, key in enumerate(pairs)}


def export_edge_features(path: str | Path, edges: dict[tuple[int, int], torch.Tensor],
                         n_aspects: int, h: int, seed: int) -> None:
    lines = [f"# n_aspects={n_aspects} h={h} seed={seed}"]
    for (a, b) in sorted(edges):
        vals = " ".join(repr(float(v)) for v in edges[(a, b)].detach().cpu().numpy())
        lines.append(f"{a}\t{b}\t{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_edge_features(path: str | Path) -> tuple[dict, dict[tuple[int, int], np.ndarray]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = {k: int(v) for k, v in (kv.split("=") for kv in text[0][2:].split())}
    edges = {}
    for line in text[1:]:
        a, b, vals = line.split("\t")
        edges[(int(a), int(b))] = np.array([float(v) for v in vals.split()])
    return header, edges
