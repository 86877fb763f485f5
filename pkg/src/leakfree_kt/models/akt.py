"""Attention knowledge tracing with Rasch-style embeddings and its leakage-free variants.

The attention block follows the monotonic design of context-aware attentive
KT: scaled dot-product scores are damped by exp(-theta * distance), where the
distance grows with the attention mass lying between a key and the query.
Everything that decides *what* may be attended goes through explicit binary
masks (1 = permitted), and masked weights are exactly zero after the
softmax, so structural guarantees do not depend on the decay details.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..expansion import MASK
from ..errors import ContractViolation
from .base import KTModel, PROB_EPS

NEG = -1e30
DIST_EPS = 1e-8


def akt_masks(n):
    """Lower-triangular (j <= i) and strictly lower-triangular (j < i) masks."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lower = torch.tril(torch.ones(n, n, dtype=torch.bool))
    strict = torch.tril(torch.ones(n, n, dtype=torch.bool), diagonal=-1)
    return lower, strict


def qm_mask(group_ids):
    """A[i, j] = 1 iff j < i and positions i, j come from different question occurrences.

    ``group_ids`` may be 1-D [n] or batched [B, n].
    """
    g = torch.as_tensor(group_ids)
    n = g.shape[-1]
    strict = akt_masks(n)[1]
    differ = g.unsqueeze(-1) != g.unsqueeze(-2)
    return strict & differ


class MonotonicAttention(nn.Module):
    def __init__(self, dim, heads, dropout):
        super().__init__()
        self.heads = heads
        self.dk = dim // heads
        self.kq = nn.Linear(dim, dim)  # keys and queries share a projection
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.gamma = nn.Parameter(torch.zeros(heads, 1, 1))
        self.drop = nn.Dropout(dropout)

    def _split(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.heads, self.dk).transpose(1, 2)

    def forward(self, query, key, values, mask):
        B, L, D = query.shape
        q, k, v = self._split(self.kq(query)), self._split(self.kq(key)), self._split(self.v(values))
        m = mask if mask.dim() == 4 else mask.view(-1, 1, L, L)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.dk)

        w = torch.softmax(scores.masked_fill(~m, NEG), dim=-1) * m
        # attention mass strictly after j within row i
        rev = torch.flip(torch.cumsum(torch.flip(w, [-1]), -1), [-1])
        later = F.pad(rev[..., 1:], (0, 1))
        pos = torch.arange(L)
        gap = (pos.view(-1, 1) - pos.view(1, -1)).abs().to(scores.dtype)
        dist = torch.sqrt(later * gap + DIST_EPS)
        theta = F.softplus(self.gamma)
        decay = torch.exp(-theta * dist).clamp(min=1e-5)

        attn = torch.softmax((scores * decay).masked_fill(~m, NEG), dim=-1) * m
        attn = self.drop(attn)
        out = (attn @ v).transpose(1, 2).reshape(B, L, D)
        return self.o(out)


class AttentionLayer(nn.Module):
    def __init__(self, dim, heads, hidden, dropout, feed_forward=True):
        super().__init__()
        self.attn = MonotonicAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.drop1 = nn.Dropout(dropout)
        self.feed_forward = feed_forward
        if feed_forward:
            self.ff = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, dim))
            self.norm2 = nn.LayerNorm(dim)
            self.drop2 = nn.Dropout(dropout)

    def forward(self, query, key, values, mask):
        x = self.norm1(query + self.drop1(self.attn(query, key, values, mask)))
        if self.feed_forward:
            x = self.norm2(x + self.drop2(self.ff(x)))
        return x


class AKT(KTModel):
    """Two-stream attention model; ``akt``, ``akt-ml`` and ``akt-qm`` differ only in labels and masks.

    Question stream: e_c + mu_q * d_c. Response stream:
    e_c + g_label + mu_q * f_(c,label). Both streams are self-encoded under
    the lower-triangular mask; the knowledge retriever then lets the question
    stream read response encodings under the response mask, strictly lower
    triangular for ``akt``/``akt-ml`` and the question mask for ``akt-qm``.
    """

    def __init__(self, config, num_questions, num_kcs):
        super().__init__(config, num_questions, num_kcs)
        if config.model_id in ("akt-ml", "akt-qm"):
            self.branch_siblings = "keep"
        d, h, p = config.d, config.hidden, config.dropout
        heads, blocks = config.attention_heads, config.attention_blocks
        self.kc_embed = nn.Embedding(num_kcs, d)
        self.kc_variation = nn.Embedding(num_kcs, d)
        self.label_embed = nn.Embedding(self.n_labels, d)
        self.pair_variation = nn.Embedding(num_kcs * self.n_labels, d)
        self.difficulty = nn.Embedding(num_questions, 1)
        self.proj = nn.Identity() if d == h else nn.Linear(d, h, bias=False)
        self.question_encoder = nn.ModuleList(AttentionLayer(h, heads, h, p) for _ in range(blocks))
        self.knowledge_encoder = nn.ModuleList(AttentionLayer(h, heads, h, p) for _ in range(blocks))
        self.retriever = nn.ModuleList(
            AttentionLayer(h, heads, h, p, feed_forward=(i % 2 == 1)) for i in range(2 * blocks)
        )
        self.out = nn.Sequential(nn.Linear(2 * h, h), nn.ReLU(), nn.Dropout(p), nn.Linear(h, 1))
        self.reset_parameters()

    def rasch_embed(self, q, c, label=None):
        """(e_c + mu_q d_c, e_c + g_label + mu_q f_(c,label)); the second is None without a label."""
        q, c = torch.as_tensor(q), torch.as_tensor(c)
        mu = self.difficulty(q)  # [..., 1] broadcasts against [..., d]
        e = self.kc_embed(c)
        query = e + mu * self.kc_variation(c)
        if label is None:
            return query, None
        label = torch.as_tensor(label)
        if (label == MASK).any() and self.n_labels < 3:
            raise ContractViolation(f"{self.model_id} has no MASK embedding")
        value = e + self.label_embed(label) + mu * self.pair_variation(c * self.n_labels + label)
        return query, value

    def response_mask(self, batch):
        L = batch.shape[1]
        if self.model_id == "akt-qm":
            return qm_mask(batch.occ)
        return akt_masks(L)[1].expand(batch.shape[0], L, L)

    def forward(self, batch):
        self.count_rows(batch)
        self._check_labels(batch.label)
        B, L = batch.shape
        q_emb, qa_emb = self.rasch_embed(batch.qid, batch.kc, batch.label)
        q_emb, qa_emb = self.proj(q_emb), self.proj(qa_emb)
        lower = akt_masks(L)[0].expand(B, L, L)
        resp = self.response_mask(batch)

        x, y = q_emb, qa_emb
        for layer in self.question_encoder:
            x = layer(x, x, x, lower)
        for layer in self.knowledge_encoder:
            y = layer(y, y, y, lower)
        for i, layer in enumerate(self.retriever):
            if i % 2 == 0:
                x = layer(x, x, x, lower)
            else:
                x = layer(x, x, y, resp)
        logits = self.out(torch.cat([x, q_emb], dim=-1)).squeeze(-1)
        return torch.sigmoid(logits).clamp(PROB_EPS, 1 - PROB_EPS)
