"""LSTM knowledge tracing: baseline, mask-label, autoregressive-decoding and fused variants."""

from __future__ import annotations

import torch
import torch.nn as nn

from .base import KTModel, PROB_EPS, loss, occurrence_means


class DKT(KTModel):
    """LSTM over KC-response embeddings with a |C|-wide sigmoid read-out.

    The prediction at step t reads the state that has consumed steps < t, so
    the first step of a window sees only the zero initial state. Serves both
    ``dkt`` (ground-truth labels) and ``dkt-ml`` (mask_last labels, 3-row
    label table).
    """

    def __init__(self, config, num_questions, num_kcs):
        super().__init__(config, num_questions, num_kcs)
        if config.model_id == "dkt-ml":
            self.branch_siblings = "keep"
        self.kc_embed = nn.Embedding(num_kcs, config.d)
        self.label_embed = nn.Embedding(self.n_labels, config.d)
        self.lstm = nn.LSTM(config.d, config.hidden, batch_first=True)
        self.dropout = nn.Dropout(config.dropout)
        self.out = nn.Linear(config.hidden, num_kcs)
        self.reset_parameters()

    def step_inputs(self, batch):
        self._check_labels(batch.label)
        return self.kc_embed(batch.kc) + self.label_embed(batch.label)

    def _shift(self, h):
        return torch.cat([h.new_zeros(h.shape[0], 1, h.shape[2]), h[:, :-1]], dim=1)

    def kc_probabilities(self, batch):
        """y_t for every step: [B, L, |C|]."""
        h, _ = self.lstm(self.step_inputs(batch))
        return torch.sigmoid(self.out(self.dropout(self._shift(h))))

    def forward(self, batch):
        self.count_rows(batch)
        y = self.kc_probabilities(batch)
        return y.gather(-1, batch.kc.unsqueeze(-1)).squeeze(-1).clamp(PROB_EPS, 1 - PROB_EPS)


class DKTAD(DKT):
    """DKT whose non-final group steps feed back the model's own prediction.

    A non-final step's input is e_c + p*g_1 + (1-p)*g_0 with p the
    prediction made for that very step; only the last step of a group feeds
    the true response. The recurrence is unrolled one step at a time.
    """

    branch_siblings = "keep"

    def _cell(self, x, h, c):
        gates = x @ self.lstm.weight_ih_l0.T + self.lstm.bias_ih_l0 + h @ self.lstm.weight_hh_l0.T + self.lstm.bias_hh_l0
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        return torch.sigmoid(o) * torch.tanh(c), c

    def forward(self, batch):
        self.count_rows(batch)
        self._check_labels(batch.label)
        B, L = batch.shape
        H = self.config.hidden
        dtype = self.kc_embed.weight.dtype
        h = torch.zeros(B, H, dtype=dtype)
        c = torch.zeros(B, H, dtype=dtype)
        e = self.kc_embed(batch.kc)
        g_true = self.label_embed(batch.label)
        g0, g1 = self.label_embed.weight[0], self.label_embed.weight[1]
        preds = []
        for t in range(L):
            y = torch.sigmoid(self.out(self.dropout(h)))
            p = y.gather(-1, batch.kc[:, t:t + 1]).clamp(PROB_EPS, 1 - PROB_EPS)
            preds.append(p.squeeze(-1))
            blend = p * g1 + (1 - p) * g0
            g = torch.where(batch.is_last[:, t:t + 1], g_true[:, t], blend)
            h, c = self._cell(e[:, t] + g, h, c)
        return torch.stack(preds, dim=1)


class DKTFuse(DKT):
    """DKT over the question-level sequence.

    Each occurrence is fed as the mean of its KC-response embeddings; its
    prediction is the mean of y_t over the question's KCs. Step-level
    outputs y_t[c] are still returned so traces align with expanded models.
    """

    def fused_inputs(self, batch):
        self._check_labels(batch.label)
        step = self.kc_embed(batch.kc) + self.label_embed(batch.label)
        step = step * batch.valid.unsqueeze(-1).to(step.dtype)
        occ = batch.occ.clamp(min=0)
        B, Lq = occ.shape[0], int(occ.max()) + 1
        idx = occ.unsqueeze(-1).expand_as(step)
        sums = step.new_zeros(B, Lq, step.shape[-1]).scatter_add(1, idx, step)
        counts = step.new_zeros(B, Lq).scatter_add(1, occ, batch.valid.to(step.dtype))
        return sums / counts.clamp(min=1).unsqueeze(-1)

    def forward(self, batch):
        self.count_rows(batch)
        h, _ = self.lstm(self.fused_inputs(batch))
        y = torch.sigmoid(self.out(self.dropout(self._shift(h))))  # [B, Lq, |C|]
        occ = batch.occ.clamp(min=0)
        per_occ = y.gather(1, occ.unsqueeze(-1).expand(-1, -1, y.shape[-1]))
        return per_occ.gather(-1, batch.kc.unsqueeze(-1)).squeeze(-1).clamp(PROB_EPS, 1 - PROB_EPS)

    def question_predictions(self, batch):
        return occurrence_means(self(batch), batch)

    def training_loss(self, batch):
        p, tgt, valid = self.question_predictions(batch)
        return loss(p, tgt, valid)
