"""Shared model plumbing: config, batch collation, embedding conventions, loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractViolation, EmptyInputError
from ..expansion import MASK

MODEL_IDS = ("dkt", "dkt-ml", "dkt-ad", "dkt-fuse", "akt", "akt-ml", "akt-qm")
LEAK_FREE = frozenset({"dkt-ml", "dkt-ad", "dkt-fuse", "akt-ml", "akt-qm"})
PROB_EPS = 1e-12
_INT_COLS = ("kc", "qid", "label", "target", "group_index", "group_size")


@dataclass
class ModelConfig:
    model_id: str = "dkt"
    d: int = 64
    hidden: int = 64
    attention_blocks: int = 2
    attention_heads: int = 4
    dropout: float = 0.2
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ValueError(f"unknown model_id {self.model_id!r}; expected one of {MODEL_IDS}")
        if min(self.d, self.hidden, self.attention_blocks, self.attention_heads) < 1:
            raise ValueError("dimensions must be positive")
        if self.hidden % self.attention_heads:
            raise ValueError("attention_heads must divide hidden")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def family(self):
        return self.model_id.split("-")[0]

    @property
    def labeling(self):
        return "mask_last" if self.model_id.endswith("-ml") else "ground_truth"

    @property
    def leak_free(self):
        return self.model_id in LEAK_FREE

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Padded tensors for a list of windows. Pads sit at the end of each row."""

    kc: torch.Tensor
    qid: torch.Tensor
    label: torch.Tensor
    target: torch.Tensor
    occ: torch.Tensor  # window-relative occurrence index, pads get distinct negative ids
    group_index: torch.Tensor
    group_size: torch.Tensor
    is_last: torch.Tensor
    valid: torch.Tensor
    windows: list

    @property
    def shape(self):
        return tuple(self.kc.shape)


def collate(windows, length=None):
    """Stack windows into a :class:`Batch`; ``length`` pads to a fixed step capacity."""
    if not windows:
        raise EmptyInputError("no windows to collate")
    L = max(len(w) for w in windows)
    if length is not None:
        if length < L:
            raise ValueError("window longer than the requested capacity")
        L = length
    B = len(windows)
    cols = {k: np.zeros((B, L), dtype=np.int64) for k in _INT_COLS}
    occ = -np.tile(np.arange(1, L + 1), (B, 1))
    is_last = np.zeros((B, L), dtype=bool)
    valid = np.zeros((B, L), dtype=bool)
    for b, w in enumerate(windows):
        arr = w.arrays
        n = len(w)
        for k in _INT_COLS:
            cols[k][b, :n] = arr[k]
        occ[b, :n] = arr["occurrence"] - w.start
        is_last[b, :n] = arr["is_last"]
        valid[b, :n] = True
    t = {k: torch.from_numpy(v) for k, v in cols.items()}
    return Batch(occ=torch.from_numpy(occ), is_last=torch.from_numpy(is_last), valid=torch.from_numpy(valid),
                 windows=list(windows), **t)


def loss(predictions, targets, valid_mask):
    """Mean binary cross-entropy over valid positions."""
    valid_mask = valid_mask.bool()
    if not valid_mask.any():
        raise EmptyInputError("loss over an empty valid set")
    p = predictions[valid_mask]
    if not torch.isfinite(p).all():
        return p.new_tensor(float("nan"))  # the trainer reports this as a divergence
    return F.binary_cross_entropy(p, targets[valid_mask].to(p.dtype))


def occurrence_means(values, batch):
    """Average step values per occurrence. Returns ``(means, targets, valid)`` shaped [B, Lq]."""
    valid = batch.valid
    occ = batch.occ.clamp(min=0)
    Lq = int(occ.max()) + 1
    B = values.shape[0]
    sums = values.new_zeros(B, Lq).scatter_add(1, occ, torch.where(valid, values, torch.zeros_like(values)))
    counts = values.new_zeros(B, Lq).scatter_add(1, occ, valid.to(values.dtype))
    tgt = torch.zeros(B, Lq, dtype=torch.long).scatter_reduce(1, occ, torch.where(valid, batch.target, 0), "amax")
    qvalid = counts > 0
    return sums / counts.clamp(min=1), tgt, qvalid


class KTModel(nn.Module):
    """Base class: every model maps a :class:`Batch` to per-step probabilities [B, L]."""

    # how all-in-one branches treat the earlier siblings of the query step:
    # "drop" removes them, "keep" leaves them in place because the model
    # cannot read their responses (MASK labels, substitution or masking).
    branch_siblings = "drop"

    def __init__(self, config, num_questions, num_kcs):
        super().__init__()
        self.config = config
        self.num_questions = num_questions
        self.num_kcs = num_kcs
        self.n_labels = 3 if config.labeling == "mask_last" else 2
        self.rows_evaluated = 0

    @property
    def model_id(self):
        return self.config.model_id

    @property
    def labeling(self):
        return self.config.labeling

    @property
    def leak_free(self):
        return self.config.leak_free

    def reset_parameters(self):
        """Uniform(+-1/sqrt(d)) from a generator seeded by the config; difficulties start at 0."""
        gen = torch.Generator().manual_seed(self.config.seed)
        bound = 1.0 / math.sqrt(self.config.d)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("difficulty"):
                    p.zero_()
                elif ".norm" in name or name.startswith("norm"):
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                else:
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)

    def _check_labels(self, label):
        if int(label.max()) >= self.n_labels:
            raise ContractViolation(f"{self.model_id} has no MASK embedding")

    def embed_kc_response(self, c, label):
        """e_c + g_label."""
        c = torch.as_tensor(c)
        label = torch.as_tensor(label)
        if (label == MASK).any() and self.n_labels < 3:
            raise ContractViolation(f"{self.model_id} has no MASK embedding")
        return self.kc_embed(c) + self.label_embed(label)

    def count_rows(self, batch):
        self.rows_evaluated += batch.shape[0]

    def predict(self, batch):
        """Inference-mode probabilities."""
        was = self.training
        self.eval()
        with torch.no_grad():
            out = self(batch)
        self.train(was)
        return out

    def training_loss(self, batch):
        return loss(self(batch), batch.target, batch.valid)
