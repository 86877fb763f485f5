"""Self-describing checkpoints: config, id maps and parameters in one torch archive."""

from __future__ import annotations

from pathlib import Path

import torch

from ..errors import IngestIOError
from . import build_model
from .base import ModelConfig

FORMAT = "leakfree_kt.checkpoint"
VERSION = 1


def save_checkpoint(model, path, question_ids=None, kc_ids=None, extra=None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": FORMAT,
            "version": VERSION,
            "config": model.config.to_dict(),
            "num_questions": model.num_questions,
            "num_kcs": model.num_kcs,
            "question_ids": dict(question_ids.to_dense) if question_ids is not None else None,
            "kc_ids": dict(kc_ids.to_dense) if kc_ids is not None else None,
            "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path):
    """Return ``(model, payload)``; the model is in eval mode."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as exc:
        raise IngestIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != FORMAT:
        raise IngestIOError(f"{path} is not a checkpoint")
    config = ModelConfig(**payload["config"])
    model = build_model(config, payload["num_questions"], payload["num_kcs"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
