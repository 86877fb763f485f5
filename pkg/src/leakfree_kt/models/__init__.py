"""Sequence models and checkpointing."""

from .akt import AKT, akt_masks, qm_mask
from .base import LEAK_FREE, MODEL_IDS, Batch, KTModel, ModelConfig, collate, loss, occurrence_means
from .dkt import DKT, DKTAD, DKTFuse

_CLASSES = {
    "dkt": DKT,
    "dkt-ml": DKT,
    "dkt-ad": DKTAD,
    "dkt-fuse": DKTFuse,
    "akt": AKT,
    "akt-ml": AKT,
    "akt-qm": AKT,
}


def build_model(config, num_questions, num_kcs):
    model = _CLASSES[config.model_id](config, num_questions, num_kcs)
    return model.to(config.torch_dtype)


__all__ = [
    "AKT", "DKT", "DKTAD", "DKTFuse", "Batch", "KTModel", "ModelConfig", "LEAK_FREE", "MODEL_IDS",
    "akt_masks", "qm_mask", "build_model", "collate", "loss", "occurrence_means",
]
