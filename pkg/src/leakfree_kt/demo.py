"""Leakage demonstration on KC-duplicated synthetic data.

Every question carries two copies of one KC, so a baseline that reads the
first copy's response can predict the second copy perfectly while learning
little about the student. One-by-one scoring rewards that; all-in-one does not.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import generate_synthetic, split_dataset
from .evaluation import aggregate_by_question, auc, eval_all_in_one, eval_one_by_one, report
from .expansion import plan_windows
from .harness import TrainConfig, train
from .models import ModelConfig, build_model


@dataclass
class DemoConfig:
    num_students: int = 500
    num_questions: int = 50
    num_kcs: int = 10
    seed: int = 0
    d: int = 32
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 20
    window_questions: int = 100


def leakage_demo(model_ids=("dkt", "dkt-ml"), config=None):
    """Train each model on fold 0 and score the held-out students three ways.

    Returns ``{model_id: {"non_first_step_auc", "aggregated_auc", "all_in_one_auc", "selected_epoch"}}``.
    """
    cfg = config or DemoConfig()
    ds = generate_synthetic(cfg.num_students, cfg.num_questions, cfg.num_kcs, 1, seed=cfg.seed,
                            correlation_mode="duplicated")
    plan = split_dataset(ds.logs, 0.2, 5, seed=cfg.seed)
    train_ids, val_ids = plan.folds[0]
    out = {}
    for mid in model_ids:
        tc = TrainConfig(model=ModelConfig(mid, d=cfg.d, hidden=cfg.d, dropout=0.0, seed=cfg.seed),
                         learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                         patience=cfg.max_epochs, window_questions=cfg.window_questions, seed=cfg.seed)

        def windows(ids):
            return plan_windows(ds.subset(ids), ds.mapping, tc.model.labeling, cfg.window_questions,
                                mid != "dkt-fuse").windows

        model = build_model(tc.model, len(ds.question_ids), ds.mapping.num_kcs)
        model, rec = train(model, windows(train_ids), windows(val_ids), tc)
        test = windows(plan.test_students)
        steps = eval_one_by_one(model, test)
        later = [e for e in steps.entries if e.group_index > 0]
        out[mid] = {
            "non_first_step_auc": auc([e.probability for e in later], [e.target for e in later]),
            "aggregated_auc": report(aggregate_by_question(steps), "aggregated_one_by_one").auc,
            "all_in_one_auc": report(eval_all_in_one(model, test), "all_in_one").auc,
            "selected_epoch": rec.selected_epoch,
        }
    return out
