"""Training loop, cross-validation and declarative experiments."""

from __future__ import annotations

import copy
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as kdata
from .errors import (
    DataValidationError,
    FairnessViolation,
    InconclusiveProbeError,
    IngestIOError,
    TrainingDivergence,
    UsageError,
)
from .evaluation import evaluate, leakage_probe, write_summary
from .expansion import DEFAULT_WINDOW, fairness_check, plan_windows
from .models import ModelConfig, build_model, collate
from .models.checkpoint import save_checkpoint

log = logging.getLogger(__name__)

DEFAULT_BATCH = {"dkt": 128, "akt": 24}


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-3
    batch_size: int | None = None
    max_epochs: int = 100
    patience: int = 5
    window_questions: int = DEFAULT_WINDOW
    validation_method: str | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.batch_size is None:
            self.batch_size = DEFAULT_BATCH[self.model.family]
        if self.validation_method is None:
            self.validation_method = "aggregated_one_by_one" if self.model.leak_free else "one_by_one"
        if self.validation_method not in ("aggregated_one_by_one", "one_by_one"):
            raise ValueError(f"unknown validation method {self.validation_method!r}")
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience, self.window_questions) <= 0:
            raise ValueError("training numerics must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience exceeds max_epochs")

    @property
    def test_method(self):
        return "aggregated_one_by_one" if self.model.leak_free else "all_in_one"

    def to_dict(self):
        d = asdict(self)
        d["test_method"] = self.test_method
        return d


@dataclass
class RunRecord:
    config: dict
    fold: int | None = None
    epochs: list = field(default_factory=list)
    selected_epoch: int | None = None
    validation_method: str | None = None
    test_reports: dict = field(default_factory=dict)
    leakage: dict | None = None
    split: dict = field(default_factory=dict)
    window_rule: str = "split"
    trained_students: list = field(default_factory=list)
    wall_clock: float = 0.0
    environment: dict = field(default_factory=dict)
    status: str = "ok"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def metrics(self):
        """Everything except timing and environment, for determinism comparisons."""
        d = self.to_dict()
        d.pop("wall_clock")
        d.pop("environment")
        return d


def environment_fingerprint():
    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


class EarlyStopping:
    """Track the best epoch of a maximised metric; stop after ``patience`` epochs without improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def step(self, epoch, value):
        """Record ``value`` for ``epoch``; return True when training should stop."""
        if value > self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _student_batches(windows, batch_size, rng):
    """Shuffle students, keep each student's windows adjacent, then cut into batches."""
    by_student = {}
    for w in windows:
        by_student.setdefault(w.student_id, []).append(w)
    students = sorted(by_student, key=kdata.natural_key)
    ordered = [w for i in rng.permutation(len(students)) for w in by_student[students[i]]]
    return [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]


def _validation_score(model, windows, method):
    _, rep = evaluate(model, windows, method)
    return rep


def train(model, train_windows, val_windows, config, record=None):
    """Adam with early stopping on validation AUC; restores the best epoch's parameters.

    Returns ``(model, RunRecord)``. Raises :class:`TrainingDivergence` when
    the loss stops being finite.
    """
    record = record or RunRecord(config=config.to_dict())
    record.validation_method = config.validation_method
    start = time.perf_counter()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    stopper = EarlyStopping(config.patience)
    best_state = copy.deepcopy(model.state_dict())
    seen = set()
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        losses = []
        for chunk in _student_batches(train_windows, config.batch_size, rng):
            batch = collate(chunk)
            seen.update(w.student_id for w in chunk)
            opt.zero_grad()
            loss = model.training_loss(batch)
            if not torch.isfinite(loss):
                record.status = "diverged"
                record.wall_clock = time.perf_counter() - start
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}", record)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        rep = _validation_score(model, val_windows, config.validation_method)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": rep.auc, "val_accuracy": rep.accuracy}
        if config.validation_method != "aggregated_one_by_one":
            agg = _validation_score(model, val_windows, "aggregated_one_by_one")
            entry["val_aggregated_auc"] = agg.auc
        record.epochs.append(entry)
        log.info("%s epoch %d loss %.4f val auc %.4f", config.model.model_id, epoch, entry["train_loss"], rep.auc)
        improved = rep.auc > stopper.best
        stop = stopper.step(epoch, rep.auc)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    record.selected_epoch = stopper.best_epoch
    record.trained_students = sorted(seen, key=kdata.natural_key)
    record.wall_clock = time.perf_counter() - start
    record.environment = environment_fingerprint()
    return model, record


def fold_model_config(config, fold):
    return ModelConfig(**{**config.model.to_dict(), "seed": config.model.seed + fold})


def cross_validate(dataset, plan, config, out_dir=None, probe_samples=200, folds=None):
    """Train one model per fold and test every fold on the shared hold-out set."""
    mc = config.model
    expanded = mc.model_id != "dkt-fuse"
    W = config.window_questions
    test_windows = plan_windows(dataset.subset(plan.test_students), dataset.mapping, mc.labeling, W, expanded).windows
    records = []
    for k, (train_ids, val_ids) in enumerate(plan.folds):
        if folds is not None and k not in folds:
            continue
        if set(train_ids) & set(plan.test_students):
            raise DataValidationError("training students overlap the test set")
        fold_cfg = TrainConfig(**{**asdict(config), "model": fold_model_config(config, k), "seed": config.seed + k})
        train_w = plan_windows(dataset.subset(train_ids), dataset.mapping, mc.labeling, W, expanded).windows
        val_w = plan_windows(dataset.subset(val_ids), dataset.mapping, mc.labeling, W, expanded).windows
        model = build_model(fold_cfg.model, len(dataset.question_ids), dataset.mapping.num_kcs)
        record = RunRecord(
            config=fold_cfg.to_dict(),
            fold=k,
            split={"seed": plan.seed, "train": list(train_ids), "validation": list(val_ids), "test": list(plan.test_students)},
        )
        model, record = train(model, train_w, val_w, fold_cfg, record)
        assert not set(record.trained_students) & set(plan.test_students)
        methods = [config.test_method]
        if config.test_method != "aggregated_one_by_one":
            methods.append("aggregated_one_by_one")
        for m in methods:
            _, rep = evaluate(model, test_windows, m)
            record.test_reports[m] = rep.to_dict()
        try:
            record.leakage = leakage_probe(model, test_windows, probe_samples, seed=config.seed + k).to_dict()
        except InconclusiveProbeError:
            record.leakage = {"verdict": "inconclusive"}
        records.append(record)
        if out_dir is not None:
            d = Path(out_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"fold_{k}.json").write_text(json.dumps(record.to_dict(), indent=1, sort_keys=True) + "\n")
            save_checkpoint(model, d / f"fold_{k}.pt", dataset.question_ids, dataset.kc_ids,
                            extra={"window_questions": W, "fold": k})
    return records


# ---------------------------------------------------------------------------
# experiments


def load_experiment(path):
    p = Path(path)
    try:
        exp = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise IngestIOError(str(exc)) from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse experiment config: {exc}") from exc
    if not isinstance(exp, dict) or "models" not in exp:
        raise UsageError("experiment config needs a 'models' list")
    exp.setdefault("_base_dir", str(p.parent))
    return exp


def _prepare_data(exp):
    ds_cfg = exp.get("dataset", {})
    if "synthetic" in ds_cfg:
        ds = kdata.generate_synthetic(**ds_cfg["synthetic"])
    else:
        path = Path(ds_cfg["path"])
        if not path.is_absolute():
            path = Path(exp.get("_base_dir", ".")) / path
        ds = kdata.load_dataset(path, ds_cfg.get("kind", "canonical"))
    if ds_cfg.get("corr_transform"):
        ds = kdata.corr_transform(ds)
    return ds


def model_train_configs(exp):
    """Materialise one :class:`TrainConfig` per listed model, all defaults filled in."""
    base_train = dict(exp.get("training", {}))
    base_model = dict(exp.get("model_defaults", {}))
    W = exp.get("window", {}).get("questions", DEFAULT_WINDOW)
    out = []
    for entry in exp["models"]:
        if isinstance(entry, str):
            entry = {"id": entry}
        over = dict(entry.get("overrides", {}))
        model_fields = {f.name for f in fields(ModelConfig)}
        mc = {**base_model, **{k: v for k, v in over.items() if k in model_fields}, "model_id": entry["id"]}
        tc = {**base_train, "window_questions": W, **{k: v for k, v in over.items() if k not in model_fields}}
        out.append((entry.get("name", entry["id"]), TrainConfig(model=ModelConfig(**mc), **tc)))
    return out


def run_experiment(config, out_dir=None):
    """prepare -> split -> fairness attestation -> cross-validate each model -> comparison table."""
    exp = load_experiment(config) if not isinstance(config, dict) else dict(config)
    out = Path(out_dir or exp.get("output", "runs/experiment"))
    if not out.is_absolute() and out_dir is None:
        out = Path(exp.get("_base_dir", ".")) / out
    out.mkdir(parents=True, exist_ok=True)
    ds = _prepare_data(exp)
    sp = exp.get("split", {})
    plan = kdata.split_dataset(ds.logs, sp.get("test_fraction", 0.2), sp.get("folds", 5), sp.get("seed", 0))
    plan.save(out / "split.json")
    configs = model_train_configs(exp)

    plans = {
        name: plan_windows(ds.logs, ds.mapping, tc.model.labeling, tc.window_questions, tc.model.model_id != "dkt-fuse")
        for name, tc in configs
    }
    ok, fair = fairness_check(plans)
    write_summary(out / "fairness.json", fair)
    if not ok:
        raise FairnessViolation("models are evaluated on different question windows", fair)

    stats = kdata.compute_stats(ds.logs, ds.mapping)
    rows = []
    probe_samples = exp.get("probe_samples", 200)
    folds = exp.get("run_folds")
    for name, tc in configs:
        records = cross_validate(ds, plan, tc, out / name, probe_samples, folds)
        rows.append(summarise(name, tc, records))
    meta = {
        "dataset": stats.as_row(),
        "window_rule": "split",
        "fairness": "attested",
        "environment": environment_fingerprint(),
    }
    write_summary(out / "experiment.json", {"config": {k: v for k, v in exp.items() if not k.startswith("_")}, **meta})
    write_table(rows, out)
    return out


def summarise(name, tc, records):
    method = tc.test_method
    aucs = [r.test_reports[method]["auc"] for r in records]
    accs = [r.test_reports[method]["accuracy"] for r in records]
    return {
        "model": name,
        "model_id": tc.model.model_id,
        "window_questions": tc.window_questions,
        "max_epochs": tc.max_epochs,
        "patience": tc.patience,
        "validation_method": tc.validation_method,
        "test_method": method,
        "folds": len(records),
        "auc_mean": round(float(np.mean(aucs)), 6),
        "auc_std": round(float(np.std(aucs)), 6),
        "accuracy_mean": round(float(np.mean(accs)), 6),
        "accuracy_std": round(float(np.std(accs)), 6),
    }


TABLE_COLUMNS = (
    "model", "model_id", "window_questions", "max_epochs", "patience", "validation_method",
    "test_method", "folds", "auc_mean", "auc_std", "accuracy_mean", "accuracy_std",
)


def write_table(rows, out):
    import csv

    out = Path(out)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out / "comparison.json").write_text(json.dumps({"version": 1, "rows": rows}, indent=1) + "\n")
