"""One-by-one and all-in-one evaluation, question aggregation, metrics and the leakage probe."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInputError, InconclusiveProbeError, UndefinedMetricError, DataValidationError
from .expansion import ExpandedSequence, flip_response
from .models.base import collate

TRACE_VERSION = 1
LEAK_TOLERANCE = 1e-6
METHODS = ("one_by_one", "all_in_one", "aggregated_one_by_one")


@dataclass
class TraceEntry:
    student_id: str
    occurrence: int
    window_start: int
    question_id: int
    probability: float
    target: int
    group_size: int
    kc_id: int | None = None
    group_index: int | None = None

    @property
    def key(self):
        return (self.student_id, self.window_start, self.occurrence)


@dataclass
class PredictionTrace:
    entries: list[TraceEntry]
    level: str  # "kc_step" or "question"

    def __post_init__(self):
        if self.level == "question":
            keys = [e.key for e in self.entries]
            if len(keys) != len(set(keys)):
                raise DataValidationError("question-level trace repeats an occurrence")

    def __len__(self):
        return len(self.entries)

    @property
    def probabilities(self):
        return np.array([e.probability for e in self.entries], dtype=np.float64)

    @property
    def targets(self):
        return np.array([e.target for e in self.entries], dtype=np.int64)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": "trace", "version": TRACE_VERSION, "level": self.level}) + "\n")
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "trace":
                raise DataValidationError(f"{path} is not a trace file")
            entries = [TraceEntry(**json.loads(line)) for line in fh if line.strip()]
        return cls(entries, header["level"])


@dataclass
class EvalReport:
    auc: float
    accuracy: float
    method: str
    level: str
    population: int

    def __post_init__(self):
        if self.population <= 0:
            raise DataValidationError("empty evaluation population")

    def to_dict(self):
        return asdict(self)


@dataclass
class LeakageReport:
    max_shift: float
    sampled_occurrences: int
    verdict: str
    tolerance: float = LEAK_TOLERANCE
    shifts: list[float] = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("shifts")
        return d


# ---------------------------------------------------------------------------
# metrics


def auc(probabilities, targets):
    """Area under the ROC curve with ties counted as half-concordant."""
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets).astype(bool)
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative target")
    ranks = rankdata(p)  # average ranks; ties contribute 1/2
    u = ranks[t].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def accuracy(probabilities, targets, threshold=0.5):
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets)
    if p.size == 0:
        raise EmptyInputError("accuracy of an empty prediction set")
    return float(np.mean((p >= threshold).astype(int) == t))


def report(trace, method):
    return EvalReport(
        auc=auc(trace.probabilities, trace.targets),
        accuracy=accuracy(trace.probabilities, trace.targets),
        method=method,
        level=trace.level,
        population=len(trace),
    )


# ---------------------------------------------------------------------------
# evaluation


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def _default_batch(model):
    return 256 if model.config.family == "dkt" else 64


def eval_one_by_one(model, windows, batch_size=None):
    """Score every expanded step of each window in a single forward pass."""
    windows = list(windows)
    entries = []
    for chunk in _batches(windows, batch_size or _default_batch(model)):
        probs = model.predict(collate(chunk)).cpu().numpy()
        for b, w in enumerate(chunk):
            start = w.start
            for t, s in enumerate(w.steps):
                entries.append(TraceEntry(
                    w.student_id, s.occurrence, start, s.question_id, float(probs[b, t]), s.target,
                    s.group_size, s.kc_id, s.group_index,
                ))
    return PredictionTrace(entries, "kc_step")


def aggregate_by_question(trace):
    """Mean of the step probabilities of each question occurrence."""
    if trace.level != "kc_step":
        raise DataValidationError("aggregation needs a kc_step trace")
    groups = OrderedDict()
    for e in trace.entries:
        groups.setdefault(e.key, []).append(e)
    out = []
    for key, es in groups.items():
        size = es[0].group_size
        if len(es) != size or sorted(e.group_index for e in es) != list(range(size)):
            raise DataValidationError(f"incomplete group for occurrence {key}")
        first = es[0]
        out.append(TraceEntry(
            first.student_id, first.occurrence, first.window_start, first.question_id,
            float(np.mean([e.probability for e in es])), first.target, size,
        ))
    return PredictionTrace(out, "question")


def all_in_one_branches(model, w):
    """Branch windows for every (occurrence, KC) of ``w``.

    Branch i of an occurrence holds the window's history strictly before the
    occurrence plus the query step for its i-th KC. Earlier siblings are
    dropped, unless the model cannot read their responses anyway (mask
    labels, self-substitution or the question mask), in which case they stay
    so the branch matches what the model natively sees.
    """
    keep = model.branch_siblings == "keep"
    out = []
    for occ, idx in w.groups():
        prefix = w.steps[:idx[0]]
        for k, pos in enumerate(idx):
            siblings = [w.steps[j] for j in idx[:k]] if keep else []
            steps = prefix + siblings + [w.steps[pos]]
            out.append(((w.student_id, w.start, occ), ExpandedSequence(w.student_id, steps, w.policy)))
    return out


def eval_all_in_one(model, windows, batch_size=None):
    """Question-level trace where each KC of an occurrence is scored on its own branch."""
    branches = []
    meta = {}
    for w in windows:
        for key, br in all_in_one_branches(model, w):
            branches.append((key, br))
            if key not in meta:
                s = br.steps[-1]
                meta[key] = (s.question_id, s.target, s.group_size)
    sums = OrderedDict((k, []) for k, _ in branches)
    for chunk in _batches(branches, batch_size or _default_batch(model)):
        batch = collate([br for _, br in chunk])
        probs = model.predict(batch).cpu().numpy()
        for b, (key, br) in enumerate(chunk):
            sums[key].append(float(probs[b, len(br) - 1]))
    entries = []
    for key, ps in sums.items():
        q, target, size = meta[key]
        entries.append(TraceEntry(key[0], key[2], key[1], q, float(np.mean(ps)), target, size))
    return PredictionTrace(entries, "question")


def evaluate(model, windows, method):
    """Run one of the three evaluation methods and return ``(trace, EvalReport)``."""
    if method == "one_by_one":
        trace = eval_one_by_one(model, windows)
    elif method == "aggregated_one_by_one":
        trace = aggregate_by_question(eval_one_by_one(model, windows))
    elif method == "all_in_one":
        trace = eval_all_in_one(model, windows)
    else:
        raise DataValidationError(f"unknown evaluation method {method!r}")
    return trace, report(trace, method)


# ---------------------------------------------------------------------------
# leakage probe


def leakage_probe(model, windows, samples=100, seed=0, batch_size=None):
    """Flip one multi-KC occurrence at a time and measure how far its own predictions move."""
    windows = list(windows)
    sites = [
        (wi, occ, idx)
        for wi, w in enumerate(windows)
        for occ, idx in w.groups()
        if len(idx) > 1
    ]
    if not sites:
        raise InconclusiveProbeError("no multi-KC occurrence to perturb")
    rng = np.random.default_rng(seed)
    n = min(samples, len(sites))
    chosen = [sites[i] for i in sorted(rng.choice(len(sites), size=n, replace=False))]

    base = {}
    bs = batch_size or _default_batch(model)
    for chunk_ids in _batches(sorted({wi for wi, _, _ in chosen}), bs):
        probs = model.predict(collate([windows[i] for i in chunk_ids])).cpu().numpy()
        for b, wi in enumerate(chunk_ids):
            base[wi] = probs[b]
    shifts = []
    for chunk in _batches(chosen, bs):
        probs = model.predict(collate([flip_response(windows[wi], occ) for wi, occ, _ in chunk])).cpu().numpy()
        for b, (wi, _, idx) in enumerate(chunk):
            shifts.append(float(np.max(np.abs(probs[b, idx] - base[wi][idx]))))
    max_shift = max(shifts)
    verdict = "leak_free" if max_shift <= LEAK_TOLERANCE else "leaking"
    return LeakageReport(max_shift, n, verdict, LEAK_TOLERANCE, shifts)


def write_summary(path, payload):
    """Versioned key-value summary document."""
    Path(path).write_text(json.dumps({"version": TRACE_VERSION, **payload}, indent=2, sort_keys=True) + "\n")
