"""Interaction logs, question/KC mappings, dataset statistics and student splits.

Identifiers are re-indexed to dense integers at load time. The raw-to-dense
maps are kept on the :class:`Dataset` and persisted next to the canonical
interaction file so a prepared directory reloads to identical dense ids.
"""

from __future__ import annotations

import csv
import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    DataValidationError,
    EmptyInputError,
    IngestIOError,
    IngestionError,
)

CANONICAL_FIELDS = ("student_id", "order", "question_id", "kc_ids", "response")
INTERACTIONS_FILE = "interactions.csv"
QUESTION_MAP_FILE = "question_ids.csv"
KC_MAP_FILE = "kc_ids.csv"
REPORT_FILE = "ingestion_report.json"


@dataclass(frozen=True)
class Interaction:
    student_id: str
    order: int
    question_id: int
    kc_ids: tuple[int, ...]
    response: int

    def __post_init__(self):
        if not self.kc_ids:
            raise DataValidationError(f"interaction {self.student_id}/{self.order} has no KCs")
        if len(set(self.kc_ids)) != len(self.kc_ids):
            raise DataValidationError(f"interaction {self.student_id}/{self.order} repeats a KC")
        if self.response not in (0, 1):
            raise DataValidationError(f"response must be 0 or 1, got {self.response!r}")
        if self.order < 0:
            raise DataValidationError("order must be non-negative")


@dataclass
class InteractionLog:
    student_id: str
    interactions: list[Interaction]

    def __post_init__(self):
        orders = [it.order for it in self.interactions]
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise DataValidationError(f"orders of student {self.student_id} are not strictly increasing")

    def __len__(self):
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)

    def __getitem__(self, idx):
        return self.interactions[idx]


@dataclass
class KCMapping:
    """The question -> KC-set map. KC tuples are kept in ascending dense id order."""

    entries: dict[int, tuple[int, ...]]
    kc_universe: frozenset[int]

    def __post_init__(self):
        for q, kcs in self.entries.items():
            if not kcs:
                raise DataValidationError(f"question {q} has an empty KC set")
            if not set(kcs) <= self.kc_universe:
                raise DataValidationError(f"question {q} uses KCs outside the universe")

    def __getitem__(self, q):
        return self.entries[q]

    def __contains__(self, q):
        return q in self.entries

    @property
    def num_kcs(self):
        return len(self.kc_universe)

    @property
    def max_group_size(self):
        return max(len(k) for k in self.entries.values())

    def check_covers(self, logs):
        for log in logs:
            for it in log:
                if it.question_id not in self.entries:
                    raise DataValidationError(f"question {it.question_id} has no mapping entry")


@dataclass
class IdMap:
    """Bidirectional raw-id <-> dense-id table."""

    to_dense: dict[str, int] = field(default_factory=dict)

    @property
    def to_raw(self):
        return {v: k for k, v in self.to_dense.items()}

    def __len__(self):
        return len(self.to_dense)

    @classmethod
    def from_raw(cls, raw_ids):
        return cls({raw: i for i, raw in enumerate(sorted(set(raw_ids), key=natural_key))})

    def save(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["raw_id", "dense_id"])
            for raw, dense in sorted(self.to_dense.items(), key=lambda kv: kv[1]):
                w.writerow([raw, dense])

    @classmethod
    def load(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls({r["raw_id"]: int(r["dense_id"]) for r in rows})


@dataclass
class IngestionReport:
    rows_read: int = 0
    rows_kept: int = 0
    rows_missing_kc: int = 0
    multi_row_interactions_merged: int = 0
    questions_dropped_no_kc: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    logs: list[InteractionLog]
    mapping: KCMapping
    question_ids: IdMap
    kc_ids: IdMap
    report: IngestionReport = field(default_factory=IngestionReport)

    @property
    def students(self):
        return [log.student_id for log in self.logs]

    def subset(self, student_ids):
        keep = set(student_ids)
        return [log for log in self.logs if log.student_id in keep]


@dataclass(frozen=True)
class DatasetStats:
    num_questions: int
    num_kcs: int
    num_students: int
    num_kc_groups: int
    avg_kcs_per_question: Fraction

    def __post_init__(self):
        assert self.num_kc_groups <= self.num_questions
        assert self.avg_kcs_per_question >= 1

    @property
    def avg_rounded(self):
        return round(float(self.avg_kcs_per_question), 3)

    def as_row(self):
        return {
            "questions": self.num_questions,
            "kcs": self.num_kcs,
            "students": self.num_students,
            "kc_groups": self.num_kc_groups,
            "kcs_per_question": self.avg_rounded,
        }


def natural_key(raw):
    """Sort integers numerically and everything else lexically, ints first."""
    s = str(raw)
    if re.fullmatch(r"-?\d+", s):
        return (0, int(s), "")
    return (1, 0, s)


# ---------------------------------------------------------------------------
# loading


def load_dataset(source_path, dataset_kind="canonical"):
    """Load a raw export into a :class:`Dataset`.

    ``dataset_kind`` is ``"canonical"`` (a file or a prepared directory) or
    ``"assistments2009"`` (the skill-builder CSV export).
    """
    path = Path(source_path)
    if not path.exists():
        raise IngestIOError(f"input not found: {path}")
    if dataset_kind == "canonical":
        if path.is_dir():
            return load_prepared(path)
        return _load_canonical(path)
    if dataset_kind == "assistments2009":
        return _load_assistments2009(path)
    raise DataValidationError(f"unknown dataset kind {dataset_kind!r}")


def _parse_canonical_rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestIOError(str(exc)) from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CANONICAL_FIELDS:
            raise IngestionError(f"header must be {','.join(CANONICAL_FIELDS)}", row=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row[k] is None for k in CANONICAL_FIELDS):
                raise IngestionError("wrong number of fields", row=lineno)
            try:
                order = int(row["order"])
                response = int(row["response"])
            except ValueError as exc:
                raise IngestionError(str(exc), row=lineno) from None
            if response not in (0, 1) or order < 0:
                raise IngestionError("response must be 0/1 and order non-negative", row=lineno)
            kcs = [k for k in row["kc_ids"].split(";") if k != ""]
            if len(set(kcs)) != len(kcs):
                raise IngestionError("duplicate KC in kc_ids", row=lineno)
            student, question = row["student_id"], row["question_id"]
            if not student or not question:
                raise IngestionError("empty identifier", row=lineno)
            rows.append((lineno, student, order, question, kcs, response))
    return rows


def _load_canonical(path, question_ids=None, kc_ids=None):
    rows = _parse_canonical_rows(path)
    if not rows:
        raise EmptyInputError(f"{path} contains no interactions")
    report = IngestionReport(rows_read=len(rows))

    q_kcs = {}
    for lineno, _, _, question, kcs, _ in rows:
        prev = q_kcs.setdefault(question, frozenset(kcs))
        if prev != frozenset(kcs):
            raise IngestionError(f"question {question} has inconsistent KC sets", row=lineno)
    dropped = {q for q, kcs in q_kcs.items() if not kcs}
    report.questions_dropped_no_kc = len(dropped)
    rows = [r for r in rows if r[3] not in dropped]
    report.rows_missing_kc = report.rows_read - len(rows)
    report.rows_kept = len(rows)
    if not rows:
        raise EmptyInputError(f"{path} has no interactions with KCs")
    q_kcs = {q: k for q, k in q_kcs.items() if q not in dropped}
    return _assemble(rows, q_kcs, report, question_ids, kc_ids)


def _assemble(rows, q_kcs, report, question_ids=None, kc_ids=None):
    if question_ids is None:
        question_ids = IdMap.from_raw(q_kcs)
    if kc_ids is None:
        kc_ids = IdMap.from_raw(k for kcs in q_kcs.values() for k in kcs)
    for q in q_kcs:
        if q not in question_ids.to_dense:
            raise DataValidationError(f"question {q} missing from id map")
    entries = {
        question_ids.to_dense[q]: tuple(sorted(kc_ids.to_dense[k] for k in kcs))
        for q, kcs in q_kcs.items()
    }
    mapping = KCMapping(entries, frozenset(kc_ids.to_dense.values()))

    per_student = defaultdict(list)
    seen = {}
    for lineno, student, order, question, _, response in rows:
        if (student, order) in seen:
            raise IngestionError(
                f"duplicate (student, order) pair ({student}, {order}); first at row {seen[student, order]}",
                row=lineno,
            )
        seen[student, order] = lineno
        qd = question_ids.to_dense[question]
        per_student[student].append(Interaction(student, order, qd, entries[qd], response))
    logs = [
        InteractionLog(s, sorted(per_student[s], key=lambda it: it.order))
        for s in sorted(per_student, key=natural_key)
    ]
    return Dataset(logs, mapping, question_ids, kc_ids, report)


def _load_assistments2009(path):
    import pandas as pd

    try:
        df = pd.read_csv(path, encoding="latin1", low_memory=False)
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    needed = {"order_id", "user_id", "problem_id", "correct", "skill_id"}
    missing = needed - set(df.columns)
    if missing:
        raise IngestionError(f"missing columns {sorted(missing)}", row=1)
    if df.empty:
        raise EmptyInputError(f"{path} contains no rows")
    report = IngestionReport(rows_read=len(df))

    df = df[list(needed)].copy()
    df["_row"] = np.arange(len(df)) + 2
    bad = df[~df["correct"].isin([0, 1])]
    if len(bad):
        raise IngestionError(f"correct must be 0/1, got {bad['correct'].iloc[0]!r}", row=int(bad["_row"].iloc[0]))
    untagged = df["skill_id"].isna()
    report.rows_missing_kc = int(untagged.sum())
    df = df[~untagged]
    if df.empty:
        raise EmptyInputError(f"{path} has no skill-tagged rows")
    for col in ("user_id", "problem_id", "skill_id"):
        df[col] = df[col].map(_id_str)

    # multi-skill problems are exported as one row per skill sharing an order_id
    q_kcs = defaultdict(set)
    for q, k in zip(df["problem_id"], df["skill_id"]):
        q_kcs[q].add(k)
    grouped = df.groupby(["user_id", "order_id"], sort=False)
    rows = []
    for (user, order), g in grouped:
        if g["problem_id"].nunique() != 1:
            raise IngestionError(f"order {order} of user {user} spans several problems", row=int(g["_row"].iloc[0]))
        rows.append((int(g["_row"].iloc[0]), user, int(order), g["problem_id"].iloc[0], None, int(g["correct"].iloc[0])))
    report.multi_row_interactions_merged = len(df) - len(rows)
    report.rows_kept = len(df)
    return _assemble(rows, {q: frozenset(k) for q, k in q_kcs.items()}, report)


def _id_str(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# canonical writing


def write_canonical(dataset, out_dir):
    """Write interactions, both id maps and the ingestion report into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    q_raw = dataset.question_ids.to_raw
    kc_raw = dataset.kc_ids.to_raw
    with open(out / INTERACTIONS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_FIELDS)
        for log in dataset.logs:
            for it in log:
                w.writerow([
                    it.student_id,
                    it.order,
                    q_raw[it.question_id],
                    ";".join(kc_raw[k] for k in it.kc_ids),
                    it.response,
                ])
    dataset.question_ids.save(out / QUESTION_MAP_FILE)
    dataset.kc_ids.save(out / KC_MAP_FILE)
    (out / REPORT_FILE).write_text(json.dumps(dataset.report.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_prepared(data_dir):
    d = Path(data_dir)
    inter = d / INTERACTIONS_FILE
    if not inter.exists():
        raise IngestIOError(f"{d} is not a prepared data directory (no {INTERACTIONS_FILE})")
    qmap = IdMap.load(d / QUESTION_MAP_FILE) if (d / QUESTION_MAP_FILE).exists() else None
    kmap = IdMap.load(d / KC_MAP_FILE) if (d / KC_MAP_FILE).exists() else None
    ds = _load_canonical(inter, qmap, kmap)
    if (d / REPORT_FILE).exists():
        ds.report = IngestionReport(**json.loads((d / REPORT_FILE).read_text()))
    return ds


# ---------------------------------------------------------------------------
# transforms and statistics


def corr_transform(dataset):
    """Replace every KC ``c`` by two perfectly correlated copies ``2c`` and ``2c+1``."""
    entries = {
        q: tuple(sorted(x for c in kcs for x in (2 * c, 2 * c + 1)))
        for q, kcs in dataset.mapping.entries.items()
    }
    universe = frozenset(x for c in dataset.mapping.kc_universe for x in (2 * c, 2 * c + 1))
    raw = {}
    for r, c in dataset.kc_ids.to_dense.items():
        raw[f"{r}'"] = 2 * c
        raw[f"{r}''"] = 2 * c + 1
    logs = [
        InteractionLog(
            log.student_id,
            [Interaction(it.student_id, it.order, it.question_id, entries[it.question_id], it.response) for it in log],
        )
        for log in dataset.logs
    ]
    return Dataset(logs, KCMapping(entries, universe), dataset.question_ids, IdMap(raw), dataset.report)


def compute_stats(logs, mapping):
    logs = [log for log in logs if len(log)]
    if not logs:
        raise EmptyInputError("no interactions to summarise")
    questions = {it.question_id for log in logs for it in log}
    sets = [frozenset(mapping[q]) for q in questions]
    return DatasetStats(
        num_questions=len(questions),
        num_kcs=len(frozenset().union(*sets)),
        num_students=len({log.student_id for log in logs}),
        num_kc_groups=len(set(sets)),
        avg_kcs_per_question=Fraction(sum(len(s) for s in sets), len(sets)),
    )


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    test_students: tuple[str, ...]
    folds: list[tuple[tuple[str, ...], tuple[str, ...]]]
    seed: int

    def validate(self, population=None):
        test = set(self.test_students)
        pool = set().union(*(set(t) | set(v) for t, v in self.folds))
        if population is not None and pool | test != set(population):
            raise DataValidationError("split does not cover the population")
        seen_val = set()
        for i, (train, val) in enumerate(self.folds):
            tr, va = set(train), set(val)
            if tr & va or (tr | va) & test:
                raise DataValidationError(f"fold {i} overlaps")
            if tr | va != pool:
                raise DataValidationError(f"fold {i} does not cover the non-test population")
            if va & seen_val:
                raise DataValidationError(f"fold {i} validation overlaps an earlier fold")
            seen_val |= va
        if seen_val != pool:
            raise DataValidationError("validation sets do not cover the non-test population")
        return True

    def to_dict(self):
        return {
            "version": 1,
            "seed": self.seed,
            "test_students": list(self.test_students),
            "folds": [{"train": list(t), "validation": list(v)} for t, v in self.folds],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["test_students"]),
            [(tuple(f["train"]), tuple(f["validation"])) for f in d["folds"]],
            int(d["seed"]),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise IngestIOError(str(exc)) from exc


def split_dataset(logs, test_fraction=0.2, folds=5, seed=0):
    """Student-level hold-out test set plus ``folds``-way CV over the rest."""
    if not 0 < test_fraction < 1:
        raise DataValidationError("test_fraction must lie in (0, 1)")
    if folds < 2:
        raise DataValidationError("need at least 2 folds")
    students = sorted({log.student_id for log in logs}, key=natural_key)
    n = len(students)
    n_test = int(round(n * test_fraction))
    if n < folds + 1 or n_test < 1 or n - n_test < folds:
        raise DataValidationError(
            f"{n} students cannot provide a test set and {folds} non-empty validation folds"
        )
    rng = np.random.default_rng(seed)
    order = [students[i] for i in rng.permutation(n)]
    test, rest = order[:n_test], order[n_test:]
    chunks = [list(c) for c in np.array_split(np.array(rest, dtype=object), folds)]
    plan = []
    for i, val in enumerate(chunks):
        train = [s for j, c in enumerate(chunks) if j != i for s in c]
        plan.append((tuple(train), tuple(val)))
    return SplitPlan(tuple(test), plan, seed)


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic(
    num_students,
    num_questions,
    num_kcs,
    kcs_per_question,
    seed=0,
    correlation_mode="independent",
    questions_per_student=50,
    learning_rate=0.1,
):
    """Sample logs from a per-(student, KC) proficiency model.

    P(correct) is the logistic of the mean proficiency over the question's
    KCs minus a question difficulty; every attempt nudges the proficiencies
    of the practised KCs upward. ``duplicated`` mode draws the independent
    dataset and then doubles every KC with :func:`corr_transform`.
    """
    if min(num_students, num_questions, num_kcs, questions_per_student) < 1 or kcs_per_question < 1:
        raise DataValidationError("counts must be positive")
    if kcs_per_question > num_kcs:
        raise DataValidationError("kcs_per_question exceeds num_kcs")
    if correlation_mode not in ("independent", "duplicated"):
        raise DataValidationError(f"unknown correlation mode {correlation_mode!r}")
    rng = np.random.default_rng(seed)
    q_kcs = [tuple(sorted(rng.choice(num_kcs, size=kcs_per_question, replace=False).tolist())) for _ in range(num_questions)]
    difficulty = rng.normal(0.0, 1.0, size=num_questions)
    ability = rng.normal(0.0, 1.0, size=num_students)
    kc_offset = rng.normal(0.0, 0.8, size=(num_students, num_kcs))

    width = len(str(max(num_students, num_questions, num_kcs) - 1))
    rows = []
    for s in range(num_students):
        prof = ability[s] + kc_offset[s]
        for t, q in enumerate(rng.integers(0, num_questions, size=questions_per_student)):
            kcs = q_kcs[q]
            p = 1.0 / (1.0 + np.exp(-(prof[list(kcs)].mean() - difficulty[q])))
            r = int(rng.random() < p)
            prof[list(kcs)] += learning_rate
            rows.append((0, f"s{s:0{width}d}", t, f"q{q:0{width}d}", None, r))
    used = {r[3] for r in rows}
    q_map = {f"q{q:0{width}d}": frozenset(f"k{c:0{width}d}" for c in q_kcs[q]) for q in range(num_questions)}
    q_map = {q: k for q, k in q_map.items() if q in used}
    ds = _assemble(rows, q_map, IngestionReport(rows_read=len(rows), rows_kept=len(rows)))
    if correlation_mode == "duplicated":
        ds = corr_transform(ds)
    return ds
