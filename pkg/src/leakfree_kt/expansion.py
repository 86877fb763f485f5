"""Question-to-KC expansion, labeling policies and question-budget windowing."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import DataValidationError

INCORRECT, CORRECT, MASK = 0, 1, 2
# pad steps never reach an embedding lookup; collation swaps them for index 0 under valid=False
PAD_ID = -1
POLICIES = ("ground_truth", "mask_last")
DEFAULT_WINDOW = 100


@dataclass(frozen=True)
class ExpandedStep:
    question_id: int
    kc_id: int
    input_label: int
    target: int
    group_index: int
    group_size: int
    is_last_in_group: bool
    occurrence: int  # index of the originating interaction in the student's log

    def __post_init__(self):
        if not 0 <= self.group_index < self.group_size:
            raise DataValidationError("group_index out of range")
        if self.is_last_in_group != (self.group_index == self.group_size - 1):
            raise DataValidationError("is_last_in_group inconsistent with group_index")


@dataclass
class ExpandedSequence:
    student_id: str
    steps: list[ExpandedStep]
    policy: str = "ground_truth"

    @property
    def question_count(self):
        return len({s.occurrence for s in self.steps})

    @property
    def occurrences(self):
        """Distinct occurrence indices in order."""
        out = []
        for s in self.steps:
            if not out or out[-1] != s.occurrence:
                out.append(s.occurrence)
        return out

    @property
    def start(self):
        return self.steps[0].occurrence if self.steps else 0

    def __len__(self):
        return len(self.steps)

    @cached_property
    def arrays(self):
        """Column arrays of the steps, used by batch collation."""
        st = self.steps
        return {
            "kc": np.array([s.kc_id for s in st], dtype=np.int64),
            "qid": np.array([s.question_id for s in st], dtype=np.int64),
            "label": np.array([s.input_label for s in st], dtype=np.int64),
            "target": np.array([s.target for s in st], dtype=np.int64),
            "group_index": np.array([s.group_index for s in st], dtype=np.int64),
            "group_size": np.array([s.group_size for s in st], dtype=np.int64),
            "occurrence": np.array([s.occurrence for s in st], dtype=np.int64),
            "is_last": np.array([s.is_last_in_group for s in st], dtype=bool),
        }

    def groups(self):
        """Yield ``(occurrence, [step positions])`` for each question occurrence."""
        cur, idx = None, []
        for i, s in enumerate(self.steps):
            if s.occurrence != cur and idx:
                yield cur, idx
                idx = []
            cur = s.occurrence
            idx.append(i)
        if idx:
            yield cur, idx


def _label(policy, target, is_last):
    if policy == "ground_truth" or is_last:
        return target
    return MASK


def expand(log, mapping, policy="ground_truth", start=0):
    """Replace each interaction by one step per KC of its question, KCs in ascending id order."""
    if policy not in POLICIES:
        raise DataValidationError(f"unknown labeling policy {policy!r}")
    steps = []
    for occ, it in enumerate(log, start=start):
        if it.question_id not in mapping:
            raise DataValidationError(f"question {it.question_id} has no KC mapping entry")
        kcs = sorted(mapping[it.question_id])
        n = len(kcs)
        for gi, c in enumerate(kcs):
            last = gi == n - 1
            steps.append(ExpandedStep(it.question_id, c, _label(policy, it.response, last), it.response, gi, n, last, occ))
    return ExpandedSequence(log.student_id, steps, policy)


def relabel(seq, policy):
    """Same steps under another labeling policy."""
    steps = [replace(s, input_label=_label(policy, s.target, s.is_last_in_group)) for s in seq.steps]
    return ExpandedSequence(seq.student_id, steps, policy)


def flip_response(seq, occurrence):
    """Flip the response of one occurrence in targets and in every label that exposes it."""
    steps = []
    for s in seq.steps:
        if s.occurrence == occurrence:
            label = s.input_label if s.input_label == MASK else 1 - s.input_label
            s = replace(s, target=1 - s.target, input_label=label)
        steps.append(s)
    return ExpandedSequence(seq.student_id, steps, seq.policy)


def collapse(seq):
    """One ``(question_id, target)`` pair per occurrence."""
    return [(seq.steps[idx[0]].question_id, seq.steps[idx[0]].target) for _, idx in seq.groups()]


@dataclass
class WindowPlan:
    window_questions: int
    windows: list[ExpandedSequence]
    expanded: bool = True
    step_capacity: int = 0
    split_rule: str = "split"

    def __post_init__(self):
        for w in self.windows:
            if w.question_count > self.window_questions:
                raise DataValidationError("window exceeds its question budget")

    def target_keys(self):
        """Multiset of (student, occurrence, first occurrence of its window)."""
        return Counter((w.student_id, occ, w.start) for w in self.windows for occ in w.occurrences)

    def __len__(self):
        return len(self.windows)


def window(sequence, W=DEFAULT_WINDOW, max_group_size=None, expanded=True):
    """Cut a sequence into consecutive slices of at most ``W`` question occurrences.

    Groups are never split. Long histories become several windows; nothing is
    truncated.
    """
    if W < 1:
        raise DataValidationError("window size must be >= 1")
    groups = list(sequence.groups())
    if max_group_size is None:
        max_group_size = max((len(idx) for _, idx in groups), default=1)
    windows = []
    for i in range(0, len(groups), W):
        chunk = groups[i:i + W]
        steps = [sequence.steps[j] for _, idx in chunk for j in idx]
        windows.append(ExpandedSequence(sequence.student_id, steps, sequence.policy))
    return WindowPlan(W, windows, expanded, W * max_group_size)


def plan_windows(logs, mapping, policy="ground_truth", W=DEFAULT_WINDOW, expanded=True):
    """Expand and window every log with a dataset-wide step capacity."""
    gmax = mapping.max_group_size
    windows = []
    for log in logs:
        if len(log) == 0:
            continue
        windows.extend(window(expand(log, mapping, policy), W, gmax, expanded).windows)
    return WindowPlan(W, windows, expanded, W * gmax)


def fairness_check(plans):
    """Check that every model is scored on the same targets with the same history extent.

    ``plans`` maps a model name to its :class:`WindowPlan`. Returns
    ``(ok, report)`` where the report lists window sizes and, per model, the
    targets that differ from the first model's.
    """
    names = list(plans)
    report = {
        "window_questions": {n: plans[n].window_questions for n in names},
        "divergences": {},
    }
    if not names:
        return True, report
    ref_name = names[0]
    ref = plans[ref_name].target_keys()
    ok = True
    for n in names[1:]:
        keys = plans[n].target_keys()
        if keys != ref:
            ok = False
            only_ref = sorted((ref - keys).elements())
            only_n = sorted((keys - ref).elements())
            report["divergences"][n] = {
                f"only_in_{ref_name}": [list(k) for k in only_ref],
                f"only_in_{n}": [list(k) for k in only_n],
            }
    report["fair"] = ok
    return ok, report


def dump_steps(seq, fh):
    """Write one tab-separated line per step; MASK labels print as ``M``."""
    for s in seq.steps:
        label = "M" if s.input_label == MASK else str(s.input_label)
        fh.write(
            f"{seq.student_id}\t{s.question_id}\t{s.kc_id}\t{label}\t{s.target}\t"
            f"{s.group_index}\t{s.group_size}\t{int(s.is_last_in_group)}\n"
        )
