from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from leakfree_kt.data import (
    IdMap,
    Interaction,
    InteractionLog,
    KCMapping,
    SplitPlan,
    compute_stats,
    corr_transform,
    generate_synthetic,
    load_dataset,
    load_prepared,
    split_dataset,
    write_canonical,
)
from leakfree_kt.errors import (
    DataValidationError,
    EmptyInputError,
    IngestIOError,
    IngestionError,
)

HEADER = "student_id,order,question_id,kc_ids,response\n"

ASSIST_HEADER = "order_id,assignment_id,user_id,assistment_id,problem_id,original,correct,skill_id,skill_name\n"


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_canonical_two_students(tmp_path):
    p = write(tmp_path, HEADER + "a,1,q1,k1;k2,1\nb,0,q2,k1,0\na,0,q2,k1,0\n")
    ds = load_dataset(p, "canonical")
    assert [len(log) for log in ds.logs] == [2, 1]
    assert [it.order for it in ds.logs[0]] == [0, 1]
    assert ds.logs[0].student_id == "a"
    assert ds.mapping[ds.question_ids.to_dense["q1"]] == (0, 1)


def test_duplicate_student_order_rejected(tmp_path):
    p = write(tmp_path, HEADER + "a,1,q1,k1,1\na,1,q2,k1,0\n")
    with pytest.raises(IngestionError, match="row 3"):
        load_dataset(p, "canonical")


@pytest.mark.parametrize("row", ["a,x,q1,k1,1", "a,1,q1,k1,3", "a,1,q1,k1", "a,1,q1,k1;k1,1"])
def test_bad_rows_name_row_number(tmp_path, row):
    p = write(tmp_path, HEADER + "a,0,q1,k1,1\n" + row + "\n")
    with pytest.raises(IngestionError) as exc:
        load_dataset(p, "canonical")
    assert exc.value.row == 3


def test_empty_and_missing(tmp_path):
    with pytest.raises(EmptyInputError):
        load_dataset(write(tmp_path, HEADER), "canonical")
    with pytest.raises(IngestIOError):
        load_dataset(tmp_path / "nope.csv", "canonical")


def test_question_without_kcs_dropped_and_counted(tmp_path):
    p = write(tmp_path, HEADER + "a,0,q1,k1,1\na,1,q9,,0\nb,0,q9,,1\n")
    ds = load_dataset(p, "canonical")
    assert ds.report.questions_dropped_no_kc == 1
    assert ds.report.rows_missing_kc == 2
    assert [len(log) for log in ds.logs] == [1]


def test_interaction_invariants():
    with pytest.raises(DataValidationError):
        Interaction("a", 0, 0, (), 1)
    with pytest.raises(DataValidationError):
        Interaction("a", 0, 0, (1, 1), 1)
    with pytest.raises(DataValidationError):
        Interaction("a", 0, 0, (1,), 2)
    with pytest.raises(DataValidationError):
        InteractionLog("a", [Interaction("a", 1, 0, (1,), 1), Interaction("a", 1, 0, (1,), 0)])


def test_assistments_loader(tmp_path):
    rows = [
        "1,10,u1,100,p1,1,1,5,add",
        "1,10,u1,100,p1,1,1,7,sub",  # same order_id: a multi-skill problem
        "2,10,u1,101,p2,1,0,5,add",
        "3,10,u2,101,p2,1,1,5,add",
        "4,10,u2,102,p3,1,0,,",  # untagged
    ]
    ds = load_dataset(write(tmp_path, ASSIST_HEADER + "\n".join(rows) + "\n"), "assistments2009")
    stats = compute_stats(ds.logs, ds.mapping)
    assert (stats.num_questions, stats.num_kcs, stats.num_students, stats.num_kc_groups) == (2, 2, 2, 2)
    assert stats.avg_kcs_per_question == Fraction(3, 2)
    assert ds.report.rows_missing_kc == 1
    assert ds.report.multi_row_interactions_merged == 1
    assert [it.response for it in ds.logs[0]] == [1, 0]


def test_assistments_bad_correct(tmp_path):
    p = write(tmp_path, ASSIST_HEADER + "1,10,u1,100,p1,1,1,5,a\n2,10,u1,100,p1,1,7,5,a\n")
    with pytest.raises(IngestionError) as exc:
        load_dataset(p, "assistments2009")
    assert exc.value.row == 3


def test_stats_hand_count():
    m = KCMapping({0: (0,), 1: (0, 1)}, frozenset({0, 1}))
    logs = [InteractionLog("a", [Interaction("a", 0, 0, (0,), 1), Interaction("a", 1, 1, (0, 1), 0)])]
    s = compute_stats(logs, m)
    assert (s.num_questions, s.num_kcs, s.num_kc_groups, s.avg_kcs_per_question) == (2, 2, 2, Fraction(3, 2))
    with pytest.raises(EmptyInputError):
        compute_stats([], m)


def test_corr_transform_pair():
    m = KCMapping({0: (0, 1)}, frozenset({0, 1}))
    logs = [InteractionLog("a", [Interaction("a", 0, 0, (0, 1), 1)])]
    from leakfree_kt.data import Dataset

    ds = corr_transform(Dataset(logs, m, IdMap({"q": 0}), IdMap({"a": 0, "b": 1})))
    assert ds.mapping[0] == (0, 1, 2, 3)
    assert ds.kc_ids.to_raw == {0: "a'", 1: "a''", 2: "b'", 3: "b''"}
    assert ds.logs[0][0].kc_ids == (0, 1, 2, 3) and ds.logs[0][0].response == 1
    twice = corr_transform(ds)
    assert twice.mapping.num_kcs == 8


@given(seed=st.integers(0, 10_000), k=st.integers(1, 3))
def test_corr_transform_doubles_stats(seed, k):
    ds = generate_synthetic(5, 8, 4, k, seed=seed, questions_per_student=6)
    a = compute_stats(ds.logs, ds.mapping)
    c = corr_transform(ds)
    b = compute_stats(c.logs, c.mapping)
    assert (b.num_questions, b.num_students, b.num_kc_groups) == (a.num_questions, a.num_students, a.num_kc_groups)
    assert b.num_kcs == 2 * a.num_kcs
    assert b.avg_kcs_per_question == 2 * a.avg_kcs_per_question
    assert c.mapping.num_kcs == 2 * ds.mapping.num_kcs
    assert {x // 2 for x in c.mapping.kc_universe} == set(ds.mapping.kc_universe)


def test_canonical_round_trip(tmp_path, small_synthetic):
    for ds in (small_synthetic, corr_transform(small_synthetic)):
        out = write_canonical(ds, tmp_path / f"d{ds.mapping.num_kcs}")
        back = load_prepared(out)
        assert back.logs == ds.logs
        assert back.mapping == ds.mapping
        assert back.question_ids == ds.question_ids and back.kc_ids == ds.kc_ids


def test_split_arithmetic():
    logs = [InteractionLog(f"s{i}", [Interaction(f"s{i}", 0, 0, (0,), 1)]) for i in range(100)]
    plan = split_dataset(logs, 0.2, 5, seed=4)
    assert len(plan.test_students) == 20
    assert [(len(t), len(v)) for t, v in plan.folds] == [(64, 16)] * 5
    assert plan.validate([log.student_id for log in logs])
    assert split_dataset(logs, 0.2, 5, seed=4) == plan
    assert split_dataset(logs, 0.2, 5, seed=5) != plan


def test_split_too_few_students():
    logs = [InteractionLog(f"s{i}", [Interaction(f"s{i}", 0, 0, (0,), 1)]) for i in range(5)]
    with pytest.raises(DataValidationError):
        split_dataset(logs, 0.2, 5, seed=0)


@given(n=st.integers(6, 80), folds=st.integers(2, 5), frac=st.floats(0.1, 0.5), seed=st.integers(0, 99))
def test_split_invariants(n, folds, frac, seed):
    logs = [InteractionLog(f"s{i}", [Interaction(f"s{i}", 0, 0, (0,), 1)]) for i in range(n)]
    try:
        plan = split_dataset(logs, frac, folds, seed)
    except DataValidationError:
        return
    test = set(plan.test_students)
    pool = {f"s{i}" for i in range(n)} - test
    vals = [set(v) for _, v in plan.folds]
    assert set().union(*vals) == pool and sum(map(len, vals)) == len(pool)
    for t, v in plan.folds:
        assert not set(t) & set(v) and set(t) | set(v) == pool and not (set(t) | set(v)) & test


def test_split_persistence(tmp_path):
    logs = [InteractionLog(f"s{i}", [Interaction(f"s{i}", 0, 0, (0,), 1)]) for i in range(12)]
    plan = split_dataset(logs, 0.25, 3, seed=1)
    plan.save(tmp_path / "split.json")
    assert SplitPlan.load(tmp_path / "split.json") == plan


def test_synthetic_examples():
    ds = generate_synthetic(10, 20, 5, 2, seed=7, correlation_mode="independent")
    assert compute_stats(ds.logs, ds.mapping).avg_kcs_per_question == 2
    again = generate_synthetic(10, 20, 5, 2, seed=7, correlation_mode="independent")
    assert again.logs == ds.logs and again.mapping == ds.mapping
    dup = generate_synthetic(10, 20, 5, 2, seed=7, correlation_mode="duplicated")
    for kcs in dup.mapping.entries.values():
        assert len(kcs) % 2 == 0
        assert sorted(kcs) == sorted(x for c in {k // 2 for k in kcs} for x in (2 * c, 2 * c + 1))
