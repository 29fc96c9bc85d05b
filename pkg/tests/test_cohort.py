import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthpatterns.cohort import (
    RETAINED_VISITS,
    AttributeKind,
    ChildRecord,
    VisitObservation,
    attach_demographics,
    cohort_to_csv,
    complete_case_matrix,
    compute_bmi,
    drop_visit,
    parse_cohort_csv,
    parse_demographics_csv,
)
from growthpatterns.errors import DataError

HEADER = "child_id,visit_index,age_months,weight_kg,height_cm\n"


def parse(text):
    return parse_cohort_csv(io.StringIO(text))


def full_child(cid, weight=10.0, height=80.0, skip=(), height_missing=()):
    visits = []
    for v in range(1, 14):
        if v in skip:
            continue
        visits.append(
            VisitObservation(v, float(v * 3), weight + v, None if v in height_missing else height + v)
        )
    return ChildRecord(cid, tuple(visits))


class TestParse:
    def test_two_rows_one_child(self):
        recs = parse(HEADER + "A,1,0.2,3.5,50\nA,3,2.0,5.1,56\n")
        assert len(recs) == 1
        assert recs[0].visit_indices == (1, 3)
        assert recs[0].visit(3).weight_kg == 5.1

    def test_empty_weight_is_absent(self):
        (rec,) = parse(HEADER + "A,1,0.2,,50\n")
        assert rec.visit(1).weight_kg is None
        assert rec.visit(1).height_cm == 50.0

    def test_bmi_not_read_but_derived(self):
        (rec,) = parse(HEADER + "A,1,0.2,16,80\n")
        assert rec.visit(1).bmi == pytest.approx(25.0)

    def test_duplicate_child_visit(self):
        with pytest.raises(DataError, match="duplicate"):
            parse(HEADER + "A,1,0.2,3.5,50\nA,1,0.3,3.6,51\n")

    @pytest.mark.parametrize(
        "body, match",
        [
            ("A,14,1,3,50\n", "outside"),
            ("A,0,1,3,50\n", "outside"),
            ("A,1,1,abc,50\n", "not numeric"),
            ("A,x,1,3,50\n", "integer"),
            ("A,1,1,0,50\n", "positive"),
            ("A,1,1,3,-2\n", "positive"),
            ("A,1,,3,50\n", "age_months is required"),
            ("A,1,1,3\n", "fields"),
        ],
    )
    def test_bad_rows(self, body, match):
        with pytest.raises(DataError, match=match):
            parse(HEADER + body)

    def test_bad_header(self):
        with pytest.raises(DataError, match="header"):
            parse("id,visit,age,w,h\nA,1,1,3,50\n")

    def test_empty_file(self):
        with pytest.raises(DataError):
            parse("")

    def test_crlf_and_bom(self):
        text = "\ufeff" + HEADER.replace("\n", "\r\n") + "A,1,0.2,3.5,50\r\n"
        (rec,) = parse(text)
        assert rec.visit(1).height_cm == 50.0

    def test_decreasing_age_rejected(self):
        with pytest.raises(DataError, match="age decreases"):
            parse(HEADER + "A,1,5,3.5,50\nA,3,2,5.1,56\n")

    def test_demographics_join(self):
        recs = parse(HEADER + "A,1,0.2,3.5,50\nB,1,0.3,3.1,49\n")
        demo = parse_demographics_csv(io.StringIO("child_id,sex,ethnicity\nA,F,x\n"))
        out = attach_demographics(recs, demo)
        assert (out[0].sex, out[0].ethnicity) == ("F", "x")
        assert out[1].sex is None


class TestBmi:
    def test_examples(self):
        assert compute_bmi(20, 100) == 20.0
        assert compute_bmi(16, 80) == 25.0

    def test_cm_units_flag(self):
        assert compute_bmi(16, 80, height_in_metres=False) == pytest.approx(16 / 6400)

    @pytest.mark.parametrize("w, h", [(20, 0), (0, 100), (-1, 100)])
    def test_degenerate(self, w, h):
        with pytest.raises(DataError):
            compute_bmi(w, h)


class TestDropVisit:
    def test_drops_visit_two(self):
        rec = ChildRecord("A", (VisitObservation(1, 0.1, 3), VisitObservation(2, 1, 4), VisitObservation(3, 2, 5)))
        (out,) = drop_visit([rec], 2)
        assert out.visit_indices == (1, 3)
        assert out.visit(3) == rec.visit(3)

    def test_noop_without_visit(self):
        rec = ChildRecord("A", (VisitObservation(1, 0.1, 3), VisitObservation(3, 2, 5)))
        assert drop_visit([rec], 2) == [rec]

    def test_out_of_range(self):
        with pytest.raises(DataError):
            drop_visit([], 14)


class TestCompleteCase:
    def test_filters_incomplete_weight(self):
        recs = drop_visit([full_child("a"), full_child("b"), full_child("c", skip=(5,))])
        m = complete_case_matrix(recs, "weight")
        assert m.child_ids == ("a", "b")
        assert m.values.shape == (2, 12)

    def test_weight_but_not_bmi(self):
        recs = drop_visit([full_child("a", height_missing=(1,)), full_child("b")])
        assert complete_case_matrix(recs, "weight").n_children == 2
        assert complete_case_matrix(recs, AttributeKind.BMI).child_ids == ("b",)

    def test_visit_mean_ages_by_independent_summation(self):
        recs = []
        for i in range(5):
            visits = tuple(VisitObservation(v, v * 2.0 + 0.1 * i + 0.01 * v * i, 5.0 + v) for v in range(1, 14))
            recs.append(ChildRecord(f"k{i}", visits))
        m = complete_case_matrix(drop_visit(recs), "weight")
        for col, v in enumerate(RETAINED_VISITS):
            total = 0.0
            for i in range(5):
                total += v * 2.0 + 0.1 * i + 0.01 * v * i
            assert m.visit_mean_ages[col] == pytest.approx(total / 5, rel=1e-12)

    def test_rows_sorted_by_id(self):
        recs = drop_visit([full_child("z"), full_child("a"), full_child("m")])
        assert complete_case_matrix(recs, "height").child_ids == ("a", "m", "z")

    def test_empty_matrix(self):
        with pytest.raises(DataError, match="empty matrix"):
            complete_case_matrix(drop_visit([full_child("a", skip=(4,))]), "weight")

    def test_requires_visit_two_dropped(self):
        with pytest.raises(DataError, match="drop_visit"):
            complete_case_matrix([full_child("a")], "weight")

    def test_bmi_entries_match_compute_bmi(self, small_spec):
        from growthpatterns.synth import generate_cohort

        recs = drop_visit(generate_cohort(small_spec).records)
        bmi = complete_case_matrix(recs, "bmi")
        w = complete_case_matrix(recs, "weight").subset(bmi.child_ids)
        h = complete_case_matrix(recs, "height").subset(bmi.child_ids)
        expected = np.vectorize(compute_bmi)(w.values, h.values)
        np.testing.assert_allclose(bmi.values, expected, rtol=1e-12, atol=0)

    def test_idempotent_filter(self, small_spec):
        from growthpatterns.synth import generate_cohort

        recs = drop_visit(generate_cohort(small_spec).records)
        m = complete_case_matrix(recs, "weight")
        kept = [r for r in recs if r.child_id in set(m.child_ids)]
        m2 = complete_case_matrix(kept, "weight")
        assert m2.child_ids == m.child_ids
        np.testing.assert_array_equal(m2.values, m.values)
        assert m2.values.shape[1] == 12


finite = st.floats(min_value=0.01, max_value=500, allow_nan=False, allow_infinity=False)


@st.composite
def cohorts(draw):
    n = draw(st.integers(1, 5))
    recs = []
    for i in range(n):
        vs = sorted(draw(st.sets(st.integers(1, 13), min_size=1, max_size=13)))
        ages = sorted(draw(st.lists(st.floats(0, 80, allow_nan=False), min_size=len(vs), max_size=len(vs))))
        visits = tuple(
            VisitObservation(v, a, draw(st.none() | finite), draw(st.none() | finite)) for v, a in zip(vs, ages)
        )
        recs.append(ChildRecord(f"id{i}", visits))
    return recs


@settings(max_examples=60, deadline=None)
@given(cohorts())
def test_csv_round_trip(recs):
    text = cohort_to_csv(recs)
    back = parse(text)
    assert back == recs
    assert cohort_to_csv(back) == text
