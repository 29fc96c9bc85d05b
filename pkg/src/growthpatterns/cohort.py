"""Visit-level cohort records and complete-case trajectory matrices.

A cohort CSV has one row per (child, visit)::

    child_id,visit_index,age_months,weight_kg,height_cm

Missing measurements are empty fields. BMI is derived, never read.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from growthpatterns.errors import DataError

N_VISITS = 13
EXCLUDED_VISIT = 2
RETAINED_VISITS: tuple[int, ...] = tuple(v for v in range(1, N_VISITS + 1) if v != EXCLUDED_VISIT)

COHORT_HEADER = ("child_id", "visit_index", "age_months", "weight_kg", "height_cm")
DEMOGRAPHICS_HEADER = ("child_id", "sex", "ethnicity")


class AttributeKind(str, enum.Enum):
    WEIGHT = "weight"
    HEIGHT = "height"
    BMI = "bmi"

    @property
    def units(self) -> str:
        return {"weight": "kg", "height": "cm", "bmi": "kg/m^2"}[self.value]


def compute_bmi(weight_kg: float, height_cm: float, height_in_metres: bool = True) -> float:
    """Body mass index, weight over squared height.

    Heights are converted cm -> m unless ``height_in_metres`` is False, in
    which case the result is in kg/cm^2.
    """
    if not (weight_kg > 0) or not (height_cm > 0):
        raise DataError(f"BMI needs positive weight and height, got {weight_kg!r}, {height_cm!r}")
    if height_in_metres:
        return weight_kg * 10000.0 / (height_cm * height_cm)
    return weight_kg / (height_cm * height_cm)


@dataclass(frozen=True)
class VisitObservation:
    visit_index: int
    age_months: float
    weight_kg: float | None = None
    height_cm: float | None = None

    def __post_init__(self):
        if not 1 <= self.visit_index <= N_VISITS:
            raise DataError(f"visit_index {self.visit_index} outside 1..{N_VISITS}")
        if not (self.age_months >= 0) or math.isinf(self.age_months):
            raise DataError(f"age_months must be a finite non-negative number, got {self.age_months!r}")
        for name in ("weight_kg", "height_cm"):
            v = getattr(self, name)
            if v is not None and (not (v > 0) or math.isinf(v)):
                raise DataError(f"{name} must be positive, got {v!r}")

    @property
    def bmi(self) -> float | None:
        if self.weight_kg is None or self.height_cm is None:
            return None
        return compute_bmi(self.weight_kg, self.height_cm)

    def value(self, attribute: AttributeKind, height_in_metres: bool = True) -> float | None:
        attribute = AttributeKind(attribute)
        if attribute is AttributeKind.WEIGHT:
            return self.weight_kg
        if attribute is AttributeKind.HEIGHT:
            return self.height_cm
        if self.weight_kg is None or self.height_cm is None:
            return None
        return compute_bmi(self.weight_kg, self.height_cm, height_in_metres)


@dataclass(frozen=True)
class ChildRecord:
    child_id: str
    visits: tuple[VisitObservation, ...] = ()
    sex: str | None = None
    ethnicity: str | None = None

    def __post_init__(self):
        visits = tuple(sorted(self.visits, key=lambda v: v.visit_index))
        seen = set()
        for v in visits:
            if v.visit_index in seen:
                raise DataError(f"child {self.child_id!r}: duplicate visit {v.visit_index}")
            seen.add(v.visit_index)
        for prev, cur in zip(visits, visits[1:]):
            if cur.age_months < prev.age_months:
                raise DataError(
                    f"child {self.child_id!r}: age decreases between visits "
                    f"{prev.visit_index} and {cur.visit_index}"
                )
        object.__setattr__(self, "visits", visits)

    def visit(self, visit_index: int) -> VisitObservation | None:
        for v in self.visits:
            if v.visit_index == visit_index:
                return v
        return None

    @property
    def visit_indices(self) -> tuple[int, ...]:
        return tuple(v.visit_index for v in self.visits)


@dataclass(frozen=True)
class TrajectoryMatrix:
    """Complete-case N x 12 matrix for one attribute.

    ``ages`` holds each child's age at each retained visit so that curves
    drawn from a subset of children can use that subset's mean ages.
    """

    attribute: AttributeKind
    child_ids: tuple[str, ...]
    values: np.ndarray
    ages: np.ndarray
    visits: tuple[int, ...] = RETAINED_VISITS
    visit_mean_ages: np.ndarray = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        ages = np.asarray(self.ages, dtype=float)
        if values.ndim != 2 or values.shape[0] != len(self.child_ids):
            raise DataError("values must be an N x d matrix with one row per child id")
        if ages.shape != values.shape:
            raise DataError("ages must have the same shape as values")
        if values.shape[1] != len(self.visits):
            raise DataError("one column per retained visit expected")
        if values.shape[0] == 0:
            raise DataError("empty matrix")
        if not np.all(np.isfinite(values)):
            raise DataError("matrix has missing or non-finite entries")
        if len(set(self.child_ids)) != len(self.child_ids):
            raise DataError("duplicate child ids in matrix")
        values.setflags(write=False)
        ages.setflags(write=False)
        object.__setattr__(self, "attribute", AttributeKind(self.attribute))
        object.__setattr__(self, "child_ids", tuple(self.child_ids))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ages", ages)
        mean_ages = ages.mean(axis=0)
        mean_ages.setflags(write=False)
        object.__setattr__(self, "visit_mean_ages", mean_ages)

    @property
    def n_children(self) -> int:
        return self.values.shape[0]

    def subset(self, child_ids: Iterable[str]) -> TrajectoryMatrix:
        wanted = set(child_ids)
        rows = [i for i, cid in enumerate(self.child_ids) if cid in wanted]
        if len(rows) != len(wanted):
            missing = sorted(wanted - set(self.child_ids))[:5]
            raise DataError(f"ids not in matrix: {missing}")
        return TrajectoryMatrix(
            self.attribute,
            tuple(self.child_ids[i] for i in rows),
            self.values[rows],
            self.ages[rows],
            self.visits,
        )


def _parse_float(text: str, what: str, line: int) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: {what} is not numeric: {text!r}") from None
    if math.isnan(value):
        raise DataError(f"line {line}: {what} is NaN")
    return value


def parse_cohort_csv(stream: TextIO) -> list[ChildRecord]:
    """Read cohort rows into one :class:`ChildRecord` per child, in first-seen order."""
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty cohort file") from None
    if header and header[0].startswith("\ufeff"):
        header[0] = header[0][1:]
    if tuple(h.strip() for h in header) != COHORT_HEADER:
        raise DataError(f"bad header {header!r}; expected {','.join(COHORT_HEADER)}")

    visits: dict[str, dict[int, VisitObservation]] = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(COHORT_HEADER):
            raise DataError(f"line {line}: expected {len(COHORT_HEADER)} fields, got {len(row)}")
        child_id = row[0].strip()
        if not child_id:
            raise DataError(f"line {line}: empty child_id")
        try:
            visit_index = int(row[1].strip())
        except ValueError:
            raise DataError(f"line {line}: visit_index is not an integer: {row[1]!r}") from None
        age = _parse_float(row[2], "age_months", line)
        if age is None:
            raise DataError(f"line {line}: age_months is required")
        weight = _parse_float(row[3], "weight_kg", line)
        height = _parse_float(row[4], "height_cm", line)
        try:
            obs = VisitObservation(visit_index, age, weight, height)
        except DataError as exc:
            raise DataError(f"line {line}: {exc}") from None
        child_visits = visits.setdefault(child_id, {})
        if visit_index in child_visits:
            raise DataError(f"line {line}: duplicate row for child {child_id!r} visit {visit_index}")
        child_visits[visit_index] = obs

    return [ChildRecord(cid, tuple(v.values())) for cid, v in visits.items()]


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_cohort_csv(records: Iterable[ChildRecord], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(COHORT_HEADER)
    for rec in records:
        for v in rec.visits:
            writer.writerow(
                [rec.child_id, v.visit_index, _fmt(v.age_months), _fmt(v.weight_kg), _fmt(v.height_cm)]
            )


def cohort_to_csv(records: Iterable[ChildRecord]) -> str:
    buf = io.StringIO()
    write_cohort_csv(records, buf)
    return buf.getvalue()


def parse_demographics_csv(stream: TextIO) -> dict[str, tuple[str | None, str | None]]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty demographics file") from None
    if tuple(h.strip().lstrip("\ufeff") for h in header) != DEMOGRAPHICS_HEADER:
        raise DataError(f"bad demographics header {header!r}")
    out = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"line {line}: expected 3 fields")
        cid = row[0].strip()
        if cid in out:
            raise DataError(f"line {line}: duplicate child {cid!r}")
        out[cid] = (row[1].strip() or None, row[2].strip() or None)
    return out


def attach_demographics(
    records: Sequence[ChildRecord], demographics: Mapping[str, tuple[str | None, str | None]]
) -> list[ChildRecord]:
    out = []
    for rec in records:
        sex, ethnicity = demographics.get(rec.child_id, (rec.sex, rec.ethnicity))
        out.append(replace(rec, sex=sex, ethnicity=ethnicity))
    return out


def drop_visit(records: Sequence[ChildRecord], visit_index: int = EXCLUDED_VISIT) -> list[ChildRecord]:
    """Remove one visit's observations from every child."""
    if not 1 <= visit_index <= N_VISITS:
        raise DataError(f"visit_index {visit_index} outside 1..{N_VISITS}")
    return [
        replace(rec, visits=tuple(v for v in rec.visits if v.visit_index != visit_index))
        for rec in records
    ]


def complete_case_matrix(
    records: Sequence[ChildRecord],
    attribute: AttributeKind | str,
    height_in_metres: bool = True,
) -> TrajectoryMatrix:
    """Rows for children with ``attribute`` present at all 12 retained visits.

    Rows are sorted by child id. Records must already have visit 2 removed.
    """
    attribute = AttributeKind(attribute)
    ids, rows, age_rows = [], [], []
    for rec in sorted(records, key=lambda r: r.child_id):
        if rec.visit(EXCLUDED_VISIT) is not None:
            raise DataError(f"child {rec.child_id!r} still has visit {EXCLUDED_VISIT}; call drop_visit first")
        row, age_row = [], []
        for visit_index in RETAINED_VISITS:
            obs = rec.visit(visit_index)
            value = None if obs is None else obs.value(attribute, height_in_metres)
            if value is None:
                break
            row.append(value)
            age_row.append(obs.age_months)
        else:
            ids.append(rec.child_id)
            rows.append(row)
            age_rows.append(age_row)
    if not rows:
        raise DataError(f"empty matrix: no child has {attribute.value} at all {len(RETAINED_VISITS)} retained visits")
    return TrajectoryMatrix(attribute, tuple(ids), np.array(rows), np.array(age_rows))
