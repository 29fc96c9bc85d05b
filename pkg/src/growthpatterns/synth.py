"""Labeled synthetic cohorts with shared early growth and later divergence.

Each latent group follows the same piecewise-linear weight curve until the
divergence age, after which its slope changes by a group-specific amount.
Height follows a square-root curve common to all groups, so BMI inherits
the group structure through weight only.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from growthpatterns.agreement import OrderedClustering, adjusted_rand_index
from growthpatterns.cohort import (
    EXCLUDED_VISIT,
    N_VISITS,
    ChildRecord,
    VisitObservation,
    cohort_to_csv,
)
from growthpatterns.config import as_floats
from growthpatterns.errors import DataError

DEFAULT_VISIT_AGES = (0.2, 1.0, 2.0, 4.0, 6.0, 9.0, 12.0, 15.0, 18.0, 24.0, 36.0, 48.0, 60.0)
_SEED_MASK = (1 << 64) - 1
_MIN_MEASUREMENT = 0.1


@dataclass(frozen=True)
class SynthSpec:
    n_children: int = 400
    n_groups: int = 4
    # None means equal proportions
    group_proportions: tuple[float, ...] | None = None
    visit_ages_months: tuple[float, ...] = DEFAULT_VISIT_AGES
    divergence_age_months: float = 20.0
    birth_weight_kg: float = 3.4
    weight_rate_kg_per_month: float = 0.25
    # post-divergence slope change per group (kg/month); None means evenly
    # spaced steps of 0.08 centred on zero
    group_offsets: tuple[float, ...] | None = None
    # scalar or one value per visit
    noise_sd: float | tuple[float, ...] = 0.5
    age_jitter_sd: float = 0.5
    missing_rate: float = 0.02
    visit2_drop_rate: float = 0.6
    birth_height_cm: float = 50.0
    height_sqrt_coef: float = 7.7
    height_noise_sd: float = 1.0
    seed: int = 0

    proportions: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)
    noise: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_children < 1:
            raise DataError("n_children must be >= 1")
        if self.n_groups < 1:
            raise DataError("n_groups must be >= 1")
        if len(self.visit_ages_months) != N_VISITS:
            raise DataError(f"visit_ages_months needs {N_VISITS} values")
        if np.any(np.diff(self.visit_ages_months) <= 0) or self.visit_ages_months[0] < 0:
            raise DataError("visit_ages_months must be non-negative and strictly increasing")
        if self.group_proportions is None:
            props = np.full(self.n_groups, 1.0 / self.n_groups)
        else:
            props = np.asarray(self.group_proportions, dtype=float)
            if props.shape != (self.n_groups,) or np.any(props < 0) or abs(props.sum() - 1.0) > 1e-9:
                raise DataError("group_proportions must be n_groups non-negative values summing to 1")
        if self.group_offsets is None:
            offsets = 0.08 * (np.arange(self.n_groups) - (self.n_groups - 1) / 2)
        else:
            offsets = np.asarray(self.group_offsets, dtype=float)
            if offsets.shape != (self.n_groups,):
                raise DataError("group_offsets needs one value per group")
        if np.any(np.diff(offsets) <= 0):
            raise DataError("group_offsets must be strictly increasing")
        noise = np.asarray(self.noise_sd, dtype=float)
        if noise.ndim == 0:
            noise = np.full(N_VISITS, float(noise))
        elif noise.shape != (N_VISITS,):
            raise DataError(f"noise_sd must be a scalar or {N_VISITS} values")
        if np.any(noise < 0) or self.age_jitter_sd < 0 or self.height_noise_sd < 0:
            raise DataError("noise and jitter must be non-negative")
        for name in ("missing_rate", "visit2_drop_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise DataError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "proportions", props / props.sum())
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "noise", noise)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> SynthSpec:
        """Build from string values, e.g. a parsed ``key = value`` file."""
        known = {f.name: f for f in dataclasses.fields(cls) if f.init}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise DataError(f"unknown synth key {key!r}")
            raw = raw.strip()
            try:
                if key in ("n_children", "n_groups", "seed"):
                    kwargs[key] = int(raw)
                elif key in ("group_proportions", "group_offsets", "visit_ages_months"):
                    kwargs[key] = None if raw.lower() == "none" else as_floats(raw)
                elif key == "noise_sd":
                    vals = as_floats(raw)
                    kwargs[key] = vals[0] if len(vals) == 1 else vals
                else:
                    kwargs[key] = float(raw)
            except ValueError:
                raise DataError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)


def expected_weight(spec: SynthSpec, group: int, age_months) -> np.ndarray:
    """Noise-free weight of ``group`` at the given ages."""
    age = np.asarray(age_months, dtype=float)
    late = np.maximum(age - spec.divergence_age_months, 0.0)
    return spec.birth_weight_kg + spec.weight_rate_kg_per_month * age + spec.offsets[group] * late


def expected_height(spec: SynthSpec, age_months) -> np.ndarray:
    return spec.birth_height_cm + spec.height_sqrt_coef * np.sqrt(np.asarray(age_months, dtype=float))


@dataclass(frozen=True)
class LabeledCohort:
    records: tuple[ChildRecord, ...]
    latent_labels: dict[str, int]

    def __post_init__(self):
        missing = [r.child_id for r in self.records if r.child_id not in self.latent_labels]
        if missing:
            raise DataError(f"records without a latent label: {missing[:5]}")

    def cohort_csv(self) -> str:
        return cohort_to_csv(self.records)

    def labels_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["child_id", "group"])
        for rec in self.records:
            writer.writerow([rec.child_id, self.latent_labels[rec.child_id]])
        return buf.getvalue()


def _child(spec: SynthSpec, index: int, child_id: str) -> tuple[ChildRecord, int]:
    rng = np.random.default_rng([spec.seed & _SEED_MASK, index])
    group = int(rng.choice(spec.n_groups, p=spec.proportions))
    # every draw is made whether or not it is used so streams stay aligned
    jitter = rng.normal(0.0, 1.0, N_VISITS) * spec.age_jitter_sd
    weight_noise = rng.normal(0.0, 1.0, N_VISITS) * spec.noise
    height_noise = rng.normal(0.0, 1.0, N_VISITS) * spec.height_noise_sd
    missing = rng.random((N_VISITS, 2)) < spec.missing_rate
    visit2_absent = rng.random() < spec.visit2_drop_rate

    ages = np.maximum.accumulate(np.maximum(np.asarray(spec.visit_ages_months) + jitter, 0.0))
    weights = np.maximum(expected_weight(spec, group, ages) + weight_noise, _MIN_MEASUREMENT)
    heights = np.maximum(expected_height(spec, ages) + height_noise, _MIN_MEASUREMENT)

    visits = []
    for v in range(N_VISITS):
        visit_index = v + 1
        if visit_index == EXCLUDED_VISIT:
            if visit2_absent:
                continue
            w, h = weights[v], heights[v]
        else:
            w = None if missing[v, 0] else weights[v]
            h = None if missing[v, 1] else heights[v]
        visits.append(
            VisitObservation(visit_index, float(ages[v]), None if w is None else float(w), None if h is None else float(h))
        )
    return ChildRecord(child_id, tuple(visits)), group


def generate_cohort(spec: SynthSpec) -> LabeledCohort:
    width = max(4, len(str(spec.n_children - 1)))
    records, labels = [], {}
    for i in range(spec.n_children):
        cid = f"C{i:0{width}d}"
        rec, group = _child(spec, i, cid)
        records.append(rec)
        labels[cid] = group
    return LabeledCohort(tuple(records), labels)


def recovery_score(cohort: LabeledCohort, clustering: OrderedClustering) -> float:
    """ARI between latent groups and clustering levels over the children both cover."""
    shared = [cid for cid in clustering.child_ids if cid in cohort.latent_labels]
    if not shared:
        raise DataError("clustering and cohort share no children")
    truth = [cohort.latent_labels[c] for c in shared]
    return adjusted_rand_index(truth, clustering.aligned(shared))
