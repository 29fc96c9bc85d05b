"""Command-line pipeline: synth, cluster, compare, curves, sweep.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from growthpatterns import agreement, curves, gmm, kmeans
from growthpatterns.cohort import (
    EXCLUDED_VISIT,
    AttributeKind,
    complete_case_matrix,
    drop_visit,
    parse_cohort_csv,
)
from growthpatterns.config import read_config
from growthpatterns.errors import DataError, GrowthPatternsError, NumericError
from growthpatterns.synth import SynthSpec, generate_cohort

log = logging.getLogger("growthpatterns")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ALGORITHMS = ("kmeans", "gmm")

# config-file keys and their defaults; command-line flags win over both
DEFAULTS = {
    "attribute": "weight",
    "algorithm": "kmeans",
    "metric": "euclidean",
    "k": 4,
    "k_min": 2,
    "k_max": 5,
    "seed": 0,
    "merge": "none",
    "kmeans_restarts": 16,
    "kmeans_max_iterations": 300,
    "kmeans_tolerance": 1e-6,
    "gmm_restarts": 8,
    "gmm_max_iterations": 500,
    "gmm_tolerance": 1e-7,
    "gmm_init": "from_kmeans",
    "covariance_ridge": 1e-6,
    "bmi_height_in_metres": True,
}


class StageError(GrowthPatternsError):
    def __init__(self, stage: str, cause: GrowthPatternsError):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, GrowthPatternsError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _settings(args) -> dict:
    out = dict(DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in read_config(args.config).items():
            if key not in DEFAULTS:
                raise DataError(f"unknown config key {key!r}")
            out[key] = _coerce(key, raw)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise DataError(f"bad value for {key}: {raw!r}") from None
    return raw


def _write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    log.info("wrote %s", path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _load_matrix(path, attribute: str, height_in_metres: bool = True):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            records = parse_cohort_csv(fh)
    except OSError as exc:
        raise DataError(f"cannot read cohort {path}: {exc}") from None
    records = drop_visit(records, EXCLUDED_VISIT)
    return complete_case_matrix(records, AttributeKind(attribute), height_in_metres)


def _read_levels(path, source: str) -> agreement.OrderedClustering:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return agreement.read_levels_csv(fh, source)
    except OSError as exc:
        raise DataError(f"cannot read assignments {path}: {exc}") from None


def _kmeans_config(s: dict, k: int) -> kmeans.KMeansConfig:
    return kmeans.KMeansConfig(
        k=k,
        metric=s["metric"],
        max_iterations=s["kmeans_max_iterations"],
        tolerance=s["kmeans_tolerance"],
        restarts=s["kmeans_restarts"],
        seed=s["seed"],
        covariance_ridge=s["covariance_ridge"],
    )


def _gmm_config(s: dict, k: int) -> gmm.GmmConfig:
    return gmm.GmmConfig(
        k=k,
        max_iterations=s["gmm_max_iterations"],
        tolerance=s["gmm_tolerance"],
        covariance_ridge=s["covariance_ridge"],
        init=s["gmm_init"],
        seed=s["seed"],
        restarts=s["gmm_restarts"],
    )


def fit_and_order(matrix, algorithm: str, s: dict, k: int):
    """Fit one algorithm; returns (model dict, ordered clustering, objective)."""
    if algorithm == "kmeans":
        model = kmeans.kmeans_fit(matrix, _kmeans_config(s, k))
        raw, objective = model.assignments, model.inertia
        doc = kmeans.model_to_dict(model)
    elif algorithm == "gmm":
        config = _gmm_config(s, k)
        model, raw = gmm.gmm_fit(matrix, config)
        objective = model.log_likelihood
        doc = gmm.model_to_dict(model, matrix.child_ids, raw, config)
    else:
        raise DataError(f"unknown algorithm {algorithm!r}")
    ordered = agreement.order_clusters_by_level(raw, matrix, k, algorithm)
    return doc, ordered, objective


def cmd_synth(args) -> int:
    with _Stage("read spec"):
        values = read_config(args.spec)
        if args.seed is not None:
            values["seed"] = str(args.seed)
        spec = SynthSpec.from_mapping(values)
    with _Stage("generate"):
        cohort = generate_cohort(spec)
    out = Path(args.out)
    with _Stage("write"):
        _write(out / "cohort.csv", cohort.cohort_csv())
        _write(out / "labels.csv", cohort.labels_csv())
    return EXIT_OK


def cmd_cluster(args) -> int:
    s = _settings(args)
    if s["k"] < 1:
        raise DataError(f"k must be >= 1, got {s['k']}")
    with _Stage("load cohort"):
        matrix = _load_matrix(args.cohort, s["attribute"], s["bmi_height_in_metres"])
    with _Stage(f"fit {s['algorithm']}"):
        doc, ordered, _ = fit_and_order(matrix, s["algorithm"], s, s["k"])
    with _Stage("merge levels"):
        merged = agreement.merge_levels(ordered, s["merge"])
    doc["attribute"] = s["attribute"]
    doc["levels"] = merged.as_dict()
    doc["level_means"] = None if merged.level_means is None else merged.level_means.tolist()
    doc["merge"] = s["merge"]
    stem = f"{s['algorithm']}_k{s['k']}"
    out = Path(args.out)
    with _Stage("write"):
        _write(out / f"{stem}_model.json", _dump_json(doc))
        buf = io.StringIO()
        agreement.write_levels_csv(merged, buf)
        _write(out / f"{stem}_assignments.csv", buf.getvalue())
    return EXIT_OK


def cmd_compare(args) -> int:
    with _Stage("read assignments"):
        a = _read_levels(args.a, args.label_a or Path(args.a).stem)
        b = _read_levels(args.b, args.label_b or Path(args.b).stem)
    with _Stage("compare"):
        cm = agreement.confusion_matrix(a, b)
        report = agreement.consistency_partition(a, b) if a.k == b.k else None
    out = Path(args.out)
    text = cm.to_text()
    with _Stage("write"):
        _write(out / "confusion.json", agreement.report_json(cm, report))
        _write(out / "confusion.txt", text)
        if report is not None:
            _write(out / "inconsistent_ids.txt", "".join(f"{c}\n" for c in sorted(report.inconsistent_ids)))
    sys.stdout.write(text)
    if report is not None:
        sys.stdout.write(f"consistent: {report.n_consistent}  inconsistent: {report.n_inconsistent}\n")
    return EXIT_OK


def _read_ids(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            ids = [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read id list {path}: {exc}") from None
    if not ids:
        raise DataError(f"id list {path} is empty")
    return ids


def cmd_curves(args) -> int:
    s = _settings(args)
    fmt = args.format or "csv"
    if fmt not in ("csv", "svg"):
        raise DataError(f"curves supports csv or svg, not {fmt!r}")
    if not args.assignments and not args.percentiles:
        raise DataError("give --assignments for growth-pattern curves and/or --percentiles")
    if args.overlay_ids and not args.assignments:
        raise DataError("--overlay-ids needs --assignments")
    with _Stage("load cohort"):
        matrix = _load_matrix(args.cohort, s["attribute"], s["bmi_height_in_metres"])
    out = Path(args.out)
    if args.percentiles:
        with _Stage("percentile curves"):
            chart = curves.percentile_curves(matrix)
            _write(out / f"percentile_{matrix.attribute.value}.{fmt}", curves.render_chart(chart, fmt))
    if args.assignments:
        with _Stage("growth-pattern curves"):
            levels = _read_levels(args.assignments, "assignments")
            if args.overlay_ids:
                extra = _read_ids(args.overlay_ids)
                unknown = set(extra) - set(levels.child_ids)
                if unknown:
                    raise DataError(f"overlay ids not in assignments: {sorted(unknown)[:5]}")
                if set(levels.child_ids) != set(matrix.child_ids):
                    raise DataError("assignments do not cover exactly the complete-case children")
                keep = [c for c in levels.child_ids if c not in set(extra)]
                base = agreement.OrderedClustering(
                    tuple(keep), levels.aligned(keep), None, levels.source
                )
                chart = curves.growth_pattern_curves(matrix.subset(keep), base, style="dashed")
                chart = curves.overlay_series(chart, curves.mean_curve(matrix, extra, "inconsistent"), "solid")
                name = "overlay"
            else:
                chart = curves.growth_pattern_curves(matrix, levels)
                name = "growth_pattern"
            _write(out / f"{name}_{matrix.attribute.value}.{fmt}", curves.render_chart(chart, fmt))
    return EXIT_OK


def _dispersion(values: np.ndarray, labels: np.ndarray, k: int) -> list[float]:
    out = []
    for level in range(k):
        rows = values[labels == level]
        out.append(float(np.linalg.norm(rows - rows.mean(axis=0), axis=1).mean()))
    return out


def _sweep_entry(matrix, algorithm, s, k):
    doc, ordered, objective = fit_and_order(matrix, algorithm, s, k)
    labels = ordered.aligned(matrix.child_ids)
    means = ordered.level_means
    gaps = np.diff(means)
    return ordered, {
        "objective": objective,
        "objective_kind": "inertia" if algorithm == "kmeans" else "log_likelihood",
        "level_sizes": ordered.level_sizes().tolist(),
        "level_means": means.tolist(),
        "min_adjacent_gap": float(gaps.min()) if gaps.size else None,
        "top_gap": float(gaps[-1]) if gaps.size else None,
        "within_level_dispersion": _dispersion(matrix.values, labels, k),
    }


def cmd_sweep(args) -> int:
    s = _settings(args)
    if s["k_min"] < 1 or s["k_max"] < s["k_min"]:
        raise DataError(f"invalid K range {s['k_min']}..{s['k_max']}")
    with _Stage("load cohort"):
        matrix = _load_matrix(args.cohort, s["attribute"], s["bmi_height_in_metres"])
    entries = []
    for k in range(s["k_min"], s["k_max"] + 1):
        entry = {"k": k}
        fitted = {}
        for algorithm in ALGORITHMS:
            try:
                fitted[algorithm], entry[algorithm] = _sweep_entry(matrix, algorithm, s, k)
            except (DataError, NumericError) as exc:
                log.warning("K=%d %s failed: %s", k, algorithm, exc)
                entry[algorithm] = {"error": str(exc)}
        if len(fitted) == 2:
            report = agreement.consistency_partition(fitted["kmeans"], fitted["gmm"])
            entry["consistent_fraction"] = report.n_consistent / matrix.n_children
            entry["n_inconsistent"] = report.n_inconsistent
        else:
            entry["consistent_fraction"] = None
        entries.append(entry)
    summary = {
        "attribute": matrix.attribute.value,
        "n_children": matrix.n_children,
        "seed": s["seed"],
        "k_range": [s["k_min"], s["k_max"]],
        "results": entries,
    }
    _write(Path(args.out) / "sweep.json", _dump_json(summary))
    return EXIT_OK


def _common(p: argparse.ArgumentParser, attribute=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="flat key = value config file; flags override it")
    if attribute:
        p.add_argument("--attribute", choices=[a.value for a in AttributeKind], default=None)
        p.add_argument(
            "--bmi-kg-per-cm2",
            dest="bmi_height_in_metres",
            action="store_const",
            const=False,
            default=None,
            help="compute BMI with height in cm instead of metres",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="growthpatterns", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labeled synthetic cohort")
    p.add_argument("--spec", required=True, help="key = value synthetic cohort spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="cluster complete-case trajectories")
    p.add_argument("--cohort", required=True)
    _common(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    p.add_argument("--metric", choices=kmeans.METRICS, default=None)
    p.add_argument("-k", "--k", type=int, default=None)
    p.add_argument("--merge", choices=sorted(agreement.MERGE_SCHEMES), default=None)
    p.add_argument("--format", choices=["json"], default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compare", help="confusion matrix and consistency of two level files")
    p.add_argument("--a", required=True, help="child_id,level CSV (table rows)")
    p.add_argument("--b", required=True, help="child_id,level CSV (table columns)")
    p.add_argument("--label-a")
    p.add_argument("--label-b")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json"], default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("curves", help="growth-pattern, overlay and percentile charts")
    p.add_argument("--cohort", required=True)
    _common(p)
    p.add_argument("--assignments", help="child_id,level CSV")
    p.add_argument("--overlay-ids", help="file with one child id per line, drawn as a separate solid curve")
    p.add_argument("--percentiles", action="store_true", help="also draw the 90/75/50/25/10 percentile chart")
    p.add_argument("--format", choices=["csv", "svg"], default=None)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("sweep", help="fit both algorithms over a range of K")
    p.add_argument("--cohort", required=True)
    _common(p)
    p.add_argument("--k-min", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--format", choices=["json"], default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericError) else EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
