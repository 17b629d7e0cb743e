"""Cohort result serialization: text tables, JSON documents, plot series.

Output naming convention (documented in the README): everything for one run
lives under ``<run-id>/``, per-subject artifacts under
``<run-id>/<subject-id>/``, and cohort-level files directly in the run
directory. All emitted bytes are deterministic for a fixed report.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

from . import stats

REPORT_SCHEMA_VERSION = 1
ARTIFACT_VERSION = "0.1.0"


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectRow:
    subject_id: str
    hip_stance: float
    knee_stance: float
    hip_swing: float
    knee_swing: float
    objective_baseline: float
    objective_optimized: float
    error_term_baseline: float
    error_term_optimized: float
    assist_term_baseline: float
    assist_term_optimized: float
    improvement_pct: float
    baseline_outlier: bool
    optimized_outlier: bool
    seed: int
    trace_ref: str = ""  # optimizer trace file, when emitted


@dataclass(frozen=True)
class CohortAggregates:
    n_subjects: int
    mean_improvement_pct: float
    median_baseline: float
    median_optimized: float
    iqr_baseline: float
    iqr_optimized: float
    cv_baseline: float
    cv_optimized: float
    n_baseline_outliers: int
    n_optimized_outliers: int
    permutation_p: float
    n_permutations: int
    stats_seed: int


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    seeds: tuple[int, ...]
    artifact_version: str = ARTIFACT_VERSION


@dataclass(frozen=True)
class CohortReport:
    rows: tuple[SubjectRow, ...]
    aggregates: CohortAggregates
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ReportError("cohort report requires at least one row")


def recompute_aggregates(rows, n_permutations: int, stats_seed: int) -> CohortAggregates:
    """Aggregates derived purely from the per-subject rows."""
    base = [r.objective_baseline for r in rows]
    opt = [r.objective_optimized for r in rows]
    improvements = [r.improvement_pct for r in rows]
    q1b, medb, q3b = stats.quartiles(base)
    q1o, medo, q3o = stats.quartiles(opt)
    return CohortAggregates(
        n_subjects=len(rows),
        mean_improvement_pct=float(sum(improvements) / len(improvements)),
        median_baseline=medb,
        median_optimized=medo,
        iqr_baseline=q3b - q1b,
        iqr_optimized=q3o - q1o,
        cv_baseline=stats.cv(base),
        cv_optimized=stats.cv(opt),
        n_baseline_outliers=int(stats.iqr_outliers(base).sum()),
        n_optimized_outliers=int(stats.iqr_outliers(opt).sum()),
        permutation_p=stats.permutation_test(base, opt, n_permutations, stats_seed),
        n_permutations=n_permutations,
        stats_seed=stats_seed,
    )


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# --- structured document (JSON) ---------------------------------------------

def report_to_document(report: CohortReport) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "rows": [asdict(r) for r in report.rows],
        "aggregates": asdict(report.aggregates),
        "provenance": {**asdict(report.provenance),
                       "seeds": list(report.provenance.seeds)},
    }


def report_from_document(doc: dict) -> CohortReport:
    version = doc.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ReportError(f"unsupported report schema_version: {version!r}")
    rows = tuple(SubjectRow(**r) for r in doc["rows"])
    aggregates = CohortAggregates(**doc["aggregates"])
    prov = dict(doc["provenance"])
    prov["seeds"] = tuple(prov["seeds"])
    return CohortReport(rows=rows, aggregates=aggregates,
                        provenance=Provenance(**prov))


def parse_report(path) -> CohortReport:
    with open(path, "r", encoding="utf-8") as fh:
        return report_from_document(json.load(fh))


# --- emitters ----------------------------------------------------------------

def _emit_json(report: CohortReport, path: Path) -> None:
    doc = report_to_document(report)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _emit_text(report: CohortReport, path: Path) -> None:
    lines = []
    header = (f"{'subject':>8} {'K_h_st':>8} {'K_k_st':>8} {'K_h_sw':>8} "
              f"{'K_k_sw':>8} {'J_base':>10} {'J_opt':>10} {'impr%':>7} {'outlier':>8}")
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.rows:
        flag = ("B" if r.baseline_outlier else "") + ("O" if r.optimized_outlier else "")
        lines.append(f"{r.subject_id:>8} {r.hip_stance:8.1f} {r.knee_stance:8.1f} "
                     f"{r.hip_swing:8.1f} {r.knee_swing:8.1f} "
                     f"{r.objective_baseline:10.5f} {r.objective_optimized:10.5f} "
                     f"{r.improvement_pct:7.2f} {flag:>8}")
    a = report.aggregates
    lines.append("-" * len(header))
    lines.append(f"subjects: {a.n_subjects}  mean improvement: "
                 f"{a.mean_improvement_pct:.2f}%  permutation p: {a.permutation_p:.3g}")
    lines.append(f"objective median (IQR): baseline {a.median_baseline:.5f} "
                 f"({a.iqr_baseline:.5f}), optimized {a.median_optimized:.5f} "
                 f"({a.iqr_optimized:.5f})")
    lines.append(f"objective CV: baseline {a.cv_baseline:.3f}, "
                 f"optimized {a.cv_optimized:.3f}")
    lines.append(f"outliers (1.5*IQR): baseline {a.n_baseline_outliers}, "
                 f"optimized {a.n_optimized_outliers}")
    lines.append(f"provenance: config {report.provenance.config_hash} "
                 f"version {report.provenance.artifact_version}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _emit_plot_series(report: CohortReport, out_dir: Path) -> list[Path]:
    stiffness = out_dir / "stiffness_series.csv"
    with stiffness.open("w", encoding="utf-8") as fh:
        fh.write("subject_id,hip_stance,knee_stance,hip_swing,knee_swing\n")
        for r in report.rows:
            fh.write(f"{r.subject_id},{r.hip_stance:.10g},{r.knee_stance:.10g},"
                     f"{r.hip_swing:.10g},{r.knee_swing:.10g}\n")
    objective = out_dir / "objective_series.csv"
    with objective.open("w", encoding="utf-8") as fh:
        fh.write("subject_id,objective_baseline,objective_optimized,"
                 "error_term_baseline,error_term_optimized,"
                 "assist_term_baseline,assist_term_optimized,improvement_pct\n")
        for r in report.rows:
            fh.write(f"{r.subject_id},{r.objective_baseline:.10g},"
                     f"{r.objective_optimized:.10g},{r.error_term_baseline:.10g},"
                     f"{r.error_term_optimized:.10g},{r.assist_term_baseline:.10g},"
                     f"{r.assist_term_optimized:.10g},{r.improvement_pct:.10g}\n")
    return [stiffness, objective]


def emit(report: CohortReport, formats, out_dir) -> list[Path]:
    """Write the report in the requested formats; returns the files created.

    ``formats`` is any subset of {"text-table", "structured-document",
    "plot-series"}.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out_dir}: {exc}") from exc
    known = {"text-table", "structured-document", "plot-series"}
    unknown = set(formats) - known
    if unknown:
        raise ReportError(f"unknown report formats: {sorted(unknown)}")
    written: list[Path] = []
    try:
        if "structured-document" in formats:
            p = out_dir / "report.json"
            _emit_json(report, p)
            written.append(p)
        if "text-table" in formats:
            p = out_dir / "report.txt"
            _emit_text(report, p)
            written.append(p)
        if "plot-series" in formats:
            written.extend(_emit_plot_series(report, out_dir))
    except OSError as exc:
        raise ReportError(f"failed writing report file: {exc}") from exc
    return written
