"""End-to-end batch pipeline driven by a YAML run manifest.

Stages and the artifacts they leave in the output directory::

    extract   -> applications.jsonl, extraction.jsonl
    resolve   -> records.jsonl
    ingest    -> citation_index.tsv
    evaluate  -> results.csv
    report    -> report/*.csv, report/figures/*.svg

Each stage reads only the previous stages' artifacts, so any stage can be
re-run on its own. Stage counters accumulate in run_report.json.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from . import agreement as agr
from .assessment import AgreementRecord, MissingOfficialData, compare, evaluate
from .citation_index import CitationIndex, expand_sources, ingest
from .doi_harvest import (DoiProxyResolver, ExtractionReport, FixtureResolver, extract_dois,
                          normalize_doi, validate_dois)
from .metadata import (NOT_FOUND, CrossrefTransport, FixtureTransport, MetadataCache, MetadataClient,
                       PublicationRecord, read_records)
from .metrics import CandidateApplication, MetricsTriple, NormalizationPolicy, compute_metrics
from .taxonomy import (DisciplineCategory, Level, MissingEntry, TaxonomyError, ThresholdError, classify,
                       load_recruitment_fields, load_thresholds, parse_rf)

logger = logging.getLogger(__name__)

STAGES = ("extract", "resolve", "ingest", "evaluate", "report")

APPLICATIONS = "applications.jsonl"
EXTRACTION = "extraction.jsonl"
RECORDS = "records.jsonl"
INDEX = "citation_index.tsv"
RESULTS = "results.csv"
RUN_REPORT = "run_report.json"

RESULT_COLUMNS = (
    "app_id", "rf", "level", "session_year", "n_dois", "n_found",
    "sim_a", "sim_b", "sim_c", "t_a", "t_b", "t_c",
    "exceeds_a", "exceeds_b", "exceeds_c", "passed",
    "official_a", "official_b", "official_c", "official_passed", "official_recomputed",
    "agree_a", "agree_b", "agree_c", "agree_overall",
)


class ManifestError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class Manifest:
    out: Path
    thresholds: Path
    coci: list[str] = field(default_factory=list)
    applications: Optional[Path] = None
    cv_dir: Optional[Path] = None
    cv_metadata: Optional[Path] = None
    rf_list: Optional[Path] = None
    doi_fixture: Optional[Path] = None
    metadata_fixture: Optional[Path] = None
    cache: Optional[Path] = None
    offline: bool = False
    comparator: str = "ge"
    normalization: str = "none"
    jobs: int = 1
    shards: int = 16
    figures: bool = True
    crossref_url: str = "https://api.crossref.org/works/"
    mailto: str = ""
    rate_limit: float = 10.0
    retries: int = 3

    @classmethod
    def load(cls, path: Union[str, Path], **overrides) -> "Manifest":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ManifestError(f"{path}: manifest must be a mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data, base=path.parent)

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: Path = Path(".")) -> "Manifest":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        for key in ("out", "thresholds"):
            if not data.get(key):
                raise ManifestError(f"manifest needs '{key}'")

        def resolve(value):
            return None if value in (None, "") else (base / Path(value)).resolve()

        kwargs = dict(data)
        for key in ("out", "thresholds", "applications", "cv_dir", "cv_metadata", "rf_list",
                    "doi_fixture", "metadata_fixture", "cache"):
            if key in kwargs:
                kwargs[key] = resolve(kwargs[key])
        coci = kwargs.get("coci") or []
        if isinstance(coci, str):
            coci = [coci]
        kwargs["coci"] = [str(base / c) if not os.path.isabs(c) else c for c in coci]
        m = cls(**kwargs)
        m.validate()
        return m

    def validate(self) -> None:
        if (self.applications is None) == (self.cv_dir is None):
            raise ManifestError("give exactly one of 'applications' or 'cv_dir'")
        if self.cv_dir is not None and self.cv_metadata is None:
            raise ManifestError("'cv_dir' needs a 'cv_metadata' table")
        for key in ("thresholds", "applications", "cv_dir", "cv_metadata", "rf_list",
                    "doi_fixture", "metadata_fixture"):
            p = getattr(self, key)
            if p is not None and not p.exists():
                raise ManifestError(f"{key}: {p} does not exist")
        for pattern in self.coci:
            if not any(p.exists() for p in expand_sources([pattern])):
                raise ManifestError(f"coci: nothing matches {pattern}")
        if self.comparator not in ("ge", "gt"):
            raise ManifestError(f"comparator must be 'ge' or 'gt', not {self.comparator!r}")
        if self.normalization not in ("none", "age"):
            raise ManifestError(f"normalization must be 'none' or 'age', not {self.normalization!r}")
        if int(self.jobs) < 1:
            raise ManifestError("jobs must be >= 1")
        if self.offline and self.metadata_fixture is None:
            raise ManifestError("offline runs need a 'metadata_fixture'")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ManifestError(f"out: cannot create {self.out}: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ManifestError(f"out: {self.out} is not writable")


# -- run report ----------------------------------------------------------------


def _update_report(m: Manifest, stage: str, counts: dict[str, Any], seconds: float) -> None:
    path = m.out / RUN_REPORT
    report = json.loads(path.read_text()) if path.exists() else {"stages": {}, "seconds": {}}
    report["stages"][stage] = counts
    report["seconds"][stage] = round(seconds, 3)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_run_report(out: Union[str, Path]) -> dict:
    return json.loads((Path(out) / RUN_REPORT).read_text())


def _need(m: Manifest, stage: str, name: str) -> Path:
    p = m.out / name
    if not p.exists():
        raise StageError(stage, f"missing input artifact {p}; run the earlier stage first")
    return p


# -- extract -------------------------------------------------------------------


def _opt_float(value) -> Optional[float]:
    if value is None or str(value).strip() == "":
        return None
    return float(value)


def _opt_bool(value) -> Optional[bool]:
    if value is None or isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text == "":
        return None
    if text in ("1", "true", "yes", "y", "t", "passed", "pass"):
        return True
    if text in ("0", "false", "no", "n", "f", "failed", "fail"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _official(values) -> Optional[list[float]]:
    if values is None:
        return None
    parsed = [_opt_float(v) for v in values]
    if any(v is None for v in parsed):
        return None
    return parsed


def _iter_applications(m: Manifest):
    """Yield (raw application dict, ExtractionReport) from the configured input."""
    if m.applications is not None:
        with open(m.applications, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                except ValueError as exc:
                    raise StageError("extract", f"{m.applications}:{lineno}: {exc}") from exc
                report = ExtractionReport(raw_hits=len(d.get("dois") or []))
                for raw in d.get("dois") or []:
                    doi = normalize_doi(raw)
                    if doi is None:
                        report.rejected.append((str(raw), "not a DOI"))
                    elif doi not in report.dois:
                        report.dois.append(doi)
                yield d, report
        return

    with open(m.cv_metadata, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        app_id = (row.get("app_id") or "").strip()
        cv_name = (row.get("cv") or "").strip() or f"{app_id}.txt"
        cv_path = m.cv_dir / cv_name
        d = {
            "app_id": app_id,
            "rf": row.get("rf"),
            "level": row.get("level"),
            "session_year": row.get("session_year"),
            "official": [row.get("official_a"), row.get("official_b"), row.get("official_c")],
            "official_passed": row.get("official_passed"),
            "cv": cv_name,
        }
        if not cv_path.exists():
            d["error"] = f"CV file {cv_path} not found"
            yield d, ExtractionReport()
            continue
        yield d, extract_dois(cv_path.read_text(encoding="utf-8", errors="replace"))


def stage_extract(m: Manifest) -> dict[str, Any]:
    t0 = time.perf_counter()
    counts = defaultdict(int, dict.fromkeys((
        "cvs_read", "raw_hits", "repaired", "rejected_spans", "applications", "applications_malformed",
        "applications_rejected_nd", "dois_extracted", "zero_doi_applications"), 0))
    apps, extractions = [], []
    seen_ids: set[str] = set()
    rejected: dict[str, str] = {}
    for d, report in _iter_applications(m):
        counts["cvs_read"] += 1
        app_id = str(d.get("app_id") or "").strip()
        extractions.append({"cv": app_id, **report.to_dict()})
        counts["raw_hits"] += report.raw_hits
        counts["repaired"] += report.repaired
        counts["rejected_spans"] += len(report.rejected)
        try:
            if not app_id:
                raise ValueError("missing app_id")
            if app_id in seen_ids:
                raise ValueError(f"duplicate app_id {app_id}")
            if "error" in d:
                raise ValueError(d["error"])
            rf = parse_rf(d.get("rf"))
            level = Level.parse(d.get("level"))
            session_year = int(d.get("session_year"))
            official = _official(d.get("official"))
            official_passed = _opt_bool(d.get("official_passed"))
        except (ValueError, TypeError, TaxonomyError) as exc:
            counts["applications_malformed"] += 1
            rejected[app_id or f"#{counts['cvs_read']}"] = str(exc)
            continue
        seen_ids.add(app_id)
        if classify(rf) is not DisciplineCategory.CD:
            counts["applications_rejected_nd"] += 1
            rejected[app_id] = f"{rf} is not citation-based"
            continue
        apps.append({
            "app_id": app_id, "rf": rf.code, "level": level.value, "session_year": session_year,
            "dois": report.dois, "official": official, "official_passed": official_passed,
        })
        counts["applications"] += 1
        counts["dois_extracted"] += len(report.dois)
        counts["zero_doi_applications"] += not report.dois

    apps.sort(key=lambda a: a["app_id"])
    extractions.sort(key=lambda e: e["cv"])
    with open(m.out / APPLICATIONS, "w", encoding="utf-8") as fh:
        for a in apps:
            fh.write(json.dumps(a, sort_keys=True) + "\n")
    with open(m.out / EXTRACTION, "w", encoding="utf-8") as fh:
        for e in extractions:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    counts["unique_dois"] = len({doi for a in apps for doi in a["dois"]})
    out = dict(sorted(counts.items()))
    out["rejected_applications"] = dict(sorted(rejected.items()))
    _update_report(m, "extract", out, time.perf_counter() - t0)
    return out


def read_applications(path: Union[str, Path]) -> list[CandidateApplication]:
    apps = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            official = d.get("official")
            apps.append(CandidateApplication(
                app_id=d["app_id"], rf=d["rf"], level=d["level"], session_year=int(d["session_year"]),
                dois=tuple(d.get("dois") or ()),
                official_metrics=MetricsTriple(*official) if official else None,
                official_passed=d.get("official_passed"),
            ))
    return apps


# -- resolve -------------------------------------------------------------------


def _resolver(m: Manifest):
    if m.doi_fixture is not None:
        return FixtureResolver.from_file(m.doi_fixture)
    if m.offline:
        return None
    return DoiProxyResolver()


def _metadata_client(m: Manifest) -> MetadataClient:
    cache = MetadataCache(m.cache) if m.cache else MetadataCache()
    if m.offline or m.metadata_fixture is not None:
        transport = FixtureTransport.from_file(m.metadata_fixture)
        return MetadataClient(transport, cache, rate_limit=None, retries=0)
    return MetadataClient(CrossrefTransport(m.crossref_url, m.mailto), cache,
                          rate_limit=m.rate_limit, retries=m.retries)


def stage_resolve(m: Manifest) -> dict[str, Any]:
    t0 = time.perf_counter()
    try:
        apps = read_applications(_need(m, "resolve", APPLICATIONS))
    except (ValueError, KeyError) as exc:
        raise StageError("resolve", f"bad {APPLICATIONS}: {exc}") from exc
    dois = sorted({d for a in apps for d in a.dois})

    resolver = _resolver(m)
    if resolver is None:
        status = {d: "unknown" for d in dois}
    else:
        status = validate_dois(dois, resolver, jobs=m.jobs).status()

    to_fetch = [d for d in dois if status[d] != "invalid"]
    client = _metadata_client(m)
    results, stats = client.fetch_all(to_fetch, jobs=m.jobs)

    undated = 0
    with open(m.out / RECORDS, "w", encoding="utf-8") as fh:
        for doi in dois:
            value = results.get(doi)
            rec: dict[str, Any] = {"doi": doi, "validation": status[doi], "pub_type": None,
                                   "year": None, "is_journal_article": False}
            if status[doi] == "invalid":
                rec["status"] = "skipped"
            elif doi in stats.failures:
                rec["status"] = "failed"
                rec["error"] = stats.failures[doi]
            elif value == NOT_FOUND:
                rec["status"] = NOT_FOUND
            else:
                rec.update(status="found", pub_type=value.pub_type, year=value.year,
                           is_journal_article=value.is_journal_article)
                undated += value.year is None
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    counts = {
        "dois": len(dois),
        "valid": sum(s == "valid" for s in status.values()),
        "invalid": sum(s == "invalid" for s in status.values()),
        "unknown": sum(s == "unknown" for s in status.values()),
        "found": stats.found,
        "not_found": stats.not_found,
        "failed": stats.failed,
        "undated": undated,
        "failures": dict(sorted(stats.failures.items())),
    }
    _update_report(m, "resolve", counts, time.perf_counter() - t0)
    return counts


# -- ingest --------------------------------------------------------------------


def stage_ingest(m: Manifest) -> dict[str, Any]:
    t0 = time.perf_counter()
    sources = expand_sources(m.coci)
    index, report = ingest(sources, shards=m.shards, jobs=m.jobs)
    index.save(m.out / INDEX)
    counts = report.as_dict()
    counts.update(total_edges=index.total_edges, total_entities=index.total_entities)
    _update_report(m, "ingest", counts, time.perf_counter() - t0)
    return counts


# -- evaluate ------------------------------------------------------------------


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def stage_evaluate(m: Manifest) -> dict[str, Any]:
    t0 = time.perf_counter()
    try:
        apps = read_applications(_need(m, "evaluate", APPLICATIONS))
        records: dict[str, Union[PublicationRecord, str]] = read_records(_need(m, "evaluate", RECORDS))
        index = CitationIndex.load(_need(m, "evaluate", INDEX))
    except (ValueError, KeyError) as exc:
        raise StageError("evaluate", str(exc)) from exc
    try:
        table = load_thresholds(m.thresholds)
    except (ThresholdError, TaxonomyError, OSError) as exc:
        raise StageError("evaluate", f"{m.thresholds}: {exc}") from exc
    known = set(load_recruitment_fields(m.rf_list))
    unknown_rf = [a.app_id for a in apps if a.rf not in known]

    policy = NormalizationPolicy.uniform(m.normalization)
    counts = defaultdict(int, dict.fromkeys((
        "evaluated", "passed", "zero_doi", "missing_thresholds", "missing_official", "compared",
        "agree_overall", "official_discrepancies"), 0))
    missing: dict[str, str] = {}
    rows = []
    for app in sorted(apps, key=lambda a: a.app_id):
        try:
            thresholds = table.lookup(app.rf, app.level, app.session_year)
        except MissingEntry as exc:
            counts["missing_thresholds"] += 1
            missing[app.app_id] = str(exc)
            continue
        sim = compute_metrics(app, records, index, policy)
        result = evaluate(sim, thresholds, m.comparator)
        counts["evaluated"] += 1
        counts["passed"] += result.passed
        counts["zero_doi"] += not app.dois
        row = {
            "app_id": app.app_id, "rf": app.rf.code, "level": app.level.value,
            "session_year": app.session_year, "n_dois": len(app.dois),
            "n_found": sum(isinstance(records.get(d), PublicationRecord) for d in app.dois),
            "sim_a": sim.a_journals, "sim_b": sim.b_citations, "sim_c": sim.c_hindex,
            "t_a": thresholds.t_a, "t_b": thresholds.t_b, "t_c": thresholds.t_c,
            "exceeds_a": result.exceeds[0], "exceeds_b": result.exceeds[1], "exceeds_c": result.exceeds[2],
            "passed": result.passed,
        }
        if app.official_metrics is not None:
            row.update(official_a=app.official_metrics.a_journals, official_b=app.official_metrics.b_citations,
                       official_c=app.official_metrics.c_hindex)
        row["official_passed"] = app.official_passed
        try:
            rec = compare(app.app_id, result, thresholds, app.official_metrics, app.official_passed, m.comparator)
        except MissingOfficialData:
            counts["missing_official"] += 1
        else:
            row.update(official_recomputed=rec.official_recomputed, agree_a=rec.agree_a, agree_b=rec.agree_b,
                       agree_c=rec.agree_c, agree_overall=rec.agree_overall)
            counts["compared"] += 1
            counts["agree_overall"] += rec.agree_overall
            counts["official_discrepancies"] += rec.official_discrepancy
        rows.append(row)

    with open(m.out / RESULTS, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([row["app_id"], row["rf"], row["level"]]
                            + [_num(row.get(c)) for c in RESULT_COLUMNS[3:]])

    out: dict[str, Any] = dict(sorted(counts.items()))
    out["applications"] = len(apps)
    out["missing_threshold_apps"] = dict(sorted(missing.items()))
    out["unknown_rf_apps"] = sorted(unknown_rf)
    _update_report(m, "evaluate", out, time.perf_counter() - t0)
    return out


# -- report --------------------------------------------------------------------


def _flag(text: str) -> Optional[bool]:
    return None if text == "" else text == "true"


def read_agreement_rows(path: Union[str, Path]) -> list[agr.AgreementRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            if r["agree_overall"] == "":
                continue
            rec = AgreementRecord(r["app_id"], _flag(r["agree_a"]), _flag(r["agree_b"]),
                                  _flag(r["agree_c"]), _flag(r["agree_overall"]))
            rows.append(agr.AgreementRow(rec, Level.parse(r["level"]), parse_rf(r["rf"])))
    return rows


def stage_report(m: Manifest) -> dict[str, Any]:
    t0 = time.perf_counter()
    rows = read_agreement_rows(_need(m, "report", RESULTS))
    report_dir = m.out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    by_level = agr.aggregate(rows, "level")
    by_sa = agr.aggregate(rows, "level_sa")
    by_rf = agr.aggregate(rows, "level_rf")
    written = []

    def table(name, reports):
        path = report_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            agr.write_table(reports, fh)
        written.append(path.name)

    table("agreement_by_level.csv", by_level)
    for level in (Level.FP, Level.AP):
        table(f"agreement_by_sa_{level.value}.csv", [r for r in by_sa if r.group_key[0] is level])
        table(f"agreement_by_rf_{level.value}.csv", [r for r in by_rf if r.group_key[0] is level])

    figures = []
    if m.figures and rows:
        from . import plotting

        fig_dir = report_dir / "figures"
        sa_by_level = {lv: [r for r in by_sa if r.group_key[0] is lv] for lv in (Level.FP, Level.AP)}
        figures.append(plotting.plot_area_ranking(sa_by_level, fig_dir / "sa_ranking.svg").name)
        per_rf: dict = defaultdict(dict)
        for r in by_rf:
            per_rf[r.group_key[1]][r.group_key[0]] = r
        for rf in sorted(per_rf):
            figures.append(plotting.plot_field_bars(rf.code, per_rf[rf], fig_dir / f"rf_{rf.slug}.svg").name)

    counts = {
        "records": len(rows),
        "tables": written,
        "figures": len(figures),
        "overall": {r.label: {"n": r.n, "pct_overall": r.pct_overall} for r in by_level},
    }
    _update_report(m, "report", counts, time.perf_counter() - t0)
    return counts


STAGE_FUNCS = {
    "extract": stage_extract,
    "resolve": stage_resolve,
    "ingest": stage_ingest,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def run(m: Manifest) -> dict:
    """Run every stage in order and return the run report."""
    report_path = m.out / RUN_REPORT
    if report_path.exists():
        report_path.unlink()
    for stage in STAGES:
        STAGE_FUNCS[stage](m)
    return read_run_report(m.out)
