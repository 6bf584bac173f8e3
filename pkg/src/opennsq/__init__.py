"""Open-data simulation of the first (bibliometric) phase of the Italian
National Scientific Qualification."""

from .agreement import AgreementReport, aggregate, rank_groups
from .assessment import AgreementRecord, AssessmentResult, compare, evaluate
from .citation_index import CitationIndex, citation_count, ingest, restrict
from .doi_harvest import ExtractionReport, extract_dois, normalize_doi, validate_dois
from .metadata import NOT_FOUND, MetadataCache, MetadataClient, PublicationRecord
from .metrics import (CandidateApplication, MetricsTriple, NormalizationPolicy, compute_metrics, h_index,
                      scientific_age, window_filter)
from .taxonomy import (DisciplineCategory, Level, RecruitmentField, ThresholdTable, ThresholdTriple, classify,
                       format_rf, load_thresholds, parse_rf)

__version__ = "0.1.0"
