"""DOI extraction from plain-text CVs, plus existence checks."""

from __future__ import annotations

import enum
import html
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

logger = logging.getLogger(__name__)

__all__ = [
    "DOI_RE",
    "is_doi",
    "normalize_doi",
    "format_list",
    "ExtractionReport",
    "extract_dois",
    "Answer",
    "Resolver",
    "FixtureResolver",
    "DoiProxyResolver",
    "ResolverExhausted",
    "ValidationResult",
    "validate_dois",
]

DOI_RE = re.compile(r"^10\.\d{4,9}/\S+$")

# Crossref's recommended suffix set, widened with brackets, '+' and '%'
_SUFFIX_CHARS = r"\-._;()/:A-Za-z0-9<>\[\]%+"
_CANDIDATE_RE = re.compile(r"(?<![0-9.])10\.\d{4,9}(?:/|%2[Ff])[" + _SUFFIX_CHARS + r"]*")
_SUFFIX_RUN_RE = re.compile(r"[" + _SUFFIX_CHARS + r"]+")
_ESCAPE_RE = re.compile(r"%([0-9A-Fa-f]{2})")
_DOI_START_RE = re.compile(r"10\.\d{4,9}(?:/|%2[Ff])")
# "[4]", "(4)", "4." or "4)" opening a line is a list item, not a DOI tail
_LIST_MARKER_RE = re.compile(r"[\[(]?\d{1,3}[\]).]")
_SUFFIX_SET = frozenset("-._;()/:<>[]+" "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789")

_TRAILING = ".,;:"
_PAIRS = {")": "(", "]": "[", ">": "<"}
# characters that make a line-final fragment look unfinished
_CONNECTORS = frozenset("-_./:;(")

_TEXT_FIXES = str.maketrans({
    "\u00ad": None,  # soft hyphen
    "\u200b": None,  # zero-width space/joiners
    "\u200c": None,
    "\u200d": None,
    "\u2060": None,
    "\ufeff": None,
    "\u2010": "-",
    "\u2011": "-",
    "\u2012": "-",
    "\u2013": "-",
    "\u2212": "-",
    "\u2044": "/",
    "\u2215": "/",
})


def is_doi(value: str) -> bool:
    return bool(DOI_RE.match(value)) and value == value.lower()


def normalize_doi(value: str) -> Optional[str]:
    """Canonical lowercase DOI, or None if ``value`` is not a DOI.

    Accepts bare DOIs and the usual ``doi:`` / resolver-URL prefixes.
    """
    if value is None:
        return None
    text = str(value).strip()
    low = text.lower()
    for prefix in ("https://doi.org/", "http://doi.org/", "https://dx.doi.org/",
                   "http://dx.doi.org/", "doi.org/", "dx.doi.org/", "doi:"):
        if low.startswith(prefix):
            text = text[len(prefix):].strip()
            break
    text = text.lower()
    return text if DOI_RE.match(text) else None


def format_list(dois: Iterable[str]) -> str:
    return "\n".join(dois)


@dataclass
class ExtractionReport:
    dois: list[str] = field(default_factory=list)
    raw_hits: int = 0
    repaired: int = 0
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rejected"] = [list(r) for r in self.rejected]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionReport":
        return cls(
            dois=list(d.get("dois", [])),
            raw_hits=int(d.get("raw_hits", 0)),
            repaired=int(d.get("repaired", 0)),
            rejected=[tuple(r) for r in d.get("rejected", [])],
        )


def _clean_text(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return html.unescape(text).translate(_TEXT_FIXES)


def _percent_decode(s: str) -> str:
    # Decode only escapes that yield DOI characters, to a fixpoint, so the
    # result never contains a decodable escape (keeps extraction idempotent).
    def sub(m: re.Match) -> str:
        ch = chr(int(m.group(1), 16))
        return ch if ch in _SUFFIX_SET else m.group(0)

    while True:
        decoded = _ESCAPE_RE.sub(sub, s)
        if decoded == s:
            return s
        s = decoded


def _strip_trailing(s: str) -> str:
    while s:
        last = s[-1]
        if last in _TRAILING:
            s = s[:-1]
        elif last in _PAIRS and s.count(last) > s.count(_PAIRS[last]):
            s = s[:-1]
        else:
            break
    return s


def _continuation(text: str, pos: int, fragment: str) -> Optional[tuple[str, int]]:
    """Return (piece, end) if the line starting at ``pos`` continues ``fragment``."""
    m = _SUFFIX_RUN_RE.match(text, pos)
    if m is None:
        return None
    piece = m.group(0)
    end = m.end()
    if _DOI_START_RE.match(piece) or piece.lower().startswith(("http", "doi")):
        return None
    if _LIST_MARKER_RE.fullmatch(piece):
        return None
    core = _strip_trailing(piece)
    if not core:
        return None
    looks_unfinished = fragment[-1] in _CONNECTORS
    looks_like_suffix = any(c.isdigit() or c in _CONNECTORS for c in core) or len(core) == 1
    if not (looks_unfinished or looks_like_suffix):
        return None
    return piece, end


def extract_dois(text: str) -> ExtractionReport:
    """Find every DOI in ``text``, repaired, lowercased and de-duplicated.

    Repairs: DOIs broken across line breaks are re-joined, percent escapes
    and HTML entities are decoded, and trailing punctuation or unbalanced
    closing brackets are dropped.
    """
    report = ExtractionReport()
    if not text:
        return report
    text = _clean_text(text)
    seen: set[str] = set()
    pos = 0
    while True:
        m = _CANDIDATE_RE.search(text, pos)
        if m is None:
            break
        report.raw_hits += 1
        raw = m.group(0)
        value = raw
        end = m.end()
        repaired = False

        # rejoin across line breaks; a DOI may be split more than once
        while end < len(text) and text[end] == "\n":
            fragment = value.rstrip()
            if "/" not in fragment and "%2f" not in fragment.lower():
                break
            cont = _continuation(text, end + 1, fragment)
            if cont is None:
                break
            piece, end = cont
            value += piece
            repaired = True
        pos = end

        decoded = _percent_decode(value)
        if decoded != value:
            repaired = True
        doi = _strip_trailing(decoded)
        if doi != decoded:
            repaired = True
        doi = doi.lower()

        if not DOI_RE.match(doi):
            report.rejected.append((raw, "empty or invalid suffix"))
            continue
        if repaired:
            report.repaired += 1
        if doi not in seen:
            seen.add(doi)
            report.dois.append(doi)
    return report


# -- existence checks -------------------------------------------------------


class Answer(enum.Enum):
    YES = "yes"
    NO = "no"
    UNAVAILABLE = "unavailable"


class Resolver(Protocol):
    def exists(self, doi: str) -> Answer: ...


class ResolverExhausted(Exception):
    """Raised when a DOI could not be checked within the retry budget."""


class FixtureResolver:
    """Offline resolver backed by a newline-delimited list of valid DOIs."""

    def __init__(self, dois: Iterable[str]):
        self._valid = frozenset(d for d in (normalize_doi(x) for x in dois) if d)
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "FixtureResolver":
        with open(path, encoding="utf-8") as fh:
            return cls(line for line in fh if line.strip() and not line.startswith("#"))

    def exists(self, doi: str) -> Answer:
        self.calls += 1
        return Answer.YES if doi in self._valid else Answer.NO


class DoiProxyResolver:
    """Checks DOIs against the doi.org handle REST API."""

    def __init__(self, base_url: str = "https://doi.org/api/handles/", session=None, timeout: float = 15.0):
        self.base_url = base_url
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def exists(self, doi: str) -> Answer:
        try:
            resp = self.session.get(self.base_url + doi, timeout=self.timeout)
        except Exception as exc:  # network trouble is not an answer
            logger.debug("doi proxy error for %s: %s", doi, exc)
            return Answer.UNAVAILABLE
        if resp.status_code == 200:
            try:
                code = resp.json().get("responseCode")
            except ValueError:
                return Answer.UNAVAILABLE
            return Answer.YES if code == 1 else Answer.NO
        if resp.status_code == 404:
            return Answer.NO
        return Answer.UNAVAILABLE


@dataclass
class ValidationResult:
    valid: list[str] = field(default_factory=list)
    invalid: list[str] = field(default_factory=list)
    unknown: list[str] = field(default_factory=list)

    def status(self) -> dict[str, str]:
        out = {d: "valid" for d in self.valid}
        out.update((d, "invalid") for d in self.invalid)
        out.update((d, "unknown") for d in self.unknown)
        return out


def _check(resolver: Resolver, doi: str, retries: int, backoff: float, sleep: Callable[[float], None]) -> Answer:
    for attempt in range(retries + 1):
        try:
            answer = resolver.exists(doi)
        except Exception as exc:
            logger.debug("resolver raised for %s: %s", doi, exc)
            answer = Answer.UNAVAILABLE
        if answer is not Answer.UNAVAILABLE:
            return answer
        if attempt < retries and backoff > 0:
            sleep(backoff * 2 ** attempt)
    raise ResolverExhausted(doi)


def validate_dois(
    dois: Iterable[str],
    resolver: Resolver,
    *,
    retries: int = 2,
    backoff: float = 0.0,
    jobs: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> ValidationResult:
    """Partition ``dois`` into valid / invalid / unknown.

    Answers of ``unavailable`` are retried ``retries`` times; DOIs that stay
    unavailable land in ``unknown`` rather than ``invalid``.
    """
    dois = list(dict.fromkeys(dois))

    def one(doi: str) -> str:
        try:
            answer = _check(resolver, doi, retries, backoff, sleep)
        except ResolverExhausted:
            return "unknown"
        return "valid" if answer is Answer.YES else "invalid"

    if jobs > 1 and len(dois) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(one, dois))
    else:
        verdicts = [one(d) for d in dois]

    result = ValidationResult()
    for doi, verdict in zip(dois, verdicts):
        getattr(result, verdict).append(doi)
    if result.unknown:
        logger.warning("%d DOIs could not be checked", len(result.unknown))
    return result


def extract_file(path: Path) -> ExtractionReport:
    return extract_dois(Path(path).read_text(encoding="utf-8", errors="replace"))


def write_reports(reports: dict[str, ExtractionReport], path: Path) -> None:
    """One JSON record per CV, sorted by CV id."""
    with open(path, "w", encoding="utf-8") as fh:
        for cv_id in sorted(reports):
            rec = {"cv": cv_id, **reports[cv_id].to_dict()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
