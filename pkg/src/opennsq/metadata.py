"""Publication metadata (type, year) from a Crossref-style works endpoint."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Union
from urllib.parse import quote

logger = logging.getLogger(__name__)

NOT_FOUND = "not_found"

# Crossref work types; only "journal-article" counts as a journal paper.
TYPE_IS_JOURNAL_ARTICLE: dict[str, bool] = {
    "journal-article": True,
    "book": False,
    "book-chapter": False,
    "book-part": False,
    "book-section": False,
    "book-series": False,
    "book-set": False,
    "book-track": False,
    "component": False,
    "database": False,
    "dataset": False,
    "dissertation": False,
    "edited-book": False,
    "grant": False,
    "journal": False,
    "journal-issue": False,
    "journal-volume": False,
    "monograph": False,
    "other": False,
    "peer-review": False,
    "posted-content": False,
    "proceedings": False,
    "proceedings-article": False,
    "proceedings-series": False,
    "reference-book": False,
    "reference-entry": False,
    "report": False,
    "report-component": False,
    "report-series": False,
    "standard": False,
    "standard-series": False,
}

YEAR_PRIORITY = ("published-print", "published-online", "issued")
MIN_YEAR = 1800


def is_journal_article(pub_type: Optional[str]) -> bool:
    if pub_type not in TYPE_IS_JOURNAL_ARTICLE:
        logger.warning("unknown publication type %r, not counted as journal article", pub_type)
        return False
    return TYPE_IS_JOURNAL_ARTICLE[pub_type]


@dataclass(frozen=True)
class PublicationRecord:
    doi: str
    year: Optional[int]
    pub_type: str
    is_journal_article: bool

    @classmethod
    def make(cls, doi: str, pub_type: str, year: Optional[int]) -> "PublicationRecord":
        return cls(doi, year, pub_type, is_journal_article(pub_type))


class FetchError(Exception):
    pass


class RateLimited(FetchError):
    def __init__(self, retry_after: Optional[float] = None):
        super().__init__(f"rate limited (retry after {retry_after})")
        self.retry_after = retry_after


class Transient(FetchError):
    pass


class PermanentFailure(FetchError):
    pass


def _valid_year(year: Any, current_year: int) -> Optional[int]:
    try:
        year = int(year)
    except (TypeError, ValueError):
        return None
    if MIN_YEAR <= year <= current_year + 1:
        return year
    logger.debug("discarding implausible year %s", year)
    return None


def best_year(message: Mapping[str, Any], current_year: Optional[int] = None) -> Optional[int]:
    """Print date first, then online date, then issued date."""
    if current_year is None:
        current_year = _dt.date.today().year
    for key in YEAR_PRIORITY:
        parts = (message.get(key) or {}).get("date-parts") or []
        if parts and parts[0] and parts[0][0] is not None:
            year = _valid_year(parts[0][0], current_year)
            if year is not None:
                return year
    return None


def parse_work(doi: str, message: Mapping[str, Any]) -> PublicationRecord:
    pub_type = message.get("type") or "other"
    return PublicationRecord.make(doi, pub_type, best_year(message))


# -- transports --------------------------------------------------------------


class Transport(Protocol):
    """``get(doi)`` returns (status code, Crossref ``message`` or None, headers)."""

    def get(self, doi: str) -> tuple[int, Optional[dict], Mapping[str, str]]: ...


class FixtureTransport:
    """In-memory works store keyed by DOI; answers 404 for anything else."""

    def __init__(self, works: Iterable[Mapping[str, Any]] = ()):
        self._works: dict[str, dict] = {}
        for w in works:
            self._works[str(w["DOI"]).strip().lower()] = dict(w)
        self.calls = 0

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "FixtureTransport":
        """Load a JSON-lines file of Crossref work messages."""
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip())

    def __contains__(self, doi: str) -> bool:
        return doi in self._works

    def get(self, doi: str):
        self.calls += 1
        work = self._works.get(doi)
        if work is None:
            return 404, None, {}
        return 200, work, {}


class CrossrefTransport:
    def __init__(self, base_url: str = "https://api.crossref.org/works/", mailto: str = "",
                 session=None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/") + "/"
        self.mailto = mailto
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
            agent = "opennsq/0.1"
            if mailto:
                agent += f" (mailto:{mailto})"
            session.headers.update({"User-Agent": agent, "Accept": "application/json"})
        self.session = session

    def get(self, doi: str):
        params = {"mailto": self.mailto} if self.mailto else None
        try:
            resp = self.session.get(self.base_url + quote(doi, safe="/"), params=params, timeout=self.timeout)
        except Exception as exc:
            raise Transient(str(exc)) from exc
        payload = None
        if resp.status_code == 200:
            try:
                payload = resp.json().get("message")
            except ValueError as exc:
                raise Transient(f"bad JSON for {doi}") from exc
        return resp.status_code, payload, resp.headers


class RateLimiter:
    """Spaces calls at least ``1 / rate`` seconds apart across threads."""

    def __init__(self, rate: Optional[float], clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate if rate else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            self._sleep(delay)


# -- cache -------------------------------------------------------------------


@dataclass(frozen=True)
class CacheEntry:
    doi: str
    status: str  # "found" | "not_found"
    pub_type: Optional[str]
    year: Optional[int]
    timestamp: float

    def record(self) -> Union[PublicationRecord, str]:
        if self.status == NOT_FOUND:
            return NOT_FOUND
        return PublicationRecord.make(self.doi, self.pub_type, self.year)

    def to_json(self) -> str:
        return json.dumps({"doi": self.doi, "status": self.status, "pub_type": self.pub_type,
                           "year": self.year, "timestamp": self.timestamp}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CacheEntry":
        d = json.loads(line)
        return cls(d["doi"], d["status"], d.get("pub_type"), d.get("year"), float(d.get("timestamp", 0)))


class MetadataCache:
    """DOI -> record/not_found, persisted as append-only JSON lines.

    Later lines win on reload. ``ttl`` (seconds) bounds how long an entry is
    trusted; ``None`` trusts entries forever.
    """

    def __init__(self, path: Union[str, Path, None] = None, ttl: Optional[float] = None,
                 clock: Callable[[], float] = time.time):
        self.path = Path(path) if path else None
        self.ttl = ttl
        self._clock = clock
        self._entries: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = CacheEntry.from_json(line)
                        self._entries[entry.doi] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, doi: str) -> Optional[CacheEntry]:
        entry = self._entries.get(doi)
        if entry is None:
            return None
        if self.ttl is not None and self._clock() - entry.timestamp > self.ttl:
            return None
        return entry

    def put(self, doi: str, value: Union[PublicationRecord, str]) -> CacheEntry:
        if value == NOT_FOUND:
            entry = CacheEntry(doi, NOT_FOUND, None, None, self._clock())
        else:
            entry = CacheEntry(doi, "found", value.pub_type, value.year, self._clock())
        with self._lock:
            self._entries[doi] = entry
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
        return entry

    def entries(self) -> list[CacheEntry]:
        return [self._entries[d] for d in sorted(self._entries)]


# -- client ------------------------------------------------------------------


@dataclass
class FetchStats:
    found: int = 0
    not_found: int = 0
    failed: int = 0
    failures: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"found": self.found, "not_found": self.not_found, "failed": self.failed,
                "failures": dict(sorted(self.failures.items()))}


class MetadataClient:
    def __init__(self, transport: Transport, cache: Optional[MetadataCache] = None, *,
                 rate_limit: Optional[float] = None, retries: int = 3, backoff: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep):
        self.transport = transport
        self.cache = cache if cache is not None else MetadataCache()
        self.limiter = RateLimiter(rate_limit, sleep=sleep)
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def _query(self, doi: str) -> Union[PublicationRecord, str]:
        attempt = 0
        while True:
            self.limiter.wait()
            try:
                status, message, headers = self.transport.get(doi)
                if status == 200 and message is not None:
                    return parse_work(doi, message)
                if status == 404:
                    return NOT_FOUND
                if status == 429:
                    retry_after = headers.get("Retry-After") if headers else None
                    raise RateLimited(float(retry_after) if retry_after else None)
                if status >= 500 or status == 200:
                    raise Transient(f"HTTP {status}")
                raise PermanentFailure(f"HTTP {status}")
            except (RateLimited, Transient) as exc:
                if attempt >= self.retries:
                    raise PermanentFailure(f"retries exhausted: {exc}") from exc
                delay = getattr(exc, "retry_after", None) or self.backoff * 2 ** attempt
                logger.debug("retrying %s in %.2fs after %s", doi, delay, exc)
                self._sleep(delay)
                attempt += 1

    def fetch_record(self, doi: str) -> Union[PublicationRecord, str]:
        """Record for ``doi`` or ``NOT_FOUND``; both answers are cached."""
        entry = self.cache.get(doi)
        if entry is not None:
            return entry.record()
        value = self._query(doi)
        self.cache.put(doi, value)
        return value

    def fetch_all(self, dois: Iterable[str], jobs: int = 1) -> tuple[dict[str, Union[PublicationRecord, str]], FetchStats]:
        dois = sorted(set(dois))
        stats = FetchStats()

        def one(doi):
            try:
                return self.fetch_record(doi), None
            except FetchError as exc:
                return None, str(exc)

        if jobs > 1 and len(dois) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(one, dois))
        else:
            outcomes = [one(d) for d in dois]

        results: dict[str, Union[PublicationRecord, str]] = {}
        for doi, (value, error) in zip(dois, outcomes):
            if error is not None:
                stats.failed += 1
                stats.failures[doi] = error
                continue
            results[doi] = value
            if value == NOT_FOUND:
                stats.not_found += 1
            else:
                stats.found += 1
        return results, stats


# -- records file (stage artifact) ------------------------------------------------


def write_records(results: Mapping[str, Union[PublicationRecord, str]], path: Union[str, Path],
                  extra: Optional[Mapping[str, Mapping[str, Any]]] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doi in sorted(results):
            value = results[doi]
            if value == NOT_FOUND:
                rec = {"doi": doi, "status": NOT_FOUND, "pub_type": None, "year": None,
                       "is_journal_article": False}
            else:
                rec = {"doi": doi, "status": "found", "pub_type": value.pub_type, "year": value.year,
                       "is_journal_article": value.is_journal_article}
            if extra and doi in extra:
                rec.update(extra[doi])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path: Union[str, Path]) -> dict[str, Union[PublicationRecord, str]]:
    out: dict[str, Union[PublicationRecord, str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["status"] == "found":
                out[d["doi"]] = PublicationRecord(d["doi"], d["year"], d["pub_type"], d["is_journal_article"])
            elif d["status"] == NOT_FOUND:
                out[d["doi"]] = NOT_FOUND
    return out
