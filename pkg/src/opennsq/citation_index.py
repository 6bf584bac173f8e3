"""In-degree index built from COCI-format citation dumps.

Ingestion streams the dumps once. Each DOI is interned to an integer id
(the only structure that grows with the data), and every (citing, cited)
pair is packed into one int64 and spilled to a shard file keyed by the
cited id. Shards are then de-duplicated exactly with ``numpy.unique`` one
at a time, so peak memory is the intern table plus one shard.
"""

from __future__ import annotations

import bz2
import csv
import glob
import gzip
import io
import logging
import lzma
import os
import tempfile
import zipfile
import zlib
from array import array
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, TextIO, Union

import numpy as np

from .doi_harvest import DOI_RE

logger = logging.getLogger(__name__)

COCI_COLUMNS = ("oci", "citing", "cited", "creation", "timespan", "journal_sc", "author_sc")
SNAPSHOT_MAGIC = "OPENNSQ-CITATION-INDEX"
SNAPSHOT_VERSION = 1

_ID_BITS = 32
_FLUSH_ITEMS = 1 << 20  # per-shard buffer size before spilling, in pairs

Source = Union[str, Path, TextIO]


class UnreadableSource(Exception):
    pass


class SnapshotError(ValueError):
    pass


def _norm(value: str) -> str:
    return value.strip().lower()


class CitationIndex:
    """Immutable DOI -> in-degree map. Unknown DOIs have in-degree 0."""

    def __init__(self, counts: Mapping[str, int], total_edges: int, total_entities: int):
        self._counts = {d: int(c) for d, c in counts.items() if c}
        self.total_edges = int(total_edges)
        self.total_entities = int(total_entities)

    def __len__(self) -> int:
        return len(self._counts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CitationIndex):
            return NotImplemented
        return (self._counts == other._counts and self.total_edges == other.total_edges
                and self.total_entities == other.total_entities)

    def citation_count(self, doi: str) -> int:
        return self._counts.get(_norm(doi), 0)

    def restrict(self, dois: Iterable[str]) -> dict[str, int]:
        return {d: self.citation_count(d) for d in dois}

    def items(self) -> Iterator[tuple[str, int]]:
        for doi in sorted(self._counts):
            yield doi, self._counts[doi]

    # -- snapshot ------------------------------------------------------------

    def dumps(self) -> str:
        """Canonical text serialization (records sorted by DOI)."""
        lines = [
            SNAPSHOT_MAGIC,
            f"format_version\t{SNAPSHOT_VERSION}",
            f"total_edges\t{self.total_edges}",
            f"total_entities\t{self.total_entities}",
            "doi\tcount",
        ]
        lines.extend(f"{doi}\t{count}" for doi, count in self.items())
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "CitationIndex":
        lines = text.splitlines()
        if len(lines) < 5 or lines[0] != SNAPSHOT_MAGIC:
            raise SnapshotError("not a citation index snapshot")
        meta = {}
        for line in lines[1:4]:
            key, _, value = line.partition("\t")
            meta[key] = value
        if meta.get("format_version") != str(SNAPSHOT_VERSION):
            raise SnapshotError(f"unsupported snapshot version {meta.get('format_version')!r}")
        counts = {}
        for line in lines[5:]:
            doi, _, count = line.partition("\t")
            counts[doi] = int(count)
        total_edges = int(meta["total_edges"])
        if sum(counts.values()) != total_edges:
            raise SnapshotError("snapshot counts do not add up to total_edges")
        return cls(counts, total_edges, int(meta["total_entities"]))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CitationIndex":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def citation_count(index: CitationIndex, doi: str) -> int:
    return index.citation_count(doi)


def restrict(index: CitationIndex, dois: Iterable[str]) -> dict[str, int]:
    return index.restrict(dois)


@dataclass
class IngestReport:
    files: int = 0
    rows: int = 0
    malformed: int = 0
    duplicates: int = 0
    distinct_pairs: int = 0
    unreadable: list[tuple[str, str]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"files": self.files, "rows": self.rows, "malformed": self.malformed,
                "duplicates": self.duplicates, "distinct_pairs": self.distinct_pairs,
                "unreadable": [list(u) for u in self.unreadable]}


def expand_sources(patterns: Iterable[Union[str, Path]]) -> list[Path]:
    """Expand globs; literal paths that match nothing are kept so they get reported."""
    out: list[Path] = []
    for pattern in patterns:
        hits = sorted(glob.glob(str(pattern)))
        if hits:
            out.extend(Path(h) for h in hits)
        else:
            out.append(Path(pattern))
    return out


def _text_streams(source: Source) -> Iterator[tuple[str, TextIO]]:
    """Yield (name, text stream) pairs, sniffing compression from magic bytes."""
    if not isinstance(source, (str, Path)):
        yield getattr(source, "name", "<stream>"), source
        return
    path = Path(source)
    with open(path, "rb") as fh:
        head = fh.read(6)
    if head.startswith(b"PK\x03\x04"):
        with zipfile.ZipFile(path) as zf:
            for name in sorted(zf.namelist()):
                if name.endswith("/"):
                    continue
                with zf.open(name) as member:
                    # zip members may themselves be compressed
                    yield from _wrap(f"{path}!{name}", member)
        return
    with open(path, "rb") as fh:
        yield from _wrap(str(path), fh)


def _wrap(name: str, raw) -> Iterator[tuple[str, TextIO]]:
    peek = raw.read(6)
    rest = io.BufferedReader(_Prefixed(peek, raw))
    if peek.startswith(b"\x1f\x8b"):
        binary = gzip.GzipFile(fileobj=rest)
    elif peek.startswith(b"BZh"):
        binary = bz2.BZ2File(rest)
    elif peek.startswith(b"\xfd7zXZ\x00"):
        binary = lzma.LZMAFile(rest)
    else:
        binary = rest
    yield name, io.TextIOWrapper(binary, encoding="utf-8", newline="")


class _Prefixed(io.RawIOBase):
    """Raw stream that replays already-consumed bytes before the rest."""

    def __init__(self, prefix: bytes, raw):
        self._prefix = prefix
        self._raw = raw

    def readable(self) -> bool:
        return True

    def readinto(self, buf) -> int:
        if self._prefix:
            n = min(len(buf), len(self._prefix))
            buf[:n] = self._prefix[:n]
            self._prefix = self._prefix[n:]
            return n
        data = self._raw.read(len(buf))
        buf[: len(data)] = data
        return len(data)


class _Spill:
    """Per-shard int64 buffers that overflow into temporary files."""

    def __init__(self, shards: int, workdir: str):
        self.shards = shards
        self.buffers = [array("q") for _ in range(shards)]
        self.paths = [os.path.join(workdir, f"shard-{i:04d}.bin") for i in range(shards)]
        self.spilled = [False] * shards

    def add(self, cited_id: int, citing_id: int) -> None:
        shard = cited_id % self.shards
        buf = self.buffers[shard]
        buf.append((cited_id << _ID_BITS) | citing_id)
        if len(buf) >= _FLUSH_ITEMS:
            self._flush(shard)

    def _flush(self, shard: int) -> None:
        with open(self.paths[shard], "ab") as fh:
            self.buffers[shard].tofile(fh)
        self.buffers[shard] = array("q")
        self.spilled[shard] = True

    def load(self, shard: int) -> np.ndarray:
        parts = []
        if self.spilled[shard]:
            parts.append(np.fromfile(self.paths[shard], dtype=np.int64))
        parts.append(np.frombuffer(self.buffers[shard], dtype=np.int64))
        self.buffers[shard] = array("q")
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()


def _column_positions(first_row: list[str]) -> tuple[Optional[tuple[int, int]], bool]:
    header = [c.strip().lower() for c in first_row]
    if "citing" in header and "cited" in header:
        return (header.index("citing"), header.index("cited")), True
    return None, False


def ingest(
    sources: Iterable[Source],
    *,
    shards: int = 16,
    jobs: int = 1,
    keep_edges: Union[str, Path, None] = None,
    workdir: Union[str, Path, None] = None,
) -> tuple[CitationIndex, IngestReport]:
    """Build a :class:`CitationIndex` counting each distinct pair once.

    Sources are paths (plain, gzip, bz2, xz or zip) or open text streams in
    the COCI CSV layout. A source that cannot be read is reported and
    skipped; malformed rows are counted and skipped.
    """
    report = IngestReport()
    ids: dict[str, int] = {}
    names: list[str] = []

    def intern(doi: str) -> int:
        i = ids.get(doi)
        if i is None:
            i = len(names)
            if i >= 1 << (_ID_BITS - 1):
                raise OverflowError("too many distinct DOIs for 32-bit ids")
            ids[doi] = i
            names.append(doi)
        return i

    if workdir is not None:
        Path(workdir).mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=workdir, prefix="opennsq-ingest-") as tmp:
        spill = _Spill(shards, tmp)
        for source in sources:
            report.files += 1
            label = str(getattr(source, "name", source))
            try:
                for label, stream in _text_streams(source):
                    _ingest_stream(stream, spill, intern, report)
            except (OSError, UnicodeDecodeError, EOFError, zipfile.BadZipFile, lzma.LZMAError, zlib.error,
                    csv.Error) as exc:
                logger.error("cannot read %s: %s", label, exc)
                report.unreadable.append((label, f"{type(exc).__name__}: {exc}"))

        n = len(names)
        in_degree = np.zeros(n, dtype=np.int64)
        kept_edges: list[tuple[str, str]] = []

        def finish(shard: int):
            keys = np.unique(spill.load(shard))
            cited, counts = np.unique(keys >> _ID_BITS, return_counts=True)
            return shard, keys, cited, counts

        shard_ids = range(shards)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(finish, shard_ids))
        else:
            results = map(finish, shard_ids)
        for shard, keys, cited, counts in results:
            in_degree[cited] += counts
            if keep_edges is not None:
                mask = (1 << _ID_BITS) - 1
                kept_edges.extend((names[int(k & mask)], names[int(k >> _ID_BITS)]) for k in keys)

    report.distinct_pairs = int(in_degree.sum())
    report.duplicates = report.rows - report.malformed - report.distinct_pairs
    counts = {names[i]: int(in_degree[i]) for i in np.flatnonzero(in_degree)}
    index = CitationIndex(counts, report.distinct_pairs, n)

    if keep_edges is not None:
        # edge lists are O(edges): only written on request
        kept_edges.sort()
        with open(keep_edges, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("citing", "cited"))
            writer.writerows(kept_edges)
    return index, report


def _ingest_stream(stream: TextIO, spill: _Spill, intern, report: IngestReport) -> None:
    reader = csv.reader(stream)
    positions: Optional[tuple[int, int]] = None
    first = True
    for row in reader:
        if first:
            first = False
            positions, is_header = _column_positions(row)
            if is_header:
                continue
            logger.warning("no COCI header found, assuming column order %s", ",".join(COCI_COLUMNS))
            positions = (1, 2)
        if not row:
            continue
        report.rows += 1
        ci, cd = positions
        if len(row) <= max(ci, cd):
            report.malformed += 1
            continue
        citing = _norm(row[ci])
        cited = _norm(row[cd])
        if not (DOI_RE.match(citing) and DOI_RE.match(cited)):
            report.malformed += 1
            continue
        spill.add(intern(cited), intern(citing))
