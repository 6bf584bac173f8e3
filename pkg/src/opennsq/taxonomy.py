"""Recruitment-field taxonomy, discipline categories and threshold tables."""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, TextIO, Union

__all__ = [
    "TaxonomyError",
    "MalformedCode",
    "OutOfRange",
    "ThresholdError",
    "DuplicateKey",
    "MalformedRow",
    "MissingEntry",
    "Level",
    "DisciplineCategory",
    "RecruitmentField",
    "ThresholdTriple",
    "ThresholdTable",
    "parse_rf",
    "format_rf",
    "classify",
    "load_thresholds",
    "load_recruitment_fields",
    "ND_EXCEPTIONS",
    "CD_EXCEPTIONS",
]


class TaxonomyError(ValueError):
    pass


class MalformedCode(TaxonomyError):
    pass


class OutOfRange(TaxonomyError):
    pass


class ThresholdError(Exception):
    pass


class DuplicateKey(ThresholdError):
    pass


class MalformedRow(ThresholdError):
    pass


class MissingEntry(ThresholdError, KeyError):
    pass


class Level(enum.Enum):
    """Qualification level; the value is the publication window in years."""

    FP = "FP"
    AP = "AP"

    @property
    def window(self) -> int:
        return _WINDOWS[self]

    @classmethod
    def parse(cls, value: Union[str, "Level"]) -> "Level":
        if isinstance(value, Level):
            return value
        text = str(value).strip().upper()
        # "1"/"2" are the official level numbers (FP is level 1)
        aliases = {"1": "FP", "2": "AP", "I": "FP", "II": "AP"}
        text = aliases.get(text, text)
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown level {value!r}, expected FP or AP") from None

    def __lt__(self, other: "Level") -> bool:
        if not isinstance(other, Level):
            return NotImplemented
        return _LEVEL_ORDER[self] < _LEVEL_ORDER[other]


_WINDOWS = {Level.FP: 15, Level.AP: 10}
_LEVEL_ORDER = {Level.FP: 0, Level.AP: 1}


class DisciplineCategory(enum.Enum):
    CD = "CD"  # citation-based
    ND = "ND"  # non-citation-based


_RF_RE = re.compile(r"^(\d{1,2})\s*[/-]\s*([A-Za-z])(\d)$")


@dataclass(frozen=True, order=True)
class RecruitmentField:
    sa: int
    group: str
    field: int

    def __post_init__(self):
        if not 1 <= self.sa <= 14:
            raise OutOfRange(f"scientific area {self.sa} not in 1-14")
        if not (len(self.group) == 1 and "A" <= self.group <= "Z"):
            raise MalformedCode(f"group {self.group!r} is not a single uppercase letter")
        if not 1 <= self.field <= 9:
            raise OutOfRange(f"field digit {self.field} not in 1-9")

    @property
    def code(self) -> str:
        return f"{self.sa:02d}/{self.group}{self.field}"

    @property
    def slug(self) -> str:
        """Filesystem-safe form of the code, e.g. ``06-D5``."""
        return self.code.replace("/", "-")

    def __str__(self) -> str:
        return self.code


def parse_rf(code: str) -> RecruitmentField:
    """Parse ``AA/GF`` (or ``AA-GF``) into a :class:`RecruitmentField`.

    >>> parse_rf(" 08-A4 ")
    RecruitmentField(sa=8, group='A', field=4)
    """
    if isinstance(code, RecruitmentField):
        return code
    m = _RF_RE.match(str(code).strip())
    if m is None:
        raise MalformedCode(f"not a recruitment field code: {code!r}")
    return RecruitmentField(int(m.group(1)), m.group(2).upper(), int(m.group(3)))


def format_rf(rf: RecruitmentField) -> str:
    return rf.code


ND_EXCEPTIONS = frozenset(parse_rf(c) for c in ("08/C1", "08/D1", "08/E1", "08/E2", "08/F1"))
CD_EXCEPTIONS = frozenset(parse_rf(c) for c in ("11/E1", "11/E2", "11/E3", "11/E4"))


def classify(rf: RecruitmentField) -> DisciplineCategory:
    if rf in ND_EXCEPTIONS:
        return DisciplineCategory.ND
    if rf in CD_EXCEPTIONS:
        return DisciplineCategory.CD
    return DisciplineCategory.CD if rf.sa <= 9 else DisciplineCategory.ND


def load_recruitment_fields(path: Union[str, Path, None] = None) -> list[RecruitmentField]:
    """Load the RF list; defaults to the packaged 184-field table."""
    if path is None:
        text = resources.files("opennsq.data").joinpath("recruitment_fields.csv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    fields = [parse_rf(row["rf"]) for row in reader]
    if len(set(fields)) != len(fields):
        raise TaxonomyError("duplicate recruitment field in list")
    return fields


@dataclass(frozen=True)
class ThresholdTriple:
    t_a: float
    t_b: float
    t_c: float

    def __post_init__(self):
        for name in ("t_a", "t_b", "t_c"):
            value = getattr(self, name)
            if not value >= 0:  # also rejects NaN
                raise ValueError(f"{name} must be non-negative, got {value!r}")

    def __iter__(self) -> Iterator[float]:
        return iter((self.t_a, self.t_b, self.t_c))


ThresholdKey = tuple[RecruitmentField, Level, Union[int, None]]


class ThresholdTable:
    """Immutable lookup (rf, level[, session]) -> ThresholdTriple.

    Rows without a session apply to every session; a session-specific row
    takes precedence when present.
    """

    def __init__(self, entries: dict[ThresholdKey, ThresholdTriple] | None = None):
        self._entries = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def lookup(self, rf: RecruitmentField | str, level: Level | str, session: int | None = None) -> ThresholdTriple:
        rf = parse_rf(rf)
        level = Level.parse(level)
        if session is not None and (rf, level, session) in self._entries:
            return self._entries[(rf, level, session)]
        try:
            return self._entries[(rf, level, None)]
        except KeyError:
            where = f"{rf} {level.value}" + (f" session {session}" if session is not None else "")
            raise MissingEntry(f"no thresholds for {where}") from None


def _number(value: str, column: str, lineno: int) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise MalformedRow(f"line {lineno}: {column}={value!r} is not a number") from None
    if not x >= 0:
        raise MalformedRow(f"line {lineno}: {column}={value!r} is negative")
    return x


def load_thresholds(source: Union[str, Path, TextIO, Iterable[str]]) -> ThresholdTable:
    """Read a ``rf,level,t_a,t_b,t_c[,session]`` table."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_thresholds(fh)

    reader = csv.DictReader(source)
    required = {"rf", "level", "t_a", "t_b", "t_c"}
    header = set(reader.fieldnames or ())
    if not required <= header:
        raise MalformedRow(f"threshold header must contain {sorted(required)}, got {reader.fieldnames}")

    entries: dict[ThresholdKey, ThresholdTriple] = {}
    for row in reader:
        lineno = reader.line_num
        if None in row or any(row.get(k) is None for k in required):
            raise MalformedRow(f"line {lineno}: wrong number of columns")
        try:
            rf = parse_rf(row["rf"])
            level = Level.parse(row["level"])
        except ValueError as exc:
            raise MalformedRow(f"line {lineno}: {exc}") from None
        session_text = (row.get("session") or "").strip()
        try:
            session = int(session_text) if session_text else None
        except ValueError:
            raise MalformedRow(f"line {lineno}: session={session_text!r} is not a year") from None
        key = (rf, level, session)
        if key in entries:
            raise DuplicateKey(f"line {lineno}: duplicate thresholds for {rf} {level.value}")
        entries[key] = ThresholdTriple(
            _number(row["t_a"], "t_a", lineno),
            _number(row["t_b"], "t_b", lineno),
            _number(row["t_c"], "t_c", lineno),
        )
    return ThresholdTable(entries)
