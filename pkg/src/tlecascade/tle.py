"""Two-Line Element parsing, serialization and bulk-archive ingestion.

Column layout follows the standard fixed-width TLE format (69 characters per
line).
"""

from __future__ import annotations

import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import (
    CatalogMismatch,
    ChecksumMismatch,
    DayOutOfRange,
    EmptyArchive,
    FieldParse,
    LineLengthMismatch,
    TleError,
)

log = logging.getLogger(__name__)

UNIX_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
TLE_LINE_LENGTH = 69

# Alpha-5 catalog prefix letters (I and O are skipped).
_ALPHA5 = "ABCDEFGHJKLMNPQRSTUVWXYZ"


class Source(str, Enum):
    TLE = "TLE"
    SUPGP = "SUPGP"


@dataclass(frozen=True, slots=True)
class TleRecord:
    """One parsed observation.

    Attributes:
        norad_id: Catalog number.
        epoch: UTC instant (timezone aware).
        mean_motion: rev/day.
        eccentricity: dimensionless, in [0, 1).
        inclination: degrees, in [0, 180].
        raan: degrees, in [0, 360).
        argp: degrees, in [0, 360).
        mean_anomaly: degrees, in [0, 360).
        bstar: B* drag term, inverse Earth radii.
        n_dot: raw line-1 field (first derivative of mean motion divided by
            two), rev/day^2.
        source: TLE or SUPGP.
    """

    norad_id: int
    epoch: datetime
    mean_motion: float
    eccentricity: float
    inclination: float
    raan: float
    argp: float
    mean_anomaly: float
    bstar: float
    n_dot: float
    source: Source = Source.TLE

    @property
    def epoch_hours(self) -> float:
        """Hours since 1970-01-01T00:00:00Z."""
        return epoch_hours(self.epoch)


def epoch_hours(t: datetime) -> float:
    return (t - UNIX_EPOCH) / timedelta(hours=1)


def tle_checksum(line: str) -> int:
    """Modulo-10 checksum over the first 68 characters.

    Digits count their value, '-' counts 1, everything else 0.
    """
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += ord(ch) - 48
        elif ch == "-":
            total += 1
    return total % 10


def epoch_to_instant(yy: int, fractional_doy: float) -> datetime:
    """Convert a TLE epoch (two-digit year, fractional day of year) to UTC."""
    if not 0 <= yy <= 99:
        raise FieldParse(f"two-digit year out of range: {yy}")
    year = 1900 + yy if yy >= 57 else 2000 + yy
    leap = year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)
    days_in_year = 366 if leap else 365
    if not 1.0 <= fractional_doy < days_in_year + 1:
        raise DayOutOfRange(f"day {fractional_doy} outside year {year}")
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=fractional_doy - 1.0)


def instant_to_epoch(t: datetime) -> tuple[int, float]:
    """Inverse of :func:`epoch_to_instant`."""
    t = t.astimezone(timezone.utc)
    if not 1957 <= t.year <= 2056:
        raise FieldParse(f"year {t.year} not representable in a TLE")
    start = datetime(t.year, 1, 1, tzinfo=timezone.utc)
    return t.year % 100, 1.0 + (t - start) / timedelta(days=1)


def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FieldParse(f"{what}: {text!r}") from None


def _catalog(text: str) -> int:
    text = text.strip()
    if text and text[0].isalpha():
        idx = _ALPHA5.find(text[0].upper())
        if idx < 0 or not text[1:].isdigit():
            raise FieldParse(f"catalog number: {text!r}")
        return (idx + 10) * 10000 + int(text[1:])
    if not text.isdigit():
        raise FieldParse(f"catalog number: {text!r}")
    return int(text)


def _implied_decimal(text: str, what: str) -> float:
    """Decode fields like ' 12345-3' meaning 0.12345e-3."""
    s = text.strip()
    if not s:
        return 0.0
    sign = ""
    if s[0] in "+-":
        sign, s = ("-" if s[0] == "-" else ""), s[1:]
    if len(s) < 3 or s[-2] not in "+-" or not s[-1].isdigit():
        raise FieldParse(f"{what}: {text!r}")
    mantissa, exponent = s[:-2], s[-2:]
    if not mantissa.isdigit():
        raise FieldParse(f"{what}: {text!r}")
    return float(f"{sign}0.{mantissa}e{exponent}")


def _check_line(line: str, number: str) -> None:
    if len(line) != TLE_LINE_LENGTH:
        raise LineLengthMismatch(f"line {number} has {len(line)} characters")
    if line[0] != number:
        raise FieldParse(f"expected line number {number}, got {line[0]!r}")
    if not line[68].isdigit() or int(line[68]) != tle_checksum(line):
        raise ChecksumMismatch(f"line {number} checksum {line[68]!r} != {tle_checksum(line)}")


def parse_tle_lines(line1: str, line2: str, source: Source = Source.TLE) -> TleRecord:
    """Decode one TLE line pair into a :class:`TleRecord`."""
    line1 = line1.rstrip("\r\n")
    line2 = line2.rstrip("\r\n")
    _check_line(line1, "1")
    _check_line(line2, "2")

    norad = _catalog(line1[2:7])
    if _catalog(line2[2:7]) != norad:
        raise CatalogMismatch(f"{line1[2:7]!r} vs {line2[2:7]!r}")

    yy_text = line1[18:20]
    if not yy_text.strip().isdigit():
        raise FieldParse(f"epoch year: {yy_text!r}")
    epoch = epoch_to_instant(int(yy_text), _float(line1[20:32], "epoch day"))
    n_dot = _float(line1[33:43], "n_dot")
    bstar = _implied_decimal(line1[53:61], "bstar")

    inclination = _float(line2[8:16], "inclination")
    raan = _float(line2[17:25], "raan")
    ecc_text = line2[26:33].strip()
    if not ecc_text.isdigit():
        raise FieldParse(f"eccentricity: {line2[26:33]!r}")
    eccentricity = float("0." + ecc_text)
    argp = _float(line2[34:42], "argp")
    mean_anomaly = _float(line2[43:51], "mean anomaly")
    mean_motion = _float(line2[52:63], "mean motion")

    if not 0.0 <= inclination <= 180.0:
        raise FieldParse(f"inclination out of range: {inclination}")
    for name, value in (("raan", raan), ("argp", argp), ("mean anomaly", mean_anomaly)):
        if not 0.0 <= value < 360.0:
            raise FieldParse(f"{name} out of range: {value}")
    if not mean_motion > 0.0:
        raise FieldParse(f"mean motion must be positive: {mean_motion}")

    return TleRecord(
        norad_id=norad,
        epoch=epoch,
        mean_motion=mean_motion,
        eccentricity=eccentricity,
        inclination=inclination,
        raan=raan,
        argp=argp,
        mean_anomaly=mean_anomaly,
        bstar=bstar,
        n_dot=n_dot,
        source=Source(source),
    )


# ----------------------------------------------------------------- output
def _format_implied(x: float) -> str:
    if x == 0.0 or not math.isfinite(x):
        return " 00000-0"
    exp = math.floor(math.log10(abs(x))) + 1
    mant = round(abs(x) / 10.0**exp * 1e5)
    if mant >= 100000:
        mant //= 10
        exp += 1
    if exp < -9:
        return " 00000-0"
    exp = min(exp, 9)
    sign = "-" if x < 0 else " "
    return f"{sign}{mant:05d}{'-' if exp < 0 else '+'}{abs(exp)}"


def _format_ndot(x: float) -> str:
    body = f"{abs(x):.8f}"
    if body.startswith("0"):
        body = body[1:]
    return (("-" if x < 0 else " ") + body).rjust(10)


def _angle(x: float) -> str:
    text = f"{x:8.4f}"
    if float(text) >= 360.0:
        text = f"{0.0:8.4f}"
    return text


def _catalog_text(norad: int) -> str:
    if norad < 100000:
        return f"{norad:05d}"
    head, tail = divmod(norad, 10000)
    return f"{_ALPHA5[head - 10]}{tail:04d}"


def _with_checksum(body: str) -> str:
    body = body.ljust(68)[:68]
    return body + str(tle_checksum(body))


def format_tle_lines(rec: TleRecord) -> tuple[str, str]:
    """Serialize a record back to a checksummed line pair.

    Fields absent from :class:`TleRecord` (designator, second derivative,
    element-set and revolution numbers) are written as zeros.
    """
    yy, doy = instant_to_epoch(rec.epoch)
    doy_text = f"{doy:012.8f}"
    cat = _catalog_text(rec.norad_id)
    line1 = _with_checksum(
        f"1 {cat}U 00000A   {yy:02d}{doy_text} {_format_ndot(rec.n_dot)}"
        f"  00000-0 {_format_implied(rec.bstar)} 0  999"
    )
    ecc = min(round(rec.eccentricity * 1e7), 9999999)
    line2 = _with_checksum(
        f"2 {cat} {rec.inclination:8.4f} {_angle(rec.raan)} {ecc:07d} "
        f"{_angle(rec.argp)} {_angle(rec.mean_anomaly)} {rec.mean_motion:11.8f}    0"
    )
    return line1, line2


def quantize(rec: TleRecord) -> TleRecord:
    """Round a record to the precision representable in TLE text."""
    return parse_tle_lines(*format_tle_lines(rec), source=rec.source)


def write_archive(path: str | os.PathLike, records: Iterable[TleRecord]) -> int:
    n = 0
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for rec in records:
            l1, l2 = format_tle_lines(rec)
            fh.write(f"{l1}\n{l2}\n")
            n += 1
    return n


# ----------------------------------------------------------------- archives
@dataclass
class ArchiveStreams:
    """Per-satellite chronological streams read from one or more archives.

    ``parsed + skipped == total`` always holds; ``duplicates`` parsed records
    were dropped by the keep-first epoch rule.
    """

    streams: dict[int, list[TleRecord]] = field(default_factory=dict)
    total: int = 0
    parsed: int = 0
    skipped: int = 0
    duplicates: int = 0

    @property
    def emitted(self) -> int:
        return sum(len(s) for s in self.streams.values())

    def records(self) -> Iterator[TleRecord]:
        for norad in sorted(self.streams):
            yield from self.streams[norad]


def _is_line1(line: str) -> bool:
    return line.startswith("1 ") and len(line) >= 64


def _is_line2(line: str) -> bool:
    return line.startswith("2 ") and len(line) >= 64


def iter_entries(lines: Sequence[str]) -> Iterator[tuple[str, str] | None]:
    """Segment raw lines into line pairs; ``None`` marks a malformed entry."""
    lines = [ln.rstrip("\r\n") for ln in lines if ln.strip()]
    i, n = 0, len(lines)
    while i < n:
        cur = lines[i]
        if _is_line1(cur):
            if i + 1 < n and _is_line2(lines[i + 1]):
                yield cur, lines[i + 1]
                i += 2
            else:
                yield None
                i += 1
        elif _is_line2(cur):
            yield None
            i += 1
        else:
            # name line of a 3-line entry
            if i + 2 < n and _is_line1(lines[i + 1]) and _is_line2(lines[i + 2]):
                yield lines[i + 1], lines[i + 2]
                i += 3
            else:
                yield None
                i += 1


def _parse_file(path: str, source: Source) -> tuple[list[TleRecord], int, int]:
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.readlines()
    out: list[TleRecord] = []
    total = skipped = 0
    for entry in iter_entries(lines):
        total += 1
        if entry is None:
            skipped += 1
            continue
        try:
            out.append(parse_tle_lines(entry[0], entry[1], source))
        except TleError as exc:
            log.debug("skipping entry in %s: %s", path, exc)
            skipped += 1
    return out, total, skipped


def _sort_key(r: TleRecord):
    return (r.epoch, r.source.value, r.mean_motion, r.eccentricity, r.inclination,
            r.raan, r.argp, r.mean_anomaly, r.bstar, r.n_dot)


def group_records(records: Iterable[TleRecord]) -> tuple[dict[int, list[TleRecord]], int]:
    """Group by satellite, sort by epoch, drop repeated epochs (keep first).

    Returns the streams and the number of dropped duplicates.
    """
    by_sat: dict[int, list[TleRecord]] = defaultdict(list)
    for r in records:
        by_sat[r.norad_id].append(r)
    streams: dict[int, list[TleRecord]] = {}
    dropped = 0
    for norad in sorted(by_sat):
        recs = sorted(by_sat[norad], key=_sort_key)
        kept = [recs[0]]
        for r in recs[1:]:
            if r.epoch == kept[-1].epoch:
                dropped += 1
            else:
                kept.append(r)
        streams[norad] = kept
    return streams, dropped


def read_archives(
    sources: Sequence[tuple[str | os.PathLike, Source | str]], jobs: int = 1
) -> ArchiveStreams:
    """Ingest several archive files, each tagged with its source."""
    paths = [(os.fspath(p), Source(tag)) for p, tag in sources]
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_parse_file, *zip(*paths)))
    else:
        results = [_parse_file(p, s) for p, s in paths]

    records: list[TleRecord] = []
    total = skipped = 0
    for recs, t, s in results:
        records.extend(recs)
        total += t
        skipped += s
    if total == 0:
        raise EmptyArchive(", ".join(p for p, _ in paths))
    streams, dropped = group_records(records)
    if skipped:
        log.info("skipped %d malformed entries out of %d", skipped, total)
    return ArchiveStreams(streams, total=total, parsed=len(records), skipped=skipped,
                          duplicates=dropped)


def read_bulk_archive(path: str | os.PathLike, source: Source | str = Source.TLE) -> ArchiveStreams:
    """Read one 2-line or 3-line TLE archive file."""
    return read_archives([(path, source)])
