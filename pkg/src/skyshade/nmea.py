"""NMEA 0183 parsing and constellation snapshot assembly.

Only the three sentences needed for visibility work are decoded:

* ``RMC`` -- receiver position fix,
* ``GST`` -- position error statistics,
* ``GSV`` -- satellites in view (elevation, azimuth, SNR).

Everything else is reported as :class:`UnknownSentenceType`, which callers
are expected to skip and count.
"""

from __future__ import annotations

import bisect
import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import reduce
from typing import Iterable, Iterator, Sequence

from .errors import SkyshadeError

ACCEPTED_TALKERS = ("GP", "GL", "GA", "GB", "GN")
ACCEPTED_TYPES = ("RMC", "GST", "GSV")

GPS = "GPS"
SBAS = "SBAS"
GLONASS = "GLONASS"
GALILEO = "GALILEO"
BEIDOU = "BEIDOU"
UNKNOWN = "UNKNOWN"

_TALKER_SYSTEM = {"GP": GPS, "GL": GLONASS, "GA": GALILEO, "GB": BEIDOU}

DEFAULT_ELEVATION_MASK = 15.0
DEFAULT_SNR_CUTOFF = 35.0
DEFAULT_MERGE_WINDOW = 2.0

_HALF_DAY = 43200.0
_DAY = 86400.0


class NmeaError(SkyshadeError):
    """Base class for NMEA decoding errors."""


class MalformedFraming(NmeaError):
    """Line is not framed as ``$<address>,<fields>*<hh>``."""


class ChecksumMismatch(NmeaError):
    """Declared checksum differs from the XOR of the sentence body."""


class UnknownSentenceType(NmeaError):
    """Well-formed sentence of a talker or type this package ignores."""


class MalformedField(NmeaError):
    """A field of an accepted sentence cannot be decoded or is out of range."""


class IncompleteGroup(NmeaError):
    """A multi-part GSV group is missing one of its parts."""


class InconsistentTotals(NmeaError):
    """Parts of a GSV group disagree on their headers or satellite count."""


class NoTimeReference(NmeaError):
    """A GSV group has no RMC time reference close enough to date it."""


# ---------------------------------------------------------------------------
# framing


def nmea_checksum(body):
    """XOR of all bytes between ``$`` and ``*``."""
    if isinstance(body, str):
        body = body.encode("ascii")
    return reduce(lambda acc, b: acc ^ b, body, 0)


@dataclass(frozen=True)
class RawSentence:
    talker: str
    sentence_type: str
    fields: tuple[str, ...]
    checksum: int
    host_time: str | None = None

    @property
    def body(self) -> str:
        return ",".join((self.talker + self.sentence_type,) + self.fields)

    def to_line(self, include_host_time=True) -> str:
        line = f"${self.body}*{self.checksum:02X}"
        if include_host_time and self.host_time is not None:
            line = f"{self.host_time}\t{line}"
        return line

    @property
    def host_seconds(self) -> float | None:
        """Host timestamp prefix as POSIX seconds, if the line carried one."""
        if self.host_time is None:
            return None
        return parse_iso8601(self.host_time).timestamp()


_FRACTION = re.compile(r"(?<=\d)[.,](\d+)")


def parse_iso8601(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # fromisoformat only takes 3 or 6 fractional digits before Python 3.11
    text = _FRACTION.sub(lambda m: "." + (m.group(1) + "000000")[:6], text, count=1)
    try:
        stamp = datetime.fromisoformat(text)
    except ValueError as exc:
        raise MalformedFraming(f"bad timestamp prefix {text!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp


def parse_sentence(line: str) -> RawSentence:
    """Validate framing and checksum of one NMEA line.

    An optional ISO-8601 host timestamp may precede the sentence, separated
    by a tab.
    """
    line = line.strip("\r\n ")
    host_time = None
    if "\t" in line:
        host_time, line = line.split("\t", 1)
        host_time = host_time.strip()
        parse_iso8601(host_time)
        line = line.strip()
    if not line.startswith("$"):
        raise MalformedFraming("missing '$'")
    star = line.rfind("*")
    if star < 0:
        raise MalformedFraming("missing '*'")
    declared = line[star + 1:]
    if len(declared) != 2 or any(c not in "0123456789ABCDEFabcdef" for c in declared):
        raise MalformedFraming(f"bad checksum field {declared!r}")
    body = line[1:star]
    try:
        raw = body.encode("ascii")
    except UnicodeEncodeError as exc:
        raise MalformedFraming("non-ascii characters") from exc
    if any(b < 0x20 or b > 0x7E or b in b"$*!" for b in raw):
        raise MalformedFraming("reserved or control character in body")
    checksum = int(declared, 16)
    actual = nmea_checksum(raw)
    if actual != checksum:
        raise ChecksumMismatch(f"declared {checksum:02X}, computed {actual:02X}")
    tokens = body.split(",")
    address = tokens[0]
    if len(address) != 5 or not address.isalnum():
        raise MalformedFraming(f"bad address field {address!r}")
    talker, sentence_type = address[:2], address[2:]
    if talker not in ACCEPTED_TALKERS or sentence_type not in ACCEPTED_TYPES:
        raise UnknownSentenceType(address)
    return RawSentence(talker, sentence_type, tuple(tokens[1:]), checksum, host_time)


def iter_sentences(lines: Iterable[str], stats: Counter | None = None) -> Iterator[RawSentence]:
    """Parse a log, skipping bad lines.

    ``stats`` (if given) counts ``"ok"``, blank lines and every error class
    by name.
    """
    if stats is None:
        stats = Counter()
    for line in lines:
        if not line.strip():
            stats["blank"] += 1
            continue
        try:
            sentence = parse_sentence(line)
        except NmeaError as exc:
            stats[type(exc).__name__] += 1
            continue
        stats["ok"] += 1
        yield sentence


def read_log(path, stats: Counter | None = None) -> list[RawSentence]:
    with open(path, encoding="ascii", errors="replace") as fh:
        return list(iter_sentences(fh, stats))


# ---------------------------------------------------------------------------
# typed records


@dataclass(frozen=True)
class FixRecord:
    utc_time: float
    latitude: float
    longitude: float
    valid: bool
    date: str = ""


@dataclass(frozen=True)
class FixStatsRecord:
    utc_time: float
    rms_range_residual: float
    sigma_lat: float
    sigma_lon: float
    sigma_alt: float


@dataclass(frozen=True)
class SatelliteObservation:
    system: str
    prn: int
    elevation: float
    azimuth: float
    snr: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.elevation <= 90.0:
            raise MalformedField(f"elevation {self.elevation} outside [0, 90]")
        if not 0.0 <= self.azimuth < 360.0:
            raise MalformedField(f"azimuth {self.azimuth} outside [0, 360)")
        if self.snr is not None and not 0.0 <= self.snr <= 99.0:
            raise MalformedField(f"snr {self.snr} outside [0, 99]")
        if self.prn <= 0:
            raise MalformedField(f"prn {self.prn} must be positive")

    @property
    def key(self) -> tuple[str, int]:
        return (self.system, self.prn)


def _field(raw: RawSentence, i: int) -> str:
    return raw.fields[i] if i < len(raw.fields) else ""


def _float(text: str, name: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise MalformedField(f"{name}: {text!r} is not a number") from exc
    if not math.isfinite(value):
        raise MalformedField(f"{name}: {text!r} is not finite")
    return value


def _int(text: str, name: str) -> int:
    if not text.isdigit():
        raise MalformedField(f"{name}: {text!r} is not an unsigned integer")
    return int(text)


def parse_time_of_day(text: str) -> float:
    """``hhmmss[.ss]`` to seconds of day."""
    if len(text) < 6 or not text[:6].isdigit():
        raise MalformedField(f"time: {text!r}")
    hh, mm = int(text[0:2]), int(text[2:4])
    ss = _float(text[4:], "time")
    if hh > 23 or mm > 59 or not 0.0 <= ss < 61.0:
        raise MalformedField(f"time: {text!r} out of range")
    return hh * 3600.0 + mm * 60.0 + ss


def _angle(value: str, hemi: str, width: int, limit: float, name: str) -> float:
    if not value:
        return math.nan
    head, dot, _ = value.partition(".")
    if len(head) != width + 2 or not head.isdigit():
        raise MalformedField(f"{name}: {value!r}")
    degrees = int(head[:width])
    minutes = _float(value[width:], name)
    if minutes >= 60.0:
        raise MalformedField(f"{name}: minutes {minutes} >= 60")
    angle = degrees + minutes / 60.0
    if hemi in ("S", "W"):
        angle = -angle
    elif hemi not in ("N", "E"):
        raise MalformedField(f"{name}: hemisphere {hemi!r}")
    if abs(angle) > limit:
        raise MalformedField(f"{name}: {angle} out of range")
    return angle


def parse_rmc(raw: RawSentence) -> FixRecord:
    if raw.sentence_type != "RMC" or len(raw.fields) < 9:
        raise MalformedField("RMC needs at least 9 fields")
    t = parse_time_of_day(raw.fields[0])
    status = raw.fields[1]
    if status not in ("A", "V"):
        raise MalformedField(f"RMC status {status!r}")
    valid = status == "A"
    lat = _angle(raw.fields[2], raw.fields[3], 2, 90.0, "latitude")
    lon = _angle(raw.fields[4], raw.fields[5], 3, 180.0, "longitude")
    if valid and (math.isnan(lat) or math.isnan(lon)):
        raise MalformedField("valid RMC without position")
    if not valid:
        lat = lon = math.nan
    return FixRecord(t, lat, lon, valid, raw.fields[8])


def parse_gst(raw: RawSentence) -> FixStatsRecord:
    if raw.sentence_type != "GST" or len(raw.fields) < 8:
        raise MalformedField("GST needs 8 fields")
    t = parse_time_of_day(raw.fields[0])
    values = []
    for name, text in zip(("rms", "sigma_lat", "sigma_lon", "sigma_alt"),
                          (raw.fields[1],) + raw.fields[5:8]):
        value = _float(text, name) if text else math.nan
        if value < 0:
            raise MalformedField(f"{name} must be >= 0")
        values.append(value)
    return FixStatsRecord(t, *values)


def infer_system(talker: str, prn: int) -> str:
    """Constellation from talker id, falling back to NMEA PRN ranges."""
    if talker == "GP" or talker == "GN":
        if 1 <= prn <= 32:
            return GPS
        if 33 <= prn <= 64:
            return SBAS
        if talker == "GN" and 65 <= prn <= 96:
            return GLONASS
        return GPS if talker == "GP" else UNKNOWN
    return _TALKER_SYSTEM[talker]


@dataclass(frozen=True)
class GsvPart:
    talker: str
    total: int
    index: int
    in_view: int
    blocks: tuple[tuple[str, str, str, str], ...]
    signal_id: str = ""


def parse_gsv(raw: RawSentence) -> GsvPart:
    if raw.sentence_type != "GSV" or len(raw.fields) < 3:
        raise MalformedField("GSV needs a 3-field header")
    total = _int(raw.fields[0], "total messages")
    index = _int(raw.fields[1], "message number")
    in_view = _int(raw.fields[2], "satellites in view")
    if total < 1 or not 1 <= index <= total:
        raise MalformedField(f"GSV message {index} of {total}")
    rest = raw.fields[3:]
    signal_id = ""
    if len(rest) % 4 == 1:
        signal_id = rest[-1]
        rest = rest[:-1]
    elif len(rest) % 4:
        raise MalformedField(f"GSV has {len(rest)} satellite fields, not a multiple of 4")
    blocks = tuple(tuple(rest[i:i + 4]) for i in range(0, len(rest), 4))
    if len(blocks) > 4:
        raise MalformedField("GSV carries at most 4 satellites per sentence")
    return GsvPart(raw.talker, total, index, in_view, blocks, signal_id)


def _observation(talker: str, block: tuple[str, str, str, str]) -> SatelliteObservation | None:
    prn_s, el_s, az_s, snr_s = block
    if not prn_s:
        return None
    prn = _int(prn_s, "prn")
    if not el_s or not az_s:
        # tracked without almanac position; unusable for sky maps
        return None
    elevation = _float(el_s, "elevation")
    azimuth = _float(az_s, "azimuth")
    if azimuth == 360.0:
        azimuth = 0.0
    snr = _float(snr_s, "snr") if snr_s else None
    return SatelliteObservation(infer_system(talker, prn), prn, elevation, azimuth, snr)


def _prefer(a: SatelliteObservation, b: SatelliteObservation) -> SatelliteObservation:
    """Keep the stronger of two observations of the same satellite."""
    sa = -1.0 if a.snr is None else a.snr
    sb = -1.0 if b.snr is None else b.snr
    return b if sb > sa else a


def assemble_gsv_group(sentences: Sequence[RawSentence | GsvPart]) -> list[SatelliteObservation]:
    """Join the parts of one GSV group into observations."""
    parts = [p if isinstance(p, GsvPart) else parse_gsv(p) for p in sentences]
    if not parts:
        raise IncompleteGroup("empty group")
    head = parts[0]
    for p in parts:
        if p.talker != head.talker:
            raise InconsistentTotals(f"mixed talkers {head.talker}/{p.talker}")
        if p.total != head.total or p.in_view != head.in_view:
            raise InconsistentTotals("parts disagree on message or satellite totals")
    indices = [p.index for p in parts]
    if indices != list(range(1, head.total + 1)):
        raise IncompleteGroup(f"got parts {indices} of {head.total}")
    blocks = [b for p in parts for b in p.blocks]
    if len(blocks) != head.in_view:
        raise InconsistentTotals(f"{len(blocks)} satellite blocks, header declares {head.in_view}")
    seen: dict[tuple[str, int], SatelliteObservation] = {}
    for block in blocks:
        obs = _observation(head.talker, block)
        if obs is None:
            continue
        seen[obs.key] = _prefer(seen[obs.key], obs) if obs.key in seen else obs
    return list(seen.values())


# ---------------------------------------------------------------------------
# snapshots


@dataclass(frozen=True)
class ConstellationSnapshot:
    utc_time: float
    observations: tuple[SatelliteObservation, ...] = ()
    elevation_mask: float = DEFAULT_ELEVATION_MASK
    snr_cutoff: float = DEFAULT_SNR_CUTOFF

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        keys = [o.key for o in self.observations]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (system, prn) in snapshot")

    def is_viable(self, obs: SatelliteObservation) -> bool:
        return (obs.snr is not None and obs.snr >= self.snr_cutoff
                and obs.elevation >= self.elevation_mask)

    def viable(self) -> list[SatelliteObservation]:
        return [o for o in self.observations if self.is_viable(o)]

    def viable_count(self) -> int:
        return sum(1 for o in self.observations if self.is_viable(o))

    def tracked_count(self) -> int:
        """Satellites with any SNR reported, ignoring both cutoffs."""
        return sum(1 for o in self.observations if o.snr is not None)

    def with_cutoffs(self, elevation_mask=None, snr_cutoff=None) -> "ConstellationSnapshot":
        return replace(
            self,
            elevation_mask=self.elevation_mask if elevation_mask is None else elevation_mask,
            snr_cutoff=self.snr_cutoff if snr_cutoff is None else snr_cutoff,
        )


class DayClock:
    """Unwraps NMEA time-of-day into a monotonic clock across midnight."""

    def __init__(self):
        self.day = 0
        self._last = None

    def __call__(self, seconds_of_day: float) -> float:
        if self._last is not None and seconds_of_day < self._last - _HALF_DAY:
            self.day += 1
        self._last = seconds_of_day
        return seconds_of_day + self.day * _DAY


@dataclass
class _Pending:
    utc_time: float
    observations: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)
    contributors: set = field(default_factory=set)


class SnapshotAssembler:
    """Streaming GSV group assembly and multi-constellation merging.

    Feed time-ordered sentences with :meth:`feed`, then call :meth:`finish`.
    With ``strict=False`` group-level errors are counted in :attr:`errors`
    instead of raised.
    """

    def __init__(self, merge_window=DEFAULT_MERGE_WINDOW, strict=True,
                 elevation_mask=DEFAULT_ELEVATION_MASK, snr_cutoff=DEFAULT_SNR_CUTOFF,
                 clock: DayClock | None = None):
        self.merge_window = merge_window
        self.strict = strict
        self.elevation_mask = elevation_mask
        self.snr_cutoff = snr_cutoff
        self.clock = clock if clock is not None else DayClock()
        self.snapshots: list[ConstellationSnapshot] = []
        self.errors: Counter = Counter()
        self._parts: dict[tuple[str, str], list[GsvPart]] = {}
        self._part_host: dict[tuple[str, str], float | None] = {}
        self._time: float | None = None
        self._time_host: float | None = None
        self._current: _Pending | None = None

    def _fail(self, exc: NmeaError):
        if self.strict:
            raise exc
        self.errors[type(exc).__name__] += 1

    def note_time(self, seconds_of_day: float, host_seconds: float | None = None) -> float:
        t = self.clock(seconds_of_day)
        self._time = t
        self._time_host = host_seconds
        return t

    def feed(self, raw: RawSentence):
        try:
            if raw.sentence_type == "RMC":
                fix = parse_rmc(raw)
                self.note_time(fix.utc_time, raw.host_seconds)
            elif raw.sentence_type == "GSV":
                self._feed_gsv(raw)
        except NmeaError as exc:
            self._fail(exc)

    def _feed_gsv(self, raw: RawSentence):
        part = parse_gsv(raw)
        key = (part.talker, part.signal_id)
        parts = self._parts.setdefault(key, [])
        if part.index == 1 and parts:
            self._parts[key] = parts = []
            self._fail(IncompleteGroup(f"{part.talker}GSV group restarted before completion"))
        if part.index != len(parts) + 1:
            self._parts[key] = []
            self._fail(IncompleteGroup(f"{part.talker}GSV part {part.index} out of sequence"))
            return
        if part.index == 1:
            self._part_host[key] = raw.host_seconds
        parts.append(part)
        if part.index == part.total:
            del self._parts[key]
            observations = assemble_gsv_group(parts)
            self._add_group(key, observations, self._part_host.pop(key, None))

    def _add_group(self, key, observations, host_seconds):
        if self._time is None:
            raise NoTimeReference(f"{key[0]}GSV group before any RMC")
        if (host_seconds is not None and self._time_host is not None
                and abs(host_seconds - self._time_host) > self.merge_window):
            raise NoTimeReference(f"{key[0]}GSV group {host_seconds - self._time_host:.1f} s from last RMC")
        cur = self._current
        if (cur is None or abs(self._time - cur.utc_time) > self.merge_window
                or key in cur.contributors):
            self._flush()
            cur = self._current = _Pending(self._time)
        cur.contributors.add(key)
        talker = key[0]
        for obs in observations:
            old = cur.observations.get(obs.key)
            if old is None:
                cur.observations[obs.key] = obs
                cur.sources[obs.key] = talker
            elif cur.sources[obs.key] == "GN" and talker != "GN":
                # system-specific talker wins over the GN aggregate
                cur.observations[obs.key] = obs
                cur.sources[obs.key] = talker
            elif talker == cur.sources[obs.key]:
                cur.observations[obs.key] = _prefer(old, obs)

    def _flush(self):
        if self._current is not None:
            cur = self._current
            obs = sorted(cur.observations.values(), key=lambda o: (o.system, o.prn))
            self.snapshots.append(ConstellationSnapshot(
                cur.utc_time, tuple(obs), self.elevation_mask, self.snr_cutoff))
            self._current = None

    def finish(self) -> list[ConstellationSnapshot]:
        self._flush()
        leftovers = [k for k, v in self._parts.items() if v]
        self._parts.clear()
        for key in leftovers:
            self._fail(IncompleteGroup(f"{key[0]}GSV group truncated at end of log"))
        return self.snapshots


def build_snapshots(log: Iterable[RawSentence], merge_window=DEFAULT_MERGE_WINDOW, *,
                    strict=True, elevation_mask=DEFAULT_ELEVATION_MASK,
                    snr_cutoff=DEFAULT_SNR_CUTOFF) -> list[ConstellationSnapshot]:
    """Group GSV sentences of a time-ordered log into constellation snapshots.

    GSV groups from different talkers whose RMC time references lie within
    ``merge_window`` seconds are merged into one multi-constellation
    snapshot.
    """
    asm = SnapshotAssembler(merge_window, strict, elevation_mask, snr_cutoff)
    for raw in log:
        asm.feed(raw)
    return asm.finish()


def nearest_snapshot(snapshots: Sequence[ConstellationSnapshot], t: float,
                     max_gap: float | None = None) -> ConstellationSnapshot | None:
    if not snapshots:
        return None
    times = [s.utc_time for s in snapshots]
    i = bisect.bisect_left(times, t)
    best = min((j for j in (i - 1, i) if 0 <= j < len(times)), key=lambda j: abs(times[j] - t))
    if max_gap is not None and abs(times[best] - t) > max_gap:
        return None
    return snapshots[best]


@dataclass(frozen=True)
class GroundTruthSample:
    utc_time: float
    latitude: float
    longitude: float
    v: int
    v_tracked: int


@dataclass
class GroundTruth:
    samples: list[GroundTruthSample]
    invalid_fixes: int = 0
    unmatched_fixes: int = 0
    errors: Counter = field(default_factory=Counter)


def ground_truth_series(log: Iterable[RawSentence], merge_window=DEFAULT_MERGE_WINDOW,
                        max_gap=DEFAULT_MERGE_WINDOW, elevation_mask=DEFAULT_ELEVATION_MASK,
                        snr_cutoff=DEFAULT_SNR_CUTOFF) -> GroundTruth:
    """Measured satellite counts at each valid RMC fix of a receiver log.

    ``v`` is the viable count of the nearest-in-time snapshot; ``v_tracked``
    counts every satellite with an SNR regardless of the cutoffs.
    """
    asm = SnapshotAssembler(merge_window, False, elevation_mask, snr_cutoff)
    fixes: list[tuple[float, FixRecord]] = []
    for raw in log:
        if raw.sentence_type == "RMC":
            try:
                fix = parse_rmc(raw)
            except NmeaError as exc:
                asm.errors[type(exc).__name__] += 1
                continue
            t = asm.note_time(fix.utc_time, raw.host_seconds)
            fixes.append((t, fix))
        else:
            asm.feed(raw)
    snapshots = asm.finish()
    result = GroundTruth([], errors=asm.errors)
    for t, fix in fixes:
        if not fix.valid:
            result.invalid_fixes += 1
            continue
        snap = nearest_snapshot(snapshots, t, max_gap)
        if snap is None:
            result.unmatched_fixes += 1
            continue
        result.samples.append(GroundTruthSample(
            t, fix.latitude, fix.longitude, snap.viable_count(), snap.tracked_count()))
    return result


def write_ground_truth_csv(path, samples: Iterable[GroundTruthSample]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utc_time", "lat", "lon", "v"])
        for s in samples:
            writer.writerow([f"{s.utc_time:.3f}", f"{s.latitude:.9f}", f"{s.longitude:.9f}", s.v])


def format_sentence(talker: str, sentence_type: str, fields: Sequence[str]) -> str:
    """Serialize fields into a checksummed sentence line."""
    body = ",".join([talker + sentence_type, *fields])
    return f"${body}*{nmea_checksum(body):02X}"
