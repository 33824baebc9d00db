"""Time points, intervals, timespans and schedule predicates.

Time points are integer milliseconds since the Unix epoch (UTC).  Interval
ordering is "end before or at start": interval a precedes interval b when
a ends no later than b starts, so meeting intervals count as ordered.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional

TimePoint = int  # milliseconds since epoch, UTC

MS_PER_SECOND = 1000
MS_PER_MINUTE = 60 * MS_PER_SECOND
MS_PER_HOUR = 60 * MS_PER_MINUTE
MS_PER_DAY = 24 * MS_PER_HOUR


@dataclass(frozen=True, order=True)
class TimeInterval:
    start: TimePoint
    end: TimePoint

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")

    @property
    def is_atomic(self) -> bool:
        return self.start == self.end

    def contains_point(self, t: TimePoint) -> bool:
        return self.start <= t <= self.end


def instant(t: TimePoint) -> TimeInterval:
    """The atomic interval [t, t]."""
    return TimeInterval(t, t)


@dataclass(frozen=True)
class Timespan:
    days: int = 0
    hours: int = 0
    minutes: int = 0
    seconds: int = 0

    def __post_init__(self):
        for name in ("days", "hours", "minutes", "seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"negative timespan component {name}")

    def total_millis(self) -> int:
        return (
            self.days * MS_PER_DAY
            + self.hours * MS_PER_HOUR
            + self.minutes * MS_PER_MINUTE
            + self.seconds * MS_PER_SECOND
        )


def interval_leq(a: TimeInterval, b: TimeInterval) -> bool:
    """a wholly precedes or meets b: end(a) <= start(b)."""
    return a.end <= b.start


def between(p: TimeInterval, outer: TimeInterval, inclusive: bool = False) -> bool:
    """p strictly inside outer (boundaries excluded unless inclusive)."""
    if inclusive:
        return outer.start <= p.start and p.end <= outer.end
    return outer.start < p.start and p.end < outer.end


def hull(intervals: Iterable[TimeInterval]) -> TimeInterval:
    """Smallest interval covering all inputs; error on an empty collection."""
    items = list(intervals)
    if not items:
        raise ValueError("hull of empty interval collection")
    return TimeInterval(min(i.start for i in items), max(i.end for i in items))


def periodic_due(span: Timespan, last_fire: Optional[TimePoint], now: TimePoint) -> bool:
    """True when a periodic schedule is due: never fired, or a full span has
    passed since the last firing (boundary inclusive).  Recording the firing
    is the caller's job."""
    total = span.total_millis()
    if total <= 0:
        raise ValueError("timespan must be positive for schedule use")
    if last_fire is None:
        return True
    return now - last_fire >= total


_TIMESPAN_COLON = re.compile(r"^(\d+):(\d+):(\d+):(\d+)$")
_TIMESPAN_SHORT = re.compile(r"^(\d+)(d|h|m|s)$")

_UNIT_FIELDS = {"d": "days", "h": "hours", "m": "minutes", "s": "seconds"}


def parse_timespan(text: str) -> Timespan:
    """Parse `d:h:m:s` or a single-unit shorthand like `10s`, `5m`, `2h`, `1d`."""
    text = text.strip()
    m = _TIMESPAN_COLON.match(text)
    if m:
        d, h, mi, s = (int(g) for g in m.groups())
        return Timespan(days=d, hours=h, minutes=mi, seconds=s)
    m = _TIMESPAN_SHORT.match(text)
    if m:
        return Timespan(**{_UNIT_FIELDS[m.group(2)]: int(m.group(1))})
    raise ValueError(f"cannot parse timespan {text!r}")


def format_timespan(span: Timespan) -> str:
    return f"{span.days}:{span.hours}:{span.minutes}:{span.seconds}"


def parse_datetime(text: str) -> TimePoint:
    """ISO 8601 datetime text to epoch milliseconds (naive times are UTC)."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)


def format_datetime(t: TimePoint) -> str:
    dt = datetime.fromtimestamp(t / 1000, tz=timezone.utc)
    if t % 1000 == 0:
        return dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


def to_millis(dt: datetime) -> TimePoint:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)
