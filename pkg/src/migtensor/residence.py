"""Monthly country-of-residence series and window-based migration detection.

A user's residence in a month is the country with the most events that
month; silent months inherit the most recently known residence (forward
fill). A migration at month m is a change of window residence between the
k months before m and the k months starting at m.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional

from .ingestion import ConfigError, CountryRegistry, GeoEvent, InputError


@dataclass(frozen=True)
class MonthCalendar:
    """Study interval: ``months`` consecutive months starting at the epoch."""

    epoch_year: int
    epoch_month: int
    months: int

    def __post_init__(self):
        if not (1 <= self.epoch_month <= 12):
            raise ConfigError(f"epoch month must be 1..12, got {self.epoch_month}")
        if self.months < 1:
            raise ConfigError("calendar must cover at least one month")

    def month_index(self, ts: datetime) -> int:
        """Offset of ts's calendar month from the epoch (may fall outside [0, M))."""
        return (ts.year - self.epoch_year) * 12 + (ts.month - self.epoch_month)

    def year_month(self, index: int) -> tuple[int, int]:
        total = self.epoch_year * 12 + (self.epoch_month - 1) + index
        return total // 12, total % 12 + 1

    def label(self, index: int) -> str:
        y, m = self.year_month(index)
        return f"{y:04d}-{m:02d}"

    def interval(self) -> tuple[datetime, datetime]:
        """Half-open UTC interval covered by the calendar."""
        start = datetime(self.epoch_year, self.epoch_month, 1, tzinfo=timezone.utc)
        ey, em = self.year_month(self.months)
        return start, datetime(ey, em, 1, tzinfo=timezone.utc)


@dataclass
class ResidenceSeries:
    """Per-user month-indexed residence: raw observations plus filled view.

    ``observed[m]`` is the residence inferred from month m's own events
    (None for silent months); ``filled`` forward-fills silence. Months
    before the first observation stay None in both views.
    """

    user_id: str
    observed: list[Optional[int]]
    filled: list[Optional[int]]


@dataclass(frozen=True)
class MigrationEvent:
    user_id: str
    month: int
    origin: int
    destination: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("migration origin and destination must differ")


def monthly_residence(
    events: Iterable[GeoEvent], calendar: MonthCalendar, registry: CountryRegistry
) -> ResidenceSeries:
    """Build one user's residence series from their resolved events.

    Per-month ties break to the previous filled month's country when it is
    among the tied, else to the tied country with the latest event in that
    month.
    """
    events = sorted(events, key=lambda ev: ev.timestamp)
    users = {ev.user_id for ev in events}
    if len(users) > 1:
        raise ValueError(f"events span multiple users: {sorted(users)}")
    user_id = events[0].user_id if events else ""

    counts: list[Counter] = [Counter() for _ in range(calendar.months)]
    latest: list[dict[int, datetime]] = [{} for _ in range(calendar.months)]
    for ev in events:
        if ev.country is None:
            raise ValueError("monthly_residence requires country-resolved events")
        m = calendar.month_index(ev.timestamp)
        if not (0 <= m < calendar.months):
            raise ValueError(f"event at {ev.timestamp} outside the study interval")
        c = registry.index_of(ev.country)
        counts[m][c] += 1
        latest[m][c] = ev.timestamp

    observed: list[Optional[int]] = [None] * calendar.months
    filled: list[Optional[int]] = [None] * calendar.months
    previous: Optional[int] = None
    for m in range(calendar.months):
        if counts[m]:
            top = max(counts[m].values())
            tied = [c for c, n in counts[m].items() if n == top]
            if len(tied) == 1:
                choice = tied[0]
            elif previous in tied:
                choice = previous
            else:
                choice = max(tied, key=lambda c: latest[m][c])
            observed[m] = choice
            previous = choice
        filled[m] = previous
    return ResidenceSeries(user_id, observed, filled)


def _window_residence_strict(filled, lo, hi) -> Optional[int]:
    first = filled[lo]
    if first is None:
        return None
    for m in range(lo + 1, hi):
        if filled[m] != first:
            return None
    return first


def _window_residence_modal(filled, lo, hi) -> Optional[int]:
    counts = Counter(c for c in filled[lo:hi] if c is not None)
    if not counts:
        return None
    top = max(counts.values())
    tied = [c for c, n in counts.items() if n == top]
    return tied[0] if len(tied) == 1 else None


def detect_migrations(series: ResidenceSeries, k: int, mode: str = "strict") -> list[MigrationEvent]:
    """Detect residence changes between the k-month windows around each month.

    For each month m with full windows on both sides, compares the window
    residence over [m-k, m-1] against [m, m+k-1] and emits an event when
    both are defined and differ. ``strict`` windows are defined only when
    all k months agree; ``modal`` windows take the most frequent country
    (ties undefined) and collapse runs of the same (origin, destination)
    within k months to the earliest detection.
    """
    M = len(series.filled)
    if k < 1 or 2 * k > M:
        raise ConfigError(f"window k={k} out of range for {M} months (need 1 <= k <= M/2)")
    if mode not in ("strict", "modal"):
        raise ConfigError(f"unknown detection mode {mode!r}")
    window = _window_residence_strict if mode == "strict" else _window_residence_modal

    events: list[MigrationEvent] = []
    for m in range(k, M - k + 1):
        before = window(series.filled, m - k, m)
        after = window(series.filled, m, m + k)
        if before is not None and after is not None and before != after:
            events.append(MigrationEvent(series.user_id, m, before, after))

    if mode == "modal":
        collapsed: list[MigrationEvent] = []
        last_seen: dict[tuple[int, int], int] = {}
        for ev in events:
            key = (ev.origin, ev.destination)
            in_run = key in last_seen and ev.month - last_seen[key] <= k
            last_seen[key] = ev.month
            if not in_run:
                collapsed.append(ev)
        events = collapsed
    return events


def write_residences(series_list: Iterable[ResidenceSeries], registry: CountryRegistry, path) -> None:
    """Dump filled residence views as ``user_id,month_index,country`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "month_index", "country"])
        for series in series_list:
            for m, c in enumerate(series.filled):
                if c is not None:
                    writer.writerow([series.user_id, m, registry.code(c)])


def read_residences(path, registry: CountryRegistry, months: int) -> list[ResidenceSeries]:
    """Rebuild filled residence views from a residence dump.

    The observed/filled distinction is not stored on disk; the loaded
    series carries the filled view in both slots, which is all migration
    detection needs.
    """
    per_user: dict[str, list[Optional[int]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "month_index", "country"]:
            raise InputError(f"{path}: unexpected header {header!r}")
        for user_id, m, code in reader:
            filled = per_user.setdefault(user_id, [None] * months)
            filled[int(m)] = registry.index_of(code)
    return [ResidenceSeries(u, list(per_user[u]), per_user[u]) for u in sorted(per_user)]


def write_migrations(events: Iterable[MigrationEvent], registry: CountryRegistry, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "month_index", "origin", "destination"])
        for ev in events:
            writer.writerow([ev.user_id, ev.month, registry.code(ev.origin), registry.code(ev.destination)])


def read_migrations(path, registry: CountryRegistry) -> list[MigrationEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "month_index", "origin", "destination"]:
            raise InputError(f"{path}: unexpected header {header!r}")
        for user_id, m, o, d in reader:
            events.append(MigrationEvent(user_id, int(m), registry.index_of(o), registry.index_of(d)))
    return events
