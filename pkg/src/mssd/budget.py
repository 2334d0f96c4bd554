"""Per-source request accounting on a virtual clock.

Requests are instantaneous; when a bandwidth window is full the clock jumps to
the start of the next window, the way a crawler thread would sleep until the
limit resets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

from .geometry import GeoPoint

TRACE_COLUMNS = ("timestamp_s", "lat", "lon", "radius_m", "results", "new_locations")


class BudgetExhausted(RuntimeError):
    pass


class Entry(NamedTuple):
    timestamp: float
    center: GeoPoint
    radius: float
    result_count: int
    new_count: int


class Totals(NamedTuple):
    request_count: int
    distinct_new: int
    elapsed: float


@dataclass
class BudgetLedger:
    """Append-only request trace for one source.

    ``limit`` requests are allowed in each window ``[k * window, (k + 1) * window)``
    (seconds). In strict mode a full window raises :class:`BudgetExhausted`
    instead of advancing the clock. ``max_requests`` is a hard global cap.
    """

    source_name: str
    limit: int
    window: float
    strict: bool = False
    max_requests: int | None = None
    virtual_now: float = 0.0
    entries: list[Entry] = field(default_factory=list)
    _window_index: int = field(default=0, repr=False)
    _in_window: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError("limit must be >= 1")
        if self.window <= 0:
            raise ValueError("window must be positive")

    @property
    def request_count(self) -> int:
        return len(self.entries)

    def remaining(self) -> int | None:
        if self.max_requests is None:
            return None
        return max(0, self.max_requests - len(self.entries))

    def record_request(self, center: GeoPoint, radius: float, result_count: int, new_count: int) -> float:
        if self.max_requests is not None and len(self.entries) >= self.max_requests:
            raise BudgetExhausted(f"{self.source_name}: request cap {self.max_requests} reached")
        if self._in_window >= self.limit:
            if self.strict:
                raise BudgetExhausted(
                    f"{self.source_name}: {self.limit} requests per {self.window:g} s used up"
                )
            # k * window rather than a running sum, so window starts stay exact multiples
            self._window_index += 1
            self._in_window = 0
            self.virtual_now = self._window_index * self.window
        self._in_window += 1
        self.entries.append(Entry(self.virtual_now, center, radius, result_count, new_count))
        return self.virtual_now

    def totals(self) -> Totals:
        return Totals(
            len(self.entries),
            sum(e.new_count for e in self.entries),
            self.entries[-1].timestamp if self.entries else 0.0,
        )

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for e in self.entries:
                w.writerow([f"{e.timestamp:.3f}", repr(e.center.lat), repr(e.center.lon),
                            repr(e.radius), e.result_count, e.new_count])


def record_request(ledger: BudgetLedger, center: GeoPoint, radius: float,
                   result_count: int, new_count: int) -> float:
    return ledger.record_request(center, radius, result_count, new_count)


def totals(ledger: BudgetLedger) -> Totals:
    return ledger.totals()


def read_trace(path) -> list[Entry]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            Entry(float(row["timestamp_s"]), GeoPoint(float(row["lat"]), float(row["lon"])),
                  float(row["radius_m"]), int(row["results"]), int(row["new_locations"]))
            for row in csv.DictReader(fh)
        ]
