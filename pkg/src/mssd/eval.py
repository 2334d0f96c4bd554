"""Run metrics, paired comparisons and the exhaustive optimal-coverage oracle.

:func:`optimal_coverage` and :func:`greedy_select` work on a finite list of
candidate circles supplied by the caller; the optimum is only optimal over
that list. Both evaluate candidates with deterministic responses, so a circle
always covers the same locations no matter when it is asked.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from typing import Iterable, Sequence

from .algorithms import ExtractionRun
from .geometry import QueryCircle
from .sources import Location, SimulatedSource

MAX_CANDIDATES = 16
MAX_PICKS = 5


class MismatchedUniverse(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class RunMetrics:
    source_name: str
    strategy: str
    requests: int
    distinct_locations: int
    coverage: float
    pct_requests_vs_reference: float
    pct_locations_vs_reference: float
    virtual_elapsed: float

    def __post_init__(self):
        if self.requests < 0:
            raise ValueError("requests must be non-negative")
        if not (0.0 <= self.coverage <= 1.0 or math.isnan(self.coverage)):
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")


METRICS_COLUMNS = tuple(f.name for f in fields(RunMetrics))


def _universe_keys(universe) -> frozenset:
    if isinstance(universe, SimulatedSource):
        universe = universe.universe
    return frozenset(l.key for l in universe)


def _ground_truth(run: ExtractionRun):
    backend = run.handle.backend
    return backend if isinstance(backend, SimulatedSource) else None


def coverage(run: ExtractionRun, universe) -> float:
    """Fraction of ``universe`` (locations or a simulated source) that ``run`` retrieved."""
    keys = _universe_keys(universe)
    if not keys:
        return math.nan
    return len(keys & run.keys()) / len(keys)


def ratio(a: int, b: int) -> float:
    """``a / b``, with 0/0 taken as 1."""
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare(run: ExtractionRun, reference: ExtractionRun, universe=None, label: str | None = None) -> RunMetrics:
    """Metrics of ``run`` with request and location counts relative to ``reference``.

    Coverage is measured against ``universe`` when given, else against the
    simulated source behind ``run`` (NaN for a live backend).
    """
    if run.source_name != reference.source_name:
        raise MismatchedUniverse(f"{run.source_name!r} vs {reference.source_name!r}")
    a, b = _ground_truth(run), _ground_truth(reference)
    if a is not None and b is not None and a is not b and _universe_keys(a) != _universe_keys(b):
        raise MismatchedUniverse(f"runs on {run.source_name!r} query different universes")
    truth = universe if universe is not None else a
    cov = coverage(run, truth) if truth is not None else math.nan
    return RunMetrics(
        source_name=run.source_name,
        strategy=label or run.config.label,
        requests=run.requests,
        distinct_locations=len(run),
        coverage=cov,
        pct_requests_vs_reference=ratio(run.requests, reference.requests),
        pct_locations_vs_reference=ratio(len(run), len(reference)),
        virtual_elapsed=run.ledger.totals().elapsed,
    )


def write_metrics_csv(path, rows: Iterable[RunMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for m in rows:
            w.writerow([_fmt(v) for v in asdict(m).values()])


def read_metrics_csv(path) -> list[RunMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {rd.fieldnames}")
        return [RunMetrics(r["source_name"], r["strategy"], int(r["requests"]),
                           int(r["distinct_locations"]), float(r["coverage"]),
                           float(r["pct_requests_vs_reference"]),
                           float(r["pct_locations_vs_reference"]), float(r["virtual_elapsed"]))
                for r in rd]


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# -- coverage oracle ------------------------------------------------------------

def _bitsets(universe: SimulatedSource, candidates: Sequence[QueryCircle]) -> list[int]:
    """Each candidate's deterministic response as a bitmask over universe positions."""
    pos = {l.key: i for i, l in enumerate(universe.universe)}
    out = []
    for c in candidates:
        bits = 0
        for l in universe.respond(c.center, c.radius, deterministic=True):
            bits |= 1 << pos[l.key]
        out.append(bits)
    return out


def union_size(universe: SimulatedSource, circles: Iterable[QueryCircle]) -> int:
    bits = 0
    for b in _bitsets(universe, list(circles)):
        bits |= b
    return bits.bit_count()


def optimal_coverage(universe: SimulatedSource, candidates: Sequence[QueryCircle],
                     n: int) -> tuple[set[QueryCircle], int]:
    """Best union size over every ``n``-subset of ``candidates`` (all of them if fewer).

    Among equally good subsets the lexicographically first by candidate index wins.
    """
    if len(candidates) > MAX_CANDIDATES or n > MAX_PICKS:
        raise TooLarge(f"exhaustive search limited to {MAX_CANDIDATES} candidates and n <= {MAX_PICKS}")
    if n < 0:
        raise ValueError("n must be non-negative")
    sets = _bitsets(universe, candidates)
    best, best_size = (), 0
    for combo in combinations(range(len(sets)), min(n, len(sets))):
        bits = 0
        for i in combo:
            bits |= sets[i]
        size = bits.bit_count()
        if size > best_size or not best:
            best, best_size = combo, size
    return {candidates[i] for i in best}, best_size


def greedy_select(universe: SimulatedSource, candidates: Sequence[QueryCircle], n: int) -> list[QueryCircle]:
    """Pick ``n`` candidates, each time the one adding the most new locations.

    Returned in pick order; ties go to the lowest candidate index.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    sets = _bitsets(universe, candidates)
    covered = 0
    left = list(range(len(sets)))
    picked = []
    for _ in range(min(n, len(sets))):
        i = max(left, key=lambda j: ((sets[j] & ~covered).bit_count(), -j))
        left.remove(i)
        picked.append(candidates[i])
        covered |= sets[i]
    return picked
