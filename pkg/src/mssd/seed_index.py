"""Uniform-grid index over distinct seed points."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable

import numpy as np

from .geometry import (
    GeoPoint,
    QueryCircle,
    cap_bbox,
    haversine,
    local_grid_cell,
    within_mask,
)

BUCKET_M = 1000.0


class SeedSet:
    """Distinct seed points bucketed into 1 km cells of a local grid.

    Exact duplicates are collapsed; points are kept in (lat, lon) order so
    results never depend on insertion order.
    """

    def __init__(self, points: Iterable[GeoPoint], cell_size: float = BUCKET_M):
        pts = sorted(set(points))
        if not pts:
            raise ValueError("a seed set needs at least one point")
        self.points: list[GeoPoint] = pts
        self.cell_size = cell_size
        self.origin = pts[0]
        self._lat = np.array([p.lat for p in pts])
        self._lon = np.array([p.lon for p in pts])
        buckets = defaultdict(list)
        for i, p in enumerate(pts):
            buckets[self._cell(p)].append(i)
        self._buckets = {k: np.array(v, dtype=np.intp) for k, v in buckets.items()}
        rows = [k[0] for k in self._buckets]
        cols = [k[1] for k in self._buckets]
        self._row_span = (min(rows), max(rows))
        self._col_span = (min(cols), max(cols))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def _cell(self, p: GeoPoint) -> tuple[int, int]:
        return local_grid_cell(p, self.origin, self.cell_size)

    def _candidates(self, p: GeoPoint, radius: float) -> np.ndarray:
        lat0, lat1, lon0, lon1 = cap_bbox(p, radius * (1 + 1e-9) + 1e-6)
        lat0, lat1 = max(lat0, -90.0), min(lat1, 90.0)
        lon0, lon1 = max(lon0, -180.0), min(lon1, 180.0)
        r0, c0 = self._cell(GeoPoint(lat0, lon0))
        r1, c1 = self._cell(GeoPoint(lat1, lon1))
        r0, r1 = max(r0, self._row_span[0]), min(r1, self._row_span[1])
        c0, c1 = max(c0, self._col_span[0]), min(c1, self._col_span[1])
        if r0 > r1 or c0 > c1:
            return np.empty(0, dtype=np.intp)
        if (r1 - r0 + 1) * (c1 - c0 + 1) > len(self._buckets):
            hits = [v for (r, c), v in self._buckets.items() if r0 <= r <= r1 and c0 <= c <= c1]
        else:
            hits = [self._buckets[k] for k in
                    ((r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1))
                    if k in self._buckets]
        return np.concatenate(hits) if hits else np.empty(0, dtype=np.intp)

    def in_circle(self, c: QueryCircle) -> list[GeoPoint]:
        idx = self._candidates(c.center, c.radius)
        idx = np.sort(idx[within_mask(c.center, self._lat[idx], self._lon[idx], c.radius)])
        return [self.points[i] for i in idx]

    def count_in_circle(self, c: QueryCircle) -> int:
        idx = self._candidates(c.center, c.radius)
        return int(np.count_nonzero(within_mask(c.center, self._lat[idx], self._lon[idx], c.radius)))

    def nearest_distinct(self, p: GeoPoint) -> tuple[GeoPoint, float] | None:
        """Nearest seed point with different coordinates, or None for a singleton set."""
        if len(self.points) == 1:
            return None
        row, col = self._cell(p)
        best_d = math.inf
        # grow square rings of cells until something is found ...
        max_ring = max(abs(row - self._row_span[0]), abs(row - self._row_span[1]),
                       abs(col - self._col_span[0]), abs(col - self._col_span[1]))
        for k in range(max_ring + 1):
            for cell in _ring(row, col, k):
                for i in self._buckets.get(cell, ()):
                    q = self.points[i]
                    if q != p:
                        best_d = min(best_d, haversine(p, q))
            if best_d < math.inf:
                break
        # ... then sweep every cell that could hold something closer
        idx = self._candidates(p, best_d)
        best = None
        for i in sorted(idx):
            q = self.points[i]
            if q == p:
                continue
            d = haversine(p, q)
            if d < best_d or (d == best_d and best is None):
                best_d, best = d, q
        return best, best_d


def _ring(row: int, col: int, k: int):
    if k == 0:
        yield (row, col)
        return
    for c in range(col - k, col + k + 1):
        yield (row - k, c)
        yield (row + k, c)
    for r in range(row - k + 1, row + k):
        yield (r, col - k)
        yield (r, col + k)


def count_in_circle(s: SeedSet, c: QueryCircle) -> int:
    return s.count_in_circle(c)


def nearest_distinct(s: SeedSet, p: GeoPoint) -> tuple[GeoPoint, float] | None:
    return s.nearest_distinct(p)
