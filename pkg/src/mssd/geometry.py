"""Spherical geometry helpers: points, polygons, query circles and a local grid.

All distances are great-circle meters on a sphere of radius ``EARTH_RADIUS_M``.
Planar work (nearest point on a polygon, grid cells) uses an equirectangular
projection, which is accurate enough for regional extents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
R_MIN = 10.0
R_MAX = 100_000.0


class DegeneratePolygon(ValueError):
    """Raised when a polygon has no spatial extent."""


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate {self.lat!r}, {self.lon!r}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class GeoPolygon:
    """Simple polygon; closure is implicit so the last vertex must not repeat the first."""

    vertices: tuple[GeoPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        if len(self.vertices) < 3:
            raise ValueError("a polygon needs at least 3 vertices")
        first = self.vertices[0]
        if first == self.vertices[-1] and any(v != first for v in self.vertices):
            raise ValueError("closing vertex must not be repeated")


GeoRegion = Union[GeoPoint, GeoPolygon]


@dataclass(frozen=True)
class QueryCircle:
    center: GeoPoint
    radius: float

    def __post_init__(self):
        if not (R_MIN <= self.radius <= R_MAX):
            raise ValueError(f"radius {self.radius} m outside [{R_MIN}, {R_MAX}]")


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def contains(c: QueryCircle, p: GeoPoint) -> bool:
    """Closed-disk membership: points at exactly ``c.radius`` are inside."""
    return haversine(c.center, p) <= c.radius


def distances_m(p: GeoPoint, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Vectorized haversine from ``p`` to every (lat, lon) pair."""
    phi1 = math.radians(p.lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(lons - p.lon)
    h = np.sin(dphi / 2) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def within_mask(p: GeoPoint, lats: np.ndarray, lons: np.ndarray, radius: float) -> np.ndarray:
    """Boolean mask agreeing exactly with :func:`contains` for every element.

    The vectorized path can differ from the scalar one in the last ulp, so
    elements whose distance is within a hair of ``radius`` are re-checked with
    the scalar formula.
    """
    d = distances_m(p, lats, lons)
    tol = 1e-7 * radius + 1e-9
    mask = d <= radius
    for i in np.flatnonzero(np.abs(d - radius) <= tol):
        mask[i] = haversine(p, GeoPoint(float(lats[i]), float(lons[i]))) <= radius
    return mask


def unit_vectors(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Points on the unit sphere; chord length is monotone in great-circle distance."""
    phi = np.radians(np.asarray(lats, dtype=float))
    lmb = np.radians(np.asarray(lons, dtype=float))
    cphi = np.cos(phi)
    return np.column_stack((cphi * np.cos(lmb), cphi * np.sin(lmb), np.sin(phi)))


def chord_for(meters: float) -> float:
    """Unit-sphere chord length matching a great-circle distance, padded for KD-tree prefilters."""
    theta = min(math.pi, meters / EARTH_RADIUS_M)
    return 2 * math.sin(theta / 2) * (1 + 1e-9) + 1e-12


def polygon_centroid(pg: GeoPolygon) -> GeoPoint:
    first = pg.vertices[0]
    if all(v == first for v in pg.vertices):
        raise DegeneratePolygon("all polygon vertices coincide")
    n = len(pg.vertices)
    return GeoPoint(
        sum(v.lat for v in pg.vertices) / n,
        sum(v.lon for v in pg.vertices) / n,
    )


def _project(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    # (x east, y north) in meters, scaled at the origin latitude
    k = math.pi / 180 * EARTH_RADIUS_M
    return (
        (p.lon - origin.lon) * k * math.cos(math.radians(origin.lat)),
        (p.lat - origin.lat) * k,
    )


def _unproject(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    k = math.pi / 180 * EARTH_RADIUS_M
    return GeoPoint(
        origin.lat + y / k,
        origin.lon + x / (k * math.cos(math.radians(origin.lat))),
    )


def _inside(x: float, y: float, ring: list[tuple[float, float]]) -> bool:
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def polygon_nearest_point(pg: GeoPolygon, p: GeoPoint) -> GeoPoint:
    """``p`` itself when inside ``pg``, else the closest boundary point.

    Works in an equirectangular projection centered on ``p``.
    """
    polygon_centroid(pg)  # degeneracy check
    ring = [_project(v, p) for v in pg.vertices]
    if _inside(0.0, 0.0, ring):
        return p
    best = None
    best_d2 = math.inf
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        t = 0.0 if seg2 == 0 else max(0.0, min(1.0, -(x1 * dx + y1 * dy) / seg2))
        fx, fy = x1 + t * dx, y1 + t * dy
        d2 = fx * fx + fy * fy
        if d2 < best_d2:
            best_d2, best = d2, (fx, fy)
    return _unproject(best[0], best[1], p)


def local_grid_cell(p: GeoPoint, origin: GeoPoint, cell_size: float) -> tuple[int, int]:
    """(row, col) of the cell holding ``p``; rows grow northward, cols eastward."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    x, y = _project(p, origin)
    return math.floor(y / cell_size), math.floor(x / cell_size)


def cell_center(row: int, col: int, origin: GeoPoint, cell_size: float) -> GeoPoint:
    return _unproject((col + 0.5) * cell_size, (row + 0.5) * cell_size, origin)


def cell_bounds(row: int, col: int, origin: GeoPoint, cell_size: float) -> tuple[GeoPoint, GeoPoint]:
    """South-west and north-east corners of a grid cell."""
    return (
        _unproject(col * cell_size, row * cell_size, origin),
        _unproject((col + 1) * cell_size, (row + 1) * cell_size, origin),
    )


def cap_bbox(p: GeoPoint, radius: float) -> tuple[float, float, float, float]:
    """(lat_min, lat_max, lon_min, lon_max) enclosing every point within ``radius`` of ``p``.

    Exact for a spherical cap that reaches neither pole nor the antimeridian.
    """
    ang = radius / EARTH_RADIUS_M
    dlat = math.degrees(ang)
    lat_min, lat_max = p.lat - dlat, p.lat + dlat
    if lat_min <= -90 or lat_max >= 90 or ang >= math.pi / 2:
        return max(-90.0, lat_min), min(90.0, lat_max), -180.0, 180.0
    s = math.sin(ang) / math.cos(math.radians(p.lat))
    dlon = 180.0 if s >= 1 else math.degrees(math.asin(s))
    return lat_min, lat_max, p.lon - dlon, p.lon + dlon
