"""DBSCAN over geographic points with haversine distance.

Points are processed in (lat, lon) order, so the output does not depend on the
input order. A border point reachable from several clusters joins the cluster
of its lowest-ranked core neighbor. Noise points come back as singleton
clusters flagged ``is_singleton_noise``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import EARTH_RADIUS_M, GeoPoint, chord_for, unit_vectors, within_mask


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class Cluster:
    centroid: GeoPoint
    members: tuple[GeoPoint, ...]
    is_singleton_noise: bool = False
    indices: tuple[int, ...] = ()  # positions in the input list

    def __len__(self):
        return len(self.members)


def mean_point(points: Sequence[GeoPoint]) -> GeoPoint:
    return GeoPoint(sum(p.lat for p in points) / len(points), sum(p.lon for p in points) / len(points))


_PAIRWISE_MAX = 700


def neighbor_lists(lat: np.ndarray, lon: np.ndarray, eps: float) -> list[np.ndarray]:
    """For each point, the sorted indices of all points within ``eps`` meters (itself included)."""
    n = len(lat)
    if n <= _PAIRWISE_MAX:
        phi = np.radians(lat)
        lmb = np.radians(lon)
        h = (np.sin((phi[:, None] - phi[None, :]) / 2) ** 2
             + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin((lmb[:, None] - lmb[None, :]) / 2) ** 2)
        d = 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))
        tol = 1e-7 * eps + 1e-9
        close = d <= eps
        out = []
        for i in range(n):
            row = close[i]
            edge = np.flatnonzero(np.abs(d[i] - eps) <= tol)
            if edge.size:
                row = row.copy()
                row[edge] = within_mask(GeoPoint(float(lat[i]), float(lon[i])), lat[edge], lon[edge], eps)
            out.append(np.flatnonzero(row))
        return out
    tree = cKDTree(unit_vectors(lat, lon))
    cand = tree.query_ball_point(unit_vectors(lat, lon), chord_for(eps))
    out = []
    for i, c in enumerate(cand):
        c = np.sort(np.asarray(c, dtype=np.intp))
        out.append(c[within_mask(GeoPoint(float(lat[i]), float(lon[i])), lat[c], lon[c], eps)])
    return out


def dbscan(points: Sequence[GeoPoint], eps: float, min_pts: int) -> list[Cluster]:
    """Cluster ``points``; every input point lands in exactly one returned cluster.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps`` meters, boundary inclusive. Clusters are returned in order of
    their lowest-ranked member.
    """
    if not points:
        raise EmptyInput("dbscan needs at least one point")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(points)
    order = sorted(range(n), key=lambda i: (points[i].lat, points[i].lon, i))
    lat = np.array([points[i].lat for i in order])
    lon = np.array([points[i].lon for i in order])
    nbrs = neighbor_lists(lat, lon, eps)
    core = np.array([len(nb) >= min_pts for nb in nbrs])

    label = np.full(n, -1, dtype=np.intp)
    n_clusters = 0
    for i in range(n):
        if not core[i] or label[i] >= 0:
            continue
        label[i] = n_clusters
        stack = [i]
        while stack:
            j = stack.pop()
            for k in nbrs[j]:
                if core[k] and label[k] < 0:
                    label[k] = n_clusters
                    stack.append(k)
        n_clusters += 1
    for i in range(n):
        if core[i]:
            continue
        cores = [k for k in nbrs[i] if core[k]]
        if cores:
            label[i] = label[min(cores)]

    groups: dict[int, list[int]] = {}
    for i in range(n):
        key = int(label[i]) if label[i] >= 0 else -1 - i
        groups.setdefault(key, []).append(i)
    clusters = []
    for key, ranks in sorted(groups.items(), key=lambda kv: kv[1][0]):
        members = tuple(points[order[r]] for r in ranks)
        clusters.append(Cluster(
            centroid=mean_point(members),
            members=members,
            is_singleton_noise=key < 0,
            indices=tuple(order[r] for r in ranks),
        ))
    return clusters


def min_pts_after_shrink(m: float) -> int:
    """Integer min_pts for a possibly fractional shrunken parameter."""
    return max(1, math.floor(m))
