"""Ground-truth universes built from a learned grid-cell distribution.

Real points are binned into square cells of a local grid; synthetic locations
pick a cell with the learned frequency and sit uniformly inside it. A
settlement model (towns plus rural background) stands in for real data when
none is at hand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dbscan import EmptyInput
from .geometry import EARTH_RADIUS_M, GeoPoint
from .sources import Location

_K = math.pi / 180 * EARTH_RADIUS_M


@dataclass(frozen=True)
class CellDistribution:
    origin: GeoPoint
    cell_size: float
    cells: dict[tuple[int, int], float]
    extent: tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if any(p < 0 for p in self.cells.values()):
            raise ValueError("negative cell probability")
        total = sum(self.cells.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"cell probabilities sum to {total!r}, not 1")

    def keys(self) -> list[tuple[int, int]]:
        return sorted(self.cells)

    def probabilities(self) -> np.ndarray:
        return np.array([self.cells[k] for k in self.keys()])

    def cell_of(self, lats, lons) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :func:`~mssd.geometry.local_grid_cell`."""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        x = (lons - self.origin.lon) * _K * math.cos(math.radians(self.origin.lat))
        y = (lats - self.origin.lat) * _K
        return np.floor(y / self.cell_size).astype(np.int64), np.floor(x / self.cell_size).astype(np.int64)

    def total_variation(self, other: CellDistribution) -> float:
        keys = set(self.cells) | set(other.cells)
        return 0.5 * sum(abs(self.cells.get(k, 0.0) - other.cells.get(k, 0.0)) for k in keys)

    def sample(self, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``count`` (lat, lon) positions and the index of the cell each was drawn in."""
        keys = self.keys()
        probs = self.probabilities()
        which = rng.choice(len(keys), size=count, p=probs / probs.sum())
        rc = np.array(keys, dtype=np.int64).reshape(-1, 2)[which]
        # stay a millimetre inside the cell so projection round-off cannot move a point across an edge
        u = 1e-6 + (1 - 2e-6) * rng.random((count, 2))
        y = (rc[:, 0] + u[:, 0]) * self.cell_size
        x = (rc[:, 1] + u[:, 1]) * self.cell_size
        lats = self.origin.lat + y / _K
        lons = self.origin.lon + x / (_K * math.cos(math.radians(self.origin.lat)))
        return lats, lons, which

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin_lat", "origin_lon", "cell_size_m",
                        "lat_min", "lat_max", "lon_min", "lon_max"])
            w.writerow([repr(float(self.origin.lat)), repr(float(self.origin.lon)), repr(float(self.cell_size)),
                        *(repr(float(v)) for v in self.extent)])
            w.writerow(["row", "col", "probability"])
            for (r, c) in self.keys():
                w.writerow([r, c, repr(float(self.cells[(r, c)]))])

    @classmethod
    def read_csv(cls, path) -> CellDistribution:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3 or rows[2] != ["row", "col", "probability"]:
            raise ValueError(f"{path}: not a cell distribution file")
        head = [float(v) for v in rows[1]]
        cells = {(int(r), int(c)): float(p) for r, c, p in rows[3:]}
        return cls(GeoPoint(head[0], head[1]), head[2], cells, tuple(head[3:7]))


def learn_distribution(points: Sequence[GeoPoint], cell_size: float = 1000.0) -> CellDistribution:
    """Cell frequencies of ``points`` on a grid anchored at their south-west corner."""
    if len(points) == 0:
        raise EmptyInput("cannot learn a distribution from no points")
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    return learn_distribution_arrays(lats, lons, cell_size)


def learn_distribution_arrays(lats: np.ndarray, lons: np.ndarray, cell_size: float = 1000.0,
                              origin: GeoPoint | None = None) -> CellDistribution:
    if len(lats) == 0:
        raise EmptyInput("cannot learn a distribution from no points")
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    if origin is None:
        origin = GeoPoint(float(lats.min()), float(lons.min()))
    extent = (float(lats.min()), float(lats.max()), float(lons.min()), float(lons.max()))
    probe = CellDistribution(origin, cell_size, {(0, 0): 1.0}, extent)
    rows, cols = probe.cell_of(lats, lons)
    uniq, counts = np.unique(np.column_stack((rows, cols)), axis=0, return_counts=True)
    n = len(lats)
    cells = {(int(r), int(c)): int(k) / n for (r, c), k in zip(uniq, counts)}
    # absorb float round-off so the total is 1 to within an ulp or two
    total = math.fsum(cells.values())
    if total != 1.0:
        cells = {k: v / total for k, v in cells.items()}
    return CellDistribution(origin, cell_size, cells, extent)


def generate_synthetic(dist: CellDistribution, count: int, rng_seed: int,
                       source_name: str = "synthetic",
                       vocabulary: Sequence[str] = ()) -> list[Location]:
    """``count`` point locations with ids ``syn-0, syn-1, ...``, reproducible from ``rng_seed``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    lats, lons, _ = dist.sample(count, rng)
    vocab = sorted(set(vocabulary))
    cats = rng.integers(0, len(vocab), size=count) if vocab else None
    out = []
    for i in range(count):
        attrs = {"category": vocab[cats[i]]} if vocab else {}
        out.append(Location(f"syn-{i}", source_name, GeoPoint(float(lats[i]), float(lons[i])), attrs))
    return out


def synthetic_count(n_real: int, synth_ratio: float) -> int:
    if not 0 <= synth_ratio < 1:
        raise ValueError("synth_ratio must be in [0, 1)")
    return int(math.floor(n_real * synth_ratio / (1 - synth_ratio) + 0.5))


def mix_universe(real: Sequence[Location], dist: CellDistribution, synth_ratio: float,
                 rng_seed: int) -> list[Location]:
    """Real locations plus enough synthetic ones to make up ``synth_ratio`` of the total."""
    n_syn = synthetic_count(len(real), synth_ratio)
    if n_syn == 0:
        return list(real)
    names = {l.source_name for l in real}
    if len(names) == 1:
        (name,) = names
    else:
        # several sources: prefix ids so they stay unique under one name
        name = "ground_truth"
        real = [Location(f"{l.source_name}:{l.id}", name, l.region, l.attributes) for l in real]
    vocab = [l.attributes["category"] for l in real if "category" in l.attributes]
    syn = generate_synthetic(dist, n_syn, rng_seed, name, vocab)
    taken = {l.id for l in real}
    if any(l.id in taken for l in syn):
        raise ValueError("real location ids collide with the synthetic 'syn-' namespace")
    return [*real, *syn]


# -- settlement model -----------------------------------------------------------

@dataclass(frozen=True)
class SettlementModel:
    """Towns (isotropic Gaussians with heavy-tailed sizes) over a uniform rural background.

    ``towns`` rows are (lat, lon, sigma_m, weight).
    """

    lat_range: tuple[float, float]
    lon_range: tuple[float, float]
    towns: tuple[tuple[float, float, float, float], ...]
    rural_share: float

    @classmethod
    def random(cls, rng_seed: int, n_towns: int = 40, rural_share: float = 0.1,
               lat_range=(56.6, 57.6), lon_range=(8.4, 10.6),
               sigma_min: float = 150.0, sigma_max: float = 1200.0) -> SettlementModel:
        """Town centres uniform in the box, Zipf weights, spread growing with town size."""
        rng = np.random.default_rng(rng_seed)
        margin = 0.05
        lats = rng.uniform(lat_range[0] + margin, lat_range[1] - margin, n_towns)
        lons = rng.uniform(lon_range[0] + margin, lon_range[1] - margin, n_towns)
        weights = 1.0 / np.arange(1, n_towns + 1)  # Zipf town sizes
        rng.shuffle(weights)
        sigmas = sigma_min + (sigma_max - sigma_min) * np.sqrt(weights / weights.max())
        towns = tuple((float(a), float(b), float(s), float(w))
                      for a, b, s, w in zip(lats, lons, sigmas, weights / weights.sum()))
        return cls(tuple(lat_range), tuple(lon_range), towns, rural_share)

    def sample(self, n: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(rng_seed)
        rural = rng.random(n) < self.rural_share
        lats = np.empty(n)
        lons = np.empty(n)
        k = int(rural.sum())
        lats[rural] = rng.uniform(*self.lat_range, k)
        lons[rural] = rng.uniform(*self.lon_range, k)
        t = np.array(self.towns)
        pick = rng.choice(len(t), size=n - k, p=t[:, 3] / t[:, 3].sum())
        dy, dx = rng.normal(size=(2, n - k)) * t[pick, 2]
        lats[~rural] = t[pick, 0] + dy / _K
        lons[~rural] = t[pick, 1] + dx / (_K * np.cos(np.radians(t[pick, 0])))
        np.clip(lats, *self.lat_range, out=lats)
        np.clip(lons, *self.lon_range, out=lons)
        return lats, lons

    def locations(self, n: int, rng_seed: int, source_name: str, prefix: str = "loc-",
                  categories: Sequence[str] = ("restaurant", "shop", "bar", "cafe", "hotel", "museum")
                  ) -> list[Location]:
        lats, lons = self.sample(n, rng_seed)
        cat = np.random.default_rng([rng_seed, 1]).integers(0, len(categories), size=n)
        return [Location(f"{prefix}{i}", source_name, GeoPoint(float(a), float(b)),
                         {"category": categories[c]})
                for i, (a, b, c) in enumerate(zip(lats, lons, cat))]
