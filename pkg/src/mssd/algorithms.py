"""Seed-driven extraction strategies.

Every strategy drives one source through a :class:`~mssd.adapter.SourceHandle`
and returns an :class:`ExtractionRun`: the deduplicated locations retrieved
plus the request ledger. Locations are keyed by ``(source_name, id)``.

Strategies
----------
SI          the given initial queries, once each
MSSD_F      every seed point at a fixed radius
MSSD_D      radius divided by the number of seed points around the query point
MSSD_NN     radius equal to the distance to the nearest other seed point
MSSD_R      per seed point, shrink the radius by ``alpha`` while responses are full
MSSD_STAR_* cluster the seed with DBSCAN, query centroids, and on a full response
            re-cluster the cluster members together with the returned points
            using shrunken parameters (polygon results reduced to their
            centroid ``_C`` or their nearest point to the query center ``_N``)
SELF_SEED   re-query the points discovered in the previous round
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .adapter import SourceHandle
from .budget import BudgetLedger
from .dbscan import Cluster, dbscan, min_pts_after_shrink
from .geometry import (
    R_MAX,
    R_MIN,
    GeoPoint,
    GeoPolygon,
    QueryCircle,
    polygon_centroid,
    polygon_nearest_point,
)
from .seed_index import SeedSet
from .sources import Location, SimulatedSource


class Strategy(enum.Enum):
    SI = "SI"
    MSSD_F = "MSSD-F"
    MSSD_D = "MSSD-D"
    MSSD_NN = "MSSD-NN"
    MSSD_R = "MSSD-R"
    MSSD_STAR_C = "MSSD*-C"
    MSSD_STAR_N = "MSSD*-N"
    SELF_SEED = "Self-seed"

    @classmethod
    def parse(cls, name: str) -> Strategy:
        key = name.strip().upper().replace("_", "-")
        for s in cls:
            if s.value.upper() == key or s.name == name.strip().upper():
                return s
        if key in ("MSSD*", "MSSD-STAR"):
            return cls.MSSD_STAR_C
        raise ValueError(f"unknown strategy {name!r}")


class Variant(enum.Enum):
    CENTROID = "centroid"
    NEAREST_POINT = "nearest_point"


RECURSIVE = {Strategy.MSSD_R, Strategy.MSSD_STAR_C, Strategy.MSSD_STAR_N}


class SimulatorOnly(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    """Strategy parameters.

    ``r`` defaults to 2 km for the fixed-radius family and 16 km for the
    recursive ones. ``eps`` and ``m`` are the DBSCAN parameters of the
    clustered strategies. ``eps`` shrinks by ``alpha`` at every recursion
    level; ``m`` stays fixed unless ``shrink_min_pts`` is set, in which case it
    shrinks too (as ``max(1, floor(m / alpha**depth))``). Noise points of the
    initial seed clustering are queried as singleton clusters; noise found
    while re-clustering is not queried further.
    """

    strategy: Strategy
    r: float | None = None
    alpha: float = 2.0
    eps: float = 500.0
    m: int = 10
    max_requests: int | None = None
    r_min: float = R_MIN
    rounds: int = 10
    shrink_min_pts: bool = False

    def __post_init__(self):
        if isinstance(self.strategy, str):
            object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.r is None:
            object.__setattr__(self, "r", 16_000.0 if self.strategy in RECURSIVE else 2_000.0)
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if self.r_min <= 0 or self.r < self.r_min:
            raise ValueError(f"r={self.r} must be >= r_min={self.r_min} > 0")
        if self.eps <= 0 or self.m < 1:
            raise ValueError("eps must be positive and m >= 1")
        if self.max_requests is not None and self.max_requests < 0:
            raise ValueError("max_requests must be non-negative")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @property
    def label(self) -> str:
        return self.strategy.value


@dataclass
class ExtractionRun:
    source_name: str
    config: StrategyConfig
    handle: SourceHandle = field(repr=False)
    retrieved: dict[tuple[str, str], Location] = field(default_factory=dict)
    initial_keys: frozenset = frozenset()
    floor_hits: int = 0
    truncated: bool = False

    @property
    def ledger(self) -> BudgetLedger:
        return self.handle.ledger

    @property
    def requests(self) -> int:
        return self.ledger.request_count

    @property
    def gains(self) -> list[int]:
        return [e.new_count for e in self.ledger.entries]

    def cumulative(self) -> list[int]:
        """Distinct locations after each request (initial locations included)."""
        total = len(self.initial_keys)
        out = []
        for g in self.gains:
            total += g
            out.append(total)
        return out

    def __len__(self):
        return len(self.retrieved)

    def keys(self) -> set[tuple[str, str]]:
        return set(self.retrieved)

    def add(self, locations: Iterable[Location]) -> int:
        new = 0
        for l in locations:
            if l.key not in self.retrieved:
                self.retrieved[l.key] = l
                new += 1
        return new


class _OutOfBudget(Exception):
    pass


def _handle(source: SourceHandle | SimulatedSource, cfg: StrategyConfig) -> SourceHandle:
    if isinstance(source, SourceHandle):
        return source
    if isinstance(source, SimulatedSource):
        return SourceHandle.simulated(source)
    raise TypeError(f"cannot query {type(source).__name__}")


def _seedset(seed) -> SeedSet:
    return seed if isinstance(seed, SeedSet) else SeedSet(seed)


class _Crawler:
    def __init__(self, source, cfg: StrategyConfig, initial: Iterable[Location]):
        self.cfg = cfg
        handle = _handle(source, cfg)
        self.run = ExtractionRun(handle.name, cfg, handle)
        self.run.add(initial)
        self.run.initial_keys = frozenset(self.run.retrieved)
        self.m_s = handle.max_result_size
        self.last_new: list[Location] = []

    def ask(self, p: GeoPoint, r: float) -> list[Location]:
        cap = self.cfg.max_requests
        if cap is not None and self.run.requests >= cap:
            raise _OutOfBudget
        res = self.run.handle.query(p, r, seen=self.run.retrieved.keys())
        self.last_new = [l for l in res if l.key not in self.run.retrieved]
        self.run.add(self.last_new)
        return res

    def full(self, res: Sequence[Location]) -> bool:
        return len(res) >= self.m_s

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is _OutOfBudget:
            self.run.truncated = True
            return True
        return False


def _radius(r: float, cfg: StrategyConfig) -> float:
    return min(R_MAX, max(cfg.r_min, r))


def run_si(source, initial_queries: Sequence[QueryCircle], cfg: StrategyConfig | None = None) -> ExtractionRun:
    if not initial_queries:
        raise ValueError("SI needs at least one initial query")
    cfg = cfg or StrategyConfig(Strategy.SI)
    crawl = _Crawler(source, cfg, ())
    with crawl:
        for c in initial_queries:
            crawl.ask(c.center, c.radius)
    return crawl.run


def run_mssd_fixed(source, seed, cfg: StrategyConfig, initial: Iterable[Location] = ()) -> ExtractionRun:
    seed = _seedset(seed)
    crawl = _Crawler(source, cfg, initial)
    with crawl:
        for p in seed:
            crawl.ask(p, cfg.r)
    return crawl.run


def density_radius(seed: SeedSet, p: GeoPoint, cfg: StrategyConfig) -> float:
    """``r / N`` with N the seed points in Circle(p, r), the query point included."""
    n = seed.count_in_circle(QueryCircle(p, cfg.r))
    return _radius(cfg.r / max(1, n), cfg)


def nn_radius(seed: SeedSet, p: GeoPoint, cfg: StrategyConfig) -> float:
    """Distance to the nearest other seed point; ``cfg.r`` for a one-point seed."""
    nn = seed.nearest_distinct(p)
    return cfg.r if nn is None else _radius(nn[1], cfg)


def run_mssd_density(source, seed, cfg: StrategyConfig, initial: Iterable[Location] = ()) -> ExtractionRun:
    seed = _seedset(seed)
    crawl = _Crawler(source, cfg, initial)
    with crawl:
        for p in seed:
            crawl.ask(p, density_radius(seed, p, cfg))
    return crawl.run


def run_mssd_nn(source, seed, cfg: StrategyConfig, initial: Iterable[Location] = ()) -> ExtractionRun:
    seed = _seedset(seed)
    crawl = _Crawler(source, cfg, initial)
    with crawl:
        for p in seed:
            crawl.ask(p, nn_radius(seed, p, cfg))
    return crawl.run


def _rad_recursive(crawl: _Crawler, p: GeoPoint, r: float) -> None:
    cfg = crawl.cfg
    while True:
        res = crawl.ask(p, r)
        if not crawl.full(res):
            return
        if r / cfg.alpha < cfg.r_min:
            crawl.run.floor_hits += 1
            return
        r /= cfg.alpha


def run_mssd_recursive(source, seed, cfg: StrategyConfig, initial: Iterable[Location] = ()) -> ExtractionRun:
    seed = _seedset(seed)
    crawl = _Crawler(source, cfg, initial)
    with crawl:
        for p in seed:
            _rad_recursive(crawl, p, cfg.r)
    return crawl.run


def representative(l: Location, center: GeoPoint, variant: Variant) -> GeoPoint:
    if isinstance(l.region, GeoPolygon):
        if variant is Variant.NEAREST_POINT:
            return polygon_nearest_point(l.region, center)
        return polygon_centroid(l.region)
    return l.point


def _rad_recursive_star(crawl: _Crawler, cluster: Cluster, r: float, eps: float, m: float,
                        depth: int, variant: Variant) -> None:
    cfg = crawl.cfg
    center = cluster.centroid
    res = crawl.ask(center, r)
    if not crawl.full(res):
        return
    r2, eps2, m2 = r / cfg.alpha, eps / cfg.alpha, m / cfg.alpha
    if r2 < cfg.r_min or eps2 < 1.0:
        crawl.run.floor_hits += 1
        return
    if cfg.shrink_min_pts:
        min_pts = min_pts_after_shrink(m2)
    else:
        min_pts, m2 = cfg.m, m
    pts = list(dict.fromkeys([*cluster.members, *(representative(l, center, variant) for l in res)]))
    for sub in dbscan(pts, eps2, min_pts):
        # a lone point is an outlier of the sample, even when min_pts has shrunk to 1
        if sub.is_singleton_noise or len(sub) == 1:
            continue
        _rad_recursive_star(crawl, sub, r2, eps2, m2, depth + 1, variant)


def run_mssd_star(source, seed, cfg: StrategyConfig, variant: Variant | None = None,
                  initial: Iterable[Location] = ()) -> ExtractionRun:
    if variant is None:
        variant = Variant.NEAREST_POINT if cfg.strategy is Strategy.MSSD_STAR_N else Variant.CENTROID
    seed = _seedset(seed)
    crawl = _Crawler(source, cfg, initial)
    with crawl:
        for c in dbscan(seed.points, cfg.eps, cfg.m):
            _rad_recursive_star(crawl, c, cfg.r, cfg.eps, float(cfg.m), 0, variant)
    return crawl.run


def run_self_seed(source, initial_queries: Sequence[QueryCircle], cfg: StrategyConfig,
                  rounds: int | None = None) -> ExtractionRun:
    """Round 0 runs the initial queries; round k queries, at ``cfg.r``, every
    distinct point first discovered in round k-1."""
    rounds = cfg.rounds if rounds is None else rounds
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not initial_queries:
        raise ValueError("Self-seed needs at least one initial query")
    crawl = _Crawler(source, cfg, ())
    queried: set[GeoPoint] = set()
    with crawl:
        batch = [(c.center, c.radius) for c in initial_queries]
        for _ in range(rounds):
            found: dict[GeoPoint, None] = {}
            for p, r in batch:
                queried.add(p)
                crawl.ask(p, r)
                for l in crawl.last_new:
                    found[l.point] = None
            batch = [(p, cfg.r) for p in found if p not in queried]
            if not batch:
                break
    return crawl.run


def greedy_gain(run: ExtractionRun, candidate: QueryCircle) -> int:
    """New locations a hypothetical query would add to ``run``; consumes no budget."""
    backend = run.handle.backend
    if not isinstance(backend, SimulatedSource):
        raise SimulatorOnly("hypothetical queries need a simulated source")
    res = backend.respond(candidate.center, candidate.radius, deterministic=True)
    return sum(1 for l in res if l.key not in run.retrieved)


def run_strategy(source, cfg: StrategyConfig, seed=None,
                 initial_queries: Sequence[QueryCircle] = (),
                 initial: Iterable[Location] = ()) -> ExtractionRun:
    s = cfg.strategy
    if s is Strategy.SI:
        return run_si(source, initial_queries, cfg)
    if s is Strategy.SELF_SEED:
        return run_self_seed(source, initial_queries, cfg)
    if seed is None:
        raise ValueError(f"{s.value} needs a seed")
    if s is Strategy.MSSD_F:
        return run_mssd_fixed(source, seed, cfg, initial)
    if s is Strategy.MSSD_D:
        return run_mssd_density(source, seed, cfg, initial)
    if s is Strategy.MSSD_NN:
        return run_mssd_nn(source, seed, cfg, initial)
    if s is Strategy.MSSD_R:
        return run_mssd_recursive(source, seed, cfg, initial)
    return run_mssd_star(source, seed, cfg, initial=initial)
