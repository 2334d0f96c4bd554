"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line, printed in the terminal summary. Run
just this module with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from desk import SEEDS, scenario
from mssd import cli
from mssd.algorithms import StrategyConfig, greedy_gain, run_mssd_fixed, run_mssd_recursive, run_mssd_star, run_strategy
from mssd.dbscan import dbscan
from mssd.eval import greedy_select, optimal_coverage, union_size
from mssd.geometry import GeoPoint, QueryCircle
from mssd.sources import Location, SamplingMode, SimulatedSource, SourceProfile, write_universe
from mssd.synth import SettlementModel

pytestmark = pytest.mark.acceptance

R_EARTH = 6_371_000.0


def _clustered_source(n: int, m_s: int, mode: SamplingMode, rng_seed: int, name: str = "S") -> SimulatedSource:
    model = SettlementModel.random(rng_seed)
    return SimulatedSource(SourceProfile(name, m_s, 10**9, 1.0, sampling_mode=mode),
                           model.locations(n, rng_seed + 1, name), rng_seed=rng_seed)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_smaller_radius_subset(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    violations = checked = 0
    for mode in (SamplingMode.FIXED_SUBSET, SamplingMode.NEAREST_FIRST):
        src = _clustered_source(20_000, 50, mode, rng_seed=5)
        for _ in range(500):
            anchor = src.universe[int(rng.integers(len(src)))].point
            center = GeoPoint(anchor.lat + rng.normal(0, 0.01), anchor.lon + rng.normal(0, 0.02))
            r = float(np.exp(rng.uniform(np.log(40.0), np.log(100_000.0))))
            base = src.respond(center, r)
            if len(base) >= 50:
                continue
            checked += 1
            keys = {l.key for l in base}
            for div in (2, 4):
                if not {l.key for l in src.respond(center, r / div)} <= keys:
                    violations += 1
    dt = time.perf_counter() - t0
    record(1, violations == 0 and checked > 0 and dt < 10,
           f"{violations} violations over {checked} non-full queries (1000 pairs), {dt:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_greedy_bound(record):
    t0 = time.perf_counter()
    rng = random.Random(2)
    worst = 1.0
    for i in range(500):
        n_loc = rng.randint(5, 60)
        locs = [Location(f"l{j}", "G", GeoPoint(57 + rng.uniform(0, 0.05), 10 + rng.uniform(0, 0.09)))
                for j in range(n_loc)]
        m_s = rng.choice([3, 5, 10, 60])
        src = SimulatedSource(SourceProfile("G", m_s, 10**9, 1.0, sampling_mode=SamplingMode.FIXED_SUBSET),
                              locs, rng_seed=i)
        cands = [QueryCircle(GeoPoint(57 + rng.uniform(0, 0.05), 10 + rng.uniform(0, 0.09)),
                             rng.uniform(300, 3000)) for _ in range(rng.randint(1, 12))]
        n = rng.randint(1, 4)
        _, best = optimal_coverage(src, cands, n)
        got = union_size(src, greedy_select(src, cands, n))
        if best:
            worst = min(worst, got / best)
    dt = time.perf_counter() - t0
    record(2, worst >= 1 - 1 / math.e and dt < 60,
           f"min greedy/optimal {worst:.4f} >= {1 - 1 / math.e:.4f} over 500 instances, {dt:.1f}s")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_submodular_and_monotone(record):
    t0 = time.perf_counter()
    src = _clustered_source(500, 20, SamplingMode.FIXED_SUBSET, rng_seed=3)
    rng = random.Random(3)
    seed = sorted({src.universe[i].point for i in rng.sample(range(len(src)), 8)})
    cfg = StrategyConfig("MSSD-F", r=3000.0)
    runs = {}
    for k in range(len(seed) + 1):
        for sub in itertools.combinations(range(len(seed)), k):
            runs[frozenset(sub)] = run_mssd_fixed(src, [seed[i] for i in sub], cfg) if sub else None

    def gain(sub: frozenset, p: int) -> int:
        if not sub:
            return len({l.key for l in src.respond(seed[p], cfg.r, deterministic=True)})
        return greedy_gain(runs[sub], QueryCircle(seed[p], cfg.r))

    gains = {(s, p): gain(s, p) for s in runs for p in range(len(seed)) if p not in s}
    sub_viol = pairs = 0
    for big in runs:
        for k in range(len(big) + 1):
            for small in map(frozenset, itertools.combinations(sorted(big), k)):
                for p in range(len(seed)):
                    if p in big:
                        continue
                    pairs += 1
                    if gains[(small, p)] < gains[(big, p)]:
                        sub_viol += 1

    size = {s: (len(r) if r is not None else 0) for s, r in runs.items()}
    mono_viol = 0
    subsets = list(runs)
    for _ in range(10_000):
        s = rng.choice(subsets)
        rest = [p for p in range(len(seed)) if p not in s]
        if rest and size[s | {rng.choice(rest)}] < size[s]:
            mono_viol += 1
    dt = time.perf_counter() - t0
    record(3, sub_viol == 0 and mono_viol == 0 and dt < 30,
           f"{sub_viol} submodularity violations / {pairs} pairs, {mono_viol} monotonicity / 10^4, {dt:.1f}s")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_desk_scale_efficiency(record):
    t0 = time.perf_counter()
    cov_r, cov_s, req_ratio = [], [], []
    for s in SEEDS:
        sc = scenario(s)
        n = len(sc.source)
        rr = run_mssd_recursive(sc.source, sc.seed, StrategyConfig("MSSD-R"))
        st = run_mssd_star(sc.source, sc.seed, StrategyConfig("MSSD*-C"))
        cov_r.append(len(rr) / n)
        cov_s.append(len(st) / n)
        req_ratio.append(st.requests / rr.requests)
    dt = time.perf_counter() - t0
    a, b, c = (float(np.mean(x)) for x in (cov_r, cov_s, req_ratio))
    record(4, a >= 0.80 and b >= 0.60 and c <= 0.20 and dt < 300,
           f"MSSD-R coverage {a:.3f} (>=0.80), MSSD* coverage {b:.3f} (>=0.60) "
           f"with {c:.3f} of MSSD-R requests (<=0.20), {dt:.0f}s")


# 5 ---------------------------------------------------------------------------

def test_criterion_5_request_accounting(record):
    t0 = time.perf_counter()
    sc = scenario(0)
    seed = sc.seed
    n = len(seed)
    problems = []
    for name in ("MSSD-F", "MSSD-D", "MSSD-NN"):
        run = run_strategy(sc.source, StrategyConfig(name), seed)
        if run.requests != n or len(run.ledger.entries) != n:
            problems.append(f"{name} issued {run.requests} for {n} points")
        if Counter(e.center for e in run.ledger.entries) != Counter(seed.points):
            problems.append(f"{name} did not query every seed point once")
    rr = run_mssd_recursive(sc.source, seed, StrategyConfig("MSSD-R"))
    per_point = Counter(e.center for e in rr.ledger.entries)
    cap = math.ceil(math.log2(16_000 / 10)) + 1
    if rr.requests < n or set(per_point) != set(seed.points):
        problems.append("MSSD-R skipped seed points")
    if max(per_point.values()) > cap:
        problems.append(f"MSSD-R used {max(per_point.values())} requests at one point (cap {cap})")
    dt = time.perf_counter() - t0
    record(5, not problems and dt < 10,
           f"F/D/NN = {n} each, MSSD-R {rr.requests} (max {max(per_point.values())}/point, cap {cap}), "
           f"{dt:.1f}s {'; '.join(problems)}")


# 6 ---------------------------------------------------------------------------

def _hav(a, b):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dl = math.radians(b[1] - a[1])
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R_EARTH * math.asin(min(1.0, math.sqrt(h)))


def closure_partition(pts, eps, min_pts):
    """Density-reachability closure: BFS over core points, then border assignment."""
    n = len(pts)
    rank = sorted(range(n), key=lambda i: (pts[i][0], pts[i][1], i))
    pos = {i: k for k, i in enumerate(rank)}
    nb = [[j for j in range(n) if _hav(pts[i], pts[j]) <= eps] for i in range(n)]
    core = [len(nb[i]) >= min_pts for i in range(n)]
    owner_block: dict[int, int] = {}
    blocks: list[set[int]] = []
    for i in range(n):
        if not core[i] or i in owner_block:
            continue
        block, frontier = {i}, [i]
        while frontier:
            j = frontier.pop()
            for k in nb[j]:
                if core[k] and k not in block:
                    block.add(k)
                    frontier.append(k)
        for k in block:
            owner_block[k] = len(blocks)
        blocks.append(block)
    singles = []
    for i in range(n):
        if core[i]:
            continue
        cores = [j for j in nb[i] if core[j]]
        if cores:
            blocks[owner_block[min(cores, key=lambda j: pos[j])]].add(i)
        else:
            singles.append({i})
    return {frozenset(b) for b in blocks + singles}


def test_criterion_6_dbscan_oracle(record):
    t0 = time.perf_counter()
    rng = random.Random(6)
    mismatches = 0
    for _ in range(100):
        n = rng.randint(1, 200)
        k = rng.randint(1, 6)
        centers = [(57 + rng.uniform(0, 0.1), 10 + rng.uniform(0, 0.2)) for _ in range(k)]
        pts = []
        for _ in range(n):
            c = rng.choice(centers)
            pts.append((c[0] + rng.gauss(0, 0.004), c[1] + rng.gauss(0, 0.008)))
        eps = rng.uniform(100, 800)
        m = rng.randint(1, 8)
        got = {frozenset(c.indices) for c in dbscan([GeoPoint(*p) for p in pts], eps, m)}
        if got != closure_partition(pts, eps, m):
            mismatches += 1
    dt = time.perf_counter() - t0
    record(6, mismatches == 0 and dt < 30, f"{mismatches} partition mismatches over 100 instances, {dt:.1f}s")


# 7 ---------------------------------------------------------------------------

def test_criterion_7_alpha_radius_shape(record):
    t0 = time.perf_counter()
    alphas, radii = (2, 4, 8, 16), (1000.0, 4000.0, 16000.0)
    loc_a = {a: [] for a in alphas}
    req_a = {a: [] for a in alphas}
    loc_r = {r: [] for r in radii}
    for s in SEEDS:
        sc = scenario(s)
        for a in alphas:
            run = run_mssd_star(sc.source, sc.seed, StrategyConfig("MSSD*-C", alpha=a))
            loc_a[a].append(len(run))
            req_a[a].append(run.requests)
        for r in radii:
            loc_r[r].append(len(run_mssd_star(sc.source, sc.seed, StrategyConfig("MSSD*-C", r=r))))
    la = [float(np.mean(loc_a[a])) for a in alphas]
    ra = [float(np.mean(req_a[a])) for a in alphas]
    lr = [float(np.mean(loc_r[r])) for r in radii]
    spread = (max(ra) - min(ra)) / max(ra)
    dt = time.perf_counter() - t0
    ok = (all(x >= y for x, y in zip(la, la[1:])) and all(x <= y for x, y in zip(lr, lr[1:]))
          and spread < 0.10 and dt < 300)
    record(7, ok, f"locations over alpha {[round(x) for x in la]}, over r {[round(x) for x in lr]}, "
                  f"request spread over alpha {spread:.3f} (<0.10), {dt:.0f}s")


# 8 ---------------------------------------------------------------------------

def _tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_byte_identical_reruns(record, tmp_path):
    model = SettlementModel.random(8, n_towns=8, lat_range=(56.9, 57.2), lon_range=(9.6, 10.2))
    write_universe(tmp_path / "seed.tsv", model.locations(400, 1, "Krak"))
    write_universe(tmp_path / "yelp.tsv", model.locations(1500, 2, "Yelp"))
    write_universe(tmp_path / "fsq.tsv", model.locations(1000, 3, "Foursquare"))
    config = {
        "rng_seed": 8, "seed_source": "Krak",
        "sources": [{"profile": "Krak", "universe": "seed.tsv"}, {"profile": "Yelp", "universe": "yelp.tsv"},
                    {"profile": "Foursquare", "universe": "fsq.tsv"}],
        "profiles": {"Foursquare": {"sampling_mode": "uniform_random"}},
        "initial_queries": [{"lat": 57.05, "lon": 9.9, "radius_m": 3000}],
        "strategies": [{"strategy": s} for s in
                       ("SI", "MSSD-F", "MSSD-D", "MSSD-NN", "MSSD-R", "MSSD*-C", "MSSD*-N", "Self-seed")],
        "sweep": {"alpha": [2, 4], "r_km": [4, 16]},
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    codes = [cli.main(["run", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / d), "--sweep"])
             for d in ("a", "b")]
    a, b = _tree_digest(tmp_path / "a"), _tree_digest(tmp_path / "b")
    record(8, codes == [0, 0] and a == b and len(a) > 0,
           f"exit codes {codes}, {len(a)} files, identical={a == b}")
