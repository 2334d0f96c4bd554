import math
import random
from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mssd.algorithms import StrategyConfig, run_mssd_fixed, run_mssd_recursive, run_strategy
from mssd.eval import (
    MAX_CANDIDATES,
    METRICS_COLUMNS,
    MismatchedUniverse,
    RunMetrics,
    TooLarge,
    compare,
    coverage,
    greedy_select,
    optimal_coverage,
    ratio,
    read_metrics_csv,
    union_size,
    write_metrics_csv,
)
from mssd.geometry import EARTH_RADIUS_M, GeoPoint, QueryCircle, haversine
from mssd.sources import Location, SamplingMode, SimulatedSource, SourceProfile

M_PER_DEG = math.pi / 180 * EARTH_RADIUS_M
C = GeoPoint(57.0, 10.0)


def off(dn: float, de: float) -> GeoPoint:
    return GeoPoint(C.lat + dn / M_PER_DEG, C.lon + de / (M_PER_DEG * math.cos(math.radians(C.lat))))


def src(locs, m_s=100, name="S", seed=0):
    prof = SourceProfile(name, m_s, 10**9, 1.0, sampling_mode=SamplingMode.FIXED_SUBSET)
    return SimulatedSource(prof, locs, rng_seed=seed)


def scatter(n, seed, span=5000, name="S"):
    rng = random.Random(seed)
    return [Location(f"l{i}", name, off(rng.uniform(-span, span), rng.uniform(-span, span))) for i in range(n)]


class TestCompare:
    def test_identical_runs(self):
        s = src(scatter(200, 1), m_s=20)
        seed = [off(0, 0), off(2000, 1000)]
        a = run_mssd_recursive(s, seed, StrategyConfig("MSSD-R"))
        b = run_mssd_recursive(s, seed, StrategyConfig("MSSD-R"))
        m = compare(a, b)
        assert (m.pct_requests_vs_reference, m.pct_locations_vs_reference) == (1.0, 1.0)

    def test_hand_recount(self):
        # a 3-request run against a 10-request reference
        locs = scatter(300, 2, span=20_000)
        s = src(locs, m_s=1000)
        seed = [off(k * 3000, 0) for k in range(10)]
        ref = run_mssd_fixed(s, seed, StrategyConfig("MSSD-F", r=2000))
        run = run_mssd_fixed(s, seed[:3], StrategyConfig("MSSD-F", r=2000))
        m = compare(run, ref, label="three")
        want = lambda pts: {l.key for l in locs if any(haversine(p, l.point) <= 2000 for p in pts)}
        assert m.strategy == "three"
        assert m.requests == 3 and m.pct_requests_vs_reference == pytest.approx(0.3)
        assert m.distinct_locations == len(want(seed[:3]))
        assert m.pct_locations_vs_reference == pytest.approx(len(want(seed[:3])) / len(want(seed)))
        assert m.coverage == pytest.approx(len(want(seed[:3])) / 300)

    def test_mismatched_sources(self):
        a = run_mssd_fixed(src(scatter(10, 1, name="A"), name="A"), [C], StrategyConfig("MSSD-F"))
        b = run_mssd_fixed(src(scatter(10, 1, name="B"), name="B"), [C], StrategyConfig("MSSD-F"))
        with pytest.raises(MismatchedUniverse):
            compare(a, b)

    def test_mismatched_universe_same_name(self):
        a = run_mssd_fixed(src(scatter(10, 1)), [C], StrategyConfig("MSSD-F"))
        b = run_mssd_fixed(src(scatter(12, 1)), [C], StrategyConfig("MSSD-F"))
        with pytest.raises(MismatchedUniverse):
            compare(a, b)

    def test_coverage_against_explicit_universe(self):
        locs = scatter(50, 3)
        run = run_mssd_fixed(src(locs), [C], StrategyConfig("MSSD-F", r=100_000))
        assert coverage(run, locs) == 1.0
        assert coverage(run, locs + [Location("extra", "S", C)]) == pytest.approx(50 / 51)
        assert math.isnan(coverage(run, []))

    def test_ratio_edges(self):
        assert ratio(0, 0) == 1.0
        assert ratio(3, 0) == math.inf
        assert ratio(3, 12) == 0.25

    @settings(max_examples=100)
    @given(st.integers(0, 10_000), st.integers(1, 10_000), st.integers(1, 50))
    def test_ratios_scale_free(self, a, b, k):
        assert ratio(a * k, b * k) == pytest.approx(ratio(a, b))

    def test_metrics_validate_coverage(self):
        with pytest.raises(ValueError):
            RunMetrics("S", "x", 1, 1, 1.5, 1, 1, 0)
        RunMetrics("S", "x", 1, 1, math.nan, 1, 1, 0)

    def test_csv_round_trip(self, tmp_path):
        rows = [RunMetrics("S", "MSSD*-C", 12, 40, 0.4, 0.1, 0.95, 3600.0),
                RunMetrics("T", "MSSD-R", 0, 0, math.nan, 1.0, math.inf, 0.0)]
        p = tmp_path / "m.csv"
        write_metrics_csv(p, rows)
        assert p.read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
        back = read_metrics_csv(p)
        assert back[0] == rows[0]
        assert math.isnan(back[1].coverage) and back[1].pct_locations_vs_reference == math.inf

    def test_csv_rejects_wrong_columns(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_metrics_csv(p)


class TestOptimalCoverage:
    def test_limits(self):
        s = src(scatter(10, 1))
        cands = [QueryCircle(off(k * 100, 0), 50) for k in range(MAX_CANDIDATES + 1)]
        with pytest.raises(TooLarge):
            optimal_coverage(s, cands, 2)
        with pytest.raises(TooLarge):
            optimal_coverage(s, cands[:4], 6)

    def test_all_candidates_is_the_union(self):
        locs = scatter(200, 4)
        s = src(locs)
        cands = [QueryCircle(off(k * 1500 - 3000, 0), 1200) for k in range(5)]
        chosen, size = optimal_coverage(s, cands, 5)
        assert chosen == set(cands) and size == union_size(s, cands)
        want = {l.key for l in locs if any(haversine(q.center, l.point) <= q.radius for q in cands)}
        assert size == len(want)

    def test_disjoint_equal_candidates(self):
        locs = []
        for k in range(5):
            locs += [Location(f"c{k}_{i}", "S", off(k * 10_000, i * 10)) for i in range(4)]
        s = src(locs)
        cands = [QueryCircle(off(k * 10_000, 0), 500) for k in range(5)]
        for n in range(6):
            assert optimal_coverage(s, cands, n)[1] == 4 * n

    def test_identical_candidates(self):
        s = src(scatter(100, 5))
        q = QueryCircle(C, 2000)
        chosen, size = optimal_coverage(s, [q, q, q], 2)
        assert size == union_size(s, [q])

    def test_nested_circles_pick_largest(self):
        s = src(scatter(300, 6))
        cands = [QueryCircle(C, r) for r in (500, 1000, 2000, 4000)]
        chosen, size = optimal_coverage(s, cands, 1)
        assert chosen == {cands[-1]}
        assert greedy_select(s, cands, 1) == [cands[-1]]

    def test_matches_brute_force_over_sets(self):
        rng = random.Random(7)
        locs = scatter(150, 7)
        s = src(locs)
        cands = [QueryCircle(off(rng.uniform(-4000, 4000), rng.uniform(-4000, 4000)), rng.uniform(300, 2500))
                 for _ in range(10)]
        covers = [{l.key for l in locs if haversine(q.center, l.point) <= q.radius} for q in cands]
        for n in range(1, 5):
            best = max(len(set().union(*(covers[i] for i in c))) for c in combinations(range(10), n))
            assert optimal_coverage(s, cands, n)[1] == best


class TestGreedy:
    def test_pick_order_and_ties(self):
        locs = [Location(f"a{i}", "S", off(0, i)) for i in range(5)] + \
               [Location(f"b{i}", "S", off(10_000, i)) for i in range(3)]
        s = src(locs)
        small, big = QueryCircle(off(10_000, 0), 100), QueryCircle(C, 100)
        twin = QueryCircle(C, 101)
        assert greedy_select(s, [small, big, twin], 2) == [big, small]
        assert greedy_select(s, [small, twin, big], 1) == [twin]

    def test_non_decreasing_in_n_and_below_optimum(self):
        rng = random.Random(8)
        s = src(scatter(250, 8))
        cands = [QueryCircle(off(rng.uniform(-4000, 4000), rng.uniform(-4000, 4000)), rng.uniform(300, 2500))
                 for _ in range(12)]
        prev = 0
        for n in range(0, 6):
            g = union_size(s, greedy_select(s, cands, n))
            assert g >= prev
            assert g <= optimal_coverage(s, cands, n)[1]
            # (1 - 1/e) guarantee for max coverage
            assert g >= (1 - 1 / math.e) * optimal_coverage(s, cands, n)[1] - 1e-9
            prev = g

    def test_negative_n(self):
        with pytest.raises(ValueError):
            greedy_select(src([]), [], -1)
        with pytest.raises(ValueError):
            optimal_coverage(src([]), [], -1)


def test_run_strategy_metrics_end_to_end():
    s = src(scatter(400, 9), m_s=25)
    seed = [off(0, 0), off(3000, -2000), off(-2500, 2500)]
    ref = run_strategy(s, StrategyConfig("MSSD-R"), seed)
    star = run_strategy(s, StrategyConfig("MSSD*-C", m=1), seed)
    m = compare(star, ref)
    assert 0 <= m.coverage <= 1
    assert m.virtual_elapsed >= 0
