"""Locations, source profiles and the offline simulated location API.

A simulated source answers ``(point, radius)`` queries against a fixed universe
of locations. When a circle holds at most ``max_result_size`` locations all of
them are returned; otherwise a sample of exactly that size is drawn according
to the profile's sampling mode.

Universe file grammar (UTF-8, one location per line, TAB separated)::

    <id> TAB <lat> TAB <lon> [TAB key=value]...
    <id> TAB polygon TAB <lat>,<lon>;<lat>,<lon>;<lat>,<lon>[;...] [TAB key=value]...

Blank lines and lines starting with ``#`` are skipped. ``%``, TAB, CR, LF and
(in keys) ``=`` are percent-encoded.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping
from urllib.parse import unquote

import numpy as np
from scipy.spatial import cKDTree

from .budget import BudgetLedger
from .geometry import (
    R_MIN,
    GeoPoint,
    GeoPolygon,
    GeoRegion,
    chord_for,
    distances_m,
    polygon_centroid,
    unit_vectors,
    within_mask,
)


class SamplingMode(enum.Enum):
    UNIFORM_RANDOM = "uniform_random"
    NEAREST_FIRST = "nearest_first"
    FIXED_SUBSET = "fixed_subset"


@dataclass(frozen=True, eq=False)
class Location:
    """A uniquely identified, geo-referenced entity of one source.

    Identity (equality and hashing) is ``(source_name, id)``. ``supplemental``
    marks a nearest-entity result returned for an empty query circle.
    """

    id: str
    source_name: str
    region: GeoRegion
    attributes: Mapping[str, str] = field(default_factory=dict)
    supplemental: bool = False
    point: GeoPoint = field(init=False, repr=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("location id must be non-empty")
        if isinstance(self.region, GeoPoint):
            pt = self.region
        elif isinstance(self.region, GeoPolygon):
            pt = polygon_centroid(self.region)
        else:
            raise TypeError(f"unsupported region {type(self.region).__name__}")
        object.__setattr__(self, "point", pt)

    @property
    def key(self) -> tuple[str, str]:
        return (self.source_name, self.id)

    def __eq__(self, other):
        if not isinstance(other, Location):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)


def point_of(l: Location) -> GeoPoint:
    """Canonical point: the point itself, or the vertex-mean of a polygon."""
    return l.point


@dataclass(frozen=True)
class SourceProfile:
    name: str
    max_result_size: int
    bandwidth_limit: int
    bandwidth_window: float  # seconds
    supplemental_results: bool = False
    sampling_mode: SamplingMode = SamplingMode.NEAREST_FIRST

    def __post_init__(self):
        if self.max_result_size < 1:
            raise ValueError("max_result_size must be >= 1")
        if self.bandwidth_limit < 1:
            raise ValueError("bandwidth_limit must be >= 1")
        if self.bandwidth_window <= 0:
            raise ValueError("bandwidth_window must be positive")

    def new_ledger(self, **kw) -> BudgetLedger:
        return BudgetLedger(self.name, self.bandwidth_limit, self.bandwidth_window, **kw)


MINUTE = 60.0
HOUR = 3600.0
DAY = 86400.0


def preset_profiles() -> list[SourceProfile]:
    """Published API limits of six location services (Google Places at its former 1,000/day quota)."""
    return [
        SourceProfile("Krak", 100, 10_000, 30 * DAY, supplemental_results=True),
        SourceProfile("Yelp", 50, 5_000, DAY, supplemental_results=True),
        SourceProfile("GooglePlaces", 20, 1_000, DAY, supplemental_results=True),
        SourceProfile("Foursquare", 50, 550, HOUR),
        SourceProfile("Twitter", 100, 180, 15 * MINUTE),
        SourceProfile("Flickr", 500, 3_600, HOUR),
    ]


def preset(name: str) -> SourceProfile:
    for p in preset_profiles():
        if p.name.lower() == name.lower():
            return p
    raise KeyError(f"no preset profile named {name!r}")


def _stable_rank(seed: int, ident: str) -> int:
    h = hashlib.blake2b(f"{seed}\x00{ident}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


class SimulatedSource:
    """Offline stand-in for a location API over a known universe ``L(S)``.

    Immutable after construction. ``UNIFORM_RANDOM`` sampling is seeded from
    ``(rng_seed, call_index)`` so a replayed call sequence reproduces exactly;
    ``FIXED_SUBSET`` keeps the locations with the smallest seeded id-hash, so a
    region always yields the same sample.
    """

    def __init__(self, profile: SourceProfile, universe: Iterable[Location], rng_seed: int = 0):
        self.profile = profile
        self.rng_seed = int(rng_seed)
        locs = tuple(universe)
        seen = set()
        for l in locs:
            if l.source_name != profile.name:
                raise ValueError(f"location {l.id!r} belongs to {l.source_name!r}, not {profile.name!r}")
            if l.id in seen:
                raise ValueError(f"duplicate location id {l.id!r}")
            seen.add(l.id)
        self.universe = locs
        self._lat = np.array([l.point.lat for l in locs], dtype=float)
        self._lon = np.array([l.point.lon for l in locs], dtype=float)
        self._tree = cKDTree(unit_vectors(self._lat, self._lon)) if locs else None
        self._rank = np.array([_stable_rank(self.rng_seed, l.id) for l in locs], dtype=np.uint64)

    @property
    def name(self) -> str:
        return self.profile.name

    def __len__(self):
        return len(self.universe)

    def in_circle(self, p: GeoPoint, r: float) -> np.ndarray:
        """Sorted universe indices inside the closed circle (no sampling)."""
        if self._tree is None:
            return np.empty(0, dtype=np.intp)
        cand = np.array(
            self._tree.query_ball_point(unit_vectors([p.lat], [p.lon])[0], chord_for(r)),
            dtype=np.intp,
        )
        if cand.size == 0:
            return cand
        cand.sort()
        return cand[within_mask(p, self._lat[cand], self._lon[cand], r)]

    def respond(self, p: GeoPoint, r: float, call_index: int = 0,
                deterministic: bool = False) -> list[Location]:
        """The response to one API call, without any accounting.

        ``deterministic`` swaps uniform sampling for the fixed-subset rule, for
        hypothetical queries that must not depend on call order.
        """
        if r < R_MIN:
            raise ValueError(f"radius {r} below the {R_MIN} m floor")
        idx = self.in_circle(p, r)
        m = self.profile.max_result_size
        if idx.size == 0:
            if self.profile.supplemental_results and self.universe:
                d = distances_m(p, self._lat, self._lon)
                return [replace(self.universe[int(np.argmin(d))], supplemental=True)]
            return []
        if idx.size > m:
            mode = self.profile.sampling_mode
            if deterministic and mode is SamplingMode.UNIFORM_RANDOM:
                mode = SamplingMode.FIXED_SUBSET
            if mode is SamplingMode.NEAREST_FIRST:
                d = distances_m(p, self._lat[idx], self._lon[idx])
                order = np.lexsort((idx, d))
                idx = np.sort(idx[order[:m]])
            elif mode is SamplingMode.FIXED_SUBSET:
                order = np.lexsort((idx, self._rank[idx]))
                idx = np.sort(idx[order[:m]])
            else:
                rng = np.random.default_rng([self.rng_seed & (2**64 - 1), int(call_index)])
                idx = np.sort(rng.choice(idx, size=m, replace=False))
        return [self.universe[i] for i in idx]


def api_query(s: SimulatedSource, p: GeoPoint, r: float, ledger: BudgetLedger,
              seen: set | None = None) -> list[Location]:
    """One accounted API call: the response plus exactly one ledger entry.

    ``seen`` holds already-retrieved location keys and only feeds the entry's
    new-location count; it is not modified.
    """
    res = s.respond(p, r, call_index=ledger.request_count)
    seen = seen if seen is not None else ()
    new = sum(1 for k in {l.key for l in res} if k not in seen)
    ledger.record_request(p, r, len(res), new)
    return res


# -- universe files -----------------------------------------------------------

def _esc(s: str, key: bool = False) -> str:
    s = s.replace("%", "%25").replace("\t", "%09").replace("\n", "%0A").replace("\r", "%0D")
    return s.replace("=", "%3D") if key else s


def _unesc(s: str) -> str:
    return unquote(s)


def format_location(l: Location) -> str:
    parts = [_esc(l.id)]
    if isinstance(l.region, GeoPoint):
        parts += [repr(l.region.lat), repr(l.region.lon)]
    else:
        parts += ["polygon", ";".join(f"{v.lat!r},{v.lon!r}" for v in l.region.vertices)]
    parts += [f"{_esc(k, key=True)}={_esc(v)}" for k, v in sorted(l.attributes.items())]
    return "\t".join(parts)


def parse_location(line: str, source_name: str) -> Location:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 3:
        raise ValueError(f"expected at least 3 TAB-separated fields: {line!r}")
    ident = _unesc(fields[0])
    if fields[1] == "polygon":
        verts = []
        for pair in fields[2].split(";"):
            lat, lon = pair.split(",")
            verts.append(GeoPoint(float(lat), float(lon)))
        region: GeoRegion = GeoPolygon(tuple(verts))
    else:
        region = GeoPoint(float(fields[1]), float(fields[2]))
    attrs = {}
    for kv in fields[3:]:
        if "=" not in kv:
            raise ValueError(f"attribute field without '=': {kv!r}")
        k, v = kv.split("=", 1)
        attrs[_unesc(k)] = _unesc(v)
    return Location(ident, source_name, region, attrs)


def read_universe(path, source_name: str) -> list[Location]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                out.append(parse_location(line, source_name))
            except ValueError as e:
                raise ValueError(f"{path}:{n}: {e}") from None
    return out


def write_universe(path, locations: Iterable[Location]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for l in locations:
            fh.write(format_location(l) + "\n")


# -- profile config -------------------------------------------------------------

_PROFILE_KEYS = {"max_result_size", "bandwidth_limit", "bandwidth_window_s",
                 "supplemental_results", "sampling_mode"}


def profile_from_dict(name: str, d: Mapping) -> SourceProfile:
    """Build a profile; unspecified fields fall back to the preset of the same name."""
    unknown = set(d) - _PROFILE_KEYS
    if unknown:
        raise ValueError(f"profile {name!r}: unknown keys {sorted(unknown)}")
    try:
        base = preset(name)
    except KeyError:
        base = None
    def pick(key, attr, default=None):
        if key in d:
            return d[key]
        if base is not None:
            return getattr(base, attr)
        if default is None:
            raise ValueError(f"profile {name!r}: missing {key!r}")
        return default
    mode = pick("sampling_mode", "sampling_mode", SamplingMode.NEAREST_FIRST)
    return SourceProfile(
        name=name,
        max_result_size=int(pick("max_result_size", "max_result_size")),
        bandwidth_limit=int(pick("bandwidth_limit", "bandwidth_limit")),
        bandwidth_window=float(pick("bandwidth_window_s", "bandwidth_window")),
        supplemental_results=bool(pick("supplemental_results", "supplemental_results", False)),
        sampling_mode=SamplingMode(mode) if not isinstance(mode, SamplingMode) else mode,
    )


def profile_to_dict(p: SourceProfile) -> dict:
    return {
        "max_result_size": p.max_result_size,
        "bandwidth_limit": p.bandwidth_limit,
        "bandwidth_window_s": p.bandwidth_window,
        "supplemental_results": p.supplemental_results,
        "sampling_mode": p.sampling_mode.value,
    }


def load_profiles(path) -> dict[str, SourceProfile]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {name: profile_from_dict(name, d) for name, d in data.items()}
