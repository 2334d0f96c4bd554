"""Command-line experiment runner.

Subcommands::

    mssd run --config run.json [--seed N] [--out DIR] [--strategy NAME]... [--sweep]
    mssd gen-truth --input FILE... --ratio 0.2 --seed N --out universe.tsv
    mssd compare --run DIR/SRC/LABEL --reference DIR/SRC/LABEL [--universe FILE]
    mssd presets [--out profiles.json]

Run config (JSON)::

    {
      "rng_seed": 7,
      "output_dir": "out",
      "seed_source": "Krak",
      "sources": [{"profile": "Krak", "universe": "krak.tsv"},
                  {"profile": "Yelp", "universe": "yelp.tsv"}],
      "profiles": {"Yelp": {"sampling_mode": "uniform_random"}},
      "initial_queries": [{"lat": 57.05, "lon": 9.92, "radius_m": 2000}],
      "strategies": [{"strategy": "MSSD-R"}, {"strategy": "MSSD*-C", "alpha": 2}],
      "reference": "MSSD-R",
      "sweep": {"alpha": [2, 4, 8, 16], "r_km": [1, 4, 16]}
    }

Relative file paths are resolved against the config file's directory. The
seed source's universe supplies the seed points; strategies run against every
other source (or against the seed source itself when it is the only one).
``profiles`` overrides preset fields per source; unknown profile names must
give every field. A strategy entry takes any :class:`StrategyConfig` field plus
an optional ``label``. ``sweep`` (used with ``--sweep``) reruns each recursive
strategy over the alpha by radius grid.

Output tree::

    metrics.csv                      one row per (source, strategy)
    sweep.csv                        with --sweep: one row per (source, strategy, alpha, r)
    plots/<source>.csv               strategy, request, cumulative_locations
    <source>/<label>.locations.csv   id, kind, lat, lon, vertices, supplemental
    <source>/<label>.trace.csv       the request ledger
    <source>/<label>.summary.json
    manifest.json

``MSSD_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .algorithms import RECURSIVE, ExtractionRun, Strategy, StrategyConfig, run_si, run_strategy
from .eval import METRICS_COLUMNS, MismatchedUniverse, RunMetrics, compare, coverage, ratio, write_metrics_csv
from .geometry import GeoPoint, GeoPolygon, QueryCircle
from .sources import (
    Location,
    SimulatedSource,
    SourceProfile,
    preset_profiles,
    profile_from_dict,
    profile_to_dict,
    read_universe,
    write_universe,
)
from .synth import learn_distribution, mix_universe

log = logging.getLogger("mssd")

DEFAULT_ALPHAS = (2, 4, 6, 8, 10, 12, 14, 16)
DEFAULT_RADII_KM = (1, 4, 8, 12, 16)
MANIFEST = "manifest.json"
LOCATION_COLUMNS = ("id", "kind", "lat", "lon", "vertices", "supplemental")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SourceEntry:
    profile: SourceProfile
    universe: Path


@dataclass(frozen=True)
class RunConfig:
    sources: tuple[SourceEntry, ...]
    seed_source: str
    strategies: tuple[tuple[str, StrategyConfig], ...]  # (label, config)
    rng_seed: int = 0
    output_dir: Path = Path("out")
    initial_queries: tuple[QueryCircle, ...] = ()
    reference: str = "MSSD-R"
    sweep_alphas: tuple[float, ...] = DEFAULT_ALPHAS
    sweep_radii_m: tuple[float, ...] = tuple(k * 1000.0 for k in DEFAULT_RADII_KM)
    sweep: bool = False

    def __post_init__(self):
        names = [s.profile.name for s in self.sources]
        if not names:
            raise ConfigError("no sources configured")
        if len(set(names)) != len(names):
            raise ConfigError("duplicate source names")
        if self.seed_source not in names:
            raise ConfigError(f"seed_source {self.seed_source!r} is not among the sources")
        if not self.strategies:
            raise ConfigError("no strategies configured")
        labels = [l for l, _ in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate strategy labels in {labels}")
        if any(a <= 1 for a in self.sweep_alphas) or any(r <= 0 for r in self.sweep_radii_m):
            raise ConfigError("sweep alphas must exceed 1 and radii must be positive")
        needs_initial = {Strategy.SI, Strategy.SELF_SEED}
        if not self.initial_queries and any(c.strategy in needs_initial for _, c in self.strategies):
            raise ConfigError("SI and Self-seed need initial_queries")

    @property
    def targets(self) -> list[SourceEntry]:
        others = [s for s in self.sources if s.profile.name != self.seed_source]
        return others or list(self.sources)

    def seed_entry(self) -> SourceEntry:
        return next(s for s in self.sources if s.profile.name == self.seed_source)


_STRATEGY_FIELDS = {f.name for f in fields(StrategyConfig)}


def strategy_from_dict(d: dict) -> tuple[str, StrategyConfig]:
    d = dict(d)
    label = d.pop("label", None)
    unknown = set(d) - _STRATEGY_FIELDS
    if unknown:
        raise ConfigError(f"unknown strategy keys {sorted(unknown)}")
    if "strategy" not in d:
        raise ConfigError("strategy entry without 'strategy'")
    try:
        cfg = StrategyConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return label or cfg.label, cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(data, path.parent, overrides)


def config_from_dict(data: dict, base: Path = Path("."), overrides: dict | None = None) -> RunConfig:
    data = {**data, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    known = {"sources", "seed_source", "strategies", "rng_seed", "output_dir", "profiles",
             "initial_queries", "reference", "sweep", "sweep_enabled"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    overrides_by_name = data.get("profiles", {})
    sources = []
    try:
        for s in data.get("sources", []):
            name = s["profile"]
            prof = profile_from_dict(name, overrides_by_name.get(name, {}))
            sources.append(SourceEntry(prof, base / s["universe"]))
        strategies = tuple(strategy_from_dict(d) for d in data.get("strategies", []))
        initial = tuple(QueryCircle(GeoPoint(q["lat"], q["lon"]), float(q["radius_m"]))
                        for q in data.get("initial_queries", []))
        sweep = data.get("sweep") or {}
        alphas = tuple(float(a) for a in sweep.get("alpha", DEFAULT_ALPHAS))
        radii = tuple(float(r) * 1000.0 for r in sweep.get("r_km", DEFAULT_RADII_KM))
        out = Path(data.get("output_dir", "out"))
        return RunConfig(
            sources=tuple(sources),
            seed_source=data.get("seed_source", ""),
            strategies=strategies,
            rng_seed=int(data.get("rng_seed", 0)),
            output_dir=out if out.is_absolute() else base / out,
            initial_queries=initial,
            reference=data.get("reference", "MSSD-R"),
            sweep_alphas=alphas,
            sweep_radii_m=radii,
            sweep=bool(data.get("sweep_enabled", False)),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config: {e!r}") from None


def derived_seed(rng_seed: int, name: str) -> int:
    h = hashlib.blake2b(f"{rng_seed}\x00{name}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


# -- execution --------------------------------------------------------------------

@dataclass
class SourceResult:
    name: str
    source: SimulatedSource
    runs: list[tuple[str, ExtractionRun]] = field(default_factory=list)
    metrics: list[RunMetrics] = field(default_factory=list)
    sweep_rows: list[tuple[float, float, RunMetrics]] = field(default_factory=list)


def _reference_config(cfg: RunConfig) -> StrategyConfig:
    for label, c in cfg.strategies:
        if label == cfg.reference:
            return c
    return StrategyConfig(Strategy.parse(cfg.reference))


def _execute_source(entry: SourceEntry, seed: list[GeoPoint], cfg: RunConfig) -> SourceResult:
    name = entry.profile.name
    universe = read_universe(entry.universe, name)
    source = SimulatedSource(entry.profile, universe, rng_seed=derived_seed(cfg.rng_seed, name))
    out = SourceResult(name, source)
    initial: list[Location] = []
    if cfg.initial_queries:
        initial = list(run_si(source, cfg.initial_queries).retrieved.values())
    ref_label = cfg.reference
    runs = {}
    for label, sc in cfg.strategies:
        log.info("%s: running %s", name, label)
        runs[label] = run_strategy(source, sc, seed, cfg.initial_queries, initial)
        out.runs.append((label, runs[label]))
    reference = runs.get(ref_label)
    if reference is None:
        reference = run_strategy(source, _reference_config(cfg), seed, cfg.initial_queries, initial)
    for label, run in out.runs:
        out.metrics.append(compare(run, reference, label=label))
    if cfg.sweep:
        ref_sc = _reference_config(cfg)
        swept = [(l, c) for l, c in cfg.strategies if c.strategy in RECURSIVE]
        for a in cfg.sweep_alphas:
            for r in cfg.sweep_radii_m:
                ref = run_strategy(source, replace(ref_sc, alpha=a, r=r), seed, (), initial)
                for label, sc in swept:
                    run = run_strategy(source, replace(sc, alpha=a, r=r), seed, (), initial)
                    out.sweep_rows.append((a, r, compare(run, ref, label=label)))
    return out


def _slug(label: str) -> str:
    s = label.replace("*", "star")
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in s)


def _num(v: float) -> str:
    return repr(float(v))


def write_locations_csv(path, locations: Sequence[Location]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOCATION_COLUMNS)
        for l in sorted(locations, key=lambda l: l.id):
            if isinstance(l.region, GeoPolygon):
                verts = ";".join(f"{v.lat!r},{v.lon!r}" for v in l.region.vertices)
                w.writerow([l.id, "polygon", _num(l.point.lat), _num(l.point.lon), verts, int(l.supplemental)])
            else:
                w.writerow([l.id, "point", _num(l.point.lat), _num(l.point.lon), "", int(l.supplemental)])


def read_locations_csv(path, source_name: str) -> list[Location]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != LOCATION_COLUMNS:
            raise ValueError(f"{path}: not a locations file")
        for row in rd:
            if row["kind"] == "polygon":
                verts = tuple(GeoPoint(float(a), float(b))
                              for a, b in (pair.split(",") for pair in row["vertices"].split(";")))
                region = GeoPolygon(verts)
            else:
                region = GeoPoint(float(row["lat"]), float(row["lon"]))
            out.append(Location(row["id"], source_name, region))
    return out


def _summary(label: str, run: ExtractionRun, source: SimulatedSource) -> dict:
    cov = coverage(run, source)
    return {
        "source_name": run.source_name,
        "strategy": run.config.label,
        "label": label,
        "config": {k: (v.value if isinstance(v, Strategy) else v)
                   for k, v in ((f.name, getattr(run.config, f.name)) for f in fields(run.config))},
        "requests": run.requests,
        "distinct_locations": len(run),
        "initial_locations": len(run.initial_keys),
        "floor_hits": run.floor_hits,
        "truncated": run.truncated,
        "virtual_elapsed": run.ledger.totals().elapsed,
        "coverage": None if math.isnan(cov) else cov,
    }


def _write_source(root: Path, res: SourceResult) -> None:
    d = root / _slug(res.name)
    d.mkdir()
    for label, run in res.runs:
        stem = d / _slug(label)
        write_locations_csv(f"{stem}.locations.csv", list(run.retrieved.values()))
        run.ledger.write_trace(f"{stem}.trace.csv")
        Path(f"{stem}.summary.json").write_text(
            json.dumps(_summary(label, run, res.source), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(root / "plots" / f"{_slug(res.name)}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "request", "cumulative_locations"])
        for label, run in res.runs:
            for i, total in enumerate(run.cumulative(), 1):
                w.writerow([label, i, total])


def _write_sweep(path: Path, results: Sequence[SourceResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "radius_m", *METRICS_COLUMNS])
        for res in results:
            for a, r, m in res.sweep_rows:
                w.writerow([_num(a), _num(r), *(_num(v) if isinstance(v, float) else v
                                                for v in (getattr(m, c) for c in METRICS_COLUMNS))])


def run_experiment(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    if out.exists() and any(out.iterdir()) and not (out / MANIFEST).exists():
        raise ConfigError(f"{out} is not empty and was not written by mssd; refusing to overwrite")
    seed_universe = read_universe(cfg.seed_entry().universe, cfg.seed_source)
    if not seed_universe:
        raise ConfigError(f"seed source {cfg.seed_source!r} has an empty universe")
    seed = [l.point for l in seed_universe]
    targets = cfg.targets
    with ThreadPoolExecutor(max_workers=len(targets)) as pool:
        futures = [pool.submit(_execute_source, t, seed, cfg) for t in targets]
        results = [f.result() for f in futures]
    results.sort(key=lambda r: r.name)

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        (tmp / "plots").mkdir()
        for res in results:
            _write_source(tmp, res)
        write_metrics_csv(tmp / "metrics.csv", [m for res in results for m in res.metrics])
        if cfg.sweep:
            _write_sweep(tmp / "sweep.csv", results)
        manifest = {
            "rng_seed": cfg.rng_seed,
            "seed_source": cfg.seed_source,
            "sources": [r.name for r in results],
            "strategies": [l for l, _ in cfg.strategies],
            "sweep": cfg.sweep,
        }
        (tmp / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


# -- other subcommands ------------------------------------------------------------

def _read_any(path: Path, name: str) -> list[Location]:
    if path.suffix == ".csv":
        return read_locations_csv(path, name)
    return read_universe(path, name)


def gen_ground_truth(inputs: Sequence[Path], ratio: float, rng_seed: int, out: Path,
                     name: str = "ground_truth", cell_size: float = 1000.0,
                     distribution_out: Path | None = None) -> int:
    """Union the inputs (first occurrence of an id wins) and top up with synthetic locations."""
    real: dict[str, Location] = {}
    for p in inputs:
        for l in _read_any(Path(p), name):
            real.setdefault(l.id, l)
    if not real:
        raise ConfigError("no input locations")
    locs = list(real.values())
    dist = learn_distribution([l.point for l in locs], cell_size)
    mixed = mix_universe(locs, dist, ratio, rng_seed)
    tmp = Path(f"{out}.part")
    try:
        write_universe(tmp, mixed)
        if distribution_out is not None:
            dist.write_csv(distribution_out)
        tmp.replace(out)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    log.info("wrote %d locations (%d synthetic) to %s", len(mixed), len(mixed) - len(locs), out)
    return 0


def _load_saved(stem: Path) -> tuple[dict, set[str]]:
    summary = json.loads(Path(f"{stem}.summary.json").read_text(encoding="utf-8"))
    with open(f"{stem}.locations.csv", newline="", encoding="utf-8") as fh:
        ids = {row["id"] for row in csv.DictReader(fh)}
    return summary, ids


def compare_saved(run_stem: Path, ref_stem: Path, universe: Path | None = None) -> RunMetrics:
    """Metrics of a saved run relative to a saved reference run of the same source."""
    run, run_ids = _load_saved(run_stem)
    ref, ref_ids = _load_saved(ref_stem)
    if run["source_name"] != ref["source_name"]:
        raise MismatchedUniverse(f"{run['source_name']!r} vs {ref['source_name']!r}")
    cov = math.nan
    if universe is not None:
        truth = {l.id for l in read_universe(universe, run["source_name"])}
        cov = len(truth & run_ids) / len(truth) if truth else math.nan
    elif run.get("coverage") is not None:
        cov = run["coverage"]
    return RunMetrics(run["source_name"], run["label"], run["requests"], len(run_ids), cov,
                      ratio(run["requests"], ref["requests"]), ratio(len(run_ids), len(ref_ids)),
                      float(run["virtual_elapsed"]))


def write_presets(out: Path | None) -> int:
    data = {p.name: profile_to_dict(p) for p in preset_profiles()}
    text = json.dumps(data, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mssd", description="Seed-driven location extraction experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run strategy suites against simulated sources")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int, help="override rng_seed")
    r.add_argument("--out", type=Path, help="override output_dir")
    r.add_argument("--strategy", action="append", help="only run strategies with this label (repeatable)")
    r.add_argument("--sweep", action="store_true", help="also run the alpha by radius grid")

    g = sub.add_parser("gen-truth", help="build a mixed real/synthetic ground-truth universe")
    g.add_argument("--input", action="append", required=True, type=Path)
    g.add_argument("--ratio", type=float, default=0.2, help="synthetic share of the output")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--name", default="ground_truth")
    g.add_argument("--cell-size", type=float, default=1000.0)
    g.add_argument("--distribution", type=Path, help="also write the learned cell distribution")

    c = sub.add_parser("compare", help="compare two saved runs")
    c.add_argument("--run", required=True, type=Path, help="path prefix, e.g. out/Yelp/MSSDstar-C")
    c.add_argument("--reference", required=True, type=Path)
    c.add_argument("--universe", type=Path)
    c.add_argument("--out", type=Path, help="write a metrics CSV instead of printing")

    p = sub.add_parser("presets", help="print the preset source profiles as JSON")
    p.add_argument("--out", type=Path)
    return ap


def _configure_logging() -> None:
    level = os.environ.get("MSSD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, {"rng_seed": args.seed,
                                            "output_dir": str(args.out.resolve()) if args.out else None,
                                            "sweep_enabled": True if args.sweep else None})
            if args.strategy:
                keep = tuple((l, c) for l, c in cfg.strategies if l in args.strategy or c.label in args.strategy)
                if not keep:
                    raise ConfigError(f"no configured strategy matches {args.strategy}")
                cfg = replace(cfg, strategies=keep)
            return run_experiment(cfg)
        if args.command == "gen-truth":
            return gen_ground_truth(args.input, args.ratio, args.seed, args.out, args.name,
                                    args.cell_size, args.distribution)
        if args.command == "compare":
            m = compare_saved(args.run, args.reference, args.universe)
            if args.out:
                write_metrics_csv(args.out, [m])
            else:
                w = csv.writer(sys.stdout, lineterminator="\n")
                w.writerow(METRICS_COLUMNS)
                w.writerow([getattr(m, c) for c in METRICS_COLUMNS])
            return 0
        return write_presets(args.out)
    except (ConfigError, OSError, ValueError, KeyError) as e:
        print(f"mssd: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
