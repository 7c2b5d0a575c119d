"""Command-line front end: single runs, mode/rate sweeps and reproduction profiles.

Examples::

    python -m ftnoc run --profile paper-transpose-fto-33 --out-dir out/fto33
    python -m ftnoc run --traffic uniform --mode baseline --hard-rate 0.05 --seeds 1
    python -m ftnoc sweep --traffic transpose --seeds 3 --out-dir out/sweep
    python -m ftnoc profiles
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .flit import ConfigError
from .metrics import MetricsRecord, RunSummary, combine, packets_csv, summarize_network
from .network import SITE_KINDS, FaultPlan, MeshConfig, Mode, plan_hard_faults, simulate
from .traffic import TASKGRAPHS, TrafficKind, TrafficSpec, default_dims, generate

log = logging.getLogger("ftnoc")

PATTERNS = ("transpose", "uniform", "hotspot", "matrix", *TASKGRAPHS)
PROFILE_RATES = (0, 5, 10, 20, 33)
SWEEP_RATES = (0.0, 0.10, 0.20, 0.33)
SWEEP_MODES = (Mode.BASELINE, Mode.FTO, Mode.SER, Mode.FETO)


@dataclass
class Settings:
    """Everything one experiment needs, before seeds are expanded."""

    traffic: str = "uniform"
    dims: Optional[tuple] = None
    mode: Mode = Mode.FETO
    hard_rate: float = 0.0
    soft_rate: float = 0.0
    seeds: tuple = (0,)
    ct_mode: str = "speculative"
    bypass_count: int = 2
    buffer_depth: int = 4
    deadlock_threshold: int = 16
    absorb_threshold: int = 64
    fault_sites: tuple = SITE_KINDS
    strict: bool = True
    packets_per_node: Optional[int] = None
    hotspot_fraction: float = 0.10
    max_cycles: int = 1_000_000
    replay: Optional[str] = None
    out_dir: Optional[str] = None

    def traffic_spec(self) -> TrafficSpec:
        if self.traffic in TASKGRAPHS:
            return TrafficSpec(TrafficKind.TASKGRAPH, name=self.traffic)
        try:
            kind = TrafficKind(self.traffic)
        except ValueError:
            raise ConfigError(f"traffic: unknown pattern {self.traffic!r}; choose from {', '.join(PATTERNS)}")
        return TrafficSpec(kind, self.packets_per_node, hotspot_fraction=self.hotspot_fraction)

    def mesh(self, seed: int) -> MeshConfig:
        dims = self.dims or default_dims(self.traffic_spec())
        return MeshConfig(
            dims=tuple(dims), mode=self.mode, buffer_depth=self.buffer_depth,
            bypass_count=self.bypass_count, deadlock_threshold=self.deadlock_threshold,
            absorb_threshold=self.absorb_threshold, ct_mode=self.ct_mode,
            hard_rate=self.hard_rate, soft_rate=self.soft_rate, fault_sites=tuple(self.fault_sites),
            strict=self.strict, seed=seed, max_cycles=self.max_cycles,
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["dims"] = list(self.dims or default_dims(self.traffic_spec()))
        d.pop("out_dir")
        return d


# --- profiles -------------------------------------------------------------------

def profile(name: str) -> dict:
    """Settings for ``paper-{pattern}-{mode}-{rate}``.

    Rates map onto modes the way each configuration is exercised:
    Baseline and FTO get hard faults, SER soft errors, FETO both.  FTO
    places faults in buffers and crossbars only; SER/FETO use conservative
    crossbar traversal.  Ten seeds.
    """
    parts = name.split("-")
    if len(parts) != 4 or parts[0] != "paper":
        raise ConfigError(f"profile: expected paper-<pattern>-<mode>-<rate>, got {name!r}")
    _, pattern, mode, rate = parts
    if pattern not in PATTERNS:
        raise ConfigError(f"profile: unknown pattern {pattern!r}")
    try:
        m = Mode(mode)
        r = int(rate) / 100
    except ValueError:
        raise ConfigError(f"profile: bad mode or rate in {name!r}")
    out = {"traffic": pattern, "seeds": tuple(range(10))}
    out.update(mode_overrides(m, r))
    return out


def mode_overrides(mode: Mode, rate: float) -> dict:
    """How a single fault rate is applied to each mode."""
    out = {"mode": mode, "hard_rate": 0.0, "soft_rate": 0.0}
    if mode in (Mode.BASELINE, Mode.FTO):
        out["hard_rate"] = rate
    elif mode is Mode.SER:
        out["soft_rate"] = rate
    else:
        out["hard_rate"] = out["soft_rate"] = rate
    if mode is Mode.FTO:
        out["fault_sites"] = ("slot", "link")
    if mode.ecc:
        out["ct_mode"] = "conservative"
    return out


def profile_names() -> list[str]:
    return [f"paper-{p}-{m.value}-{r}" for p in PATTERNS for m in SWEEP_MODES for r in PROFILE_RATES]


# --- parsing --------------------------------------------------------------------

def parse_seeds(text: str) -> tuple:
    text = str(text).strip()
    if "," in text:
        return tuple(int(v) for v in text.split(",") if v.strip())
    n = int(text)
    if n < 1:
        raise ConfigError("seeds: need at least one seed")
    return tuple(range(n))


def parse_dims(text: str) -> tuple:
    vals = tuple(int(v) for v in str(text).lower().replace("x", " ").replace(",", " ").split())
    if len(vals) != 3:
        raise ConfigError(f"dims: expected ZxYxX, got {text!r}")
    return vals


_CONVERT = {
    "traffic": str, "dims": parse_dims, "mode": lambda v: Mode(v.lower()), "hard_rate": float,
    "soft_rate": float, "seeds": parse_seeds, "ct_mode": str, "bypass_count": int,
    "buffer_depth": int, "deadlock_threshold": int, "absorb_threshold": int,
    "fault_sites": lambda v: tuple(s.strip() for s in v.split(",") if s.strip()),
    "strict": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "packets_per_node": int, "hotspot_fraction": float, "max_cycles": int,
    "replay": str, "out_dir": str,
}


def convert(key: str, value):
    key = key.replace("-", "_")
    if key not in _CONVERT:
        raise ConfigError(f"config key {key!r} is not recognised")
    try:
        return key, _CONVERT[key](value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def load_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` comments allowed."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string("[run]\n" + Path(path).read_text())
    return dict(convert(k, v) for k, v in parser["run"].items())


def build_settings(args: argparse.Namespace) -> Settings:
    values: dict = {}
    if args.profile:
        values.update(profile(args.profile))
    if args.config:
        values.update(load_config(args.config))
    for key in ("traffic", "dims", "mode", "hard_rate", "soft_rate", "seeds", "ct_mode",
                "bypass_count", "replay", "out_dir", "packets_per_node", "fault_sites", "max_cycles"):
        v = getattr(args, key, None)
        if v is not None:
            values.update([convert(key, v)])
    s = Settings(**values)
    s.traffic_spec()
    s.mesh(s.seeds[0])  # validates
    return s


# --- running --------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    summary: RunSummary
    records: list
    events: list
    plan: Optional[FaultPlan]


def run_seed(settings: Settings, seed: int, reference_latency=None) -> SeedResult:
    cfg = settings.mesh(seed)
    spec = settings.traffic_spec()
    schedule = generate(spec, cfg.dims, seed)
    plan = None
    if settings.replay:
        plan = FaultPlan.from_json(Path(settings.replay).read_text())
    elif cfg.hard_rate > 0:
        plan = plan_hard_faults(cfg)
    net = simulate(cfg, schedule, plan)
    echo = settings.echo() | {"seed": seed}
    if spec.kind is TrafficKind.TASKGRAPH:
        echo["mapping"] = "shipped convention (row-major task placement)"
    if spec.kind is TrafficKind.TRANSPOSE:
        echo["transpose_rule"] = "(x,y,z)->(z,y,x)"
    summary = summarize_network(net, reference_latency, echo)
    return SeedResult(seed, summary, [MetricsRecord.from_packet(p) for p in net.packets], net.event_lines(), plan)


def reference_latency(settings: Settings, seed: int = 0) -> Optional[float]:
    """Zero-fault Baseline latency used by the collapse predicate."""
    ref = replace(settings, mode=Mode.BASELINE, hard_rate=0.0, soft_rate=0.0, replay=None, ct_mode="speculative")
    return run_seed(ref, seed).summary.avg_latency


def _run_one(args):
    settings, seed, ref = args
    return run_seed(settings, seed, ref)


def run_experiment(settings: Settings, jobs: int = 1, write: bool = True) -> dict:
    ref = None
    if settings.hard_rate > 0 or settings.soft_rate > 0:
        ref = reference_latency(settings, settings.seeds[0])
    tasks = [(settings, s, ref) for s in settings.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    out = {
        "config": settings.echo(),
        "reference_latency": ref,
        "combined": combine([r.summary for r in results]),
        "runs": [json.loads(r.summary.to_json()) for r in results],
    }
    if write and settings.out_dir:
        write_outputs(Path(settings.out_dir), settings, results, out)
    out["results"] = results
    return out


def write_outputs(root: Path, settings: Settings, results: Sequence[SeedResult], combined: dict):
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.json").write_text(json.dumps(combined, sort_keys=True, indent=1) + "\n")
    for r in results:
        d = root / f"seed{r.seed}"
        d.mkdir(exist_ok=True)
        (d / "summary.json").write_text(r.summary.to_json() + "\n")
        (d / "packets.csv").write_text(packets_csv(r.records))
        (d / "events.log").write_text("".join(line + "\n" for line in r.events))
        if r.plan is not None:
            (d / "faultplan.json").write_text(r.plan.to_json() + "\n")
    rate = max(settings.hard_rate, settings.soft_rate)
    c = combined["combined"]
    write_series(root / "series.csv", [(settings.mode.value, rate, c)])


def write_series(path: Path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "fault_rate", "latency_cycles", "latency_std", "throughput_flits_per_cycle_per_node",
                "throughput_std", "delivery_ratio", "collapsed_seeds", "seeds"])
    for mode, rate, c in rows:
        w.writerow([mode, rate, c["avg_latency"]["mean"], c["avg_latency"]["std"], c["throughput"]["mean"],
                    c["throughput"]["std"], c["delivery_ratio"]["mean"], c["collapsed"], c["seeds"]])
    path.write_text(buf.getvalue())


def sweep_settings(base: Settings, mode: Mode, rate: float) -> Settings:
    s = replace(base, out_dir=None, replay=None, fault_sites=SITE_KINDS, ct_mode="speculative")
    return replace(s, **mode_overrides(mode, rate))


def sweep(base: Settings, rates=SWEEP_RATES, modes=SWEEP_MODES, jobs: int = 1, settings_for=sweep_settings) -> list[dict]:
    """Cross product of modes and rates; deltas are relative to Baseline at rate 0."""
    rows = []
    for mode in modes:
        for rate in rates:
            s = settings_for(base, mode, rate)
            res = run_experiment(s, jobs=jobs, write=False)
            c = res["combined"]
            rows.append({"mode": mode.value, "rate": rate, "latency": c["avg_latency"]["mean"],
                         "latency_std": c["avg_latency"]["std"], "throughput": c["throughput"]["mean"],
                         "delivery": c["delivery_ratio"]["mean"], "collapsed": c["collapsed"],
                         "combined": c})
    base_row = next((r for r in rows if r["mode"] == "baseline" and r["rate"] == 0), None)
    for r in rows:
        if base_row and base_row["latency"] and r["latency"] is not None:
            r["latency_delta_pct"] = 100 * (r["latency"] / base_row["latency"] - 1)
            r["throughput_delta_pct"] = 100 * (r["throughput"] / base_row["throughput"] - 1)
        else:
            r["latency_delta_pct"] = r["throughput_delta_pct"] = None
    if base.out_dir:
        root = Path(base.out_dir)
        root.mkdir(parents=True, exist_ok=True)
        write_series(root / "series.csv", [(r["mode"], r["rate"], r["combined"]) for r in rows])
        (root / "sweep.json").write_text(json.dumps(
            [{k: v for k, v in r.items() if k != "combined"} for r in rows], sort_keys=True, indent=1) + "\n")
    return rows


def format_table(rows) -> str:
    fmt = lambda v, p=2: "-" if v is None else f"{v:.{p}f}"
    lines = [f"{'mode':9} {'rate':>5} {'latency':>9} {'dLat%':>8} {'thrpt':>8} {'dThr%':>8} {'deliv':>6} {'coll':>4}"]
    for r in rows:
        lines.append(f"{r['mode']:9} {r['rate']:5.2f} {fmt(r['latency']):>9} {fmt(r['latency_delta_pct']):>8} "
                     f"{fmt(r['throughput'], 4):>8} {fmt(r['throughput_delta_pct']):>8} "
                     f"{r['delivery']:6.3f} {r['collapsed']:4d}")
    return "\n".join(lines)


# --- entry point ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--profile", help="reproduction profile, e.g. paper-transpose-fto-33")
    p.add_argument("--traffic", help=f"one of {', '.join(PATTERNS)}")
    p.add_argument("--dims", help="mesh size ZxYxX")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--hard-rate", dest="hard_rate")
    p.add_argument("--soft-rate", dest="soft_rate")
    p.add_argument("--seeds", help="count N (seeds 0..N-1) or a comma list")
    p.add_argument("--ct-mode", dest="ct_mode", choices=["speculative", "conservative"])
    p.add_argument("--bypass-count", dest="bypass_count")
    p.add_argument("--packets-per-node", dest="packets_per_node")
    p.add_argument("--fault-sites", dest="fault_sites", help="comma list of slot,link,channel")
    p.add_argument("--max-cycles", dest="max_cycles")
    p.add_argument("--replay", help="fault plan JSON to load instead of drawing one")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed runs")


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="ftnoc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    _add_common(sub.add_parser("run", help="run one configuration over its seeds"))
    sp = sub.add_parser("sweep", help="modes x fault rates comparison")
    _add_common(sp)
    sp.add_argument("--rates", default=",".join(str(r) for r in SWEEP_RATES))
    sp.add_argument("--modes", default=",".join(m.value for m in SWEEP_MODES))
    sub.add_parser("profiles", help="list reproduction profiles")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.cmd == "profiles":
        print("\n".join(profile_names()))
        return 0
    try:
        settings = build_settings(args)
        if args.cmd == "sweep":
            rates = [float(r) for r in args.rates.split(",")]
            modes = [Mode(m.strip().lower()) for m in args.modes.split(",")]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.cmd == "run":
            res = run_experiment(settings, jobs=args.jobs)
            print(json.dumps(res["combined"], sort_keys=True, indent=1))
        else:
            rows = sweep(settings, rates, modes, jobs=args.jobs)
            print(format_table(rows))
    except AssertionError as exc:
        where = Path(settings.out_dir or ".") / "events.log"
        print(f"error: simulator invariant violated: {exc}; see {where}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
