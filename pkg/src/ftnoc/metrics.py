"""Per-packet records, run summaries and cross-seed aggregation."""

from __future__ import annotations

import csv
import io
import json
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .flit import Coord3

COLLAPSE_DELIVERY = 0.5
COLLAPSE_LATENCY_FACTOR = 10.0


@dataclass(frozen=True)
class MetricsRecord:
    pid: int
    src: Coord3
    dest: Coord3
    length: int
    inject: Optional[int]
    eject: Optional[int]
    hops: int = 0
    arq: int = 0
    mismatches: int = 0
    dropped: bool = False
    corrupted: bool = False

    @property
    def delivered(self) -> bool:
        return self.eject is not None and not self.dropped and not self.corrupted

    @property
    def latency(self) -> Optional[int]:
        return self.eject - self.inject if self.delivered else None

    @classmethod
    def from_packet(cls, p) -> "MetricsRecord":
        return cls(p.pid, p.src, p.dest, p.length, p.inject, p.eject, p.hops, p.arq,
                   p.mismatches, p.dropped, p.corrupted)


@dataclass
class RunSummary:
    avg_latency: Optional[float]
    throughput: float
    delivery_ratio: float
    packets: int
    delivered: int
    cycles: int
    collapsed: bool
    counters: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["units"] = {"avg_latency": "cycles", "throughput": "flits/cycle/node"}
        return json.dumps(d, sort_keys=True, indent=1)


def is_collapsed(delivery_ratio: float, avg_latency: Optional[float], reference_latency: Optional[float]) -> bool:
    if avg_latency is None or delivery_ratio < COLLAPSE_DELIVERY:
        return True
    return reference_latency is not None and avg_latency > COLLAPSE_LATENCY_FACTOR * reference_latency


def aggregate(records: Iterable[MetricsRecord], cycles: int, nodes: int,
              reference_latency: Optional[float] = None, counters: Optional[dict] = None,
              config: Optional[dict] = None) -> RunSummary:
    """Average latency over delivered packets; throughput = delivered flits / (cycles * nodes)."""
    records = list(records)
    done = [r for r in records if r.delivered]
    lat = statistics.fmean(r.latency for r in done) if done else None
    flits = sum(r.length for r in done)
    thr = flits / (cycles * nodes) if cycles and nodes else 0.0
    ratio = len(done) / len(records) if records else 1.0
    return RunSummary(
        avg_latency=lat, throughput=thr, delivery_ratio=ratio, packets=len(records),
        delivered=len(done), cycles=cycles,
        collapsed=is_collapsed(ratio, lat, reference_latency) if records else False,
        counters=dict(sorted((counters or {}).items())), config=dict(config or {}),
    )


def summarize_network(net, reference_latency=None, config=None) -> RunSummary:
    counters = Counter(e[2] for e in net.events)
    return aggregate((MetricsRecord.from_packet(p) for p in net.packets), net.cycle, len(net.routers),
                     reference_latency, counters, config)


def records_from_events(lines: Iterable[str], schedule) -> list[MetricsRecord]:
    """Rebuild per-packet timing from an event log (inject/eject/drop records).

    ``schedule`` supplies source, destination and length per packet id.
    """
    inject, eject, dropped, corrupted = {}, {}, set(), set()
    counts = Counter()
    for line in lines:
        ev = json.loads(line)
        kind, detail = ev["event"], ev["detail"]
        if not detail.startswith("pkt="):
            continue
        pid = int(detail.split()[0][4:])
        if kind == "inject":
            inject.setdefault(pid, ev["cycle"])
        elif kind == "eject":
            eject[pid] = ev["cycle"]
            if detail.endswith("corrupted"):
                corrupted.add(pid)
        elif kind == "drop":
            dropped.add(pid)
        elif kind in ("arq", "vote_mismatch"):
            counts[(kind, pid)] += 1
    out = []
    for pid, spec in enumerate(schedule):
        out.append(MetricsRecord(pid, spec.src, spec.dest, spec.length, inject.get(pid), eject.get(pid),
                                 arq=counts[("arq", pid)], dropped=pid in dropped, corrupted=pid in corrupted))
    return out


def summary_from_log(lines: Sequence[str], schedule, cycles: int, nodes: int,
                     reference_latency=None) -> RunSummary:
    lines = list(lines)
    counters = Counter(json.loads(l)["event"] for l in lines)
    return aggregate(records_from_events(lines, schedule), cycles, nodes, reference_latency, counters)


# --- cross-seed ---------------------------------------------------------------

@dataclass(frozen=True)
class SeedStats:
    mean: Optional[float]
    std: Optional[float]
    n: int


def seed_stats(values: Sequence[Optional[float]]) -> SeedStats:
    vals = [v for v in values if v is not None]
    if not vals:
        return SeedStats(None, None, 0)
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return SeedStats(statistics.fmean(vals), std, len(vals))


def combine(summaries: Sequence[RunSummary]) -> dict:
    return {
        "avg_latency": asdict(seed_stats([s.avg_latency for s in summaries])),
        "throughput": asdict(seed_stats([s.throughput for s in summaries])),
        "delivery_ratio": asdict(seed_stats([s.delivery_ratio for s in summaries])),
        "collapsed": sum(s.collapsed for s in summaries),
        "seeds": len(summaries),
    }


# --- CSV ----------------------------------------------------------------------

PACKET_COLUMNS = ("pid", "src", "dest", "length", "inject_cycle", "eject_cycle", "latency_cycles",
                  "hops", "arq", "vote_mismatches", "dropped", "corrupted", "delivered")


def packets_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PACKET_COLUMNS)
    for r in records:
        w.writerow([
            r.pid, f"{r.src.x}:{r.src.y}:{r.src.z}", f"{r.dest.x}:{r.dest.y}:{r.dest.z}", r.length,
            "" if r.inject is None else r.inject, "" if r.eject is None else r.eject,
            "" if r.latency is None else r.latency,
            r.hops, r.arq, r.mismatches, int(r.dropped), int(r.corrupted), int(r.delivered),
        ])
    return buf.getvalue()
