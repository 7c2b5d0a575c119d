"""Packet-injection schedules: synthetic patterns and task-graph traces.

A schedule is a list of :class:`~ftnoc.network.PacketSpec`.  Every packet
is queued at its source at t=0; the source injects in list order whenever
its local input buffer has room.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .flit import ConfigError, Coord3
from .network import PacketSpec, mesh_coords
from .routing import in_mesh

PACKET_LEN = 10

# Network shape (Z, Y, X) and packet totals per benchmark
TASKGRAPHS = {
    "h264": ((3, 3, 3), 8400),
    "vopd": ((2, 2, 3), 3494),
    "mwd": ((3, 2, 2), 1120),
    "pip": ((2, 2, 2), 512),
}


class TrafficKind(Enum):
    TRANSPOSE = "transpose"
    UNIFORM = "uniform"
    HOTSPOT = "hotspot"
    MATRIX = "matrix"
    TASKGRAPH = "taskgraph"


@dataclass(frozen=True)
class TrafficSpec:
    kind: TrafficKind = TrafficKind.UNIFORM
    packets_per_node: Optional[int] = None
    packet_len: int = PACKET_LEN
    hotspot_fraction: float = 0.10
    hotspot_extra: float = 0.10
    name: Optional[str] = None  # task graph

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", TrafficKind(self.kind.lower()))


def transpose(c: Coord3) -> Coord3:
    return Coord3(c.z, c.y, c.x)


def gen_transpose(dims, seed: int = 0, packets_per_node: int = 10, packet_len: int = PACKET_LEN,
                  skipped: Optional[list] = None) -> list[PacketSpec]:
    """(x, y, z) sends to (z, y, x); fixed points send nothing.

    ``seed`` is accepted for interface symmetry; the pattern is deterministic.
    Skipped sources are appended to ``skipped`` when given.
    """
    out = []
    for c in mesh_coords(dims):
        d = transpose(c)
        if d == c or not in_mesh(d, dims):
            if skipped is not None:
                skipped.append(c)
            continue
        out.extend(PacketSpec(c, d, packet_len) for _ in range(packets_per_node))
    return out


def _uniform_dests(dims, seed, packets_per_node):
    rng = random.Random(f"{seed}:uniform")
    nodes = mesh_coords(dims)
    for c in nodes:
        others = [n for n in nodes if n != c]
        if not others:
            continue
        for _ in range(packets_per_node):
            yield c, rng.choice(others)


def gen_uniform(dims, seed: int = 0, packets_per_node: int = 128, packet_len: int = PACKET_LEN) -> list[PacketSpec]:
    return [PacketSpec(s, d, packet_len) for s, d in _uniform_dests(dims, seed, packets_per_node)]


def hotspot_nodes(dims) -> list[Coord3]:
    """Centre node of every XY layer."""
    zs, ys, xs = dims
    return [Coord3(xs // 2, ys // 2, z) for z in range(zs)]


def gen_hotspot(dims, seed: int = 0, h: float = 0.10, packets_per_node: int = 128,
                packet_len: int = PACKET_LEN, extra: float = 0.10,
                hotspots: Optional[Sequence[Coord3]] = None) -> list[PacketSpec]:
    """Uniform traffic with each packet redirected to a hotspot with probability ``h``.

    Redirected packets are ``ceil(packet_len * (1 + extra))`` flits long.
    Redirection draws come from their own stream so ``h = 0`` reproduces
    :func:`gen_uniform` exactly.
    """
    spots = list(hotspots) if hotspots is not None else hotspot_nodes(dims)
    rng = random.Random(f"{seed}:hotspot")
    long_len = math.ceil(packet_len * (1 + extra) - 1e-9)
    out = []
    for s, d in _uniform_dests(dims, seed, packets_per_node):
        if h > 0 and rng.random() < h:
            cands = [p for p in spots if p != s]
            if cands:
                out.append(PacketSpec(s, rng.choice(cands), long_len))
                continue
        out.append(PacketSpec(s, d, packet_len))
    return out


def gen_matrix(dims=(3, 6, 6), n: int = 6, seed: int = 0, packet_len: int = PACKET_LEN) -> list[PacketSpec]:
    """Operand exchange of an n x n matrix product laid out on each XY layer.

    Every node sends one packet to each other node of its row and of its
    column, i.e. ``2 (n - 1)`` packets per node.
    """
    zs, ys, xs = dims
    if n > min(xs, ys):
        raise ConfigError(f"matrix size {n} does not fit a {ys}x{xs} layer")
    out = []
    for z in range(zs):
        for y in range(n):
            for x in range(n):
                src = Coord3(x, y, z)
                out.extend(PacketSpec(src, Coord3(x2, y, z), packet_len) for x2 in range(n) if x2 != x)
                out.extend(PacketSpec(src, Coord3(x, y2, z), packet_len) for y2 in range(n) if y2 != y)
    return out


# --- task graphs ----------------------------------------------------------------

@dataclass(frozen=True)
class TaskGraphTrace:
    name: str
    dims: tuple
    records: tuple  # (src Coord3, dst Coord3, packets)

    @property
    def total(self) -> int:
        return sum(r[2] for r in self.records)

    def schedule(self, packet_len: int = PACKET_LEN) -> list[PacketSpec]:
        """Each source cycles through its records one packet at a time."""
        by_src = defaultdict(list)
        for s, d, n in self.records:
            by_src[s].append([d, n])
        out = []
        for s in sorted(by_src, key=lambda c: (c.z, c.y, c.x)):
            recs = by_src[s]
            while any(r[1] for r in recs):
                for r in recs:
                    if r[1]:
                        out.append(PacketSpec(s, r[0], packet_len))
                        r[1] -= 1
        return out


def _data_lines(text: str) -> list[list[str]]:
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    return rows


def _read(path_or_name: Optional[str], default: str) -> str:
    if path_or_name is None:
        return resources.files("ftnoc").joinpath("data", default).read_text()
    return Path(path_or_name).read_text()


def load_taskgraph(name: str, mapping_file: Optional[str] = None, trace_file: Optional[str] = None,
                   dims=None) -> TaskGraphTrace:
    key = name.lower()
    if key not in TASKGRAPHS and (dims is None or trace_file is None or mapping_file is None):
        raise ConfigError(f"unknown task graph {name!r}; known: {sorted(TASKGRAPHS)}")
    dims = tuple(dims) if dims is not None else TASKGRAPHS[key][0]
    mapping = {}
    for row in _data_lines(_read(mapping_file, f"{key}.map")):
        if len(row) != 4:
            raise ConfigError(f"mapping line needs 'task z y x': {' '.join(row)}")
        task, z, y, x = (int(v) for v in row)
        c = Coord3(x, y, z)
        if not in_mesh(c, dims):
            raise ConfigError(f"task {task} mapped off-mesh at {c} for dims {dims}")
        mapping[task] = c
    if not mapping:
        raise ConfigError(f"empty mapping for task graph {name!r}")
    records = []
    for row in _data_lines(_read(trace_file, f"{key}.trace")):
        if len(row) != 3:
            raise ConfigError(f"trace line needs 'src_task dst_task packets': {' '.join(row)}")
        a, b, n = (int(v) for v in row)
        if a not in mapping or b not in mapping:
            raise ConfigError(f"trace references unmapped task in {' '.join(row)}")
        if mapping[a] == mapping[b]:
            raise ConfigError(f"tasks {a} and {b} share a node")
        records.append((mapping[a], mapping[b], n))
    return TaskGraphTrace(key, dims, tuple(records))


# --- dispatch -------------------------------------------------------------------

DEFAULT_DIMS = {
    TrafficKind.TRANSPOSE: (4, 4, 4),
    TrafficKind.UNIFORM: (4, 4, 4),
    TrafficKind.HOTSPOT: (4, 4, 4),
    TrafficKind.MATRIX: (3, 6, 6),
}


def default_dims(spec: TrafficSpec) -> tuple:
    if spec.kind is TrafficKind.TASKGRAPH:
        return TASKGRAPHS[(spec.name or "").lower()][0]
    return DEFAULT_DIMS[spec.kind]


def generate(spec: TrafficSpec, dims, seed: int = 0) -> list[PacketSpec]:
    k = spec.kind
    L = spec.packet_len
    if k is TrafficKind.TRANSPOSE:
        return gen_transpose(dims, seed, spec.packets_per_node or 10, L)
    if k is TrafficKind.UNIFORM:
        return gen_uniform(dims, seed, spec.packets_per_node or 128, L)
    if k is TrafficKind.HOTSPOT:
        return gen_hotspot(dims, seed, spec.hotspot_fraction, spec.packets_per_node or 128, L, spec.hotspot_extra)
    if k is TrafficKind.MATRIX:
        return gen_matrix(dims, min(dims[1], dims[2]), seed, L)
    if not spec.name:
        raise ConfigError("task-graph traffic needs a name")
    return load_taskgraph(spec.name, dims=dims).schedule(L)
