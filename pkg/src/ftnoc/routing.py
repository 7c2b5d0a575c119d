"""Look-ahead fault-tolerant (LAFT) route selection on a 3D mesh.

A router holding a header already knows the output it will take (computed
one hop upstream).  LAFT computes, for the node ``N`` that output leads to,
the port the header will take *there*:

1. keep the path minimal,
2. prefer the candidate whose successor keeps the most healthy minimal
   directions (path diversity),
3. break remaining ties by downstream congestion, then by the fixed port
   order East, North, Up, West, South, Down.

When no healthy minimal direction exists at ``N`` a non-minimal port is
picked instead (see :func:`nonminimal_fallback`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .flit import NETWORK_PORTS, PORT_DELTA, Coord3, Port

TIE_ORDER = (Port.EAST, Port.NORTH, Port.UP, Port.WEST, Port.SOUTH, Port.DOWN)
TIE_RANK = {p: i for i, p in enumerate(TIE_ORDER)}
TIE_RANK[Port.LOCAL] = len(TIE_ORDER)


class RoutingError(AssertionError):
    """A routing invariant was violated (off-mesh move and the like)."""


class UnroutableError(Exception):
    """No healthy output port exists; the packet has to be dropped."""

    def __init__(self, node: Coord3, dest: Coord3):
        super().__init__(f"no healthy output at {node} toward {dest}")
        self.node = node
        self.dest = dest


def manhattan(a: Coord3, b: Coord3) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])


def in_mesh(c: Coord3, dims) -> bool:
    zs, ys, xs = dims
    return 0 <= c[0] < xs and 0 <= c[1] < ys and 0 <= c[2] < zs


def next_node(cur: Coord3, next_port: Port, dims=None) -> Coord3:
    """Node reached by leaving ``cur`` through ``next_port``.

    ``dims`` is the mesh shape ``(Z, Y, X)``; without it only the lower
    bound is checked.
    """
    if next_port == Port.LOCAL:
        raise RoutingError("Local port does not lead to another router")
    dx, dy, dz = PORT_DELTA[Port(next_port)]
    n = Coord3(cur[0] + dx, cur[1] + dy, cur[2] + dz)
    if min(n) < 0 or (dims is not None and not in_mesh(n, dims)):
        raise RoutingError(f"{Port(next_port).name} from {cur} leaves the mesh")
    return n


def possible_directions(nxt: Coord3, dest: Coord3) -> tuple[Port, ...]:
    """Minimal directions from ``nxt`` toward ``dest``, one per differing axis."""
    out = []
    if dest[0] != nxt[0]:
        out.append(Port.EAST if dest[0] > nxt[0] else Port.WEST)
    if dest[1] != nxt[1]:
        out.append(Port.NORTH if dest[1] > nxt[1] else Port.SOUTH)
    if dest[2] != nxt[2]:
        out.append(Port.UP if dest[2] > nxt[2] else Port.DOWN)
    return tuple(out)


class FaultMap:
    """Link health as seen by the routing logic.

    Boundary ports are never usable.  Faulty channels are symmetric:
    marking ``(node, port)`` also marks the neighbour's opposite port.
    """

    def __init__(self, dims, faulty: Iterable[tuple[Coord3, Port]] = ()):
        self.dims = tuple(dims)
        self._faulty: set[tuple[Coord3, Port]] = set()
        self.version = 0
        for node, port in faulty:
            self.mark_channel(node, port)

    @classmethod
    def empty(cls, dims) -> "FaultMap":
        return cls(dims)

    def copy(self) -> "FaultMap":
        fm = FaultMap(self.dims)
        fm._faulty = set(self._faulty)
        return fm

    def mark_channel(self, node: Coord3, port: Port) -> bool:
        """Mark the channel leaving ``node`` through ``port``; True if newly marked."""
        node, port = Coord3(*node), Port(port)
        if port == Port.LOCAL:
            raise RoutingError("the Local port has no router-to-router channel")
        if (node, port) in self._faulty:
            return False
        self._faulty.add((node, port))
        nb = next_node(node, port, self.dims)
        self._faulty.add((nb, port.opposite))
        self.version += 1
        return True

    def is_faulty(self, node: Coord3, port: Port) -> bool:
        return (node, port) in self._faulty

    def usable(self, node: Coord3, port: Port) -> bool:
        if port == Port.LOCAL:
            return True
        dx, dy, dz = PORT_DELTA[port]
        n = (node[0] + dx, node[1] + dy, node[2] + dz)
        return in_mesh(n, self.dims) and (node, port) not in self._faulty

    def usable_ports(self, node: Coord3) -> list[Port]:
        return [p for p in NETWORK_PORTS if self.usable(node, p)]

    def faulty_channels(self) -> list[tuple[Coord3, Port]]:
        """Each faulty channel once, from its lower-coordinate end."""
        return sorted((n, p) for n, p in self._faulty if p in (Port.EAST, Port.NORTH, Port.UP))

    def __len__(self):
        return len(self._faulty) // 2

    def __eq__(self, other):
        return isinstance(other, FaultMap) and self.dims == other.dims and self._faulty == other._faulty

    # --- text serialization ---

    def to_json(self) -> str:
        by_node: dict[str, list[str]] = {}
        for node, port in sorted(self._faulty):
            by_node.setdefault(f"{node.x},{node.y},{node.z}", []).append(port.name)
        return json.dumps({"dims": list(self.dims), "faulty": by_node}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FaultMap":
        raw = json.loads(text)
        fm = cls(raw["dims"])
        for key, ports in raw["faulty"].items():
            node = Coord3(*(int(v) for v in key.split(",")))
            for name in ports:
                fm.mark_channel(node, Port[name])
        return fm


@dataclass(frozen=True)
class RouteDecision:
    new_next_port: Port
    minimal: bool
    diversity_score: int = 0
    congestion_seen: int = 0


def path_diversity(nxt: Coord3, dest: Coord3, candidate: Port, faults: FaultMap) -> int:
    """Healthy minimal directions left at the node ``candidate`` leads to."""
    m = next_node(nxt, candidate, faults.dims)
    return sum(1 for p in possible_directions(m, dest) if faults.usable(m, p))


def _congestion(congestion: Optional[Mapping[Port, int]], port: Port) -> int:
    if not congestion:
        return 0
    return congestion.get(port, 0)


def select_port(
    node: Coord3,
    dest: Coord3,
    faults: FaultMap,
    congestion: Optional[Mapping[Port, int]] = None,
    arrival: Optional[Port] = None,
) -> RouteDecision:
    """Pick the output a header should take at ``node``.

    ``arrival`` is the port the header entered ``node`` through; it only
    matters for the non-minimal fallback (U-turns are a last resort).
    """
    node = Coord3(*node)
    if node == dest:
        return RouteDecision(Port.LOCAL, True)
    cands = [p for p in possible_directions(node, dest) if faults.usable(node, p)]
    if not cands:
        return nonminimal_fallback(node, dest, faults, congestion, arrival)
    if len(cands) == 1:
        p = cands[0]
        return RouteDecision(p, True, path_diversity(node, dest, p, faults), _congestion(congestion, p))
    best = min(
        cands,
        key=lambda p: (
            -path_diversity(node, dest, p, faults),
            _congestion(congestion, p),
            TIE_RANK[p],
        ),
    )
    return RouteDecision(
        best, True, path_diversity(node, dest, best, faults), _congestion(congestion, best)
    )


def laft_route(
    cur: Coord3,
    next_port: Port,
    dest: Coord3,
    faults: FaultMap,
    congestion: Optional[Mapping[Port, int]] = None,
) -> RouteDecision:
    """Compute the new next-port for the node ``next_port`` leads to.

    ``congestion`` maps each output of that next node to the occupancy of
    the input buffer it feeds.  Raises :class:`UnroutableError` when the
    next node has no healthy output at all.
    """
    n = next_node(cur, next_port, faults.dims)
    return select_port(n, dest, faults, congestion, arrival=Port(next_port).opposite)


def nonminimal_fallback(
    node: Coord3,
    dest: Coord3,
    faults: FaultMap,
    congestion: Optional[Mapping[Port, int]] = None,
    arrival: Optional[Port] = None,
) -> RouteDecision:
    """Choose a detour when every minimal direction at ``node`` is unusable.

    Ranked by distance increase, then congestion, then port order.  The
    arrival port is only used when it is the sole healthy port.
    """
    healthy = faults.usable_ports(node)
    if not healthy:
        raise UnroutableError(node, dest)
    cands = [p for p in healthy if p != arrival] or healthy
    base = manhattan(node, dest)

    def key(p):
        grow = manhattan(next_node(node, p, faults.dims), dest) - base
        return (grow, _congestion(congestion, p), TIE_RANK[p])

    best = min(cands, key=key)
    minimal = manhattan(next_node(node, best, faults.dims), dest) < base
    return RouteDecision(best, minimal, 0, _congestion(congestion, best))


# --- progress guard for heavily faulted meshes ----------------------------------

def distance_table(faults: FaultMap, dest: Coord3) -> dict:
    """Hop distance to ``dest`` over the usable channels (BFS)."""
    dest = Coord3(*dest)
    dist = {dest: 0}
    frontier = [dest]
    while frontier:
        nxt = []
        for c in frontier:
            for p in faults.usable_ports(c):
                n = next_node(c, p, faults.dims)
                if n not in dist:
                    dist[n] = dist[c] + 1
                    nxt.append(n)
        frontier = nxt
    return dist


def guided_ports(node: Coord3, dest: Coord3, faults: FaultMap, dist: Mapping) -> list[Port]:
    """Usable ports that bring ``node`` one hop closer in the faulty graph."""
    d = dist.get(Coord3(*node))
    if d is None:
        return []
    return [p for p in faults.usable_ports(node) if dist.get(next_node(node, p, faults.dims)) == d - 1]


def guided_select(node: Coord3, dest: Coord3, faults: FaultMap, dist: Mapping,
                  congestion: Optional[Mapping[Port, int]] = None) -> RouteDecision:
    """Shortest-path step on the faulty graph, ties broken by congestion then port order.

    Used once a packet has left the minimal path, so every further hop makes
    strict progress and detours cannot cycle.
    """
    node = Coord3(*node)
    if node == dest:
        return RouteDecision(Port.LOCAL, True)
    cands = guided_ports(node, dest, faults, dist)
    if not cands:
        raise UnroutableError(node, dest)
    best = min(cands, key=lambda p: (_congestion(congestion, p), TIE_RANK[p]))
    minimal = manhattan(next_node(node, best, faults.dims), dest) < manhattan(node, dest)
    return RouteDecision(best, minimal, 0, _congestion(congestion, best))
