"""3D mesh construction, fault planning and the global cycle loop.

Each cycle runs in three steps:

1. *deliver* - channel transmissions whose arrival cycle is now are checked
   (permanent-fault masks, transient flips, ECC decode) and either written
   into the downstream buffer or answered with an ARQ retransmission;
2. *compute* - every busy router runs :meth:`Router.step` against a
   congestion snapshot taken before any router moved;
3. *commit* - credit returns, packet drops and router events are applied
   in router-index order.

Routers only touch their own state during compute, so the evaluation order
of step 2 does not affect the outcome.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

from .flit import (
    FLIT_BITS, ConfigError, Coord3, DecodeStatus, Flit, FlitType, Port,
    decode_flit, decode_protected, half_positions, payload_width,
)
from .router import LOCAL, N_PORTS, Router, Transmission
from .routing import FaultMap, distance_table, guided_ports, guided_select, manhattan, possible_directions, select_port

SITE_KINDS = ("slot", "link", "channel")


class Mode(Enum):
    BASELINE = "baseline"
    FTO = "fto"
    SER = "ser"
    FETO = "feto"

    @property
    def ecc(self) -> bool:
        return self in (Mode.SER, Mode.FETO)

    @property
    def voting(self) -> bool:
        return self in (Mode.SER, Mode.FETO)

    @property
    def ddrm(self) -> bool:
        return self is Mode.FETO

    @property
    def prediagnosed(self) -> bool:
        return self is Mode.FTO


@dataclass(frozen=True)
class MeshConfig:
    dims: tuple = (4, 4, 4)  # (Z, Y, X)
    mode: Mode = Mode.FETO
    buffer_depth: int = 4
    bypass_count: int = 2
    deadlock_threshold: int = 16
    absorb_threshold: int = 64
    ct_mode: str = "speculative"
    hard_rate: float = 0.0
    soft_rate: float = 0.0
    fault_sites: tuple = SITE_KINDS
    strict: bool = True
    seed: int = 0
    max_cycles: int = 1_000_000
    stuck_limit: int = 20_000  # cycles without any flit movement before giving up

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three sizes >= 1, got {self.dims}")
        if max(self.dims) > 8:
            raise ConfigError("at most 8 nodes per axis fit the 3-bit header fields")
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode.lower()))
        if self.ct_mode not in ("speculative", "conservative"):
            raise ConfigError(f"ct_mode must be speculative or conservative, got {self.ct_mode!r}")
        if not 0 <= self.hard_rate < 1:
            raise ConfigError(f"hard_rate must be in [0, 1), got {self.hard_rate}")
        if not 0 <= self.soft_rate <= 1:
            raise ConfigError(f"soft_rate must be in [0, 1], got {self.soft_rate}")
        if self.buffer_depth < 1 or self.bypass_count < 0:
            raise ConfigError("buffer_depth >= 1 and bypass_count >= 0 required")
        bad = set(self.fault_sites) - set(SITE_KINDS)
        if bad:
            raise ConfigError(f"fault_sites: unknown sites {sorted(bad)}")

    @property
    def nodes(self) -> int:
        z, y, x = self.dims
        return x * y * z


# --- fault planning -------------------------------------------------------------

@dataclass
class FaultPlan:
    """Permanent faults placed at t=0.

    Each entry carries the bit mask the fault inverts on every traversal
    (see :func:`fault_masks`).
    """

    seed: int = 0
    hard_rate: float = 0.0
    soft_rate: float = 0.0
    slots: list = field(default_factory=list)      # (coord, port, slot, mask)
    links: list = field(default_factory=list)      # (coord, in_port, out_port, mask)
    channels: list = field(default_factory=list)   # (coord, port, mask), port in E/N/U
    subseed: int = 0
    connected: bool = True

    def __len__(self):
        return len(self.slots) + len(self.links) + len(self.channels)

    def to_json(self) -> str:
        c = lambda n: [n[0], n[1], n[2]]
        return json.dumps({
            "seed": self.seed, "hard_rate": self.hard_rate, "soft_rate": self.soft_rate,
            "subseed": self.subseed, "connected": self.connected,
            "slots": [[c(n), Port(p).name, s, m] for n, p, s, m in self.slots],
            "links": [[c(n), Port(i).name, Port(o).name, m] for n, i, o, m in self.links],
            "channels": [[c(n), Port(p).name, m] for n, p, m in self.channels],
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FaultPlan":
        raw = json.loads(text)
        co = lambda v: Coord3(*v)
        return cls(
            seed=raw["seed"], hard_rate=raw["hard_rate"], soft_rate=raw.get("soft_rate", 0.0),
            subseed=raw.get("subseed", 0), connected=raw.get("connected", True),
            slots=[(co(n), Port[p], s, m) for n, p, s, m in raw["slots"]],
            links=[(co(n), Port[i], Port[o], m) for n, i, o, m in raw["links"]],
            channels=[(co(n), Port[p], m) for n, p, m in raw["channels"]],
        )


def _always_detected(masks) -> bool:
    """Every non-empty XOR of ``masks``, alone or with one extra bit flip,
    decodes Uncorrectable (the code is linear, so the all-zero word suffices)."""
    combos = set()
    for k in range(1, 1 << len(masks)):
        m = 0
        for j, mk in enumerate(masks):
            if k >> j & 1:
                m ^= mk
        combos.add(m)
    for m in combos:
        for e in [0] + [1 << b for b in range(FLIT_BITS)]:
            if decode_protected(m ^ e)[0] is not DecodeStatus.UNCORRECTABLE:
                return False
    return True


def fault_masks(seed) -> dict:
    """Stuck-bit patterns for slot, link and channel faults.

    Each half gets four seeded positions p1..p4; the kinds invert
    {p1,p2}, {p2,p3} and {p3,p4} of both halves.  At most one fault of each
    kind lies on a transmission path, so stacked faults never cancel and are
    never miscorrected.
    """
    rng = random.Random(f"{seed}:mask")
    while True:
        masks = [0, 0, 0]
        for half in (0, 1):
            p = rng.sample(half_positions(half), 4)
            for k in range(3):
                masks[k] |= (1 << p[k]) | (1 << p[k + 1])
        if _always_detected(masks):
            return dict(zip(SITE_KINDS, masks))


def mesh_coords(dims) -> list[Coord3]:
    zs, ys, xs = dims
    return [Coord3(x, y, z) for z in range(zs) for y in range(ys) for x in range(xs)]


def present_ports(c: Coord3, dims) -> list[Port]:
    fm = FaultMap(dims)
    return [p for p in Port if fm.usable(c, p)]


def mesh_channels(dims) -> list[tuple[Coord3, Port]]:
    """Every bidirectional channel once, named from its lower end."""
    fm = FaultMap(dims)
    return [(c, p) for c in mesh_coords(dims) for p in (Port.EAST, Port.NORTH, Port.UP) if fm.usable(c, p)]


def is_connected(dims, faulty_channels: Iterable[tuple[Coord3, Port]]) -> bool:
    fm = FaultMap(dims, faulty_channels)
    nodes = mesh_coords(dims)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        c = stack.pop()
        for p in fm.usable_ports(c):
            d = PORT_STEP[p]
            n = Coord3(c.x + d[0], c.y + d[1], c.z + d[2])
            if n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(nodes)


PORT_STEP = {
    Port.EAST: (1, 0, 0), Port.WEST: (-1, 0, 0), Port.NORTH: (0, 1, 0),
    Port.SOUTH: (0, -1, 0), Port.UP: (0, 0, 1), Port.DOWN: (0, 0, -1),
}


def _draw_plan(config: MeshConfig, seed: int, hard_rate: float, subseed: int) -> FaultPlan:
    rng = random.Random(f"{seed}:plan:{subseed}")
    plan = FaultPlan(seed=seed, hard_rate=hard_rate, soft_rate=config.soft_rate, subseed=subseed)
    sites = set(config.fault_sites)
    depth = config.buffer_depth
    masks = fault_masks(seed)
    for c in mesh_coords(config.dims):
        ports = present_ports(c, config.dims)
        if "slot" in sites:
            for p in ports:
                bad = [rng.random() < hard_rate for _ in range(depth)]
                # a port with no healthy slot at all is redrawn in strict mode
                while config.strict and all(bad):
                    bad = [rng.random() < hard_rate for _ in range(depth)]
                for s in range(depth):
                    if bad[s]:
                        plan.slots.append((c, p, s, masks["slot"]))
        if "link" in sites:
            for i in ports:
                for o in ports:
                    if rng.random() < hard_rate:
                        plan.links.append((c, i, o, masks["link"]))
    if "channel" in sites:
        for c, p in mesh_channels(config.dims):
            if rng.random() < hard_rate:
                plan.channels.append((c, p, masks["channel"]))
    plan.connected = is_connected(config.dims, [(c, p) for c, p, _ in plan.channels])
    return plan


def plan_hard_faults(config: MeshConfig, seed: Optional[int] = None, hard_rate: Optional[float] = None,
                     max_retries: int = 200) -> FaultPlan:
    """Independent per-site permanent faults with probability ``hard_rate``.

    In strict mode a plan that disconnects the channel graph is redrawn
    with the next sub-seed.
    """
    seed = config.seed if seed is None else seed
    hard_rate = config.hard_rate if hard_rate is None else hard_rate
    if not 0 <= hard_rate < 1:
        raise ConfigError(f"hard_rate must be in [0, 1), got {hard_rate}")
    for sub in range(max_retries):
        plan = _draw_plan(config, seed, hard_rate, sub)
        if plan.connected or not config.strict:
            return plan
    raise ConfigError(f"no connected fault plan after {max_retries} draws (seed {seed}, rate {hard_rate})")


# --- packets --------------------------------------------------------------------

@dataclass(frozen=True)
class PacketSpec:
    src: Coord3
    dest: Coord3
    length: int = 10


class Packet:
    __slots__ = ("pid", "src", "dest", "length", "inject", "eject", "hops", "arq",
                 "mismatches", "dropped", "corrupted", "received", "livelock", "absorb_at", "guided")

    def __init__(self, pid, src, dest, length):
        self.pid = pid
        self.src = src
        self.dest = dest
        self.length = length
        self.inject = None
        self.eject = None
        self.hops = 0
        self.arq = 0
        self.mismatches = 0
        self.dropped = False
        self.corrupted = False
        self.received = 0
        self.livelock = False
        self.absorb_at = None
        self.guided = False  # left the minimal path: follow fault-graph shortest paths

    @property
    def delivered(self) -> bool:
        return self.eject is not None and not self.dropped and not self.corrupted

    def __repr__(self):
        return f"Packet({self.pid}, {self.src}->{self.dest}, len={self.length})"


def _payload(pid: int, seq: int, width: int) -> int:
    return ((pid * 2654435761) ^ (seq * 40503)) & ((1 << width) - 1)


# --- the network ----------------------------------------------------------------

def _regroup(recovery):
    """Order handed-back flits packet by packet, each packet in sequence order.

    A packet returned twice (its channel marked while earlier returned flits
    were still waiting) would otherwise have its head behind its own body.
    """
    first = {}
    for n, f in enumerate(recovery):
        first.setdefault(f.packet.pid, n)
    ordered = sorted(recovery, key=lambda f: (first[f.packet.pid], f.seq))
    recovery.clear()
    recovery.extend(ordered)


class Network:
    def __init__(self, config: MeshConfig):
        self.cfg = config
        self.dims = tuple(config.dims)
        self.coords = mesh_coords(self.dims)
        self.index = {c: k for k, c in enumerate(self.coords)}
        self.faults = FaultMap(self.dims)
        self.routers: list[Router] = []
        self.nb: list[list[int]] = []
        for k, c in enumerate(self.coords):
            present = [self.faults.usable(c, p) for p in Port]
            rng = random.Random(f"{config.seed}:router:{k}")
            self.routers.append(Router(k, c, config, present, rng))
            row = []
            for p in Port:
                if p == Port.LOCAL or not present[p]:
                    row.append(-1)
                else:
                    d = PORT_STEP[p]
                    row.append(self.index[Coord3(c.x + d[0], c.y + d[1], c.z + d[2])])
            self.nb.append(row)
        self.true_slot: dict = {}
        self.true_link: dict = {}
        self.true_channel: dict = {}
        self.plan: Optional[FaultPlan] = None
        self.cycle = 0
        self.injecting = True
        self.active_channels: set = set()
        self.packets: list[Packet] = []
        self.events: list = []
        self.diagnoses: list = []
        self.injected_flits = 0
        self.delivered_flits = 0
        self.dropped_flits = 0
        self.last_progress = 0
        self.compute_order: Optional[list[int]] = None
        self._occ: list = []
        self._dist: dict = {}
        self._dist_version = -1
        self._cong: dict = {}
        self._width = payload_width(config.mode.ecc)
        self._reset_credits()

    # -- setup ---------------------------------------------------------------

    def _reset_credits(self):
        for r in self.routers:
            for p in range(6):
                n = self.nb[r.index][p]
                r.credits[p] = 0 if n < 0 else self.routers[n].inputs[p ^ 1].healthy

    def apply_plan(self, plan: FaultPlan):
        self.plan = plan
        pre = self.cfg.mode.prediagnosed
        for c, p, s, m in plan.slots:
            k = self.index[Coord3(*c)]
            self.true_slot[(k, int(p), s)] = m
            if pre:
                self.routers[k].inputs[int(p)].mark_faulty(s)
        for c, i, o, m in plan.links:
            k = self.index[Coord3(*c)]
            self.true_link[(k, int(i), int(o))] = m
            if pre:
                self.routers[k].xbar.faulty_links.add((int(i), int(o)))
        for c, p, m in plan.channels:
            k = self.index[Coord3(*c)]
            self.true_channel[(k, int(p))] = m
            self.true_channel[(self.nb[k][int(p)], int(p) ^ 1)] = m
            if pre:
                self.faults.mark_channel(Coord3(*c), Port(p))
        self._reset_credits()

    def load(self, schedule: Sequence[PacketSpec]):
        for spec in schedule:
            pkt = Packet(len(self.packets), Coord3(*spec.src), Coord3(*spec.dest), spec.length)
            self.packets.append(pkt)
            self.routers[self.index[pkt.src]].source.append(pkt)

    def make_flits(self, pkt: Packet, router: Router) -> list[Flit]:
        n = pkt.length
        out = []
        for k in range(n):
            if n == 1:
                t = FlitType.HEAD_TAIL
            elif k == 0:
                t = FlitType.HEAD
            elif k == n - 1:
                t = FlitType.TAIL
            else:
                t = FlitType.BODY
            out.append(Flit(pkt, k, int(t), pkt.dest, _payload(pkt.pid, k, self._width), LOCAL))
        return out

    # -- views used by routers --------------------------------------------------

    def neighbor_coord(self, c: Coord3, port: int) -> Coord3:
        return self.coords[self.nb[self.index[c]][port]]

    def congestion_at(self, c: Coord3) -> dict:
        """Occupancy of the downstream input buffer behind each output of ``c``
        as of the start of the current cycle."""
        got = self._cong.get(c)
        if got is None:
            k = self.index[c]
            got = {}
            for p in range(6):
                n = self.nb[k][p]
                if n >= 0:
                    got[Port(p)] = self._occ[n][p ^ 1]
            self._cong[c] = got
        return got

    def _distances(self, dest: Coord3) -> dict:
        if self._dist_version != self.faults.version:
            self._dist.clear()
            self._dist_version = self.faults.version
        got = self._dist.get(dest)
        if got is None:
            got = self._dist[dest] = distance_table(self.faults, dest)
        return got

    def route(self, node: Coord3, pkt: Packet, arrival=None):
        """Output a header of ``pkt`` takes at ``node`` (LAFT, or the progress
        guard once the packet has gone non-minimal)."""
        cong = self.congestion_at(node)
        if not pkt.guided:
            dec = select_port(node, pkt.dest, self.faults, cong, arrival)
            if dec.minimal:
                return dec
            pkt.guided = True
        return guided_select(node, pkt.dest, self.faults, self._distances(pkt.dest), cong)

    def productive_ports(self, node: Coord3, pkt: Packet) -> list:
        if pkt.guided:
            return guided_ports(node, pkt.dest, self.faults, self._distances(pkt.dest))
        return [p for p in possible_directions(node, pkt.dest) if self.faults.usable(node, p)]

    # -- stepping --------------------------------------------------------------

    def tick(self):
        t = self.cycle
        if self.active_channels:
            self._deliver(t)
        self._occ = [[len(b) for b in r.inputs] for r in self.routers]
        self._cong = {}
        order = self.compute_order or range(len(self.routers))
        for k in order:
            r = self.routers[k]
            if r.source or r.inj_flits or any(self._occ[k]):
                r.step(t, self)
        self._commit(t)
        self.cycle += 1

    def _commit(self, t):
        for r in self.routers:
            if r.outbox:
                for kind, arg in r.outbox:
                    if kind == "credit":
                        up = self.nb[r.index][arg]
                        self.routers[up].credits[arg ^ 1] += 1
                    elif kind == "drop":
                        if not arg.dropped:
                            arg.dropped = True
                    elif kind == "dropped_flit":
                        self.dropped_flits += 1
                        self.last_progress = t
                r.outbox.clear()
            if r.events:
                self.events.extend(r.events)
                r.events.clear()

    def _event(self, t, router, kind, detail=""):
        self.events.append((t, router, kind, detail))

    def _deliver(self, t):
        for key in sorted(self.active_channels):
            k, o = key
            ch = self.routers[k].channels[o]
            q = ch.queue
            while q and q[0].arrival == t:
                if not self._receive(ch, q[0], t):
                    break
            if not q:
                self.active_channels.discard(key)

    def _path_mask(self, r: Router, o: int, tx: Transmission) -> int:
        m = 0
        if tx.path == "same" and tx.slot is not None:
            m ^= self.true_slot.get((r.index, tx.input, tx.slot), 0)
        if tx.via == "base" and tx.path != "bypass":
            m ^= self.true_link.get((r.index, tx.input, o), 0)
        if o != LOCAL:
            m ^= self.true_channel.get((r.index, o), 0)
        return m

    def _receive(self, ch, tx: Transmission, t) -> bool:
        """Handle the transmission at the channel head; False if it stays queued."""
        r, o, flit = ch.router, ch.port, tx.flit
        cfg = self.cfg
        mode = cfg.mode
        mask = self._path_mask(r, o, tx) if (self.true_slot or self.true_link or self.true_channel) else 0
        if cfg.soft_rate > 0 and r.rng.random() < cfg.soft_rate:
            mask ^= 1 << r.rng.randrange(FLIT_BITS)
        status = DecodeStatus.CLEAN
        if mask:
            self.last_progress = t
            if mode.ecc:
                word = flit.word(True)
                out = decode_flit(word ^ mask, True)
                status = out.status
                if out.fields is not None and out.fields != flit.fields():
                    flit.corrupted = True  # miscorrected: undetectable by the receiver
            else:
                flit.corrupted = True

        if mode.ddrm:
            act = ch.ddrm.step(status, tx.input, tx.slot, cfg.bypass_count > 0, o != LOCAL)
            if act.blod == "enable":
                r.xbar.faulty_links.add((tx.input, o))
                self._event(t, r.index, "bypass_bound", f"{Port(tx.input).short}->{Port(o).short}")
            elif act.blod == "release":
                r.xbar.faulty_links.discard((tx.input, o))
                self._event(t, r.index, "bypass_released", f"{Port(tx.input).short}->{Port(o).short}")
            if act.rab_mark is not None:
                self._mark_slot(r, *act.rab_mark, t)
            if act.diagnosis:
                loc = {"buffer": act.rab_mark, "crossbar": (tx.input, o), "channel": o}[act.diagnosis]
                self.diagnoses.append((t, r.index, o, act.diagnosis, loc))
            if act.laft_faulty:
                self._mark_channel(r, o, t)
                return False
            if act.retransmit:
                self._retransmit(ch, tx, t, act.path)
                return False
        elif mode.ecc and status is DecodeStatus.UNCORRECTABLE:
            ch.ddrm.counter += 1
            if ch.ddrm.counter < 2:
                self._retransmit(ch, tx, t, "same")
                return False
            # no diagnosis available: give up on this flit after the second ARQ
            ch.ddrm.counter = 0
            flit.corrupted = True
            self._event(t, r.index, "corrupt_accept", f"pkt={flit.packet.pid}")
        elif mode.ecc:
            ch.ddrm.counter = 0

        ch.queue.popleft()
        self._accept(r, o, flit, t)
        return True

    def _retransmit(self, ch, tx, t, path):
        ch.retransmit(t, path)
        tx.flit.packet.arq += 1
        self._event(t, ch.router.index, "arq", f"out={Port(ch.port).short} pkt={tx.flit.packet.pid}")

    def _accept(self, r, o, flit, t):
        self.last_progress = t
        pkt = flit.packet
        if o == LOCAL:
            if pkt.absorb_at == r.index:
                r.stash.setdefault(pkt, []).append(flit)
                r.held += 1
                if flit.is_tail:
                    r.source.appendleft(pkt)
                return
            if pkt.dropped:
                self.dropped_flits += 1
                return
            pkt.received += 1
            self.delivered_flits += 1
            if flit.corrupted:
                pkt.corrupted = True
            if flit.is_tail:
                pkt.eject = t
                self._event(t, r.index, "eject", f"pkt={pkt.pid} {'corrupted' if pkt.corrupted else 'ok'}")
            return
        n = self.nb[r.index][o]
        down = self.routers[n]
        if flit.is_head:
            flit.out_port = flit.next_port
            pkt.hops += 1
            if not pkt.livelock and pkt.hops > 4 * manhattan(pkt.src, pkt.dest):
                pkt.livelock = True
                self._event(t, n, "livelock", f"pkt={pkt.pid} hops={pkt.hops}")
        flit.ready = t + 1
        buf = down.inputs[o ^ 1]
        if buf.free_healthy:
            buf.write(flit)
        else:
            # the slot reserved for this flit was flagged while it was in transit
            buf.hold(flit)
            r.credits[o] += 1

    def _mark_slot(self, r, port, slot, t):
        buf = r.inputs[port]
        occupant = buf.slots[slot]
        if not buf.mark_faulty(slot):
            return
        self._event(t, r.index, "slot_marked", f"in={Port(port).short} slot={slot}")
        lost_free = occupant is None or occupant.src_slot is not None
        up = self.nb[r.index][port] if port != LOCAL else -1
        if up >= 0 and lost_free:
            self.routers[up].credits[port ^ 1] -= 1
        if up >= 0 and buf.healthy == 0:
            self._mark_channel(self.routers[up], port ^ 1, t)

    def _mark_channel(self, r, o, t):
        if self.faults.mark_channel(r.coord, Port(o)):
            self._event(t, r.index, "channel_marked", f"out={Port(o).short}")
        ch = r.channels[o]
        kept = []
        returned = set()
        for tx in ch.queue:
            f = tx.flit
            if f.is_head or (tx.input, f.packet) in returned:
                returned.add((tx.input, f.packet))
                r.inputs[tx.input].recovery.append(f)
                r.credits[o] += 1
            else:
                kept.append(tx)
        ch.queue.clear()
        for i in {i for i, _ in returned}:
            _regroup(r.inputs[i].recovery)
        for key in returned:
            if r.pkt_out.get(key) == o:
                del r.pkt_out[key]
        if any(r.out_owner[o] is p for _, p in returned):
            r.out_owner[o] = None
        for tx in kept:
            # header already downstream: finish the packet but flag it
            self._event(t, r.index, "split", f"pkt={tx.flit.packet.pid}")
            tx.flit.corrupted = True
            self._accept(r, o, tx.flit, t)
        ch.ddrm.counter = 0
        self.last_progress = t

    # -- bookkeeping -----------------------------------------------------------

    def in_flight(self) -> int:
        n = 0
        for r in self.routers:
            n += sum(len(b) for b in r.inputs)
            n += sum(len(ch.queue) for ch in r.channels)
            n += r.held
        return n

    def ledger(self) -> tuple[int, int, int, int]:
        return self.injected_flits, self.delivered_flits, self.in_flight(), self.dropped_flits

    def idle(self) -> bool:
        if self.injected_flits != self.delivered_flits + self.dropped_flits:
            return False
        return all(not r.source and not r.inj_flits for r in self.routers)

    def run(self, max_cycles: Optional[int] = None, check_ledger: bool = False) -> int:
        limit = self.cfg.max_cycles if max_cycles is None else max_cycles
        while self.cycle < limit and not self.idle():
            self.tick()
            if check_ledger:
                inj, dlv, fl, drp = self.ledger()
                assert inj == dlv + fl + drp, (self.cycle, inj, dlv, fl, drp)
            if self.cycle - self.last_progress > self.cfg.stuck_limit:
                self._event(self.cycle, -1, "stuck", f"in_flight={self.in_flight()}")
                break
        return self.cycle

    def event_lines(self) -> list[str]:
        return [
            json.dumps({"cycle": c, "router": k, "event": e, "detail": d}, sort_keys=True)
            for c, k, e, d in self.events
        ]


def pending_flits(net: Network) -> int:
    """Flits inside the network plus the rest of packets already being injected."""
    return net.in_flight() + sum(len(r.inj_flits) for r in net.routers)


def drain_bound(net: Network) -> int:
    """Cycles within which the network must empty once injection halts.

    Pending flits x longest minimal path (plus ejection) x worst per-hop
    latency (conservative pipeline, a mismatch round, two ARQ rounds).
    """
    zs, ys, xs = net.dims
    longest = (xs - 1) + (ys - 1) + (zs - 1) + 1
    return max(1, pending_flits(net)) * longest * 8


def drain(net: Network) -> int:
    """Halt injection and step until empty or past the bound; returns cycles used."""
    net.injecting = False
    bound = drain_bound(net)
    start = net.cycle
    while pending_flits(net) and net.cycle - start <= bound:
        net.tick()
    return net.cycle - start


def build_mesh(config: MeshConfig) -> Network:
    return Network(config)


def network_tick(net: Network) -> list[Packet]:
    """Advance one cycle; returns packets whose tail was ejected this cycle."""
    t = net.cycle
    net.tick()
    return [p for p in net.packets if p.eject == t]


def channel_transmit(net: Network, router: Router, port: int, flit: Flit, slot=None, input_port=LOCAL):
    """Send ``flit`` over one output and resolve the receipt immediately.

    Helper for testbenches: returns the decode status observed by the
    receiver of the first attempt.
    """
    tx = Transmission(flit, net.cycle, input_port, slot, "base")
    router.channels[port].send(tx)
    net.active_channels.add((router.index, port))
    mask = net._path_mask(router, port, tx)
    if mask and net.cfg.mode.ecc:
        return decode_flit(flit.word(True) ^ mask, True).status
    return DecodeStatus.CLEAN


def simulate(config: MeshConfig, schedule: Sequence[PacketSpec], plan: Optional[FaultPlan] = None,
             shuffle_seed: Optional[int] = None, check_ledger: bool = False) -> Network:
    net = build_mesh(config)
    if plan is None and config.hard_rate > 0:
        plan = plan_hard_faults(config)
    if plan is not None:
        net.apply_plan(plan)
    if shuffle_seed is not None:
        order = list(range(len(net.routers)))
        random.Random(shuffle_seed).shuffle(order)
        net.compute_order = order
    net.load(schedule)
    net.run(check_ledger=check_ledger)
    return net
