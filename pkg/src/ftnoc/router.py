"""Router building blocks.

* :class:`RabBuffer` - input buffer with per-slot fault flags and
  packet-granular out-of-order reads for deadlock escape.
* :class:`BlodCrossbar` - 7x7 crossbar whose known-faulty links are served
  by a small pool of bypass channels bound on demand each cycle.
* :class:`SwitchAllocator` - per-output round-robin arbitration.
* :func:`pipeline_tick` - NPC/SA stage execution with redundant re-execution
  and three-way majority voting.
* :class:`DdrmState` - the online detection / diagnosis / recovery state
  machine driven by receiver ECC feedback.
* :class:`Router` - glues the above into one cycle of compute.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .flit import DecodeStatus, Flit, Port
from .routing import TIE_RANK, UnroutableError

N_PORTS = 7
LOCAL = int(Port.LOCAL)


class BufferFullError(Exception):
    pass


# --- Random Access Buffer ---------------------------------------------------

class RabBuffer:
    """Input buffer of ``depth`` slots, some of which may be flagged faulty.

    Logical FIFO order is kept in ``entries`` independently of the physical
    slot each flit occupies.  ``recovery`` holds flits handed back by a
    failed transmission; they are read before anything else and occupy no
    slot.
    """

    __slots__ = ("depth", "slot_faulty", "slots", "entries", "recovery", "stall", "_wp")

    def __init__(self, depth: int = 4, faulty: Iterable[int] = ()):
        self.depth = depth
        self.slot_faulty = [False] * depth
        for s in faulty:
            self.slot_faulty[s] = True
        self.slots: list[Optional[Flit]] = [None] * depth
        self.entries: list[Flit] = []
        self.recovery: deque[Flit] = deque()
        self.stall = 0
        self._wp = 0

    def __len__(self):
        return len(self.entries) + len(self.recovery)

    @property
    def healthy(self) -> int:
        return self.depth - sum(self.slot_faulty)

    @property
    def free_healthy(self) -> int:
        return sum(1 for s in range(self.depth) if not self.slot_faulty[s] and self.slots[s] is None)

    def write(self, flit: Flit) -> int:
        """Store ``flit`` in the next healthy free slot (circular write order)."""
        for k in range(self.depth):
            s = (self._wp + k) % self.depth
            if not self.slot_faulty[s] and self.slots[s] is None:
                self.slots[s] = flit
                flit.src_slot = s
                self.entries.append(flit)
                self._wp = (s + 1) % self.depth
                return s
        raise BufferFullError("no healthy free slot")

    def hold(self, flit: Flit):
        """Keep ``flit`` readable without a slot (its slot was flagged in transit)."""
        flit.src_slot = None
        self.entries.append(flit)

    def head(self) -> Optional[Flit]:
        if self.recovery:
            return self.recovery[0]
        return self.entries[0] if self.entries else None

    def candidates(self) -> list[Flit]:
        """Oldest flit of every packet present, oldest packet first."""
        seen = set()
        out = []
        for f in (*self.recovery, *self.entries):
            if f.packet not in seen:
                seen.add(f.packet)
                out.append(f)
        return out

    def remove(self, flit: Flit) -> Optional[int]:
        """Take ``flit`` out; returns the slot it occupied (None if it held none)."""
        if self.recovery and self.recovery[0] is flit:
            self.recovery.popleft()
            return None
        if flit in self.recovery:
            self.recovery.remove(flit)
            return None
        self.entries.remove(flit)
        s = flit.src_slot
        if s is not None and self.slots[s] is flit:
            self.slots[s] = None
            return s
        return None

    def read(self, deadlock_escape: bool = False,
             grantable: Optional[Callable[[Flit], bool]] = None) -> Optional[Flit]:
        """Pop the FIFO head, or under ``deadlock_escape`` the oldest flit of
        another packet for which ``grantable`` holds."""
        head = self.head()
        if head is None:
            return None
        pick = head
        if deadlock_escape and grantable is not None:
            for f in self.candidates():
                if f.packet is not head.packet and grantable(f):
                    pick = f
                    break
        self.remove(pick)
        return pick

    def mark_faulty(self, slot: int) -> bool:
        """Flag ``slot``; an occupant is moved to a healthy free slot if one
        exists, otherwise it stays readable without a slot.  True if newly
        flagged."""
        if self.slot_faulty[slot]:
            return False
        self.slot_faulty[slot] = True
        occupant = self.slots[slot]
        if occupant is not None:
            self.slots[slot] = None
            occupant.src_slot = None
            for s in range(self.depth):
                if not self.slot_faulty[s] and self.slots[s] is None:
                    self.slots[s] = occupant
                    occupant.src_slot = s
                    break
        return True


# --- Bypass Link on Demand crossbar ----------------------------------------

class BlodCrossbar:
    """Crossbar with ``bypass_count`` spare channels.

    ``faulty_links`` are base links known to be broken; a transfer over one
    of them must bind a bypass for the cycle.  Bindings are released at
    :meth:`begin_cycle`.
    """

    def __init__(self, bypass_count: int = 2, faulty_links: Iterable[tuple[int, int]] = ()):
        self.bypass_count = bypass_count
        self.faulty_links: set[tuple[int, int]] = set(faulty_links)
        self.bound: dict[int, tuple[int, int]] = {}

    def begin_cycle(self):
        self.bound.clear()

    def acquire(self, i: int, o: int) -> Optional[str]:
        """'base', 'bypass', or None when the link is broken and no bypass is free."""
        if (i, o) not in self.faulty_links:
            return "base"
        if len(self.bound) < self.bypass_count:
            self.bound[len(self.bound)] = (i, o)
            return "bypass"
        return None


def crossbar_traverse(xbar: BlodCrossbar, grants: dict[int, int]) -> tuple[dict, list]:
    """Resolve one cycle of granted (input -> output) pairs.

    Returns ``({input: (output, via)}, waiting_inputs)``.
    """
    outs = list(grants.values())
    assert len(set(outs)) == len(outs), f"grants are not a matching: {grants}"
    done, waiting = {}, []
    for i in sorted(grants):
        o = grants[i]
        via = xbar.acquire(i, o)
        if via is None:
            waiting.append(i)
        else:
            done[i] = (o, via)
    return done, waiting


# --- switch allocation --------------------------------------------------------

class SwitchAllocator:
    """Round-robin arbiter per output; each input requests at most one output."""

    def __init__(self, n: int = N_PORTS):
        self.n = n
        self.pointer = [0] * n

    def allocate(self, requests: dict[int, int]) -> dict[int, int]:
        by_out: dict[int, list[int]] = {}
        for i, o in requests.items():
            by_out.setdefault(o, []).append(i)
        grants = {}
        for o, ins in by_out.items():
            if len(ins) == 1:
                win = ins[0]
            else:
                p = self.pointer[o]
                win = min(ins, key=lambda i: (i - p) % self.n)
            grants[win] = o
            self.pointer[o] = (win + 1) % self.n
        return grants


def switch_allocate(requests: dict[int, int], allocator: Optional[SwitchAllocator] = None) -> dict[int, int]:
    return (allocator or SwitchAllocator()).allocate(requests)


# --- redundant pipeline -------------------------------------------------------

@dataclass(frozen=True)
class StageFlips:
    """Soft-error indicators for each stage execution of one flit.

    ``*3`` are the recomputations done on a mismatch.
    """
    npc: bool = False
    rnpc: bool = False
    npc3: bool = False
    sa: bool = False
    rsa: bool = False
    sa3: bool = False


NO_FLIPS = StageFlips()


def corrupt(value: int, execution: int) -> int:
    # each redundant execution corrupts a different bit, so two faulty copies never agree
    return value ^ (1 << execution)


def vote(a, b, c):
    if a == b or a == c:
        return a
    if b == c:
        return b
    return None


@dataclass(frozen=True)
class StageResult:
    npc: Optional[int]
    sa: Optional[int]
    mismatch_rounds: int
    mismatched: tuple[str, ...]
    retry: bool
    ct_cycle: Optional[int]
    out_cycle: Optional[int]
    corrupted: bool = False

    @property
    def delay(self) -> Optional[int]:
        """Cycles from the SA stage to arrival downstream."""
        return None if self.out_cycle is None else self.out_cycle - 2


def _run_stage(value, first, second, third):
    a = corrupt(value, 0) if first else value
    b = corrupt(value, 1) if second else value
    if a == b:
        return a, False, False, (a, b)
    c = corrupt(value, 2) if third else value
    return vote(a, b, c), True, vote(a, b, c) is None, (a, b, c)


def pipeline_tick(
    npc: Optional[int],
    sa: int,
    flips: StageFlips = NO_FLIPS,
    redundant: bool = True,
    ct_mode: str = "speculative",
) -> StageResult:
    """Execute NPC (header flits only; ``npc=None`` otherwise) and SA for one flit.

    Cycles are numbered from Buffer Writing = 1, so NPC/SA run in cycle 2.
    Without redundancy CT is cycle 3 and the flit is on the output in
    cycle 4; a flipped execution is committed silently.  With redundancy
    RNPC/RSA run in cycle 3; agreement lets CT run in cycle 3 (speculative)
    or 4 (conservative), and a mismatch triggers one recomputation round
    resolved by a majority of three, delaying CT by one cycle.  A three-way
    disagreement discards the results (``retry``) after using cycles 2-4.
    """
    if not redundant:
        bad = flips.sa or (npc is not None and flips.npc)
        n = None if npc is None else (corrupt(npc, 0) if flips.npc else npc)
        s = corrupt(sa, 0) if flips.sa else sa
        return StageResult(n, s, 0, (), False, 3, 4, corrupted=bad)
    mismatched = []
    retry = False
    n_out = None
    if npc is not None:
        n_out, mm, three, _ = _run_stage(npc, flips.npc, flips.rnpc, flips.npc3)
        if mm:
            mismatched.append("npc")
        retry |= three
    s_out, mm, three, _ = _run_stage(sa, flips.sa, flips.rsa, flips.sa3)
    if mm:
        mismatched.append("sa")
    retry |= three
    rounds = 1 if mismatched else 0
    if retry:
        return StageResult(None, None, rounds, tuple(mismatched), True, None, None)
    ct = (3 if ct_mode == "speculative" else 4) + rounds
    return StageResult(n_out, s_out, rounds, tuple(mismatched), False, ct, ct + 1)


# --- DDRM ---------------------------------------------------------------------

class DdrmPhase(Enum):
    IDLE = "idle"
    BUFFER_CHECKING = "buffer_checking"
    CROSSBAR_CHECKING = "crossbar_checking"


@dataclass
class DdrmActions:
    retransmit: bool = False
    # how the retransmission is routed: through the original buffer slot and
    # crossbar link ("same"), avoiding the suspect slot ("skip_slot"), or
    # over a bypass link ("bypass")
    path: str = "same"
    rab_mark: Optional[tuple[int, int]] = None
    blod: Optional[str] = None
    laft_faulty: bool = False
    diagnosis: Optional[str] = None


@dataclass
class DdrmState:
    """Per-output fault manager state.  ``counter`` is the ARQ counter."""

    phase: DdrmPhase = DdrmPhase.IDLE
    counter: int = 0
    suspect: Optional[tuple[int, Optional[int]]] = None  # (input port, buffer slot)

    def step(self, status: DecodeStatus, input_port: int, slot: Optional[int],
             bypass_available: bool = True, can_mark_channel: bool = True) -> DdrmActions:
        ok = status is not DecodeStatus.UNCORRECTABLE
        if self.phase is DdrmPhase.IDLE:
            if ok:
                self.counter = 0
                return DdrmActions()
            self.counter += 1
            if self.counter < 2:
                return DdrmActions(retransmit=True)
            self.phase = DdrmPhase.BUFFER_CHECKING
            self.suspect = (input_port, slot)
            if slot is None:
                # nothing to check in the buffer; go straight to the crossbar
                return self._enter_crossbar(bypass_available, can_mark_channel)
            return DdrmActions(retransmit=True, path="skip_slot")

        if self.phase is DdrmPhase.BUFFER_CHECKING:
            if ok:
                mark = self.suspect
                self._reset()
                return DdrmActions(rab_mark=mark, diagnosis="buffer")
            return self._enter_crossbar(bypass_available, can_mark_channel)

        # crossbar checking
        if ok:
            self._reset()
            return DdrmActions(diagnosis="crossbar")
        self.counter += 1
        if self.counter < 2:
            return DdrmActions(retransmit=True, path="bypass")
        self._reset()
        if not can_mark_channel:
            return DdrmActions(retransmit=True, path="bypass", blod="release")
        return DdrmActions(blod="release", laft_faulty=True, diagnosis="channel")

    def _enter_crossbar(self, bypass_available, can_mark_channel):
        self.counter = 0
        if not bypass_available and can_mark_channel:
            self._reset()
            return DdrmActions(laft_faulty=True, diagnosis="channel")
        self.phase = DdrmPhase.CROSSBAR_CHECKING
        return DdrmActions(retransmit=True, path="bypass", blod="enable")

    def _reset(self):
        self.phase = DdrmPhase.IDLE
        self.counter = 0
        self.suspect = None


def ddrm_step(state: DdrmState, status: DecodeStatus, input_port: int, slot: Optional[int],
              bypass_available: bool = True) -> DdrmActions:
    return state.step(status, input_port, slot, bypass_available)


# --- per-output channel with ARQ ---------------------------------------------

class Transmission:
    __slots__ = ("flit", "arrival", "input", "slot", "via", "path")

    def __init__(self, flit, arrival, input_port, slot, via):
        self.flit = flit
        self.arrival = arrival
        self.input = input_port
        self.slot = slot
        self.via = via
        self.path = "same"


class ArqChannel:
    """One router output: flits in flight plus the ARQ / DDRM state.

    The queue head is the retransmission buffer (``last_sent``); a
    retransmission pushes it and every flit behind it back by two cycles
    (one for the backward request, one to resend).
    """

    __slots__ = ("router", "port", "queue", "last_arrival", "ddrm", "retransmissions")

    def __init__(self, router, port):
        self.router = router
        self.port = port
        self.queue: deque[Transmission] = deque()
        self.last_arrival = -1
        self.ddrm = DdrmState()
        self.retransmissions = 0

    @property
    def last_sent(self) -> Optional[Flit]:
        return self.queue[0].flit if self.queue else None

    def send(self, tx: Transmission):
        if tx.arrival <= self.last_arrival:
            tx.arrival = self.last_arrival + 1
        self.last_arrival = tx.arrival
        self.queue.append(tx)

    def retransmit(self, now: int, path: str):
        head = self.queue[0]
        head.path = path
        shift = now + 2 - head.arrival
        for tx in self.queue:
            tx.arrival += shift
        self.last_arrival += shift
        self.retransmissions += 1


# --- the router ---------------------------------------------------------------

class Router:
    """State of one router and its per-cycle compute step.

    The network owns every router; :meth:`step` only mutates this router and
    pushes cross-router effects (credit returns, packet drops, events) into
    ``self.outbox`` for the network to commit.
    """

    def __init__(self, index, coord, config, ports_present, rng):
        self.index = index
        self.coord = coord
        self.cfg = config
        self.present = ports_present  # 7 bools: port leads somewhere
        self.inputs = [RabBuffer(config.buffer_depth) for _ in range(N_PORTS)]
        self.xbar = BlodCrossbar(config.bypass_count)
        self.alloc = SwitchAllocator()
        self.channels = [ArqChannel(self, p) for p in range(N_PORTS)]
        self.credits = [0] * N_PORTS
        self.out_owner: list = [None] * N_PORTS
        self.pkt_out: dict = {}  # (input, packet) -> reserved output
        self.pstall = [0] * N_PORTS
        self.rng = rng
        self.outbox: list = []
        self.events: list = []
        self.source: deque = deque()
        self.inj_packet = None
        self.inj_flits: list = []
        self.reinjecting = False
        self.stash: dict = {}  # packets absorbed for deadlock recovery
        self.held = 0  # flits sitting in ``stash`` or waiting for re-injection

    # -- helpers -------------------------------------------------------------

    def occupancy(self) -> int:
        return sum(len(b) for b in self.inputs)

    def _output_for(self, i, flit, t, net):
        """Output ``flit`` at input ``i`` wants, or None if it cannot move now."""
        if flit.is_head:
            o = flit.out_port
            here = self.coord
            if (o == LOCAL and here != flit.dest and flit.packet.absorb_at != self.index) or (o != LOCAL and not net.faults.usable(here, Port(o))):
                arrival = None if i == LOCAL else Port(i)
                try:
                    dec = net.route(here, flit.packet, arrival)
                except UnroutableError:
                    self.outbox.append(("drop", flit.packet))
                    self.events.append((t, self.index, "drop", f"pkt={flit.packet.pid}"))
                    return None
                o = flit.out_port = int(dec.new_next_port)
                self.events.append((t, self.index, "reroute", f"pkt={flit.packet.pid} out={Port(o).short}"))
            if self.out_owner[o] is not None or self._worm_ahead(o, flit.packet, net):
                return None
        else:
            o = self.pkt_out.get((i, flit.packet))
            if o is None:
                return None
        if o != LOCAL and self.credits[o] <= 0:
            return None
        if self.cfg.bypass_count == 0 and (i, o) in self.xbar.faulty_links:
            return None
        return o

    def _worm_ahead(self, o, pkt, net) -> bool:
        """True if flits of ``pkt`` still sit on output ``o`` or just past it.

        A header rerouted back over its own worm would queue behind its tail.
        """
        if o == LOCAL:
            return False
        if any(tx.flit.packet is pkt for tx in self.channels[o].queue):
            return True
        down = net.routers[net.nb[self.index][o]].inputs[o ^ 1]
        return any(f.packet is pkt for f in (*down.recovery, *down.entries))

    # -- one cycle -----------------------------------------------------------

    def step(self, t, net):
        cfg = self.cfg
        self.xbar.begin_cycle()
        requests = {}
        chosen = {}
        for i in range(N_PORTS):
            buf = self.inputs[i]
            head = buf.head()
            if head is None or self.pstall[i] > t:
                continue
            if head.packet.dropped:
                self._discard(i, head, t)
                continue
            if head.ready > t:
                continue
            o = self._output_for(i, head, t, net)
            pick = head
            if o is None and buf.stall >= cfg.deadlock_threshold:
                for f in buf.candidates():
                    if f.packet is head.packet or f.ready > t or f.packet.dropped:
                        continue
                    if f.is_head or (i, f.packet) in self.pkt_out:
                        o2 = self._output_for(i, f, t, net)
                        if o2 is not None:
                            o, pick = o2, f
                            break
            if o is None and buf.stall >= cfg.deadlock_threshold and head.is_head and i != LOCAL:
                o = self._unblock(i, head, t, net)
            if o is None:
                buf.stall += 1
                continue
            requests[i] = o
            chosen[i] = pick

        if requests:
            grants = self.alloc.allocate(requests)
            for i in sorted(grants):
                self._transfer(i, grants[i], chosen[i], t, net)
            for i in requests:
                if i not in grants:
                    self.inputs[i].stall += 1
        self._inject(t, net)

    def _unblock(self, i, head, t, net):
        """Last-resort moves for a header blocked for a long time.

        First another free minimal output is tried; past ``absorb_threshold``
        the packet is pulled into the local interface and re-injected later.
        """
        here = self.coord
        buf = self.inputs[i]
        pkt = head.packet
        if here != head.dest:
            for p in sorted(net.productive_ports(here, pkt), key=TIE_RANK.__getitem__):
                p = int(p)
                if (p != head.out_port and net.faults.usable(here, Port(p))
                        and self.out_owner[p] is None and self.credits[p] > 0
                        and not self._worm_ahead(p, pkt, net)):
                    head.out_port = p
                    if pkt.absorb_at == self.index:
                        pkt.absorb_at = None
                    self.events.append((t, self.index, "reroute", f"pkt={pkt.pid} out={Port(p).short}"))
                    return p
            if buf.stall >= self.cfg.absorb_threshold and self.out_owner[LOCAL] is None:
                head.out_port = LOCAL
                pkt.absorb_at = self.index
                self.events.append((t, self.index, "escape", f"pkt={pkt.pid} absorb"))
                return LOCAL
        return None

    def _flips(self, header: bool) -> StageFlips:
        p = self.cfg.soft_rate
        if p <= 0:
            return NO_FLIPS
        r = self.rng.random
        if header:
            return StageFlips(r() < p, r() < p, r() < p, r() < p, r() < p, r() < p)
        return StageFlips(sa=r() < p, rsa=r() < p, sa3=r() < p)

    def _transfer(self, i, o, flit, t, net):
        cfg = self.cfg
        buf = self.inputs[i]
        via = self.xbar.acquire(i, o)
        if via is None:
            buf.stall += 1
            return
        header = flit.is_head
        next_port = None
        if header and o != LOCAL:
            try:
                n = net.neighbor_coord(self.coord, o)
                next_port = int(net.route(n, flit.packet, Port(o).opposite).new_next_port)
            except UnroutableError:
                self.outbox.append(("drop", flit.packet))
                self.events.append((t, self.index, "drop", f"pkt={flit.packet.pid}"))
                return
        res = pipeline_tick(
            next_port if header and o != LOCAL else None,
            o,
            self._flips(header and o != LOCAL),
            redundant=cfg.mode.voting,
            ct_mode=cfg.ct_mode,
        )
        if res.mismatch_rounds:
            flit.packet.mismatches += 1
            self.events.append((t, self.index, "vote_mismatch", "+".join(res.mismatched)))
        if res.retry:
            self.events.append((t, self.index, "vote_retry", f"pkt={flit.packet.pid}"))
            self.pstall[i] = t + 3
            return
        if res.corrupted:
            flit.corrupted = True
        if buf.head() is flit:
            buf.stall = 0
        elif flit.is_head:
            self.events.append((t, self.index, "rab_escape", f"pkt={flit.packet.pid}"))
        slot = buf.remove(flit)
        if slot is not None and i != LOCAL:
            self.outbox.append(("credit", i))
        if header:
            if next_port is not None:
                flit.next_port = next_port
            if not flit.is_tail:
                self.out_owner[o] = flit.packet
                self.pkt_out[(i, flit.packet)] = o
        elif flit.is_tail:
            self.out_owner[o] = None
            self.pkt_out.pop((i, flit.packet), None)
        if o != LOCAL:
            self.credits[o] -= 1
        self.pstall[i] = t + 1 + res.mismatch_rounds
        self.channels[o].send(Transmission(flit, t + res.delay, i, slot, via))
        net.active_channels.add((self.index, o))

    def _discard(self, i, flit, t):
        buf = self.inputs[i]
        freed = buf.remove(flit)
        if freed is not None and i != LOCAL:
            self.outbox.append(("credit", i))
        self.outbox.append(("dropped_flit", flit))
        if flit.is_tail and (i, flit.packet) in self.pkt_out:
            o = self.pkt_out.pop((i, flit.packet))
            self.out_owner[o] = None

    def _inject(self, t, net):
        buf = self.inputs[LOCAL]
        if not self.inj_flits:
            if not self.source:
                return
            # with injection halted only absorbed packets re-enter the network
            if not net.injecting and self.source[0] not in self.stash:
                return
            pkt = self.source.popleft()
            stash = self.stash.pop(pkt, None)
            self.reinjecting = stash is not None
            self.inj_flits = stash if stash is not None else net.make_flits(pkt, self)
        if buf.free_healthy == 0:
            return
        flit = self.inj_flits[0]
        pkt = flit.packet
        if flit.is_head and not pkt.dropped:
            try:
                dec = net.route(self.coord, pkt)
            except UnroutableError:
                self.outbox.append(("drop", pkt))
                self.events.append((t, self.index, "drop", f"pkt={pkt.pid}"))
                pkt.dropped = True  # only this router holds the packet
            else:
                flit.out_port = flit.next_port = int(dec.new_next_port)
                if pkt.absorb_at is None:
                    pkt.inject = t
                    self.events.append((t, self.index, "inject", f"pkt={pkt.pid}"))
                pkt.absorb_at = None
        if pkt.dropped:
            if self.reinjecting:
                # absorbed flits were already counted as injected
                self.held -= len(self.inj_flits)
                for f in self.inj_flits:
                    self.outbox.append(("dropped_flit", f))
            self.inj_flits = []
            return
        self.inj_flits.pop(0)
        flit.ready = t + 1
        buf.write(flit)
        if self.reinjecting:
            self.held -= 1
        else:
            net.injected_flits += 1
