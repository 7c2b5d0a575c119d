import itertools
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from ftnoc.flit import Coord3, DecodeStatus, Flit, FlitType, Port
from ftnoc.network import FaultPlan, MeshConfig, Mode, PacketSpec, fault_masks, simulate
from ftnoc.router import (
    BlodCrossbar, BufferFullError, DdrmPhase, DdrmState, RabBuffer, StageFlips, SwitchAllocator,
    crossbar_traverse, pipeline_tick, switch_allocate, vote,
)

from scenarios import cyclic_rab_scenario

CLEAN, CORR, UNC = DecodeStatus.CLEAN, DecodeStatus.CORRECTED, DecodeStatus.UNCORRECTABLE


class P:
    def __init__(self, pid):
        self.pid = pid


def flit(pkt, seq=0, kind=FlitType.HEAD):
    return Flit(pkt, seq, int(kind), Coord3(0, 0, 0))


# --- RAB ------------------------------------------------------------------------

def test_rab_examples():
    b = RabBuffer(4)
    a = flit(P(0))
    assert b.write(a) == 0
    b2 = RabBuffer(4, faulty=[0])
    assert b2.write(flit(P(1))) == 1
    b3 = RabBuffer(4, faulty=[3])
    for k in range(3):
        b3.write(flit(P(k)))
    with pytest.raises(BufferFullError):
        b3.write(flit(P(9)))


def test_rab_reads_skip_faulty_slot():
    b = RabBuffer(4)
    x, y, z = flit(P(0)), flit(P(1)), flit(P(2))
    b.write(x)
    b.write(y)
    b.read()
    b.write(z)
    b.mark_faulty(1)  # y moves to a healthy slot
    assert y.src_slot not in (1, None)
    assert [b.read(), b.read()] == [y, z]


@settings(max_examples=200)
@given(st.sets(st.integers(0, 3), max_size=3), st.lists(st.booleans(), max_size=60))
def test_rab_is_fifo_of_healthy_depth(faulty, ops):
    b = RabBuffer(4, faulty=faulty)
    ref = deque()
    cap = 4 - len(faulty)
    n = 0
    for is_write in ops:
        if is_write:
            f = flit(P(n))
            n += 1
            if len(ref) == cap:
                with pytest.raises(BufferFullError):
                    b.write(f)
            else:
                s = b.write(f)
                assert s not in faulty
                ref.append(f)
        else:
            got = b.read()
            assert got is (ref.popleft() if ref else None)
        assert len(b) == len(ref) <= cap
        assert all(b.slots[s] is None for s in faulty)


def test_rab_escape_returns_other_packet_header():
    b = RabBuffer(4)
    p1, p2 = P(1), P(2)
    for f in (flit(p1, 0), flit(p1, 1, FlitType.TAIL), flit(p2, 0), flit(p2, 1, FlitType.TAIL)):
        b.write(f)
    got = b.read(deadlock_escape=True, grantable=lambda f: f.packet is p2)
    assert got.packet is p2 and got.seq == 0
    assert b.read().packet is p1


# --- crossbar and allocator -----------------------------------------------------------

def test_crossbar_examples():
    x = BlodCrossbar(bypass_count=1)
    assert crossbar_traverse(x, {1: 0}) == ({1: (0, "base")}, [])
    x.faulty_links.update({(1, 0), (2, 3)})
    x.begin_cycle()
    done, waiting = crossbar_traverse(x, {1: 0, 2: 3})
    assert done == {1: (0, "bypass")} and waiting == [2]
    with pytest.raises(AssertionError):
        crossbar_traverse(x, {1: 0, 2: 0})


def test_allocator_examples():
    assert switch_allocate({3: 0}) == {3: 0}
    a = SwitchAllocator()
    first = a.allocate({1: 0, 2: 0})
    second = a.allocate({1: 0, 2: 0})
    assert len(first) == len(second) == 1 and set(first) | set(second) == {1, 2}
    perm = {i: (i + 2) % 7 for i in range(7)}
    assert a.allocate(perm) == perm


@given(st.dictionaries(st.integers(0, 6), st.integers(0, 6), min_size=1))
def test_allocator_matching_and_liveness(req):
    a = SwitchAllocator()
    served = set()
    for _ in range(7):
        g = a.allocate(req)
        assert len(set(g.values())) == len(g) and all(req[i] == o for i, o in g.items())
        assert set(g.values()) == set(req.values())
        served |= set(g)
    assert served == set(req)


# --- redundant pipeline --------------------------------------------------------------

def test_vote():
    assert vote(1, 1, 2) == 1 and vote(2, 1, 1) == 1 and vote(1, 2, 1) == 1
    assert vote(1, 2, 3) is None


def test_pipeline_fault_free_timing():
    r = pipeline_tick(3, 0)
    assert (r.npc, r.sa, r.mismatch_rounds, r.out_cycle) == (3, 0, 0, 4)
    assert pipeline_tick(3, 0, ct_mode="conservative").out_cycle == 5
    assert pipeline_tick(3, 0, redundant=False).out_cycle == 4


@pytest.mark.parametrize("ct_mode,base", [("speculative", 4), ("conservative", 5)])
def test_pipeline_exhaustive_flips(ct_mode, base):
    for bits in itertools.product((False, True), repeat=6):
        fl = StageFlips(*bits)
        npc_flips, sa_flips = bits[:3], bits[3:]
        r = pipeline_tick(5, 2, fl, ct_mode=ct_mode)

        def expect(v, first, second, third):
            a = v ^ 1 if first else v
            b = v ^ 2 if second else v
            if a == b:
                return a, False
            c = v ^ 4 if third else v
            vals = [a, b, c]
            win = next((u for u in vals if vals.count(u) >= 2), None)
            return win, True

        n, mm_n = expect(5, *npc_flips)
        s, mm_s = expect(2, *sa_flips)
        if n is None or s is None:
            assert r.retry and r.out_cycle is None
            continue
        assert not r.retry
        rounds = int(mm_n or mm_s)
        assert (r.npc, r.sa, r.mismatch_rounds) == (n, s, rounds)
        assert r.out_cycle == base + rounds
        if sum(npc_flips) <= 1 and sum(sa_flips) <= 1:
            assert (r.npc, r.sa) == (5, 2)


def test_pipeline_three_way_disagreement_retries():
    r = pipeline_tick(5, 2, StageFlips(npc=True, rnpc=True, npc3=True))
    assert r.retry and r.mismatched == ("npc",)


# --- DDRM state machine ---------------------------------------------------------------

def test_ddrm_transient_one_retransmission():
    d = DdrmState()
    assert d.step(UNC, 0, 1).retransmit
    assert d.step(CLEAN, 0, 1) == type(d.step(CLEAN, 0, 1))()
    assert d.phase is DdrmPhase.IDLE and d.counter == 0


def test_ddrm_buffer_diagnosis():
    d = DdrmState()
    d.step(UNC, 1, 2)
    a = d.step(UNC, 1, 2)
    assert d.phase is DdrmPhase.BUFFER_CHECKING and a.path == "skip_slot"
    a = d.step(CLEAN, 1, 3)
    assert a.rab_mark == (1, 2) and a.diagnosis == "buffer"


def test_ddrm_crossbar_then_channel():
    d = DdrmState()
    d.step(UNC, 1, 2)
    d.step(UNC, 1, 2)
    a = d.step(UNC, 1, 3)
    assert a.blod == "enable" and a.path == "bypass"
    assert d.step(CLEAN, 1, 3).diagnosis == "crossbar"
    d2 = DdrmState()
    for _ in range(3):
        d2.step(UNC, 1, 2)
    d2.step(UNC, 1, 2)
    a = d2.step(UNC, 1, 2)
    assert a.laft_faulty and a.blod == "release" and a.diagnosis == "channel"


def test_ddrm_without_bypass_skips_to_channel():
    d = DdrmState()
    d.step(UNC, 1, 2, bypass_available=False)
    d.step(UNC, 1, 2, bypass_available=False)
    a = d.step(UNC, 1, 2, bypass_available=False)
    assert a.laft_faulty and a.blod is None


# --- DDRM inside the network: 100 seeded trials per fault class ----------------------------

def ddrm_trial(kind, seed):
    """One packet stream over a faulty 2-router chain in FETO mode.

    Returns (diagnoses, net).  The fault sits at the sending router (0,0,0)
    on its East output path.
    """
    masks = fault_masks(seed)
    src = Coord3(0, 0, 0)
    plan = FaultPlan(seed=seed)
    slot = seed % 4
    if kind == "slot":
        plan.slots.append((src, Port.LOCAL, slot, masks["slot"]))
    elif kind == "link":
        plan.links.append((src, Port.LOCAL, Port.EAST, masks["link"]))
    else:
        plan.channels.append((src, Port.EAST, masks["channel"]))
    cfg = MeshConfig(dims=(1, 1, 2), mode=Mode.FETO, seed=seed, max_cycles=5000)
    sched = [PacketSpec(src, Coord3(1, 0, 0), 10)] * 3
    net = simulate(cfg, sched, plan, check_ledger=True)
    return net, slot


@pytest.mark.parametrize("kind", ["slot", "link", "channel"])
def test_ddrm_diagnoses_every_trial(kind):
    expected = {"slot": "buffer", "link": "crossbar", "channel": "channel"}[kind]
    for seed in range(100):
        net, slot = ddrm_trial(kind, seed)
        diags = [(d[3], d[4]) for d in net.diagnoses]
        assert diags, (kind, seed)
        cls, loc = diags[0]
        assert cls == expected, (kind, seed, diags)
        r0 = net.routers[0]
        if kind == "slot":
            assert loc == (int(Port.LOCAL), slot)
            assert r0.inputs[Port.LOCAL].slot_faulty[slot]
        elif kind == "link":
            assert loc == (int(Port.LOCAL), int(Port.EAST))
            assert (int(Port.LOCAL), int(Port.EAST)) in r0.xbar.faulty_links
        else:
            assert loc == int(Port.EAST)
            assert net.faults.is_faulty(Coord3(0, 0, 0), Port.EAST)
        if kind != "channel":
            assert all(p.delivered for p in net.packets)


# --- RAB deadlock escape on a 2x2x1 cyclic wait ---------------------------------------------

def test_rab_escape_breaks_cyclic_wait():
    net, p1, p2, release = cyclic_rab_scenario()
    kinds = [e[2] for e in net.events]
    assert "rab_escape" in kinds
    assert p1.delivered and p2.delivered
    assert p2.eject < p1.eject and release is not None
