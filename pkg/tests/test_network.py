import random

import pytest

from ftnoc.flit import ConfigError, Coord3, DecodeStatus, Port, decode_protected, encode_protected
from ftnoc.network import (
    FaultPlan, MeshConfig, Mode, Packet, PacketSpec, build_mesh, channel_transmit, fault_masks,
    drain, drain_bound, is_connected, mesh_channels, pending_flits, network_tick, plan_hard_faults, simulate,
)
from ftnoc.routing import manhattan
from ftnoc.traffic import gen_transpose, gen_uniform


def test_mesh_sizes():
    for dims, routers, channels in [((2, 2, 2), 8, 12), ((1, 1, 1), 1, 0), ((4, 4, 4), 64, 144)]:
        net = build_mesh(MeshConfig(dims=dims))
        assert len(net.routers) == routers
        assert len(mesh_channels(dims)) == channels
    # edge count formula for an arbitrary box
    z, y, x = 2, 3, 5
    assert len(mesh_channels((z, y, x))) == (x - 1) * y * z + x * (y - 1) * z + x * y * (z - 1)


@pytest.mark.parametrize("bad", [dict(dims=(0, 2, 2)), dict(hard_rate=1.0), dict(soft_rate=-0.1),
                                 dict(buffer_depth=0), dict(ct_mode="eager"), dict(fault_sites=("wire",))])
def test_config_errors_name_the_key(bad):
    key = next(iter(bad))
    with pytest.raises(ConfigError, match=key):
        MeshConfig(**bad)


def test_empty_network_tick():
    net = build_mesh(MeshConfig(dims=(2, 2, 2)))
    assert network_tick(net) == [] and net.cycle == 1 and net.events == []


def test_zero_rate_plan_is_empty():
    assert len(plan_hard_faults(MeshConfig(dims=(4, 4, 4)))) == 0


def test_fault_rate_law_of_large_numbers():
    cfg = MeshConfig(dims=(4, 4, 4), strict=False)
    net = build_mesh(cfg)
    ports = [sum(1 for p in range(7) if p == 6 or net.nb[k][p] >= 0) for k in range(64)]
    # every slot of every present port, every in x out crossbar link, every channel
    total = 4 * sum(ports) + sum(p * p for p in ports) + 144
    fracs = [len(plan_hard_faults(cfg, seed=s, hard_rate=1 / 3)) / total for s in range(100)]
    assert abs(sum(fracs) / len(fracs) - 1 / 3) < 0.03


def test_strict_plans_connected_and_deterministic():
    cfg = MeshConfig(dims=(4, 4, 4), hard_rate=0.33, seed=5)
    a, b = plan_hard_faults(cfg), plan_hard_faults(cfg)
    assert a.to_json() == b.to_json()
    assert is_connected(cfg.dims, [(c, p) for c, p, _ in a.channels])
    assert FaultPlan.from_json(a.to_json()).to_json() == a.to_json()


def test_fault_masks_never_decode_silently():
    rng = random.Random(0)
    for seed in range(20):
        m = fault_masks(seed)
        combos = {m["slot"], m["link"], m["channel"], m["slot"] ^ m["link"], m["slot"] ^ m["channel"],
                  m["link"] ^ m["channel"], m["slot"] ^ m["link"] ^ m["channel"]}
        for mask in combos:
            w = encode_protected(rng.getrandbits(32))
            assert decode_protected(w ^ mask)[0] is DecodeStatus.UNCORRECTABLE
            for k in range(44):
                assert decode_protected(w ^ mask ^ (1 << k))[0] is DecodeStatus.UNCORRECTABLE


def test_channel_transmit():
    cfg = MeshConfig(dims=(1, 1, 2), mode=Mode.FETO)
    net = build_mesh(cfg)
    pkt_flit = net.make_flits(Packet(0, Coord3(0, 0, 0), Coord3(1, 0, 0), 1), net.routers[0])[0]
    assert channel_transmit(net, net.routers[0], int(Port.EAST), pkt_flit) is DecodeStatus.CLEAN
    plan = FaultPlan(channels=[(Coord3(0, 0, 0), Port.EAST, fault_masks(0)["channel"])])
    net2 = build_mesh(cfg)
    net2.apply_plan(plan)
    assert channel_transmit(net2, net2.routers[0], int(Port.EAST), pkt_flit) is DecodeStatus.UNCORRECTABLE


def test_transient_single_flip_is_corrected_without_arq():
    # a channel soft error flips one bit; ECC repairs it in place
    cfg = MeshConfig(dims=(1, 1, 2), mode=Mode.SER, soft_rate=0.3, seed=3)
    net = simulate(cfg, [PacketSpec(Coord3(0, 0, 0), Coord3(1, 0, 0), 10)] * 20, check_ledger=True)
    assert all(p.delivered for p in net.packets)
    assert not any(e[2] == "arq" for e in net.events)


def test_adjacent_packet_hand_trace():
    """Header at cycle t is written at the source local input (BW), computes
    NPC/SA in t+1, leaves on cycle t+3 and is written downstream; ejection
    adds one more router pass.  Body flits follow one per cycle."""
    cfg = MeshConfig(dims=(1, 1, 2), mode=Mode.FTO)
    net = simulate(cfg, [PacketSpec(Coord3(0, 0, 0), Coord3(1, 0, 0), 1)])
    p = net.packets[0]
    # inject at 0 (BW), SA at 1, arrive downstream at 1 + 2 = 3 (BW there),
    # SA at 4, on the local output at 4 + 2 = 6
    assert (p.inject, p.eject, p.hops) == (0, 6, 1)
    net10 = simulate(cfg, [PacketSpec(Coord3(0, 0, 0), Coord3(1, 0, 0), 10)])
    assert net10.packets[0].eject == 6 + 9


def test_zero_fault_hops_are_manhattan():
    dims = (3, 3, 3)
    net = simulate(MeshConfig(dims=dims, mode=Mode.FTO), gen_uniform(dims, 0, 8), check_ledger=True)
    assert all(p.delivered and p.hops == manhattan(p.src, p.dest) for p in net.packets)


def test_determinism_and_ledger():
    dims = (3, 3, 3)
    cfg = MeshConfig(dims=dims, mode=Mode.FETO, hard_rate=0.2, soft_rate=0.2, seed=4)
    sched = gen_uniform(dims, 4, 8)
    a = simulate(cfg, sched, check_ledger=True)
    b = simulate(cfg, sched, check_ledger=True)
    assert a.event_lines() == b.event_lines()
    assert a.injected_flits == a.delivered_flits + a.dropped_flits


@pytest.mark.parametrize("mode", [Mode.BASELINE, Mode.FETO])
def test_evaluation_order_independence(mode):
    dims = (3, 3, 3)
    cfg = MeshConfig(dims=dims, mode=mode, hard_rate=0.2, soft_rate=0.1, seed=2)
    sched = gen_uniform(dims, 2, 6)
    ref = simulate(cfg, sched).event_lines()
    for s in range(3):
        assert simulate(cfg, sched, shuffle_seed=s).event_lines() == ref


@pytest.mark.parametrize("mode,hr,sr", [(Mode.FTO, 0.0, 0.0), (Mode.FETO, 0.2, 0.2)])
def test_drain_within_bound(mode, hr, sr):
    dims = (3, 3, 3)
    net = build_mesh(MeshConfig(dims=dims, mode=mode, hard_rate=hr, soft_rate=sr, seed=1))
    if hr:
        net.apply_plan(plan_hard_faults(net.cfg))
    net.load(gen_uniform(dims, 1, 32))
    for _ in range(150):
        net.tick()
    bound = drain_bound(net)
    used = drain(net)  # packets already started still finish injecting
    assert pending_flits(net) == 0
    assert used <= bound


def test_baseline_soft_errors_corrupt_silently():
    dims = (2, 2, 2)
    net = simulate(MeshConfig(dims=dims, mode=Mode.BASELINE, soft_rate=0.2, seed=0), gen_uniform(dims, 0, 16))
    assert any(p.corrupted for p in net.packets)
    assert not any(e[2] == "arq" for e in net.events)


def test_transpose_skips_fixed_points():
    dims = (4, 4, 4)
    skipped = []
    sched = gen_transpose(dims, 0, skipped=skipped)
    assert len(sched) == 10 * (64 - len(skipped)) and len(skipped) == 16
