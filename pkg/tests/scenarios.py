"""Hand-built network situations shared by the unit and acceptance tests."""

from ftnoc.flit import Coord3, Port
from ftnoc.network import MeshConfig, Mode, Packet, build_mesh

A, B, C, D = Coord3(0, 0, 0), Coord3(1, 0, 0), Coord3(1, 1, 0), Coord3(0, 1, 0)


def cyclic_rab_scenario(deadlock_threshold=16, max_cycles=2000):
    """Two packets queued in one buffer behind a cyclic wait on a 2x2x1 mesh.

    Router B's West input holds P1 (to C, needs B's North output) followed
    by P2 (to B itself).  B's North output is reserved by a third packet Q
    that only releases it after P2 has been delivered, so P1 waits on Q, Q
    waits on P2 and P2 waits behind P1.  Only an out-of-order buffer read
    breaks the cycle.  Returns (net, p1, p2, release_cycle).
    """
    cfg = MeshConfig(dims=(1, 2, 2), mode=Mode.FTO, deadlock_threshold=deadlock_threshold,
                     absorb_threshold=10**9)
    net = build_mesh(cfg)
    rb = net.routers[net.index[B]]
    ra = net.routers[net.index[A]]
    p1, p2, q = Packet(0, A, C, 2), Packet(1, A, B, 2), Packet(2, B, D, 2)
    net.packets = [p1, p2]
    buf = rb.inputs[Port.WEST]
    for pkt, out in ((p1, Port.NORTH), (p2, Port.LOCAL)):
        pkt.inject = 0
        pkt.hops = 1
        flits = net.make_flits(pkt, ra)
        flits[0].out_port = int(out)
        for f in flits:
            buf.write(f)
            ra.credits[Port.EAST] -= 1
            net.injected_flits += 1
    rb.out_owner[Port.NORTH] = q
    release = None
    while net.cycle < max_cycles and not all(p.eject is not None for p in (p1, p2)):
        net.tick()
        if release is None and p2.eject is not None:
            release = net.cycle
            rb.out_owner[Port.NORTH] = None
        assert net.injected_flits == net.delivered_flits + net.in_flight() + net.dropped_flits
    return net, p1, p2, release
