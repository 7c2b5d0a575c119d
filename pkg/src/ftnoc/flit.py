"""Flit layout, SEC-DED coding and packetization.

Bit layout of a 44-bit flit word, most-significant bit first::

    [ header 14 ][ payload 18 | 30 ][ parity 12 | 0 ]

    header = [type 2][next_port 3][z 3][y 3][x 3]

With ECC on, the 32 header+payload bits are split into a high and a low
16-bit half.  Each half gets a SEC-DED Hamming (22,16) check word (five
Hamming checks plus one overall parity bit); the parity field is
``check(high) << 6 | check(low)``.  With ECC off the payload widens to 30
bits and there is no parity field.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Optional, Sequence

FLIT_BITS = 44
HEADER_BITS = 14
PROTECTED_BITS = 32
HALF_BITS = 16
CHECK_BITS = 6
PARITY_BITS = 2 * CHECK_BITS
COORD_BITS = 3
MAX_AXIS = 1 << COORD_BITS


class ConfigError(ValueError):
    """Raised for invalid simulator configuration or flit contents."""


class Coord3(NamedTuple):
    x: int
    y: int
    z: int

    def __str__(self):
        return f"({self.x},{self.y},{self.z})"


class Port(IntEnum):
    EAST = 0    # +X
    WEST = 1    # -X
    NORTH = 2   # +Y
    SOUTH = 3   # -Y
    UP = 4      # +Z
    DOWN = 5    # -Z
    LOCAL = 6

    @property
    def opposite(self) -> "Port":
        if self is Port.LOCAL:
            return Port.LOCAL
        return Port(self.value ^ 1)

    @property
    def short(self) -> str:
        return "EWNSUDL"[self.value]


NETWORK_PORTS = tuple(Port)[:6]
PORT_DELTA = {
    Port.EAST: (1, 0, 0),
    Port.WEST: (-1, 0, 0),
    Port.NORTH: (0, 1, 0),
    Port.SOUTH: (0, -1, 0),
    Port.UP: (0, 0, 1),
    Port.DOWN: (0, 0, -1),
}


class FlitType(IntEnum):
    BODY = 0b00
    HEAD = 0b01
    TAIL = 0b10
    HEAD_TAIL = 0b11

    @property
    def is_head(self) -> bool:
        return bool(self.value & 0b01)

    @property
    def is_tail(self) -> bool:
        return bool(self.value & 0b10)


class DecodeStatus(Enum):
    CLEAN = "clean"
    CORRECTED = "corrected"
    UNCORRECTABLE = "uncorrectable"


@dataclass(frozen=True)
class FlitFields:
    flit_type: FlitType
    dest: Coord3
    next_port: Port
    payload: int = 0


@dataclass(frozen=True)
class DecodeOutcome:
    status: DecodeStatus
    fields: Optional[FlitFields] = None

    @property
    def needs_retransmit(self) -> bool:
        return self.status is DecodeStatus.UNCORRECTABLE


def payload_width(ecc: bool) -> int:
    return FLIT_BITS - HEADER_BITS - (PARITY_BITS if ecc else 0)


# --- Hamming (22,16) SEC-DED ------------------------------------------------
# Hamming positions 1..21; checks sit at the powers of two, data fills the rest.

_DATA_POSITIONS = [p for p in range(1, 22) if p & (p - 1)]
_POS_TO_DATA_BIT = {p: i for i, p in enumerate(_DATA_POSITIONS)}
_CHECK_MASKS = [
    sum(1 << i for i, p in enumerate(_DATA_POSITIONS) if p & (1 << j)) for j in range(5)
]
assert len(_DATA_POSITIONS) == HALF_BITS


def _parity(v: int) -> int:
    return v.bit_count() & 1


def secded_check(data: int) -> int:
    """Six check bits for a 16-bit half: bits 0..4 Hamming, bit 5 overall parity."""
    c = 0
    for j, m in enumerate(_CHECK_MASKS):
        c |= _parity(data & m) << j
    return c | ((_parity(data) ^ _parity(c)) << 5)


def secded_decode(data: int, check: int) -> tuple[DecodeStatus, int]:
    """Decode one 22-bit half; returns (status, corrected data)."""
    recomputed = secded_check(data)
    syndrome = (recomputed ^ check) & 0x1F
    overall = _parity(data) ^ _parity(check)
    if overall == 0:
        if syndrome == 0:
            return DecodeStatus.CLEAN, data
        return DecodeStatus.UNCORRECTABLE, data
    # odd number of flips: correctable iff exactly one
    if syndrome == 0 or (syndrome & (syndrome - 1)) == 0:
        return DecodeStatus.CORRECTED, data  # parity or Hamming check bit hit
    bit = _POS_TO_DATA_BIT.get(syndrome)
    if bit is None:
        return DecodeStatus.UNCORRECTABLE, data
    return DecodeStatus.CORRECTED, data ^ (1 << bit)


def encode_protected(data: int) -> int:
    """Encode 32 protected bits into a 44-bit codeword."""
    if not 0 <= data < 1 << PROTECTED_BITS:
        raise ConfigError(f"protected data {data:#x} exceeds {PROTECTED_BITS} bits")
    hi, lo = data >> HALF_BITS, data & 0xFFFF
    return (data << PARITY_BITS) | (secded_check(hi) << CHECK_BITS) | secded_check(lo)


def decode_protected(word: int) -> tuple[DecodeStatus, Optional[int]]:
    data = word >> PARITY_BITS
    hi, lo = data >> HALF_BITS, data & 0xFFFF
    s_hi, hi = secded_decode(hi, (word >> CHECK_BITS) & 0x3F)
    s_lo, lo = secded_decode(lo, word & 0x3F)
    if DecodeStatus.UNCORRECTABLE in (s_hi, s_lo):
        return DecodeStatus.UNCORRECTABLE, None
    if DecodeStatus.CORRECTED in (s_hi, s_lo):
        return DecodeStatus.CORRECTED, (hi << HALF_BITS) | lo
    return DecodeStatus.CLEAN, data


def half_positions(half: int) -> list[int]:
    """Codeword bit positions belonging to protected half 0 (low) or 1 (high)."""
    base = PARITY_BITS + HALF_BITS * half
    return list(range(base, base + HALF_BITS)) + list(
        range(CHECK_BITS * half, CHECK_BITS * half + CHECK_BITS)
    )


# --- header / flit words ----------------------------------------------------

def pack_header(flit_type: FlitType, dest: Coord3, next_port: Port) -> int:
    for v in dest:
        if not 0 <= v < MAX_AXIS:
            raise ConfigError(f"destination {dest} does not fit {COORD_BITS}-bit fields")
    return (
        (int(flit_type) << 12)
        | (int(next_port) << 9)
        | (dest.z << 6)
        | (dest.y << 3)
        | dest.x
    )


def unpack_header(header: int) -> tuple[FlitType, Coord3, Port]:
    port = (header >> 9) & 0b111
    if port > Port.LOCAL:
        port = Port.LOCAL  # 0b111 is unused; only reachable through corruption
    dest = Coord3(header & 0b111, (header >> 3) & 0b111, (header >> 6) & 0b111)
    return FlitType(header >> 12), dest, Port(port)


def encode_flit(fields: FlitFields, ecc: bool = True) -> int:
    width = payload_width(ecc)
    if not 0 <= fields.payload < 1 << width:
        raise ConfigError(f"payload {fields.payload:#x} overflows {width} bits")
    data = (pack_header(fields.flit_type, fields.dest, fields.next_port) << width) | fields.payload
    return encode_protected(data) if ecc else data


def decode_flit(word: int, ecc: bool = True) -> DecodeOutcome:
    width = payload_width(ecc)
    if ecc:
        status, data = decode_protected(word & ((1 << FLIT_BITS) - 1))
        if data is None:
            return DecodeOutcome(status)
    else:
        status, data = DecodeStatus.CLEAN, word
    ftype, dest, port = unpack_header(data >> width)
    return DecodeOutcome(status, FlitFields(ftype, dest, port, data & ((1 << width) - 1)))


# --- simulator flits and packetization --------------------------------------

class Flit:
    """A flit in flight inside the simulator.

    ``out_port`` is the output to take at the router currently holding the
    flit (computed one hop upstream); ``next_port`` is filled in by NPC for
    the following router.  ``corrupted`` is simulator-side ground truth used
    only when the modelled hardware cannot detect an error itself.
    """

    __slots__ = (
        "packet", "seq", "flit_type", "dest", "payload",
        "out_port", "next_port", "corrupted", "src_slot", "ready",
    )

    def __init__(self, packet, seq, flit_type, dest, payload=0, out_port=Port.LOCAL):
        self.packet = packet
        self.seq = seq
        self.flit_type = flit_type
        self.dest = dest
        self.payload = payload
        self.out_port = out_port
        self.next_port = out_port
        self.corrupted = False
        self.src_slot = None
        self.ready = 0

    @property
    def is_head(self) -> bool:
        return self.flit_type & 1 == 1

    @property
    def is_tail(self) -> bool:
        return self.flit_type & 2 == 2

    def fields(self) -> FlitFields:
        return FlitFields(FlitType(self.flit_type), self.dest, Port(self.out_port), self.payload)

    def word(self, ecc: bool) -> int:
        return encode_flit(self.fields(), ecc)

    def __repr__(self):
        return (f"Flit(pkt={getattr(self.packet, 'pid', self.packet)}, seq={self.seq}, "
                f"type={FlitType(self.flit_type).name}, out={Port(self.out_port).name})")


def packetize(
    source: Coord3,
    dest: Coord3,
    packet_len: int,
    payload: int = 0,
    ecc: bool = True,
    next_port: Optional[Port] = None,
    packet=None,
) -> list[Flit]:
    """Split ``payload`` (``packet_len * width`` bits, first flit most
    significant) into a Header ... Tail flit list.

    ``next_port`` is the output the header takes at the source router; by
    default it is chosen by LAFT selection on a fault-free mesh.
    """
    if packet_len < 1:
        raise ConfigError("packet_len must be >= 1")
    width = payload_width(ecc)
    if not 0 <= payload < 1 << (width * packet_len):
        raise ConfigError(f"payload overflows {packet_len} x {width} bits")
    if next_port is None:
        from .routing import FaultMap, select_port

        dims = (max(source.z, dest.z) + 1, max(source.y, dest.y) + 1, max(source.x, dest.x) + 1)
        next_port = select_port(source, dest, FaultMap(dims)).new_next_port
    flits = []
    mask = (1 << width) - 1
    for k in range(packet_len):
        if packet_len == 1:
            ftype = FlitType.HEAD_TAIL
        elif k == 0:
            ftype = FlitType.HEAD
        elif k == packet_len - 1:
            ftype = FlitType.TAIL
        else:
            ftype = FlitType.BODY
        chunk = (payload >> (width * (packet_len - 1 - k))) & mask
        flits.append(Flit(packet, k, int(ftype), dest, chunk, next_port))
    return flits


def depacketize(flits: Sequence[Flit], ecc: bool = True) -> int:
    width = payload_width(ecc)
    out = 0
    for f in sorted(flits, key=lambda f: f.seq):
        out = (out << width) | f.payload
    return out
