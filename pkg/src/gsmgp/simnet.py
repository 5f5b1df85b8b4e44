"""In-process star network with byte-exact message accounting.

Every payload that crosses a link is really serialised: full-precision
vectors as raw little-endian float64, quantized vectors as a fixed header
plus lattice indices packed at the width of the observed index range.
Receivers get the decoded bytes, not the sender's object, so anything the
codec cannot represent cannot leak across the network.

Wire format (little endian):

==========  ========  =====================================================
offset      size      field
==========  ========  =====================================================
0           1         kind: 0x00 full precision, 0x01 quantized
--- kind 0x00 ---
1           4         u32 entry count d
5           8*d       float64 entries
--- kind 0x01 ---
1           8         f64 lattice step delta
9           8         i64 minimum index
17          8         i64 index range (max - min, >= 0)
25          4         u32 entry count d
29          ceil(...)  d symbols of width max(1, bitlen(range)) bits,
                      MSB first, zero-padded to a byte boundary
==========  ========  =====================================================

Per-link statistics separate ``payload_bits`` (the information-bearing
symbols: 64 per float64 entry, the packed width per quantized entry) from
``total_bits`` (every byte on the wire including headers).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, ProtocolError
from .quant import QuantizedVector, bits_required

KIND_FULL = 0x00
KIND_QUANTIZED = 0x01

_FULL_HEAD = struct.Struct("<BI")
_QUANT_HEAD = struct.Struct("<BdqqI")


def _symbol_width(spread: int) -> int:
    return max(1, int(spread).bit_length()) if spread > 0 else 1


def encode(payload) -> bytes:
    """Serialise a float64 vector or a :class:`QuantizedVector`."""
    if isinstance(payload, QuantizedVector):
        spread = payload.max_index - payload.min_index
        width = _symbol_width(spread)
        head = _QUANT_HEAD.pack(
            KIND_QUANTIZED, payload.delta, payload.min_index, spread, len(payload)
        )
        rel = (payload.indices - payload.min_index).astype(np.uint64)
        shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
        bits = ((rel[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        return head + np.packbits(bits.ravel()).tobytes()
    vec = np.asarray(payload, dtype=np.float64).ravel()
    return _FULL_HEAD.pack(KIND_FULL, vec.shape[0]) + vec.astype("<f8").tobytes()


def decode(blob: bytes):
    """Inverse of :func:`encode`; raises :class:`CodecError` on malformed
    input."""
    if len(blob) < 1:
        raise CodecError("empty payload")
    kind = blob[0]
    if kind == KIND_FULL:
        if len(blob) < _FULL_HEAD.size:
            raise CodecError("truncated full-precision header")
        _, d = _FULL_HEAD.unpack_from(blob)
        body = blob[_FULL_HEAD.size :]
        if len(body) != 8 * d:
            raise CodecError(f"expected {8 * d} payload bytes, got {len(body)}")
        return np.frombuffer(body, dtype="<f8").copy()
    if kind == KIND_QUANTIZED:
        if len(blob) < _QUANT_HEAD.size:
            raise CodecError("truncated quantized header")
        _, delta, min_index, spread, d = _QUANT_HEAD.unpack_from(blob)
        if delta <= 0 or spread < 0:
            raise CodecError("invalid quantized header fields")
        width = _symbol_width(spread)
        body = blob[_QUANT_HEAD.size :]
        expect = (d * width + 7) // 8
        if len(body) != expect:
            raise CodecError(f"expected {expect} packed bytes, got {len(body)}")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8))[: d * width]
        weights = (np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64))
        rel = bits.reshape(d, width).astype(np.uint64) @ weights
        if d and int(rel.max()) > spread:
            raise CodecError("packed symbol exceeds the declared index range")
        idx = rel.astype(np.int64) + min_index
        lo = int(idx.min()) if d else min_index
        hi = int(idx.max()) if d else min_index
        return QuantizedVector(indices=idx, delta=delta, min_index=lo, max_index=hi)
    raise CodecError(f"unknown payload kind 0x{kind:02x}")


@dataclass(frozen=True)
class Message:
    """One transmission: direction kind, endpoints, payload, round index."""

    kind: str  # theta_down | zeta_up
    sender: str
    receiver: str
    payload: object
    round: int


@dataclass
class LinkStats:
    messages: int = 0
    payload_bits: int = 0
    total_bits: int = 0
    rounds: list = field(default_factory=list)  # (round, payload_bits, total_bits)


class SimNet:
    """Star topology bus: one hub node, N agent nodes, exactly-once
    in-order delivery, full per-link bit ledgers."""

    def __init__(self, hub: str, agents: list[str]):
        self.hub = hub
        self.nodes = {hub, *agents}
        if len(self.nodes) != len(agents) + 1:
            raise ProtocolError("node ids must be unique")
        self.stats: dict[tuple[str, str], LinkStats] = {}
        self._queues: dict[str, list[tuple[Message, bytes]]] = {n: [] for n in self.nodes}
        self._last_sent: dict[tuple[str, str], int] = {}
        self._last_polled: dict[str, int] = {n: 0 for n in self.nodes}

    def send(self, msg: Message) -> None:
        if msg.sender not in self.nodes or msg.receiver not in self.nodes:
            raise ProtocolError(f"unknown endpoint on {msg.sender}->{msg.receiver}")
        if msg.kind == "theta_down":
            if msg.sender != self.hub or msg.receiver == self.hub:
                raise ProtocolError("theta_down must go hub -> agent")
        elif msg.kind == "zeta_up":
            if msg.receiver != self.hub or msg.sender == self.hub:
                raise ProtocolError("zeta_up must go agent -> hub")
        else:
            raise ProtocolError(f"unknown message kind {msg.kind!r}")
        link = (msg.sender, msg.receiver)
        if msg.round <= self._last_sent.get(link, 0):
            raise ProtocolError(
                f"round {msg.round} not after round {self._last_sent.get(link, 0)} "
                f"on {msg.sender}->{msg.receiver}"
            )
        blob = encode(msg.payload)
        if isinstance(msg.payload, QuantizedVector):
            pbits = bits_required(msg.payload)
        else:
            pbits = 64 * np.asarray(msg.payload).size
        st = self.stats.setdefault(link, LinkStats())
        st.messages += 1
        st.payload_bits += pbits
        st.total_bits += 8 * len(blob)
        st.rounds.append((msg.round, pbits, 8 * len(blob)))
        self._last_sent[link] = msg.round
        self._queues[msg.receiver].append((msg, blob))

    def poll(self, receiver: str, round: int) -> list[Message]:
        """Deliver (once, in order) everything addressed to ``receiver``
        for ``round``.  Rounds must be polled in non-decreasing order."""
        if receiver not in self.nodes:
            raise ProtocolError(f"unknown receiver {receiver!r}")
        if round < self._last_polled[receiver]:
            raise ProtocolError(
                f"{receiver} polled round {round} after round "
                f"{self._last_polled[receiver]}"
            )
        self._last_polled[receiver] = round
        queue = self._queues[receiver]
        out, keep = [], []
        for msg, blob in queue:
            if msg.round == round:
                out.append(
                    Message(
                        kind=msg.kind,
                        sender=msg.sender,
                        receiver=msg.receiver,
                        payload=decode(blob),
                        round=msg.round,
                    )
                )
            else:
                keep.append((msg, blob))
        self._queues[receiver] = keep
        return out

    def uplink_payload_bits(self) -> int:
        return sum(
            st.payload_bits for (snd, rcv), st in self.stats.items() if rcv == self.hub
        )

    def downlink_payload_bits(self) -> int:
        return sum(
            st.payload_bits for (snd, rcv), st in self.stats.items() if snd == self.hub
        )

    def stats_rows(self) -> list[tuple]:
        """Flattened ledger: (sender, receiver, round, payload_bits,
        total_bits), ordered by link then round."""
        rows = []
        for (snd, rcv) in sorted(self.stats):
            for rnd, pb, tb in self.stats[(snd, rcv)].rounds:
                rows.append((snd, rcv, rnd, pb, tb))
        return rows
