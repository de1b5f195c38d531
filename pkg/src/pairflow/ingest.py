"""Capture ingest: decode files into RawPacket streams and buffer them into time windows.

Timestamps are normalized to capture-relative seconds at decode time so all
downstream math is wall-clock free. Application metadata is sniffed from
content on any port, never from port numbers alone.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from . import appproto, pcapio
from .records import CaptureLabel, IpProto, RawPacket, WindowBatch

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD


@dataclass
class DecodeReport:
    n_records: int = 0
    n_packets: int = 0
    n_skipped_non_ip: int = 0
    n_failed: int = 0


def _decode_ipv4(frame: bytes, offset: int, pkt: RawPacket) -> bool:
    ip = frame[offset:]
    if len(ip) < 20:
        return False
    ihl = (ip[0] & 0x0F) * 4
    total_len = struct.unpack(">H", ip[2:4])[0]
    pkt.ttl = ip[8]
    proto = ip[9]
    pkt.src_addr = ".".join(str(b) for b in ip[12:16])
    pkt.dst_addr = ".".join(str(b) for b in ip[16:20])
    body = ip[ihl:total_len]
    if proto == 6:
        pkt.ip_proto = IpProto.TCP
        _decode_tcp(body, pkt)
    elif proto == 17:
        pkt.ip_proto = IpProto.UDP
        _decode_udp(body, pkt)
    elif proto == 1:
        pkt.ip_proto = IpProto.ICMP
        _decode_icmp(body, pkt)
    else:
        pkt.ip_proto = IpProto.OTHER
    return True


def _decode_ipv6(frame: bytes, offset: int, pkt: RawPacket) -> bool:
    ip = frame[offset:]
    if len(ip) < 40:
        return False
    payload_len = struct.unpack(">H", ip[4:6])[0]
    nxt = ip[6]
    pkt.ttl = ip[7]  # hop limit
    pkt.src_addr = ip[8:24].hex()
    pkt.dst_addr = ip[24:40].hex()
    body = ip[40:40 + payload_len]
    if nxt == 6:
        pkt.ip_proto = IpProto.TCP
        _decode_tcp(body, pkt)
    elif nxt == 17:
        pkt.ip_proto = IpProto.UDP
        _decode_udp(body, pkt)
    elif nxt == 58:
        pkt.ip_proto = IpProto.ICMP
        _decode_icmp(body, pkt)
    else:
        pkt.ip_proto = IpProto.OTHER
    return True


def _decode_tcp(body: bytes, pkt: RawPacket) -> None:
    pkt.tcp_flags = 0
    if len(body) < 20:
        return
    pkt.src_port, pkt.dst_port = struct.unpack(">HH", body[:4])
    off_flags = struct.unpack(">H", body[12:14])[0]
    data_off = ((off_flags >> 12) & 0xF) * 4
    pkt.tcp_flags = off_flags & 0xFF
    payload = body[data_off:]
    pkt.payload_len = len(payload)
    if payload:
        meta = appproto.parse_http(payload)
        if meta is None:
            meta = appproto.parse_tls(payload)
        if meta is not None:
            pkt.app_meta = meta


def _decode_udp(body: bytes, pkt: RawPacket) -> None:
    if len(body) < 8:
        return
    pkt.src_port, pkt.dst_port = struct.unpack(">HH", body[:4])
    udp_len = struct.unpack(">H", body[4:6])[0]
    payload = body[8:udp_len]
    pkt.payload_len = len(payload)
    if payload:
        meta = appproto.parse_dns(payload)
        if meta is not None:
            pkt.app_meta = meta


def _decode_icmp(body: bytes, pkt: RawPacket) -> None:
    if len(body) >= 2:
        pkt.icmp_type, pkt.icmp_code = body[0], body[1]
        pkt.payload_len = max(0, len(body) - 8)


class CaptureDecoder:
    """Single-pass reader turning one capture file into RawPackets."""

    def __init__(self, path: str | Path, label: CaptureLabel | None = None):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(str(path))
        self.label = label or CaptureLabel(self.path.stem)
        self.report = DecodeReport()
        self._t0: float | None = None

    def __iter__(self) -> Iterator[RawPacket]:
        index = 0
        for ts, frame in pcapio.read_frames(self.path):
            self.report.n_records += 1
            if self._t0 is None:
                self._t0 = ts
            rel = ts - self._t0
            if len(frame) < 14:
                self.report.n_failed += 1
                continue
            ethertype = struct.unpack(">H", frame[12:14])[0]
            if ethertype not in (ETH_IPV4, ETH_IPV6):
                self.report.n_skipped_non_ip += 1
                continue
            pkt = RawPacket(packet_index=index, timestamp=rel, src_addr="",
                            dst_addr="", src_port=None, dst_port=None,
                            ip_proto=IpProto.OTHER, length=len(frame))
            ok = (_decode_ipv4(frame, 14, pkt) if ethertype == ETH_IPV4
                  else _decode_ipv6(frame, 14, pkt))
            if not ok:
                self.report.n_failed += 1
                continue
            index += 1
            self.report.n_packets += 1
            yield pkt


def decode_capture(path: str | Path, label: CaptureLabel | None = None) -> Iterator[RawPacket]:
    """Yield RawPackets from a classic pcap or pcapng file, skipping non-IP frames."""
    yield from CaptureDecoder(path, label)


def window_buffer(packets: Iterable[RawPacket], t: float) -> Iterator[WindowBatch]:
    """Partition packets into half-open [k*t, (k+1)*t) windows.

    Interior empty windows are emitted as empty batches; trailing empties are
    not. Arrival order is kept inside each batch.
    """
    if t <= 0:
        raise ValueError("window size must be positive")
    buckets: dict[int, list[RawPacket]] = {}
    for pkt in packets:
        buckets.setdefault(int(math.floor(pkt.timestamp / t)), []).append(pkt)
    if not buckets:
        return
    for idx in range(min(buckets), max(buckets) + 1):
        yield WindowBatch(window_index=idx, start=idx * t, end=(idx + 1) * t,
                          packets=buckets.get(idx, []))
