"""Capture container I/O: classic pcap and pcapng, Ethernet link layer only.

Readers yield (timestamp_seconds, frame_bytes) tuples; writers take the same.
Timestamps are kept at microsecond resolution so a write/read round trip is
exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

from .errors import MalformedCapture

PCAP_MAGIC_LE = 0xA1B2C3D4
PCAP_MAGIC_BE = 0xD4C3B2A1
PCAP_MAGIC_NS_LE = 0xA1B23C4D
PCAPNG_MAGIC = 0x0A0D0D0A

_SHB_BOM = 0x1A2B3C4D


def sniff_format(path: str | Path) -> str:
    """Return 'pcap' or 'pcapng' for a capture file, raising on anything else."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) < 4:
        raise MalformedCapture(f"{path}: truncated header")
    magic_le = struct.unpack("<I", head)[0]
    if magic_le == PCAPNG_MAGIC:
        return "pcapng"
    if magic_le in (PCAP_MAGIC_LE, PCAP_MAGIC_BE, PCAP_MAGIC_NS_LE):
        return "pcap"
    magic_be = struct.unpack(">I", head)[0]
    if magic_be in (PCAP_MAGIC_LE, PCAP_MAGIC_NS_LE):
        return "pcap"
    raise MalformedCapture(f"{path}: unknown capture magic {head.hex()}")


def _read_classic(fh) -> Iterator[tuple[float, bytes]]:
    header = fh.read(24)
    if len(header) < 24:
        raise MalformedCapture("truncated pcap global header")
    magic = struct.unpack("<I", header[:4])[0]
    if magic == PCAP_MAGIC_LE:
        endian, ns = "<", False
    elif magic == PCAP_MAGIC_NS_LE:
        endian, ns = "<", True
    else:
        magic_be = struct.unpack(">I", header[:4])[0]
        if magic_be == PCAP_MAGIC_LE:
            endian, ns = ">", False
        elif magic_be == PCAP_MAGIC_NS_LE:
            endian, ns = ">", True
        else:
            raise MalformedCapture(f"bad pcap magic {header[:4].hex()}")
    while True:
        rec = fh.read(16)
        if len(rec) == 0:
            return
        if len(rec) < 16:
            return  # trailing garbage, stop cleanly
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(endian + "IIII", rec)
        data = fh.read(incl_len)
        if len(data) < incl_len:
            return
        if ns:
            ts = (ts_sec * 1_000_000_000 + ts_frac) / 1_000_000_000
        else:
            ts = (ts_sec * 1_000_000 + ts_frac) / 1_000_000
        yield ts, data


def _read_pcapng(fh) -> Iterator[tuple[float, bytes]]:
    endian = "<"
    tsresol = 1_000_000  # ticks per second, per-interface
    if_resol: list[int] = []
    first = fh.read(8)
    if len(first) < 8:
        raise MalformedCapture("truncated pcapng header")
    block_type = struct.unpack("<I", first[:4])[0]
    if block_type != PCAPNG_MAGIC:
        raise MalformedCapture("pcapng file does not start with a section header")
    fh.seek(0)
    while True:
        head = fh.read(8)
        if len(head) < 8:
            return
        block_type = struct.unpack(endian + "I", head[:4])[0]
        if block_type == PCAPNG_MAGIC:
            # peek at byte-order magic before trusting the length
            body_start = fh.read(4)
            if len(body_start) < 4:
                return
            bom = struct.unpack("<I", body_start)[0]
            endian = "<" if bom == _SHB_BOM else ">"
            total_len = struct.unpack(endian + "I", head[4:])[0]
            fh.read(total_len - 12 - 4)
            fh.read(4)
            if_resol = []
            continue
        total_len = struct.unpack(endian + "I", head[4:])[0]
        if total_len < 12:
            raise MalformedCapture("pcapng block shorter than its framing")
        body = fh.read(total_len - 12)
        fh.read(4)  # trailing total length
        if len(body) < total_len - 12:
            return
        if block_type == 0x00000001:  # interface description
            resol = 1_000_000
            opts = body[8:]
            while len(opts) >= 4:
                code, olen = struct.unpack(endian + "HH", opts[:4])
                val = opts[4:4 + olen]
                if code == 9 and olen >= 1:  # if_tsresol
                    raw = val[0]
                    resol = 2 ** (raw & 0x7F) if raw & 0x80 else 10 ** raw
                pad = (4 - olen % 4) % 4
                opts = opts[4 + olen + pad:]
                if code == 0:
                    break
            if_resol.append(resol)
        elif block_type == 0x00000006:  # enhanced packet
            if_id, ts_hi, ts_lo, cap_len, _orig = struct.unpack(endian + "IIIII", body[:20])
            data = body[20:20 + cap_len]
            resol = if_resol[if_id] if if_id < len(if_resol) else tsresol
            ticks = (ts_hi << 32) | ts_lo
            yield ticks / resol, data
        elif block_type == 0x00000003:  # simple packet
            (orig_len,) = struct.unpack(endian + "I", body[:4])
            yield 0.0, body[4:4 + orig_len]
        # other block types are skipped


def read_frames(path: str | Path) -> Iterator[tuple[float, bytes]]:
    """Iterate (timestamp, frame) over either container format."""
    fmt = sniff_format(path)
    with open(path, "rb") as fh:
        reader = _read_classic(fh) if fmt == "pcap" else _read_pcapng(fh)
        yield from reader


def write_pcap(path: str | Path, frames: list[tuple[float, bytes]]) -> None:
    """Write a classic little-endian microsecond pcap."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", PCAP_MAGIC_LE, 2, 4, 0, 0, 65535, 1))
        for ts, data in frames:
            micros = round(ts * 1_000_000)
            fh.write(struct.pack("<IIII", micros // 1_000_000, micros % 1_000_000,
                                 len(data), len(data)))
            fh.write(data)


def write_pcapng(path: str | Path, frames: list[tuple[float, bytes]]) -> None:
    """Write a minimal pcapng (one section, one Ethernet interface)."""

    def block(btype: int, body: bytes) -> bytes:
        pad = (4 - len(body) % 4) % 4
        total = 12 + len(body) + pad
        return (struct.pack("<II", btype, total) + body + b"\x00" * pad
                + struct.pack("<I", total))

    with open(path, "wb") as fh:
        shb = struct.pack("<IHHq", _SHB_BOM, 1, 0, -1)
        fh.write(block(PCAPNG_MAGIC, shb))
        idb = struct.pack("<HHI", 1, 0, 65535)
        fh.write(block(0x00000001, idb))
        for ts, data in frames:
            ticks = round(ts * 1_000_000)
            epb = struct.pack("<IIIII", 0, (ticks >> 32) & 0xFFFFFFFF,
                              ticks & 0xFFFFFFFF, len(data), len(data)) + data
            pad = (4 - len(data) % 4) % 4
            total = 12 + 20 + len(data) + pad
            fh.write(struct.pack("<II", 0x00000006, total)
                     + epb + b"\x00" * pad + struct.pack("<I", total))
