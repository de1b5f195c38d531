"""Synthetic labeled corpus generator with a machine-readable plant ledger.

Scenarios are generated at the decoded-packet layer and serialized to classic
pcap, so the decode path round-trips them exactly. Class templates anchor the
measured separations between the three classes: DNS ratios and request counts,
raw-TCP reliance, byte asymmetry, resumed connections, packet failures, URL
shape, IP-only fallback channels, and the timing orderings (data-packet idle:
apt < botnet < legitimate; all-packet delta: legitimate < botnet < apt).
Timing bands are scaled to desk-size packet budgets; the template table is
documented in docs/FORMATS.md.

The ledger mirrors the pipeline's own attribution rules (windowing, DNS
back-attachment, plane separation), making it an independent oracle for every
per-flow property the pipeline recovers.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import appproto
from .features import _bucket_index
from .pcapio import write_pcap

TTPS = ("FALLBACK_CHANNEL", "WEB_PROTOCOL", "NON_APP_PROTOCOL",
        "PROTOCOL_IMPERSONATION", "IP_ONLY", "ENCRYPTED_CHANNEL")

RESOLVER_IP = "10.0.0.53"
WINDOW_SECONDS = 600.0

_MAC_HOST = bytes.fromhex("aabbccddee01")
_MAC_PEER = bytes.fromhex("aabbccddee02")

POPULAR_UAS = (
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) Chrome/96.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) Firefox/95.0",
)
BOTNET_UA = "WinHttp.WinHttpRequest.5"


# ---------------------------------------------------------------------------
# wire builders

def _ip_bytes(addr: str) -> bytes:
    return bytes(int(p) for p in addr.split("."))


def _ipv4_header(proto: int, src: str, dst: str, body_len: int, ttl: int) -> bytes:
    return struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + body_len, 0, 0, ttl, proto,
                       0, _ip_bytes(src), _ip_bytes(dst))


def tcp_frame(src: str, dst: str, sport: int, dport: int, flags: int,
              payload: bytes = b"", ttl: int = 64, pad: int = 0) -> bytes:
    tcp = struct.pack(">HHIIHHHH", sport, dport, 1000, 2000,
                      (5 << 12) | flags, 8192, 0, 0) + payload
    ip = _ipv4_header(6, src, dst, len(tcp), ttl)
    return _MAC_PEER + _MAC_HOST + struct.pack(">H", 0x0800) + ip + tcp + b"\x00" * pad


def udp_frame(src: str, dst: str, sport: int, dport: int,
              payload: bytes, ttl: int = 64) -> bytes:
    udp = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
    ip = _ipv4_header(17, src, dst, len(udp), ttl)
    return _MAC_PEER + _MAC_HOST + struct.pack(">H", 0x0800) + ip + udp


def icmp_frame(src: str, dst: str, icmp_type: int, code: int,
               payload: bytes = b"", ttl: int = 64) -> bytes:
    icmp = struct.pack(">BBHI", icmp_type, code, 0, 1) + payload
    ip = _ipv4_header(1, src, dst, len(icmp), ttl)
    return _MAC_PEER + _MAC_HOST + struct.pack(">H", 0x0800) + ip + icmp


def arp_frame() -> bytes:
    return _MAC_PEER + _MAC_HOST + struct.pack(">H", 0x0806) + b"\x00" * 28


def _raw_payload(rng, size: int) -> bytes:
    # leading 0xaa keeps the payload from sniffing as HTTP/TLS/DNS
    return b"\xaa" + bytes(rng.integers(0, 256, size=max(0, size - 1), dtype=np.uint8))


# ---------------------------------------------------------------------------
# scenario specs

@dataclass
class ScenarioSpec:
    name: str
    cls: str  # apt | botnet | legitimate
    seed: int
    ttps: set[str] = field(default_factory=set)
    duration: float = 900.0
    confound: bool = False
    plant_hygiene: Optional[str] = None  # None | FailedTCP | EmptyData
    shared_dests: list[tuple[str, Optional[str]]] = field(default_factory=list)
    params: dict = field(default_factory=dict)


@dataclass
class _Dest:
    ip: str
    fqdn: Optional[str]
    start_us: int
    windows: list[int]
    encrypted: bool = False
    shared: bool = False
    cont_start_us: Optional[int] = None  # window-1 continuation start


class _Scenario:
    """Mutable build state for one capture."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.host_ip = "10.%d.%d.%d" % tuple(self.rng.integers(1, 250, size=3))
        self.frames: list[tuple[int, bytes]] = []
        self.pair_packets: dict[str, list[dict]] = {}
        self.dns_events: list[dict] = []
        self.hygiene_dests: dict[str, str] = {}
        self._dests: list[_Dest] = []
        self._sport = 49100

    def next_sport(self) -> int:
        self._sport += 1
        return self._sport

    def emit_tcp(self, dest: str, t_us: int, sent: bool, flags: int,
                 payload: bytes = b"", cls: str = "TCP", url: str = None,
                 ua: str = None, status: int = None, pad: int = 0,
                 sport: int = 0, dport: int = 80) -> None:
        if sent:
            frame = tcp_frame(self.host_ip, dest, sport, dport, flags, payload, pad=pad)
        else:
            frame = tcp_frame(dest, self.host_ip, dport, sport, flags, payload, pad=pad)
        self.frames.append((t_us, frame))
        self.pair_packets.setdefault(dest, []).append({
            "t_us": t_us, "length": len(frame), "sent": sent, "cls": cls,
            "is_data": len(payload) > 0, "flags": flags if not payload else None,
            "url": url, "ua": ua, "status": status,
        })

    def emit_udp_raw(self, dest: str, t_us: int, sent: bool, size: int,
                     sport: int, dport: int) -> None:
        payload = _raw_payload(self.rng, size)
        if sent:
            frame = udp_frame(self.host_ip, dest, sport, dport, payload)
        else:
            frame = udp_frame(dest, self.host_ip, dport, sport, payload)
        self.frames.append((t_us, frame))
        self.pair_packets.setdefault(dest, []).append({
            "t_us": t_us, "length": len(frame), "sent": sent, "cls": "UDP",
            "is_data": False, "flags": None, "url": None, "ua": None, "status": None,
        })

    def emit_icmp(self, dest: str, t_us: int, sent: bool, icmp_type: int) -> None:
        if sent:
            frame = icmp_frame(self.host_ip, dest, icmp_type, 0, b"ping-data")
        else:
            frame = icmp_frame(dest, self.host_ip, icmp_type, 0, b"ping-data")
        self.frames.append((t_us, frame))
        self.pair_packets.setdefault(dest, []).append({
            "t_us": t_us, "length": len(frame), "sent": sent, "cls": "ICMP",
            "is_data": False, "flags": None, "url": None, "ua": None, "status": None,
        })

    def emit_dns(self, t_us: int, qname: str, answers: list[str],
                 repeat_txid: int = 0) -> None:
        sport = self.next_sport()
        req_payload = appproto.build_dns_request(0x1000 + repeat_txid, qname)
        resp_payload = appproto.build_dns_response(0x1000 + repeat_txid, qname,
                                                   answers, [f"ns1.{qname}"])
        req = udp_frame(self.host_ip, RESOLVER_IP, sport, 53, req_payload)
        resp = udp_frame(RESOLVER_IP, self.host_ip, 53, sport, resp_payload)
        self.frames.append((t_us, req))
        self.frames.append((t_us + 8_000, resp))
        self.dns_events.append({
            "qname": qname, "answers": answers,
            "records": [
                {"t_us": t_us, "length": len(req), "sent": True, "cls": "DNS",
                 "is_data": False, "flags": None, "url": None, "ua": None,
                 "status": None, "dns_kind": "request"},
                {"t_us": t_us + 8_000, "length": len(resp), "sent": False,
                 "cls": "DNS", "is_data": False, "flags": None, "url": None,
                 "ua": None, "status": None, "dns_kind": "response"},
            ],
        })


def _window_of(t_us: int) -> int:
    return int(t_us // int(WINDOW_SECONDS * 1_000_000))


def _uniform_us(rng, lo: float, hi: float) -> int:
    return int(rng.uniform(lo, hi) * 1_000_000)


class _FlowWriter:
    """Emits one pair's traffic segment by segment, advancing a microsecond cursor."""

    def __init__(self, scen: _Scenario, dest: _Dest, ua: str):
        self.scen = scen
        self.rng = scen.rng
        self.dest = dest
        self.ua = ua
        self.sport = scen.next_sport()
        self.dport = 443 if dest.encrypted else int(
            scen.rng.choice([80, 80, 80, 8080, 4444]))
        self.t = dest.start_us
        self.host_label = dest.fqdn or dest.ip

    def gap(self, lo: float, hi: float) -> None:
        self.t += _uniform_us(self.rng, lo, hi)

    def tcp(self, sent: bool, flags: int, payload: bytes = b"", **kw) -> None:
        self.scen.emit_tcp(self.dest.ip, self.t, sent, flags, payload,
                           sport=self.sport, dport=self.dport, **kw)

    def control(self, sent: bool, flags: int) -> None:
        self.tcp(sent, flags, pad=int(self.rng.integers(12, 21)))

    def handshake(self) -> None:
        self.control(True, 0x02)
        self.t += int(self.rng.integers(3_000, 30_000))
        self.control(False, 0x12)
        self.t += int(self.rng.integers(2_000, 15_000))
        self.control(True, 0x10)
        self.t += int(self.rng.integers(2_000, 15_000))

    def fin_ack(self, resume: bool) -> None:
        self.control(True, 0x11)
        if resume:
            self.t += int(self.rng.integers(20_000, 120_000))
            self.handshake()

    def think(self, lo: float, hi: float, chatter: bool) -> None:
        """A long pause; with chatter, keepalive ACKs subdivide it."""
        end = self.t + _uniform_us(self.rng, lo, hi)
        if chatter:
            while True:
                step = _uniform_us(self.rng, 0.4, 1.2)
                if self.t + step >= end:
                    break
                self.t += step
                self.control(bool(self.rng.random() < 0.5), 0x10)
        self.t = end

    def http_get(self, url_path: str, status: int, ctype: Optional[str],
                 resp_body: int, method: str = "GET", req_body: int = 0,
                 ack_filler: bool = False, cookie: int = 0) -> None:
        body = b"B" * req_body
        req_ct = "application/x-www-form-urlencoded" if req_body else None
        payload = appproto.build_http_request(method, self.host_label, url_path,
                                              self.ua, req_ct, body)
        if cookie:
            head, _, rest = payload.partition(b"\r\n\r\n")
            payload = head + b"\r\nCookie: sid=" + b"c" * cookie + b"\r\n\r\n" + rest
        self.tcp(True, 0x18, payload, cls="HTTP",
                 url=self.host_label + url_path, ua=self.ua)
        if ack_filler:
            self.t += int(self.rng.integers(5_000, 30_000))
            self.control(False, 0x10)
        self.t += int(self.rng.integers(15_000, 90_000))
        resp = appproto.build_http_response(status, ctype, resp_body,
                                            server="srv/1.2", body=b"R" * resp_body)
        self.tcp(False, 0x18, resp, cls="HTTP", status=status)
        if ack_filler:
            self.t += int(self.rng.integers(5_000, 30_000))
            self.control(True, 0x10)

    def tls_handshake(self, legacy: bool = False) -> None:
        minor = 0 if legacy else 3
        hello = appproto.build_client_hello([0x1301, 0x1302, 0xC02F],
                                            minor_version=minor,
                                            alpn=["h2", "http/1.1"])
        self.tcp(True, 0x18, hello, cls="SSL" if legacy else "TLS")
        self.t += int(self.rng.integers(10_000, 60_000))
        server = appproto.build_server_hello(0x1301, minor_version=minor)
        self.tcp(False, 0x18, server, cls="SSL" if legacy else "TLS")
        self.t += int(self.rng.integers(5_000, 30_000))

    def tls_data(self, sent: bool, size: int, legacy: bool = False) -> None:
        rec = appproto.build_tls_appdata(size, minor_version=0 if legacy else 3)
        self.tcp(sent, 0x18, rec, cls="SSL" if legacy else "TLS")

    def raw(self, sent: bool, size: int) -> None:
        self.tcp(sent, 0x18, _raw_payload(self.rng, size))

    def keepalive_tail(self, window_end_us: int, lo: float = 45, hi: float = 110) -> None:
        limit = window_end_us - _uniform_us(self.rng, 4, 15)
        while True:
            step = _uniform_us(self.rng, lo, hi)
            if self.t + step >= limit:
                break
            self.t += step
            self.control(True, 0x10)


# ---------------------------------------------------------------------------
# class templates

_LEGIT_PATHS = ("/news/world/2024/03/story-%d.html", "/assets/js/vendor/app-%d.js",
                "/images/2024/q1/banner-%d.png", "/static/css/theme/site-%d.css",
                "/articles/%d/tech/review/index.html", "/media/clips/hd/clip-%d.mp4")
_LEGIT_CTYPES = ("text/html", "image/png", "application/javascript",
                 "text/css", "text/html", "image/jpeg", "video/mp4")


def _legit_http_segment(w: _FlowWriter, confound: bool, window_end_us: int) -> None:
    rng = w.rng
    w.handshake()
    n_pages = int(rng.integers(2, 5)) if not confound else 1
    for page in range(n_pages):
        n_get = int(rng.integers(3, 6))
        for g in range(n_get):
            path = _LEGIT_PATHS[int(rng.integers(0, len(_LEGIT_PATHS)))] \
                % int(rng.integers(1, 5000))
            if rng.random() < 0.7:
                path += "?ref=home&utm_source=feed&sess=%d&page=%d&lang=en&q=%d" % (
                    int(rng.integers(1000, 99999)), int(rng.integers(1, 9)),
                    int(rng.integers(1, 999)))
            if rng.random() < 0.1:
                path += "#section-%d" % int(rng.integers(1, 5))
            status = 200 if rng.random() > 0.12 else int(rng.choice([301, 304, 404]))
            ctype = _LEGIT_CTYPES[int(rng.integers(0, len(_LEGIT_CTYPES)))]
            big = page == 0 and g == 0 and rng.random() < 0.25
            body = int(rng.integers(1800, 4500)) if big else int(rng.integers(150, 700))
            w.http_get(path, status, ctype, body, ack_filler=not confound,
                       cookie=int(rng.integers(120, 260)))
            w.gap(0.1, 0.35) if not confound else w.gap(0.3, 1.2)
        if page < n_pages - 1:
            w.think(15, 35, chatter=not confound)
            w.fin_ack(resume=True)
        elif rng.random() < 0.8:
            w.fin_ack(resume=rng.random() < 0.3)
    if confound:
        w.keepalive_tail(window_end_us, 40, 100)


def _legit_tls_segment(w: _FlowWriter, confound: bool, window_end_us: int) -> None:
    rng = w.rng
    w.handshake()
    w.tls_handshake()
    n_rounds = int(rng.integers(2, 4)) if not confound else 1
    for r in range(n_rounds):
        for _ in range(int(rng.integers(3, 7))):
            w.tls_data(True, int(rng.integers(150, 600)))
            w.gap(0.015, 0.09)
            w.tls_data(False, int(rng.integers(300, 1500)))
            if not confound:
                w.gap(0.02, 0.06)
                w.control(True, 0x10)
            w.gap(0.1, 0.35) if not confound else w.gap(0.3, 1.2)
        if r < n_rounds - 1:
            w.think(15, 35, chatter=not confound)
            w.fin_ack(resume=True)
        elif rng.random() < 0.7:
            w.fin_ack(resume=False)
    if confound:
        w.keepalive_tail(window_end_us, 40, 100)


def _apt_segment(w: _FlowWriter, ttps: set[str], window_end_us: int) -> None:
    rng = w.rng
    impersonate = "PROTOCOL_IMPERSONATION" in ttps and rng.random() < 0.6
    w.handshake()
    if w.dest.encrypted:
        w.tls_handshake(legacy=impersonate)
        for _ in range(int(rng.integers(3, 8))):
            w.tls_data(True, int(rng.integers(60, 180)), legacy=impersonate)
            w.gap(0.3, 1.2)
            w.tls_data(False, int(rng.integers(500, 1400)), legacy=impersonate)
            w.gap(0.3, 1.2)
    else:
        n_get = int(rng.integers(2, 6))
        for g in range(n_get):
            if rng.random() < 0.5:
                path = "/u/%d/files/update.exe" % int(rng.integers(10, 99))
            else:
                path = "/api/v%d/sync" % int(rng.integers(1, 4))
            if rng.random() < 0.55:
                path += "?id=%%32%%35&tok=%d" % int(rng.integers(1000, 9999))
            roll = rng.random()
            if impersonate or roll < 0.02:
                ctype = "text/html"
            elif roll < 0.42:
                ctype = "application/octet-stream"
            elif roll < 0.62:
                ctype = "text/plain"
            else:
                ctype = None
            status = 200 if rng.random() > 0.08 else 404
            method = "POST" if rng.random() < 0.2 else "GET"
            w.http_get(path, status, ctype, int(rng.integers(200, 500)),
                       method=method, req_body=60 if method == "POST" else 0)
            w.gap(0.3, 1.2)
    if "NON_APP_PROTOCOL" in ttps:
        w.gap(2, 8)
        n_raw = int(rng.integers(12, 30))
        for i in range(n_raw):
            sent = i % 3 == 0  # receive-heavy: payload download dwarfs beacons
            size = int(rng.integers(80, 220)) if sent else int(rng.integers(350, 800))
            w.raw(sent, size)
            w.gap(0.5, 1.2)
    w.keepalive_tail(window_end_us)
    for _ in range(int(rng.integers(0, 3))):
        w.fin_ack(resume=rng.random() < 0.5)


def _botnet_segment(w: _FlowWriter, ttps: set[str]) -> None:
    rng = w.rng
    w.handshake()
    if w.dest.encrypted:
        w.tls_handshake()
    n_beacon = int(rng.integers(4, 10))
    n_fail = int(rng.integers(1, 6))
    for b in range(n_beacon):
        if w.dest.encrypted:
            w.tls_data(True, int(rng.integers(300, 900)))
            w.gap(0.05, 0.2)
            w.tls_data(False, int(rng.integers(150, 500)))
        else:
            status = int(rng.choice([404, 500, 503])) if b < n_fail else 200
            method = "POST" if rng.random() < 0.6 else "GET"
            path = "/gate.php" if rng.random() < 0.7 else "/panel"
            w.http_get(path, status, "text/html" if rng.random() > 0.02 else None,
                       int(rng.integers(250, 800)), method=method,
                       req_body=int(rng.integers(250, 900)) if method == "POST" else 0)
        w.gap(1.5, 2.6)
        if rng.random() < 0.5:
            w.fin_ack(resume=b < n_beacon - 1)
    if "NON_APP_PROTOCOL" in ttps and rng.random() < 0.5:
        for _ in range(int(rng.integers(2, 5))):
            w.scen.emit_udp_raw(w.dest.ip, w.t, True, int(rng.integers(60, 200)),
                                w.sport, w.dport)
            w.gap(0.5, 2.0)


def _continuation_segment(w: _FlowWriter, cls: str) -> None:
    """Window-1 activity for a long-lived pair: keepalives plus a small burst."""
    rng = w.rng
    w.control(True, 0x10)
    w.gap(1, 4)
    n = int(rng.integers(2, 6))
    for i in range(n):
        sent = (i % 3 == 0) if cls == "apt" else (i % 2 == 0)
        lo, hi = (90, 250) if (cls == "apt" and sent) else (350, 1200)
        if w.dest.encrypted:
            w.tls_data(sent, int(rng.integers(lo, hi)))
        else:
            w.raw(sent, int(rng.integers(lo, hi)))
        w.gap(0.3, 1.5) if cls == "apt" else w.gap(1.5, 2.6)
    if cls == "apt":
        w.gap(30, 80)
        w.control(True, 0x10)
    if rng.random() < 0.4:
        w.fin_ack(resume=False)


def _plant_hygiene_pair(scen: _Scenario, reason: str) -> None:
    rng = scen.rng
    dest = "192.168.%d.%d" % tuple(rng.integers(1, 250, size=2))
    sport, dport = scen.next_sport(), 80
    t = _uniform_us(rng, 20, 400)
    if reason == "FailedTCP":
        for _ in range(3):  # SYN retransmissions go unanswered
            scen.emit_tcp(dest, t, True, 0x02, sport=sport, dport=dport,
                          pad=int(rng.integers(12, 21)))
            t += _uniform_us(rng, 1, 3)
    else:  # EmptyData: completed handshake, zero payload packets
        scen.emit_tcp(dest, t, True, 0x02, sport=sport, dport=dport, pad=12)
        t += 30_000
        scen.emit_tcp(dest, t, False, 0x12, sport=sport, dport=dport, pad=12)
        t += 30_000
        scen.emit_tcp(dest, t, True, 0x10, sport=sport, dport=dport, pad=12)
        t += _uniform_us(rng, 2, 10)
        scen.emit_tcp(dest, t, True, 0x11, sport=sport, dport=dport, pad=12)
    scen.hygiene_dests[dest] = reason


# ---------------------------------------------------------------------------
# scenario assembly

def _plan_destinations(scen: _Scenario) -> list[_Dest]:
    spec, rng = scen.spec, scen.rng
    dests: list[_Dest] = []
    shared = list(spec.shared_dests)

    def cont_start() -> int:
        return int((WINDOW_SECONDS + 2) * 1e6) + _uniform_us(rng, 0, 30)

    def fresh_ip(prefix: int) -> str:
        return "%d.%d.%d.%d" % (prefix, rng.integers(1, 250),
                                rng.integers(1, 250), rng.integers(1, 250))

    if spec.cls == "apt":
        n = 1 + (1 if "FALLBACK_CHANNEL" in spec.ttps else 0) + int(rng.random() < 0.4)
        start = _uniform_us(rng, 10, 60)
        for i in range(n):
            ip_only = ("IP_ONLY" in spec.ttps and i == 0) or \
                (i > 0 and rng.random() < 0.7)
            fqdn = None if ip_only else f"cdn-{spec.seed % 9973}-{i}.update-svc.net"
            windows = [0] + ([1] if rng.random() < 0.6 else [])
            dests.append(_Dest(ip=fresh_ip(198), fqdn=fqdn, start_us=start,
                               windows=windows,
                               cont_start_us=cont_start() if 1 in windows else None,
                               encrypted="ENCRYPTED_CHANNEL" in spec.ttps
                               and rng.random() < 0.7))
            start += _uniform_us(rng, 30, 73)
    elif spec.cls == "botnet":
        n = int(rng.integers(1, 5))
        start = _uniform_us(rng, 10, 80)
        for i in range(n):
            if shared and i == 0:
                ip, fqdn = shared[0]
            else:
                ip = fresh_ip(100)
                fqdn = f"g{spec.seed % 9973}-{i}.dyn-panel.info"
            ip_only = "IP_ONLY" in spec.ttps and i == n - 1
            windows = [0] + ([1] if rng.random() < 0.5 else [])
            dests.append(_Dest(ip=ip, fqdn=None if ip_only else fqdn,
                               start_us=start, windows=windows,
                               cont_start_us=cont_start() if 1 in windows else None,
                               shared=bool(shared and i == 0),
                               encrypted="ENCRYPTED_CHANNEL" in spec.ttps
                               and rng.random() < 0.5))
            start += _uniform_us(rng, 15, 38)
    else:
        n = int(rng.integers(3, 9))
        start = _uniform_us(rng, 5, 40)
        for i in range(n):
            if shared and i < len(shared) and rng.random() < 0.6:
                ip, fqdn = shared[i]
                was_shared = True
            else:
                ip, fqdn = fresh_ip(151), f"www-{spec.seed % 9973}-{i}.site-{i}.example.org"
                was_shared = False
            ip_only = rng.random() < 0.01
            dests.append(_Dest(ip=ip, fqdn=None if ip_only else fqdn,
                               start_us=start, windows=[0], shared=was_shared,
                               encrypted=rng.random() < 0.35))
            start += _uniform_us(rng, 0.2, 1.2)
        if rng.random() < 0.3:  # second browsing round in the next window
            start = int(600.5 * 1e6) + _uniform_us(rng, 2, 50)
            for j in range(int(rng.integers(1, 3))):
                dests.append(_Dest(ip=fresh_ip(151),
                                   fqdn=f"r2-{spec.seed % 9973}-{j}.site.example.org",
                                   start_us=start, windows=[1],
                                   encrypted=rng.random() < 0.35))
                start += _uniform_us(rng, 0.2, 1.2)
    return dests


def _dns_plan(scen: _Scenario, dest: _Dest) -> None:
    """Queries resolving this destination, emitted shortly before first contact."""
    rng = scen.rng
    if dest.fqdn is None:
        return
    spec = scen.spec
    if spec.cls == "apt":
        n_q = 1 if rng.random() < 0.8 else 2
    elif spec.cls == "botnet":
        n_q = int(rng.integers(2, 7))
    else:
        n_q = int(rng.integers(2, 9)) if rng.random() > 0.05 else int(rng.integers(9, 19))
    answers = [dest.ip]
    if spec.cls == "apt" and "FALLBACK_CHANNEL" in spec.ttps and rng.random() < 0.5:
        # multi-answer response advertising the fallback destination too
        others = [d.ip for d in scen._dests if d.ip != dest.ip and 0 in d.windows]
        if others:
            answers = [dest.ip, others[0]]
    t = dest.start_us - _uniform_us(rng, 0.5, 3.0)
    window_start = _window_of(dest.start_us) * int(WINDOW_SECONDS * 1e6)
    t = max(t, window_start + 1_000)
    limit = min(dest.start_us + int(180 * 1e6),
                int(spec.duration * 1e6) - int(2e6))
    for q in range(n_q):
        scen.emit_dns(t, dest.fqdn, answers, repeat_txid=q)
        t = min(t + _uniform_us(rng, 0.5, 60.0), limit)
    if spec.cls == "botnet" and dest.cont_start_us is not None:
        # chatty re-resolution right before the next window's beacons
        for q in range(int(rng.integers(1, 4))):
            scen.emit_dns(dest.cont_start_us - 400_000 + q * 90_000,
                          dest.fqdn, [dest.ip], repeat_txid=100 + q)


def _write_segments(scen: _Scenario, dest: _Dest, ua: str) -> None:
    spec = scen.spec
    writer = _FlowWriter(scen, dest, ua)
    for n, window in enumerate(dest.windows):
        if n > 0:
            writer.t = dest.cont_start_us if dest.cont_start_us is not None else \
                int((window * WINDOW_SECONDS + 2) * 1e6)
            _continuation_segment(writer, spec.cls)
            continue
        window_end_us = int((window + 1) * WINDOW_SECONDS * 1e6)
        if spec.cls == "apt":
            _apt_segment(writer, spec.ttps, window_end_us)
        elif spec.cls == "botnet":
            _botnet_segment(writer, spec.ttps)
        elif dest.encrypted:
            _legit_tls_segment(writer, spec.confound, window_end_us)
        else:
            _legit_http_segment(writer, spec.confound, window_end_us)


def _ledger_rows(scen: _Scenario) -> list[dict]:
    spec = scen.spec
    # mirror the Local-PTR rule: responses attach by answer IP, requests by qname
    attached: dict[str, list[dict]] = {ip: [] for ip in scen.pair_packets}
    for event in scen.dns_events:
        for ip in scen.pair_packets:
            if ip not in event["answers"]:
                continue
            pair_windows = {_window_of(p["t_us"]) for p in scen.pair_packets[ip]}
            for rec in event["records"]:
                if _window_of(rec["t_us"]) in pair_windows:
                    attached[ip].append(rec)
    rows = []
    for ip, own in scen.pair_packets.items():
        merged = own + attached.get(ip, [])
        windows = sorted({_window_of(p["t_us"]) for p in own})
        for w in windows:
            pkts = sorted((p for p in merged if _window_of(p["t_us"]) == w),
                          key=lambda p: p["t_us"])
            if not pkts:
                continue
            ts = [p["t_us"] / 1e6 for p in pkts]
            deltas = [b - a for a, b in zip(ts, ts[1:])]
            data_ts = [p["t_us"] / 1e6 for p in pkts if p["is_data"]]
            idle = [b - a for a, b in zip(data_ts, data_ts[1:])]
            buckets: dict[int, float] = {}
            for p in pkts:
                if p["is_data"]:
                    b = _bucket_index(p["t_us"] / 1e6, 1.0)
                    buckets[b] = buckets.get(b, 0.0) + p["length"]
            rows.append({
                "capture": spec.name,
                "source": scen.host_ip,
                "destination": ip,
                "window": w,
                "cls": spec.cls,
                "ttps": sorted(spec.ttps),
                "confound": spec.confound,
                "bytes_sent": sum(p["length"] for p in pkts if p["sent"]),
                "bytes_received": sum(p["length"] for p in pkts if not p["sent"]),
                "n_packets": len(pkts),
                "n_raw_tcp": sum(1 for p in pkts if p["cls"] == "TCP"),
                "n_http": sum(1 for p in pkts if p["cls"] == "HTTP"),
                "n_tls": sum(1 for p in pkts if p["cls"] == "TLS"),
                "n_ssl": sum(1 for p in pkts if p["cls"] == "SSL"),
                "n_dns": sum(1 for p in pkts if p["cls"] == "DNS"),
                "n_raw_udp": sum(1 for p in pkts if p["cls"] == "UDP"),
                "n_icmp": sum(1 for p in pkts if p["cls"] == "ICMP"),
                "n_dns_requests": sum(1 for p in pkts
                                      if p.get("dns_kind") == "request"),
                "ip_only": not any(p["cls"] == "DNS" for p in pkts),
                "urls": [p["url"] for p in pkts if p.get("url")],
                "uas": sorted({p["ua"] for p in pkts if p.get("ua")}),
                "resumed": sum(1 for p in pkts if p.get("flags") == 0x11),
                "failures": sum(1 for p in pkts
                                if p.get("status") and p["status"] >= 400),
                "delta_mean": (sum(deltas) / len(deltas)) if deltas else None,
                "idle_mean": (sum(idle) / len(idle)) if idle else None,
                "data_buckets": {str(k): v for k, v in sorted(buckets.items())},
                "burst_max_bytes": max(buckets.values()) if buckets else 0.0,
                "hygiene": scen.hygiene_dests.get(ip),
            })
    return rows


def generate_scenario(spec: ScenarioSpec) -> tuple[list[tuple[float, bytes]],
                                                   list[dict], dict]:
    """Build one capture; returns (frames, ledger rows, labels row)."""
    scen = _Scenario(spec)
    rng = scen.rng
    # anchor record at t=0 pins the decoder's capture-relative clock
    scen.frames.append((0, arp_frame()))
    dests = _plan_destinations(scen)
    scen._dests = dests
    if spec.cls == "apt":
        ua = f"agent-{spec.seed}-{rng.integers(100, 999)}/1.0"
    elif spec.cls == "botnet":
        ua = BOTNET_UA
    else:
        ua = POPULAR_UAS[int(rng.integers(0, len(POPULAR_UAS)))]
    for dest in dests:
        _dns_plan(scen, dest)
    for dest in dests:
        _write_segments(scen, dest, ua)
    if rng.random() < 0.04 and dests:
        t = dests[0].start_us + _uniform_us(rng, 5, 40)
        scen.emit_icmp(dests[0].ip, t, True, 8)
        scen.emit_icmp(dests[0].ip, t + 12_000, False, 0)
    if spec.plant_hygiene:
        _plant_hygiene_pair(scen, spec.plant_hygiene)
    for _ in range(int(rng.integers(1, 4))):  # non-IP noise the decoder must skip
        scen.frames.append((_uniform_us(rng, 1, spec.duration - 1), arp_frame()))
    scen.frames.sort(key=lambda f: f[0])
    frames = [(t_us / 1e6, frame) for t_us, frame in scen.frames]
    rows = _ledger_rows(scen)
    labels_row = {"capture_name": spec.name, "label": spec.cls,
                  "confound": int(spec.confound)}
    for ttp in TTPS:
        labels_row[f"ttp_{ttp.lower()}"] = int(ttp in spec.ttps)
    return frames, rows, labels_row


def default_corpus_specs(n_per_class: int, seed: int = 7,
                         overlap_rate: float = 0.2,
                         hygiene_rate: float = 0.0) -> list[ScenarioSpec]:
    """The standard three-class corpus layout used by the CLI and tests."""
    master = np.random.default_rng(seed)
    specs: list[ScenarioSpec] = []
    botnet_pool = [("100.%d.%d.9" % (master.integers(64, 120), master.integers(1, 250)),
                    f"panel-{i}.dyn-c2.info")
                   for i in range(max(1, n_per_class // 5 + 1))]
    legit_pool = [("151.%d.%d.7" % (master.integers(100, 200), master.integers(1, 250)),
                   f"cdn-{i}.popular-site.example")
                  for i in range(max(1, n_per_class // 2 + 1))]
    for cls, count in (("apt", n_per_class), ("botnet", n_per_class),
                       ("legitimate", n_per_class)):
        for i in range(count):
            s = int(master.integers(0, 2 ** 31))
            rng = np.random.default_rng(s)
            ttps: set[str] = set()
            confound = False
            if cls == "apt":
                ttps.add("WEB_PROTOCOL")
                if rng.random() < 0.85:
                    ttps.add("NON_APP_PROTOCOL")
                if rng.random() < 0.7:
                    ttps.add("FALLBACK_CHANNEL")
                if rng.random() < 0.5789:
                    ttps.add("IP_ONLY")
                if rng.random() < 0.35:
                    ttps.add("ENCRYPTED_CHANNEL")
                if rng.random() < 0.3:
                    ttps.add("PROTOCOL_IMPERSONATION")
                shared = []
            elif cls == "botnet":
                ttps.add("WEB_PROTOCOL")
                if rng.random() < 0.15:
                    ttps.add("NON_APP_PROTOCOL")
                if rng.random() < 0.09:
                    ttps.add("IP_ONLY")
                if rng.random() < 0.2:
                    ttps.add("ENCRYPTED_CHANNEL")
                if rng.random() < 0.2:
                    ttps.add("FALLBACK_CHANNEL")
                shared = [botnet_pool[i // 5 % len(botnet_pool)]]
            else:
                confound = rng.random() < overlap_rate
                shared = [legit_pool[(i * 2 + j) % len(legit_pool)] for j in range(2)]
            plant = None
            if hygiene_rate > 0 and rng.random() < hygiene_rate:
                plant = "FailedTCP" if rng.random() < 0.5 else "EmptyData"
            specs.append(ScenarioSpec(
                name=f"{cls}-{i:04d}", cls=cls, seed=s, ttps=ttps,
                confound=confound, plant_hygiene=plant, shared_dests=shared))
    return specs


@dataclass
class CorpusResult:
    capture_paths: list[Path]
    ledger_path: Path
    labels_path: Path
    ledger: list[dict]
    labels: list[dict]


def generate_corpus(specs: list[ScenarioSpec], out: str | Path) -> CorpusResult:
    """Write capture files plus ledger.jsonl and labels.csv under out/."""
    out = Path(out)
    captures_dir = out / "captures"
    captures_dir.mkdir(parents=True, exist_ok=True)
    all_rows: list[dict] = []
    label_rows: list[dict] = []
    paths: list[Path] = []
    for spec in specs:
        frames, rows, labels_row = generate_scenario(spec)
        path = captures_dir / f"{spec.name}.pcap"
        write_pcap(path, frames)
        paths.append(path)
        all_rows.extend(rows)
        label_rows.append(labels_row)
    ledger_path = out / "ledger.jsonl"
    with open(ledger_path, "w") as fh:
        for row in all_rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    labels_path = out / "labels.csv"
    with open(labels_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(label_rows[0].keys()))
        writer.writeheader()
        writer.writerows(label_rows)
    return CorpusResult(capture_paths=paths, ledger_path=ledger_path,
                        labels_path=labels_path, ledger=all_rows, labels=label_rows)


def load_ledger(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
