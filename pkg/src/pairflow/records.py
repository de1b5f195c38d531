"""Core record types: decoded packets, pair keys, flow ids and the flow record itself.

Everything downstream (planes, profiles, features, summaries) is built out of
these dataclasses. They are plain containers; the logic that fills them lives
in ingest.py and flows.py.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional


class IpProto(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    ICMP = "ICMP"
    OTHER = "OTHER"


class AppKind(str, Enum):
    HTTP_REQUEST = "HTTP_REQUEST"
    HTTP_RESPONSE = "HTTP_RESPONSE"
    DNS_REQUEST = "DNS_REQUEST"
    DNS_RESPONSE = "DNS_RESPONSE"
    TLS_HANDSHAKE = "TLS_HANDSHAKE"
    TLS_APPDATA = "TLS_APPDATA"
    NONE = "NONE"


class ClassLabel(str, Enum):
    APT = "apt"
    BOTNET = "botnet"
    LEGITIMATE = "legitimate"
    UNLABELED = "unlabeled"


# Protocol-presence flags carried on every flow (one bit per protocol seen).
PROTOCOLS = ("TCP", "UDP", "DNS", "ICMP", "HTTP", "TLS", "SSL")


@dataclass
class TlsMeta:
    """Security settings observed in one TLS handshake message."""

    role: str  # "CLIENT" or "SERVER"
    cipher_suites: list[str] = field(default_factory=list)
    extension_types: list[str] = field(default_factory=list)
    signature_algorithms: list[str] = field(default_factory=list)
    supported_groups: list[str] = field(default_factory=list)
    alpn_protocols: list[str] = field(default_factory=list)
    ec_point_formats: list[str] = field(default_factory=list)
    handshake_bytes: int = 0
    cipher_suite_bytes: int = 0
    extension_bytes: int = 0


@dataclass
class ApplicationMeta:
    """Application-layer fields recognized on a packet, if any."""

    kind: AppKind = AppKind.NONE
    http_method: Optional[str] = None
    http_status: Optional[int] = None
    content_type: Optional[str] = None
    content_length: Optional[int] = None
    url: Optional[str] = None
    user_agent: Optional[str] = None
    server_name: Optional[str] = None
    dns_qname: Optional[str] = None
    dns_answers: list[tuple[str, str]] = field(default_factory=list)
    tls_fields: Optional[TlsMeta] = None
    tls_legacy: bool = False  # record-layer version below TLS 1.0


@dataclass
class RawPacket:
    """One decoded capture record, timestamps normalized to capture-relative seconds."""

    packet_index: int
    timestamp: float
    src_addr: str
    dst_addr: str
    src_port: Optional[int]
    dst_port: Optional[int]
    ip_proto: IpProto
    length: int
    tcp_flags: Optional[int] = None
    payload_len: int = 0
    ttl: Optional[int] = None
    icmp_type: Optional[int] = None
    icmp_code: Optional[int] = None
    app_meta: Optional[ApplicationMeta] = None

    @property
    def kind(self) -> AppKind:
        return self.app_meta.kind if self.app_meta else AppKind.NONE


@dataclass(frozen=True)
class CaptureLabel:
    capture_name: str
    class_label: ClassLabel = ClassLabel.UNLABELED


@dataclass
class WindowBatch:
    """All packets of one capture whose floor(timestamp / t) equals window_index."""

    window_index: int
    start: float
    end: float
    packets: list[RawPacket] = field(default_factory=list)


@dataclass(frozen=True)
class PairKey:
    """Identity of a (local host, remote server) connection within one capture."""

    capture_name: str
    source: str
    destination: str

    @property
    def host_key(self) -> tuple[str, str]:
        return (self.capture_name, self.source)


@dataclass(frozen=True)
class FlowId:
    cs_id: int
    pf_id: int


@dataclass
class PlanePoint:
    """One packet summarized inside a plane, index kept for traceability.

    detail is empty for control points ((index, flag-hex, ts, len)) and carries
    the request/response context for data points, e.g.
    ('Request', 'GET', 'Empty Content') or ('Response', '200', 'text/html').
    """

    packet_index: int
    tag: str
    detail: tuple[str, ...]
    timestamp: float
    length: int

    def as_tuple(self) -> tuple:
        return (self.packet_index, self.tag, *self.detail, self.timestamp, self.length)


@dataclass
class UrlRecord:
    fqdn_or_ip: str
    path_depth: int
    filename: Optional[str]
    extension: Optional[str]
    n_params: int
    n_values: int
    n_fragments: int
    has_encoded: bool
    raw_length: int
    raw: str = ""  # source string, kept so distinct-URL sets are exact


@dataclass
class InitialStats:
    """Per-flow statistics computed at encapsulation time."""

    total_bytes: int = 0
    total_sent: int = 0
    total_received: int = 0
    total_encrypted: int = 0
    encrypted_sent: int = 0
    encrypted_received: int = 0
    n_raw_tcp: int = 0
    n_raw_udp: int = 0
    n_icmp: int = 0
    n_dns: int = 0
    n_http: int = 0
    n_tls: int = 0
    n_ssl: int = 0
    duration: float = 0.0
    ttl_max: float = 0.0
    ttl_min: float = 0.0
    ttl_mean: float = 0.0
    ttl_sd: float = 0.0
    delta_max: float = 0.0
    delta_min: float = 0.0
    delta_mean: float = 0.0
    delta_sd: float = 0.0
    content_length_total: float = 0.0
    content_length_max: float = 0.0
    content_length_min: float = 0.0
    content_length_median: float = 0.0
    client_cs_bytes_max: float = 0.0
    client_cs_bytes_min: float = 0.0
    client_cs_bytes_median: float = 0.0
    server_cs_bytes_max: float = 0.0
    server_cs_bytes_min: float = 0.0
    server_cs_bytes_median: float = 0.0
    client_ext_bytes_max: float = 0.0
    client_ext_bytes_min: float = 0.0
    client_ext_bytes_median: float = 0.0
    server_ext_bytes_max: float = 0.0
    server_ext_bytes_min: float = 0.0
    server_ext_bytes_median: float = 0.0

    @property
    def n_total(self) -> int:
        return (self.n_raw_tcp + self.n_raw_udp + self.n_icmp + self.n_dns
                + self.n_http + self.n_tls + self.n_ssl)


@dataclass
class PairFlow:
    """The contextual flow record for one (host, destination) pair in one window."""

    flow_id: FlowId
    pair: PairKey
    time_window: tuple[float, float]
    epflag: set[str] = field(default_factory=set)
    tcp_control_plane: list[PlanePoint] = field(default_factory=list)
    tcp_data_plane: list[PlanePoint] = field(default_factory=list)
    udp_plane: list[PlanePoint] = field(default_factory=list)
    icmp_plane: list[PlanePoint] = field(default_factory=list)
    fqdns: list[tuple[str, list[str], list[str], Optional[float]]] = field(default_factory=list)
    urls: list[UrlRecord] = field(default_factory=list)
    http_servers: list[str] = field(default_factory=list)
    status_codes: list[str] = field(default_factory=list)
    content_types: list[str] = field(default_factory=list)
    user_agents: list[str] = field(default_factory=list)
    tls_client: Optional[TlsMeta] = None
    tls_server: Optional[TlsMeta] = None
    stats: InitialStats = field(default_factory=InitialStats)
    label: ClassLabel = ClassLabel.UNLABELED

    def epflag_string(self) -> str:
        return "+".join(sorted(self.epflag))

    @property
    def first_contact_time(self) -> float:
        """Connection start: first packet from control/UDP/ICMP planes, else first packet."""
        candidates = [p.timestamp for plane in
                      (self.tcp_control_plane, self.udp_plane, self.icmp_plane)
                      for p in plane]
        if candidates:
            return min(candidates)
        return min(p.timestamp for p in self.all_points())

    def all_points(self) -> list[PlanePoint]:
        pts = (self.tcp_control_plane + self.tcp_data_plane
               + self.udp_plane + self.icmp_plane)
        return sorted(pts, key=lambda p: (p.timestamp, p.packet_index))

    def n_dns_requests(self) -> int:
        return sum(1 for p in self.udp_plane if p.detail and p.detail[0] == "DNS Request")

    def n_resumed(self) -> int:
        """FIN-ACK (0x11) control points mark connection terminations."""
        return sum(1 for p in self.tcp_control_plane if p.tag == "0x11")

    def n_failures(self) -> int:
        """HTTP responses with 4xx/5xx status."""
        bad = 0
        for p in self.tcp_data_plane:
            if p.tag == "HTTP" and len(p.detail) >= 2 and p.detail[0] == "Response":
                try:
                    code = int(p.detail[1])
                except ValueError:
                    continue
                if 400 <= code < 600:
                    bad += 1
        return bad


def _plane_to_json(plane: list[PlanePoint]) -> list[list]:
    return [[p.packet_index, p.tag, list(p.detail), p.timestamp, p.length] for p in plane]


def _plane_from_json(rows: list[list]) -> list[PlanePoint]:
    return [PlanePoint(r[0], r[1], tuple(r[2]), r[3], r[4]) for r in rows]


def _tls_to_json(meta: Optional[TlsMeta]):
    return asdict(meta) if meta is not None else None


def _tls_from_json(obj) -> Optional[TlsMeta]:
    return TlsMeta(**obj) if obj is not None else None


def pairflow_to_obj(flow: PairFlow) -> dict:
    """Full JSON-serializable form; the interchange schema is documented in docs/FORMATS.md."""
    return {
        "flow_id": {"cs_id": flow.flow_id.cs_id, "pf_id": flow.flow_id.pf_id},
        "capture": flow.pair.capture_name,
        "source": flow.pair.source,
        "destination": flow.pair.destination,
        "time_window": list(flow.time_window),
        "epflag": flow.epflag_string(),
        "epflag_bits": {p: (p in flow.epflag) for p in PROTOCOLS},
        "tcp_control_plane": _plane_to_json(flow.tcp_control_plane),
        "tcp_data_plane": _plane_to_json(flow.tcp_data_plane),
        "udp_plane": _plane_to_json(flow.udp_plane),
        "icmp_plane": _plane_to_json(flow.icmp_plane),
        "fqdns": [[f, a, ns, age] for (f, a, ns, age) in flow.fqdns],
        "urls": [asdict(u) for u in flow.urls],
        "http_servers": flow.http_servers,
        "status_codes": flow.status_codes,
        "content_types": flow.content_types,
        "user_agents": flow.user_agents,
        "tls_client": _tls_to_json(flow.tls_client),
        "tls_server": _tls_to_json(flow.tls_server),
        "stats": asdict(flow.stats),
        "label": flow.label.value,
    }


def pairflow_from_obj(obj: dict) -> PairFlow:
    flow = PairFlow(
        flow_id=FlowId(obj["flow_id"]["cs_id"], obj["flow_id"]["pf_id"]),
        pair=PairKey(obj["capture"], obj["source"], obj["destination"]),
        time_window=tuple(obj["time_window"]),
        epflag={p for p, on in obj["epflag_bits"].items() if on},
        tcp_control_plane=_plane_from_json(obj["tcp_control_plane"]),
        tcp_data_plane=_plane_from_json(obj["tcp_data_plane"]),
        udp_plane=_plane_from_json(obj["udp_plane"]),
        icmp_plane=_plane_from_json(obj["icmp_plane"]),
        fqdns=[(f, a, ns, age) for f, a, ns, age in obj["fqdns"]],
        urls=[UrlRecord(**u) for u in obj["urls"]],
        http_servers=list(obj["http_servers"]),
        status_codes=list(obj["status_codes"]),
        content_types=list(obj["content_types"]),
        user_agents=list(obj["user_agents"]),
        tls_client=_tls_from_json(obj.get("tls_client")),
        tls_server=_tls_from_json(obj.get("tls_server")),
        stats=InitialStats(**obj["stats"]),
        label=ClassLabel(obj.get("label", "unlabeled")),
    )
    return flow


def dump_pairflow_line(flow: PairFlow) -> str:
    return json.dumps(pairflow_to_obj(flow), sort_keys=True, separators=(",", ":"))


def load_pairflow_line(line: str) -> PairFlow:
    return pairflow_from_obj(json.loads(line))
