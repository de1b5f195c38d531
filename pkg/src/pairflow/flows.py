"""Pair tracking, DNS back-attachment, plane separation and flow encapsulation.

A pair is any bidirectional (local host, remote server) conversation inside a
time window. All of its packets, across protocols, end up in one PairFlow
record: planes keep per-packet tuples for traceability, the stats block keeps
the initial statistical summary.
"""

from __future__ import annotations

import re
import statistics
from typing import Iterable, Optional

from .errors import EmptyFlow
from .records import (AppKind, FlowId, InitialStats, IpProto, PairFlow,
                      PairKey, PlanePoint, RawPacket, UrlRecord, WindowBatch)

_ENCODED_RE = re.compile(r"%[0-9a-fA-F]{2}")

TCP_SYN = 0x02
TCP_ACK = 0x10


def _is_dns(pkt: RawPacket) -> bool:
    return pkt.kind in (AppKind.DNS_REQUEST, AppKind.DNS_RESPONSE)


def track_pairs(batch: WindowBatch, capture_name: str,
                ) -> tuple[dict[PairKey, list[RawPacket]], list[RawPacket]]:
    """Group a window's packets by pair; DNS traffic is withheld for attach_dns.

    Orientation: the initiator (first pure SYN sender, else the sender of the
    earliest packet) becomes the source.
    """
    groups: dict[frozenset, list[RawPacket]] = {}
    dns_pool: list[RawPacket] = []
    for pkt in batch.packets:
        if _is_dns(pkt):
            dns_pool.append(pkt)
            continue
        groups.setdefault(frozenset((pkt.src_addr, pkt.dst_addr)), []).append(pkt)
    pairs: dict[PairKey, list[RawPacket]] = {}
    for packets in groups.values():
        source = None
        for pkt in packets:
            if (pkt.ip_proto is IpProto.TCP and pkt.tcp_flags is not None
                    and pkt.tcp_flags & TCP_SYN and not pkt.tcp_flags & TCP_ACK):
                source = pkt.src_addr
                break
        if source is None:
            source = packets[0].src_addr
        destination = next(a for a in (packets[0].src_addr, packets[0].dst_addr)
                           if a != source)
        pairs[PairKey(capture_name, source, destination)] = packets
    return pairs, dns_pool


def attach_dns(pairs: dict[PairKey, list[RawPacket]],
               dns_pool: list[RawPacket]) -> dict[PairKey, list[RawPacket]]:
    """Attach DNS responses resolving each pair's destination, plus their requests.

    A response answering multiple contacted destinations is attached to every
    matching pair. Pool packets that resolve nothing are dropped.
    """
    responses = [p for p in dns_pool if p.kind is AppKind.DNS_RESPONSE]
    requests = [p for p in dns_pool if p.kind is AppKind.DNS_REQUEST]
    requests_by_name: dict[str, list[RawPacket]] = {}
    for req in requests:
        if req.app_meta and req.app_meta.dns_qname:
            requests_by_name.setdefault(req.app_meta.dns_qname, []).append(req)
    for pair, packets in pairs.items():
        attached: list[RawPacket] = []
        seen: set[int] = set()
        for resp in responses:
            answers = {v for t, v in resp.app_meta.dns_answers if t in ("A", "AAAA")}
            if pair.destination not in answers:
                continue
            if id(resp) not in seen:
                attached.append(resp)
                seen.add(id(resp))
            for req in requests_by_name.get(resp.app_meta.dns_qname, []):
                if id(req) not in seen:
                    attached.append(req)
                    seen.add(id(req))
        if attached:
            packets.extend(attached)
            packets.sort(key=lambda p: (p.timestamp, p.packet_index))
    return pairs


def assign_flow_id(pair: PairKey, registry) -> FlowId:
    """Known pair: next pf_id under its cs_id; unknown pair: fresh cs_id, pf_id 0."""
    return registry.assign(pair)


def _control_point(pkt: RawPacket) -> PlanePoint:
    return PlanePoint(pkt.packet_index, f"0x{(pkt.tcp_flags or 0):02x}", (),
                      pkt.timestamp, pkt.length)


def _data_detail(pkt: RawPacket) -> tuple[str, tuple[str, ...]]:
    meta = pkt.app_meta
    if meta is None:
        return "TCP", ("Raw",)
    if meta.kind is AppKind.HTTP_REQUEST:
        return "HTTP", ("Request", meta.http_method or "?",
                        meta.content_type or "Empty Content")
    if meta.kind is AppKind.HTTP_RESPONSE:
        return "HTTP", ("Response", str(meta.http_status),
                        meta.content_type or "Empty Content")
    if meta.kind is AppKind.TLS_HANDSHAKE:
        return ("SSL" if meta.tls_legacy else "TLS"), ("Handshake",)
    if meta.kind is AppKind.TLS_APPDATA:
        return ("SSL" if meta.tls_legacy else "TLS"), ("Application Data",)
    return "TCP", ("Raw",)


def separate_planes(packets: list[RawPacket],
                    ) -> tuple[list[PlanePoint], list[PlanePoint],
                               list[PlanePoint], list[PlanePoint]]:
    """Split a pair's packets into (control, data, udp, icmp) plane point lists.

    Payload presence is the discriminator for TCP: zero-payload packets go to
    the control sub-plane tagged with their flag byte in hex.
    """
    control: list[PlanePoint] = []
    data: list[PlanePoint] = []
    udp: list[PlanePoint] = []
    icmp: list[PlanePoint] = []
    for pkt in packets:
        if pkt.ip_proto is IpProto.TCP:
            if pkt.payload_len > 0:
                tag, detail = _data_detail(pkt)
                data.append(PlanePoint(pkt.packet_index, tag, detail,
                                       pkt.timestamp, pkt.length))
            else:
                control.append(_control_point(pkt))
        elif pkt.ip_proto is IpProto.UDP:
            if pkt.kind is AppKind.DNS_REQUEST:
                point = PlanePoint(pkt.packet_index, "DNS", ("DNS Request",),
                                   pkt.timestamp, pkt.length)
            elif pkt.kind is AppKind.DNS_RESPONSE:
                point = PlanePoint(pkt.packet_index, "DNS", ("DNS Response",),
                                   pkt.timestamp, pkt.length)
            else:
                point = PlanePoint(pkt.packet_index, "UDP", ("Raw",),
                                   pkt.timestamp, pkt.length)
            udp.append(point)
        elif pkt.ip_proto is IpProto.ICMP:
            icmp.append(PlanePoint(pkt.packet_index, "ICMP",
                                   (str(pkt.icmp_type or 0), str(pkt.icmp_code or 0)),
                                   pkt.timestamp, pkt.length))
    return control, data, udp, icmp


def parse_url_record(raw: str) -> UrlRecord:
    """Lexical URL decomposition into host, depth, filename, params/values/fragments."""
    rest = raw
    for scheme in ("http://", "https://"):
        if rest.lower().startswith(scheme):
            rest = rest[len(scheme):]
            break
    frag_parts = rest.split("#")
    rest = frag_parts[0]
    n_fragments = sum(1 for f in frag_parts[1:] if f)
    rest, _, query = rest.partition("?")
    n_params = 0
    n_values = 0
    if query:
        for part in query.split("&"):
            if not part:
                continue
            key, eq, value = part.partition("=")
            if key:
                n_params += 1
            if eq and value:
                n_values += 1
    host, slash, path = rest.partition("/")
    host = host.split(":")[0]
    segments = [s for s in path.split("/") if s] if slash else []
    filename = None
    extension = None
    if segments and "." in segments[-1]:
        filename = segments[-1]
        segments = segments[:-1]
        ext = filename.rsplit(".", 1)[1]
        extension = ext if ext else None
    return UrlRecord(
        fqdn_or_ip=host,
        path_depth=len(segments),
        filename=filename,
        extension=extension,
        n_params=n_params,
        n_values=n_values,
        n_fragments=n_fragments,
        has_encoded=bool(_ENCODED_RE.search(raw)),
        raw_length=len(raw),
        raw=raw,
    )


def _spread(values: list[float]) -> tuple[float, float, float, float]:
    if not values:
        return 0.0, 0.0, 0.0, 0.0
    sd = statistics.pstdev(values) if len(values) > 1 else 0.0
    return max(values), min(values), statistics.fmean(values), sd


def _extent(values: list[float]) -> tuple[float, float, float]:
    if not values:
        return 0.0, 0.0, 0.0
    return max(values), min(values), float(statistics.median(values))


def _classify_packet(pkt: RawPacket) -> str:
    kind = pkt.kind
    if kind in (AppKind.HTTP_REQUEST, AppKind.HTTP_RESPONSE):
        return "HTTP"
    if kind in (AppKind.TLS_HANDSHAKE, AppKind.TLS_APPDATA):
        return "SSL" if pkt.app_meta.tls_legacy else "TLS"
    if kind in (AppKind.DNS_REQUEST, AppKind.DNS_RESPONSE):
        return "DNS"
    if pkt.ip_proto is IpProto.TCP:
        return "TCP"
    if pkt.ip_proto is IpProto.UDP:
        return "UDP"
    if pkt.ip_proto is IpProto.ICMP:
        return "ICMP"
    return "OTHER"


def _compute_stats(pair: PairKey, packets: list[RawPacket]) -> InitialStats:
    stats = InitialStats()
    deltas: list[float] = []
    ttls: list[float] = []
    content_lengths: list[float] = []
    client_cs, server_cs, client_ext, server_ext = [], [], [], []
    ordered = sorted(packets, key=lambda p: (p.timestamp, p.packet_index))
    prev_ts = None
    for pkt in ordered:
        sent = pkt.src_addr == pair.source
        stats.total_bytes += pkt.length
        if sent:
            stats.total_sent += pkt.length
        else:
            stats.total_received += pkt.length
        proto = _classify_packet(pkt)
        if proto == "HTTP":
            stats.n_http += 1
        elif proto == "TLS":
            stats.n_tls += 1
        elif proto == "SSL":
            stats.n_ssl += 1
        elif proto == "DNS":
            stats.n_dns += 1
        elif proto == "TCP":
            stats.n_raw_tcp += 1
        elif proto == "UDP":
            stats.n_raw_udp += 1
        elif proto == "ICMP":
            stats.n_icmp += 1
        if proto in ("TLS", "SSL"):
            stats.total_encrypted += pkt.length
            if sent:
                stats.encrypted_sent += pkt.length
            else:
                stats.encrypted_received += pkt.length
        if pkt.ttl is not None:
            ttls.append(float(pkt.ttl))
        meta = pkt.app_meta
        if meta is not None and meta.content_length is not None:
            content_lengths.append(float(meta.content_length))
        if meta is not None and meta.tls_fields is not None:
            tls = meta.tls_fields
            if tls.role == "CLIENT":
                client_cs.append(float(tls.cipher_suite_bytes))
                client_ext.append(float(tls.extension_bytes))
            else:
                server_cs.append(float(tls.cipher_suite_bytes))
                server_ext.append(float(tls.extension_bytes))
        if prev_ts is not None:
            deltas.append(pkt.timestamp - prev_ts)
        prev_ts = pkt.timestamp
    stats.duration = ordered[-1].timestamp - ordered[0].timestamp
    stats.ttl_max, stats.ttl_min, stats.ttl_mean, stats.ttl_sd = _spread(ttls)
    (stats.delta_max, stats.delta_min,
     stats.delta_mean, stats.delta_sd) = _spread(deltas)
    stats.content_length_total = float(sum(content_lengths))
    (stats.content_length_max, stats.content_length_min,
     stats.content_length_median) = _extent(content_lengths)
    (stats.client_cs_bytes_max, stats.client_cs_bytes_min,
     stats.client_cs_bytes_median) = _extent(client_cs)
    (stats.server_cs_bytes_max, stats.server_cs_bytes_min,
     stats.server_cs_bytes_median) = _extent(server_cs)
    (stats.client_ext_bytes_max, stats.client_ext_bytes_min,
     stats.client_ext_bytes_median) = _extent(client_ext)
    (stats.server_ext_bytes_max, stats.server_ext_bytes_min,
     stats.server_ext_bytes_median) = _extent(server_ext)
    return stats


def encapsulate(flow_id: FlowId, pair: PairKey, packets: list[RawPacket],
                window: tuple[float, float],
                whois_ages: Optional[dict[str, float]] = None) -> PairFlow:
    """Build the full PairFlow record for one (pair, window)."""
    if not packets:
        raise EmptyFlow(f"no packets for {pair}")
    control, data, udp, icmp = separate_planes(packets)
    flow = PairFlow(flow_id=flow_id, pair=pair, time_window=window,
                    tcp_control_plane=control, tcp_data_plane=data,
                    udp_plane=udp, icmp_plane=icmp)
    seen_fqdn: set[str] = set()
    servers: list[str] = []
    codes: list[str] = []
    ctypes: list[str] = []
    uas: list[str] = []
    for pkt in packets:
        proto = _classify_packet(pkt)
        if proto in ("TCP", "HTTP", "TLS", "SSL"):
            flow.epflag.add("TCP")
        if proto in ("UDP", "DNS"):
            flow.epflag.add("UDP")
        if proto in ("HTTP", "TLS", "SSL", "DNS", "ICMP"):
            flow.epflag.add(proto)
        meta = pkt.app_meta
        if meta is None:
            continue
        if meta.kind is AppKind.DNS_RESPONSE and meta.dns_qname:
            if meta.dns_qname not in seen_fqdn:
                seen_fqdn.add(meta.dns_qname)
                a_recs = [v for t, v in meta.dns_answers if t in ("A", "AAAA")]
                ns_recs = [v for t, v in meta.dns_answers if t == "NS"]
                age = (whois_ages or {}).get(meta.dns_qname)
                flow.fqdns.append((meta.dns_qname, a_recs, ns_recs, age))
        elif meta.kind is AppKind.HTTP_REQUEST:
            if meta.url:
                flow.urls.append(parse_url_record(meta.url))
            if meta.server_name and meta.server_name not in servers:
                servers.append(meta.server_name)
            if meta.user_agent and meta.user_agent not in uas:
                uas.append(meta.user_agent)
        elif meta.kind is AppKind.HTTP_RESPONSE:
            if meta.server_name and meta.server_name not in servers:
                servers.append(meta.server_name)
            code = str(meta.http_status)
            if code not in codes:
                codes.append(code)
            if meta.content_type and meta.content_type not in ctypes:
                ctypes.append(meta.content_type)
        elif meta.kind is AppKind.TLS_HANDSHAKE and meta.tls_fields is not None:
            if meta.tls_fields.role == "CLIENT" and flow.tls_client is None:
                flow.tls_client = meta.tls_fields
            elif meta.tls_fields.role == "SERVER" and flow.tls_server is None:
                flow.tls_server = meta.tls_fields
    flow.http_servers = servers
    flow.status_codes = codes
    flow.content_types = ctypes
    flow.user_agents = uas
    flow.stats = _compute_stats(pair, packets)
    return flow


def hygiene_filter(flows: Iterable[PairFlow],
                   ) -> tuple[list[PairFlow], dict[str, int]]:
    """Drop flows without data transfer and flows whose TCP handshake never completed."""
    kept: list[PairFlow] = []
    report = {"FailedTCP": 0, "EmptyData": 0}
    for flow in flows:
        syn_idx = None
        for p in flow.tcp_control_plane:
            if p.tag in ("0x02", "0x12"):
                syn_idx = p.packet_index
                break
        if syn_idx is not None:
            completed = any(
                p.packet_index > syn_idx
                and int(p.tag, 16) & TCP_ACK and not int(p.tag, 16) & TCP_SYN
                for p in flow.tcp_control_plane
            ) or any(p.packet_index > syn_idx for p in flow.tcp_data_plane)
            if not completed:
                report["FailedTCP"] += 1
                continue
        if not flow.tcp_data_plane:
            report["EmptyData"] += 1
            continue
        kept.append(flow)
    return kept, report
