"""Profile pivoting: Host, Destination and URL aggregates over a recompute interval.

Host and Destination pivots partition the flow set; the URL pivot is a cover
(a flow lands in one profile per distinct FQDN/IP it accessed, keyed by the
destination IP when it accessed nothing by name).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .records import FlowId, PairFlow, UrlRecord


def _mean_data_gap(flow: PairFlow) -> float | None:
    times = [p.timestamp for p in flow.tcp_data_plane]
    if len(times) < 2:
        return None
    times.sort()
    gaps = [b - a for a, b in zip(times, times[1:])]
    return sum(gaps) / len(gaps)


@dataclass
class HostProfile:
    host_key: tuple[str, str]
    flows: list[FlowId] = field(default_factory=list)
    connection_start_times: list[float] = field(default_factory=list)
    ua_strings: list[str] = field(default_factory=list)
    resumed_per_flow: list[int] = field(default_factory=list)
    dns_requests_per_flow: list[int] = field(default_factory=list)
    ip_only_connections: int = 0
    fqdn_connections: int = 0

    def add_flow(self, flow: PairFlow) -> None:
        self.flows.append(flow.flow_id)
        self.connection_start_times.append(flow.first_contact_time)
        self.ua_strings.extend(flow.user_agents)
        self.resumed_per_flow.append(flow.n_resumed())
        self.dns_requests_per_flow.append(flow.n_dns_requests())
        if flow.fqdns:
            self.fqdn_connections += 1
        else:
            self.ip_only_connections += 1


@dataclass
class DestinationProfile:
    dest_key: str
    flows: list[FlowId] = field(default_factory=list)
    connected_hosts: set[tuple[str, str]] = field(default_factory=set)
    sent_bytes: list[int] = field(default_factory=list)
    received_bytes: list[int] = field(default_factory=list)
    idle_times: list[float] = field(default_factory=list)
    packet_failures: list[int] = field(default_factory=list)
    resumed_per_flow: list[int] = field(default_factory=list)
    dns_requests_per_flow: list[int] = field(default_factory=list)
    dns_ratio_per_flow: list[float] = field(default_factory=list)
    distinct_urls: set[str] = field(default_factory=set)

    def add_flow(self, flow: PairFlow) -> None:
        self.flows.append(flow.flow_id)
        self.connected_hosts.add(flow.pair.host_key)
        self.sent_bytes.append(flow.stats.total_sent)
        self.received_bytes.append(flow.stats.total_received)
        gap = _mean_data_gap(flow)
        if gap is not None:
            self.idle_times.append(gap)
        self.packet_failures.append(flow.n_failures())
        self.resumed_per_flow.append(flow.n_resumed())
        n_req = flow.n_dns_requests()
        self.dns_requests_per_flow.append(n_req)
        n_total = flow.stats.n_total
        self.dns_ratio_per_flow.append(n_req / n_total if n_total else 0.0)
        for url in flow.urls:
            self.distinct_urls.add(url.raw)


@dataclass
class URLProfile:
    url_key: str
    flows: list[FlowId] = field(default_factory=list)
    urls: list[UrlRecord] = field(default_factory=list)
    distinct_urls: set[str] = field(default_factory=set)

    def add_flow(self, flow: PairFlow, urls: list[UrlRecord]) -> None:
        self.flows.append(flow.flow_id)
        for url in urls:
            self.urls.append(url)
            self.distinct_urls.add(url.raw)


def url_keys_for_flow(flow: PairFlow) -> dict[str, list[UrlRecord]]:
    """FQDN/IP keys this flow accessed, with the URL records that belong to each."""
    keys: dict[str, list[UrlRecord]] = {}
    for url in flow.urls:
        key = url.fqdn_or_ip or flow.pair.destination
        keys.setdefault(key, []).append(url)
    for fqdn, _a, _ns, _age in flow.fqdns:
        keys.setdefault(fqdn, [])
    if not keys:
        keys[flow.pair.destination] = []
    return keys


def pivot_profiles(flows: Iterable[PairFlow],
                   ) -> tuple[dict[tuple[str, str], HostProfile],
                              dict[str, DestinationProfile],
                              dict[str, URLProfile]]:
    """Group one recompute interval's flows into the three profile maps."""
    hosts: dict[tuple[str, str], HostProfile] = {}
    dests: dict[str, DestinationProfile] = {}
    urls: dict[str, URLProfile] = {}
    for flow in flows:
        hkey = flow.pair.host_key
        if hkey not in hosts:
            hosts[hkey] = HostProfile(hkey)
        hosts[hkey].add_flow(flow)
        dkey = flow.pair.destination
        if dkey not in dests:
            dests[dkey] = DestinationProfile(dkey)
        dests[dkey].add_flow(flow)
        for ukey, url_records in url_keys_for_flow(flow).items():
            if ukey not in urls:
                urls[ukey] = URLProfile(ukey)
            urls[ukey].add_flow(flow, url_records)
    return hosts, dests, urls
