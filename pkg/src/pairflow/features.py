"""The 102-slot feature space: flow, host, destination and URL features plus mode masks.

Slot IDs are fixed and documented in docs/FORMATS.md. Slots 42-45 (packet TTL)
are computed into PairFlow stats but never into feature vectors: TTL depends on
the capture platform, so it is hard-excluded from every classifier mask.
Empty-denominator ratios come back as 0 with the slot's presence flag cleared,
never as NaN, so tree splits stay well defined.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import EmptySeries
from .profiles import (DestinationProfile, HostProfile, URLProfile,
                       pivot_profiles)
from .records import PairFlow, PlanePoint

N_FEATURES = 102

HTTP_MODE = "http"
HTTPS_MODE = "https"
MODES = (HTTP_MODE, HTTPS_MODE)

# (id, name, kind, group); kinds drive the range invariants
# (proportion in [0,1]; everything else just nonnegative where sensible).
FEATURE_TABLE: list[tuple[int, str, str, str]] = [
    (1, "total_bytes", "bytes", "flow"),
    (2, "sent_received_ratio", "quotient", "flow"),
    (3, "ratio_raw_tcp", "proportion", "flow"),
    (4, "ratio_raw_udp", "proportion", "flow"),
    (5, "ratio_icmp", "proportion", "flow"),
    (6, "ratio_dns", "proportion", "flow"),
    (7, "ratio_http", "proportion", "flow"),
    (8, "ratio_tls", "proportion", "flow"),
    (9, "ratio_ssl", "proportion", "flow"),
    (10, "ratio_status_2xx", "proportion", "flow"),
    (11, "ratio_status_3xx", "proportion", "flow"),
    (12, "ratio_status_4xx", "proportion", "flow"),
    (13, "ratio_status_5xx", "proportion", "flow"),
    (14, "ratio_get", "proportion", "flow"),
    (15, "ratio_post", "proportion", "flow"),
    (16, "content_length_total", "bytes", "flow"),
    (17, "content_length_max", "bytes", "flow"),
    (18, "content_length_min", "bytes", "flow"),
    (19, "content_length_median", "bytes", "flow"),
    (20, "ratio_ct_javascript", "proportion", "flow"),
    (21, "ratio_ct_html", "proportion", "flow"),
    (22, "ratio_ct_image", "proportion", "flow"),
    (23, "ratio_ct_video", "proportion", "flow"),
    (24, "ratio_ct_application", "proportion", "flow"),
    (25, "ratio_ct_text", "proportion", "flow"),
    (26, "ratio_ct_empty", "proportion", "flow"),
    (27, "n_resumed", "count", "flow"),
    (28, "sma_n_below", "count", "flow"),
    (29, "sma_n_above", "count", "flow"),
    (30, "sma_ratio_below", "proportion", "flow"),
    (31, "sma_ratio_above", "proportion", "flow"),
    (32, "sma_n_outliers", "count", "flow"),
    (33, "sma_ratio_outliers", "proportion", "flow"),
    (34, "sma_outlier_magnitude_max", "bytes", "flow"),
    (35, "sma_outlier_magnitude_min", "bytes", "flow"),
    (36, "sma_outlier_magnitude_mean", "bytes", "flow"),
    (37, "sma_outlier_magnitude_sd", "bytes", "flow"),
    (38, "idle_time_max", "seconds", "flow"),
    (39, "idle_time_min", "seconds", "flow"),
    (40, "idle_time_mean", "seconds", "flow"),
    (41, "active_duration", "seconds", "flow"),
    (42, "ttl_max", "other", "flow"),
    (43, "ttl_min", "other", "flow"),
    (44, "ttl_mean", "other", "flow"),
    (45, "ttl_sd", "other", "flow"),
    (46, "delta_max", "seconds", "flow"),
    (47, "delta_min", "seconds", "flow"),
    (48, "delta_mean", "seconds", "flow"),
    (49, "delta_sd", "seconds", "flow"),
    (50, "n_dns_requests", "count", "flow"),
    (51, "mtdsc_max", "seconds", "host"),
    (52, "mtdsc_min", "seconds", "host"),
    (53, "mtdsc_mean", "seconds", "host"),
    (54, "ratio_ip_only_to_fqdn", "quotient", "host"),
    (55, "host_resumed_max", "count", "host"),
    (56, "host_resumed_min", "count", "host"),
    (57, "host_resumed_mean", "count", "host"),
    (58, "host_dns_per_flow_mean", "count", "host"),
    (59, "host_distinct_uas", "count", "host"),
    (60, "host_ua_popularity_navg", "proportion", "host"),
    (61, "host_frac_ua_1", "proportion", "host"),
    (62, "host_frac_ua_5", "proportion", "host"),
    (63, "host_ratio_uas_to_flows", "quotient", "host"),
    (64, "dest_n_hosts", "count", "destination"),
    (65, "dest_recv_sent_ratio_max", "quotient", "destination"),
    (66, "dest_recv_sent_ratio_min", "quotient", "destination"),
    (67, "dest_recv_sent_ratio_mean", "quotient", "destination"),
    (68, "dest_idle_max", "seconds", "destination"),
    (69, "dest_idle_min", "seconds", "destination"),
    (70, "dest_idle_mean", "seconds", "destination"),
    (71, "dest_resumed_per_flow_mean", "count", "destination"),
    (72, "dest_distinct_urls", "count", "destination"),
    (73, "dest_failures_max", "count", "destination"),
    (74, "dest_failures_min", "count", "destination"),
    (75, "dest_failures_mean", "count", "destination"),
    (76, "dest_dns_per_flow_max", "count", "destination"),
    (77, "dest_dns_per_flow_min", "count", "destination"),
    (78, "dest_dns_per_flow_mean", "count", "destination"),
    (79, "dest_dns_ratio_max", "proportion", "destination"),
    (80, "dest_dns_ratio_min", "proportion", "destination"),
    (81, "dest_dns_ratio_mean", "proportion", "destination"),
    (82, "url_frac_filename", "proportion", "url"),
    (83, "url_frac_filename_exe", "proportion", "url"),
    (84, "url_distinct_extensions", "count", "url"),
    (85, "url_length_max", "count", "url"),
    (86, "url_length_min", "count", "url"),
    (87, "url_length_mean", "count", "url"),
    (88, "url_depth_max", "count", "url"),
    (89, "url_depth_min", "count", "url"),
    (90, "url_depth_mean", "count", "url"),
    (91, "url_params_max", "count", "url"),
    (92, "url_params_min", "count", "url"),
    (93, "url_params_mean", "count", "url"),
    (94, "url_values_max", "count", "url"),
    (95, "url_values_min", "count", "url"),
    (96, "url_values_mean", "count", "url"),
    (97, "url_fragments_max", "count", "url"),
    (98, "url_fragments_min", "count", "url"),
    (99, "url_fragments_mean", "count", "url"),
    (100, "url_frac_query", "proportion", "url"),
    (101, "url_n_encoded", "count", "url"),
    (102, "url_n_urls", "count", "url"),
]

FEATURE_NAMES = {fid: name for fid, name, _, _ in FEATURE_TABLE}
FEATURE_KINDS = {fid: kind for fid, _, kind, _ in FEATURE_TABLE}

# TTL never reaches a classifier, in either mode.
ALWAYS_MASKED = frozenset({42, 43, 44, 45})

# Everything derived from plaintext HTTP: status/method/content features,
# UA features, destination failure and URL-count features, the URL profile.
HTTPS_MASKED = (frozenset(range(10, 27)) | frozenset(range(59, 64))
                | frozenset({72, 73, 74, 75}) | frozenset(range(82, 103)))

FLOW_SLOTS = frozenset(range(1, 51))
PROFILE_SLOTS = frozenset(range(51, 103))


def masked_slots(mode: str) -> frozenset[int]:
    if mode == HTTP_MODE:
        return ALWAYS_MASKED
    if mode == HTTPS_MODE:
        return ALWAYS_MASKED | HTTPS_MASKED
    raise ValueError(f"unknown mode {mode!r}")


def active_slots(mode: str) -> list[int]:
    off = masked_slots(mode)
    return [fid for fid in range(1, N_FEATURES + 1) if fid not in off]


def mask_table() -> list[dict]:
    """Slot-by-slot availability table, serialized next to features.csv."""
    rows = []
    for fid, name, kind, group in FEATURE_TABLE:
        rows.append({
            "id": fid, "name": name, "kind": kind, "group": group,
            "http": fid not in masked_slots(HTTP_MODE),
            "https": fid not in masked_slots(HTTPS_MODE),
        })
    return rows


@dataclass
class FeatureVector:
    """102 slots plus per-slot presence flags (False = undefined or masked off)."""

    values: np.ndarray
    present: np.ndarray
    mask: str = HTTP_MODE
    provenance: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "FeatureVector":
        return cls(values=np.zeros(N_FEATURES), present=np.zeros(N_FEATURES, dtype=bool))

    def set(self, fid: int, value: float, present: bool = True) -> None:
        self.values[fid - 1] = float(value)
        self.present[fid - 1] = present

    def get(self, fid: int) -> float:
        return float(self.values[fid - 1])

    def copy(self) -> "FeatureVector":
        return FeatureVector(self.values.copy(), self.present.copy(),
                             self.mask, dict(self.provenance))


@dataclass
class SmaSeries:
    sample_rate: float
    points: list[tuple[int, float]]
    k: int
    sma_values: list[float]


def _bucket_index(timestamp: float, rate: float) -> int:
    """Packets between two sampling events combine into the later event's point."""
    return int(math.ceil(timestamp / rate - 1e-12))


def build_sma(data_plane: list[PlanePoint], sample_rate: float, k: int) -> SmaSeries:
    """Bucket data-plane bytes per sampling interval and take the trailing-k mean."""
    if sample_rate <= 0 or k < 1:
        raise ValueError("sample_rate must be positive and k at least 1")
    if not data_plane:
        raise EmptySeries("no data packets")
    sums: dict[int, float] = {}
    for p in data_plane:
        idx = _bucket_index(p.timestamp, sample_rate)
        sums[idx] = sums.get(idx, 0.0) + p.length
    first, last = min(sums), max(sums)
    points = [(i, sums.get(i, 0.0)) for i in range(first, last + 1)]
    values = [v for _, v in points]
    sma_values = []
    running = 0.0
    for n, v in enumerate(values):
        running += v
        if n >= k:
            running -= values[n - k]
        width = min(n + 1, k)
        sma_values.append(running / width)
    return SmaSeries(sample_rate=sample_rate, points=points, k=k, sma_values=sma_values)


def sma_features(series: SmaSeries) -> tuple[float, ...]:
    """(n_below, n_above, ratio_below, ratio_above, n_outliers, ratio_outliers,
    magnitude max/min/mean/sd). Points equal to their own SMA count as neither."""
    n = len(series.points)
    n_below = n_above = n_out = 0
    magnitudes: list[float] = []
    for (_, p), avg in zip(series.points, series.sma_values):
        if p < avg:
            n_below += 1
        elif p > avg:
            n_above += 1
        if p > 2 * avg:
            n_out += 1
            magnitudes.append(p - avg)
    mag_max = max(magnitudes) if magnitudes else 0.0
    mag_min = min(magnitudes) if magnitudes else 0.0
    mag_mean = statistics.fmean(magnitudes) if magnitudes else 0.0
    mag_sd = statistics.pstdev(magnitudes) if len(magnitudes) > 1 else 0.0
    return (float(n_below), float(n_above), n_below / n, n_above / n,
            float(n_out), n_out / n, mag_max, mag_min, mag_mean, mag_sd)


def idle_time_features(data_plane: list[PlanePoint]) -> tuple[float, float, float, bool]:
    """Gaps between consecutive data packets only; (0,0,0,absent) below 2 packets."""
    times = sorted(p.timestamp for p in data_plane)
    if len(times) < 2:
        return 0.0, 0.0, 0.0, False
    gaps = [b - a for a, b in zip(times, times[1:])]
    return max(gaps), min(gaps), statistics.fmean(gaps), True


def mtdsc(connection_start_times: list[float]) -> tuple[float, float, float, bool]:
    """Gaps between a host's consecutive connection starts; flagged absent below 2."""
    times = sorted(connection_start_times)
    if len(times) < 2:
        return 0.0, 0.0, 0.0, False
    gaps = [b - a for a, b in zip(times, times[1:])]
    return max(gaps), min(gaps), statistics.fmean(gaps), True


def _set_stats3(vec: FeatureVector, first_id: int, values: list[float]) -> None:
    if not values:
        vec.set(first_id, 0.0, False)
        vec.set(first_id + 1, 0.0, False)
        vec.set(first_id + 2, 0.0, False)
        return
    vec.set(first_id, max(values))
    vec.set(first_id + 1, min(values))
    vec.set(first_id + 2, statistics.fmean(values))


_CT_CATEGORIES = ("javascript", "html", "image", "video", "application", "text")


def _content_category(content_type: Optional[str]) -> str:
    if not content_type or content_type == "Empty Content":
        return "empty"
    ct = content_type.lower()
    if "javascript" in ct:
        return "javascript"
    if "html" in ct:
        return "html"
    if ct.startswith("image"):
        return "image"
    if ct.startswith("video"):
        return "video"
    if ct.startswith("application"):
        return "application"
    if ct.startswith("text"):
        return "text"
    return "empty"


def flow_features(flow: PairFlow, sma_rate: float = 1.0,
                  sma_k: Optional[int] = None) -> FeatureVector:
    """Slots 1-50 from one flow; profile slots stay absent until a recompute."""
    vec = FeatureVector.empty()
    vec.provenance = {"flow_id": (flow.flow_id.cs_id, flow.flow_id.pf_id)}
    stats = flow.stats
    vec.set(1, stats.total_bytes)
    if stats.total_received > 0:
        vec.set(2, stats.total_sent / stats.total_received)
    else:
        vec.set(2, 0.0, False)
    n_total = stats.n_total
    for fid, count in zip(range(3, 10),
                          (stats.n_raw_tcp, stats.n_raw_udp, stats.n_icmp,
                           stats.n_dns, stats.n_http, stats.n_tls, stats.n_ssl)):
        if n_total:
            vec.set(fid, count / n_total)
        else:
            vec.set(fid, 0.0, False)

    requests = []
    responses = []
    for p in flow.tcp_data_plane:
        if p.tag != "HTTP" or not p.detail:
            continue
        if p.detail[0] == "Request":
            requests.append(p)
        elif p.detail[0] == "Response":
            responses.append(p)
    if responses:
        classes = {"2": 0, "3": 0, "4": 0, "5": 0}
        for p in responses:
            digit = p.detail[1][:1]
            if digit in classes:
                classes[digit] += 1
        for fid, digit in zip(range(10, 14), "2345"):
            vec.set(fid, classes[digit] / len(responses))
    else:
        for fid in range(10, 14):
            vec.set(fid, 0.0, False)
    if requests:
        n_get = sum(1 for p in requests if p.detail[1] == "GET")
        n_post = sum(1 for p in requests if p.detail[1] == "POST")
        vec.set(14, n_get / len(requests))
        vec.set(15, n_post / len(requests))
    else:
        vec.set(14, 0.0, False)
        vec.set(15, 0.0, False)

    has_cl = stats.content_length_total > 0 or stats.content_length_max > 0
    vec.set(16, stats.content_length_total, has_cl)
    vec.set(17, stats.content_length_max, has_cl)
    vec.set(18, stats.content_length_min, has_cl)
    vec.set(19, stats.content_length_median, has_cl)

    if responses:
        counts = {cat: 0 for cat in _CT_CATEGORIES}
        counts["empty"] = 0
        for p in responses:
            ct = p.detail[2] if len(p.detail) > 2 else None
            counts[_content_category(ct)] += 1
        for fid, cat in zip(range(20, 27), (*_CT_CATEGORIES, "empty")):
            vec.set(fid, counts[cat] / len(responses))
    else:
        for fid in range(20, 27):
            vec.set(fid, 0.0, False)

    vec.set(27, flow.n_resumed())

    window_span = flow.time_window[1] - flow.time_window[0]
    k = sma_k if sma_k is not None else max(1, int(round(window_span / sma_rate)))
    try:
        series = build_sma(flow.tcp_data_plane, sma_rate, k)
        sma_vals = sma_features(series)
        for fid, value in zip(range(28, 38), sma_vals):
            vec.set(fid, value)
    except EmptySeries:
        for fid in range(28, 38):
            vec.set(fid, 0.0, False)

    idle_max, idle_min, idle_mean, ok = idle_time_features(flow.tcp_data_plane)
    vec.set(38, idle_max, ok)
    vec.set(39, idle_min, ok)
    vec.set(40, idle_mean, ok)

    if flow.tcp_data_plane:
        times = [p.timestamp for p in flow.tcp_data_plane]
        vec.set(41, max(times) - min(times))
    else:
        vec.set(41, 0.0, False)

    for fid in range(42, 46):  # TTL stays out of every vector
        vec.set(fid, 0.0, False)

    has_delta = flow.stats.n_total >= 2
    vec.set(46, stats.delta_max, has_delta)
    vec.set(47, stats.delta_min, has_delta)
    vec.set(48, stats.delta_mean, has_delta)
    vec.set(49, stats.delta_sd, has_delta)
    vec.set(50, flow.n_dns_requests())
    return vec


@dataclass
class UaStats:
    """Enterprise-wide UA incidence: how many hosts use each UA string."""

    ua_host_counts: dict[str, int]
    n_hosts: int

    @classmethod
    def from_hosts(cls, hosts: Iterable[HostProfile]) -> "UaStats":
        counts: dict[str, int] = {}
        n = 0
        for host in hosts:
            n += 1
            for ua in set(host.ua_strings):
                counts[ua] = counts.get(ua, 0) + 1
        return cls(ua_host_counts=counts, n_hosts=n)


def host_features(host: HostProfile, enterprise: UaStats) -> FeatureVector:
    """Slots 51-63; UA popularity uses only domain-invariant string statistics."""
    vec = FeatureVector.empty()
    vec.provenance = {"host_key": host.host_key}
    m_max, m_min, m_mean, ok = mtdsc(host.connection_start_times)
    vec.set(51, m_max, ok)
    vec.set(52, m_min, ok)
    vec.set(53, m_mean, ok)
    if host.fqdn_connections > 0:
        vec.set(54, host.ip_only_connections / host.fqdn_connections)
    else:
        vec.set(54, 0.0, False)
    _set_stats3(vec, 55, [float(r) for r in host.resumed_per_flow])
    if host.dns_requests_per_flow:
        vec.set(58, statistics.fmean(host.dns_requests_per_flow))
    else:
        vec.set(58, 0.0, False)
    distinct = sorted(set(host.ua_strings))
    vec.set(59, len(distinct))
    if distinct and enterprise.n_hosts > 0:
        pops = [enterprise.ua_host_counts.get(ua, 0) / enterprise.n_hosts
                for ua in distinct]
        vec.set(60, statistics.fmean(pops))
        vec.set(61, sum(1 for ua in distinct
                        if enterprise.ua_host_counts.get(ua, 0) <= 1) / len(distinct))
        vec.set(62, sum(1 for ua in distinct
                        if enterprise.ua_host_counts.get(ua, 0) <= 5) / len(distinct))
    else:
        vec.set(60, 0.0, False)
        vec.set(61, 0.0, False)
        vec.set(62, 0.0, False)
    if host.flows:
        vec.set(63, len(distinct) / len(host.flows))
    else:
        vec.set(63, 0.0, False)
    return vec


def destination_features(dest: DestinationProfile) -> FeatureVector:
    """Slots 64-81."""
    vec = FeatureVector.empty()
    vec.provenance = {"dest_key": dest.dest_key}
    vec.set(64, len(dest.connected_hosts))
    ratios = [recv / sent for sent, recv in zip(dest.sent_bytes, dest.received_bytes)
              if sent > 0]
    _set_stats3(vec, 65, ratios)
    _set_stats3(vec, 68, dest.idle_times)
    if dest.resumed_per_flow:
        vec.set(71, statistics.fmean(dest.resumed_per_flow))
    else:
        vec.set(71, 0.0, False)
    vec.set(72, len(dest.distinct_urls))
    _set_stats3(vec, 73, [float(v) for v in dest.packet_failures])
    _set_stats3(vec, 76, [float(v) for v in dest.dns_requests_per_flow])
    _set_stats3(vec, 79, dest.dns_ratio_per_flow)
    return vec


def url_features(url: URLProfile) -> FeatureVector:
    """Slots 82-102; fractions run over the distinct URL set, stats over instances."""
    vec = FeatureVector.empty()
    vec.provenance = {"url_key": url.url_key}
    if not url.urls:
        for fid in range(82, 103):
            vec.set(fid, 0.0, False)
        return vec
    by_raw = {}
    for rec in url.urls:
        by_raw.setdefault(rec.raw, rec)
    distinct = list(by_raw.values())
    n_distinct = len(distinct)
    vec.set(82, sum(1 for r in distinct if r.filename) / n_distinct)
    vec.set(83, sum(1 for r in distinct
                    if (r.extension or "").lower() == "exe") / n_distinct)
    vec.set(84, len({(r.extension or "").lower() for r in distinct if r.extension}))
    _set_stats3(vec, 85, [float(r.raw_length) for r in url.urls])
    _set_stats3(vec, 88, [float(r.path_depth) for r in url.urls])
    _set_stats3(vec, 91, [float(r.n_params) for r in url.urls])
    _set_stats3(vec, 94, [float(r.n_values) for r in url.urls])
    _set_stats3(vec, 97, [float(r.n_fragments) for r in url.urls])
    vec.set(100, sum(1 for r in distinct if r.n_params > 0) / n_distinct)
    vec.set(101, sum(1 for r in url.urls if r.has_encoded))
    vec.set(102, len(url.urls))
    return vec


def apply_mode_mask(vec: FeatureVector, mode: str) -> FeatureVector:
    """Zero out and flag absent every slot the mode cannot see. Idempotent."""
    out = vec.copy()
    out.mask = mode
    for fid in masked_slots(mode):
        out.values[fid - 1] = 0.0
        out.present[fid - 1] = False
    return out


def merge_profile_slots(vec: FeatureVector, host_vec: FeatureVector,
                        dest_vec: FeatureVector, url_vec: FeatureVector) -> None:
    """Overwrite slots 51-102 of a flow/summary vector from profile vectors."""
    for fid in range(51, 64):
        vec.values[fid - 1] = host_vec.values[fid - 1]
        vec.present[fid - 1] = host_vec.present[fid - 1]
    for fid in range(64, 82):
        vec.values[fid - 1] = dest_vec.values[fid - 1]
        vec.present[fid - 1] = dest_vec.present[fid - 1]
    for fid in range(82, 103):
        vec.values[fid - 1] = url_vec.values[fid - 1]
        vec.present[fid - 1] = url_vec.present[fid - 1]
    vec.provenance.update(host_vec.provenance)
    vec.provenance.update(dest_vec.provenance)
    vec.provenance.update(url_vec.provenance)


def primary_url_key(flow: PairFlow) -> str:
    """The URL-profile key a pair's summary reads: first FQDN, else destination IP."""
    for url in flow.urls:
        if url.fqdn_or_ip:
            return url.fqdn_or_ip
    if flow.fqdns:
        return flow.fqdns[0][0]
    return flow.pair.destination


class ContextFeaturizer(BaseEstimator, TransformerMixin):
    """One-shot transform: a list of PairFlows to the (n, 102) feature matrix.

    Profiles are pivoted over exactly the flows passed in, so this is the
    stateless surface; the windowed pipeline with summary updates lives in
    pipeline.py.
    """

    def __init__(self, sma_rate: float = 1.0, sma_k: Optional[int] = None):
        self.sma_rate = sma_rate
        self.sma_k = sma_k

    def fit(self, X, y=None):
        return self

    def transform(self, X: list[PairFlow]) -> np.ndarray:
        vectors = self.transform_vectors(X)
        return np.vstack([v.values for v in vectors]) if vectors else \
            np.zeros((0, N_FEATURES))

    def transform_vectors(self, flows: list[PairFlow]) -> list[FeatureVector]:
        hosts, dests, urls = pivot_profiles(flows)
        enterprise = UaStats.from_hosts(hosts.values())
        host_vecs = {k: host_features(p, enterprise) for k, p in hosts.items()}
        dest_vecs = {k: destination_features(p) for k, p in dests.items()}
        url_vecs = {k: url_features(p) for k, p in urls.items()}
        out = []
        for flow in flows:
            vec = flow_features(flow, self.sma_rate, self.sma_k)
            merge_profile_slots(vec, host_vecs[flow.pair.host_key],
                                dest_vecs[flow.pair.destination],
                                url_vecs[primary_url_key(flow)])
            out.append(vec)
        return out
