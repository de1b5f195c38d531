import math
import statistics

import numpy as np
import pytest

from pairflow.errors import EmptySeries
from pairflow.features import (ALWAYS_MASKED, ContextFeaturizer,
                               HTTPS_MODE, HTTP_MODE, N_FEATURES, UaStats,
                               active_slots, apply_mode_mask, build_sma,
                               destination_features, flow_features,
                               host_features, idle_time_features, mask_table,
                               masked_slots, mtdsc, sma_features, url_features,
                               FEATURE_KINDS)
from pairflow.profiles import DestinationProfile, HostProfile, URLProfile
from pairflow.records import PlanePoint
from pairflow.flows import parse_url_record


def _points(pairs):
    return [PlanePoint(i, "TCP", ("Raw",), ts, int(ln))
            for i, (ts, ln) in enumerate(pairs)]


# ---------------------------------------------------------------------------
# SMA

def test_sma_bucket_worked_example():
    # two packets of 128 and 32 bytes between seconds 5 and 6, 1 s sampling
    series = build_sma(_points([(5.2, 128), (5.9, 32)]), 1.0, 60)
    assert series.points == [(6, 160.0)]


def test_sma_constant_series_is_flat():
    pts = _points([(float(i), 100) for i in range(1, 21)])
    series = build_sma(pts, 1.0, 5)
    assert all(v == 100.0 for v in series.sma_values)
    feats = sma_features(series)
    # constant: nothing above, nothing below, no outliers
    assert feats[:6] == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_sma_empty_plane_raises():
    with pytest.raises(EmptySeries):
        build_sma([], 1.0, 10)


def test_sma_zero_fills_gaps():
    series = build_sma(_points([(1.0, 50), (4.0, 70)]), 1.0, 3)
    assert series.points == [(1, 50.0), (2, 0.0), (3, 0.0), (4, 70.0)]


def test_sma_matches_trailing_mean_oracle():
    rng = np.random.default_rng(12)
    for trial in range(30):
        k = int(rng.integers(1, 12))
        n = int(rng.integers(1, 60))
        times = np.sort(rng.uniform(0, 50, size=n))
        sizes = rng.integers(40, 1500, size=n)
        pts = _points(list(zip(times, sizes)))
        series = build_sma(pts, 1.0, k)
        # independent oracle: direct bucketing plus direct window means
        buckets: dict[int, float] = {}
        for t, s in zip(times, sizes):
            b = math.ceil(t - 1e-12)
            buckets[b] = buckets.get(b, 0) + int(s)
        lo, hi = min(buckets), max(buckets)
        values = [buckets.get(i, 0.0) for i in range(lo, hi + 1)]
        assert [v for _, v in series.points] == values
        for i, got in enumerate(series.sma_values):
            window = values[max(0, i - k + 1):i + 1]
            assert got == pytest.approx(sum(window) / len(window), rel=1e-12)


def test_single_spike_is_an_outlier():
    pts = _points([(float(i), 100) for i in range(1, 10)] + [(10.0, 1000)])
    series = build_sma(pts, 1.0, 5)
    n_below, n_above, _rb, _ra, n_out, _ro, mx, mn, mean, sd = sma_features(series)
    assert n_out == 1
    assert n_above == 1
    expected_mag = 1000 - series.sma_values[-1]
    assert mx == mn == mean == pytest.approx(expected_mag)
    assert sd == 0.0  # a single outlier has no spread


def test_sma_features_match_per_point_oracle():
    rng = np.random.default_rng(77)
    for trial in range(25):
        n = int(rng.integers(2, 80))
        times = np.sort(rng.uniform(0, 60, size=n))
        sizes = rng.integers(10, 3000, size=n)
        series = build_sma(_points(list(zip(times, sizes))), 1.0, 7)
        got = sma_features(series)
        below = above = out = 0
        mags = []
        for (_, p), avg in zip(series.points, series.sma_values):
            if p < avg:
                below += 1
            if p > avg:
                above += 1
            if p > 2 * avg:
                out += 1
                mags.append(p - avg)
        n_pts = len(series.points)
        expect = (below, above, below / n_pts, above / n_pts, out, out / n_pts,
                  max(mags) if mags else 0.0, min(mags) if mags else 0.0,
                  statistics.fmean(mags) if mags else 0.0,
                  statistics.pstdev(mags) if len(mags) > 1 else 0.0)
        for g, e in zip(got, expect):
            assert g == pytest.approx(e, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# idle time and MTDSC

def test_idle_time_example():
    mx, mn, mean, present = idle_time_features(_points([(0.0, 1), (10.0, 1),
                                                        (40.0, 1)]))
    assert (mx, mn, mean, present) == (30.0, 10.0, 20.0, True)


def test_idle_time_degenerate():
    assert idle_time_features(_points([(5.0, 1)])) == (0.0, 0.0, 0.0, False)
    assert idle_time_features([]) == (0.0, 0.0, 0.0, False)


def test_mtdsc_examples():
    assert mtdsc([0.0, 10.0]) == (10.0, 10.0, 10.0, True)
    mx, mn, mean, present = mtdsc([0.0, 10.0, 40.0])
    assert (mx, mn, mean, present) == (30.0, 10.0, 20.0, True)
    assert mtdsc([3.0]) == (0.0, 0.0, 0.0, False)


def test_mtdsc_matches_consecutive_gap_oracle():
    rng = np.random.default_rng(8)
    for trial in range(20):
        starts = sorted(rng.uniform(0, 900, size=50))
        mx, mn, mean, _ = mtdsc(list(starts))
        gaps = [b - a for a, b in zip(starts, starts[1:])]
        assert mx == pytest.approx(max(gaps), rel=1e-12)
        assert mn == pytest.approx(min(gaps), rel=1e-12)
        assert mean == pytest.approx(sum(gaps) / len(gaps), rel=1e-12)


# ---------------------------------------------------------------------------
# flow features

def test_flow_protocol_ratios(small_flows):
    for flow in small_flows:
        vec = flow_features(flow)
        n = flow.stats.n_total
        assert vec.get(3) == pytest.approx(flow.stats.n_raw_tcp / n)
        # disjoint protocol classes sum to the TCP fraction
        tcp_fraction = (flow.stats.n_raw_tcp + flow.stats.n_http
                        + flow.stats.n_tls + flow.stats.n_ssl) / n
        assert vec.get(3) + vec.get(7) + vec.get(8) + vec.get(9) == \
            pytest.approx(tcp_fraction)


def test_status_class_ratios():
    flow = _status_flow(["200", "200", "404"])
    vec = flow_features(flow)
    assert vec.get(10) == pytest.approx(2 / 3)
    assert vec.get(12) == pytest.approx(1 / 3)
    assert vec.get(11) == 0.0


def _status_flow(codes):
    from pairflow.records import FlowId, PairFlow, PairKey, InitialStats
    flow = PairFlow(flow_id=FlowId(0, 0), pair=PairKey("c", "h", "d"),
                    time_window=(0.0, 600.0))
    for i, code in enumerate(codes):
        flow.tcp_data_plane.append(
            PlanePoint(i, "HTTP", ("Response", code, "text/html"),
                       float(i), 200))
    stats = InitialStats(n_http=len(codes))
    flow.stats = stats
    return flow


def test_ttl_slots_never_populated(small_flows):
    for flow in small_flows[:40]:
        vec = flow_features(flow)
        for fid in (42, 43, 44, 45):
            assert vec.get(fid) == 0.0
            assert not vec.present[fid - 1]
        # yet the PairFlow record itself keeps TTL statistics available
        assert flow.stats.ttl_max >= flow.stats.ttl_min >= 0


# ---------------------------------------------------------------------------
# profile features

def test_host_ip_only_ratio_definition():
    host = HostProfile(host_key=("cap", "h"))
    host.ip_only_connections = 1
    host.fqdn_connections = 2
    host.flows = [None, None, None]
    host.connection_start_times = [0.0, 1.0, 2.0]
    vec = host_features(host, UaStats({}, 1))
    assert vec.get(54) == pytest.approx(0.5)


def test_host_distinct_uas():
    host = HostProfile(host_key=("cap", "h"))
    host.ua_strings = ["ua1", "ua1", "ua2"]
    host.flows = [None, None]
    host.connection_start_times = [0.0, 5.0]
    vec = host_features(host, UaStats({"ua1": 3, "ua2": 1}, 4))
    assert vec.get(59) == 2.0
    assert vec.get(60) == pytest.approx((3 / 4 + 1 / 4) / 2)
    assert vec.get(61) == pytest.approx(0.5)  # ua2 used by <=1 hosts
    assert vec.get(62) == pytest.approx(1.0)  # both used by <=5 hosts
    assert vec.get(63) == pytest.approx(2 / 2)


def test_ua_popularity_matches_incidence_recount(small_pipeline):
    compiled, _registry = small_pipeline
    from pairflow.profiles import pivot_profiles
    hosts, _d, _u = pivot_profiles(compiled.flows)
    enterprise = UaStats.from_hosts(hosts.values())
    # brute-force recount over the host x UA incidence matrix
    incidence: dict[str, set] = {}
    for key, host in hosts.items():
        for ua in set(host.ua_strings):
            incidence.setdefault(ua, set()).add(key)
    assert enterprise.n_hosts == len(hosts)
    for ua, users in incidence.items():
        assert enterprise.ua_host_counts[ua] == len(users)
    for key, host in hosts.items():
        vec = host_features(host, enterprise)
        distinct = sorted(set(host.ua_strings))
        if distinct:
            pops = [len(incidence[ua]) / len(hosts) for ua in distinct]
            assert vec.get(60) == pytest.approx(statistics.fmean(pops), rel=1e-9)


def test_destination_features_examples():
    dest = DestinationProfile(dest_key="1.2.3.4")
    dest.connected_hosts = {("c", "a"), ("c", "b")}
    dest.packet_failures = [0, 1, 5]
    dest.sent_bytes = [100, 200, 400]
    dest.received_bytes = [200, 100, 800]
    dest.dns_requests_per_flow = [1, 2, 3]
    dest.dns_ratio_per_flow = [0.1, 0.2, 0.3]
    dest.resumed_per_flow = [0, 2, 4]
    dest.flows = [None] * 3
    vec = destination_features(dest)
    assert vec.get(64) == 2.0
    assert vec.get(73) == 5.0
    assert vec.get(74) == 0.0
    assert vec.get(75) == pytest.approx(2.0)
    assert vec.get(65) == pytest.approx(2.0)
    assert vec.get(66) == pytest.approx(0.5)
    assert vec.get(71) == pytest.approx(2.0)
    assert vec.get(76) == 3.0 and vec.get(77) == 1.0
    assert vec.get(79) == pytest.approx(0.3)


def test_destination_features_match_recount(small_pipeline):
    compiled, _ = small_pipeline
    from pairflow.profiles import pivot_profiles
    _h, dests, _u = pivot_profiles(compiled.flows)
    for key, dest in dests.items():
        vec = destination_features(dest)
        flows = [f for f in compiled.flows if f.pair.destination == key]
        assert vec.get(64) == len({f.pair.host_key for f in flows})
        fails = [f.n_failures() for f in flows]
        assert vec.get(73) == max(fails)
        assert vec.get(75) == pytest.approx(statistics.fmean(fails), rel=1e-9)
        dns = [f.n_dns_requests() for f in flows]
        assert vec.get(78) == pytest.approx(statistics.fmean(dns), rel=1e-9)


def test_url_features_examples():
    profile = URLProfile(url_key="h.example")
    profile.urls = [parse_url_record("h.example/a/b/c.exe?x=1")]
    profile.distinct_urls = {u.raw for u in profile.urls}
    vec = url_features(profile)
    assert vec.get(82) == 1.0  # has filename
    assert vec.get(83) == 1.0  # .exe
    assert vec.get(88) == 2.0  # depth
    assert vec.get(91) == 1.0  # params
    assert vec.get(100) == 1.0
    assert vec.get(102) == 1.0


def test_url_features_match_generated_oracle():
    rng = np.random.default_rng(55)
    exts = ["html", "exe", "png", "js", ""]
    urls = []
    for i in range(200):
        depth = int(rng.integers(0, 5))
        path = "/".join(f"d{j}" for j in range(depth))
        ext = exts[int(rng.integers(0, len(exts)))]
        name = f"f{i}.{ext}" if ext else ""
        params = "&".join(f"p{j}={j}" for j in range(int(rng.integers(0, 4))))
        raw = "host.example/" + path
        if name:
            raw = raw.rstrip("/") + "/" + name
        if params:
            raw += "?" + params
        urls.append(raw)
    profile = URLProfile(url_key="host.example")
    profile.urls = [parse_url_record(u) for u in urls]
    profile.distinct_urls = {u for u in urls}
    vec = url_features(profile)
    distinct = {}
    for u in profile.urls:
        distinct.setdefault(u.raw, u)
    recs = list(distinct.values())
    assert vec.get(82) == pytest.approx(
        sum(1 for r in recs if r.filename) / len(recs))
    assert vec.get(83) == pytest.approx(
        sum(1 for r in recs if (r.extension or "").lower() == "exe") / len(recs))
    assert vec.get(84) == len({r.extension.lower() for r in recs if r.extension})
    assert vec.get(87) == pytest.approx(
        statistics.fmean(len(u) for u in urls), rel=1e-9)
    assert vec.get(90) == pytest.approx(
        statistics.fmean(r.path_depth for r in profile.urls), rel=1e-9)
    assert vec.get(102) == len(urls)


# ---------------------------------------------------------------------------
# masks

def test_mask_table_counts():
    table = mask_table()
    assert len(table) == N_FEATURES
    http_active = sum(1 for row in table if row["http"])
    https_active = sum(1 for row in table if row["https"])
    assert http_active == len(active_slots(HTTP_MODE)) == 98
    assert https_active == len(active_slots(HTTPS_MODE)) == 51
    for fid in ALWAYS_MASKED:
        assert not table[fid - 1]["http"] and not table[fid - 1]["https"]


def test_mode_mask_is_idempotent_and_projective(small_flows):
    vec = flow_features(small_flows[0])
    https = apply_mode_mask(vec, HTTPS_MODE)
    https_twice = apply_mode_mask(https, HTTPS_MODE)
    assert np.array_equal(https.values, https_twice.values)
    assert np.array_equal(https.present, https_twice.present)
    http = apply_mode_mask(vec, HTTP_MODE)
    shared = [fid for fid in active_slots(HTTPS_MODE)]
    for fid in shared:
        assert http.values[fid - 1] == https.values[fid - 1]
    for fid in range(82, 103):
        assert https.values[fid - 1] == 0.0
        assert not https.present[fid - 1]


def test_mask_rejects_unknown_mode():
    with pytest.raises(ValueError):
        masked_slots("plaintext")


def test_proportion_kind_invariants(small_pipeline):
    _compiled, registry = small_pipeline
    for summary in registry.summaries():
        vec = summary.features
        for fid in range(1, N_FEATURES + 1):
            value = vec.get(fid)
            assert value >= 0.0 or not vec.present[fid - 1]
            if FEATURE_KINDS[fid] == "proportion":
                assert 0.0 <= value <= 1.0 + 1e-9, (fid, value)


def test_context_featurizer_estimator_api(small_flows):
    feat = ContextFeaturizer(sma_rate=1.0)
    params = feat.get_params()
    assert params["sma_rate"] == 1.0
    feat.set_params(sma_rate=2.0)
    assert feat.get_params()["sma_rate"] == 2.0
    feat.set_params(sma_rate=1.0)
    X = feat.fit(small_flows).transform(small_flows[:10])
    assert X.shape == (10, N_FEATURES)
    vectors = feat.transform_vectors(small_flows[:10])
    assert np.array_equal(np.vstack([v.values for v in vectors]), X)
