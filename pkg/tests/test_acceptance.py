"""Acceptance suite: one test per criterion, printing a pass line for each.

The corpus fixtures are module-scoped; the big one (>= 5000 flows, three
classes, 20% legitimate-overlap confounds) backs the round-trip, invariant,
classification and throughput criteria.
"""

import math
import statistics
import time

import numpy as np
import pytest

from pairflow.cli import main as cli_main
from pairflow.features import (HTTPS_MODE, HTTP_MODE, UaStats, active_slots,
                               build_sma, destination_features, host_features,
                               idle_time_features, masked_slots, mtdsc,
                               sma_features, url_features)
from pairflow.flows import encapsulate, parse_url_record
from pairflow.forest import PairForestClassifier
from pairflow.ingest import CaptureDecoder
from pairflow.metrics import evaluate, group_split, metrics_from_confusion
from pairflow.pipeline import PipelineConfig, run_fused, write_features_csv, \
    load_features_csv
from pairflow.profiles import DestinationProfile, HostProfile, URLProfile
from pairflow.records import (AppKind, ApplicationMeta, FlowId, IpProto,
                              PairKey, PlanePoint, RawPacket)
from pairflow.summary import update_flags, update_numeric, update_ua_store
from pairflow.synth import default_corpus_specs, generate_corpus
from pairflow.variants import project_variant
from pairflow.records import pairflow_to_obj


def _ok(num: int, name: str) -> None:
    print(f"\nACCEPTANCE {num:02d} {name}: PASS")


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance-corpus")
    specs = default_corpus_specs(420, seed=20, overlap_rate=0.2)
    t0 = time.perf_counter()
    result = generate_corpus(specs, out)
    gen_seconds = time.perf_counter() - t0
    labels = {r["capture_name"]: r["label"] for r in result.labels}
    return result, labels, gen_seconds


@pytest.fixture(scope="module")
def pipeline(corpus):
    result, labels, _gen = corpus
    t0 = time.perf_counter()
    compiled, registry = run_fused(result.capture_paths, PipelineConfig(), labels)
    elapsed = time.perf_counter() - t0
    n_packets = sum(rep["packets"] for rep in compiled.decode_reports.values())
    return compiled, registry, elapsed, n_packets


@pytest.fixture(scope="module")
def feature_table(pipeline, tmp_path_factory):
    _compiled, registry, _elapsed, _n = pipeline
    path = tmp_path_factory.mktemp("acceptance-feats") / "features.csv"
    write_features_csv(registry, path, config_hash="acceptance")
    return load_features_csv(path)


@pytest.fixture(scope="module")
def mode_eval(feature_table):
    """10 seeded repeats of the group-constrained 70/30 split, both modes."""
    table = feature_table
    X, y, groups = table.task_rows("malicious")
    results = {}
    for mode in (HTTP_MODE, HTTPS_MODE):
        masked = X.copy()
        for fid in masked_slots(mode):
            masked[:, fid - 1] = 0.0
        f1s, artifacts = [], []
        for repeat in range(10):
            tr, te = group_split(groups, 0.3, seed=500 + repeat)
            y_tr = [y[i] for i in np.nonzero(tr)[0]]
            y_te = [y[i] for i in np.nonzero(te)[0]]
            clf = PairForestClassifier(n_trees=100, mode=mode, seed=500 + repeat)
            clf.fit(masked[tr], y_tr)
            report = evaluate(clf.artifact_, masked[te], y_te)
            f1s.append(report.macro_f1)
            artifacts.append(clf.artifact_)
        results[mode] = {"f1s": f1s, "mean": statistics.fmean(f1s),
                         "artifacts": artifacts}
    return results


# ---------------------------------------------------------------------------
# 1. oracle equivalence

def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    rel = 1e-9

    def plane(times, sizes):
        return [PlanePoint(i, "TCP", ("Raw",), float(t), int(s))
                for i, (t, s) in enumerate(zip(times, sizes))]

    # SMA series + outlier features, 1000 randomized series
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        k = int(rng.integers(1, 10))
        times = np.sort(rng.uniform(0, 40, size=n))
        sizes = rng.integers(20, 2500, size=n)
        series = build_sma(plane(times, sizes), 1.0, k)
        buckets: dict[int, float] = {}
        for t, s in zip(times, sizes):
            b = math.ceil(t - 1e-12)
            buckets[b] = buckets.get(b, 0.0) + float(s)
        lo, hi = min(buckets), max(buckets)
        values = [buckets.get(i, 0.0) for i in range(lo, hi + 1)]
        assert [v for _, v in series.points] == values
        for i, got in enumerate(series.sma_values):
            window = values[max(0, i - k + 1):i + 1]
            expect = sum(window) / len(window)
            assert abs(got - expect) <= rel * max(1.0, abs(expect))
        feats = sma_features(series)
        below = sum(1 for (_, p), a in zip(series.points, series.sma_values) if p < a)
        above = sum(1 for (_, p), a in zip(series.points, series.sma_values) if p > a)
        outs = [(p, a) for (_, p), a in zip(series.points, series.sma_values)
                if p > 2 * a]
        mags = [p - a for p, a in outs]
        expect_feats = (below, above, below / len(values), above / len(values),
                        len(outs), len(outs) / len(values),
                        max(mags) if mags else 0.0, min(mags) if mags else 0.0,
                        statistics.fmean(mags) if mags else 0.0,
                        statistics.pstdev(mags) if len(mags) > 1 else 0.0)
        for g, e in zip(feats, expect_feats):
            assert abs(g - e) <= rel * max(1.0, abs(e))

    # MTDSC, 1000 randomized start lists
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        starts = sorted(rng.uniform(0, 900, size=n))
        mx, mn, mean, present = mtdsc(list(starts))
        gaps = [b - a for a, b in zip(starts, starts[1:])]
        assert present
        assert abs(mx - max(gaps)) <= rel * max(gaps)
        assert abs(mn - min(gaps)) <= rel * max(1e-12, min(gaps))
        assert abs(mean - sum(gaps) / len(gaps)) <= rel * (sum(gaps) / len(gaps))

    # idle time, 1000 randomized data planes
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        times = np.sort(rng.uniform(0, 600, size=n))
        mx, mn, mean, present = idle_time_features(plane(times, [100] * n))
        gaps = [b - a for a, b in zip(times, times[1:])]
        assert present
        assert abs(mx - max(gaps)) <= rel * max(gaps)
        assert abs(mean - statistics.fmean(gaps)) <= rel * max(1e-12, statistics.fmean(gaps))

    # delta statistics via encapsulation, 1000 randomized packet sets
    for trial in range(1000):
        n = int(rng.integers(2, 25))
        times = np.sort(rng.uniform(0, 600, size=n))
        pkts = [RawPacket(i, float(t), "h", "d", 1, 2, IpProto.TCP,
                          int(rng.integers(60, 400)), tcp_flags=0x18,
                          payload_len=10)
                for i, t in enumerate(times)]
        flow = encapsulate(FlowId(0, 0), PairKey("c", "h", "d"), pkts, (0.0, 600.0))
        gaps = [b - a for a, b in zip(times, times[1:])]
        assert abs(flow.stats.delta_max - max(gaps)) <= rel * max(gaps)
        assert abs(flow.stats.delta_mean - statistics.fmean(gaps)) \
            <= rel * max(1e-12, statistics.fmean(gaps))
        sd = statistics.pstdev(gaps) if len(gaps) > 1 else 0.0
        assert abs(flow.stats.delta_sd - sd) <= rel * max(1.0, sd)

    # profile aggregates, 1000 randomized profiles of each kind
    for _ in range(1000):
        host = HostProfile(host_key=("c", "h"))
        n = int(rng.integers(1, 12))
        host.flows = [None] * n
        host.connection_start_times = sorted(rng.uniform(0, 900, size=n))
        host.resumed_per_flow = [int(v) for v in rng.integers(0, 9, size=n)]
        host.dns_requests_per_flow = [int(v) for v in rng.integers(0, 9, size=n)]
        host.ip_only_connections = int(rng.integers(0, n + 1))
        host.fqdn_connections = n - host.ip_only_connections
        uas = [f"ua{int(v)}" for v in rng.integers(0, 6, size=n)]
        host.ua_strings = uas
        enterprise = UaStats({f"ua{i}": int(rng.integers(1, 9)) for i in range(6)}, 8)
        vec = host_features(host, enterprise)
        assert vec.get(55) == max(host.resumed_per_flow)
        assert vec.get(56) == min(host.resumed_per_flow)
        assert abs(vec.get(57) - statistics.fmean(host.resumed_per_flow)) <= rel
        assert abs(vec.get(58) - statistics.fmean(host.dns_requests_per_flow)) <= rel
        assert vec.get(59) == len(set(uas))
        if host.fqdn_connections:
            assert abs(vec.get(54) - host.ip_only_connections / host.fqdn_connections) <= rel

        dest = DestinationProfile(dest_key="d")
        m = int(rng.integers(1, 12))
        dest.flows = [None] * m
        dest.connected_hosts = {("c", f"h{int(v)}") for v in rng.integers(0, 6, size=m)}
        dest.sent_bytes = [int(v) for v in rng.integers(1, 9999, size=m)]
        dest.received_bytes = [int(v) for v in rng.integers(0, 9999, size=m)]
        dest.idle_times = [float(v) for v in rng.uniform(0, 60, size=int(rng.integers(0, m)))]
        dest.packet_failures = [int(v) for v in rng.integers(0, 6, size=m)]
        dest.resumed_per_flow = [int(v) for v in rng.integers(0, 9, size=m)]
        dest.dns_requests_per_flow = [int(v) for v in rng.integers(0, 9, size=m)]
        dest.dns_ratio_per_flow = [float(v) for v in rng.uniform(0, 1, size=m)]
        dvec = destination_features(dest)
        ratios = [r / s for s, r in zip(dest.sent_bytes, dest.received_bytes)]
        assert abs(dvec.get(67) - statistics.fmean(ratios)) <= rel * max(1.0, statistics.fmean(ratios))
        assert dvec.get(73) == max(dest.packet_failures)
        assert abs(dvec.get(75) - statistics.fmean(dest.packet_failures)) <= rel
        assert abs(dvec.get(81) - statistics.fmean(dest.dns_ratio_per_flow)) <= rel
        assert dvec.get(64) == len(dest.connected_hosts)

        url = URLProfile(url_key="u")
        u = int(rng.integers(1, 10))
        raws = [f"u.example/a{int(rng.integers(0, 3))}/f{int(v)}.bin?x={int(v)}"
                for v in rng.integers(0, 7, size=u)]
        url.urls = [parse_url_record(r) for r in raws]
        url.distinct_urls = set(raws)
        uvec = url_features(url)
        assert uvec.get(102) == len(raws)
        assert abs(uvec.get(87) - statistics.fmean(len(r) for r in raws)) <= rel * 300
        distinct = {r.raw: r for r in url.urls}.values()
        assert abs(uvec.get(82) - sum(1 for r in distinct if r.filename) / len(distinct)) <= rel

    elapsed = time.perf_counter() - t0
    assert elapsed < 60, f"oracle suite took {elapsed:.1f}s"
    _ok(1, "oracle-equivalence")


# ---------------------------------------------------------------------------
# 2. worked examples

def test_criterion_02_worked_example_fidelity():
    # bucketing: 128 and 32 bytes between seconds 5 and 6 -> p_6 = 160
    series = build_sma([PlanePoint(0, "TCP", ("Raw",), 5.3, 128),
                        PlanePoint(1, "TCP", ("Raw",), 5.8, 32)], 1.0, 60)
    assert series.points[0] == (6, 160.0)

    # handshake control tuples render with their flag bytes in hex
    from pairflow.flows import separate_planes
    pkts = [RawPacket(72095, 215.73, "a", "b", 1, 2, IpProto.TCP, 74, tcp_flags=0x02),
            RawPacket(72126, 215.78, "b", "a", 2, 1, IpProto.TCP, 70, tcp_flags=0x12),
            RawPacket(72127, 215.78, "a", "b", 1, 2, IpProto.TCP, 66, tcp_flags=0x10)]
    control, _d, _u, _i = separate_planes(pkts)
    assert [p.tag for p in control] == ["0x02", "0x12", "0x10"]
    assert control[0].as_tuple() == (72095, "0x02", 215.73, 74)

    # HTTP data-plane tuple shape
    meta = ApplicationMeta(kind=AppKind.HTTP_REQUEST, http_method="GET")
    pkt = RawPacket(460854, 1066.51, "a", "b", 1, 2, IpProto.TCP, 383,
                    tcp_flags=0x18, payload_len=100, app_meta=meta)
    _c, data, _u, _i = separate_planes([pkt])
    assert data[0].as_tuple() == (460854, "HTTP", "Request", "GET",
                                  "Empty Content", 1066.51, 383)
    _ok(2, "worked-example-fidelity")


# ---------------------------------------------------------------------------
# 3. update-rule algebra

def test_criterion_03_update_rule_algebra():
    rng = np.random.default_rng(3003)
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        values = rng.uniform(-1e5, 1e5, size=n)
        acc = values[0]
        for n_prev, incoming in enumerate(values[1:], start=1):
            acc = update_numeric(acc, n_prev, incoming)
        expect = values.mean()
        assert abs(acc - expect) <= 1e-9 * max(1.0, abs(expect))
    protocols = ["TCP", "UDP", "DNS", "HTTP", "TLS", "SSL", "ICMP"]
    for _ in range(2_000):
        k = int(rng.integers(1, 8))
        sets = [set(rng.choice(protocols, size=int(rng.integers(0, 5))))
                for _ in range(k)]
        acc = set(sets[0])
        for s in sets[1:]:
            acc = update_flags(acc, s)
        assert acc == set().union(*sets)
    for _ in range(2_000):
        k = int(rng.integers(1, 8))
        lists = [[f"ua{int(v)}" for v in rng.integers(0, 10, size=int(rng.integers(0, 5)))]
                 for _ in range(k)]
        store: set = set()
        for incoming in lists:
            store = update_ua_store(store, incoming)
        assert store == {ua for chunk in lists for ua in chunk}
    _ok(3, "update-rule-algebra")


# ---------------------------------------------------------------------------
# 4. structural invariants

def test_criterion_04_structural_invariants(corpus, pipeline):
    result, _labels, _gen = corpus
    compiled, _registry, _elapsed, _n = pipeline
    flows = compiled.flows
    assert len(flows) >= 5000

    pf_sequences: dict[int, list[int]] = {}
    for flow in flows:
        stats = flow.stats
        # plane partition
        n_tcp = stats.n_raw_tcp + stats.n_http + stats.n_tls + stats.n_ssl
        assert len(flow.tcp_control_plane) + len(flow.tcp_data_plane) == n_tcp
        indices = [p.packet_index for p in flow.tcp_control_plane] \
            + [p.packet_index for p in flow.tcp_data_plane]
        assert len(indices) == len(set(indices))
        # byte conservation
        assert stats.total_sent + stats.total_received == stats.total_bytes
        assert stats.encrypted_sent + stats.encrypted_received == stats.total_encrypted
        # EPFLAG soundness, reconstructed from planes and stats
        assert ("TCP" in flow.epflag) == (n_tcp > 0)
        assert ("HTTP" in flow.epflag) == (stats.n_http > 0)
        assert ("TLS" in flow.epflag) == (stats.n_tls > 0)
        assert ("SSL" in flow.epflag) == (stats.n_ssl > 0)
        assert ("DNS" in flow.epflag) == (stats.n_dns > 0)
        assert ("ICMP" in flow.epflag) == (stats.n_icmp > 0)
        assert ("UDP" in flow.epflag) == (stats.n_dns + stats.n_raw_udp > 0)
        # window containment
        start, end = flow.time_window
        for point in flow.all_points():
            assert start <= point.timestamp < end
        pf_sequences.setdefault(flow.flow_id.cs_id, []).append(flow.flow_id.pf_id)
    # FlowId monotonicity: 0,1,2,... per pair
    for cs_id, seq in pf_sequences.items():
        assert sorted(seq) == list(range(len(seq)))
    # variant projection fidelity on a sample
    for flow in flows[::97]:
        obj = pairflow_to_obj(flow)
        for variant in ("fqdn", "planes", "http", "https"):
            line = project_variant(flow, variant)
            for key, value in line.items():
                if key == "stats":
                    assert all(obj["stats"][k] == v for k, v in value.items())
                elif not (variant == "https" and key == "tcp_data_plane"):
                    assert value == obj[key]
    # traceability: plane points resolve to source-capture packets
    for path in result.capture_paths[::240]:
        packets = {p.packet_index: p for p in CaptureDecoder(path)}
        for flow in flows:
            if flow.pair.capture_name != path.stem:
                continue
            for point in flow.all_points():
                pkt = packets[point.packet_index]
                assert pkt.timestamp == point.timestamp
                assert pkt.length == point.length
    # window partition: every decoded packet in exactly one batch, order kept
    from pairflow.ingest import window_buffer
    for path in result.capture_paths[::311]:
        decoded = list(CaptureDecoder(path))
        batches = list(window_buffer(decoded, 600.0))
        flat = [p.packet_index for b in batches for p in b.packets]
        assert flat == [p.packet_index for p in decoded]
        for batch in batches:
            for p in batch.packets:
                assert math.floor(p.timestamp / 600.0) == batch.window_index
    _ok(4, "structural-invariants")


# ---------------------------------------------------------------------------
# 5. ledger round trip

def test_criterion_05_ledger_round_trip(corpus, pipeline):
    result, _labels, _gen = corpus
    compiled, _registry, pipe_seconds, _n = pipeline
    t0 = time.perf_counter()
    ledger = {(r["capture"], r["source"], r["destination"], r["window"]): r
              for r in result.ledger}
    clean = {k: r for k, r in ledger.items() if not r["hygiene"]}
    assert len(clean) >= 5000
    flows = {(f.pair.capture_name, f.pair.source, f.pair.destination,
              int(f.time_window[0] // 600)): f for f in compiled.flows}
    assert set(flows) == set(clean)
    for key, row in clean.items():
        flow = flows[key]
        stats = flow.stats
        assert stats.total_sent == row["bytes_sent"]
        assert stats.total_received == row["bytes_received"]
        assert stats.n_total == row["n_packets"]
        assert stats.n_raw_tcp == row["n_raw_tcp"]
        assert stats.n_dns == row["n_dns"]
        assert flow.n_dns_requests() == row["n_dns_requests"]
        assert (not flow.fqdns) == row["ip_only"]
        assert flow.n_resumed() == row["resumed"]
        assert flow.n_failures() == row["failures"]
        assert sorted(u.raw for u in flow.urls) == sorted(row["urls"])
        # planted byte-rate structure matches the extracted data buckets
        buckets = {int(k): v for k, v in row["data_buckets"].items()}
        if buckets:
            series = build_sma(flow.tcp_data_plane, 1.0, 600)
            got = {b: v for b, v in series.points if v > 0}
            assert got == buckets
    check_seconds = time.perf_counter() - t0
    assert pipe_seconds + check_seconds < 300, \
        f"pipeline {pipe_seconds:.0f}s + checks {check_seconds:.0f}s"
    _ok(5, "ledger-round-trip")


# ---------------------------------------------------------------------------
# 6. classification at desk scale

def test_criterion_06_classification(mode_eval):
    http_mean = mode_eval[HTTP_MODE]["mean"]
    https_mean = mode_eval[HTTPS_MODE]["mean"]
    print(f"\n  macro-F1 http={http_mean:.4f} https={https_mean:.4f} "
          f"(10 repeats, 100 trees)")
    assert http_mean >= 0.90
    assert abs(http_mean - https_mean) <= 0.05
    _ok(6, "classification-desk-scale")


# ---------------------------------------------------------------------------
# 7. mode-mask soundness

def test_criterion_07_mode_mask_soundness(mode_eval, feature_table):
    banned = masked_slots(HTTPS_MODE)
    for artifact in mode_eval[HTTPS_MODE]["artifacts"]:
        used = artifact.split_slots()
        assert used, "https model should not be trivial"
        assert not (used & banned)
    for artifact in mode_eval[HTTP_MODE]["artifacts"]:
        assert not (artifact.split_slots() & masked_slots(HTTP_MODE))
    # both modes agree bit-exactly on shared slots
    X = feature_table.X
    shared = [fid for fid in active_slots(HTTPS_MODE)]
    http_masked = X.copy()
    for fid in masked_slots(HTTP_MODE):
        http_masked[:, fid - 1] = 0.0
    https_masked = X.copy()
    for fid in masked_slots(HTTPS_MODE):
        https_masked[:, fid - 1] = 0.0
    for fid in shared:
        assert np.array_equal(http_masked[:, fid - 1], https_masked[:, fid - 1])
    _ok(7, "mode-mask-soundness")


# ---------------------------------------------------------------------------
# 8. determinism

def test_criterion_08_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        base = tmp_path / run
        corpus_dir = base / "corpus"
        work = base / "work"
        result = generate_corpus(default_corpus_specs(30, seed=88), corpus_dir)
        captures = sorted(str(p) for p in result.capture_paths)
        assert cli_main(["compile", *captures, "--out", str(work),
                         "--labels", str(result.labels_path)]) == 0
        assert cli_main(["featurize", str(work / "http.jsonl"),
                         "--out", str(work)]) == 0
        assert cli_main(["train", str(work / "features.csv"),
                         "--task", "malicious", "--mode", "http",
                         "--seed", "13", "--trees", "40", "--repeats", "3",
                         "--out", str(work)]) == 0
        outputs.append({
            "features": (work / "features.csv").read_bytes(),
            "model": (work / "model-malicious-http.json").read_bytes(),
            "eval": (work / "eval-malicious-http.json").read_bytes(),
        })
    assert outputs[0]["features"] == outputs[1]["features"]
    assert outputs[0]["model"] == outputs[1]["model"]
    assert outputs[0]["eval"] == outputs[1]["eval"]
    _ok(8, "determinism")


# ---------------------------------------------------------------------------
# 9. metric correctness

def test_criterion_09_metric_correctness():
    cm = np.array([[9, 1], [2, 88]])
    report = metrics_from_confusion(cm, ["malicious", "legitimate"])
    mal = report.per_class["malicious"]
    assert abs(mal["precision"] - 0.818) <= 0.001
    assert mal["recall"] == pytest.approx(0.900, abs=1e-12)
    assert abs(report.fpr - 0.0222) <= 0.0001
    p_m, r_m = 9 / 11, 9 / 10
    p_l, r_l = 88 / 89, 88 / 90
    f1_m = 2 * p_m * r_m / (p_m + r_m)
    f1_l = 2 * p_l * r_l / (p_l + r_l)
    assert report.macro_f1 == pytest.approx((f1_m + f1_l) / 2, rel=1e-12)
    _ok(9, "metric-correctness")


# ---------------------------------------------------------------------------
# 10. throughput

def test_criterion_10_throughput(pipeline):
    _compiled, _registry, elapsed, n_packets = pipeline
    print(f"\n  compile+featurize: {n_packets} packets in {elapsed:.1f}s")
    assert n_packets >= 100_000
    assert elapsed < 60.0
    _ok(10, "throughput")
