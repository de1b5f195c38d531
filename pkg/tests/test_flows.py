import numpy as np
import pytest

from pairflow import appproto
from pairflow.errors import EmptyFlow
from pairflow.flows import (attach_dns, encapsulate, hygiene_filter,
                            parse_url_record, separate_planes, track_pairs)
from pairflow.records import (AppKind, ApplicationMeta, FlowId, IpProto,
                              PairKey, RawPacket, WindowBatch, dump_pairflow_line,
                              load_pairflow_line)
from pairflow.summary import SummaryRegistry


def _tcp(i, ts, src, dst, flags, payload=0, meta=None, sport=1000, dport=80):
    return RawPacket(packet_index=i, timestamp=ts, src_addr=src, dst_addr=dst,
                     src_port=sport, dst_port=dport, ip_proto=IpProto.TCP,
                     length=60 + payload, tcp_flags=flags, payload_len=payload,
                     ttl=64, app_meta=meta)


def _dns(i, ts, src, dst, kind, qname, answers=()):
    return RawPacket(packet_index=i, timestamp=ts, src_addr=src, dst_addr=dst,
                     src_port=5353, dst_port=53, ip_proto=IpProto.UDP,
                     length=80, payload_len=40, ttl=64,
                     app_meta=ApplicationMeta(kind=kind, dns_qname=qname,
                                              dns_answers=list(answers)))


def _batch(packets):
    return WindowBatch(window_index=0, start=0.0, end=600.0, packets=packets)


def test_track_pairs_partitions_by_endpoint_pair():
    pkts = [_tcp(0, 0.0, "A", "B", 0x02), _tcp(1, 0.1, "B", "A", 0x12),
            _tcp(2, 0.2, "A", "C", 0x02)]
    pairs, dns_pool = track_pairs(_batch(pkts), "cap")
    assert dns_pool == []
    assert {(k.source, k.destination): len(v) for k, v in pairs.items()} == \
        {("A", "B"): 2, ("A", "C"): 1}


def test_first_syn_sender_becomes_source():
    pkts = [_tcp(0, 0.0, "B", "A", 0x02), _tcp(1, 0.1, "A", "B", 0x12)]
    (pair,) = track_pairs(_batch(pkts), "cap")[0]
    assert pair.source == "B"
    assert pair.destination == "A"


def test_no_syn_falls_back_to_first_sender():
    pkts = [_tcp(0, 0.0, "B", "A", 0x18, payload=5), _tcp(1, 0.1, "A", "B", 0x10)]
    (pair,) = track_pairs(_batch(pkts), "cap")[0]
    assert pair.source == "B"


def test_track_pairs_matches_grouping_oracle():
    rng = np.random.default_rng(3)
    hosts = ["h1", "h2", "h3", "h4", "h5"]
    pkts = []
    for i in range(500):
        a, b = rng.choice(len(hosts), size=2, replace=False)
        pkts.append(_tcp(i, i * 0.01, hosts[a], hosts[b], 0x18, payload=4))
    pairs, _ = track_pairs(_batch(pkts), "cap")
    oracle: dict[frozenset, int] = {}
    for p in pkts:
        key = frozenset((p.src_addr, p.dst_addr))
        oracle[key] = oracle.get(key, 0) + 1
    got = {frozenset((k.source, k.destination)): len(v) for k, v in pairs.items()}
    assert got == oracle
    total = sum(len(v) for v in pairs.values())
    assert total == 500  # every packet in exactly one pair


def test_attach_dns_local_ptr_rule():
    tcp = [_tcp(2, 1.0, "H", "10.0.0.9", 0x02)]
    pool = [_dns(0, 0.1, "H", "resolver", AppKind.DNS_REQUEST, "evil.com"),
            _dns(1, 0.2, "resolver", "H", AppKind.DNS_RESPONSE, "evil.com",
                 [("A", "10.0.0.9")])]
    pairs, dns_pool = track_pairs(_batch(tcp + pool), "cap")
    assert len(dns_pool) == 2
    pairs = attach_dns(pairs, dns_pool)
    (packets,) = pairs.values()
    assert [p.packet_index for p in packets] == [0, 1, 2]  # sorted by arrival


def test_pair_without_dns_is_unchanged():
    tcp = [_tcp(0, 1.0, "H", "10.9.9.9", 0x02)]
    pairs, _ = track_pairs(_batch(tcp), "cap")
    pairs = attach_dns(pairs, [])
    (packets,) = pairs.values()
    assert len(packets) == 1
    flow = encapsulate(FlowId(0, 0), list(pairs)[0], packets, (0.0, 600.0))
    assert "DNS" not in flow.epflag


def test_attach_dns_matches_cross_check_oracle():
    rng = np.random.default_rng(9)
    dests = [f"10.0.0.{i}" for i in range(1, 7)]
    tcp = [_tcp(100 + i, 1.0 + i, "H", d, 0x02) for i, d in enumerate(dests)]
    pool = []
    idx = 0
    names = []
    for r in range(20):
        qname = f"d{r}.example"
        n_ans = int(rng.integers(1, 4))
        answers = [("A", dests[int(j)]) for j in
                   rng.choice(len(dests), size=n_ans, replace=False)]
        if rng.random() < 0.3:  # some responses resolve nothing we contacted
            answers = [("A", "172.31.0.9")]
        pool.append(_dns(idx, 0.01 * idx, "H", "res", AppKind.DNS_REQUEST, qname))
        idx += 1
        pool.append(_dns(idx, 0.01 * idx, "res", "H", AppKind.DNS_RESPONSE,
                         qname, answers))
        idx += 1
        names.append((qname, {v for _t, v in answers}))
    pairs, dns_pool = track_pairs(_batch(tcp + pool), "cap")
    pairs = attach_dns(pairs, dns_pool)
    for pair, packets in pairs.items():
        got = {(p.app_meta.dns_qname, p.app_meta.kind.value)
               for p in packets if p.ip_proto is IpProto.UDP}
        expect = set()
        for qname, answers in names:
            if pair.destination in answers:
                expect.add((qname, "DNS_RESPONSE"))
                expect.add((qname, "DNS_REQUEST"))
        assert got == expect
        ts = [(p.timestamp, p.packet_index) for p in packets]
        assert ts == sorted(ts)


def test_flow_id_sequence():
    reg = SummaryRegistry()
    pair = PairKey("cap1", "A", "B")
    first = reg.assign(pair)
    assert (first.cs_id, first.pf_id) == (0, 0)
    second = reg.assign(pair)
    assert second.cs_id == 0
    assert second.pf_id == 1
    other = reg.assign(PairKey("cap1", "A", "C"))
    assert other.cs_id == 1
    assert other.pf_id == 0


def test_flow_id_replay_oracle():
    rng = np.random.default_rng(4)
    reg = SummaryRegistry()
    pairs = [PairKey("cap", "h", f"d{i}") for i in range(8)]
    seen: dict[PairKey, list[int]] = {p: [] for p in pairs}
    cs_of: dict[PairKey, int] = {}
    for _ in range(100):
        pair = pairs[int(rng.integers(0, len(pairs)))]
        fid = reg.assign(pair)
        seen[pair].append(fid.pf_id)
        cs_of.setdefault(pair, fid.cs_id)
        assert cs_of[pair] == fid.cs_id  # cs_id never changes
    for pair, sequence in seen.items():
        assert sequence == list(range(len(sequence)))


def test_separate_planes_control_tags():
    pkts = [_tcp(72095, 215.73, "A", "B", 0x02),
            _tcp(72126, 215.78, "B", "A", 0x12),
            _tcp(72127, 215.78, "A", "B", 0x10)]
    control, data, udp, icmp = separate_planes(pkts)
    assert [p.tag for p in control] == ["0x02", "0x12", "0x10"]
    assert data == [] and udp == [] and icmp == []
    assert control[0].as_tuple() == (72095, "0x02", 215.73, 60)


def test_separate_planes_http_tuple_shape():
    meta = ApplicationMeta(kind=AppKind.HTTP_REQUEST, http_method="GET")
    pkts = [_tcp(460854, 1066.51, "A", "B", 0x18, payload=323, meta=meta)]
    _control, data, _udp, _icmp = separate_planes(pkts)
    assert data[0].as_tuple() == (460854, "HTTP", "Request", "GET",
                                  "Empty Content", 1066.51, 383)
    resp = ApplicationMeta(kind=AppKind.HTTP_RESPONSE, http_status=200,
                           content_type="text/javascript")
    pkts = [_tcp(460895, 1066.86, "B", "A", 0x18, payload=369, meta=resp)]
    _control, data, _udp, _icmp = separate_planes(pkts)
    assert data[0].as_tuple() == (460895, "HTTP", "Response", "200",
                                  "text/javascript", 1066.86, 429)


def test_separate_planes_dns_tuple():
    pkt = _dns(21160, 141.44, "H", "res", AppKind.DNS_REQUEST, "x.example")
    pkt.length = 75
    _control, _data, udp, _icmp = separate_planes([pkt])
    assert udp[0].as_tuple() == (21160, "DNS", "DNS Request", 141.44, 75)


def test_encapsulate_counts_and_flags():
    meta_req = ApplicationMeta(kind=AppKind.HTTP_REQUEST, http_method="GET",
                               url="s.example/a", user_agent="ua1",
                               server_name="s.example")
    meta_resp = ApplicationMeta(kind=AppKind.HTTP_RESPONSE, http_status=200,
                                content_type="text/html")
    pkts = [
        _dns(0, 0.1, "H", "res", AppKind.DNS_REQUEST, "s.example"),
        _dns(1, 0.2, "res", "H", AppKind.DNS_RESPONSE, "s.example",
             [("A", "10.0.0.9"), ("NS", "ns1.s.example")]),
        _tcp(2, 1.0, "H", "10.0.0.9", 0x02),
        _tcp(3, 1.1, "10.0.0.9", "H", 0x12),
        _tcp(4, 1.2, "H", "10.0.0.9", 0x10),
        _tcp(5, 1.3, "H", "10.0.0.9", 0x18, payload=100, meta=meta_req),
        _tcp(6, 1.5, "10.0.0.9", "H", 0x18, payload=300, meta=meta_resp),
    ]
    pair = PairKey("cap", "H", "10.0.0.9")
    flow = encapsulate(FlowId(0, 0), pair, pkts, (0.0, 600.0),
                       whois_ages={"s.example": 120.0})
    assert flow.epflag == {"UDP", "DNS", "TCP", "HTTP"}
    assert flow.stats.n_dns == 2
    assert flow.stats.n_http == 2
    assert flow.stats.n_raw_tcp == 3
    assert flow.fqdns == [("s.example", ["10.0.0.9"], ["ns1.s.example"], 120.0)]
    assert flow.urls[0].fqdn_or_ip == "s.example"
    assert flow.user_agents == ["ua1"]
    assert flow.status_codes == ["200"]
    # byte conservation, sent/received split by orientation
    assert flow.stats.total_sent + flow.stats.total_received == flow.stats.total_bytes
    assert flow.stats.total_sent == 80 + 60 + 60 + 160
    assert flow.epflag_string() == "DNS+HTTP+TCP+UDP"


def test_encapsulate_tls_only_flow():
    hello = appproto.parse_tls(appproto.build_client_hello([0x1301]))
    pkts = [_tcp(0, 0.0, "H", "D", 0x18, payload=100, meta=hello),
            _tcp(1, 0.4, "D", "H", 0x18, payload=200,
                 meta=ApplicationMeta(kind=AppKind.TLS_APPDATA))]
    flow = encapsulate(FlowId(0, 0), PairKey("cap", "H", "D"), pkts, (0.0, 600.0))
    assert "TLS" in flow.epflag
    assert flow.stats.total_encrypted == 160 + 260
    assert flow.stats.encrypted_sent == 160
    assert flow.stats.encrypted_received == 260
    assert flow.tls_client is not None
    assert flow.tls_client.cipher_suites == ["0x1301"]


def test_encapsulate_empty_flow_raises():
    with pytest.raises(EmptyFlow):
        encapsulate(FlowId(0, 0), PairKey("c", "a", "b"), [], (0.0, 1.0))


def test_encapsulate_is_deterministic():
    pkts = [_tcp(0, 0.0, "H", "D", 0x02), _tcp(1, 0.1, "D", "H", 0x12),
            _tcp(2, 0.2, "H", "D", 0x10), _tcp(3, 0.3, "H", "D", 0x18, payload=44)]
    pair = PairKey("cap", "H", "D")
    a = dump_pairflow_line(encapsulate(FlowId(1, 0), pair, pkts, (0.0, 600.0)))
    b = dump_pairflow_line(encapsulate(FlowId(1, 0), pair, pkts, (0.0, 600.0)))
    assert a == b
    assert load_pairflow_line(a).stats.total_bytes == 224 + 60


def test_hygiene_failed_tcp_removed():
    pkts = [_tcp(0, 0.0, "H", "D", 0x02), _tcp(1, 0.5, "H", "D", 0x02),
            _tcp(2, 1.0, "D", "H", 0x12)]
    flow = encapsulate(FlowId(0, 0), PairKey("c", "H", "D"), pkts, (0.0, 600.0))
    kept, report = hygiene_filter([flow])
    assert kept == []
    assert report == {"FailedTCP": 1, "EmptyData": 0}


def test_hygiene_keeps_completed_flow_with_data():
    pkts = [_tcp(0, 0.0, "H", "D", 0x02), _tcp(1, 0.1, "D", "H", 0x12),
            _tcp(2, 0.2, "H", "D", 0x10)]
    pkts += [_tcp(3 + i, 0.3 + i * 0.1, "H", "D", 0x18, payload=50,
                  meta=ApplicationMeta(kind=AppKind.HTTP_REQUEST, http_method="GET"))
             for i in range(5)]
    flow = encapsulate(FlowId(0, 0), PairKey("c", "H", "D"), pkts, (0.0, 600.0))
    kept, report = hygiene_filter([flow])
    assert len(kept) == 1
    assert report == {"FailedTCP": 0, "EmptyData": 0}


def test_hygiene_empty_data_removed():
    pkts = [_tcp(0, 0.0, "H", "D", 0x02), _tcp(1, 0.1, "D", "H", 0x12),
            _tcp(2, 0.2, "H", "D", 0x10), _tcp(3, 0.3, "H", "D", 0x11)]
    flow = encapsulate(FlowId(0, 0), PairKey("c", "H", "D"), pkts, (0.0, 600.0))
    kept, report = hygiene_filter([flow])
    assert kept == []
    assert report == {"FailedTCP": 0, "EmptyData": 1}


def test_hygiene_is_idempotent(small_flows):
    once, report1 = hygiene_filter(small_flows)
    twice, report2 = hygiene_filter(once)
    assert len(once) == len(twice)
    assert report2 == {"FailedTCP": 0, "EmptyData": 0}


def test_url_record_parse_examples():
    rec = parse_url_record("h.example/a/b/c.exe?x=1")
    assert rec.fqdn_or_ip == "h.example"
    assert rec.path_depth == 2
    assert rec.filename == "c.exe"
    assert rec.extension == "exe"
    assert rec.n_params == 1
    assert rec.n_values == 1
    bare = parse_url_record("h.example")
    assert bare.path_depth == 0
    assert bare.filename is None
    assert bare.raw_length >= len(bare.fqdn_or_ip)


def test_url_record_fragments_and_encoding():
    rec = parse_url_record("http://x.io/a/%32%35/page.html?a=1&b=&c#frag")
    assert rec.fqdn_or_ip == "x.io"
    assert rec.has_encoded
    assert rec.n_fragments == 1
    assert rec.n_params == 3  # a, b, c all have keys
    assert rec.n_values == 1  # only a carries a value
    assert rec.path_depth == 2
    assert rec.filename == "page.html"


def test_plane_partition_over_corpus(small_flows):
    for flow in small_flows:
        n_tcp = flow.stats.n_raw_tcp + flow.stats.n_http + flow.stats.n_tls \
            + flow.stats.n_ssl
        assert len(flow.tcp_control_plane) + len(flow.tcp_data_plane) == n_tcp
