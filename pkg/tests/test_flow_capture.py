import socket
from collections import Counter

import dpkt
import pytest

from core.flow_capture import (
    CaptureDiagnostics,
    Coordinates,
    Direction,
    FourTuple,
    apply_sidecar,
    detect_coordinates,
    flow_from_record,
    flow_to_record,
    parse_http,
    read_pcap,
    sessionize,
    sessionize_capture,
)
from tests.conftest import DEVICE, SERVER, http_get, make_flow, packet


def _stream():
    """Two keys interleaved; key A pauses 61 s before its last packet"""
    return [
        packet(0.0, Direction.UPLINK, 74, sport=1111),
        packet(0.5, Direction.UPLINK, 74, sport=2222),
        packet(1.0, Direction.DOWNLINK, 600, sport=1111),
        packet(2.0, Direction.DOWNLINK, 600, sport=2222),
        packet(62.0, Direction.UPLINK, 66, sport=1111),
    ]


def test_sessionize_splits_on_idle_gap():
    flows = sessionize(_stream(), idle_timeout=60.0)

    assert [str(f.key) for f in flows] == [
        f"{DEVICE}:1111>{SERVER}:80",
        f"{DEVICE}:2222>{SERVER}:80",
        f"{DEVICE}:1111>{SERVER}:80",
    ]
    assert [f.session_index for f in flows] == [0, 0, 1]
    assert [len(f.packets) for f in flows] == [2, 2, 1]
    assert flows[2].flow_id.endswith("#1")


def test_sessionize_partitions_valid_packets():
    stream = _stream()
    flows = sessionize(stream, idle_timeout=60.0)

    regrouped = Counter(p.timestamp for f in flows for p in f.packets)
    assert regrouped == Counter(p.timestamp for p in stream)
    for flow in flows:
        gaps = [b.timestamp - a.timestamp for a, b in zip(flow.packets, flow.packets[1:])]
        assert all(gap <= 60.0 for gap in gaps)


def test_sessionize_skips_malformed_and_out_of_order():
    stream = [
        packet(5.0, Direction.UPLINK, 74),
        packet(4.0, Direction.UPLINK, 74),
        packet(-1.0, Direction.UPLINK, 74),
        packet(6.0, Direction.DOWNLINK, 600),
    ]
    diagnostics = CaptureDiagnostics()
    flows = sessionize(stream, 60.0, diagnostics)

    assert len(flows) == 1
    assert len(flows[0].packets) == 2
    assert diagnostics.skipped == Counter({"out_of_order": 1, "malformed": 1})


def test_sessionize_is_deterministic():
    assert sessionize(_stream()) == sessionize(_stream())


def test_parse_http_extracts_request():
    flow = make_flow([
        (0.0, Direction.UPLINK, 74, b""),
        (0.1, Direction.UPLINK, 200, b"GET /weather/geo?lat=1 HTTP/1.1\r\nHost: v.juhe.cn\r\n\r\n"),
        (0.2, Direction.DOWNLINK, 900, b""),
    ])

    requests = parse_http(flow)

    assert len(requests) == 1
    assert requests[0].method == "GET"
    assert requests[0].host == "v.juhe.cn"
    assert requests[0].path == "/weather/geo?lat=1"
    assert requests[0].full_url == "v.juhe.cn/weather/geo?lat=1"


def test_parse_http_joins_continuation_segments():
    flow = make_flow([
        (0.0, Direction.UPLINK, 120, b"GET /a?b=1 HTTP/1.1\r\nUser-Agent: x\r\n"),
        (0.1, Direction.UPLINK, 120, b"Host: Example.COM:80\r\n\r\n"),
    ])

    (request,) = parse_http(flow)

    assert request.host == "example.com"
    assert request.full_url == "example.com/a?b=1"


def test_parse_http_ignores_encrypted_payloads():
    flow = make_flow([(0.0, Direction.UPLINK, 300, b"\x16\x03\x01" + bytes(40))], dport=443)
    assert parse_http(flow) == []


@pytest.mark.parametrize("url, expected", [
    ("ads.appsgeyser.com/?&guid=a5141e1d&tlat=38.53203&tlon=-121.759603&p=android&test=1",
     Coordinates(38.53203, -121.759603)),
    ("v.juhe.cn/weather/geo?&lon=-121.750683&lat=38.540323", Coordinates(38.540323, -121.750683)),
    ("collect.example/c?loc=38.5449,-121.7405", Coordinates(38.5449, -121.7405)),
    ("example.com/index.html", None),
    ("example.com/q?lat=123.0&lon=10.0", None),
    ("a.com/?lat=1e2&lon=3", None),
    ("a.com/?lat=12abc&lon=3", None),
    ("a.com/?lat=12&lon=3#top", Coordinates(12.0, 3.0)),
])
def test_detect_coordinates(url, expected):
    assert detect_coordinates(url) == expected


def _write_capture(path, frames):
    with open(path, "wb") as f:
        writer = dpkt.pcap.Writer(f)
        for timestamp, frame in frames:
            writer.writepkt(frame, ts=timestamp)
    return path


def _frame(src, dst, sport, dport, payload=b""):
    tcp = dpkt.tcp.TCP(sport=sport, dport=dport, flags=dpkt.tcp.TH_ACK)
    tcp.data = payload
    ip = dpkt.ip.IP(p=dpkt.ip.IP_PROTO_TCP, src=socket.inet_aton(src), dst=socket.inet_aton(dst))
    ip.data = tcp
    ip.len += len(ip.data)
    eth = dpkt.ethernet.Ethernet(src=b"\x02\x00\x00\x00\x00\x02", dst=b"\x02\x00\x00\x00\x00\x01")
    eth.data = ip
    return bytes(eth)


def test_read_pcap_decodes_direction_and_lengths(tmp_path):
    request = http_get("v.juhe.cn", "/weather/geo?lat=38.540323&lon=-121.750683")
    path = _write_capture(tmp_path / "sample.pcap", [
        (10.0, _frame(DEVICE, SERVER, 40000, 80, request)),
        (10.2, _frame(SERVER, DEVICE, 80, 40000, b"HTTP/1.1 200 OK\r\n\r\n{}")),
        (10.3, b"\x00" * 10),
    ])

    diagnostics = CaptureDiagnostics()
    packets = list(read_pcap(path, device_ips=[DEVICE], diagnostics=diagnostics))

    assert [p.direction for p in packets] == [Direction.UPLINK, Direction.DOWNLINK]
    assert packets[0].tcp_payload_len == len(request)
    assert packets[0].total_len == 54 + len(request)
    assert packets[0].has_http_layer
    assert packets[1].payload == b""
    assert diagnostics.packets_read == 3
    assert diagnostics.total_skipped == 1


def test_sessionize_capture_without_device_addresses_uses_server_port(tmp_path):
    path = _write_capture(tmp_path / "sample.pcap", [
        (1.0, _frame(DEVICE, SERVER, 40000, 80, http_get("v.juhe.cn", "/weather"))),
        (1.1, _frame(SERVER, DEVICE, 80, 40000, b"HTTP/1.1 200 OK\r\n\r\n")),
    ])

    flows, diagnostics = sessionize_capture(path)

    assert len(flows) == 1
    assert flows[0].key == FourTuple(DEVICE, 40000, SERVER, 80)
    assert flows[0].requests[0].host == "v.juhe.cn"
    assert diagnostics.total_skipped == 0


def test_apply_sidecar_by_four_tuple_and_timestamp():
    first = make_flow([(0.0, Direction.UPLINK, 74, b"")])
    second = make_flow([(100.0, Direction.UPLINK, 74, b"")])
    second = type(second)(key=second.key, packets=second.packets, session_index=1)

    records = [
        {"src_ip": DEVICE, "src_port": 40000, "dst_ip": SERVER, "dst_port": 80,
         "first_timestamp": 100.0, "instance_id": "inst-2", "taint_location": True},
        {"src_ip": DEVICE, "src_port": 40000, "dst_ip": SERVER, "dst_port": 80,
         "instance_id": "inst-1", "taint_location": False},
    ]
    annotated = apply_sidecar([first, second], records)

    assert (annotated[0].source_instance_id, annotated[0].taint_location) == ("inst-1", False)
    assert (annotated[1].source_instance_id, annotated[1].taint_location) == ("inst-2", True)


def test_flow_record_preserves_features_and_annotations():
    flow = make_flow([
        (0.0, Direction.UPLINK, 200, http_get("v.juhe.cn", "/weather/geo?lat=38.5&lon=-121.7")),
        (0.25, Direction.DOWNLINK, 900, b""),
    ], instance_id="inst-1", taint=True)

    restored = flow_from_record(flow_to_record(flow))

    assert restored.flow_id == flow.flow_id
    assert restored.requests == flow.requests
    assert [(p.timestamp, p.direction, p.total_len) for p in restored.packets] == \
        [(p.timestamp, p.direction, p.total_len) for p in flow.packets]
    assert (restored.source_instance_id, restored.taint_location) == ("inst-1", True)
