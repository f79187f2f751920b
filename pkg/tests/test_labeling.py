import pytest

from core.flow_capture import CoordinateKeys, Direction
from core.labeling import (
    FlowClass,
    HostnameList,
    InstanceLabel,
    InstanceVerdict,
    LabelingStats,
    auto_label_flows,
    consensus_vote,
    is_location_flow,
    load_hostlist,
)
from utils.errors import DataError
from tests.conftest import http_get, make_flow

HOSTLIST = HostnameList.from_entries(["tracker.example", "x.com"])
LOCATION_PATH = "/c?lat=38.540323&lon=-121.750683"


def _flow(host, path, instance_id, sport, taint=None):
    return make_flow([(0.0, Direction.UPLINK, 300, http_get(host, path))],
                     instance_id=instance_id, taint=taint, sport=sport)


@pytest.mark.parametrize("host, matched", [
    ("tracker.example", True),
    ("ads.tracker.example", True),
    ("ADS.Tracker.Example:8080", True),
    ("ads.x.com", True),
    ("badx.com", False),
    ("tracker.example.org", False),
])
def test_hostlist_suffix_match(host, matched):
    assert HOSTLIST.matches(host) is matched


def test_load_hostlist_skips_comments(tmp_path):
    path = tmp_path / "hosts.txt"
    path.write_text("# ad networks\ntracker.example  # inline\n\nadnet.example\n", encoding="utf-8")
    hostlist = load_hostlist(path)

    assert hostlist.entries == {"tracker.example", "adnet.example"}
    assert hostlist.digest == HostnameList.from_entries(["adnet.example", "tracker.example"]).digest


def test_load_hostlist_rejects_urls(tmp_path):
    path = tmp_path / "hosts.txt"
    path.write_text("http://tracker.example/\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_hostlist(path)


def test_consensus_vote():
    assert consensus_vote("expected", "expected", "expected") == "expected"
    assert consensus_vote("expected", "unexpected", "expected") is None


def test_auto_label_flows_rules():
    instances = [
        InstanceLabel("inst-exp", InstanceVerdict.EXPECTED),
        InstanceLabel("inst-unexp", InstanceVerdict.UNEXPECTED),
        InstanceLabel("inst-filt", InstanceVerdict.FILTERED),
    ]
    flows = [
        _flow("v.juhe.cn", LOCATION_PATH, "inst-exp", 1001),
        _flow("ads.tracker.example", LOCATION_PATH, "inst-exp", 1002),
        _flow("v.juhe.cn", LOCATION_PATH, "inst-unexp", 1003),
        _flow("v.juhe.cn", "/weather", "inst-exp", 1004),
        _flow("v.juhe.cn", LOCATION_PATH, "inst-filt", 1005),
        _flow("v.juhe.cn", LOCATION_PATH, None, 1006),
        _flow("api.example", "/sync", "inst-exp", 1007, taint=True),
        _flow("static.example", "/logo.png", None, 1008),
    ]
    stats = LabelingStats()

    labels = auto_label_flows(flows, instances, HOSTLIST, stats)

    by_id = {label.flow_id: label.flow_class for label in labels}
    assert [by_id.get(f.flow_id) for f in flows] == [
        FlowClass.LEGAL,
        FlowClass.ILLEGAL,
        FlowClass.ILLEGAL,
        FlowClass.NON_LOC,
        None,
        None,
        FlowClass.LEGAL,
        FlowClass.NON_LOC,
    ]
    assert stats.flows_in == 8
    assert stats.dropped == {"filtered_instance": 1, "unresolved_instance": 1}
    assert stats.classes == {"legal-loc": 2, "illegal-loc": 2, "non-loc": 2}


def test_instance_label_record_validation():
    with pytest.raises(DataError):
        InstanceLabel.from_record({"instance_id": "inst-1", "verdict": "maybe"})


def test_is_location_flow_uses_taint_or_url_coordinates():
    plain = [(0.0, Direction.UPLINK, 200, http_get("x.com", "/news"))]
    leaking = [(0.0, Direction.UPLINK, 200, http_get("x.com", LOCATION_PATH))]

    assert is_location_flow(make_flow(leaking))
    assert is_location_flow(make_flow(plain, taint=True))
    assert not is_location_flow(make_flow(plain))
    assert not is_location_flow(make_flow(plain, taint=False))


def test_coordinate_keys_are_configurable():
    flow = make_flow([(0.0, Direction.UPLINK, 200, http_get("x.com", "/c?y=38.5403&x=-121.7506"))])
    keys = CoordinateKeys.from_dict({"lat": ["Y"], "lon": ["x"]})

    assert not is_location_flow(flow)
    assert is_location_flow(flow, keys)
    stats = LabelingStats()
    assert auto_label_flows([flow], [], HOSTLIST, stats, keys) == []
    assert stats.dropped["unresolved_instance"] == 1

    with pytest.raises(DataError):
        CoordinateKeys.from_dict({"alt": ["z"]})
    with pytest.raises(DataError):
        CoordinateKeys.from_dict({"lon": []})


def test_growing_the_hostlist_never_legalizes_a_flow():
    hosts = ["maps.example", "ads.tracker.example", "cdn.x.com", "api.weather.example", "stats.adnet.example"]
    flows = [_flow(host, LOCATION_PATH, f"inst-{i % 2}", 30000 + i) for i, host in enumerate(hosts)]
    instances = [InstanceLabel("inst-0", InstanceVerdict.EXPECTED), InstanceLabel("inst-1", InstanceVerdict.UNEXPECTED)]

    small = {l.flow_id: l.flow_class for l in auto_label_flows(flows, instances, HOSTLIST)}
    grown = HostnameList.from_entries(sorted(HOSTLIST.entries) + ["adnet.example", "weather.example"])
    large = {l.flow_id: l.flow_class for l in auto_label_flows(flows, instances, grown)}

    assert set(small) == set(large)
    for flow_id, flow_class in small.items():
        if flow_class == FlowClass.ILLEGAL:
            assert large[flow_id] == FlowClass.ILLEGAL
    assert sum(c == FlowClass.ILLEGAL for c in large.values()) > sum(c == FlowClass.ILLEGAL for c in small.values())
