"""
Synthetic corpus: running instances, their traffic as pcap files, and ground truth

Class-conditional traffic follows the trends observed on real apps:
non-location flows carry many more TCP packets, illegal location flows
have a larger maximum downlink packet, and legitimate location flows have
longer inter-arrival times. URL vocabularies are class-correlated.
"""
from __future__ import annotations

import socket
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import dpkt
import numpy as np

from core.labeling import FlowClass, InstanceVerdict
from utils.file_handler import FileHandler, dumps_canonical
from utils.logger import get_logger

logger = get_logger(__name__)

HEADER_LEN = 54  # Ethernet + IPv4 + TCP without options

CITIES = (
    ("Davis", 38.5449, -121.7405),
    ("Sacramento", 38.5816, -121.4944),
    ("Oakland", 37.8044, -122.2712),
    ("Fresno", 36.7378, -119.7871),
)
GUIDS = ("3f9a2c1e", "b71d04aa", "0c55e9f2", "9e2b7d31")

LEGAL_HOSTS = ("api.weather-data.example", "maps.navigo.example", "geo.localsearch.example")
AD_HOSTS = ("ads.tracker.example", "sdk.adnet.example", "collect.analytix.example")
CONTENT_HOSTS = ("cdn.imgstore.example", "static.newsfeed.example", "update.appcloud.example")

EXPECTED_APPS = (
    ("LocalWeather", "weather", "Accurate local weather forecast with temperature and radar for your location."),
    ("CityNavigator", "travel", "Turn by turn navigation with maps and routes to nearby places in your city."),
    ("WeatherRadar", "weather", "Live rain radar and weather alerts for the current location."),
    ("NearbyFinder", "travel", "Find nearby restaurants and places on the map with directions."),
)
UNEXPECTED_APPS = (
    ("SuperLed", "tools", "The brightest flashlight: turn your LED into a torch light."),
    ("AlarmClockPro", "tools", "Loud alarm clock with snooze and wake up timer."),
    ("PuzzleQuest", "games", "Addictive puzzle game with hundreds of brain levels."),
    ("WallpaperStudio", "personalization", "Beautiful wallpapers, backgrounds and themes for your phone."),
)
EXPECTED_UI = ("Current location", "Forecast for today", "Temperature", "Show on map", "Directions", "Radar")
UNEXPECTED_UI = ("Turn on", "Brightness", "Set alarm", "Snooze", "Play", "Next level", "Apply wallpaper", "Settings")

# packet count, inter-arrival (ms), downlink frame length
PROFILES = {
    FlowClass.NON_LOC: {"packets": (40, 90), "gap_ms": (5.0, 120.0), "down": (400, 1514)},
    FlowClass.LEGAL: {"packets": (8, 16), "gap_ms": (250.0, 900.0), "down": (200, 900)},
    FlowClass.ILLEGAL: {"packets": (8, 16), "gap_ms": (10.0, 80.0), "down": (200, 700)},
}
ILLEGAL_MAX_DOWN = (1400, 1514)
HTTPS_SHARE = 0.2


@dataclass(frozen=True)
class SynthConfig:
    train_contexts: int = 80
    instances: int = 120
    expected_share: float = 0.5
    ad_flow_share: float = 0.3
    capture_files: int = 4
    seed: int = 1337
    device_ip: str = "10.0.0.2"
    start_time: float = 1_400_000_000.0


@dataclass
class SyntheticFlow:
    src_port: int
    dst_ip: str
    dst_port: int
    flow_class: FlowClass
    instance_id: str
    packets: List[Tuple[float, bool, int, bytes]] = field(default_factory=list)  # (ts, uplink, tcp flags, payload)


@dataclass
class SyntheticCorpus:
    config: SynthConfig
    train_contexts: List[Dict[str, object]]
    train_labels: Dict[str, str]
    contexts: List[Dict[str, object]]
    instance_truth: Dict[str, str]
    flows: List[SyntheticFlow]

    def flow_id(self, flow: SyntheticFlow) -> str:
        return f"{self.config.device_ip}:{flow.src_port}>{flow.dst_ip}:{flow.dst_port}#0"


def _server_ip(host: str) -> str:
    pools = (LEGAL_HOSTS, AD_HOSTS, CONTENT_HOSTS)
    for a, pool in enumerate(pools):
        if host in pool:
            return f"93.184.{a + 1}.{pool.index(host) + 10}"
    return "93.184.9.9"


def _context(instance_id: str, expected: bool, rng: np.random.Generator) -> Dict[str, object]:
    apps = EXPECTED_APPS if expected else UNEXPECTED_APPS
    name, category, description = apps[int(rng.integers(len(apps)))]
    ui_pool = EXPECTED_UI if expected else UNEXPECTED_UI
    ui_texts = [str(t) for t in rng.choice(ui_pool, size=2, replace=False)]
    if expected:
        city = CITIES[int(rng.integers(len(CITIES)))][0]
        ui_texts.append(f"Weather in {city}" if category == "weather" else f"Places near {city}")
        clickable = [city, "Refresh"]
    else:
        clickable = ["OK", "Settings"]
    return {
        "instance_id": instance_id,
        "app_name": name,
        "description": description,
        "market_category": category,
        "ui_texts": ui_texts,
        "clickable_labels": clickable,
    }


def _request(host: str, path: str) -> bytes:
    return (
        f"GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: Dalvik/2.1.0 (Linux; U; Android 9)\r\n"
        f"Accept-Encoding: gzip\r\n\r\n"
    ).encode("ascii")


def _location_path(flow_class: FlowClass, rng: np.random.Generator) -> str:
    _, lat, lon = CITIES[int(rng.integers(len(CITIES)))]
    if flow_class == FlowClass.LEGAL:
        if rng.random() < 0.5:
            return f"/v2/forecast?lat={lat:.4f}&lon={lon:.4f}&units=metric"
        return f"/route/search?latitude={lat:.4f}&longitude={lon:.4f}&q=coffee"
    guid = GUIDS[int(rng.integers(len(GUIDS)))]
    if rng.random() < 0.5:
        return f"/ad/request?slot=banner&lat={lat:.4f}&lng={lon:.4f}&guid={guid}"
    return f"/collect?event=open&loc={lat:.4f},{lon:.4f}&uid={guid}"


def _content_path(rng: np.random.Generator) -> str:
    choice = int(rng.integers(3))
    if choice == 0:
        return f"/img/thumb_{int(rng.integers(8))}.png"
    if choice == 1:
        return f"/news/latest?page={int(rng.integers(5))}"
    return f"/check?channel=stable&build={int(rng.integers(3))}"


def _flow_packets(
    flow_class: FlowClass,
    requests: List[bytes],
    https: bool,
    t0: float,
    rng: np.random.Generator
) -> List[Tuple[float, bool, int, bytes]]:
    profile = PROFILES[flow_class]
    lo, hi = profile["packets"]
    n = int(rng.integers(lo, hi + 1))
    body = n - 6

    kinds: List[Tuple[bool, int, bytes]] = [
        (True, dpkt.tcp.TH_SYN, b""),
        (False, dpkt.tcp.TH_SYN | dpkt.tcp.TH_ACK, b""),
        (True, dpkt.tcp.TH_ACK, b""),
    ]
    if https:
        kinds.append((True, dpkt.tcp.TH_PUSH | dpkt.tcp.TH_ACK, b"\x16\x03\x01" + bytes(int(rng.integers(180, 260)))))
    else:
        kinds.append((True, dpkt.tcp.TH_PUSH | dpkt.tcp.TH_ACK, requests[0]))

    # later requests replace uplink ACKs spread over the body
    extra = [] if https else list(requests[1:])
    request_slots = {int(s) | 1 for s in np.linspace(3, body - 2, num=len(extra))}
    big = int(rng.integers(body // 2)) * 2 if flow_class == FlowClass.ILLEGAL else -1
    response_started = False
    for i in range(body):
        if i % 2 == 0:
            low, high = ILLEGAL_MAX_DOWN if i == big else profile["down"]
            size = int(rng.integers(low, high + 1)) - HEADER_LEN
            if https:
                payload = b"\x17\x03\x03" + bytes(size - 3)
            elif not response_started:
                head = b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n\r\n"
                payload = head + b"x" * max(0, size - len(head))
                response_started = True
            else:
                payload = b"x" * size
            kinds.append((False, dpkt.tcp.TH_ACK, payload))
        elif i in request_slots and extra:
            kinds.append((True, dpkt.tcp.TH_PUSH | dpkt.tcp.TH_ACK, extra.pop(0)))
            response_started = False
        else:
            kinds.append((True, dpkt.tcp.TH_ACK, b""))
    kinds.append((True, dpkt.tcp.TH_FIN | dpkt.tcp.TH_ACK, b""))
    kinds.append((False, dpkt.tcp.TH_FIN | dpkt.tcp.TH_ACK, b""))

    gap_lo, gap_hi = profile["gap_ms"]
    packets = []
    t = t0
    for index, (uplink, flags, payload) in enumerate(kinds):
        if index:
            t += float(rng.uniform(gap_lo, gap_hi)) / 1000.0
        packets.append((round(t, 6), uplink, flags, payload))
    return packets


def generate_corpus(config: SynthConfig = SynthConfig()) -> SyntheticCorpus:
    """
    Generate contexts, instance verdicts and flows in memory

    Expected instances send legitimate location flows, sometimes a location
    flow to an ad host, and content flows. Unexpected instances send
    location data to ad and analytics hosts besides content flows.

    Args:
        config: Corpus size, class mix and seed

    Returns:
        SyntheticCorpus
    """
    rng = np.random.default_rng(config.seed)

    train_contexts, train_labels = [], {}
    for i in range(config.train_contexts):
        expected = i % 2 == 0
        instance_id = f"train-{i:04d}"
        train_contexts.append(_context(instance_id, expected, rng))
        train_labels[instance_id] = (InstanceVerdict.EXPECTED if expected else InstanceVerdict.UNEXPECTED).value

    contexts, instance_truth, flows = [], {}, []
    port = 20000
    t = config.start_time
    n_expected = int(round(config.expected_share * config.instances))
    for i in range(config.instances):
        expected = i < n_expected
        instance_id = f"inst-{i:04d}"
        contexts.append(_context(instance_id, expected, rng))
        instance_truth[instance_id] = (InstanceVerdict.EXPECTED if expected else InstanceVerdict.UNEXPECTED).value

        plan: List[FlowClass] = []
        if expected:
            plan += [FlowClass.LEGAL, FlowClass.LEGAL]
            if rng.random() < config.ad_flow_share:
                plan.append(FlowClass.ILLEGAL)
        else:
            plan += [FlowClass.ILLEGAL, FlowClass.ILLEGAL]
        plan += [FlowClass.NON_LOC] * int(rng.integers(2, 4))

        for flow_class in plan:
            https = flow_class == FlowClass.NON_LOC and rng.random() < HTTPS_SHARE
            if flow_class == FlowClass.LEGAL:
                host = LEGAL_HOSTS[int(rng.integers(len(LEGAL_HOSTS)))]
                requests = [_request(host, _location_path(flow_class, rng))]
            elif flow_class == FlowClass.ILLEGAL:
                host = AD_HOSTS[int(rng.integers(len(AD_HOSTS)))]
                requests = [_request(host, _location_path(flow_class, rng))]
            else:
                host = CONTENT_HOSTS[int(rng.integers(len(CONTENT_HOSTS)))]
                requests = [_request(host, _content_path(rng)) for _ in range(int(rng.integers(1, 4)))]

            flow = SyntheticFlow(
                src_port=port,
                dst_ip=_server_ip(host),
                dst_port=443 if https else 80,
                flow_class=flow_class,
                instance_id=instance_id,
            )
            flow.packets = _flow_packets(flow_class, requests, https, t, rng)
            flows.append(flow)
            port += 1
            t = flow.packets[-1][0] + 0.5

    logger.info(
        f"Generated {len(train_contexts)} training contexts, {len(contexts)} instances, {len(flows)} flows"
    )
    return SyntheticCorpus(config, train_contexts, train_labels, contexts, instance_truth, flows)


def _frame(src: str, dst: str, sport: int, dport: int, flags: int, payload: bytes) -> bytes:
    tcp = dpkt.tcp.TCP(sport=sport, dport=dport, flags=flags)
    tcp.data = payload
    ip = dpkt.ip.IP(p=dpkt.ip.IP_PROTO_TCP, src=socket.inet_aton(src), dst=socket.inet_aton(dst))
    ip.data = tcp
    ip.len += len(ip.data)
    eth = dpkt.ethernet.Ethernet(src=b"\x02\x00\x00\x00\x00\x02", dst=b"\x02\x00\x00\x00\x00\x01")
    eth.data = ip
    return bytes(eth)


def write_pcap(path: Path, flows: List[SyntheticFlow], device_ip: str) -> Path:
    """Write flows as an Ethernet pcap, packets in timestamp order"""
    packets = []
    for flow in flows:
        for timestamp, uplink, flags, payload in flow.packets:
            if uplink:
                frame = _frame(device_ip, flow.dst_ip, flow.src_port, flow.dst_port, flags, payload)
            else:
                frame = _frame(flow.dst_ip, device_ip, flow.dst_port, flow.src_port, flags, payload)
            packets.append((timestamp, frame))
    packets.sort(key=lambda p: p[0])

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        writer = dpkt.pcap.Writer(f)
        for timestamp, frame in packets:
            writer.writepkt(frame, ts=timestamp)
    return path


def write_corpus(corpus: SyntheticCorpus, out_dir: Path) -> Dict[str, object]:
    """
    Write the corpus as pipeline inputs

    Args:
        corpus: Generated corpus
        out_dir: Destination directory

    Returns:
        Mapping of input name to written path (captures: list of paths)
    """
    file_handler = FileHandler(Path(out_dir).resolve())
    config = corpus.config
    device = config.device_ip

    captures = []
    chunks = np.array_split(np.arange(len(corpus.flows)), max(1, config.capture_files))
    for index, chunk in enumerate(chunks):
        if len(chunk) == 0:
            continue
        path = file_handler.path(f"captures/capture_{index:02d}.pcap")
        captures.append(write_pcap(path, [corpus.flows[i] for i in chunk], device))

    sidecar = [
        {
            "src_ip": device, "src_port": f.src_port, "dst_ip": f.dst_ip, "dst_port": f.dst_port,
            "instance_id": f.instance_id, "taint_location": f.flow_class != FlowClass.NON_LOC,
        }
        for f in corpus.flows
    ]
    truth = [{"flow_id": corpus.flow_id(f), "class": f.flow_class.value} for f in corpus.flows]

    paths: Dict[str, object] = {
        "captures": [str(p) for p in captures],
        "sidecar": str(file_handler.save_records("sidecar.jsonl", "sidecar", sidecar)),
        "contexts": str(file_handler.save_records("train_contexts.jsonl", "contexts", corpus.train_contexts)),
        "context_labels": str(file_handler.save_records(
            "context_labels.jsonl", "instance_truth",
            [{"instance_id": k, "label": v} for k, v in sorted(corpus.train_labels.items())],
        )),
        "test_contexts": str(file_handler.save_records("contexts.jsonl", "contexts", corpus.contexts)),
        "instance_truth": str(file_handler.save_records(
            "instance_truth.jsonl", "instance_truth",
            [{"instance_id": k, "label": v} for k, v in sorted(corpus.instance_truth.items())],
        )),
        "ground_truth": str(file_handler.save_records("ground_truth.jsonl", "ground_truth", truth)),
        "device_ips": [device],
        "seed": config.seed,
    }
    file_handler.save_text("run_config.json", dumps_canonical(paths))
    paths["run_config"] = str(file_handler.path("run_config.json"))
    logger.info(f"Wrote synthetic corpus to {out_dir}: {len(captures)} captures, {len(corpus.flows)} flows")
    return paths
