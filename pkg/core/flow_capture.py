"""
Packet capture ingestion and HTTP flow reconstruction
"""
from __future__ import annotations

import math
import re
import socket
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Tuple

import dpkt

from utils.errors import DataError
from utils.file_handler import read_records
from utils.logger import get_logger
from utils.validators import validate_packet_meta

logger = get_logger(__name__)

DEFAULT_IDLE_TIMEOUT = 60.0

HTTP_METHODS = ("GET", "POST", "HEAD", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT", "TRACE")
_METHOD_PREFIXES = tuple(f"{m} ".encode("ascii") for m in HTTP_METHODS)

SERVER_PORTS = frozenset({80, 443, 8000, 8080, 8443})

LAT_KEYS = frozenset({"lat", "latitude", "tlat"})
LON_KEYS = frozenset({"lng", "lon", "longitude", "tlon"})

# the value must end at a delimiter, so "1e2" or "12abc" never yields a number
_KEY_VALUE_RE = re.compile(r'(?:^|[?&;/#])([A-Za-z_]+)=([-+]?\d+(?:\.\d+)?)(?=$|[&;#/,])')
_BARE_PAIR_RE = re.compile(
    r'(?<![0-9A-Za-z.])(-?\d{1,3}\.\d{4,})[^0-9A-Za-z.\-]+(-?\d{1,3}\.\d{4,})(?![0-9A-Za-z.])'
)


class Direction(str, Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"


@dataclass(frozen=True)
class FourTuple:
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int

    def reversed(self) -> FourTuple:
        return FourTuple(self.dst_ip, self.dst_port, self.src_ip, self.src_port)

    def __iter__(self):
        return iter((self.src_ip, self.src_port, self.dst_ip, self.dst_port))

    def __len__(self) -> int:
        return 4

    def __str__(self) -> str:
        return f"{self.src_ip}:{self.src_port}>{self.dst_ip}:{self.dst_port}"


@dataclass(frozen=True)
class PacketMeta:
    """
    Metadata of one captured TCP packet

    four_tuple is the packet's own orientation (its source first). The
    uplink payload is kept for HTTP parsing; downlink payloads are dropped.
    """
    timestamp: float
    direction: Direction
    tcp_payload_len: int
    total_len: int
    has_http_layer: bool
    four_tuple: FourTuple
    payload: bytes = field(default=b"", repr=False, compare=False)

    @property
    def flow_key(self) -> FourTuple:
        """Uplink-oriented key: uplink packets match directly, downlink reversed"""
        if self.direction == Direction.UPLINK:
            return self.four_tuple
        return self.four_tuple.reversed()


@dataclass(frozen=True)
class HttpRequest:
    method: str
    host: str
    path: str
    full_url: str


@dataclass(frozen=True)
class Coordinates:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"Coordinates out of range: ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class CoordinateKeys:
    """Query-parameter names read as latitude and longitude"""
    lat: FrozenSet[str] = LAT_KEYS
    lon: FrozenSet[str] = LON_KEYS

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[str]]) -> CoordinateKeys:
        """Override either key set; names are matched case-insensitively"""
        unknown = sorted(set(data) - {"lat", "lon"})
        if unknown:
            raise DataError(f"Unknown coordinate key set(s): {', '.join(unknown)}")
        keys = {}
        for axis in ("lat", "lon"):
            names = frozenset(str(name).lower() for name in data.get(axis, getattr(cls, axis)))
            if not names:
                raise DataError(f"Coordinate key set {axis!r} must not be empty")
            keys[axis] = names
        return cls(**keys)


@dataclass(frozen=True)
class HttpFlow:
    """A sessionized TCP conversation keyed by its uplink 4-tuple"""
    key: FourTuple
    packets: Tuple[PacketMeta, ...]
    requests: Tuple[HttpRequest, ...] = ()
    session_index: int = 0
    source_instance_id: Optional[str] = None
    taint_location: Optional[bool] = None

    @property
    def flow_id(self) -> str:
        return f"{self.key}#{self.session_index}"

    @property
    def first_timestamp(self) -> float:
        return self.packets[0].timestamp


@dataclass
class CaptureDiagnostics:
    """Tally of records skipped while reading and sessionizing"""
    skipped: Counter = field(default_factory=Counter)
    packets_read: int = 0

    def skip(self, reason: str) -> None:
        self.skipped[reason] += 1

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())

    def merge(self, other: CaptureDiagnostics) -> None:
        self.skipped.update(other.skipped)
        self.packets_read += other.packets_read

    def to_dict(self) -> Dict[str, Any]:
        return {"packets_read": self.packets_read, "skipped": dict(sorted(self.skipped.items()))}


def sessionize(
    packets: Iterable[PacketMeta],
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    diagnostics: Optional[CaptureDiagnostics] = None
) -> List[HttpFlow]:
    """
    Group a timestamp-ordered packet stream into flows

    A new session starts on a key when the gap since its previous packet
    exceeds idle_timeout. Malformed records are skipped and tallied.

    Args:
        packets: Packets sorted by nondecreasing timestamp
        idle_timeout: Maximum inter-packet gap within one session (seconds)
        diagnostics: Optional tally to update with skipped records

    Returns:
        Flows in order of first-packet timestamp, HTTP requests parsed
    """
    if diagnostics is None:
        diagnostics = CaptureDiagnostics()

    sessions: List[List[PacketMeta]] = []
    open_sessions: Dict[FourTuple, int] = {}
    session_counts: Counter = Counter()
    session_keys: List[Tuple[FourTuple, int]] = []
    last_timestamp = -math.inf

    for packet in packets:
        is_valid, error = validate_packet_meta(packet)
        if not is_valid:
            diagnostics.skip("malformed")
            logger.debug(f"Skipping packet: {error}")
            continue
        if packet.timestamp < last_timestamp:
            diagnostics.skip("out_of_order")
            logger.debug(f"Skipping out-of-order packet at {packet.timestamp}")
            continue
        last_timestamp = packet.timestamp

        key = packet.flow_key
        index = open_sessions.get(key)
        if index is not None and packet.timestamp - sessions[index][-1].timestamp > idle_timeout:
            index = None
        if index is None:
            index = len(sessions)
            sessions.append([])
            session_keys.append((key, session_counts[key]))
            session_counts[key] += 1
            open_sessions[key] = index
        sessions[index].append(packet)

    flows = []
    for (key, session_index), members in zip(session_keys, sessions):
        flow = HttpFlow(key=key, packets=tuple(members), session_index=session_index)
        flows.append(replace(flow, requests=tuple(parse_http(flow))))

    if diagnostics.total_skipped:
        logger.info(f"Sessionized {len(flows)} flows; skipped {diagnostics.to_dict()['skipped']}")
    return flows


def is_http_request_payload(payload: bytes) -> bool:
    return payload.startswith(_METHOD_PREFIXES)


def parse_http(flow: HttpFlow) -> List[HttpRequest]:
    """
    Extract HTTP requests from a flow's uplink payloads

    Each uplink payload that begins with a method token opens a request;
    following uplink payloads are appended until the header block ends.

    Args:
        flow: Flow with uplink payloads attached

    Returns:
        Requests in packet order
    """
    messages: List[bytearray] = []
    for packet in flow.packets:
        if packet.direction != Direction.UPLINK or not packet.payload:
            continue
        if is_http_request_payload(packet.payload):
            messages.append(bytearray(packet.payload))
        elif messages and b"\r\n\r\n" not in messages[-1]:
            messages[-1].extend(packet.payload)

    requests = []
    for message in messages:
        request = _parse_request_head(bytes(message), fallback_host=flow.key.dst_ip)
        if request is not None:
            requests.append(request)
    return requests


def _parse_request_head(message: bytes, fallback_host: str) -> Optional[HttpRequest]:
    head = message.split(b"\r\n\r\n", 1)[0].decode("latin1", errors="replace")
    lines = head.split("\r\n") if "\r\n" in head else head.split("\n")
    parts = lines[0].split()
    if len(parts) < 2 or parts[0] not in HTTP_METHODS:
        return None

    method, target = parts[0], parts[1]
    host = None
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if sep and name.strip().lower() == "host" and value.strip():
            host = value.strip()
            break

    # absolute-form request targets carry the authority themselves
    absolute = re.match(r'^[A-Za-z][A-Za-z0-9+.-]*://([^/?#]*)(.*)$', target)
    if absolute:
        host = host or absolute.group(1)
        target = absolute.group(2) or "/"

    host = _canonical_host(host or fallback_host)
    return HttpRequest(method=method, host=host, path=target, full_url=host + target)


def _canonical_host(host: str) -> str:
    host = host.strip().lower()
    if host.endswith(":80"):
        host = host[:-3]
    return host


def detect_coordinates(
    url: str,
    lat_keys: frozenset = LAT_KEYS,
    lon_keys: frozenset = LON_KEYS
) -> Optional[Coordinates]:
    """
    Find plaintext latitude/longitude in a URL

    Named query keys are tried first; otherwise two signed decimals with at
    least four fractional digits separated by punctuation are taken as
    (lat, lon).

    Args:
        url: URL text (scheme optional)
        lat_keys: Latitude-like key names (case-insensitive)
        lon_keys: Longitude-like key names (case-insensitive)

    Returns:
        Coordinates, or None when no in-range pair is present
    """
    lat = lon = None
    for match in _KEY_VALUE_RE.finditer(url):
        key, value = match.group(1).lower(), float(match.group(2))
        if lat is None and key in lat_keys and -90.0 <= value <= 90.0:
            lat = value
        elif lon is None and key in lon_keys and -180.0 <= value <= 180.0:
            lon = value
        if lat is not None and lon is not None:
            return Coordinates(lat, lon)

    for match in _BARE_PAIR_RE.finditer(url):
        first, second = float(match.group(1)), float(match.group(2))
        if -90.0 <= first <= 90.0 and -180.0 <= second <= 180.0:
            return Coordinates(first, second)
    return None


def _inet_to_str(address: bytes) -> str:
    if len(address) == 4:
        return socket.inet_ntop(socket.AF_INET, address)
    return socket.inet_ntop(socket.AF_INET6, address)


def _decode_ip(buf: bytes, datalink: int):
    if datalink == dpkt.pcap.DLT_EN10MB:
        return dpkt.ethernet.Ethernet(buf).data
    if datalink == dpkt.pcap.DLT_LINUX_SLL:
        return dpkt.sll.SLL(buf).data
    if datalink in (dpkt.pcap.DLT_RAW, 12, 14, 101, 228, 229):
        version = buf[0] >> 4 if buf else 0
        return dpkt.ip.IP(buf) if version == 4 else dpkt.ip6.IP6(buf)
    if datalink == dpkt.pcap.DLT_NULL:
        return dpkt.loopback.Loopback(buf).data
    raise DataError(f"Unsupported capture link type {datalink}")


def _direction(src: str, sport: int, dst: str, dport: int, device_ips: frozenset) -> Direction:
    if src in device_ips:
        return Direction.UPLINK
    if dst in device_ips:
        return Direction.DOWNLINK
    if dport in SERVER_PORTS and sport not in SERVER_PORTS:
        return Direction.UPLINK
    if sport in SERVER_PORTS and dport not in SERVER_PORTS:
        return Direction.DOWNLINK
    return Direction.UPLINK if dport <= sport else Direction.DOWNLINK


def read_pcap(
    path: Path,
    device_ips: Iterable[str] = (),
    diagnostics: Optional[CaptureDiagnostics] = None
) -> Iterator[PacketMeta]:
    """
    Yield TCP packet metadata from a classic libpcap file

    Direction is uplink when the source is a device address; without device
    addresses the side on a well-known server port is the server.

    Args:
        path: Capture file (either byte order)
        device_ips: Addresses of the monitored device
        diagnostics: Optional tally of skipped frames

    Yields:
        PacketMeta in file order
    """
    if diagnostics is None:
        diagnostics = CaptureDiagnostics()
    devices = frozenset(device_ips)

    with open(path, "rb") as f:
        try:
            reader = dpkt.pcap.Reader(f)
        except (ValueError, dpkt.dpkt.NeedData) as e:
            raise DataError(f"{path}: not a libpcap capture ({e})")
        datalink = reader.datalink()

        for timestamp, buf in reader:
            diagnostics.packets_read += 1
            try:
                ip = _decode_ip(buf, datalink)
            except (dpkt.dpkt.NeedData, dpkt.dpkt.UnpackError, IndexError) as e:
                diagnostics.skip("undecodable")
                logger.debug(f"{path}: undecodable frame at {timestamp}: {e}")
                continue
            if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
                diagnostics.skip("non_ip")
                continue
            tcp = ip.data
            if not isinstance(tcp, dpkt.tcp.TCP):
                diagnostics.skip("non_tcp")
                continue

            src, dst = _inet_to_str(ip.src), _inet_to_str(ip.dst)
            direction = _direction(src, tcp.sport, dst, tcp.dport, devices)
            payload = bytes(tcp.data)
            yield PacketMeta(
                timestamp=float(timestamp),
                direction=direction,
                tcp_payload_len=len(payload),
                total_len=max(len(buf), len(payload)),
                has_http_layer=is_http_request_payload(payload) or payload.startswith(b"HTTP/"),
                four_tuple=FourTuple(src, tcp.sport, dst, tcp.dport),
                payload=payload if direction == Direction.UPLINK else b"",
            )


def sessionize_capture(
    path: Path,
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    device_ips: Iterable[str] = ()
) -> Tuple[List[HttpFlow], CaptureDiagnostics]:
    """Read one capture file and sessionize it; the unit of per-file parallelism"""
    diagnostics = CaptureDiagnostics()
    flows = sessionize(read_pcap(path, device_ips, diagnostics), idle_timeout, diagnostics)
    logger.info(f"{path}: {diagnostics.packets_read} frames -> {len(flows)} flows")
    return flows, diagnostics


SIDECAR_TIME_TOLERANCE = 1e-3


def load_sidecar(path: Path) -> List[Dict[str, Any]]:
    """Sidecar records from a JSONL file (header record optional)"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Sidecar file not found: {path}")
    return read_records(path)


def apply_sidecar(flows: List[HttpFlow], records: Iterable[Dict[str, Any]]) -> List[HttpFlow]:
    """
    Attach instance ids and taint verdicts from sidecar records

    A record names a flow either by flow_id or by its uplink 4-tuple
    (src_ip, src_port, dst_ip, dst_port). A 4-tuple record with a
    first_timestamp applies to the session starting at that time; without
    one it applies to every session of that key.

    Args:
        flows: Sessionized flows
        records: Sidecar records

    Returns:
        Flows with annotations applied
    """
    by_id: Dict[str, Dict[str, Any]] = {}
    by_key: Dict[str, List[Dict[str, Any]]] = {}
    for record in records:
        if "flow_id" in record:
            by_id[record["flow_id"]] = record
            continue
        try:
            key = FourTuple(record["src_ip"], int(record["src_port"]), record["dst_ip"], int(record["dst_port"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Sidecar record lacks a flow_id or 4-tuple: {record} ({e})")
        by_key.setdefault(str(key), []).append(record)

    def lookup(flow: HttpFlow) -> Optional[Dict[str, Any]]:
        if flow.flow_id in by_id:
            return by_id[flow.flow_id]
        for record in by_key.get(str(flow.key), ()):
            started = record.get("first_timestamp")
            if started is None or abs(float(started) - flow.first_timestamp) <= SIDECAR_TIME_TOLERANCE:
                return record
        return None

    annotated = []
    for flow in flows:
        record = lookup(flow)
        if record is None:
            annotated.append(flow)
            continue
        taint = record.get("taint_location")
        annotated.append(replace(
            flow,
            source_instance_id=record.get("instance_id", flow.source_instance_id),
            taint_location=None if taint is None else bool(taint),
        ))
    missing = len(flows) - sum(1 for f in flows if lookup(f) is not None)
    if missing:
        logger.info(f"Sidecar left {missing} of {len(flows)} flows unannotated")
    return annotated


def flow_to_record(flow: HttpFlow) -> Dict[str, Any]:
    """Serialize a flow (packet metadata and parsed requests, no payloads)"""
    return {
        "flow_id": flow.flow_id,
        "key": list(flow.key),
        "session_index": flow.session_index,
        "source_instance_id": flow.source_instance_id,
        "taint_location": flow.taint_location,
        "packets": [
            [p.timestamp, p.direction.value, p.tcp_payload_len, p.total_len, int(p.has_http_layer)]
            for p in flow.packets
        ],
        "requests": [
            {"method": r.method, "host": r.host, "path": r.path, "full_url": r.full_url}
            for r in flow.requests
        ],
    }


def flow_from_record(record: Dict[str, Any]) -> HttpFlow:
    """Inverse of flow_to_record"""
    try:
        src_ip, src_port, dst_ip, dst_port = record["key"]
        key = FourTuple(src_ip, int(src_port), dst_ip, int(dst_port))
        packets = []
        for timestamp, direction, payload_len, total_len, has_http in record["packets"]:
            direction = Direction(direction)
            packets.append(PacketMeta(
                timestamp=float(timestamp),
                direction=direction,
                tcp_payload_len=int(payload_len),
                total_len=int(total_len),
                has_http_layer=bool(has_http),
                four_tuple=key if direction == Direction.UPLINK else key.reversed(),
            ))
        requests = tuple(HttpRequest(**r) for r in record.get("requests", []))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed flow record {record.get('flow_id')!r}: {e}")
    if not packets:
        raise DataError(f"Flow record {record.get('flow_id')!r} has no packets")
    return HttpFlow(
        key=key,
        packets=tuple(packets),
        requests=requests,
        session_index=int(record.get("session_index", 0)),
        source_instance_id=record.get("source_instance_id"),
        taint_location=record.get("taint_location"),
    )
