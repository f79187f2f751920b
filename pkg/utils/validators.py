"""
Input validation utilities
"""
import math
import re
from pathlib import Path
from typing import Any, Iterable, Optional


HOSTNAME_RE = re.compile(r'^[a-z0-9]([a-z0-9-]*[a-z0-9])?(\.[a-z0-9]([a-z0-9-]*[a-z0-9])?)*$')


def validate_packet_meta(packet: Any) -> tuple[bool, Optional[str]]:
    """
    Validate a packet metadata record before it enters sessionization

    Args:
        packet: PacketMeta-like object

    Returns:
        Tuple of (is_valid, error_message)
    """
    try:
        timestamp = float(packet.timestamp)
        payload_len = int(packet.tcp_payload_len)
        total_len = int(packet.total_len)
        four_tuple = packet.four_tuple
        direction = packet.direction
    except (AttributeError, TypeError, ValueError) as e:
        return False, f"Malformed packet record: {e}"

    if not math.isfinite(timestamp) or timestamp < 0:
        return False, "Timestamp must be finite and non-negative"

    if payload_len < 0 or total_len < payload_len:
        return False, "Lengths must satisfy total_len >= tcp_payload_len >= 0"

    if getattr(direction, "value", direction) not in ("uplink", "downlink"):
        return False, f"Unknown direction: {direction!r}"

    if four_tuple is None or len(tuple(four_tuple)) != 4:
        return False, "Packet has no 4-tuple"

    return True, None


def validate_hostname(hostname: str) -> tuple[bool, Optional[str]]:
    """
    Validate a hostname list entry (lowercase, no scheme, no path)

    Args:
        hostname: Hostname suffix

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not hostname:
        return False, "Hostname cannot be empty"

    if "://" in hostname or "/" in hostname:
        return False, f"Hostname must not contain a scheme or path: {hostname}"

    if hostname != hostname.lower():
        return False, f"Hostname must be lowercase: {hostname}"

    if not HOSTNAME_RE.match(hostname):
        return False, f"Invalid hostname: {hostname}"

    return True, None


def validate_instance_id(instance_id: str) -> tuple[bool, Optional[str]]:
    """
    Validate instance ID format

    Args:
        instance_id: Running-instance identifier

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not instance_id:
        return False, "Instance ID cannot be empty"

    if not re.match(r'^[a-zA-Z0-9_.:-]+$', instance_id):
        return False, f"Instance ID contains invalid characters: {instance_id}"

    if len(instance_id) > 200:
        return False, "Instance ID is too long (maximum 200 characters)"

    return True, None


def validate_paths_exist(paths: Iterable[Optional[Path]]) -> tuple[bool, Optional[str]]:
    """
    Check that every configured input path exists

    Args:
        paths: Paths to check; None entries are skipped

    Returns:
        Tuple of (is_valid, error_message)
    """
    missing = [str(p) for p in paths if p is not None and not Path(p).exists()]
    if missing:
        return False, f"Missing input path(s): {', '.join(missing)}"
    return True, None
