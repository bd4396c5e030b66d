"""Turn packet captures and JSONL event logs into boot traces.

A boot trace is anchored on the first DHCP discover a device sends and holds
every outbound DNS query that device issued afterwards.  Only Ethernet,
IPv4 and UDP are decoded; anything else is ignored.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

__all__ = [
    "BootTrace",
    "CaptureError",
    "DnsEvent",
    "MalformedFrame",
    "NoDhcpAnchor",
    "ParseStats",
    "RawCapture",
    "SchemaError",
    "load_traces",
    "parse_capture",
    "read_jsonl",
    "read_pcap",
    "save_traces",
    "write_jsonl",
]

PCAP_MAGIC_USEC = 0xA1B2C3D4
PCAP_MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
IPPROTO_UDP = 17

DHCP_SERVER_PORT = 67
DNS_PORT = 53
DHCP_MAGIC_COOKIE = b"\x63\x82\x53\x63"
DHCP_OPT_MESSAGE_TYPE = 53
DHCPDISCOVER = 1


class CaptureError(Exception):
    pass


class NoDhcpAnchor(CaptureError):
    pass


class MalformedFrame(CaptureError):
    pass


class SchemaError(CaptureError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DnsEvent:
    device_id: str
    qname: str
    t: float

    def __post_init__(self):
        if not self.qname:
            raise ValueError("qname must be non-empty")
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"bad timestamp {self.t!r}")


@dataclass(frozen=True)
class BootTrace:
    """One power-cycle experiment: DHCP anchor time plus the queries after it."""

    label: str
    dhcp_t: float
    events: tuple[DnsEvent, ...] = ()
    boot_id: str = ""
    device_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        prev = -math.inf
        for ev in self.events:
            if ev.t <= self.dhcp_t:
                raise ValueError(f"event at {ev.t} does not follow anchor {self.dhcp_t}")
            if ev.t < prev:
                raise ValueError("events must be sorted by time")
            if self.device_id and ev.device_id != self.device_id:
                raise ValueError("events must share the trace's device_id")
            prev = ev.t

    @property
    def date(self) -> _dt.date:
        """UTC calendar date of the anchor."""
        return _dt.datetime.fromtimestamp(self.dhcp_t, _dt.timezone.utc).date()


@dataclass
class RawCapture:
    frames: list[tuple[float, bytes]]
    linktype: int = LINKTYPE_ETHERNET


@dataclass
class ParseStats:
    frames: int = 0
    skipped: int = 0
    dhcp_discovers: int = 0
    dns_queries: int = 0


# --------------------------------------------------------------------------
# pcap container


def read_pcap(source: str | Path | bytes | IO[bytes]) -> RawCapture:
    """Read a classic pcap file (usec or nsec, either byte order)."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = source.read()

    if len(data) < 24:
        raise CaptureError("truncated pcap global header")
    for endian in "<>":
        (magic,) = struct.unpack(endian + "I", data[:4])
        if magic in (PCAP_MAGIC_USEC, PCAP_MAGIC_NSEC):
            break
    else:
        raise CaptureError(f"not a pcap file (magic {data[:4].hex()})")
    denom = 1e9 if magic == PCAP_MAGIC_NSEC else 1e6
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", data[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise CaptureError(f"unsupported linktype {linktype}")

    frames = []
    off = 24
    rec = struct.Struct(endian + "IIII")
    while off + rec.size <= len(data):
        sec, sub, incl_len, _ = rec.unpack_from(data, off)
        off += rec.size
        payload = data[off:off + incl_len]
        if len(payload) < incl_len:
            break  # truncated tail record
        off += incl_len
        frames.append((sec + sub / denom, payload))
    return RawCapture(frames=frames, linktype=linktype)


# --------------------------------------------------------------------------
# frame decoding


def _mac(b: bytes) -> str:
    return ":".join(f"{x:02x}" for x in b)


def _udp_payload(frame: bytes) -> tuple[str, int, bytes] | None:
    """Return (src_mac, dst_port, payload) for an IPv4/UDP frame, else None.

    Raises MalformedFrame on frames that claim to be IPv4/UDP but are broken.
    """
    if len(frame) < ETH_HEADER_LEN:
        raise MalformedFrame("short ethernet header")
    src = _mac(frame[6:12])
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    off = ETH_HEADER_LEN
    if ethertype == ETHERTYPE_VLAN:
        if len(frame) < off + 4:
            raise MalformedFrame("short vlan tag")
        (ethertype,) = struct.unpack_from("!H", frame, off + 2)
        off += 4
    if ethertype != ETHERTYPE_IPV4:
        return None

    if len(frame) < off + 20:
        raise MalformedFrame("short ipv4 header")
    ver_ihl = frame[off]
    if ver_ihl >> 4 != 4:
        raise MalformedFrame("ipv4 ethertype with wrong version")
    ihl = (ver_ihl & 0x0F) * 4
    total_len, = struct.unpack_from("!H", frame, off + 2)
    flags_frag, = struct.unpack_from("!H", frame, off + 6)
    proto = frame[off + 9]
    if ihl < 20 or total_len < ihl or len(frame) < off + total_len:
        raise MalformedFrame("inconsistent ipv4 lengths")
    if proto != IPPROTO_UDP:
        return None
    if flags_frag & 0x1FFF:
        return None  # non-first fragment carries no UDP header

    udp = off + ihl
    end = off + total_len
    if end - udp < 8:
        raise MalformedFrame("short udp header")
    _, dport, ulen = struct.unpack_from("!HHH", frame, udp)
    if ulen < 8 or udp + ulen > end:
        raise MalformedFrame("bad udp length")
    return src, dport, frame[udp + 8:udp + ulen]


def _is_dhcp_discover(payload: bytes) -> bool:
    if len(payload) < 240 or payload[0] != 1:
        return False
    if payload[236:240] != DHCP_MAGIC_COOKIE:
        raise MalformedFrame("missing dhcp magic cookie")
    i = 240
    while i < len(payload):
        code = payload[i]
        if code == 255:
            break
        if code == 0:
            i += 1
            continue
        if i + 1 >= len(payload):
            raise MalformedFrame("truncated dhcp option")
        length = payload[i + 1]
        value = payload[i + 2:i + 2 + length]
        if len(value) < length:
            raise MalformedFrame("truncated dhcp option")
        if code == DHCP_OPT_MESSAGE_TYPE:
            return length == 1 and value[0] == DHCPDISCOVER
        i += 2 + length
    return False


def _read_name(msg: bytes, off: int) -> str:
    labels = []
    seen = set()
    while True:
        if off >= len(msg):
            raise MalformedFrame("qname runs past message")
        length = msg[off]
        if length & 0xC0 == 0xC0:
            if off + 1 >= len(msg):
                raise MalformedFrame("truncated compression pointer")
            ptr = ((length & 0x3F) << 8) | msg[off + 1]
            if ptr in seen:
                raise MalformedFrame("compression loop")
            seen.add(ptr)
            off = ptr
            continue
        if length & 0xC0:
            raise MalformedFrame("reserved label type")
        if length == 0:
            break
        label = msg[off + 1:off + 1 + length]
        if len(label) < length:
            raise MalformedFrame("truncated label")
        labels.append(label.decode("ascii", errors="replace"))
        off += 1 + length
    return ".".join(labels).lower()


def _dns_query_name(payload: bytes) -> str | None:
    if len(payload) < 12:
        raise MalformedFrame("short dns header")
    flags, qdcount = struct.unpack_from("!HH", payload, 2)
    if flags & 0x8000 or qdcount == 0:
        return None
    name = _read_name(payload, 12)
    return name or None


def parse_capture(raw: RawCapture, device_id: str, label: str | None = None,
                  boot_id: str = "", stats: ParseStats | None = None) -> BootTrace:
    """Extract the boot trace of `device_id` (its MAC address) from a capture.

    The anchor is the first DHCP discover sent by the device; events are its
    DNS queries strictly after the anchor, in capture order.
    """
    stats = stats if stats is not None else ParseStats()
    mac = device_id.lower()
    dhcp_t = None
    queries = []
    for t, frame in raw.frames:
        stats.frames += 1
        try:
            udp = _udp_payload(frame)
            if udp is None:
                continue
            src, dport, payload = udp
            if src != mac:
                continue
            if dport == DHCP_SERVER_PORT:
                if _is_dhcp_discover(payload):
                    stats.dhcp_discovers += 1
                    if dhcp_t is None:
                        dhcp_t = t
            elif dport == DNS_PORT:
                qname = _dns_query_name(payload)
                if qname:
                    stats.dns_queries += 1
                    queries.append((t, qname))
        except (MalformedFrame, struct.error, IndexError):
            stats.skipped += 1

    if dhcp_t is None:
        raise NoDhcpAnchor(f"no DHCP discover from {device_id}")
    events = [DnsEvent(device_id, q, t) for t, q in queries if t > dhcp_t]
    # capture order is kept; a stable sort only repairs clock jitter
    events.sort(key=lambda e: e.t)
    return BootTrace(label=label if label is not None else device_id, dhcp_t=dhcp_t,
                     events=tuple(events), boot_id=boot_id, device_id=device_id)


# --------------------------------------------------------------------------
# JSONL interchange


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def trace_records(trace: BootTrace) -> Iterator[dict]:
    yield {"kind": "dhcp", "label": trace.label, "boot_id": trace.boot_id,
           "device_id": trace.device_id, "t": float(trace.dhcp_t)}
    for ev in trace.events:
        yield {"kind": "dns", "label": trace.label, "boot_id": trace.boot_id,
               "device_id": ev.device_id, "qname": ev.qname, "t": float(ev.t)}


def write_jsonl(traces: Iterable[BootTrace], fh: IO[str] | None = None) -> list[str]:
    """Serialise traces as JSONL lines (one anchor record, then its events).

    Lines are returned and, when `fh` is given, also written to it.
    """
    lines = [_dumps(rec) + "\n" for tr in traces for rec in trace_records(tr)]
    if fh is not None:
        fh.writelines(lines)
    return lines


_STR_FIELDS = ("label", "boot_id", "device_id")


def parse_record(line: str, lineno: int) -> dict:
    """Validate one JSONL line against the event schema."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise SchemaError(lineno, "record is not an object")
    kind = rec.get("kind")
    if kind not in ("dhcp", "dns"):
        raise SchemaError(lineno, f"unknown kind {kind!r}")
    for key in _STR_FIELDS:
        if not isinstance(rec.get(key), str):
            raise SchemaError(lineno, f"missing or non-string {key!r}")
    t = rec.get("t")
    if isinstance(t, bool) or not isinstance(t, (int, float)):
        raise SchemaError(lineno, "missing or non-numeric 't'")
    if not math.isfinite(t) or t < 0:
        raise SchemaError(lineno, f"bad timestamp {t!r}")
    rec["t"] = float(t)
    if kind == "dns":
        qname = rec.get("qname")
        if not isinstance(qname, str) or not qname.strip("."):
            raise SchemaError(lineno, "missing or empty 'qname'")
        rec["qname"] = qname.lower().rstrip(".")
    return rec


def read_jsonl(lines: Iterable[str]) -> list[BootTrace]:
    """Group JSONL records into traces keyed by (label, boot_id).

    Traces come back in order of first appearance with events sorted by time.
    """
    groups: dict[tuple[str, str], dict] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = parse_record(line, lineno)
        key = (rec["label"], rec["boot_id"])
        g = groups.setdefault(key, {"anchor": None, "events": [], "first": lineno})
        if rec["kind"] == "dhcp":
            if g["anchor"] is not None:
                raise SchemaError(lineno, f"duplicate dhcp anchor for boot {key[1]!r}")
            g["anchor"] = (rec, lineno)
        else:
            g["events"].append((rec, lineno))

    traces = []
    for (label, boot_id), g in groups.items():
        if g["anchor"] is None:
            raise SchemaError(g["first"], f"boot {boot_id!r} has no dhcp anchor")
        anchor, _ = g["anchor"]
        events = []
        for rec, lineno in g["events"]:
            if rec["device_id"] != anchor["device_id"]:
                raise SchemaError(lineno, "event device_id differs from its anchor")
            if rec["t"] <= anchor["t"]:
                raise SchemaError(lineno, "event does not follow its dhcp anchor")
            events.append(DnsEvent(rec["device_id"], rec["qname"], rec["t"]))
        events.sort(key=lambda e: e.t)
        traces.append(BootTrace(label=label, dhcp_t=anchor["t"], events=tuple(events),
                                boot_id=boot_id, device_id=anchor["device_id"]))
    return traces


def load_traces(path: str | Path) -> list[BootTrace]:
    with open(path, encoding="utf-8") as fh:
        return read_jsonl(fh)


def save_traces(traces: Iterable[BootTrace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_jsonl(traces, fh)
