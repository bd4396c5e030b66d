"""SLD hashing and per-bucket query frequencies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .capture import BootTrace, DnsEvent

HASH_TAG = "fnv1a64"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class EmptyName(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyVector:
    h: int
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.h:
            raise ValueError(f"expected {self.h} values, got {len(self.values)}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def extract_sld(qname: str) -> str:
    """Second label from the right ("time1.google.com" -> "google").

    Single-label names are returned unchanged. No public-suffix handling.
    """
    if not qname:
        raise EmptyName("empty query name")
    labels = qname.split(".")
    return labels[-2] if len(labels) >= 2 else labels[0]


def bucket(sld: str, h: int) -> int:
    if h < 1:
        raise ValueError(f"hash resolution must be >= 1, got {h}")
    return fnv1a64(sld.encode("utf-8")) % h


def _check_params(h: int, t_delta: float) -> None:
    if h < 1:
        raise ValueError(f"hash resolution must be >= 1, got {h}")
    if not t_delta > 0:
        raise ValueError(f"time delta must be positive, got {t_delta}")


def window(trace: BootTrace, t_delta: float) -> list[DnsEvent]:
    """Events with dhcp_t < t <= dhcp_t + t_delta, in trace order."""
    lo, hi = trace.dhcp_t, trace.dhcp_t + t_delta
    return [ev for ev in trace.events if lo < ev.t <= hi]


def bucket_counts(events: Sequence[DnsEvent], h: int) -> np.ndarray:
    counts = np.zeros(h, dtype=np.int64)
    for ev in events:
        counts[bucket(extract_sld(ev.qname.lower()), h)] += 1
    return counts


def featurize_array(trace: BootTrace, h: int, t_delta: float) -> np.ndarray:
    _check_params(h, t_delta)
    return bucket_counts(window(trace, t_delta), h) / float(t_delta)


def featurize(trace: BootTrace, h: int, t_delta: float) -> FrequencyVector:
    """Queries per second for each SLD bucket over the post-anchor window."""
    return FrequencyVector(h, tuple(featurize_array(trace, h, t_delta).tolist()))


def featurize_many(traces: Sequence[BootTrace], h: int, t_delta: float) -> np.ndarray:
    """Stack feature rows for many traces into an (n, h) array."""
    _check_params(h, t_delta)
    out = np.zeros((len(traces), h), dtype=np.float64)
    cache: dict[str, int] = {}
    for i, tr in enumerate(traces):
        for ev in window(tr, t_delta):
            sld = extract_sld(ev.qname.lower())
            b = cache.get(sld)
            if b is None:
                b = cache[sld] = bucket(sld, h)
            out[i, b] += 1
    return out / float(t_delta)
