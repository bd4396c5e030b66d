"""Synthetic boot traces from parameterised device profiles.

Each boot emits a fixed burst of queries at uniformly jittered times in
(0, 2] s after the DHCP anchor, plus independent Poisson query streams
over (0, 60] s.  Generation is fully determined by the seed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .capture import BootTrace, DnsEvent
from .featurize import FrequencyVector, bucket, fnv1a64

BURST_WINDOW = 2.0
HORIZON = 60.0
DAY = 86400.0
BOOT_SPACING = 120.0
SUBDOMAINS = ("api", "time1", "time2", "cdn", "mqtt", "devs", "fw")


@dataclass(frozen=True)
class DeviceProfile:
    product: str
    manufacturer: str
    burst: tuple[tuple[str, int], ...] = ()
    steady: tuple[tuple[str, float], ...] = ()
    jitter_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "burst", tuple((s, int(c)) for s, c in self.burst))
        object.__setattr__(self, "steady", tuple((s, float(r)) for s, r in self.steady))
        if not self.burst and not self.steady:
            raise ValueError(f"profile {self.product!r} queries no SLD")
        if any(c < 0 for _, c in self.burst) or any(r < 0 for _, r in self.steady):
            raise ValueError(f"profile {self.product!r} has a negative count or rate")

    @property
    def slds(self) -> set[str]:
        return {s for s, _ in self.burst} | {s for s, _ in self.steady}

    @property
    def device_id(self) -> str:
        # locally administered MAC derived from the product name
        x = fnv1a64(self.product.encode("utf-8"))
        return "02:" + ":".join(f"{(x >> s) & 0xFF:02x}" for s in (32, 24, 16, 8, 0))

    def to_dict(self) -> dict:
        return {"product": self.product, "manufacturer": self.manufacturer,
                "burst": [list(b) for b in self.burst], "steady": [list(s) for s in self.steady],
                "jitter_seed": self.jitter_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(d["product"], d["manufacturer"], tuple(map(tuple, d.get("burst", ()))),
                   tuple(map(tuple, d.get("steady", ()))), int(d.get("jitter_seed", 0)))


@dataclass(frozen=True)
class Drift:
    """From day index `day` on, the listed profiles replace their namesakes."""

    day: int
    profiles: tuple[DeviceProfile, ...]


@dataclass(frozen=True)
class Corpus:
    profiles: tuple[DeviceProfile, ...]
    boots_per_day: int = 100
    days: int = 1
    drift: Drift | None = None

    def __post_init__(self):
        names = [p.product for p in self.profiles]
        if len(set(names)) != len(names):
            raise ValueError("product names must be unique within a corpus")

    def manufacturers(self) -> dict[str, str]:
        return {p.product: p.manufacturer for p in self.profiles}

    def profiles_on(self, day: int) -> tuple[DeviceProfile, ...]:
        if self.drift is None or day < self.drift.day:
            return self.profiles
        swap = {p.product: p for p in self.drift.profiles}
        return tuple(swap.get(p.product, p) for p in self.profiles)

    def to_dict(self) -> dict:
        d = {"boots_per_day": self.boots_per_day, "days": self.days,
             "profiles": [p.to_dict() for p in self.profiles]}
        if self.drift is not None:
            d["drift"] = {"day": self.drift.day,
                          "profiles": [p.to_dict() for p in self.drift.profiles]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Corpus":
        drift = None
        if d.get("drift"):
            drift = Drift(int(d["drift"]["day"]),
                          tuple(DeviceProfile.from_dict(p) for p in d["drift"]["profiles"]))
        return cls(tuple(DeviceProfile.from_dict(p) for p in d["profiles"]),
                   int(d.get("boots_per_day", 100)), int(d.get("days", 1)), drift)


def _boot_times(rng: np.random.Generator, profile: DeviceProfile) -> list[tuple[float, str]]:
    events = []
    for sld, count in profile.burst:
        # uniform on (0, BURST_WINDOW]
        for off in BURST_WINDOW - rng.uniform(0.0, BURST_WINDOW, size=count):
            events.append((float(off), sld))
    for sld, rate in profile.steady:
        if rate <= 0:
            continue
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t > HORIZON:
                break
            events.append((t, sld))
    return events


def generate_boot(profile: DeviceProfile, dhcp_t: float, rng: np.random.Generator,
                  boot_id: str = "") -> BootTrace:
    evs = _boot_times(rng, profile)
    subs = rng.integers(0, len(SUBDOMAINS), size=len(evs))
    out = []
    dev = profile.device_id
    for (off, sld), s in zip(evs, subs):
        t = dhcp_t + off
        if t <= dhcp_t:
            t = float(np.nextafter(dhcp_t, np.inf))
        out.append(DnsEvent(dev, f"{SUBDOMAINS[s]}.{sld}.com", t))
    out.sort(key=lambda e: e.t)
    return BootTrace(label=profile.product, dhcp_t=dhcp_t, events=tuple(out),
                     boot_id=boot_id, device_id=dev)


def generate(corpus: Corpus, seed: int) -> list[BootTrace]:
    """Boot traces for every (day, profile, boot); date = 1970-01-01 + day.

    Each trace draws from its own generator keyed on (seed, jitter_seed, day,
    boot), so output does not depend on profile order or parallel layout.
    """
    spacing = min(BOOT_SPACING, DAY / max(corpus.boots_per_day, 1))
    traces = []
    for day in range(corpus.days):
        for profile in corpus.profiles_on(day):
            for k in range(corpus.boots_per_day):
                rng = np.random.default_rng([seed, profile.jitter_seed, day, k])
                traces.append(generate_boot(profile, day * DAY + k * spacing, rng,
                                            boot_id=f"{profile.product}/d{day}/b{k}"))
    return traces


def expected_frequency(profile: DeviceProfile, h: int, t_delta: float) -> FrequencyVector:
    """Mean featurize() output for this profile over many boots."""
    vals = np.zeros(h)
    burst_share = min(t_delta, BURST_WINDOW) / BURST_WINDOW
    for sld, count in profile.burst:
        vals[bucket(sld, h)] += count * burst_share
    for sld, rate in profile.steady:
        vals[bucket(sld, h)] += rate * min(t_delta, HORIZON)
    return FrequencyVector(h, tuple((vals / t_delta).tolist()))


# --------------------------------------------------------------------------
# shipped and constructed corpora


def load_corpus(source: str | Path) -> Corpus:
    """A named built-in corpus ("default", "rate", "distinct") or a JSON file."""
    if source == "default":
        text = resources.files("iotdns").joinpath("data/default_corpus.json").read_text("utf-8")
        return Corpus.from_dict(json.loads(text))
    if source == "rate":
        return rate_corpus()
    if source == "distinct":
        return distinct_corpus()
    return Corpus.from_dict(json.loads(Path(source).read_text("utf-8")))


def default_corpus(boots_per_day: int = 100, days: int = 1) -> Corpus:
    return replace(load_corpus("default"), boots_per_day=boots_per_day, days=days)


def _pick_names(stem: str, n: int, per_device: int, h: int = 32) -> list[tuple[str, ...]]:
    """Deterministic vendor SLD names whose bucket signatures at `h` are unique.

    No chosen name lands in the bucket of the shared "ntp" stream.
    """
    ntp = bucket("ntp", h)
    sigs: set[frozenset[int]] = set()
    out = []
    for i in range(n):
        names: list[str] = []
        for j in itertools.count():
            name = f"{stem}{i:02d}{chr(97 + j % 26)}{j // 26 or ''}"
            b = bucket(name, h)
            if b == ntp or b in {bucket(x, h) for x in names}:
                continue
            if len(names) + 1 == per_device:
                sig = frozenset(bucket(x, h) for x in names) | {b}
                if sig in sigs:
                    continue
                sigs.add(sig)
            names.append(name)
            if len(names) == per_device:
                break
        out.append(tuple(names))
    return out


def rate_corpus(n: int = 10, boots_per_day: int = 100, days: int = 1) -> Corpus:
    """Devices told apart only by their steady streams; no burst evidence.

    Every device shares an NTP-style stream and owns one vendor stream, so
    identification evidence arrives at Poisson pace during the window.
    """
    profiles = []
    for i, (sld,) in enumerate(_pick_names("vendor", n, 1)):
        rate = 0.3 + 0.3 * i / max(n - 1, 1)
        profiles.append(DeviceProfile(
            product=f"rate-dev-{i:02d}", manufacturer=f"rate-vendor-{i:02d}",
            steady=(("ntp", 0.2), (sld, round(rate, 4))),
            jitter_seed=1000 + i))
    return Corpus(tuple(profiles), boots_per_day, days)


def distinct_corpus(n: int = 20, boots_per_day: int = 100, days: int = 1) -> Corpus:
    """Devices with their own vendor SLD pair and a boot burst: separable at h=32."""
    profiles = []
    for i, (a, b) in enumerate(_pick_names("iot", n, 2)):
        profiles.append(DeviceProfile(
            product=f"distinct-dev-{i:02d}", manufacturer=f"distinct-vendor-{i:02d}",
            burst=((a, 2), ("ntp", 1)),
            steady=((a, 0.15 + 0.01 * (i % 5)), (b, 0.1)),
            jitter_seed=2000 + i))
    return Corpus(tuple(profiles), boots_per_day, days)


def drifted(corpus: Corpus, day: int, fraction: float = 0.5) -> Corpus:
    """Copy of `corpus` where a fraction of devices switch to new SLDs from `day` on.

    Models a firmware update that moves the device to a new backend.
    """
    k = max(1, int(round(fraction * len(corpus.profiles))))
    moved = []
    for p in corpus.profiles[:k]:
        tag = "v2" + "".join(ch for ch in p.product.lower() if ch.isalnum())
        moved.append(replace(
            p,
            burst=tuple((f"{tag}{j}", c) for j, (_, c) in enumerate(p.burst)),
            steady=tuple((f"{tag}s{j}", r) for j, (_, r) in enumerate(p.steady))))
    return replace(corpus, drift=Drift(day, tuple(moved)))
