"""Labelled feature splits: minmax scaling, one-hot labels, stratified 80:20 splits."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .capture import BootTrace
from .featurize import featurize_many

PRODUCT = "product"
MANUFACTURER = "manufacturer"
GRANULARITIES = (PRODUCT, MANUFACTURER)

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


class DatasetError(Exception):
    pass


class UnknownLabel(DatasetError, KeyError):
    pass


class EmptyTrainingSet(DatasetError):
    pass


class DimensionMismatch(DatasetError, ValueError):
    pass


class InsufficientClassData(DatasetError):
    def __init__(self, name: str, count: int):
        super().__init__(f"class {name!r} has {count} training trace(s), need at least 2")
        self.name = name
        self.count = count


@lru_cache(maxsize=1)
def default_manufacturers() -> dict[str, str]:
    text = resources.files("iotdns").joinpath("data/manufacturers.json").read_text("utf-8")
    return json.loads(text)


def manufacturer_of(product_label: str, table: Mapping[str, str] | None = None) -> str:
    table = default_manufacturers() if table is None else table
    try:
        return table[product_label]
    except KeyError:
        raise UnknownLabel(product_label) from None


@dataclass(frozen=True)
class LabelMap:
    granularity: str
    classes: tuple[str, ...]

    def __post_init__(self):
        if list(self.classes) != sorted(set(self.classes)):
            raise ValueError("classes must be unique and sorted")

    @classmethod
    def from_names(cls, granularity: str, names) -> "LabelMap":
        return cls(granularity, tuple(sorted(set(names))))

    @property
    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}

    def __len__(self):
        return len(self.classes)


@dataclass
class ScalerBounds:
    mins: np.ndarray
    maxs: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, ScalerBounds)
                and np.array_equal(self.mins, other.mins)
                and np.array_equal(self.maxs, other.maxs))


def fit_scaler(train_vectors) -> ScalerBounds:
    X = np.asarray(train_vectors, dtype=np.float64)
    if X.size == 0:
        raise EmptyTrainingSet("cannot fit a scaler on zero vectors")
    if X.ndim != 2:
        raise DimensionMismatch("training vectors must share one length")
    return ScalerBounds(X.min(axis=0), X.max(axis=0))


def apply_scaler(v, b: ScalerBounds) -> np.ndarray:
    """Minmax-scale rows of `v` into [0, 1]; constant columns map to 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != b.mins.shape[0]:
        raise DimensionMismatch(f"vector has {v.shape[-1]} features, scaler {b.mins.shape[0]}")
    span = b.maxs - b.mins
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (v - b.mins) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass
class Split:
    X: np.ndarray          # scaled features, (n, h)
    y: np.ndarray          # class indices, (n,)
    boot_ids: list[str]
    dates: list[_dt.date]
    num_classes: int

    def __len__(self):
        return len(self.y)

    @property
    def Y(self) -> np.ndarray:
        return one_hot(self.y, self.num_classes)

    def subset(self, mask) -> "Split":
        idx = np.flatnonzero(mask)
        return Split(self.X[idx], self.y[idx], [self.boot_ids[i] for i in idx],
                     [self.dates[i] for i in idx], self.num_classes)


@dataclass
class SplitDataset:
    train: Split
    val: Split
    test: Split

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((len(y), num_classes), dtype=np.float64)
    out[np.arange(len(y)), y] = 1.0
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def class_name(trace: BootTrace, granularity: str,
               manufacturers: Mapping[str, str] | None = None) -> str:
    if granularity == PRODUCT:
        return trace.label
    if granularity == MANUFACTURER:
        return manufacturer_of(trace.label, manufacturers)
    raise ValueError(f"unknown granularity {granularity!r}")


def build_splits(traces: Sequence[BootTrace], h: int, t_delta: float, granularity: str,
                 seed: int = 0, date_filter: tuple[_dt.date, _dt.date] | None = None,
                 manufacturers: Mapping[str, str] | None = None):
    """Featurize, split and scale a trace corpus.

    Without `date_filter` every class is split 80:20 into train+val and test,
    then train+val is split 80:20 again, each part drawn by a seeded shuffle.
    With an inclusive ``(first, last)`` date range, train and val come only
    from traces dated inside it and test holds every trace outside it.

    Returns ``(SplitDataset, LabelMap, ScalerBounds)``.
    """
    names = [class_name(tr, granularity, manufacturers) for tr in traces]
    labels = LabelMap.from_names(granularity, names)
    index = labels.index
    y_all = np.array([index[n] for n in names], dtype=np.int64)

    if date_filter is not None:
        lo, hi = date_filter
        in_range = np.array([lo <= tr.date <= hi for tr in traces], dtype=bool)
    else:
        in_range = np.ones(len(traces), dtype=bool)

    rng = np.random.default_rng(seed)
    part = np.full(len(traces), -1)   # 0 train, 1 val, 2 test
    for c, name in enumerate(labels.classes):
        members = np.flatnonzero((y_all == c) & in_range)
        if len(members) < 2:
            raise InsufficientClassData(name, len(members))
        members = members[rng.permutation(len(members))]
        n = len(members)
        n_test = 0 if date_filter is not None else _round_half_up(TEST_FRACTION * n)
        n_val = _round_half_up(VAL_FRACTION * (n - n_test))
        part[members[:n_test]] = 2
        part[members[n_test:n_test + n_val]] = 1
        part[members[n_test + n_val:]] = 0
    if date_filter is not None:
        part[~in_range] = 2

    raw = featurize_many(traces, h, t_delta)
    train_mask = part == 0
    bounds = fit_scaler(raw[train_mask])
    X = apply_scaler(raw, bounds)
    C = len(labels)
    boot_ids = [tr.boot_id for tr in traces]
    dates = [tr.date for tr in traces]

    def take(k):
        idx = np.flatnonzero(part == k)
        return Split(X[idx], y_all[idx], [boot_ids[i] for i in idx],
                     [dates[i] for i in idx], C)

    return SplitDataset(take(0), take(1), take(2)), labels, bounds


# --------------------------------------------------------------------------
# single-file export: JSON header line, CSV column line, CSV rows


def export_dataset(splits: SplitDataset, labels: LabelMap, bounds: ScalerBounds,
                   h: int, t_delta: float, seed: int) -> str:
    header = {
        "h": h,
        "t_delta": t_delta,
        "granularity": labels.granularity,
        "seed": seed,
        "classes": list(labels.classes),
        "scaler": {"mins": bounds.mins.tolist(), "maxs": bounds.maxs.tolist()},
    }
    buf = io.StringIO()
    buf.write(json.dumps(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "boot_id", "date", "label"] + [f"f{i}" for i in range(h)])
    for tag, split in splits.items():
        for i in range(len(split)):
            w.writerow([tag, split.boot_ids[i], split.dates[i].isoformat(), int(split.y[i])]
                       + [repr(float(x)) for x in split.X[i]])
    return buf.getvalue()


def import_dataset(text: str):
    """Inverse of export_dataset: returns (SplitDataset, LabelMap, ScalerBounds, header)."""
    first, _, rest = text.partition("\n")
    header = json.loads(first)
    h = header["h"]
    labels = LabelMap(header["granularity"], tuple(header["classes"]))
    bounds = ScalerBounds(np.array(header["scaler"]["mins"], dtype=np.float64),
                          np.array(header["scaler"]["maxs"], dtype=np.float64))
    rows: dict[str, list] = {"train": [], "val": [], "test": []}
    reader = csv.reader(io.StringIO(rest))
    next(reader)
    for row in reader:
        rows[row[0]].append(row)
    C = len(labels)

    def build(rs):
        X = np.array([[float(x) for x in r[4:]] for r in rs], dtype=np.float64).reshape(len(rs), h)
        y = np.array([int(r[3]) for r in rs], dtype=np.int64)
        return Split(X, y, [r[1] for r in rs], [_dt.date.fromisoformat(r[2]) for r in rs], C)

    splits = SplitDataset(build(rows["train"]), build(rows["val"]), build(rows["test"]))
    return splits, labels, bounds, header


def save_dataset(path: str | Path, *args, **kwargs) -> None:
    Path(path).write_text(export_dataset(*args, **kwargs), encoding="utf-8")
