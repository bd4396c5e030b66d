"""Design-space sweep: every (layers, h, time delta, granularity) point trained
once per seed, averaged, logged, and turned into figure series.

Results go to an append-only JSONL log keyed by a hash of the point and its
seeds, so an interrupted sweep picks up where it stopped.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bundle import ModelBundle, bundle_path, load_bundle, save_bundle  # noqa: F401
from .capture import BootTrace
from .dataset import GRANULARITIES, LabelMap, ScalerBounds, apply_scaler, build_splits, class_name
from .featurize import featurize_many
from .mlp import ModelConfig, metrics, train

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4)


class SweepError(Exception):
    pass


class MissingSlice(SweepError):
    pass


class InsufficientDates(SweepError):
    pass


@dataclass(frozen=True, order=True)
class SweepPoint:
    granularity: str
    h: int
    t_delta: float
    hidden_layers: int

    def key(self, seeds: Sequence[int], split_seed: int = 0) -> str:
        blob = json.dumps({"granularity": self.granularity, "h": self.h,
                           "t_delta": float(self.t_delta), "hidden_layers": self.hidden_layers,
                           "seeds": list(seeds), "split_seed": split_seed}, sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SweepSpace:
    hidden_layers: tuple[int, ...] = (1, 2, 3)
    hash_resolutions: tuple[int, ...] = (4, 8, 16, 32, 64)
    time_deltas: tuple[float, ...] = tuple(range(1, 61))
    granularities: tuple[str, ...] = GRANULARITIES
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def points(self) -> list[SweepPoint]:
        # layers innermost so consecutive points share one featurized dataset
        return [SweepPoint(g, h, td, layers)
                for g in self.granularities
                for h in self.hash_resolutions
                for td in self.time_deltas
                for layers in self.hidden_layers]

    def __len__(self):
        return (len(self.hidden_layers) * len(self.hash_resolutions)
                * len(self.time_deltas) * len(self.granularities))


FULL_SPACE = SweepSpace()
SMALL_SPACE = SweepSpace(hidden_layers=(2,), hash_resolutions=(16, 32), time_deltas=(10, 30))


@dataclass
class SweepRecord:
    granularity: str
    h: int
    t_delta: float
    hidden_layers: int
    seeds: list[int]
    split_seed: int
    accuracies: list[float] = field(default_factory=list)
    mean_accuracy: float | None = None
    best_seed: int | None = None
    best_loss: float | None = None
    best_accuracy: float | None = None
    best_macro_f1: float | None = None
    epochs: list[int] = field(default_factory=list)
    classes: list[str] = field(default_factory=list)
    confusion: list[list[int]] = field(default_factory=list)
    error: str | None = None
    key: str = ""

    @property
    def point(self) -> SweepPoint:
        return SweepPoint(self.granularity, self.h, self.t_delta, self.hidden_layers)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(**d)


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


# --------------------------------------------------------------------------
# running points


@dataclass
class _Prepared:
    splits: object
    labels: LabelMap
    bounds: ScalerBounds


def _prepare(point: SweepPoint, traces, split_seed, manufacturers) -> _Prepared:
    splits, labels, bounds = build_splits(traces, point.h, point.t_delta, point.granularity,
                                          seed=split_seed, manufacturers=manufacturers)
    return _Prepared(splits, labels, bounds)


def _train_one(prepared: _Prepared, point: SweepPoint, seed: int, train_opts: dict):
    cfg = ModelConfig(point.h, len(prepared.labels), point.hidden_layers, seed=seed)
    net, report = train(cfg, prepared.splits, **train_opts)
    return seed, net, report.epochs_run, metrics(net, prepared.splits.test)


def _assemble(point, seeds, split_seed, prepared, results) -> tuple[SweepRecord, ModelBundle]:
    results = sorted(results, key=lambda r: r[0])
    accs = [m.accuracy for _, _, _, m in results]
    best = None
    for r in results:
        # strict comparison keeps the lowest seed on ties
        if best is None or r[3].accuracy > best[3].accuracy:
            best = r
    seed, net, _, m = best
    rec = SweepRecord(
        granularity=point.granularity, h=point.h, t_delta=float(point.t_delta),
        hidden_layers=point.hidden_layers, seeds=list(seeds), split_seed=split_seed,
        accuracies=accs, mean_accuracy=mean(accs), best_seed=seed, best_loss=m.loss,
        best_accuracy=m.accuracy, best_macro_f1=m.macro_f1,
        epochs=[e for _, _, e, _ in results], classes=list(prepared.labels.classes),
        confusion=m.confusion.tolist(), key=point.key(seeds, split_seed))
    bundle = ModelBundle(prepared.labels, prepared.bounds, net, point.h, float(point.t_delta), seed)
    return rec, bundle


def _failed(point, seeds, split_seed, exc) -> SweepRecord:
    return SweepRecord(granularity=point.granularity, h=point.h, t_delta=float(point.t_delta),
                       hidden_layers=point.hidden_layers, seeds=list(seeds),
                       split_seed=split_seed, error=f"{type(exc).__name__}: {exc}",
                       key=point.key(seeds, split_seed))


def run_point(point: SweepPoint, traces: Sequence[BootTrace], seeds: Sequence[int] = DEFAULT_SEEDS,
              split_seed: int = 0, manufacturers: Mapping[str, str] | None = None,
              train_opts: dict | None = None, prepared: _Prepared | None = None):
    """Train one design point once per seed; returns ``(SweepRecord, best ModelBundle)``."""
    train_opts = train_opts or {}
    if prepared is None:
        prepared = _prepare(point, traces, split_seed, manufacturers)
    results = [_train_one(prepared, point, s, train_opts) for s in seeds]
    return _assemble(point, seeds, split_seed, prepared, results)


def read_results(path: str | Path) -> dict[str, SweepRecord]:
    """Records from a results log keyed by point hash; torn lines are skipped."""
    out: dict[str, SweepRecord] = {}
    p = Path(path)
    if not p.exists():
        return out
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = SweepRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, TypeError) as exc:
                log.warning("results log line %d unreadable (%s), ignoring", lineno, exc)
                continue
            out[rec.key] = rec
    return out


def run_sweep(space: SweepSpace, traces: Sequence[BootTrace], results_path: str | Path | None = None,
              models_dir: str | Path | None = None, jobs: int = 1, split_seed: int = 0,
              manufacturers: Mapping[str, str] | None = None, train_opts: dict | None = None,
              max_points: int | None = None) -> list[SweepRecord]:
    """Run every point of `space`, skipping points already in the results log.

    Records come back in enumeration order whatever the completion order.
    `max_points` caps how many new points are trained in this call, which
    is how an interrupted run is simulated.
    """
    train_opts = train_opts or {}
    seeds = tuple(space.seeds)
    done = read_results(results_path) if results_path else {}
    points = space.points()
    todo = [p for p in points if p.key(seeds, split_seed) not in done]
    log.info("sweep: %d points, %d already done", len(points), len(points) - len(todo))
    if max_points is not None:
        todo = todo[:max_points]

    sink = None
    if results_path:
        p = Path(results_path)
        torn = p.exists() and p.stat().st_size and not p.read_bytes().endswith(b"\n")
        sink = open(p, "a", encoding="utf-8")
        if torn:
            sink.write("\n")
    try:
        def commit(rec: SweepRecord, bundle: ModelBundle | None):
            done[rec.key] = rec
            if sink is not None:
                sink.write(json.dumps(rec.to_dict()) + "\n")
                sink.flush()
            if models_dir is not None and bundle is not None:
                save_bundle(bundle, bundle_path(models_dir, rec.t_delta, rec.h,
                                                rec.hidden_layers, rec.granularity))

        cache_key, prepared = None, None
        pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
        try:
            for n, point in enumerate(todo, 1):
                dkey = (point.granularity, point.h, point.t_delta)
                try:
                    if dkey != cache_key:
                        cache_key, prepared = None, None
                        prepared = _prepare(point, traces, split_seed, manufacturers)
                        cache_key = dkey
                    if pool is None:
                        results = [_train_one(prepared, point, s, train_opts) for s in seeds]
                    else:
                        futs = [pool.submit(_train_one, prepared, point, s, train_opts) for s in seeds]
                        results = [f.result() for f in futs]
                    rec, bundle = _assemble(point, seeds, split_seed, prepared, results)
                except Exception as exc:  # recorded, never fatal
                    log.warning("point %s failed: %s", point, exc)
                    rec, bundle = _failed(point, seeds, split_seed, exc), None
                commit(rec, bundle)
                if n % 25 == 0 or n == len(todo):
                    log.info("sweep: %d/%d points", n, len(todo))
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if sink is not None:
            sink.close()

    return [done[k] for k in (p.key(seeds, split_seed) for p in points) if k in done]


# --------------------------------------------------------------------------
# figure data


def _ok(records: Iterable[SweepRecord]) -> list[SweepRecord]:
    return [r for r in records if r.error is None and r.mean_accuracy is not None]


def accuracy_vs_time_delta(records, h: int = 32, layers: int = 2) -> dict[str, list[tuple[float, float]]]:
    """Mean accuracy against time delta, one series per granularity."""
    out: dict[str, list] = {}
    for r in _ok(records):
        if r.h == h and r.hidden_layers == layers:
            out.setdefault(r.granularity, []).append((r.t_delta, r.mean_accuracy))
    if not out:
        raise MissingSlice(f"no records with h={h}, layers={layers}")
    return {g: sorted(s) for g, s in sorted(out.items())}


def accuracy_vs_hash_resolution(records, t_delta: float = 30, layers: int = 2) -> dict[str, list[tuple[int, float]]]:
    """Mean accuracy against hash resolution, one series per granularity."""
    out: dict[str, list] = {}
    for r in _ok(records):
        if r.t_delta == t_delta and r.hidden_layers == layers:
            out.setdefault(r.granularity, []).append((r.h, r.mean_accuracy))
    if not out:
        raise MissingSlice(f"no records with t_delta={t_delta}, layers={layers}")
    return {g: sorted(s) for g, s in sorted(out.items())}


def series_csv(series: Mapping[str, Sequence[tuple]], x_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["granularity", x_name, "mean_accuracy"])
    for g, pts in series.items():
        for x, y in pts:
            w.writerow([g, f"{x:g}", repr(y)])
    return buf.getvalue()


def find_record(records, granularity: str, h: int, t_delta: float, layers: int) -> SweepRecord:
    for r in _ok(records):
        if (r.granularity, r.h, r.t_delta, r.hidden_layers) == (granularity, h, float(t_delta), layers):
            return r
    raise MissingSlice(f"no record for {granularity} h={h} td={t_delta} layers={layers}")


def confusion_csv(record: SweepRecord) -> str:
    """Confusion matrix with predicted classes as rows and actual as columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predicted\\actual"] + record.classes)
    for name, row in zip(record.classes, record.confusion):
        w.writerow([name] + row)
    return buf.getvalue()


# --------------------------------------------------------------------------
# temporal holdout


@dataclass
class HoldoutResult:
    train_dates: list[_dt.date]
    in_range_accuracy: float
    per_day: list[tuple[_dt.date, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "in_range", "accuracy"])
        for d in self.train_dates:
            w.writerow([d.isoformat(), 1, repr(self.in_range_accuracy)])
        for d, acc in self.per_day:
            w.writerow([d.isoformat(), 0, repr(acc)])
        return buf.getvalue()


def temporal_holdout(traces: Sequence[BootTrace], point: SweepPoint, train_days: int = 2,
                     seed: int = 1, split_seed: int = 0,
                     manufacturers: Mapping[str, str] | None = None,
                     train_opts: dict | None = None) -> HoldoutResult:
    """Train on the first `train_days` dates, then score each later date.

    The in-range traces get the usual train/val/test split, so the in-range
    test accuracy is the reference the later days are compared with.
    """
    dates = sorted({tr.date for tr in traces})
    if len(dates) < train_days + 1:
        raise InsufficientDates(f"{len(dates)} date(s) present, need at least {train_days + 1}")
    train_dates = dates[:train_days]
    inside = [tr for tr in traces if tr.date in set(train_dates)]
    splits, labels, bounds = build_splits(inside, point.h, point.t_delta, point.granularity,
                                          seed=split_seed, manufacturers=manufacturers)
    cfg = ModelConfig(point.h, len(labels), point.hidden_layers, seed=seed)
    net, _ = train(cfg, splits, **(train_opts or {}))
    ref = metrics(net, splits.test).accuracy

    index = labels.index
    per_day = []
    for d in dates[train_days:]:
        day = [tr for tr in traces if tr.date == d]
        X = apply_scaler(featurize_many(day, point.h, point.t_delta), bounds)
        truth = np.array([index.get(class_name(tr, point.granularity, manufacturers), -1)
                          for tr in day])
        per_day.append((d, float(np.mean(net.predict(X) == truth))))
    return HoldoutResult(train_dates, ref, per_day)


__all__ = [
    "DEFAULT_SEEDS", "FULL_SPACE", "SMALL_SPACE", "HoldoutResult", "InsufficientDates",
    "MissingSlice", "ModelBundle", "SweepPoint", "SweepRecord", "SweepSpace",
    "accuracy_vs_hash_resolution", "accuracy_vs_time_delta", "bundle_path", "confusion_csv",
    "find_record", "load_bundle", "read_results", "run_point", "run_sweep", "save_bundle",
    "series_csv", "temporal_holdout",
]
