"""Command-line entry point: ``iotdns <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data or runtime
errors.  Progress goes to stderr; stdout only ever carries data.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

from . import capture, dataset, synth
from .bundle import BundleError, ModelBundle, bundle_path, load_bundle, save_bundle
from .mlp import ModelConfig, metrics, train
from .runtime import SessionStore, events_from_jsonl, stream
from .sweep import (FULL_SPACE, SMALL_SPACE, SweepError, SweepPoint, SweepSpace,
                    accuracy_vs_hash_resolution, accuracy_vs_time_delta, confusion_csv,
                    find_record, read_results, run_sweep, series_csv, temporal_holdout)

log = logging.getLogger("iotdns")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        out = []
        for part in text.split(","):
            if "-" in part.strip("-"):
                lo, hi = part.split("-")
                out.extend(float(x) for x in range(int(lo), int(hi) + 1))
            elif part:
                out.append(float(part))
        return tuple(out)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected values like 1,5,10-20, got {text!r}")


def _date_range(text: str) -> tuple[_dt.date, _dt.date]:
    try:
        lo, hi = text.split(":")
        return _dt.date.fromisoformat(lo), _dt.date.fromisoformat(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD:YYYY-MM-DD, got {text!r}")


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _manufacturers(args) -> dict[str, str]:
    table = dict(dataset.default_manufacturers())
    if getattr(args, "corpus", None):
        table.update(synth.load_corpus(args.corpus).manufacturers())
    return table


def _add_model_args(p, td_default=30.0):
    p.add_argument("--h", type=_positive(int), default=32, help="hash resolution")
    p.add_argument("--td", type=_positive(float), default=td_default, help="time delta (s)")
    p.add_argument("--granularity", choices=dataset.GRANULARITIES, default=dataset.PRODUCT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iotdns", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic boot-trace corpus")
    p.add_argument("--corpus", default="default", help="default, rate, distinct or a JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--boots", type=_positive(int), help="boots per profile per day")
    p.add_argument("--days", type=_positive(int))
    p.add_argument("--drift-day", type=int, help="day index from which half the devices drift")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-corpus", help="also write the corpus definition JSON here")

    p = sub.add_parser("ingest", help="extract boot traces from pcap files")
    p.add_argument("pcaps", nargs="+")
    p.add_argument("--device-id", required=True, help="device MAC address")
    p.add_argument("--label", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-dataset", help="featurize and split a corpus into one file")
    p.add_argument("--traces", default="corpus.jsonl")
    p.add_argument("--corpus", help="corpus definition supplying the manufacturer table")
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-dates", type=_date_range)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one network and save its bundle")
    p.add_argument("--traces", default="corpus.jsonl")
    p.add_argument("--corpus")
    _add_model_args(p)
    p.add_argument("--layers", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--train-dates", type=_date_range)
    p.add_argument("--models", default="models")
    p.add_argument("--out", help="bundle path (default: models/td*_h*_l*/<granularity>.model.json)")

    p = sub.add_parser("sweep", help="train the design space, resumably")
    p.add_argument("--traces", default="corpus.jsonl")
    p.add_argument("--corpus")
    p.add_argument("--space", choices=("small", "full"), default="small")
    p.add_argument("--layers", type=_int_list)
    p.add_argument("--hs", type=_int_list, help="hash resolutions, e.g. 4,8,16")
    p.add_argument("--tds", type=_float_list, help="time deltas, e.g. 1-60 or 10,30")
    p.add_argument("--granularities", type=lambda s: tuple(s.split(",")))
    p.add_argument("--seeds", type=_int_list, default=(1, 2, 3, 4))
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-epochs", type=_positive(int), default=100)
    p.add_argument("--results", default="sweep.jsonl")
    p.add_argument("--models", default="models")
    p.add_argument("--jobs", type=_positive(int), default=1)

    p = sub.add_parser("figures", help="emit CSV figure data to stdout")
    p.add_argument("--kind", choices=("fig3", "fig6", "fig7", "confusion"), required=True)
    p.add_argument("--results", default="sweep.jsonl")
    p.add_argument("--traces", default="corpus.jsonl", help="fig7 only")
    p.add_argument("--corpus")
    _add_model_args(p)
    p.add_argument("--layers", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--train-days", type=_positive(int), default=2)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("classify", help="classify devices from a JSONL event stream")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--min-confidence", type=float)
    return parser


# --------------------------------------------------------------------------


def cmd_synth(args) -> None:
    corpus = synth.load_corpus(args.corpus)
    if args.boots:
        corpus = dataclasses.replace(corpus, boots_per_day=args.boots)
    if args.days:
        corpus = dataclasses.replace(corpus, days=args.days)
    if args.drift_day is not None:
        corpus = synth.drifted(corpus, args.drift_day)
    traces = synth.generate(corpus, args.seed)
    capture.save_traces(traces, args.out)
    if args.dump_corpus:
        Path(args.dump_corpus).write_text(json.dumps(corpus.to_dict(), indent=1), encoding="utf-8")
    log.info("wrote %d traces to %s", len(traces), args.out)


def cmd_ingest(args) -> None:
    traces = []
    for path in args.pcaps:
        stats = capture.ParseStats()
        raw = capture.read_pcap(path)
        traces.append(capture.parse_capture(raw, args.device_id, label=args.label,
                                            boot_id=Path(path).stem, stats=stats))
        log.info("%s: %d frames, %d skipped, %d events", path, stats.frames, stats.skipped,
                 len(traces[-1].events))
    capture.save_traces(traces, args.out)


def cmd_build_dataset(args) -> None:
    traces = capture.load_traces(args.traces)
    splits, labels, bounds = dataset.build_splits(
        traces, args.h, args.td, args.granularity, seed=args.seed,
        date_filter=args.train_dates, manufacturers=_manufacturers(args))
    dataset.save_dataset(args.out, splits, labels, bounds, h=args.h, t_delta=args.td, seed=args.seed)
    log.info("train/val/test = %d/%d/%d", len(splits.train), len(splits.val), len(splits.test))


def cmd_train(args) -> None:
    traces = capture.load_traces(args.traces)
    splits, labels, bounds = dataset.build_splits(
        traces, args.h, args.td, args.granularity, seed=args.split_seed,
        date_filter=args.train_dates, manufacturers=_manufacturers(args))
    net, report = train(ModelConfig(args.h, len(labels), args.layers, seed=args.seed), splits)
    m = metrics(net, splits.test)
    bundle = ModelBundle(labels, bounds, net, args.h, args.td, args.seed)
    out = Path(args.out) if args.out else bundle_path(args.models, args.td, args.h, args.layers,
                                                     args.granularity)
    save_bundle(bundle, out)
    summary = {"bundle": str(out), "test_accuracy": m.accuracy, "test_macro_f1": m.macro_f1,
               "test_loss": m.loss, "report": report.to_dict()}
    out.with_name(out.name.replace(".model.json", "") + ".report.json").write_text(
        json.dumps(summary, indent=1), encoding="utf-8")
    log.info("accuracy %.4f  macro F1 %.4f  epochs %d -> %s", m.accuracy, m.macro_f1,
             report.epochs_run, out)


def cmd_sweep(args) -> None:
    base = FULL_SPACE if args.space == "full" else SMALL_SPACE
    space = SweepSpace(
        hidden_layers=args.layers or base.hidden_layers,
        hash_resolutions=args.hs or base.hash_resolutions,
        time_deltas=args.tds or base.time_deltas,
        granularities=args.granularities or base.granularities,
        seeds=args.seeds)
    for g in space.granularities:
        if g not in dataset.GRANULARITIES:
            raise UsageError(f"unknown granularity {g!r}")
    traces = capture.load_traces(args.traces)
    records = run_sweep(space, traces, results_path=args.results, models_dir=args.models,
                        jobs=args.jobs, split_seed=args.split_seed,
                        manufacturers=_manufacturers(args),
                        train_opts={"max_epochs": args.max_epochs})
    failed = sum(r.error is not None for r in records)
    log.info("%d records in %s (%d failed)", len(records), args.results, failed)


def cmd_figures(args) -> None:
    if args.kind == "fig7":
        traces = capture.load_traces(args.traces)
        point = SweepPoint(args.granularity, args.h, args.td, args.layers)
        res = temporal_holdout(traces, point, train_days=args.train_days, seed=args.seed,
                               manufacturers=_manufacturers(args))
        sys.stdout.write(res.to_csv())
        return
    if not Path(args.results).exists():
        raise SweepError(f"results log {args.results} not found")
    records = list(read_results(args.results).values())
    if args.kind == "fig3":
        text = series_csv(accuracy_vs_hash_resolution(records, args.td, args.layers), "h")
    elif args.kind == "fig6":
        text = series_csv(accuracy_vs_time_delta(records, args.h, args.layers), "t_delta")
    else:
        text = confusion_csv(find_record(records, args.granularity, args.h, args.td, args.layers))
    sys.stdout.write(text)


def cmd_classify(args) -> None:
    bundle = load_bundle(args.model)
    store = SessionStore(bundle, min_confidence=args.min_confidence)
    fh = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    try:
        for pred in stream(store, events_from_jsonl(fh)):
            sys.stdout.write(json.dumps(pred.to_dict()) + "\n")
    finally:
        if fh is not sys.stdin:
            fh.close()
    if store.aborted:
        log.warning("%d session(s) aborted on out-of-order events", store.aborted)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "figures": cmd_figures,
    "classify": cmd_classify,
}

DATA_ERRORS = (capture.CaptureError, dataset.DatasetError, BundleError, SweepError,
               OSError, ValueError, KeyError)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"iotdns: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"iotdns: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
