"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import traffic_gen
from .analytics import AnomalyReport
from .config import load_config
from .dns_model import format_log, format_timestamp, guess_format, iter_log, parse_timestamp, read_log
from .evaluation import evaluate
from .exceptions import DataError, MissingGroundTruth
from .features import FEATURE_NAMES
from .filters import run_filter_chain
from .pipeline import Engine, iter_windows, state_from_bytes, state_to_bytes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

logger = logging.getLogger("dnscovert")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _existing(path: str | None, what: str):
    if path is not None and path != "-" and not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _writable(path: str | None, what: str):
    if path is not None and path != "-" and not Path(path).resolve().parent.is_dir():
        raise UsageError(f"directory for {what} does not exist: {path}")


def _read_records(path, fmt):
    errors = []
    if path == "-":
        records = list(iter_log(sys.stdin, fmt or "csv", errors))
    else:
        records = read_log(path, fmt, errors)
    for err in errors:
        logger.warning("skipped malformed line: %s", err)
    return records


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _write_reports(fh, reports):
    for r in reports:
        fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    fh.flush()


def dump_features(path, detector, records):
    """Write the feature vector of every filter survivor as CSV, filtering per online window."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "timestamp", "source", "qname", "qtype", *FEATURE_NAMES])
        for start, window in iter_windows(records, detector._pcfg.online_window):
            survivors, _ = run_filter_chain(window, detector._fcfg, detector.suffix_list)
            if not survivors:
                continue
            for (rec, _), row in zip(survivors, detector._features(survivors)):
                writer.writerow([format_timestamp(start), format_timestamp(rec.timestamp), rec.source,
                                 rec.qname, rec.qtype.name, *(repr(float(v)) for v in row)])
                n += 1
    logger.info("%d feature vectors written to %s", n, path)


def read_reports(path) -> list[AnomalyReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(AnomalyReport.from_dict(json.loads(line)))
                except (ValueError, TypeError, KeyError) as exc:
                    raise DataError(f"{path}:{n}: invalid report: {exc}") from None
    return out


# -- subcommands --------------------------------------------------------------

def cmd_train(args):
    _existing(args.history, "history file")
    _existing(args.config, "config file")
    _writable(args.out, "model output")
    cfg = load_config(args.config)
    records = _read_records(args.history, args.format)
    detector = cfg.detector()
    detector.fit(records)
    state = detector.state_
    Path(args.out).write_bytes(state_to_bytes(state))
    logger.info("model written to %s (gamma=%g, nu=%g, %d support vectors)", args.out,
                state.model.gamma, state.model.nu, len(state.model.support_vectors_))
    return EXIT_OK


def cmd_classify(args):
    _existing(args.model, "model file")
    _existing(args.window, "window file")
    _existing(args.config, "config file")
    _writable(args.out, "report output")
    _writable(args.dump_features, "feature dump")
    state = state_from_bytes(Path(args.model).read_bytes())
    detector = load_config(args.config).detector()
    records = _read_records(args.window, args.format)
    if args.dump_features:
        dump_features(args.dump_features, detector, records)
    step = detector._pcfg.online_window
    fh, close = _open_out(args.out)
    try:
        n_rep = n_susp = 0
        for start, window in iter_windows(records, step):
            reports, counts = detector.online_step(window, state, start, start + step)
            _write_reports(fh, reports)
            n_rep += len(reports)
            n_susp += sum(r.suspicious for r in reports)
            logger.info("window %s: %d records, %d filtered, %d reported, %d suspicious",
                        format_timestamp(start), counts.total, counts.filtered, counts.reported,
                        sum(r.suspicious for r in reports))
    finally:
        if close:
            fh.close()
    logger.info("%d reports, %d suspicious", n_rep, n_susp)
    return EXIT_OK


def cmd_run(args):
    _existing(args.config, "config file")
    _existing(args.input, "input")
    _existing(args.model, "model file")
    _writable(args.out, "report output")
    _writable(args.status, "status output")
    cfg = load_config(args.config)
    state = state_from_bytes(Path(args.model).read_bytes()) if args.model else None
    engine = Engine(cfg.detector(), state=state, background=not args.sync)

    stop = threading.Event()

    def on_signal(signum, frame):
        logger.warning("interrupt received; finishing current window")
        stop.set()

    previous = signal.signal(signal.SIGINT, on_signal)
    fmt = args.format or guess_format(args.input)
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")

    def stream():
        errors = []
        for rec in iter_log(src, fmt, errors):
            while errors:
                logger.warning("skipped malformed line: %s", errors.pop())
            yield rec
            if stop.is_set():
                return

    fh, close = _open_out(args.out)
    try:
        engine.run(stream(), on_reports=lambda reps: _write_reports(fh, reps))
        engine.wait()
    finally:
        engine.close()
        signal.signal(signal.SIGINT, previous)
        if src is not sys.stdin:
            src.close()
        if close:
            fh.close()
    status = json.dumps(engine.status(), indent=2, sort_keys=True) + "\n"
    if args.status:
        Path(args.status).write_text(status, encoding="utf-8")
    elif not args.quiet:
        sys.stderr.write(status)
    return EXIT_OK


def _resolve_profile(name):
    if name in traffic_gen.ALL_PROFILES:
        return traffic_gen.get_profile(name)
    if Path(name).is_file():
        return traffic_gen.load_profile(name)
    raise UsageError(f"unknown profile {name!r}; choose one of "
                     f"{', '.join(sorted(traffic_gen.ALL_PROFILES))}, 'benign', or a JSON profile file")


def cmd_generate(args):
    _writable(args.out, "output")
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    start = parse_timestamp(args.start) if args.start else traffic_gen.DEFAULT_START
    streams, profiles = [], []
    if args.profile != "benign":
        profile = _resolve_profile(args.profile)
        profiles.append(profile)
        streams.append(traffic_gen.generate_covert(profile, args.duration, seed=args.seed, start=start,
                                                   source=args.source))
    if args.benign or args.profile == "benign":
        streams.append(traffic_gen.generate_benign(traffic_gen.BenignProfile(), args.duration,
                                                   seed=args.seed + 1, start=start))
    records = traffic_gen.merge_streams(*streams)
    fmt = args.format or (guess_format(args.out) if args.out and args.out != "-" else "csv")
    if args.out is None or args.out == "-":
        sys.stdout.write(format_log(records, fmt))
    else:
        truth = traffic_gen.ground_truth_document(profiles, [args.source] if profiles else [])
        traffic_gen.write_generated(records, args.out, fmt, truth)
        logger.info("%d records written to %s (ground truth in %s.truth.json)", len(records), args.out, args.out)
    return EXIT_OK


def cmd_evaluate(args):
    _existing(args.reports, "reports file")
    _existing(args.ground_truth, "ground-truth file")
    _existing(args.queries, "queries file")
    _writable(args.json, "JSON output")
    try:
        truth = json.loads(Path(args.ground_truth).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise MissingGroundTruth(f"{args.ground_truth}: {exc}") from None
    report = evaluate(read_reports(args.reports), truth, _read_records(args.queries, args.format))
    sys.stdout.write(report.to_table())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "jsonl"), help="log format (default: from file extension)")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = _Parser(prog="dnscovert", description="Detect DNS covert channels in passive DNS logs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="build a model from historical logs")
    s.add_argument("--history", required=True, help="query log of the training period")
    s.add_argument("--config", help="TOML config file")
    s.add_argument("--out", required=True, help="model file to write")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", parents=[common], help="classify a log with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--window", required=True, help="query log to classify, split into hour windows")
    s.add_argument("--config", help="TOML config file")
    s.add_argument("--out", help="JSONL report file (default: stdout)")
    s.add_argument("--dump-features", metavar="CSV", help="debug: write the feature vectors of filter survivors")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("run", parents=[common], help="streaming detection with periodic retraining")
    s.add_argument("--config", help="TOML config file")
    s.add_argument("--input", required=True, help="time-ordered query log, or - for stdin")
    s.add_argument("--model", help="initial model; without one the engine starts in collect-only mode")
    s.add_argument("--out", help="JSONL report file (default: stdout)")
    s.add_argument("--status", help="write the final engine status JSON here")
    s.add_argument("--sync", action="store_true",
                   help="retrain inline instead of in the background (deterministic replay of recorded logs)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("generate", parents=[common], help="generate synthetic traffic")
    s.add_argument("--profile", required=True, help="tool or malware profile name, 'benign', or JSON file")
    s.add_argument("--duration", type=float, required=True, help="seconds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output log (default: stdout); ground truth goes to <out>.truth.json")
    s.add_argument("--benign", action="store_true", help="mix in benign background traffic")
    s.add_argument("--start", help="first timestamp, ISO 8601 (default 2024-01-01T00:00:00Z)")
    s.add_argument("--source", default="10.0.66.6", help="source address of the covert client")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", parents=[common], help="score reports against ground truth")
    s.add_argument("--reports", required=True, help="JSONL reports from classify or run")
    s.add_argument("--ground-truth", required=True, help="ground-truth JSON written by generate")
    s.add_argument("--queries", required=True, help="the query log the reports were produced from")
    s.add_argument("--json", help="also write the machine-readable report here")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dnscovert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"dnscovert {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"dnscovert {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
