"""Command line front end: detect, run, bench, convert, check.

Exit codes: 0 ok, 1 runtime failure, 2 usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import algebra, bench, ecarml
from .engine import EcaEngine, StopCondition
from .kb import KbError, KnowledgeBase, Occurrence
from .syntax import ParseError, parse_program, parse_trace, program_to_text, term_to_text
from .temporal import TimeInterval, format_datetime, parse_timespan

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_rules(target, path: str) -> None:
    """Load a rule file (clause text or .ecarml) into an engine or kb."""
    if path.endswith(ecarml.FILE_EXTENSION):
        doc = ecarml.parse(Path(path).read_bytes())
        if isinstance(target, EcaEngine):
            target.load_document(doc)
        else:
            engine = EcaEngine(kb=target)
            engine.load_document(doc)
        return
    clauses = parse_program(_read(path), source=path)
    kb = target.kb if isinstance(target, EcaEngine) else target
    kb.add_update("rules", clauses)


def _load_trace_into(kb: KnowledgeBase, path: str) -> None:
    for record in parse_trace(_read(path), source=path):
        kind = "transient" if record.kind == "occurs" else "persistent"
        key = None if kind == "transient" else "trace"
        occ = Occurrence(
            event=record.event,
            interval=TimeInterval(record.at, record.at),
            kind=kind,
            eis_key=key,
        )
        if occ.eis_key is None:
            from .kb import default_eis_key

            occ = Occurrence(
                event=occ.event, interval=occ.interval, kind=kind, eis_key=default_eis_key(record.event)
            )
        kb.add_occurrence(occ)


def _interval_text(iv: TimeInterval) -> str:
    return f"[{format_datetime(iv.start)},{format_datetime(iv.end)}]"


def cmd_detect(args) -> int:
    kb = KnowledgeBase()
    if args.rules:
        _load_rules(kb, args.rules)
    _load_trace_into(kb, args.trace)
    expr = algebra.parse_expression(args.expression)
    detections = algebra.detect(expr, kb, mode=args.mode)
    for d in detections:
        contributors = ",".join(
            f"{term_to_text(o.event)}@{_interval_text(o.interval)}" for o in d.contributors
        )
        print(f"{term_to_text(d.detected_event)} {_interval_text(d.interval)} contributors={contributors}")
    return EXIT_OK


def cmd_run(args) -> int:
    engine = EcaEngine(mode=args.mode, workers=args.workers)
    if args.rules:
        _load_rules(engine, args.rules)
    trace = parse_trace(_read(args.trace), source=args.trace) if args.trace else []
    poll = parse_timespan(args.poll)
    stop = StopCondition(max_cycles=args.cycles, quiescent_cycles=None if args.cycles else 3)
    report = engine.run(
        poll_span=poll,
        stop=stop,
        trace=trace,
        serial=args.serial,
    )
    for outcome in report.outcomes:
        print(json.dumps(outcome.record(), sort_keys=True))
    for diagnostic in report.diagnostics:
        print(f"# {diagnostic}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(x) for x in args.n.split(",") if x.strip()]
    if not sizes or any(n < 1 for n in sizes):
        print("bench: n values must be positive integers", file=sys.stderr)
        return EXIT_USAGE
    rows = bench.run_family(args.family, sizes, repetitions=args.reps)
    print(bench.format_table(rows))
    return EXIT_OK


def cmd_convert(args) -> int:
    raw = Path(args.input).read_bytes()
    if args.input.endswith(ecarml.FILE_EXTENSION):
        doc = ecarml.parse(raw)
    else:
        doc = ecarml.document_from_clauses(parse_program(raw.decode("utf-8"), source=args.input))
    if args.format == "ecarml":
        payload = ecarml.serialize(doc)
    else:
        payload = program_to_text(ecarml.document_to_clauses(doc)).encode("utf-8")
    if args.output:
        Path(args.output).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


def cmd_check(args) -> int:
    failures = 0
    for path in args.files:
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if path.endswith(ecarml.FILE_EXTENSION):
            diagnostics = ecarml.validate(raw)
        else:
            try:
                parse_program(raw.decode("utf-8"), source=path)
                diagnostics = []
            except ParseError as exc:
                diagnostics = [str(exc)]
        if diagnostics:
            failures += 1
            for d in diagnostics:
                print(f"{path}: {d}")
        else:
            print(f"{path}: ok")
    return EXIT_RUNTIME if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecaengine",
        description="Interval-based complex event detection and ECA rule execution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="evaluate an event expression over a trace")
    p.add_argument("expression", help="e.g. 'sequence(a,sequence(b,c))'")
    p.add_argument("--trace", required=True, help="trace file (ISO8601 occurs/happens lines)")
    p.add_argument("--rules", help="optional clause-text or .ecarml rule file")
    p.add_argument("--mode", choices=["strict", "nonstrict"], default="strict")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("run", help="replay a trace against the rule demon")
    p.add_argument("--rules", help="clause-text or .ecarml rule file")
    p.add_argument("--trace", help="trace file replayed on the virtual clock")
    p.add_argument("--poll", default="0:0:0:1", help="poll span, d:h:m:s or e.g. 10s")
    p.add_argument("--cycles", type=int, help="stop after this many poll cycles")
    p.add_argument("--serial", action="store_true", help="single-task deterministic mode")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--mode", choices=["strict", "nonstrict"], default="strict")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench", help="run the scalable test theories")
    p.add_argument("--family", choices=["eca_basic", "ec_basic"], required=True)
    p.add_argument("--n", required=True, help="comma-separated problem sizes")
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("convert", help="convert between clause text and ECA-RuleML")
    p.add_argument("input")
    p.add_argument("--format", choices=["text", "ecarml"], required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("check", help="validate rule, trace, or markup files")
    p.add_argument("files", nargs="+")
    p.set_defaults(fn=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ecarml.EcarmlError, algebra.ExpressionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KbError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
