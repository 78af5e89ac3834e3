"""Command-line entry point: ``helmexplain {simulate,distill,explain,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or input error.
Results go to stdout; diagnostics only to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import queue
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

from . import __version__
from .distiller import (
    FitParams,
    SchemaMismatchError,
    TreeFormatError,
    deserialize_tree,
    fit_tree,
    labelled_samples,
    predict,
    serialize_tree,
)
from .explainer import EventDetector
from .helm_sim import ScenarioError, load_scenario
from .telemetry import (
    DEFAULT_SCHEMA,
    LABELS,
    TimestampRegressionError,
    TraceParseError,
    TraceRecord,
    featurize,
    iter_trace,
    read_trace,
    schema_from_names,
    write_trace,
)
from .verbalizer import LexiconError, Lexicon, TemplateRealizer, DEFAULT_LEXICON_PATH

log = logging.getLogger("helmexplain")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, config or input files; maps to exit code 2."""


@dataclass
class RunManifest:
    subcommand: str
    inputs: list[str]
    outputs: list[str]
    config_overrides: dict
    seed: int | None
    exit_status: int = EXIT_OK
    wall_time_s: float = 0.0
    version: str = __version__
    details: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise UsageError(f"config file {path} is not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(cfg) - {"helm", "fit", "schema"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    return cfg


def _schema(cfg: dict):
    if "schema" not in cfg:
        return DEFAULT_SCHEMA
    try:
        return schema_from_names(cfg["schema"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_labelled(path: str) -> list[TraceRecord]:
    try:
        with open(path, encoding="utf-8") as fh:
            records = read_trace(fh)
    except FileNotFoundError:
        raise UsageError(f"trace file not found: {path}") from None
    except (TraceParseError, TimestampRegressionError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    for r in records:
        if r.behaviour is None:
            raise UsageError(f"{path}: trace is unlabeled (record at t={r.state.t} has no behaviour)")
    return records


def _load_tree(path: str):
    try:
        return deserialize_tree(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"tree file not found: {path}") from None
    except TreeFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest) if args.manifest else default


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> tuple[RunManifest, Path]:
    cfg = _load_config(args.config)
    try:
        scenario = load_scenario(args.scenario, cfg.get("helm"))
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None
    seed = scenario.seed if args.seed is None else args.seed
    run = scenario.run(seed)
    out = Path(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        write_trace(run.records, fh)
    log.info("wrote %d ticks to %s", len(run), out)
    manifest = RunManifest(
        "simulate", [str(args.scenario)], [str(out)], cfg, seed,
        details={"ticks": len(run), "timed_out": run.timed_out, "scenario": scenario.name},
    )
    return manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json"))


def cmd_distill(args) -> tuple[RunManifest, Path]:
    cfg = _load_config(args.config)
    schema = _schema(cfg)
    fit = dict(cfg.get("fit", {}))
    if args.max_depth is not None:
        fit["max_depth"] = None if args.max_depth.lower() == "none" else int(args.max_depth)
    if args.min_samples_leaf is not None:
        fit["min_samples_leaf"] = args.min_samples_leaf
    if args.min_impurity_decrease is not None:
        fit["min_impurity_decrease"] = args.min_impurity_decrease
    try:
        params = FitParams(**fit)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid fit parameters: {exc}") from None

    records, counts = [], {}
    for path in args.traces:
        trace = _read_labelled(path)
        counts[path] = len(trace)
        records.extend(trace)
    if not records:
        raise UsageError("no training records")
    samples = labelled_samples(records, schema)
    tree = fit_tree(samples, params)
    hits = sum(predict(tree, fv)[0] == label for fv, label in samples)
    score = hits / len(samples)

    out = Path(args.output)
    out.write_text(serialize_tree(tree) + "\n", encoding="utf-8")
    print(f"fidelity={score:.6f}")
    manifest = RunManifest(
        "distill", list(args.traces), [str(out)], cfg, args.seed,
        details={
            "records": len(records),
            "records_per_trace": counts,
            "fit_params": asdict(params),
            "fidelity": score,
            "depth": tree.depth,
            "leaves": tree.n_leaves,
        },
    )
    return manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json"))


def _tail_lines(path: str, poll: float, idle_timeout: float | None, stop: threading.Event) -> Iterator[str]:
    """Yield complete lines of a growing file, polling at EOF."""
    with open(path, encoding="utf-8") as fh:
        buffer = ""
        last_data = time.monotonic()
        while not stop.is_set():
            chunk = fh.readline()
            if chunk:
                last_data = time.monotonic()
                buffer += chunk
                if buffer.endswith("\n"):
                    yield buffer
                    buffer = ""
                continue
            if idle_timeout is not None and time.monotonic() - last_data >= idle_timeout:
                break
            time.sleep(poll)
        if buffer.strip():
            yield buffer


def _file_records(path: str) -> Iterator[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        yield from iter_trace(fh)


_EOF = object()


def _follow_records(source, poll: float, idle_timeout: float | None) -> Iterator[TraceRecord]:
    """Two-stage pipeline: a reader thread parses lines into an ordered queue."""
    q: queue.Queue = queue.Queue(maxsize=1024)
    stop = threading.Event()

    def reader():
        try:
            lines = source if not isinstance(source, str) else _tail_lines(source, poll, idle_timeout, stop)
            for record in iter_trace(lines):
                q.put(record)
        except BaseException as exc:  # handed to the consumer, re-raised there
            q.put(exc)
        finally:
            q.put(_EOF)

    thread = threading.Thread(target=reader, name="trace-reader", daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is _EOF:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


def cmd_explain(args) -> tuple[RunManifest, Path]:
    cfg = _load_config(args.config)
    schema = _schema(cfg)
    tree = _load_tree(args.tree)
    if tree.fingerprint != schema.fingerprint:
        raise UsageError(
            f"tree schema {tree.fingerprint} does not match stream schema {schema.fingerprint}"
        )
    try:
        lexicon = Lexicon.load(args.lexicon or DEFAULT_LEXICON_PATH, schema)
    except FileNotFoundError:
        raise UsageError(f"lexicon file not found: {args.lexicon}") from None
    except LexiconError as exc:
        raise UsageError(str(exc)) from None
    realizer = TemplateRealizer(lexicon, args.time)

    if args.trace == "-":
        source = sys.stdin
    else:
        if not Path(args.trace).exists():
            raise UsageError(f"trace file not found: {args.trace}")
        source = args.trace

    if args.follow:
        records = _follow_records(source, args.poll_interval, args.idle_timeout)
    elif source is sys.stdin:
        records = iter_trace(sys.stdin)
    else:
        records = _file_records(source)

    detector = EventDetector(tree, args.min_dwell)
    n_ticks = n_events = 0
    try:
        for record in records:
            n_ticks += 1
            event = detector.push(record.state, featurize(record.state, schema))
            if event is None:
                continue
            sentence = realizer.realize(event.concept_set).text
            sys.stdout.write(event.to_line(sentence) + "\n")
            sys.stdout.flush()
            n_events += 1
    except (TraceParseError, TimestampRegressionError) as exc:
        raise UsageError(f"{args.trace}: {exc}") from None
    finally:
        close = getattr(records, "close", None)
        if close is not None:
            close()

    default = Path("explain.manifest.json") if args.trace == "-" else Path(args.trace + ".explain.manifest.json")
    manifest = RunManifest(
        "explain", [args.tree, args.trace], ["<stdout>"], cfg, args.seed,
        details={"ticks": n_ticks, "events": n_events, "time_mode": args.time,
                 "min_dwell": args.min_dwell, "follow": args.follow},
    )
    return manifest, _manifest_path(args, default)


def evaluate_records(tree, records: list[TraceRecord], schema=DEFAULT_SCHEMA) -> dict:
    """Overall fidelity, transition fidelity and per-behaviour recall."""
    truth = [r.behaviour for r in records]
    preds = [predict(tree, featurize(r.state, schema))[0] for r in records]
    n = len(records)
    result = {"records": n, "fidelity": sum(p == t for p, t in zip(preds, truth)) / n}
    transitions = [i for i in range(1, n) if truth[i] != truth[i - 1]]
    result["transitions"] = len(transitions)
    result["transition_fidelity"] = (
        sum(preds[i] == truth[i] for i in transitions) / len(transitions) if transitions else float("nan")
    )
    for label in LABELS:
        idx = [i for i in range(n) if truth[i] == label]
        if idx:
            result[f"recall_{label.value}"] = sum(preds[i] == label for i in idx) / len(idx)
    return result


def cmd_evaluate(args) -> tuple[RunManifest, Path]:
    cfg = _load_config(args.config)
    schema = _schema(cfg)
    tree = _load_tree(args.tree)
    if tree.fingerprint != schema.fingerprint:
        raise UsageError("tree schema does not match the configured feature schema")
    records = _read_labelled(args.trace)
    if not records:
        raise UsageError(f"{args.trace}: empty trace")
    result = evaluate_records(tree, records, schema)
    for key, value in result.items():
        print(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
    manifest = RunManifest("evaluate", [args.tree, args.trace], ["<stdout>"], cfg, args.seed, details=result)
    return manifest, _manifest_path(args, Path(args.trace + ".evaluate.manifest.json"))


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="scenario seed override")
    common.add_argument("--config", help="JSON config with optional 'helm', 'fit' and 'schema' sections")
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="helmexplain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario and write a labelled trace")
    p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    p.add_argument("-o", "--output", required=True, help="trace file to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("distill", parents=[common], help="fit a decision tree to labelled traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("-o", "--output", required=True, help="tree file to write")
    p.add_argument("--max-depth", help="integer or 'none' for unbounded")
    p.add_argument("--min-samples-leaf", type=int)
    p.add_argument("--min-impurity-decrease", type=float)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("explain", parents=[common], help="emit explanation events for a trace or stream")
    p.add_argument("tree")
    p.add_argument("trace", help="trace file, or '-' for stdin")
    p.add_argument("--time", choices=("mission", "wall"), default="mission")
    p.add_argument("--lexicon", help="lexicon JSON (defaults to the shipped English lexicon)")
    p.add_argument("--follow", action="store_true", help="keep reading as the file grows")
    p.add_argument("--poll-interval", type=float, default=0.2, help="seconds between polls with --follow")
    p.add_argument("--idle-timeout", type=float, default=None,
                   help="stop following after this many seconds without new data")
    p.add_argument("--min-dwell", type=int, default=0, help="ticks a new prediction must hold (0 = off)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", parents=[common], help="score a tree against a labelled trace")
    p.add_argument("tree")
    p.add_argument("trace")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    started = time.perf_counter()
    try:
        manifest, manifest_path = args.func(args)
        manifest.wall_time_s = round(time.perf_counter() - started, 6)
        manifest.write(manifest_path)
    except UsageError as exc:
        print(f"helmexplain {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaMismatchError as exc:
        print(f"helmexplain {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"helmexplain {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished in %.3f s", manifest.subcommand, manifest.wall_time_s)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
