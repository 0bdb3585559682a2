"""Command-line entry point: ``ambisense <subcommand> [options]``."""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import os
import signal
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Sequence

from .config import Config, ConfigError, load_config, log_config, parse_override
from .labels import UnknownLabelError
from .reasoner import RuleSet, RuleSyntaxError, check_sequence, default_ruleset, format_sequence, parse_rules, parse_sequence
from .trace import TraceFormatError, TraceTooShortError

logger = logging.getLogger("ambisense")

EXIT_OK = 0
EXIT_USER = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

E2E_BUDGET_S = 60.0
STEP_SECONDS = 4.0


class UsageError(ValueError):
    """Bad invocation or input file; reported without a traceback."""


@dataclass(frozen=True)
class Scenario:
    steps: tuple[str, ...]
    expected_reminders: tuple[str, ...]


SCENARIOS = {
    "medication": Scenario(("teeth", "hand_wash", "pour_water", "eat"), ("forgetting medication",)),
    "hygiene": Scenario(("eat", "basketball", "teeth"), ("unhygienic behavior",)),
}


# -- shared helpers ---------------------------------------------------------------------


def _rules(config: Config) -> RuleSet:
    if not config.paths.rules:
        return default_ruleset()
    try:
        with open(config.paths.rules, encoding="utf-8") as fh:
            return parse_rules(fh.read())
    except FileNotFoundError:
        raise UsageError(f"rules file {config.paths.rules} not found") from None


def _signatures(config: Config):
    from .syngen import default_signatures, parse_signatures

    if not config.paths.signatures:
        return default_signatures()
    try:
        with open(config.paths.signatures, encoding="utf-8") as fh:
            return parse_signatures(fh.read())
    except FileNotFoundError:
        raise UsageError(f"signature file {config.paths.signatures} not found") from None


def _corpus_files(config: Config) -> tuple[str, str, str]:
    d = config.paths.corpus
    return os.path.join(d, "train.npz"), os.path.join(d, "test.npz"), os.path.join(d, "corpus.json")


def _corpus(config: Config):
    """The corpus on disk when present, otherwise regenerated from the [corpus] settings."""
    from .syngen import Corpus, WindowSet, build_corpus

    train_path, test_path, _ = _corpus_files(config)
    if os.path.exists(train_path) and os.path.exists(test_path):
        logger.info("loading corpus from %s", config.paths.corpus)
        return Corpus(WindowSet.load(train_path), WindowSet.load(test_path))
    logger.info(
        "no corpus at %s; generating n_per_class=%d seed=%d",
        config.paths.corpus,
        config.corpus.n_per_class,
        config.corpus.seed,
    )
    return build_corpus(config.corpus.n_per_class, config.corpus.seed, _signatures(config))


def _train_config(config: Config):
    from .encoder import TrainConfig

    t = config.train
    return TrainConfig(t.learning_rate, t.momentum, t.epochs, t.batch_size, t.seed)


def _load_model(config: Config):
    from .encoder import load_params

    if not os.path.exists(config.paths.model):
        raise UsageError(f"model file {config.paths.model} not found; run `ambisense train` first")
    params = load_params(config.paths.model)
    if params.arch.window != config.window.length:
        raise UsageError(f"model expects {params.arch.window}-sample windows, config has window.length={config.window.length}")
    return params


def _llm_client(config: Config):
    from .llm import HttpChatClient, RuleBackedClient

    if not config.llm.enabled:
        return None
    if config.llm.mock:
        return RuleBackedClient(_rules(config))
    return HttpChatClient(config.llm.endpoint, config.llm.model, timeout=config.llm.timeout_s)


def _scenario_trace(config: Config, name: str, seed: int):
    from .syngen import ScenarioScript, generate_scenario

    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(sorted(SCENARIOS))}")
    script = ScenarioScript(tuple((s, STEP_SECONDS) for s in SCENARIOS[name].steps), seed)
    return generate_scenario(script, _signatures(config))


def _edge_kwargs(config: Config) -> dict:
    return {
        "window_len": config.window.length,
        "hop": config.window.hop,
        "votes": config.debounce.votes,
        "threshold": config.debounce.threshold,
        "idle_ratio": config.debounce.idle_ratio,
    }


def _print_reminder(r) -> None:
    print(f"reminder {r.device_id} [{r.severity}] {r.complex_label}: {r.message} (corrected: {format_sequence(r.corrected)})")


def _print_event(e) -> None:
    print(f"event {e.device_id} #{e.seq_no} {e.label} conf={e.confidence:.2f} ts={e.ts:.2f}")


# -- subcommands ----------------------------------------------------------------------------


def cmd_gen(args, config: Config) -> int:
    from .syngen import build_corpus
    from .trace import save_trace

    if args.scenario:
        out = args.trace_out or f"{args.scenario}.csv"
        save_trace(_scenario_trace(config, args.scenario, args.seed), out)
        print(f"wrote scenario trace {out}")
        return EXIT_OK
    corpus = build_corpus(config.corpus.n_per_class, config.corpus.seed, _signatures(config))
    os.makedirs(config.paths.corpus, exist_ok=True)
    train_path, test_path, manifest_path = _corpus_files(config)
    corpus.train.save(train_path)
    corpus.test.save(test_path)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "n_per_class": config.corpus.n_per_class,
                "seed": config.corpus.seed,
                "signatures": config.paths.signatures or "built-in",
                "train_windows": len(corpus.train),
                "test_windows": len(corpus.test),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote {len(corpus.train)} training and {len(corpus.test)} test windows to {config.paths.corpus}")
    return EXIT_OK


def cmd_train(args, config: Config) -> int:
    from .encoder import save_training, train

    corpus = _corpus(config)
    t0 = time.perf_counter()
    result = train(corpus.train, _train_config(config))
    elapsed = time.perf_counter() - t0
    save_training(result, config.paths.model)
    loss_path = args.loss_csv or config.paths.model + ".loss.csv"
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(result.loss_history):
            w.writerow([i, f"{loss:.10g}"])
    print(
        f"trained {result.config.epochs} epochs in {elapsed:.1f} s: "
        f"loss {result.loss_history[0]:.4f} -> {result.loss_history[-1]:.4f}"
    )
    print(f"wrote {config.paths.model} and {loss_path}")
    return EXIT_OK


def cmd_eval(args, config: Config) -> int:
    from .encoder import channel_stats, evaluate, init_params

    corpus = _corpus(config)
    if args.untrained:
        mean, std = channel_stats(corpus.train.x)
        params = init_params(seed=config.train.seed, mean=mean, std=std)
    else:
        params = _load_model(config)
    metrics = evaluate(corpus.test, params)
    print(metrics.table())
    out = args.json or (config.paths.model + ".metrics.json")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(metrics.to_json())
        fh.write("\n")
    print(f"macro-F1 {metrics.macro_f1:.4f}, accuracy {metrics.accuracy:.4f}; metrics written to {out}")
    return EXIT_OK


def cmd_sweep(args, config: Config) -> int:
    from .robustness import render_sweep_figure, robustness_sweep, rows_to_csv, write_sweep

    params = _load_model(config)
    corpus = _corpus(config)
    sigmas = tuple(args.sigmas) if args.sigmas else None
    rates = tuple(args.rates) if args.rates else None
    kwargs = {k: v for k, v in (("sigmas", sigmas), ("rates", rates)) if v is not None}
    rows = robustness_sweep(params, corpus.test, seed=args.seed, **kwargs)
    write_sweep(rows, args.out)
    sys.stdout.write(rows_to_csv(rows))
    if not args.no_figure:
        figure = os.path.splitext(args.out)[0] + ".png"
        render_sweep_figure(rows, figure)
        print(f"wrote {args.out} and {figure}")
    else:
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_reason(args, config: Config) -> int:
    from .llm import verify_with_llm

    try:
        seq = parse_sequence(args.sequence)
    except UnknownLabelError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rules = _rules(config)
    client = _llm_client(config)
    if client is None:
        result = check_sequence(seq, rules)
        corrected, findings, source = result.corrected, result.findings, "rules"
    else:
        verified = verify_with_llm(seq, rules, client)
        corrected, findings = verified.corrected, verified.findings
        source = verified.source + (" (degraded)" if verified.degraded else "") + (
            " (discrepancy)" if verified.discrepancy else ""
        )
    print(f"corrected: {format_sequence(corrected)}")
    if not findings:
        print("label: none")
    for f in findings:
        print(f"label: {f.complex_label} [{f.severity}] {f.message}")
    if client is not None:
        print(f"source: {source}")
    return EXIT_OK


def cmd_serve_cloud(args, config: Config) -> int:
    from .gateway import CloudService, EventStore

    rules = _rules(config)
    service = CloudService(
        rules,
        EventStore(config.paths.store),
        _llm_client(config),
        buffer_size=config.gateway.buffer_size,
        horizon_s=config.gateway.horizon_s,
    )

    async def run() -> None:
        host, port = await service.start(config.gateway.host, config.gateway.port)
        print(f"listening on {host}:{port}, store {config.paths.store}", flush=True)
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await stop.wait()
        logger.info("shutting down; flushing store")
        await service.stop()

    asyncio.run(run())
    print(f"stopped after {len(service.reminders_sent)} reminders")
    return EXIT_RUNTIME if service.failed else EXIT_OK


def cmd_run_edge(args, config: Config) -> int:
    from .gateway.edge import EdgeAgent, TcpSink
    from .trace import load_trace

    if bool(args.trace) == bool(args.scenario):
        raise UsageError("give exactly one of --trace or --scenario")
    trace = load_trace(args.trace) if args.trace else _scenario_trace(config, args.scenario, args.seed)
    params = _load_model(config)
    g = config.gateway
    agent = EdgeAgent(params, g.device_id, first_seq_no=args.first_seq_no, **_edge_kwargs(config))
    sink = TcpSink(g.host, g.port, config.paths.spill, attempts=g.retry_attempts, backoff_s=g.retry_backoff_s)
    try:
        with sink:
            result = agent.run(trace, sink)
    except KeyboardInterrupt:
        print(f"interrupted; {len(sink.pending())} events held in {config.paths.spill}")
        return EXIT_RUNTIME
    for e in result.events:
        _print_event(e)
    for r in result.reminders:
        _print_reminder(r)
    pending = len(sink.pending())
    if pending:
        print(f"{pending} events spilled to {config.paths.spill}; they are replayed on the next run")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_e2e(args, config: Config) -> int:
    from .encoder import train
    from .gateway import BackgroundCloud, CloudService, EventStore, replay_state
    from .gateway.edge import EdgeAgent, TcpSink

    t0 = time.perf_counter()
    scenario = SCENARIOS.get(args.scenario)
    if scenario is None:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(sorted(SCENARIOS))}")
    if os.path.exists(config.paths.model):
        params = _load_model(config)
    else:
        logger.info("no model at %s; training one from the configured corpus", config.paths.model)
        params = train(_corpus(config).train, _train_config(config)).params
    trace = _scenario_trace(config, args.scenario, args.seed)
    rules = _rules(config)

    with tempfile.TemporaryDirectory(prefix="ambisense-e2e-") as tmp:
        store_path = args.store or os.path.join(tmp, "store.ndjson")
        if args.store and os.path.exists(store_path):
            raise UsageError(f"e2e store {store_path} already exists; give a fresh path")
        service = CloudService(rules, EventStore(store_path), _llm_client(config), config.gateway.buffer_size, config.gateway.horizon_s)
        with BackgroundCloud(service, "127.0.0.1", 0) as cloud:
            host, port = cloud.address
            agent = EdgeAgent(params, config.gateway.device_id, **_edge_kwargs(config))
            with TcpSink(host, port, os.path.join(tmp, "spill.ndjson"), attempts=config.gateway.retry_attempts) as sink:
                result = agent.run(trace, sink)
        live = service.state.snapshot()
        replayed = replay_state(store_path, rules, config.gateway.buffer_size, config.gateway.horizon_s).snapshot()
        restarted = CloudService(rules, EventStore(store_path), None, config.gateway.buffer_size, config.gateway.horizon_s)
        restarted.store.close()
        after_restart = restarted.state.snapshot()
        spilled = len(sink.pending())

    for e in result.events:
        _print_event(e)
    for r in result.reminders:
        _print_reminder(r)
    elapsed = time.perf_counter() - t0
    got_labels = tuple(e.label for e in result.events)
    got_reminders = tuple(r.complex_label for r in result.reminders)
    failures = []
    if got_labels != scenario.steps:
        failures.append(f"events {format_sequence(got_labels) or 'none'} != {format_sequence(scenario.steps)}")
    if got_reminders != scenario.expected_reminders:
        failures.append(f"reminders {list(got_reminders)} != {list(scenario.expected_reminders)}")
    if spilled:
        failures.append(f"{spilled} events left in the edge spill file")
    if not (live == replayed == after_restart):
        failures.append("store replay does not reproduce the live cloud state")
    if elapsed >= E2E_BUDGET_S:
        failures.append(f"took {elapsed:.1f} s (budget {E2E_BUDGET_S:.0f} s)")
    status = "PASS" if not failures else "FAIL: " + "; ".join(failures)
    n_ev, n_rem = len(result.events), len(result.reminders)
    print(f"e2e {args.scenario}: {status} ({n_ev} events, {n_rem} reminder{'s' * (n_rem != 1)}, {elapsed:.1f} s)")
    return EXIT_OK if not failures else EXIT_ACCEPTANCE


# -- argument parsing ------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which is reserved for runtime failures
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--corpus", help="corpus directory (paths.corpus)")
    common.add_argument("--model", help="model file (paths.model)")
    common.add_argument("--rules", help="rule DSL file (paths.rules)")
    common.add_argument("--store", dest="store_path", help="cloud store file (paths.store)")
    common.add_argument("--llm", action="store_true", help="verify sequences with the configured language model")
    common.add_argument("--llm-mock", action="store_true", help="use the offline rule-backed model stand-in")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    parser = _Parser(prog="ambisense", description="Ambient-sensor activity recognition and routine checking.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate the synthetic corpus (or a scenario trace)")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--seed", type=int, default=0, help="scenario seed (corpus seed is corpus.seed)")
    p.add_argument("--corpus-seed", type=int)
    p.add_argument("--scenario", help="write a scenario trace CSV instead of the corpus")
    p.add_argument("--trace-out", help="output path for --scenario")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the classifier")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int, dest="train_seed")
    p.add_argument("--loss-csv", help="loss curve output (default: <model>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="per-class metrics on the test split")
    p.add_argument("--json", help="metrics JSON output (default: <model>.metrics.json)")
    p.add_argument("--untrained", action="store_true", help="score a freshly initialized model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="noise and sampling-rate robustness sweep")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--sigmas", type=_floats)
    p.add_argument("--rates", type=_floats)
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG next to the CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reason", parents=[common], help='check a sequence such as "eat -> teeth"')
    p.add_argument("sequence")
    p.set_defaults(func=cmd_reason)

    p = sub.add_parser("serve-cloud", parents=[common], help="run the cloud service until interrupted")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve_cloud)

    p = sub.add_parser("run-edge", parents=[common], help="stream a trace through the edge agent to the cloud")
    p.add_argument("--trace", help="trace CSV")
    p.add_argument("--scenario", help=f"built-in scenario ({', '.join(sorted(SCENARIOS))})")
    p.add_argument("--seed", type=int, default=0, help="scenario seed")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--device-id")
    p.add_argument("--first-seq-no", type=int, default=1)
    p.set_defaults(func=cmd_run_edge)

    p = sub.add_parser("e2e", parents=[common], help="loopback edge-to-cloud scenario check")
    p.add_argument("--scenario", default="medication")
    p.add_argument("--seed", type=int, default=0, help="scenario seed")
    p.add_argument("--keep-store", dest="store", help="write the cloud store here instead of a temp file")
    p.set_defaults(func=cmd_e2e)
    return parser


def _overrides(args) -> dict:
    out: dict[str, dict] = {}

    def put(section: str, key: str, value) -> None:
        if value is not None:
            out.setdefault(section, {})[key] = value

    for text in args.set:
        put(*parse_override(text))
    put("paths", "corpus", args.corpus)
    put("paths", "model", args.model)
    put("paths", "rules", args.rules)
    put("paths", "store", args.store_path)
    if args.llm or args.llm_mock:
        put("llm", "enabled", True)
    if args.llm_mock:
        put("llm", "mock", True)
    put("corpus", "n_per_class", getattr(args, "n_per_class", None))
    put("corpus", "seed", getattr(args, "corpus_seed", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "learning_rate", getattr(args, "learning_rate", None))
    put("train", "seed", getattr(args, "train_seed", None))
    put("gateway", "host", getattr(args, "host", None))
    put("gateway", "port", getattr(args, "port", None))
    put("gateway", "device_id", getattr(args, "device_id", None))
    return out


_USER_ERRORS = (
    UsageError,
    ConfigError,
    UnknownLabelError,
    RuleSyntaxError,
    TraceFormatError,
    TraceTooShortError,
    FileNotFoundError,
)


def _user_errors() -> tuple[type[BaseException], ...]:
    from .encoder import ModelFormatError, NonFiniteInputError
    from .syngen import SignatureError

    return _USER_ERRORS + (ModelFormatError, NonFiniteInputError, SignatureError)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config, _overrides(args))
        log_config(config)
        return args.func(args, config)
    except _user_errors() as exc:
        print(f"ambisense: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except KeyboardInterrupt:
        print("ambisense: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort one-line diagnostic
        logger.debug("unhandled failure", exc_info=True)
        print(f"ambisense: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
