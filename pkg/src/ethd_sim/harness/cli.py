"""Command-line entry point: ``ethd-sim <subcommand> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 a trial or check
failed. Every subcommand accepts ``--seed``, ``--config`` and ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from ..controller import InteractionKind, Strategy
from ..registration import NoiseModel, bias_fixture
from ..wireproto import HEADSET_PORT, ROBOT_PORT
from . import report
from .realtime import Endpoints, serve_headset, serve_robot
from .runner import (Simulation, TrialBatchReport, TrialError, run_batch, run_colocation_eval,
                     run_trial, summarize)
from .scenario import ConfigError, Scenario, load_scenario
from .suites import protocol_soak, protocol_soak_csv, safety_suite, safety_suite_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3

KINDS = [k.value for k in InteractionKind]
STRATEGIES = [s.value for s in Strategy]


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors already; keep the message on stderr."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="scenario YAML file")
    p.add_argument("--out", type=Path, default=None, help="directory for CSV outputs")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="ethd-sim", description="Encountered-type haptic display simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("trial", parents=[common], help="run one interaction trial")
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--trace", action="store_true", help="write the per-tick controller trace")

    p = sub.add_parser("batch", parents=[common], help="run seeded trial batches")
    p.add_argument("--kind", choices=KINDS + ["all"], default=None,
                   help="interaction kind; default from the config, 'all' for the full table")
    p.add_argument("--strategy", choices=STRATEGIES + ["all"], default=None,
                   help="control strategy; default from the config, 'all' for both")
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--same-seed", action="store_true", help="reuse the master seed for every trial")

    p = sub.add_parser("colocation", parents=[common], help="repeated registration accuracy")
    p.add_argument("--trials", type=int, default=20, help="number of registrations")
    p.add_argument("--probes", type=int, default=5, help="probe measurements per registration")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bias-fixture", action="store_true", help="add the calibrated systematic offset")
    g.add_argument("--zero-noise", action="store_true", help="noise-free board detections")

    p = sub.add_parser("protocol-soak", parents=[common], help="codec and redundancy soak")
    p.add_argument("--messages", type=int, default=100_000)
    p.add_argument("--events", type=int, default=10_000)
    p.add_argument("--loss", type=float, default=0.3)
    p.add_argument("--repeat", type=int, default=5, help="redundancy factor K")
    p.add_argument("--min-delivery", type=float, default=0.99)

    p = sub.add_parser("safety-suite", parents=[common], help="scripted safety scenarios")
    p.add_argument("--scripts", type=int, default=1000, help="random e-stop latch scripts")

    for name, what in (("serve-robot", "robot loop"), ("serve-headset", "headset loop")):
        p = sub.add_parser(name, parents=[common], help=f"real-time {what} over UDP")
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--robot-port", type=int, default=ROBOT_PORT)
        p.add_argument("--headset-port", type=int, default=HEADSET_PORT)
    return parser


def _scenario(args) -> Scenario:
    sc = load_scenario(args.config) if args.config is not None else Scenario()
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    return sc


def _write(out: Optional[Path], name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _cmd_trial(args, sc: Scenario) -> int:
    upd = {}
    if args.kind:
        upd["kind"] = args.kind
    if args.strategy:
        upd["strategy"] = args.strategy
    if upd:
        sc = sc.replace(interaction=upd)
    sim = Simulation(sc, trace=args.trace or sc.run.trace)
    status = EXIT_OK
    try:
        rec = run_trial(sc, sim=sim)
    except TrialError as exc:
        rec = exc.record
        print(f"trial failed: {exc}", file=sys.stderr)
        status = EXIT_FAILURE
    mean, std, degen = summarize([rec.latency_ms] if rec.status == "ok" else [])
    rep = TrialBatchReport(sc.interaction.kind, sc.interaction.strategy, [rec],
                           int(rec.status == "ok"), mean, std, degen, int(rec.status != "ok"))
    _write(args.out, "trials.csv", report.trials_csv([rep]))
    _write(args.out, "safety_transitions.csv", sim.robot.safety.to_csv())
    if sim.robot.trace_enabled:
        _write(args.out, "trace.csv", sim.robot.trace_csv())
    lat = "n/a" if rec.latency_ms is None else f"{rec.latency_ms:.3f} ms"
    print(f"{sc.interaction.kind.value}/{sc.interaction.strategy.value} seed={sc.seed} "
          f"status={rec.status} latency={lat} phases={'>'.join(p.label for p in rec.phases)}")
    return status


def _cmd_batch(args, sc: Scenario) -> int:
    if args.trials < 1:
        print("--trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    kind = args.kind or sc.interaction.kind.value
    strategy = args.strategy or sc.interaction.strategy.value
    kinds = list(InteractionKind) if kind == "all" else [InteractionKind(kind)]
    strategies = list(Strategy) if strategy == "all" else [Strategy(strategy)]
    reports: List[TrialBatchReport] = []
    for kind in kinds:
        for strategy in strategies:
            rep = run_batch(kind, strategy, args.trials, sc.seed, base=sc, same_seed=args.same_seed)
            logger.info("%s/%s: %d ok, %d failed", kind.value, strategy.value,
                        rep.trial_count, rep.failed)
            reports.append(rep)
    table = report.summary_table(reports)
    _write(args.out, "trials.csv", report.trials_csv(reports))
    _write(args.out, "summary.csv", report.summary_csv(reports))
    _write(args.out, "table.txt", table)
    print(table, end="")
    return EXIT_FAILURE if any(r.failed for r in reports) else EXIT_OK


def _cmd_colocation(args, sc: Scenario) -> int:
    if args.trials < 1 or args.probes < 1:
        print("--trials and --probes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.bias_fixture:
        noise, label = bias_fixture(), "bias fixture"
    elif args.zero_noise:
        noise, label = NoiseModel(0.0, 0.0, 0.0), "zero noise"
    else:
        noise, label = NoiseModel(), "default noise"
    rep = run_colocation_eval(args.trials, args.probes, noise, seed=sc.seed)
    _write(args.out, "colocation.csv", report.colocation_csv(rep, args.probes))
    print(report.colocation_summary(rep, label), end="")
    return EXIT_OK


def _cmd_protocol_soak(args, sc: Scenario) -> int:
    if not 0.0 <= args.loss <= 1.0 or args.repeat < 1 or args.messages < 0 or args.events < 1:
        print("need 0 <= --loss <= 1, --repeat >= 1, --events >= 1", file=sys.stderr)
        return EXIT_USAGE
    rep = protocol_soak(args.messages, args.events, args.loss, args.repeat, seed=sc.seed)
    _write(args.out, "protocol_soak.csv", protocol_soak_csv(rep))
    rt, d = rep.roundtrip, rep.delivery
    print(f"round-trip: {rt.messages} messages, {rt.mismatches} mismatches, "
          f"{rt.fuzz_unexpected}/{rt.fuzzed} fuzzed datagrams escaped DecodeError")
    print(f"delivery: {d.delivered}/{d.events} = {d.delivery_rate:.4%} at loss {d.loss:.0%}, "
          f"K={d.repeat_count} (theoretical {d.theoretical_rate:.4%})")
    for s in rep.sweep:
        print(f"  sweep loss={s.loss:.2f} K={s.repeat_count}: {s.delivery_rate:.4f} "
              f"(theoretical {s.theoretical_rate:.4f})")
    ok = rt.passed and d.delivery_rate >= args.min_delivery
    return EXIT_OK if ok else EXIT_FAILURE


def _cmd_safety_suite(args, sc: Scenario) -> int:
    cases = safety_suite(sc.seed, base=sc, n_scripts=args.scripts)
    _write(args.out, "safety_suite.csv", safety_suite_csv(cases))
    for c in cases:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f": {c.message}" if c.message else ""))
    return EXIT_OK if all(c.passed for c in cases) else EXIT_FAILURE


def _endpoints(args) -> Endpoints:
    return Endpoints(args.host, args.robot_port, args.headset_port)


def _cmd_serve_robot(args, sc: Scenario) -> int:
    res = serve_robot(sc, _endpoints(args), args.out)
    print(f"robot: status={res.status} end_us={res.end_us} t_physical_us={res.t_physical_us} "
          f"late_ticks={res.late_ticks}")
    return EXIT_OK if res.status == "ok" else EXIT_FAILURE


def _cmd_serve_headset(args, sc: Scenario) -> int:
    res = serve_headset(sc, _endpoints(args), args.out)
    print(f"headset: status={res.status} frames={res.frames} t_virtual_us={res.t_virtual_us}")
    return EXIT_OK if res.status == "ok" else EXIT_FAILURE


_COMMANDS = {
    "trial": _cmd_trial,
    "batch": _cmd_batch,
    "colocation": _cmd_colocation,
    "protocol-soak": _cmd_protocol_soak,
    "safety-suite": _cmd_safety_suite,
    "serve-robot": _cmd_serve_robot,
    "serve-headset": _cmd_serve_headset,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = _scenario(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return _COMMANDS[args.command](args, sc)


if __name__ == "__main__":
    sys.exit(main())
