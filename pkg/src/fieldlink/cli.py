"""Command-line entry point.

    fieldlink simulate <scenario-file|builtin> [--seed N] [--out DIR]
    fieldlink replay <trace> [--speed X] [--serve ADDR]
    fieldlink serve <scenario-file|builtin> --live [--speed X] [--addr ADDR]
    fieldlink metrics <trace>

Builtin scenario names: short_range_omni, short_range_directional,
long_range, live_demo.
"""

from __future__ import annotations

import argparse
import sys
import threading

from .gateway import GatewayServer, LiveRunner, Replayer, ReplayProvider
from .scenario import BUILTIN_SCENARIOS, resolve_scenario
from .sim import run_scenario, write_results
from .trace import TraceError, load_trace, trace_metrics


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _print_metrics(metrics) -> None:
    print(f"{'session':<28}{'expected':>9}{'received':>9}{'realtime':>9}{'correct%':>10}{'realtime%':>11}")
    for m in metrics:
        print(
            f"{m.label:<28}{m.expected:>9}{m.received_valid:>9}{m.realtime:>9}"
            f"{m.pct_correct:>10.2f}{m.pct_realtime:>11.2f}"
        )


def cmd_simulate(args) -> int:
    scenario = resolve_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    result = run_scenario(scenario, out_dir=args.out)
    _print_metrics(result.metrics)
    if args.out:
        print(f"results written to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    try:
        trace = load_trace(args.trace)
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_metrics(trace_metrics(trace))
    return 0


def cmd_replay(args) -> int:
    try:
        provider = ReplayProvider.from_file(args.trace)
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.serve:
        host, port = _parse_addr(args.serve)
        server = GatewayServer(provider, host, port).start()
        print(f"replay gateway on {server.url} (speed x{args.speed})")
        replay_thread = threading.Thread(
            target=Replayer(provider, speed=args.speed).run, daemon=True
        )
        replay_thread.start()
        try:
            replay_thread.join()
            print("replay finished; gateway keeps serving the final state (Ctrl-C to stop)")
            threading.Event().wait()
        except KeyboardInterrupt:
            pass
        finally:
            server.close()
        return 0
    Replayer(provider, speed=args.speed, sleeper=lambda _s: None).run()
    _print_metrics(trace_metrics(provider.trace))
    return 0


def cmd_serve(args) -> int:
    scenario = resolve_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    runner = LiveRunner(scenario, speed=args.speed).start()
    host, port = _parse_addr(args.addr)
    server = GatewayServer(runner.provider, host, port).start()
    print(f"live gateway on {server.url} (speed x{args.speed}, scenario {scenario.name})")
    try:
        runner.wait()
        print("simulation finished; gateway keeps serving the final state (Ctrl-C to stop)")
        if args.out and runner.provider.result is not None:
            write_results(runner.provider.result, args.out)
            print(f"results written to {args.out}")
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldlink", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write trace + result files")
    sim.add_argument("scenario", help=f"scenario file or one of: {', '.join(BUILTIN_SCENARIOS)}")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default=None, help="output directory")
    sim.set_defaults(fn=cmd_simulate)

    rep = sub.add_parser("replay", help="replay a trace, optionally serving the gateway")
    rep.add_argument("trace")
    rep.add_argument("--speed", type=float, default=1.0)
    rep.add_argument("--serve", default=None, metavar="ADDR", help="host:port for the gateway")
    rep.set_defaults(fn=cmd_replay)

    srv = sub.add_parser("serve", help="run a live simulation with the gateway attached")
    srv.add_argument("scenario")
    srv.add_argument("--live", action="store_true", help="accepted for symmetry; serving is always live")
    srv.add_argument("--speed", type=float, default=1.0)
    srv.add_argument("--addr", default="127.0.0.1:8787")
    srv.add_argument("--seed", type=int, default=None)
    srv.add_argument("--out", default=None)
    srv.set_defaults(fn=cmd_serve)

    met = sub.add_parser("metrics", help="recompute session metrics from a trace")
    met.add_argument("trace")
    met.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
