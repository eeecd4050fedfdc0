"""Command-line entry point.

Subcommands:
  run     execute an honest transfer; write the trace and updated registry
  attack  execute a named intruder scenario over the transfer
  verify  parse a protocol description and run the bounded checker
  msc     render a recorded trace as a text message sequence chart

Exit codes: 0 success / Safe verdict; 2 attack found or transfer aborted;
1 usage, IO or parse errors.  Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checker, hlpsl, msc, netsim
from .registry import CksRegistry
from .term import Password

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTACK = 2


def _default_registry(seed: int) -> CksRegistry:
    reg = CksRegistry(seed=seed)
    reg.provision("dev1", "a", Password("a"))
    reg.provision("dev2", "b", Password("b"))
    reg.provision("dev3", "c", Password("c"))
    return reg


def _load_registry(path: str | None, seed: int) -> CksRegistry:
    if path is None:
        return _default_registry(seed)
    return CksRegistry.load(path, seed=seed)


def _setup(args) -> netsim.TransferSetup:
    return netsim.TransferSetup(
        device=args.device, seller=args.seller, buyer=args.buyer,
        seller_password=Password(args.seller))


def _write_trace(trace: netsim.Trace, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(trace.encode())
    else:
        trace.save(path)


def cmd_run(args) -> int:
    registry = _load_registry(args.registry, args.seed)
    config = netsim.ChannelConfig(mode=netsim.MODE_HONEST, seed=args.seed,
                                  drop_after=args.drop_after)
    result = netsim.run(_setup(args), registry, config)
    _write_trace(result.trace, args.trace)
    if args.registry_out:
        registry.store(args.registry_out)
    if not result.completed:
        print("transfer aborted", file=sys.stderr)
        return EXIT_ATTACK
    rec = registry.records[args.device]
    print(f"transfer complete: {args.device} owner {args.seller} -> {rec.owner}",
          file=sys.stderr)
    return EXIT_OK


def cmd_attack(args) -> int:
    registry = _load_registry(args.registry, args.seed)
    scenario = args.scenario
    if scenario == "eavesdrop":
        config = netsim.ChannelConfig(mode=netsim.MODE_EAVESDROP, seed=args.seed)
    elif scenario == "mitm-forward":
        config = netsim.ChannelConfig(mode=netsim.MODE_MITM, seed=args.seed,
                                      policy="forward-all")
    elif scenario == "replay-random":
        config = netsim.ChannelConfig(mode=netsim.MODE_MITM, seed=args.seed,
                                      policy="replay-random")
    elif scenario.startswith("drop-at-"):
        config = netsim.ChannelConfig(mode=netsim.MODE_MITM, seed=args.seed,
                                      policy=scenario)
    else:
        print(f"unknown scenario {scenario!r}", file=sys.stderr)
        return EXIT_ERROR
    result = netsim.run(_setup(args), registry, config)
    _write_trace(result.trace, args.trace)
    intercepted = sum(1 for ev in result.trace.events if ev.kind == "intercepted")
    print(f"scenario {scenario}: {intercepted} interceptions, "
          f"{'completed' if result.completed else 'aborted'}", file=sys.stderr)
    return EXIT_OK if result.completed else EXIT_ATTACK


def cmd_verify(args) -> int:
    try:
        source = Path(args.spec).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {args.spec}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        model = hlpsl.parse_hlpsl(source, filename=args.spec)
    except hlpsl.HlpslError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    for diag in model.diagnostics:
        print(diag.format(args.spec), file=sys.stderr)
    bounds = checker.Bounds(sessions=args.sessions, depth=args.depth)
    secrets = tuple(args.secret or ())
    verdict = checker.explore(model, bounds, secrets=secrets,
                              injective=args.injective, jobs=args.jobs,
                              goal_filter=args.goal or None)
    if isinstance(verdict, checker.Safe):
        goals = ", ".join(g.protocol_id for g in model.goals
                          if not args.goal or g.protocol_id in args.goal)
        print(f"SAFE (bounded): goals [{goals}] hold up to "
              f"sessions={args.sessions} depth={args.depth} "
              f"({verdict.states_explored} states)")
        return EXIT_OK
    print(f"ATTACK on {verdict.goal_id} ({verdict.kind})")
    sys.stdout.write(verdict.counterexample.encode())
    return EXIT_ATTACK


def cmd_msc(args) -> int:
    try:
        trace = netsim.Trace.load(args.trace)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace {args.trace}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(msc.render(trace))
    return EXIT_OK


def _bool_flag(value: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oatproto",
        description="ownership-transfer protocol: runs, attacks, verification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_run_flags(p):
        p.add_argument("--registry", help="registry file (JSON lines); "
                                          "defaults to built-in seed records")
        p.add_argument("--registry-out", help="write the updated registry here")
        p.add_argument("--trace", help="trace output path ('-' for stdout)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--device", default="dev1")
        p.add_argument("--seller", default="a")
        p.add_argument("--buyer", default="b")

    p_run = sub.add_parser("run", help="honest transfer")
    common_run_flags(p_run)
    p_run.add_argument("--drop-after", type=int, default=None,
                       help="drop the k-th protocol message")
    p_run.set_defaults(func=cmd_run)

    p_attack = sub.add_parser("attack", help="intruder scenario")
    common_run_flags(p_attack)
    p_attack.add_argument("--scenario", required=True,
                          help="eavesdrop | mitm-forward | replay-random | drop-at-N")
    p_attack.set_defaults(func=cmd_attack)

    p_verify = sub.add_parser("verify", help="bounded verification")
    p_verify.add_argument("spec", help="protocol description file")
    p_verify.add_argument("--sessions", type=int, default=1)
    p_verify.add_argument("--depth", type=int, default=12)
    p_verify.add_argument("--injective", type=_bool_flag, default=True)
    p_verify.add_argument("--jobs", type=int, default=1)
    p_verify.add_argument("--goal", action="append",
                          help="check only this goal (repeatable)")
    p_verify.add_argument("--secret", action="append",
                          help="atom label that must stay secret (repeatable)")
    p_verify.set_defaults(func=cmd_verify)

    p_msc = sub.add_parser("msc", help="render a trace as a sequence chart")
    p_msc.add_argument("trace", help="trace file (JSON lines)")
    p_msc.set_defaults(func=cmd_msc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
