"""Command line front end.

Exit status: 0 on success, 1 when the run itself reports failure
(a failed attack expectation, a replay mismatch, a broker error),
2 for usage errors.
"""

from __future__ import annotations

import argparse
import sys

from . import bench
from .bitstream import encode_bitfile
from .config import ScenarioConfig, config_hash, load_config
from .errors import VfpgaError
from .kernels import descriptor
from .vmm import Broker
from .wire import WireServer


def _load(path: str | None) -> ScenarioConfig:
    if path is None:
        cfg = ScenarioConfig()
        cfg.validate()
        return cfg
    return load_config(path)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "guard", None) is not None:
        cfg.device.range_guard = args.guard == "on"
    return cfg


def _write_or_print(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    out = bench.run_scenario(cfg, mode=args.mode, native=args.native)
    if args.trace:
        _write_or_print(out.trace_text, args.trace)
    _write_or_print(out.report.render(), args.report)
    print(f"digest = {out.digest}", file=sys.stderr)
    print(f"final_time = {out.final_time!r}", file=sys.stderr)
    return 1 if out.report.errors else 0


def cmd_microbench(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    if args.name == "freq":
        hz = bench.microbench_freq(cfg)
        print(f"effective_clock_hz = {hz!r}")
    elif args.name == "membw":
        rate = bench.microbench_membw(cfg)
        print(f"kernel_ddr_bytes_per_s = {rate!r}")
    elif args.name == "pcie":
        for size, rate in bench.microbench_pcie(cfg).items():
            print(f"{size}\t{rate!r}")
    return 0


def cmd_attack(args) -> int:
    base = _load(args.config) if args.config else None
    verdict = bench.attack(args.name, guard=args.guard == "on",
                           base=base, mode=args.mode)
    for key, value in verdict.items():
        print(f"{key} = {value}")
    return 0 if verdict["passed"] else 1


def cmd_compile(args) -> int:
    desc = descriptor(args.kind, args.cycles_per_item)
    data = encode_bitfile(desc, device_id=args.device_id,
                          shell_id=args.shell_id, prr_id=args.prr,
                          image_size=args.image_size)
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote {len(data)} bytes to {args.out}")
    return 0


def cmd_replay(args) -> int:
    cfg = _load(args.config)
    with open(args.trace) as fh:
        trace_text = fh.read()
    out = bench.replay(cfg, trace_text, mode=args.mode)
    print(f"config = {config_hash(cfg)}")
    print(f"digest = {out.digest}")
    print(f"final_time = {out.final_time!r}")
    print("replay ok")
    return 0


def cmd_serve(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    broker = Broker(cfg.device, scrub_on_detach=cfg.scrub_on_detach,
                    reconfig_queue_depth=cfg.reconfig_queue_depth,
                    mmu_backend=cfg.mmu_backend, config_hash=config_hash(cfg))
    server = WireServer(broker, args.socket)
    server.start()
    print(f"serving on {args.socket}", file=sys.stderr)
    try:
        server.join()
    except KeyboardInterrupt:
        server.stop()
        server.join(timeout=5)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vfpga",
        description="Simulated multi-tenant FPGA broker: run scenarios, "
                    "benchmarks, and isolation checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario config")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("inproc", "wire"), default="inproc")
    p.add_argument("--trace", help="write the event trace here")
    p.add_argument("--report", default="-", help="write the report here")
    p.add_argument("--seed", type=int)
    p.add_argument("--guard", choices=("on", "off"))
    p.add_argument("--native", action="store_true",
                   help="append an unmediated single-tenant baseline")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("microbench", help="device model microbenchmarks")
    p.add_argument("name", choices=("pcie", "membw", "freq"))
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--guard", choices=("on", "off"))
    p.set_defaults(fn=cmd_microbench)

    p = sub.add_parser("attack", help="run a canned isolation scenario")
    p.add_argument("name", choices=("cross_reprogram", "cross_read",
                                    "hw_corrupt"))
    p.add_argument("--guard", choices=("on", "off"), default="off")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("inproc", "wire"), default="inproc")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("compile", help="encode a kernel image")
    p.add_argument("kind", choices=("vec_add", "matmul", "sobel",
                                    "rogue_writer"))
    p.add_argument("--out", required=True)
    p.add_argument("--device-id", type=int, default=1)
    p.add_argument("--shell-id", type=int, default=1)
    p.add_argument("--prr", type=int, default=0)
    p.add_argument("--cycles-per-item", type=int, default=None)
    p.add_argument("--image-size", type=int, default=4 << 20)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("replay", help="re-run a recorded trace and verify")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--mode", choices=("inproc", "wire"), default="inproc")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("serve", help="expose a broker on a unix socket")
    p.add_argument("--socket", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--guard", choices=("on", "off"))
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VfpgaError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
