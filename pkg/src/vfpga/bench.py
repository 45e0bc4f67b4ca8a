"""Scenario engine and benchmark harness.

A scenario is a set of per-VM scripts (config module) executed against a
broker. Script interpretation is a generator that yields primitive broker
operations and receives their OpResults, so the same interpreter runs:

* in-process: one event loop, ops submitted with callbacks; and
* over the wire: one thread per VM making blocking calls against a
  WireServer running the gated scheduler.

Both modes produce, by construction, identical traces, reports, memory
digests, and final virtual times for the same config.

The interpreter keeps a shadow copy of every buffer it owns (including
simulated kernel effects on them), so any byte another tenant changed
shows up as a recorded corruption when read back. Aggregated OpResult
cost parts become the BreakdownReport; its `total` is the sum of the four
components by definition, while `makespan` is the scenario's final
virtual time.
"""

from __future__ import annotations

import os
import random
import tempfile
import threading
from dataclasses import dataclass, field

from . import kernels, trace as trace_mod
from .bitstream import ARG_SLOTS, encode_bitfile
from .config import ScenarioConfig, config_hash, scenario_copy
from .device import REG_ARG0, REG_START
from .errors import (ClosedInterface, ConfigError, ConfigMismatch,
                     DeadlockDetected, KernelArgError, VfpgaError)
from .guest import InProcTransport
from .vmm import Broker
from .wire import WireServer, WireTransport

_COST_KEYS = ("software", "transfer", "kernel", "reconfig")


class _OutsideShadow(Exception):
    pass


class VmEnv:
    def __init__(self, vm_id: int, rng: random.Random, registry: dict):
        self.vm_id = vm_id
        self.rng = rng
        self.registry = registry
        self.prr = None
        self.buffers: dict = {}
        self.shadows: dict = {}
        self.kernel = None
        self.args = [0] * ARG_SLOTS
        self.launch_args = None
        self.pending = 0
        self.aborted = False
        self.outcomes: list = []
        self.corruptions: list = []
        self.irq_errors: list = []
        self.costs = dict.fromkeys(_COST_KEYS, 0.0)
        self.ops = 0

    def note(self, opname: str, result) -> None:
        self.ops += 1
        self.outcomes.append((opname, result.outcome))
        for key, value in result.costs.items():
            self.costs[key] += value


class _ShadowMem:
    """Byte access over the env's shadow buffers, addressed like DDR."""

    def __init__(self, env: VmEnv):
        self.env = env

    def _locate(self, addr: int, n: int):
        for name, handle in self.env.buffers.items():
            if handle.base_addr <= addr and addr + n <= handle.base_addr + handle.size:
                return name, addr - handle.base_addr
        raise _OutsideShadow()

    def read(self, addr: int, n: int) -> bytes:
        name, off = self._locate(addr, n)
        return bytes(self.env.shadows[name][off:off + n])

    def write(self, addr: int, data: bytes) -> None:
        name, off = self._locate(addr, len(data))
        self.env.shadows[name][off:off + len(data)] = data


def _script_gen(ops, env: VmEnv, ctx):
    """Yields (transport method, kwargs); receives OpResults."""
    for op in ops:
        if env.aborted:
            break
        name, a = op.op, op.args
        if name == "alloc":
            res = yield ("alloc", {"size": a[1]})
            env.note("alloc", res)
            if res.ok:
                env.buffers[a[0]] = res.value
                env.shadows[a[0]] = bytearray(a[1])
                env.registry[(env.vm_id, a[0])] = res.value
        elif name == "free":
            handle = env.buffers.pop(a[0], None)
            if handle is None:
                raise ConfigError(f"vm {env.vm_id}: free of unknown buffer {a[0]!r}")
            res = yield ("free", {"handle_id": handle.handle_id})
            env.note("free", res)
            env.shadows.pop(a[0], None)
            env.registry.pop((env.vm_id, a[0]), None)
        elif name == "write":
            buf, offset, length, mode = a[0], a[1], a[2], a[3]
            handle = env.buffers.get(buf)
            if handle is None:
                raise ConfigError(f"vm {env.vm_id}: write to unknown buffer {buf!r}")
            data = bytes([a[4]]) * length if mode == "fill" \
                else env.rng.randbytes(length)
            res = yield ("write_buf", {"handle_id": handle.handle_id,
                                       "offset": offset, "data": data})
            env.note("write_buf", res)
            if res.ok:
                env.shadows[buf][offset:offset + length] = data
        elif name == "read":
            buf, offset, length = a
            handle = env.buffers.get(buf)
            if handle is None:
                raise ConfigError(f"vm {env.vm_id}: read of unknown buffer {buf!r}")
            res = yield ("read_buf", {"handle_id": handle.handle_id,
                                      "offset": offset, "length": length})
            env.note("read_buf", res)
            if res.ok:
                expect = bytes(env.shadows[buf][offset:offset + length])
                if res.value != expect:
                    at = next(i for i in range(length)
                              if res.value[i:i + 1] != expect[i:i + 1])
                    env.corruptions.append(
                        {"buffer": buf, "offset": offset, "length": length,
                         "first_diff": at,
                         "expect": expect[at:at + 8].hex(),
                         "actual": res.value[at:at + 8].hex()})
        elif name in ("reprogram", "reprogram_prr"):
            if name == "reprogram":
                kind, cpi = a
                prr = env.prr
            else:
                kind, prr, cpi = a
            data = ctx.build_bitfile(kind, prr, cpi)
            res = yield ("reprogram", {"bitfile_bytes": data})
            env.note("reprogram", res)
            if res.ok and prr == env.prr:
                env.kernel = kernels.descriptor(kind, cpi)
        elif name == "reprogram_file":
            res = yield ("reprogram", {"bitfile_bytes": ctx.file_bytes[a[0]]})
            env.note("reprogram", res)
        elif name == "set_args":
            values = [ctx.resolve_arg(env, tok) for tok in a]
            for i, value in enumerate(values):
                res = yield ("reg_write", {"reg_index": REG_ARG0 + i,
                                           "value": value})
                env.note("reg_write",
                         res if res.outcome != "ok" or res.value == "ok"
                         else _frozen(res))
                if res.ok and res.value == "ok":
                    env.args[i] = value
        elif name == "launch":
            res = yield ("reg_write", {"reg_index": REG_START, "value": 1})
            if res.ok and res.value == "frozen":
                env.outcomes.append(("launch", "frozen"))
                env.ops += 1
            else:
                env.note("launch", res)
                if res.ok:
                    env.launch_args = list(env.args)
                    env.pending += 1
        elif name == "wait":
            if env.pending == 0:
                env.outcomes.append(("wait", "skipped"))
                continue
            res = yield ("wait_irq", {})
            env.note("wait", res)
            env.pending -= 1
            if not res.ok:
                if isinstance(res.error, (DeadlockDetected, ClosedInterface)):
                    env.aborted = True
                continue
            payload = res.value
            env.irq_errors.append(payload["error"])
            if env.kernel is not None and env.launch_args is not None \
                    and not payload["error"]:
                bound = kernels.bind_args(env.kernel, env.launch_args)
                try:
                    kernels.execute(env.kernel, bound, _ShadowMem(env))
                except (_OutsideShadow, KernelArgError):
                    pass  # effects landed outside our buffers (or nowhere)
            env.launch_args = None
        elif name == "sleep":
            res = yield ("sleep", {"seconds": a[0]})
            env.note("sleep", res)
        elif name == "steal_read":
            victim = env.registry.get((a[0], a[1]))
            if victim is None:
                env.outcomes.append(("steal_read", "unresolved"))
                continue
            res = yield ("read_buf", {"handle_id": victim.handle_id,
                                      "offset": a[2], "length": a[3]})
            env.note("steal_read", res)
        elif name == "steal_free":
            victim = env.registry.get((a[0], a[1]))
            if victim is None:
                env.outcomes.append(("steal_free", "unresolved"))
                continue
            res = yield ("free", {"handle_id": victim.handle_id})
            env.note("steal_free", res)
        else:
            raise ConfigError(f"unhandled script op {name!r}")
    res = yield ("detach", {})
    env.note("detach", res)


def _frozen(res):
    class _View:
        outcome = "frozen"
        costs = res.costs
    return _View()


class _Ctx:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.file_bytes: dict = {}
        for ops in cfg.vms.values():
            for op in ops:
                if op.op == "reprogram_file" and op.args[0] not in self.file_bytes:
                    with open(op.args[0], "rb") as fh:
                        self.file_bytes[op.args[0]] = fh.read()

    def build_bitfile(self, kind, prr: int, cpi) -> bytes:
        return encode_bitfile(kernels.descriptor(kind, cpi),
                              device_id=self.cfg.device.device_id,
                              shell_id=self.cfg.device.shell_id,
                              prr_id=prr, image_size=self.cfg.image_size)

    def resolve_arg(self, env: VmEnv, token: str) -> int:
        if token.startswith("@@"):
            vm_s, _, name = token[2:].partition(".")
            handle = env.registry.get((int(vm_s), name))
            if handle is None:
                raise ConfigError(f"foreign buffer {token!r} not allocated yet")
            return handle.base_addr
        if token.startswith("@"):
            handle = env.buffers.get(token[1:])
            if handle is None:
                raise ConfigError(f"unknown buffer {token!r}")
            return handle.base_addr
        return int(token, 0)


# ---------------------------------------------------------------------------
# report

@dataclass
class BreakdownReport:
    per_vm: dict
    software: float = 0.0
    transfer: float = 0.0
    kernel: float = 0.0
    reconfig: float = 0.0
    total: float = 0.0
    makespan: float = 0.0
    config: str = ""
    errors: int = 0
    native: dict | None = None

    @classmethod
    def build(cls, envs: dict, makespan: float, cfg_hash: str) -> "BreakdownReport":
        per_vm = {}
        agg = dict.fromkeys(_COST_KEYS, 0.0)
        errors = 0
        for vm in sorted(envs):
            env = envs[vm]
            row = dict(env.costs)
            row["total"] = sum(env.costs[k] for k in _COST_KEYS)
            row["ops"] = env.ops
            per_vm[vm] = row
            for k in _COST_KEYS:
                agg[k] += env.costs[k]
            errors += sum(1 for _, out in env.outcomes
                          if out not in ("ok", "skipped"))
        return cls(per_vm=per_vm, makespan=makespan, config=cfg_hash,
                   errors=errors, total=sum(agg.values()), **agg)

    def render(self) -> str:
        lines = ["vfpga-report 1",
                 f"config = {self.config}",
                 f"makespan = {self.makespan!r}",
                 f"software = {self.software!r}",
                 f"transfer = {self.transfer!r}",
                 f"kernel = {self.kernel!r}",
                 f"reconfig = {self.reconfig!r}",
                 f"total = {self.total!r}",
                 f"errors = {self.errors}"]
        for vm, row in sorted(self.per_vm.items()):
            lines.append(
                f"vm {vm}: software={row['software']!r} "
                f"transfer={row['transfer']!r} kernel={row['kernel']!r} "
                f"reconfig={row['reconfig']!r} total={row['total']!r} "
                f"ops={row['ops']}")
        if self.native is not None:
            lines.append(f"native makespan = {self.native['makespan']!r}")
            lines.append(f"native total = {self.native['total']!r}")
        return "\n".join(lines) + "\n"


@dataclass
class RunOutput:
    report: BreakdownReport
    trace_text: str
    digest: str
    final_time: float
    envs: dict = field(repr=False, default_factory=dict)


# ---------------------------------------------------------------------------
# engines

def _make_envs(cfg: ScenarioConfig):
    registry: dict = {}
    return {vm: VmEnv(vm, random.Random(cfg.seed * 1000003 + vm), registry)
            for vm in cfg.vms}


def _make_broker(cfg: ScenarioConfig) -> Broker:
    return Broker(cfg.device, scrub_on_detach=cfg.scrub_on_detach,
                  reconfig_queue_depth=cfg.reconfig_queue_depth,
                  mmu_backend=cfg.mmu_backend, config_hash=config_hash(cfg))


class _InProcEngine:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.broker = _make_broker(cfg)
        self.ctx = _Ctx(cfg)

    def run(self) -> RunOutput:
        broker, queue = self.broker, self.broker.queue
        envs = _make_envs(self.cfg)
        sessions, gens = {}, {}
        for vm in sorted(self.cfg.vms):
            box: list = []
            broker.attach_vm(vm, box.append)
            while not box:
                queue.step()
            sessions[vm] = box[0].unwrap()
            envs[vm].prr = sessions[vm].prr
        self._live = set(self.cfg.vms)
        self._sessions = sessions
        self._gens = gens
        for vm in sorted(self.cfg.vms):
            gens[vm] = _script_gen(self.cfg.vms[vm], envs[vm], self.ctx)
            self._advance(vm, None)
        while self._live:
            if not queue.step():
                parked = broker.parked_vms()
                if not parked:
                    raise RuntimeError(f"engine stalled with {self._live} live")
                broker.fail_parked(DeadlockDetected(parked))
        queue.run_until_idle()
        report = BreakdownReport.build(envs, queue.now, config_hash(self.cfg))
        return RunOutput(report=report, trace_text=broker.export_trace(),
                         digest=broker.memory_digest(), final_time=queue.now,
                         envs=envs)

    def _advance(self, vm: int, result) -> None:
        gen = self._gens[vm]
        try:
            method, kwargs = gen.send(result) if result is not None else next(gen)
        except StopIteration:
            self._live.discard(vm)
            return
        broker, session = self.broker, self._sessions[vm]
        reply = lambda res: self._advance(vm, res)
        if method == "alloc":
            broker.handle_alloc(session, kwargs["size"], reply)
        elif method == "free":
            broker.handle_free(session, kwargs["handle_id"], reply)
        elif method == "write_buf":
            broker.handle_write_buffer(session, kwargs["handle_id"],
                                       kwargs["offset"], kwargs["data"], reply)
        elif method == "read_buf":
            broker.handle_read_buffer(session, kwargs["handle_id"],
                                      kwargs["offset"], kwargs["length"], reply)
        elif method == "reprogram":
            broker.handle_reprogram(session, kwargs["bitfile_bytes"], reply)
        elif method == "reg_write":
            broker.handle_reg_write(session, kwargs["reg_index"],
                                    kwargs["value"], reply)
        elif method == "reg_read":
            broker.handle_reg_read(session, kwargs["reg_index"], reply)
        elif method == "wait_irq":
            broker.handle_wait_irq(session, reply)
        elif method == "sleep":
            broker.handle_sleep(session, kwargs["seconds"], reply)
        elif method == "get_info":
            broker.handle_get_info(session, kwargs["iface_name"], reply)
        elif method == "detach":
            broker.detach_vm(session, reply)
        else:
            raise ConfigError(f"unknown primitive {method!r}")


class _WireEngine:
    def __init__(self, cfg: ScenarioConfig, socket_path: str | None = None):
        cfg.validate()
        self.cfg = cfg
        self.socket_path = socket_path

    def run(self) -> RunOutput:
        tmp = None
        path = self.socket_path
        if path is None:
            tmp = tempfile.mkdtemp(prefix="vfpga-")
            path = os.path.join(tmp, "broker.sock")
        broker = _make_broker(self.cfg)
        server = WireServer(broker, path)
        server.start()
        envs = _make_envs(self.cfg)
        failures: list = []
        try:
            admin = WireTransport(path)
            transports = {}
            for vm in sorted(self.cfg.vms):
                tr = WireTransport(path)
                tr.attach(vm).unwrap()
                envs[vm].prr = tr.prr
                transports[vm] = tr
            admin.begin().unwrap()
            ctx = _Ctx(self.cfg)
            threads = []
            for vm in sorted(self.cfg.vms):
                gen = _script_gen(self.cfg.vms[vm], envs[vm], ctx)
                t = threading.Thread(
                    target=self._drive, args=(transports[vm], gen, vm, failures),
                    daemon=True)
                threads.append(t)
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if failures:
                vm, exc = failures[0]
                raise RuntimeError(f"vm {vm} driver failed") from exc
            trace_text = admin.export_trace()
            state = admin.state_digest()
            report = BreakdownReport.build(envs, state["now"],
                                           config_hash(self.cfg))
            out = RunOutput(report=report, trace_text=trace_text,
                            digest=state["digest"], final_time=state["now"],
                            envs=envs)
            admin.shutdown()
            for tr in transports.values():
                tr.close()
            admin.close()
            return out
        finally:
            server.stop()
            server.join(timeout=10)
            if tmp is not None:
                if os.path.exists(path):
                    os.unlink(path)
                os.rmdir(tmp)

    @staticmethod
    def _drive(transport: WireTransport, gen, vm: int, failures: list) -> None:
        try:
            method, kwargs = next(gen)
            while True:
                if method == "get_info":
                    result = transport.get_info(kwargs["iface_name"])
                else:
                    result = getattr(transport, method)(**kwargs)
                try:
                    method, kwargs = gen.send(result)
                except StopIteration:
                    return
        except BaseException as exc:  # noqa: BLE001 - reported to the main thread
            failures.append((vm, exc))


def run_scenario(cfg: ScenarioConfig, mode: str = "inproc",
                 native: bool = False,
                 socket_path: str | None = None) -> RunOutput:
    if mode == "inproc":
        out = _InProcEngine(cfg).run()
    elif mode == "wire":
        out = _WireEngine(cfg, socket_path).run()
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    if native and cfg.vms:
        out.report.native = _native_baseline(cfg)
    return out


def _native_baseline(cfg: ScenarioConfig) -> dict:
    """The same workload for the first VM, with mediation costs removed:
    no per-call software charge and direct DMA with no staging copy."""
    first = min(cfg.vms)
    base = scenario_copy(cfg, sw_call_overhead=0.0,
                         staging_copy_bandwidth=float("inf"))
    base.vms = {first: cfg.vms[first]}
    out = _InProcEngine(base).run()
    return {"makespan": out.report.makespan, "total": out.report.total,
            "software": out.report.software, "transfer": out.report.transfer,
            "kernel": out.report.kernel, "reconfig": out.report.reconfig}


# ---------------------------------------------------------------------------
# replay

def replay(cfg: ScenarioConfig, trace_text: str, mode: str = "inproc") -> RunOutput:
    """Re-execute the scenario and verify it reproduces the recorded
    event stream; returns the fresh run (digest, final time, report)."""
    recorded = trace_mod.parse(trace_text)
    if recorded.config_hash != config_hash(cfg):
        raise ConfigMismatch(
            f"trace was recorded under config {recorded.config_hash}, "
            f"got {config_hash(cfg)}")
    out = run_scenario(cfg, mode=mode)
    fresh = trace_mod.parse(out.trace_text)
    if fresh.events != recorded.events:
        raise VfpgaError("replay diverged from the recorded trace")
    return out


# ---------------------------------------------------------------------------
# microbenchmarks

def _single_vm_rig(cfg: ScenarioConfig):
    """Broker plus attached sync transport for hand-driven measurements."""
    broker = _make_broker(cfg)
    tr = InProcTransport(broker)
    tr.attach(0).unwrap()
    return broker, tr


def microbench_freq(cfg: ScenarioConfig, n: int = 1 << 20) -> float:
    """Effective region clock: cycles of a known kernel over the virtual
    time between launch and completion interrupt."""
    broker, tr = _single_vm_rig(cfg)
    ctx = _Ctx(cfg)
    size = 4 * n
    a = tr.alloc(size).unwrap()
    b = tr.alloc(size).unwrap()
    c = tr.alloc(size).unwrap()
    tr.reprogram(ctx.build_bitfile("vec_add", tr.prr, 1)).unwrap()
    for i, value in enumerate((a.base_addr, b.base_addr, c.base_addr, n)):
        tr.reg_write(REG_ARG0 + i, value).unwrap()
    t0 = tr.reg_write(REG_START, 1).t_complete
    done = tr.wait_irq()
    elapsed = done.t_complete - t0
    return (1 * n) / elapsed


def microbench_pcie(cfg: ScenarioConfig, sizes=None) -> dict:
    """Effective host-device bandwidth per transfer size, from the DMA
    stage of mediated writes (the PCIe leg, staging excluded)."""
    if sizes is None:
        sizes = [4 << 10, 64 << 10, 1 << 20, 16 << 20, 256 << 20]
    broker, tr = _single_vm_rig(cfg)
    rates = {}
    for size in sizes:
        handle = tr.alloc(size).unwrap()
        res = tr.write_buf(handle.handle_id, 0, bytes(size))
        res.unwrap()
        rates[size] = size / res.costs["transfer"]
        tr.free(handle.handle_id).unwrap()
    return rates


def microbench_membw(cfg: ScenarioConfig, n: int = 1 << 20) -> float:
    """Kernel-side DDR streaming rate for the 3-stream add (2 in, 1 out)."""
    broker, tr = _single_vm_rig(cfg)
    ctx = _Ctx(cfg)
    size = 4 * n
    a = tr.alloc(size).unwrap()
    b = tr.alloc(size).unwrap()
    c = tr.alloc(size).unwrap()
    tr.reprogram(ctx.build_bitfile("vec_add", tr.prr, 1)).unwrap()
    for i, value in enumerate((a.base_addr, b.base_addr, c.base_addr, n)):
        tr.reg_write(REG_ARG0 + i, value).unwrap()
    t0 = tr.reg_write(REG_START, 1).t_complete
    done = tr.wait_irq()
    return (12 * n) / (done.t_complete - t0)


# ---------------------------------------------------------------------------
# attack scenarios

def _attack_config(base: ScenarioConfig | None, guard: bool) -> ScenarioConfig:
    from .config import parse_config
    cfg = scenario_copy(base, range_guard=guard) if base is not None \
        else parse_config(f"[device]\nrange_guard = {'on' if guard else 'off'}\n")
    cfg.vms = {}
    return cfg


def attack(scenario: str, guard: bool = False,
           base: ScenarioConfig | None = None, mode: str = "inproc") -> dict:
    from .config import parse_script
    cfg = _attack_config(base, guard)
    if scenario == "cross_reprogram":
        cfg.vms = {
            0: parse_script(["sleep 1e-3", "reprogram_prr vec_add 1"]),
            1: parse_script(["alloc d 1MiB", "write d 0 1MiB fill 7",
                             "reprogram vec_add",
                             "set_args @d @d @d 1024", "launch", "wait",
                             "sleep 0.2", "read d 0 4096"]),
        }
        out = run_scenario(cfg, mode=mode)
        thief, victim = out.envs[0], out.envs[1]
        denied = ("reprogram", "PermissionDenied") in thief.outcomes
        victim_clean = all(o in ("ok", "skipped")
                           for _, o in victim.outcomes) \
            and not victim.corruptions and victim.irq_errors == [False]
        return {"scenario": scenario, "guard": guard,
                "passed": denied and victim_clean,
                "denied": denied, "victim_clean": victim_clean}
    if scenario == "cross_read":
        cfg.vms = {
            0: parse_script(["sleep 1e-3", "steal_read 1 d 0 64",
                             "steal_free 1 d"]),
            1: parse_script(["alloc d 1MiB", "write d 0 1MiB fill 9",
                             "sleep 0.2", "read d 0 1MiB"]),
        }
        out = run_scenario(cfg, mode=mode)
        thief, victim = out.envs[0], out.envs[1]
        read_denied = ("steal_read", "PermissionDenied") in thief.outcomes
        free_denied = ("steal_free", "PermissionDenied") in thief.outcomes
        victim_clean = not victim.corruptions
        return {"scenario": scenario, "guard": guard,
                "passed": read_denied and free_denied and victim_clean,
                "denied": read_denied and free_denied,
                "victim_clean": victim_clean}
    if scenario == "hw_corrupt":
        cfg.vms = {
            0: parse_script(["reprogram rogue_writer", "sleep 1e-3",
                             "set_args @@1.tgt 4096 85", "launch", "wait"]),
            1: parse_script(["alloc tgt 1MiB", "write tgt 0 4096 fill 170",
                             "sleep 0.5", "read tgt 0 4096"]),
        }
        out = run_scenario(cfg, mode=mode)
        attacker, victim = out.envs[0], out.envs[1]
        corrupted = bool(victim.corruptions)
        faulted = attacker.irq_errors == [True]
        passed = (not guard and corrupted and attacker.irq_errors == [False]) \
            or (guard and not corrupted and faulted)
        return {"scenario": scenario, "guard": guard, "passed": passed,
                "corrupted": corrupted, "guard_faulted": faulted}
    raise ConfigError(f"unknown attack scenario {scenario!r}")


# ---------------------------------------------------------------------------
# multiplexing economics

_MUX_SCRIPT = ["reprogram vec_add",
               "alloc a 1MiB", "alloc b 1MiB", "alloc c 1MiB",
               "write a 0 1MiB random", "write b 0 1MiB random",
               "set_args @a @b @c 262144",
               "repeat 4", "launch", "wait", "end",
               "read c 0 1MiB"]


def multiplexing_win(n_vms: int, base: ScenarioConfig | None = None) -> dict:
    """Makespan of N tenants sharing regions vs. the same tenants taking
    serialized whole-device turns (each reprogram then costing the full
    reconfiguration time)."""
    from .config import parse_script
    cfg = _attack_config(base, guard=False)
    script = parse_script(_MUX_SCRIPT)
    cfg.vms = {vm: script for vm in range(n_vms)}
    shared = run_scenario(cfg).final_time

    serial_total = 0.0
    for vm in range(n_vms):
        solo = scenario_copy(cfg, full_device_reconfig=True)
        solo.vms = {0: script}
        serial_total += run_scenario(solo).final_time
    return {"n_vms": n_vms, "shared_makespan": shared,
            "serialized_makespan": serial_total,
            "win": shared < serial_total}
