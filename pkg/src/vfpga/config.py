"""Scenario configuration.

Flat sectioned key=value text, parsed strictly: unknown sections, unknown
keys, and malformed values are configuration errors, so two runs that
accept the same file are running the same experiment.

Sections:

    [device]    board shape and cost model
    [scenario]  seed, bitfile image size, broker policy
    [vm.N]      one workload script per VM; every non-blank line is an op

Script ops (sizes accept KiB/MiB/GiB suffixes):

    alloc NAME SIZE
    free NAME
    write NAME OFFSET LEN fill VALUE
    write NAME OFFSET LEN random
    read NAME OFFSET LEN
    reprogram KIND [CPI]
    reprogram_prr KIND PRR [CPI]
    reprogram_file PATH
    set_args ARG...          @NAME = own buffer addr, @@VM.NAME = foreign
    launch
    wait
    sleep SECONDS
    steal_read VM NAME OFFSET LEN
    steal_free VM NAME
    repeat N ... end         (unrolled at parse time)
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

from .bitstream import KernelKind
from .device import CostModel, DeviceConfig
from .errors import ConfigError, EncodingError

_SIZE_RE = re.compile(r"^(\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)(KiB|MiB|GiB)?$")
_MULT = {None: 1, "KiB": 1 << 10, "MiB": 1 << 20, "GiB": 1 << 30}


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"bad size {text!r}")
    value = float(m.group(1)) * _MULT[m.group(2)]
    if value != int(value):
        raise ConfigError(f"size {text!r} is not a whole number of bytes")
    return int(value)


def parse_rate(text: str) -> float:
    """Bandwidths: plain floats or size-suffixed bytes per second."""
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"bad rate {text!r}")
    return float(m.group(1)) * _MULT[m.group(2)]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple = ()


# op name -> (min argument count, max argument count)
_OP_ARITY = {
    "alloc": (2, 2), "free": (1, 1), "write": (4, 5), "read": (3, 3),
    "reprogram": (1, 2), "reprogram_prr": (2, 3), "reprogram_file": (1, 1),
    "set_args": (1, 8), "launch": (0, 0), "wait": (0, 0), "sleep": (1, 1),
    "steal_read": (4, 4), "steal_free": (2, 2),
}


def parse_script(lines) -> tuple:
    ops: list = []
    stack = [(None, ops)]
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        name, args = tokens[0], tokens[1:]
        if name == "repeat":
            if len(args) != 1 or not args[0].isdigit():
                raise ConfigError(f"bad repeat count in {line!r}")
            block: list = []
            stack.append((int(args[0]), block))
            continue
        if name == "end":
            if len(stack) == 1:
                raise ConfigError("'end' without matching 'repeat'")
            count, block = stack.pop()
            stack[-1][1].extend(block * count)
            continue
        if name not in _OP_ARITY:
            raise ConfigError(f"unknown script op {name!r}")
        lo, hi = _OP_ARITY[name]
        if not lo <= len(args) <= hi:
            raise ConfigError(f"{name!r} takes {lo}..{hi} args, got {len(args)}")
        stack[-1][1].append(_build_op(name, args))
    if len(stack) != 1:
        raise ConfigError("unterminated 'repeat' block")
    return tuple(ops)


def _build_op(name: str, args: list) -> Op:
    try:
        if name == "alloc":
            return Op("alloc", (args[0], parse_size(args[1])))
        if name == "free":
            return Op("free", (args[0],))
        if name == "write":
            buf, offset, length = args[0], parse_size(args[1]), parse_size(args[2])
            if args[3] == "fill":
                if len(args) != 5:
                    raise ConfigError("write ... fill needs a byte value")
                value = int(args[4])
                if not 0 <= value <= 255:
                    raise ConfigError(f"fill value {value} outside 0..255")
                return Op("write", (buf, offset, length, "fill", value))
            if args[3] == "random" and len(args) == 4:
                return Op("write", (buf, offset, length, "random"))
            raise ConfigError(f"bad write mode {args[3]!r}")
        if name == "read":
            return Op("read", (args[0], parse_size(args[1]), parse_size(args[2])))
        if name == "reprogram":
            kind = KernelKind.from_label(args[0])
            cpi = int(args[1]) if len(args) > 1 else None
            return Op("reprogram", (kind, cpi))
        if name == "reprogram_prr":
            kind = KernelKind.from_label(args[0])
            cpi = int(args[2]) if len(args) > 2 else None
            return Op("reprogram_prr", (kind, int(args[1]), cpi))
        if name == "reprogram_file":
            return Op("reprogram_file", (args[0],))
        if name == "set_args":
            return Op("set_args", tuple(args))
        if name == "launch":
            return Op("launch")
        if name == "wait":
            return Op("wait")
        if name == "sleep":
            return Op("sleep", (float(args[0]),))
        if name == "steal_read":
            return Op("steal_read", (int(args[0]), args[1],
                                     parse_size(args[2]), parse_size(args[3])))
        if name == "steal_free":
            return Op("steal_free", (int(args[0]), args[1]))
    except ConfigError:
        raise
    except (ValueError, EncodingError) as exc:
        raise ConfigError(f"bad {name!r} op: {exc}") from None
    raise AssertionError(name)


@dataclass
class ScenarioConfig:
    device: DeviceConfig = field(default_factory=DeviceConfig)
    seed: int = 1
    image_size: int = 4 << 20
    scrub_on_detach: bool = True
    reconfig_queue_depth: int = 16
    mmu_backend: str = "array"
    vms: dict = field(default_factory=dict)   # vm_id -> tuple of Op

    def validate(self) -> None:
        self.device.validate()
        if self.mmu_backend not in ("array", "linked"):
            raise ConfigError(f"unknown mmu_backend {self.mmu_backend!r}")
        if self.reconfig_queue_depth < 1:
            raise ConfigError("reconfig_queue_depth must be >= 1")
        if self.image_size < 64:
            raise ConfigError("image_size too small for a bitfile")
        for vm_id in self.vms:
            if vm_id < 0:
                raise ConfigError(f"negative vm id {vm_id}")


_DEVICE_KEYS = {
    "prr_count": ("prr_count", int),
    "ddr_size": ("ddr_size", parse_size),
    "device_id": ("device_id", int),
    "shell_id": ("shell_id", int),
    "range_guard": ("range_guard", parse_bool),
    "full_device_reconfig": ("full_device_reconfig", parse_bool),
}
_COST_KEYS = {
    "clock_hz": float,
    "dma_bandwidth": parse_rate,
    "dma_latency": float,
    "pr_bandwidth": parse_rate,
    "full_reconfig_time": float,
    "sw_call_overhead": float,
    "staging_copy_bandwidth": parse_rate,
}
_SCENARIO_KEYS = {
    "seed": int,
    "image_size": parse_size,
    "scrub_on_detach": parse_bool,
    "reconfig_queue_depth": int,
    "mmu_backend": str,
}


def parse_config(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig(device=DeviceConfig(cost=CostModel()))
    section = None
    vm_lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section.startswith("vm."):
                suffix = section[3:]
                if not suffix.isdigit():
                    raise ConfigError(f"line {lineno}: bad vm section {section!r}")
                vm_lines.setdefault(int(suffix), [])
            elif section not in ("device", "scenario"):
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            continue
        if section is None:
            raise ConfigError(f"line {lineno}: content before any section")
        if section.startswith("vm."):
            vm_lines[int(section[3:])].append(line)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if section == "device":
                if key in _DEVICE_KEYS:
                    attr, conv = _DEVICE_KEYS[key]
                    setattr(cfg.device, attr, conv(value))
                elif key in _COST_KEYS:
                    setattr(cfg.device.cost, key, _COST_KEYS[key](value))
                else:
                    raise ConfigError(f"unknown [device] key {key!r}")
            else:
                if key not in _SCENARIO_KEYS:
                    raise ConfigError(f"unknown [scenario] key {key!r}")
                setattr(cfg, key, _SCENARIO_KEYS[key](value))
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for vm_id, lines in vm_lines.items():
        cfg.vms[vm_id] = parse_script(lines)
    cfg.validate()
    return cfg


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _render_op(op: Op) -> str:
    parts = [op.op]
    for arg in op.args:
        if isinstance(arg, KernelKind):
            parts.append(arg.label)
        elif arg is None:
            continue
        else:
            parts.append(str(arg))
    return " ".join(parts)


def render_config(cfg: ScenarioConfig) -> str:
    """Canonical text form; equal configs render identically."""
    dev, cost = cfg.device, cfg.device.cost
    lines = ["[device]"]
    for key, (attr, _) in _DEVICE_KEYS.items():
        value = getattr(dev, attr)
        lines.append(f"{key} = {'on' if value is True else 'off' if value is False else value}")
    for key in _COST_KEYS:
        lines.append(f"{key} = {getattr(cost, key)!r}")
    lines.append("")
    lines.append("[scenario]")
    lines.append(f"seed = {cfg.seed}")
    lines.append(f"image_size = {cfg.image_size}")
    lines.append(f"scrub_on_detach = {'on' if cfg.scrub_on_detach else 'off'}")
    lines.append(f"reconfig_queue_depth = {cfg.reconfig_queue_depth}")
    lines.append(f"mmu_backend = {cfg.mmu_backend}")
    for vm_id in sorted(cfg.vms):
        lines.append("")
        lines.append(f"[vm.{vm_id}]")
        lines.extend(_render_op(op) for op in cfg.vms[vm_id])
    return "\n".join(lines) + "\n"


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()[:16]


def scenario_copy(cfg: ScenarioConfig, **device_overrides) -> ScenarioConfig:
    """Deep-enough copy with cost/device field overrides applied."""
    cost_fields = {k: v for k, v in device_overrides.items()
                   if hasattr(cfg.device.cost, k)}
    dev_fields = {k: v for k, v in device_overrides.items()
                  if k not in cost_fields}
    device = replace(cfg.device, cost=replace(cfg.device.cost, **cost_fields),
                     **dev_fields)
    return ScenarioConfig(device=device, seed=cfg.seed,
                          image_size=cfg.image_size,
                          scrub_on_detach=cfg.scrub_on_detach,
                          reconfig_queue_depth=cfg.reconfig_queue_depth,
                          mmu_backend=cfg.mmu_backend,
                          vms=dict(cfg.vms))
