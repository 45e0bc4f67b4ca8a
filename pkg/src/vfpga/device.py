"""Simulated FPGA board.

One shell with a configurable number of partial-reconfiguration region
slots, a single control block (so one reconfiguration in flight
device-wide), a DMA engine, device DDR, and an IRQ bank that funnels all
region completions into one MSI line.

All timing flows through the shared EventQueue; nothing here sleeps or
looks at wall-clock time. Callers submit an operation and receive a
completion callback at some later virtual time.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field

from . import bitstream, kernels
from .errors import (Busy, ConfigError, DmaFault, GuardFault,
                     IncompatibleBitfile, InvalidRegion, KernelArgError)
from .sim import EventQueue

GIB = 1 << 30
MIB = 1 << 20

# Register map, identical for every kernel kind.
REG_START = 0
REG_DONE = 1          # bit 0: done, bit 1: error
REG_ARG0 = 2
REG_COUNT = REG_ARG0 + bitstream.ARG_SLOTS

DONE_BIT = 0x1
ERROR_BIT = 0x2


@dataclass
class CostModel:
    clock_hz: float = 200e6
    dma_bandwidth: float = 6.0 * GIB
    dma_latency: float = 10e-6
    pr_bandwidth: float = 40.0 * MIB   # 4 MiB partial image in ~0.1 s
    full_reconfig_time: float = 2.5
    sw_call_overhead: float = 0.0      # per forwarded broker call
    staging_copy_bandwidth: float = 1.5 * GIB

    def validate(self) -> None:
        for name in ("clock_hz", "dma_bandwidth", "dma_latency",
                     "pr_bandwidth", "full_reconfig_time",
                     "staging_copy_bandwidth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"cost model field {name} must be positive")
        if self.sw_call_overhead < 0:
            raise ConfigError("sw_call_overhead must be non-negative")


@dataclass
class DeviceConfig:
    prr_count: int = 4
    ddr_size: int = 2 * GIB
    device_id: int = 1
    shell_id: int = 1
    range_guard: bool = False
    # When set, every reconfiguration costs full_reconfig_time regardless
    # of image size: the whole-device baseline against which region
    # sharing is compared.
    full_device_reconfig: bool = False
    cost: CostModel = field(default_factory=CostModel)

    def validate(self) -> None:
        if not 1 <= self.prr_count <= 8:
            raise ConfigError(f"prr_count {self.prr_count} outside 1..8")
        if self.ddr_size <= 0:
            raise ConfigError("ddr_size must be positive")
        if self.range_guard and self.ddr_size % (self.prr_count * MIB):
            raise ConfigError(
                "range_guard needs ddr_size divisible into whole-MiB "
                f"region shares, got {self.ddr_size} over {self.prr_count}")
        self.cost.validate()


class PrrState(enum.Enum):
    EMPTY = "empty"
    CONFIGURING = "configuring"
    READY = "ready"
    RUNNING = "running"


class DeviceMemory:
    """Sparse byte-addressable DDR backed by a page dict."""

    PAGE = 4096

    def __init__(self, size: int):
        self.size = size
        self._pages: dict = {}

    def _check(self, addr: int, n: int) -> None:
        if n < 0 or addr < 0 or addr + n > self.size:
            raise DmaFault(f"access [{addr:#x}, {addr + n:#x}) outside "
                           f"{self.size:#x}-byte DDR")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        out = bytearray(n)
        pos = 0
        while pos < n:
            page, off = divmod(addr + pos, self.PAGE)
            chunk = min(n - pos, self.PAGE - off)
            data = self._pages.get(page)
            if data is not None:
                out[pos:pos + chunk] = data[off:off + chunk]
            pos += chunk
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        pos = 0
        while pos < len(data):
            page, off = divmod(addr + pos, self.PAGE)
            chunk = min(len(data) - pos, self.PAGE - off)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(self.PAGE)
            buf[off:off + chunk] = data[pos:pos + chunk]
            pos += chunk

    def zero_range(self, addr: int, n: int) -> None:
        """Clear [addr, addr+n); page-aligned ranges just drop pages."""
        self._check(addr, n)
        pos = 0
        while pos < n:
            page, off = divmod(addr + pos, self.PAGE)
            chunk = min(n - pos, self.PAGE - off)
            if off == 0 and chunk == self.PAGE:
                self._pages.pop(page, None)
            else:
                buf = self._pages.get(page)
                if buf is not None:
                    buf[off:off + chunk] = bytes(chunk)
            pos += chunk

    def digest(self) -> str:
        """Content hash; all-zero pages do not affect it."""
        h = hashlib.sha256(struct.pack("<Q", self.size))
        for page in sorted(self._pages):
            buf = self._pages[page]
            if any(buf):
                h.update(struct.pack("<Q", page))
                h.update(buf)
        return h.hexdigest()


class PrrSlot:
    def __init__(self, index: int):
        self.index = index
        self.state = PrrState.EMPTY
        self.kernel = None
        self.regs = [0] * REG_COUNT
        # Bumped whenever the slot is torn down; in-flight completion
        # events compare it to ignore stale work.
        self.epoch = 0
        self.last_run_seconds = 0.0

    @property
    def frozen(self) -> bool:
        return self.state is PrrState.CONFIGURING


class IrqBank:
    def __init__(self, prr_count: int, queue: EventQueue, deliver):
        self._bits = (1 << prr_count) - 1
        self.status = 0
        self.mask = 0
        self.msi_pending = False
        self._queue = queue
        self._deliver = deliver

    def raise_irq(self, prr_id: int) -> None:
        self.status |= (1 << prr_id) & self._bits
        self._maybe_fire()

    def read_status(self) -> int:
        return self.status

    def write_mask(self, mask: int) -> None:
        self.mask = mask & self._bits
        # Unmasking with unacked status bits re-raises the line.
        self._maybe_fire()

    def ack(self, prr_id: int) -> None:
        self.status &= ~(1 << prr_id)

    def _maybe_fire(self) -> None:
        if self.msi_pending or not (self.status & ~self.mask & self._bits):
            return
        self.msi_pending = True
        self._queue.schedule_after(0.0, self._fire)

    def _fire(self) -> None:
        self.msi_pending = False
        self._deliver()


class _PrrMemPort:
    """Memory accessor handed to a running kernel; applies the guard."""

    def __init__(self, device: "Device", prr_id: int):
        self._device = device
        self._prr_id = prr_id

    def _guard(self, addr: int, n: int) -> None:
        rng = self._device.guard_range(self._prr_id)
        if rng is None:
            return
        base, limit = rng
        if addr < base or addr + n > limit:
            raise GuardFault(
                f"region {self._prr_id} access [{addr:#x}, {addr + n:#x}) "
                f"outside guard [{base:#x}, {limit:#x})")

    def read(self, addr: int, n: int) -> bytes:
        self._device.mem._check(addr, n)
        self._guard(addr, n)
        return self._device.mem.read(addr, n)

    def write(self, addr: int, data: bytes) -> None:
        self._device.mem._check(addr, len(data))
        self._guard(addr, len(data))
        self._device.mem.write(addr, data)


class Device:
    def __init__(self, config: DeviceConfig, queue: EventQueue,
                 msi_handler=None, anomaly=None):
        config.validate()
        self.config = config
        self.cost = config.cost
        self.queue = queue
        self.mem = DeviceMemory(config.ddr_size)
        self.slots = [PrrSlot(i) for i in range(config.prr_count)]
        self.irq = IrqBank(config.prr_count, queue, self._deliver_msi)
        self._msi_handler = msi_handler
        self._anomaly = anomaly
        self._reconfiguring = False

    def set_msi_handler(self, handler) -> None:
        self._msi_handler = handler

    def now(self) -> float:
        return self.queue.now

    def _note(self, name: str, **fields) -> None:
        if self._anomaly is not None:
            self._anomaly(name, **fields)

    def _slot(self, prr_id: int) -> PrrSlot:
        if not 0 <= prr_id < self.config.prr_count:
            raise InvalidRegion(f"region {prr_id} outside 0..{self.config.prr_count - 1}")
        return self.slots[prr_id]

    def guard_range(self, prr_id: int):
        """(base, limit) for the region when the guard is on, else None.

        DDR is split into equal per-region shares; this is the simplest
        instance of restricting each region to its own memory area.
        """
        if not self.config.range_guard:
            return None
        share = self.config.ddr_size // self.config.prr_count
        return (prr_id * share, (prr_id + 1) * share)

    # -- partial reconfiguration -------------------------------------------

    def pr_reconfigure(self, prr_id: int, bitfile_bytes: bytes, on_done=None) -> None:
        """Validate and start reconfiguring. Raises synchronously on any
        validation failure, leaving the slot untouched; otherwise freezes
        the slot and schedules completion."""
        slot = self._slot(prr_id)
        if slot.state is PrrState.CONFIGURING:
            raise Busy(f"region {prr_id} already configuring")
        if slot.state is PrrState.RUNNING:
            raise Busy(f"region {prr_id} has a kernel running")
        if self._reconfiguring:
            raise Busy("control block busy with another reconfiguration")
        bitfile = bitstream.decode_bitfile(bitfile_bytes)
        if not bitstream.cb_compatibility_check(
                bitfile, self.config.device_id, self.config.shell_id):
            raise IncompatibleBitfile(
                f"bitfile for device {bitfile.header.device_id}/shell "
                f"{bitfile.header.shell_id}, board is "
                f"{self.config.device_id}/{self.config.shell_id}")
        slot.state = PrrState.CONFIGURING
        slot.epoch += 1
        self._reconfiguring = True
        if self.config.full_device_reconfig:
            duration = self.cost.full_reconfig_time
        else:
            duration = len(bitfile_bytes) / self.cost.pr_bandwidth
        self.queue.schedule_after(
            duration, self._finish_reconfigure, prr_id, bitfile.descriptor,
            slot.epoch, on_done)

    def _finish_reconfigure(self, prr_id, descriptor, epoch, on_done) -> None:
        slot = self.slots[prr_id]
        self._reconfiguring = False
        if slot.epoch != epoch or slot.state is not PrrState.CONFIGURING:
            # slot was scrubbed out from under the flight; drop the result
            if on_done is not None:
                on_done(prr_id, False)
            return
        slot.kernel = descriptor
        slot.regs = [0] * REG_COUNT
        slot.state = PrrState.READY
        if on_done is not None:
            on_done(prr_id, True)

    def scrub(self, prr_id: int) -> None:
        """Drop the loaded kernel and zero the registers (tenant change)."""
        slot = self._slot(prr_id)
        slot.epoch += 1
        slot.kernel = None
        slot.regs = [0] * REG_COUNT
        slot.state = PrrState.EMPTY

    # -- kernel register file ----------------------------------------------

    def write_kernel_register(self, prr_id: int, reg_index: int, value: int) -> str:
        """Returns "ok" or "frozen"; frozen writes are dropped."""
        slot = self._slot(prr_id)
        if not 0 <= reg_index < REG_COUNT:
            raise InvalidRegion(f"register {reg_index} outside 0..{REG_COUNT - 1}")
        if slot.frozen:
            self._note("frozen_write", prr=prr_id, reg=reg_index)
            return "frozen"
        value &= (1 << 64) - 1
        slot.regs[reg_index] = value
        if reg_index == REG_START and value & 1:
            self._try_start(slot)
        return "ok"

    def read_kernel_register(self, prr_id: int, reg_index: int) -> tuple:
        """Returns (value, "ok") or (0, "frozen")."""
        slot = self._slot(prr_id)
        if not 0 <= reg_index < REG_COUNT:
            raise InvalidRegion(f"register {reg_index} outside 0..{REG_COUNT - 1}")
        if slot.frozen:
            self._note("frozen_read", prr=prr_id, reg=reg_index)
            return 0, "frozen"
        return slot.regs[reg_index], "ok"

    def _try_start(self, slot: PrrSlot) -> None:
        if slot.kernel is None:
            return  # no kernel: the bit is stored but nothing launches
        slot.regs[REG_START] = 0
        if slot.state is not PrrState.READY:
            return  # a run is already in flight; the start is dropped
        args = kernels.bind_args(slot.kernel, slot.regs[REG_ARG0:])
        cycles = kernels.cycles_for(slot.kernel, args)
        slot.state = PrrState.RUNNING
        slot.regs[REG_DONE] = 0
        slot.last_run_seconds = cycles / self.cost.clock_hz
        self.queue.schedule_after(slot.last_run_seconds,
                                  self._finish_kernel, slot.index, slot.epoch, args)

    def _finish_kernel(self, prr_id: int, epoch: int, args: dict) -> None:
        slot = self.slots[prr_id]
        if slot.epoch != epoch or slot.state is not PrrState.RUNNING:
            return  # slot was reconfigured or scrubbed mid-flight
        error = False
        try:
            kernels.execute(slot.kernel, args, _PrrMemPort(self, prr_id))
        except (GuardFault, DmaFault, KernelArgError) as exc:
            error = True
            self._note("kernel_fault", prr=prr_id, kind=exc.kind, detail=str(exc))
        slot.state = PrrState.READY
        slot.regs[REG_DONE] = DONE_BIT | (ERROR_BIT if error else 0)
        self.irq.raise_irq(prr_id)

    # -- DMA -----------------------------------------------------------------

    def dma_transfer(self, direction: str, device_addr: int, data: bytes = b"",
                     length: int = 0, on_done=None) -> None:
        """h2d writes `data` at device_addr; d2h reads `length` bytes and
        passes them to on_done. Bounds are checked upfront: a faulting
        transfer never moves a byte."""
        if direction == "h2d":
            length = len(data)
        elif direction != "d2h":
            raise ValueError(f"direction {direction!r}")
        self.mem._check(device_addr, length)
        duration = self.cost.dma_latency + length / self.cost.dma_bandwidth
        self.queue.schedule_after(duration, self._finish_dma, direction,
                                  device_addr, bytes(data), length, on_done)

    def _finish_dma(self, direction, device_addr, data, length, on_done) -> None:
        result = None
        if direction == "h2d":
            if data:
                self.mem.write(device_addr, data)
        else:
            result = self.mem.read(device_addr, length)
        if on_done is not None:
            on_done(result)

    # -- IRQ bank --------------------------------------------------------------

    def read_irq_status(self) -> int:
        return self.irq.read_status()

    def write_irq_mask(self, mask: int) -> None:
        self.irq.write_mask(mask)

    def ack_irq(self, prr_id: int) -> None:
        self._slot(prr_id)
        self.irq.ack(prr_id)

    def _deliver_msi(self) -> None:
        if self._msi_handler is not None:
            self._msi_handler()
