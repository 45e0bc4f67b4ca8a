"""Guest-side stack.

Three thin layers, mirroring how a VM would see the device:

* a transport: synchronous request/reply against a broker, either linked
  in-process (InProcTransport pumps the shared event queue until its own
  reply lands) or over the wire protocol (see wire.WireTransport);
* the MMD layer: the device file split into the kernel-cra, memory, and
  reprogram interfaces with the eight basic operators;
* a minimal runtime: buffers, kernel args, launch, wait.

Buffer bounds are validated locally before anything is sent; the broker
re-validates authoritatively.
"""

from __future__ import annotations

import itertools

from .device import REG_ARG0, REG_COUNT, REG_START
from .errors import (ClosedInterface, DeadlockDetected, FrozenAccess,
                     KernelArgError, NoKernelLoaded, NoSuchInterface,
                     OutOfBounds, Unsupported)

IFACE_NAMES = ("kernel-cra", "memory", "reprogram")
PASS_THROUGH = {"kernel-cra"}


class InProcTransport:
    """Synchronous calls against a broker sharing our process.

    Each call submits a split-phase broker op and pumps the event queue
    until its own reply arrives; other sessions' events run as a side
    effect, which is what makes multi-guest unit tests behave.
    """

    def __init__(self, broker):
        self.broker = broker
        self.session = None
        self.prr = None

    def _sync(self, submit, vm_id=None):
        box = []
        submit(box.append)
        while not box:
            if not self.broker.queue.step():
                raise DeadlockDetected([vm_id if vm_id is not None else -1])
        return box[0]

    def attach(self, vm_id):
        result = self._sync(lambda r: self.broker.attach_vm(vm_id, r), vm_id)
        if result.ok:
            self.session = result.value
            self.prr = result.value.prr
        return result

    def detach(self):
        session, self.session = self.session, None
        return self._sync(lambda r: self.broker.detach_vm(session, r))

    def alloc(self, size):
        return self._sync(lambda r: self.broker.handle_alloc(self.session, size, r))

    def free(self, handle_id):
        return self._sync(lambda r: self.broker.handle_free(self.session, handle_id, r))

    def write_buf(self, handle_id, offset, data):
        return self._sync(lambda r: self.broker.handle_write_buffer(
            self.session, handle_id, offset, data, r))

    def read_buf(self, handle_id, offset, length):
        return self._sync(lambda r: self.broker.handle_read_buffer(
            self.session, handle_id, offset, length, r))

    def reprogram(self, bitfile_bytes):
        return self._sync(lambda r: self.broker.handle_reprogram(
            self.session, bitfile_bytes, r))

    def get_info(self, iface_name):
        return self._sync(lambda r: self.broker.handle_get_info(
            self.session, iface_name, r))

    def reg_write(self, reg_index, value):
        return self._sync(lambda r: self.broker.handle_reg_write(
            self.session, reg_index, value, r))

    def reg_read(self, reg_index):
        return self._sync(lambda r: self.broker.handle_reg_read(
            self.session, reg_index, r))

    def wait_irq(self):
        vm = self.session.vm_id if self.session else None
        return self._sync(lambda r: self.broker.handle_wait_irq(self.session, r), vm)

    def sleep(self, seconds):
        return self._sync(lambda r: self.broker.handle_sleep(
            self.session, seconds, r))


class MmdInterface:
    def __init__(self, name: str, handle: int):
        self.name = name
        self.handle = handle
        self.kind = "pass_through" if name in PASS_THROUGH else "forwarded"
        self.open = True


class GuestBuffer:
    def __init__(self, handle_id: int, base_addr: int, size: int):
        self.handle_id = handle_id
        self.base_addr = base_addr
        self.size = size

    def _check(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise OutOfBounds(
                f"[{offset}, {offset + length}) outside {self.size}-byte buffer")


class GuestDevice:
    """Device-file abstraction plus the MMD operator set."""

    def __init__(self, transport, vm_id: int):
        self.transport = transport
        self.vm_id = vm_id
        self.prr = None
        self._ifaces: dict = {}
        self._iface_ids = itertools.count(1)
        self.irq_handler = None
        self.status_handler = None
        self._req_ids = itertools.count(1)

    def attach(self):
        self.transport.attach(self.vm_id).unwrap()
        self.prr = self.transport.prr

    def detach(self):
        for iface in list(self._ifaces.values()):
            iface.open = False
        self._ifaces.clear()
        self.transport.detach().unwrap()

    def _live(self, iface: MmdInterface) -> MmdInterface:
        if not iface.open or iface.handle not in self._ifaces:
            raise ClosedInterface(f"interface {iface.name!r} is closed")
        return iface

    def _notify_status(self, op: str) -> int:
        req_id = next(self._req_ids)
        if self.status_handler is not None:
            self.status_handler(req_id, op)
        return req_id

    # -- the eight operators -------------------------------------------------

    def mmd_open(self, name: str) -> MmdInterface:
        if name not in IFACE_NAMES:
            raise NoSuchInterface(f"no interface named {name!r}")
        iface = MmdInterface(name, next(self._iface_ids))
        self._ifaces[iface.handle] = iface
        return iface

    def mmd_close(self, iface: MmdInterface) -> None:
        self._live(iface)
        iface.open = False
        del self._ifaces[iface.handle]

    def mmd_read(self, iface: MmdInterface, addr, length: int = 0):
        self._live(iface)
        if iface.name == "kernel-cra":
            value, _outcome = self.transport.reg_read(addr).unwrap()
            return value
        if iface.name == "memory":
            handle_id, offset = addr
            data = self.transport.read_buf(handle_id, offset, length).unwrap()
            self._notify_status("read")
            return data
        raise Unsupported("reprogram interface has no read")

    def mmd_write(self, iface: MmdInterface, addr, data):
        self._live(iface)
        if iface.name == "kernel-cra":
            return self.transport.reg_write(addr, data).unwrap()
        if iface.name == "memory":
            handle_id, offset = addr
            self.transport.write_buf(handle_id, offset, data).unwrap()
            self._notify_status("write")
            return "ok"
        raise Unsupported("reprogram interface has no write")

    def mmd_get_info(self, iface: MmdInterface) -> dict:
        self._live(iface)
        return self.transport.get_info(iface.name).unwrap()

    def mmd_set_irq(self, iface: MmdInterface, handler) -> None:
        self._live(iface)
        if iface.name == "reprogram":
            raise Unsupported("no interrupt handler on the reprogram interface")
        self.irq_handler = handler

    def mmd_set_status(self, iface: MmdInterface, handler) -> None:
        self._live(iface)
        if iface.name == "reprogram":
            raise Unsupported("no status handler on the reprogram interface")
        self.status_handler = handler

    def mmd_reprogram(self, iface: MmdInterface, bitfile_bytes: bytes) -> None:
        self._live(iface)
        if iface.name != "reprogram":
            raise Unsupported(f"cannot reprogram through {iface.name!r}")
        self.transport.reprogram(bitfile_bytes).unwrap()
        self._notify_status("reprogram")


class Runtime:
    """Buffer/launch API over the MMD operators, standing in for a real
    accelerator runtime."""

    def __init__(self, device: GuestDevice):
        self.device = device
        self.cra = device.mmd_open("kernel-cra")
        self.mem = device.mmd_open("memory")
        self.prog = device.mmd_open("reprogram")
        self._buffers: dict = {}
        self._pending_launches = 0

    def create_buffer(self, size: int) -> GuestBuffer:
        handle = self.device.transport.alloc(size).unwrap()
        buf = GuestBuffer(handle.handle_id, handle.base_addr, handle.size)
        self._buffers[buf.handle_id] = buf
        return buf

    def release_buffer(self, buf: GuestBuffer) -> None:
        self.device.transport.free(buf.handle_id).unwrap()
        self._buffers.pop(buf.handle_id, None)

    def write_buffer(self, buf: GuestBuffer, offset: int, data: bytes) -> None:
        buf._check(offset, len(data))
        self.device.mmd_write(self.mem, (buf.handle_id, offset), data)

    def read_buffer(self, buf: GuestBuffer, offset: int, length: int) -> bytes:
        buf._check(offset, length)
        return self.device.mmd_read(self.mem, (buf.handle_id, offset), length)

    def load_kernel(self, bitfile_bytes: bytes) -> None:
        self.device.mmd_reprogram(self.prog, bitfile_bytes)

    def set_kernel_args(self, args) -> None:
        if len(args) > REG_COUNT - REG_ARG0:
            raise KernelArgError(f"{len(args)} args exceed the register bank")
        for i, arg in enumerate(args):
            value = arg.base_addr if isinstance(arg, GuestBuffer) else int(arg)
            self.device.mmd_write(self.cra, REG_ARG0 + i, value)

    def launch(self) -> None:
        outcome = self.device.mmd_write(self.cra, REG_START, 1)
        if outcome == "frozen":
            raise FrozenAccess("region is reconfiguring")
        # A loaded kernel consumes the start bit; a bare region latches it.
        if self.device.mmd_read(self.cra, REG_START) == 1:
            raise NoKernelLoaded("start bit had no effect")
        self._pending_launches += 1

    def wait(self):
        """Block until the next completion interrupt for this session.
        Returns the completion payload, or None when nothing was pending."""
        if self._pending_launches == 0:
            return None
        payload = self.device.transport.wait_irq().unwrap()
        self._pending_launches -= 1
        if self.device.irq_handler is not None:
            self.device.irq_handler(payload)
        return payload

    def sleep(self, seconds: float) -> None:
        self.device.transport.sleep(seconds).unwrap()
