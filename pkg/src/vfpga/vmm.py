"""Hypervisor-side broker.

Owns the device model, the segment pool, and the trace. Guests reach the
device only through broker operations:

* forwarded (mediated) ops: attach/detach, alloc/free, buffer read/write,
  reprogram, get_info, sleep. Each costs sw_call_overhead of virtual time
  before its effect, plus whatever the operation itself takes.
* pass-through ops: kernel register read/write on the session's own
  region. Zero mediation cost, but still traced.

Every operation is split-phase: the caller provides a reply callback and
the broker invokes it (via the event queue, never synchronously) with an
OpResult when the operation completes. The synchronous guest library and
the wire server are both thin shims over this interface.

Interrupts: the device's single MSI line lands in _route_msi, which reads
the status register, masks each bit while its session is serviced, acks,
and unmasks. Completions for regions with no attached session are acked,
left masked, and logged as orphans.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field as dc_field
from functools import partial

from . import bitstream, mmu
from .device import (ERROR_BIT, REG_COUNT, REG_DONE, Device, DeviceConfig)
from .errors import (AlreadyAttached, Busy, ClosedInterface, InvalidHandle,
                     NoRegionAvailable, OutOfBounds, PermissionDenied,
                     VfpgaError)
from .sim import EventQueue
from .trace import Trace, args_digest

RECONFIG_QUEUE_DEPTH = 16


@dataclass
class OpResult:
    ok: bool
    value: object = None
    error: VfpgaError | None = None
    t_complete: float = 0.0
    costs: dict = dc_field(default_factory=dict)

    @property
    def outcome(self) -> str:
        return "ok" if self.ok else self.error.kind

    def unwrap(self):
        if not self.ok:
            raise self.error
        return self.value


class Session:
    def __init__(self, vm_id: int, prr: int):
        self.vm_id = vm_id
        self.prr = prr
        self.handles: dict = {}
        self.irq_latch: collections.deque = collections.deque()
        self.parked = None     # (args_digest, reply) of a blocked wait_irq
        self.attached = True


class Broker:
    def __init__(self, dev_config: DeviceConfig, queue: EventQueue | None = None,
                 scrub_on_detach: bool = True,
                 reconfig_queue_depth: int = RECONFIG_QUEUE_DEPTH,
                 mmu_backend: str = "array", config_hash: str = ""):
        self.queue = queue if queue is not None else EventQueue()
        self.device = Device(dev_config, self.queue,
                             msi_handler=self._route_msi,
                             anomaly=self._on_anomaly)
        self.pool = mmu.POOL_BACKENDS[mmu_backend](dev_config.ddr_size)
        self.trace = Trace(config_hash)
        self.scrub_on_detach = scrub_on_detach
        self.reconfig_queue_depth = reconfig_queue_depth
        self.sessions: dict = {}
        self._prr_owner: dict = {}
        self._reconfig_queue: collections.deque = collections.deque()
        self._reconfig_active = False
        # Regions with no tenant stay masked.
        self.device.write_irq_mask((1 << dev_config.prr_count) - 1)

    # -- plumbing -----------------------------------------------------------

    @property
    def now(self) -> float:
        return self.queue.now

    def _oh(self) -> float:
        return self.device.cost.sw_call_overhead

    def _deliver(self, reply, result: OpResult) -> None:
        if reply is not None:
            self.queue.schedule_after(0.0, reply, result)

    def _complete(self, vm: int, op: str, digest: str, reply, *, value=None,
                  error: VfpgaError | None = None, costs: dict | None = None,
                  trace_outcome: str | None = None) -> None:
        result = OpResult(ok=error is None, value=value, error=error,
                          t_complete=self.queue.now, costs=costs or {})
        self.trace.record(self.queue.now, vm, op, digest,
                          trace_outcome if trace_outcome is not None
                          else result.outcome)
        self._deliver(reply, result)

    def _note(self, op: str, digest: str) -> None:
        self.trace.record(self.queue.now, -1, op, digest, "note")

    def _on_anomaly(self, name: str, **fields) -> None:
        if name.startswith("frozen"):
            return  # the pass-through call's own row records the freeze
        self._note(name, args_digest(*sorted(fields.items())))

    @staticmethod
    def _check_attached(session: Session) -> None:
        if not session.attached:
            raise ClosedInterface(f"vm {session.vm_id} session is detached")

    # -- session lifecycle ---------------------------------------------------

    def attach_vm(self, vm_id: int, reply=None) -> None:
        digest = args_digest(vm_id)
        oh = self._oh()

        def done():
            try:
                if vm_id in self.sessions:
                    raise AlreadyAttached(f"vm {vm_id} already attached")
                free = [i for i in range(self.device.config.prr_count)
                        if i not in self._prr_owner]
                if not free:
                    raise NoRegionAvailable("all regions assigned")
                prr = free[0]
                session = Session(vm_id, prr)
                self.sessions[vm_id] = session
                self._prr_owner[prr] = session
                self.device.ack_irq(prr)  # drop any stale completion
                self.device.write_irq_mask(self.device.irq.mask & ~(1 << prr))
            except VfpgaError as exc:
                self._complete(vm_id, "attach", digest, reply, error=exc,
                               costs={"software": oh})
                return
            self._complete(vm_id, "attach", digest, reply, value=session,
                           costs={"software": oh})

        self.queue.schedule_after(oh, done)

    def detach_vm(self, session: Session, reply=None) -> None:
        digest = args_digest(session.vm_id)
        oh = self._oh()

        def done():
            try:
                self._check_attached(session)
            except VfpgaError as exc:
                self._complete(session.vm_id, "detach", digest, reply,
                               error=exc, costs={"software": oh})
                return
            for handle in list(session.handles.values()):
                self.pool.free(handle)
            session.handles.clear()
            self.device.write_irq_mask(self.device.irq.mask | (1 << session.prr))
            if self.scrub_on_detach:
                self.device.scrub(session.prr)
            if session.parked is not None:
                pdigest, preply = session.parked
                session.parked = None
                self._complete(session.vm_id, "wait_irq", pdigest, preply,
                               error=ClosedInterface("detached while waiting"))
            session.attached = False
            del self.sessions[session.vm_id]
            del self._prr_owner[session.prr]
            self._complete(session.vm_id, "detach", digest, reply,
                           costs={"software": oh})

        self.queue.schedule_after(oh, done)

    # -- memory --------------------------------------------------------------

    def _alloc_window(self, session: Session):
        guard = self.device.guard_range(session.prr)
        if guard is None:
            return None
        seg = self.pool.segment_size
        return (guard[0] // seg, guard[1] // seg)

    def handle_alloc(self, session: Session, size: int, reply=None) -> None:
        digest = args_digest(session.vm_id, size)
        oh = self._oh()

        def done():
            try:
                self._check_attached(session)
                handle = self.pool.allocate(session.vm_id, size,
                                            self._alloc_window(session))
                session.handles[handle.handle_id] = handle
                # fresh segments read as zeros: no data remanence from a
                # previous owner of the same span
                self.device.mem.zero_range(
                    handle.base_addr,
                    handle.segment_count * mmu.SEGMENT_SIZE)
            except VfpgaError as exc:
                self._complete(session.vm_id, "alloc", digest, reply,
                               error=exc, costs={"software": oh})
                return
            self._complete(session.vm_id, "alloc", digest, reply,
                           value=handle, costs={"software": oh})

        self.queue.schedule_after(oh, done)

    def handle_free(self, session: Session, handle_id: int, reply=None) -> None:
        digest = args_digest(session.vm_id, handle_id)
        oh = self._oh()

        def done():
            try:
                self._check_attached(session)
                handle = self.pool.lookup(handle_id)
                if handle is None:
                    raise InvalidHandle(f"handle {handle_id} is not live")
                if handle.owner != session.vm_id:
                    raise PermissionDenied(
                        f"vm {session.vm_id} freeing vm {handle.owner}'s handle")
                self.pool.free(handle)
                del session.handles[handle_id]
            except VfpgaError as exc:
                self._complete(session.vm_id, "free", digest, reply,
                               error=exc, costs={"software": oh})
                return
            self._complete(session.vm_id, "free", digest, reply,
                           costs={"software": oh})

        self.queue.schedule_after(oh, done)

    def _buffer_checks(self, session: Session, handle_id: int, offset: int,
                       length: int) -> mmu.MemHandle:
        self._check_attached(session)
        handle = self.pool.lookup(handle_id)
        if handle is None:
            raise InvalidHandle(f"handle {handle_id} is not live")
        if handle.owner != session.vm_id:
            raise PermissionDenied(
                f"vm {session.vm_id} touching vm {handle.owner}'s handle")
        if offset < 0 or length < 0 or offset + length > handle.size:
            raise OutOfBounds(
                f"[{offset}, {offset + length}) outside handle of {handle.size} bytes")
        return handle

    def handle_write_buffer(self, session: Session, handle_id: int,
                            offset: int, data: bytes, reply=None) -> None:
        digest = args_digest(session.vm_id, handle_id, offset, data)
        oh = self._oh()
        cost = self.device.cost

        def validate():
            try:
                handle = self._buffer_checks(session, handle_id, offset, len(data))
            except VfpgaError as exc:
                self._complete(session.vm_id, "write_buf", digest, reply,
                               error=exc, costs={"software": oh})
                return
            staging = len(data) / cost.staging_copy_bandwidth
            self.queue.schedule_after(staging, start_dma, handle, staging)

        def start_dma(handle, staging):
            transfer = cost.dma_latency + len(data) / cost.dma_bandwidth
            self.device.dma_transfer(
                "h2d", handle.base_addr + offset, data=data,
                on_done=lambda _:
                    self._complete(session.vm_id, "write_buf", digest, reply,
                                   costs={"software": oh + staging,
                                          "transfer": transfer}))

        self.queue.schedule_after(oh, validate)

    def handle_read_buffer(self, session: Session, handle_id: int,
                           offset: int, length: int, reply=None) -> None:
        digest = args_digest(session.vm_id, handle_id, offset, length)
        oh = self._oh()
        cost = self.device.cost

        def validate():
            try:
                handle = self._buffer_checks(session, handle_id, offset, length)
            except VfpgaError as exc:
                self._complete(session.vm_id, "read_buf", digest, reply,
                               error=exc, costs={"software": oh})
                return
            transfer = cost.dma_latency + length / cost.dma_bandwidth
            self.device.dma_transfer(
                "d2h", handle.base_addr + offset, length=length,
                on_done=partial(after_dma, transfer))

        def after_dma(transfer, data):
            staging = length / cost.staging_copy_bandwidth
            self.queue.schedule_after(
                staging, lambda:
                    self._complete(session.vm_id, "read_buf", digest, reply,
                                   value=data,
                                   costs={"software": oh + staging,
                                          "transfer": transfer}))

        self.queue.schedule_after(oh, validate)

    # -- reprogramming ---------------------------------------------------------

    def handle_reprogram(self, session: Session, bitfile_bytes: bytes,
                         reply=None) -> None:
        digest = args_digest(session.vm_id, bitfile_bytes)
        oh = self._oh()

        def validate():
            try:
                self._check_attached(session)
                bitfile = bitstream.decode_bitfile(bitfile_bytes)
                if bitfile.header.prr_id != session.prr:
                    raise PermissionDenied(
                        f"bitfile targets region {bitfile.header.prr_id}, "
                        f"vm {session.vm_id} owns region {session.prr}")
                if len(self._reconfig_queue) >= self.reconfig_queue_depth:
                    raise Busy(
                        f"reconfiguration queue full ({self.reconfig_queue_depth})")
            except VfpgaError as exc:
                self._complete(session.vm_id, "reprogram", digest, reply,
                               error=exc, costs={"software": oh})
                return
            self._reconfig_queue.append(
                (session, bitfile_bytes, digest, reply, oh, self.queue.now))
            self._pump_reconfig()

        self.queue.schedule_after(oh, validate)

    def _pump_reconfig(self) -> None:
        while not self._reconfig_active and self._reconfig_queue:
            session, data, digest, reply, oh, t_enq = self._reconfig_queue.popleft()
            waited = self.queue.now - t_enq
            if not session.attached:
                self._complete(session.vm_id, "reprogram", digest, reply,
                               error=ClosedInterface("detached while queued"),
                               costs={"software": oh, "reconfig": waited})
                continue
            try:
                self.device.pr_reconfigure(
                    session.prr, data,
                    on_done=partial(self._reconfig_done, session, digest,
                                    reply, oh, waited, self.queue.now))
            except VfpgaError as exc:
                self._complete(session.vm_id, "reprogram", digest, reply,
                               error=exc,
                               costs={"software": oh, "reconfig": waited})
                continue
            self._reconfig_active = True

    def _reconfig_done(self, session, digest, reply, oh, waited, t_start,
                       prr, completed=True) -> None:
        self._reconfig_active = False
        costs = {"software": oh,
                 "reconfig": waited + (self.queue.now - t_start)}
        if completed:
            self._complete(session.vm_id, "reprogram", digest, reply,
                           costs=costs)
        else:
            self._complete(session.vm_id, "reprogram", digest, reply,
                           error=ClosedInterface("region scrubbed mid-flight"),
                           costs=costs)
        self._pump_reconfig()

    # -- misc forwarded ops ------------------------------------------------------

    def handle_get_info(self, session: Session, iface_kind: str, reply=None) -> None:
        digest = args_digest(session.vm_id, iface_kind)
        oh = self._oh()

        def done():
            try:
                self._check_attached(session)
            except VfpgaError as exc:
                self._complete(session.vm_id, "get_info", digest, reply,
                               error=exc, costs={"software": oh})
                return
            info = {"kind": iface_kind, "prr": session.prr,
                    "reg_count": REG_COUNT,
                    "segment_size": self.pool.segment_size}
            self._complete(session.vm_id, "get_info", digest, reply,
                           value=info, costs={"software": oh})

        self.queue.schedule_after(oh, done)

    def handle_sleep(self, session: Session, seconds: float, reply=None) -> None:
        digest = args_digest(session.vm_id, seconds)
        self.queue.schedule_after(
            max(0.0, seconds),
            lambda: self._complete(session.vm_id, "sleep", digest, reply))

    # -- pass-through register access ---------------------------------------------

    def handle_reg_write(self, session: Session, reg_index: int, value: int,
                         reply=None) -> None:
        digest = args_digest(session.vm_id, reg_index, value)
        try:
            self._check_attached(session)
            outcome = self.device.write_kernel_register(session.prr, reg_index, value)
        except VfpgaError as exc:
            self._complete(session.vm_id, "reg_write", digest, reply, error=exc)
            return
        self._complete(session.vm_id, "reg_write", digest, reply, value=outcome,
                       trace_outcome="ok" if outcome == "ok" else "FrozenAccess")

    def handle_reg_read(self, session: Session, reg_index: int, reply=None) -> None:
        digest = args_digest(session.vm_id, reg_index)
        try:
            self._check_attached(session)
            value, outcome = self.device.read_kernel_register(session.prr, reg_index)
        except VfpgaError as exc:
            self._complete(session.vm_id, "reg_read", digest, reply, error=exc)
            return
        self._complete(session.vm_id, "reg_read", digest, reply,
                       value=(value, outcome),
                       trace_outcome="ok" if outcome == "ok" else "FrozenAccess")

    # -- interrupts ------------------------------------------------------------------

    def handle_wait_irq(self, session: Session, reply=None) -> None:
        digest = args_digest(session.vm_id)
        try:
            self._check_attached(session)
        except VfpgaError as exc:
            self._complete(session.vm_id, "wait_irq", digest, reply, error=exc)
            return
        if session.irq_latch:
            payload = session.irq_latch.popleft()
            self._complete(session.vm_id, "wait_irq", digest, reply,
                           value=payload,
                           costs={"kernel": payload["kernel_seconds"]})
            return
        if session.parked is not None:
            self._complete(session.vm_id, "wait_irq", digest, reply,
                           error=Busy("a wait is already outstanding"))
            return
        session.parked = (digest, reply)

    def _route_msi(self) -> None:
        status = self.device.read_irq_status()
        for prr in range(self.device.config.prr_count):
            bit = 1 << prr
            if not status & bit or self.device.irq.mask & bit:
                continue
            self.device.write_irq_mask(self.device.irq.mask | bit)
            session = self._prr_owner.get(prr)
            if session is None:
                self._note("orphan_irq", args_digest(prr))
                self.device.ack_irq(prr)
                continue  # unowned regions stay masked
            slot = self.device.slots[prr]
            payload = {"prr": prr, "done": slot.regs[REG_DONE],
                       "error": bool(slot.regs[REG_DONE] & ERROR_BIT),
                       "kernel_seconds": slot.last_run_seconds}
            if session.parked is not None:
                digest, reply = session.parked
                session.parked = None
                self._complete(session.vm_id, "wait_irq", digest, reply,
                               value=payload,
                               costs={"kernel": payload["kernel_seconds"]})
            else:
                session.irq_latch.append(payload)
            self.device.ack_irq(prr)
            self.device.write_irq_mask(self.device.irq.mask & ~bit)

    # -- interposition ------------------------------------------------------------------

    def export_trace(self) -> str:
        return self.trace.render()

    def memory_digest(self) -> str:
        return self.device.mem.digest()

    def parked_vms(self) -> list:
        return [s.vm_id for s in self.sessions.values() if s.parked is not None]

    def fail_parked(self, error: VfpgaError) -> None:
        """Deliver `error` to every blocked wait; used on scenario deadlock."""
        for session in list(self.sessions.values()):
            if session.parked is not None:
                digest, reply = session.parked
                session.parked = None
                self._complete(session.vm_id, "wait_irq", digest, reply,
                               error=error)
