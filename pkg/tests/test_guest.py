"""Guest stack: MMD operators over a linked-in broker, plus the small
runtime (buffers, args, launch, wait)."""

import struct

import pytest

from vfpga import kernels
from vfpga.bitstream import KernelKind, encode_bitfile
from vfpga.device import REG_ARG0, REG_START, CostModel, DeviceConfig
from vfpga.errors import (ClosedInterface, DeadlockDetected, FrozenAccess,
                          InvalidHandle, KernelArgError, NoKernelLoaded,
                          NoSuchInterface, OutOfBounds, Unsupported)
from vfpga.guest import GuestDevice, InProcTransport, Runtime
from vfpga.vmm import Broker

OH = 100e-6


def make_rig(vm_id=1, **dev_kw):
    broker = Broker(DeviceConfig(cost=CostModel(sw_call_overhead=OH), **dev_kw))
    dev = GuestDevice(InProcTransport(broker), vm_id)
    dev.attach()
    return broker, dev


def bitfile(prr, kind=KernelKind.VEC_ADD):
    return encode_bitfile(kernels.descriptor(kind), device_id=1, shell_id=1,
                          prr_id=prr, image_size=64 << 10)


# -- transport ----------------------------------------------------------------

def test_attach_learns_region():
    broker, dev = make_rig(vm_id=4)
    assert dev.prr == 0
    assert dev.transport.session.vm_id == 4
    dev.detach()
    assert 4 not in broker.sessions


def test_blocked_wait_on_idle_queue_is_a_deadlock():
    # a lone guest waiting with nothing in flight can never be woken
    broker, dev = make_rig(vm_id=2)
    with pytest.raises(DeadlockDetected) as err:
        dev.transport.wait_irq()
    assert err.value.kind == "DeadlockDetected"


def test_sync_calls_advance_shared_clock():
    broker, dev = make_rig()
    t0 = broker.now
    dev.transport.sleep(0.5).unwrap()
    assert broker.now == t0 + 0.5


# -- MMD operators --------------------------------------------------------------

def test_open_unknown_interface():
    _, dev = make_rig()
    with pytest.raises(NoSuchInterface):
        dev.mmd_open("dma2")


def test_closed_interface_rejects_everything():
    _, dev = make_rig()
    iface = dev.mmd_open("memory")
    dev.mmd_close(iface)
    for op in (lambda: dev.mmd_read(iface, (0, 0), 1),
               lambda: dev.mmd_write(iface, (0, 0), b"x"),
               lambda: dev.mmd_get_info(iface),
               lambda: dev.mmd_close(iface),
               lambda: dev.mmd_set_irq(iface, print)):
        with pytest.raises(ClosedInterface):
            op()


def test_interface_handles_are_independent():
    _, dev = make_rig()
    first = dev.mmd_open("kernel-cra")
    second = dev.mmd_open("kernel-cra")
    assert first.handle != second.handle
    dev.mmd_close(first)
    assert dev.mmd_read(second, REG_START) == 0   # still open


def test_cra_interface_is_register_access():
    broker, dev = make_rig()
    cra = dev.mmd_open("kernel-cra")
    assert dev.mmd_write(cra, REG_ARG0 + 1, 0xBEEF) == "ok"
    assert dev.mmd_read(cra, REG_ARG0 + 1) == 0xBEEF
    assert broker.device.slots[dev.prr].regs[REG_ARG0 + 1] == 0xBEEF


def test_memory_interface_addressing():
    _, dev = make_rig()
    mem = dev.mmd_open("memory")
    handle = dev.transport.alloc(4096).unwrap()
    dev.mmd_write(mem, (handle.handle_id, 64), b"abcdef")
    assert dev.mmd_read(mem, (handle.handle_id, 64), 6) == b"abcdef"


def test_reprogram_interface_is_one_way():
    _, dev = make_rig()
    prog = dev.mmd_open("reprogram")
    mem = dev.mmd_open("memory")
    with pytest.raises(Unsupported):
        dev.mmd_read(prog, 0, 4)
    with pytest.raises(Unsupported):
        dev.mmd_write(prog, 0, b"x")
    with pytest.raises(Unsupported):
        dev.mmd_set_irq(prog, print)
    with pytest.raises(Unsupported):
        dev.mmd_set_status(prog, print)
    with pytest.raises(Unsupported):
        dev.mmd_reprogram(mem, bitfile(dev.prr))
    dev.mmd_reprogram(prog, bitfile(dev.prr))   # the right channel works


def test_get_info_names_the_interface():
    _, dev = make_rig()
    mem = dev.mmd_open("memory")
    info = dev.mmd_get_info(mem)
    assert info["kind"] == "memory"
    assert info["prr"] == dev.prr


def test_status_handler_sees_each_forwarded_op():
    _, dev = make_rig()
    mem = dev.mmd_open("memory")
    prog = dev.mmd_open("reprogram")
    seen = []
    dev.mmd_set_status(mem, lambda req, op: seen.append((req, op)))
    handle = dev.transport.alloc(1024).unwrap()
    dev.mmd_write(mem, (handle.handle_id, 0), b"hi")
    dev.mmd_read(mem, (handle.handle_id, 0), 2)
    dev.mmd_reprogram(prog, bitfile(dev.prr))
    assert [op for _, op in seen] == ["write", "read", "reprogram"]
    assert [req for req, _ in seen] == [1, 2, 3]


# -- runtime -------------------------------------------------------------------

def test_buffer_lifecycle():
    broker, dev = make_rig()
    rt = Runtime(dev)
    buf = rt.create_buffer(8192)
    rt.write_buffer(buf, 4096, b"\x11" * 16)
    assert rt.read_buffer(buf, 4096, 16) == b"\x11" * 16
    rt.release_buffer(buf)
    assert broker.pool.used_segment_count() == 0
    with pytest.raises(InvalidHandle):
        rt.release_buffer(buf)


def test_local_bounds_check_precedes_any_transport_call():
    broker, dev = make_rig()
    rt = Runtime(dev)
    buf = rt.create_buffer(100)
    rows_before = broker.export_trace().count("\n")
    with pytest.raises(OutOfBounds):
        rt.write_buffer(buf, 98, b"1234")
    with pytest.raises(OutOfBounds):
        rt.read_buffer(buf, 0, 101)
    with pytest.raises(OutOfBounds):
        rt.read_buffer(buf, -1, 1)
    assert broker.export_trace().count("\n") == rows_before


def test_too_many_kernel_args():
    _, dev = make_rig()
    rt = Runtime(dev)
    with pytest.raises(KernelArgError):
        rt.set_kernel_args([0] * 9)
    rt.set_kernel_args([0] * 8)   # exactly the register bank


def test_launch_without_kernel():
    _, dev = make_rig()
    rt = Runtime(dev)
    with pytest.raises(NoKernelLoaded):
        rt.launch()


def test_launch_during_reconfiguration():
    broker, dev = make_rig()
    rt = Runtime(dev)
    broker.handle_reprogram(dev.transport.session, bitfile(dev.prr))
    broker.queue.run_until(OH * 2)   # validation done, region now loading
    with pytest.raises(FrozenAccess):
        rt.launch()


def test_wait_with_nothing_pending_returns_none():
    broker, dev = make_rig()
    rt = Runtime(dev)
    t0 = broker.now
    assert rt.wait() is None
    assert broker.now == t0   # no transport call was made


def test_vec_add_end_to_end():
    _, dev = make_rig()
    rt = Runtime(dev)
    rt.load_kernel(bitfile(dev.prr))
    n = 1024
    a = struct.pack(f"<{n}I", *range(n))
    b = struct.pack(f"<{n}I", *((7 * i) & 0xFFFFFFFF for i in range(n)))
    bufs = [rt.create_buffer(4 * n) for _ in range(3)]
    rt.write_buffer(bufs[0], 0, a)
    rt.write_buffer(bufs[1], 0, b)
    rt.set_kernel_args([bufs[0], bufs[1], bufs[2], n])
    got = []
    dev.mmd_set_irq(dev.mmd_open("kernel-cra"), got.append)
    rt.launch()
    payload = rt.wait()
    assert got == [payload]
    assert payload["error"] is False
    out = rt.read_buffer(bufs[2], 0, 4 * n)
    expect = struct.pack(f"<{n}I", *(((8 * i) & 0xFFFFFFFF) for i in range(n)))
    assert out == expect


def test_buffer_arg_passes_device_address():
    broker, dev = make_rig()
    rt = Runtime(dev)
    rt.load_kernel(bitfile(dev.prr))
    buf = rt.create_buffer(64)
    rt.set_kernel_args([buf, 5])
    regs = broker.device.slots[dev.prr].regs
    assert regs[REG_ARG0] == buf.base_addr
    assert regs[REG_ARG0 + 1] == 5


def test_two_guests_interleave_on_one_queue():
    broker = Broker(DeviceConfig(cost=CostModel(sw_call_overhead=OH)))
    devs = []
    for vm in (1, 2):
        dev = GuestDevice(InProcTransport(broker), vm)
        dev.attach()
        devs.append(dev)
    rts = [Runtime(d) for d in devs]
    for dev, rt, n in zip(devs, rts, (1000, 3000)):
        rt.load_kernel(bitfile(dev.prr))
        rt.set_kernel_args([0, 0, 0, n])
        rt.launch()
    payloads = [rt.wait() for rt in rts]
    assert payloads[0]["prr"] == devs[0].prr
    assert payloads[1]["prr"] == devs[1].prr
    clock = broker.device.cost.clock_hz
    assert payloads[0]["kernel_seconds"] == 1000 / clock
    assert payloads[1]["kernel_seconds"] == 3000 / clock
