"""Functional and timing models of the loadable accelerators.

Each kernel reads its arguments from the region's register file at launch
and touches device DDR through an accessor the device hands it, so range
guarding applies uniformly. Datapaths are integer (32-bit lanes, wrapping)
which keeps oracle comparison exact.

Cycle counts are static per-item coefficients times problem size; the
coefficients are placeholders tuned by the benchmark calibration config,
not measurements.
"""

from __future__ import annotations

import numpy as np

from .bitstream import KernelDescriptor, KernelKind
from .errors import KernelArgError

_U32 = np.dtype("<u4")


def _mask(value: int, width: int) -> int:
    return value & ((1 << width) - 1)


class _VecAdd:
    kind = KernelKind.VEC_ADD
    schema = (("a_addr", 64), ("b_addr", 64), ("c_addr", 64), ("n", 32))
    default_cpi = 1

    @staticmethod
    def cycles(cpi, args):
        return cpi * args["n"]

    @staticmethod
    def run(args, mem):
        n = args["n"]
        if n == 0:
            return
        a = np.frombuffer(mem.read(args["a_addr"], 4 * n), dtype=_U32)
        b = np.frombuffer(mem.read(args["b_addr"], 4 * n), dtype=_U32)
        mem.write(args["c_addr"], (a + b).tobytes())


class _MatMul:
    kind = KernelKind.MATMUL
    schema = (("a_addr", 64), ("b_addr", 64), ("c_addr", 64),
              ("n", 32), ("m", 32), ("k", 32))
    default_cpi = 1

    @staticmethod
    def cycles(cpi, args):
        return cpi * args["n"] * args["m"] * args["k"]

    @staticmethod
    def run(args, mem):
        n, m, k = args["n"], args["m"], args["k"]
        if n == 0 or k == 0:
            return
        if m == 0:
            mem.write(args["c_addr"], bytes(4 * n * k))
            return
        a = np.frombuffer(mem.read(args["a_addr"], 4 * n * m), dtype=_U32)
        b = np.frombuffer(mem.read(args["b_addr"], 4 * m * k), dtype=_U32)
        c = a.reshape(n, m) @ b.reshape(m, k)
        mem.write(args["c_addr"], c.astype(_U32, copy=False).tobytes())


class _Sobel:
    kind = KernelKind.SOBEL
    schema = (("src_addr", 64), ("dst_addr", 64), ("w", 32), ("h", 32))
    default_cpi = 9

    @staticmethod
    def cycles(cpi, args):
        return cpi * args["w"] * args["h"]

    @staticmethod
    def run(args, mem):
        w, h = args["w"], args["h"]
        if w < 3 or h < 3:
            raise KernelArgError(f"sobel needs w,h >= 3, got {w}x{h}")
        src = np.frombuffer(mem.read(args["src_addr"], w * h),
                            dtype=np.uint8).reshape(h, w).astype(np.int32)
        gx = (src[:-2, 2:] + 2 * src[1:-1, 2:] + src[2:, 2:]
              - src[:-2, :-2] - 2 * src[1:-1, :-2] - src[2:, :-2])
        gy = (src[2:, :-2] + 2 * src[2:, 1:-1] + src[2:, 2:]
              - src[:-2, :-2] - 2 * src[:-2, 1:-1] - src[:-2, 2:])
        mag = np.clip(np.abs(gx) + np.abs(gy), 0, 255)
        out = np.zeros((h, w), dtype=np.uint8)
        out[1:-1, 1:-1] = mag.astype(np.uint8)
        mem.write(args["dst_addr"], out.tobytes())


class _RogueWriter:
    kind = KernelKind.ROGUE_WRITER
    schema = (("target_addr", 64), ("len", 32), ("pattern", 8))
    default_cpi = 1

    @staticmethod
    def cycles(cpi, args):
        return cpi * args["len"]

    @staticmethod
    def run(args, mem):
        if args["len"] == 0:
            return
        mem.write(args["target_addr"], bytes([args["pattern"]]) * args["len"])


_KERNELS = {k.kind: k for k in (_VecAdd, _MatMul, _Sobel, _RogueWriter)}


def descriptor(kind, cycles_per_item=None) -> KernelDescriptor:
    """Build the canonical descriptor for a kernel kind."""
    if isinstance(kind, str):
        kind = KernelKind.from_label(kind)
    elif not isinstance(kind, KernelKind):
        kind = KernelKind(kind)
    impl = _KERNELS[kind]
    cpi = impl.default_cpi if cycles_per_item is None else cycles_per_item
    return KernelDescriptor(kind=kind, param_schema=impl.schema,
                            cycles_per_item=cpi)


def bind_args(desc: KernelDescriptor, raw_args) -> dict:
    """Map register values onto the descriptor's schema, masked to width."""
    impl = _KERNELS[KernelKind(desc.kind)]
    return {name: _mask(raw_args[i], width)
            for i, (name, width) in enumerate(impl.schema)}


def cycles_for(desc: KernelDescriptor, args: dict) -> int:
    impl = _KERNELS[KernelKind(desc.kind)]
    return impl.cycles(desc.cycles_per_item, args)


def execute(desc: KernelDescriptor, args: dict, mem) -> None:
    """Apply the kernel's memory effects. mem provides read(addr, n) and
    write(addr, data) and enforces DDR bounds and the range guard."""
    _KERNELS[KernelKind(desc.kind)].run(args, mem)
