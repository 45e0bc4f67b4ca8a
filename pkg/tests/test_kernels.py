"""Datapath checks against plain-Python references.

The references below use explicit loops and ints; the implementations use
numpy. Agreement is exact because everything is integer arithmetic.
"""

import struct

import pytest
from hypothesis import given, settings, strategies as st

from vfpga import kernels
from vfpga.bitstream import ARG_SLOTS, KernelKind
from vfpga.errors import KernelArgError

MASK32 = 0xFFFFFFFF


# -- references --------------------------------------------------------------

def ref_vec_add(a, b):
    return [(x + y) & MASK32 for x, y in zip(a, b)]


def ref_matmul(a, b, n, m, k):
    # a is n x m, b is m x k, row-major
    out = []
    for i in range(n):
        for j in range(k):
            acc = 0
            for p in range(m):
                acc += a[i * m + p] * b[p * k + j]
            out.append(acc & MASK32)
    return out


def ref_sobel(px, w, h):
    out = [0] * (w * h)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            gx = (px[(y - 1) * w + x + 1] + 2 * px[y * w + x + 1]
                  + px[(y + 1) * w + x + 1]
                  - px[(y - 1) * w + x - 1] - 2 * px[y * w + x - 1]
                  - px[(y + 1) * w + x - 1])
            gy = (px[(y + 1) * w + x - 1] + 2 * px[(y + 1) * w + x]
                  + px[(y + 1) * w + x + 1]
                  - px[(y - 1) * w + x - 1] - 2 * px[(y - 1) * w + x]
                  - px[(y - 1) * w + x + 1])
            out[y * w + x] = min(abs(gx) + abs(gy), 255)
    return out


# -- harness -----------------------------------------------------------------

class FlatMem:
    """Unbounded byte store for feeding kernels directly."""

    def __init__(self, size=1 << 22):
        self.buf = bytearray(size)

    def read(self, addr, n):
        return bytes(self.buf[addr:addr + n])

    def write(self, addr, data):
        self.buf[addr:addr + len(data)] = data


def run_kernel(kind, regs, mem=None):
    mem = mem or FlatMem()
    desc = kernels.descriptor(kind)
    padded = list(regs) + [0] * (ARG_SLOTS - len(regs))
    args = kernels.bind_args(desc, padded)
    kernels.execute(desc, args, mem)
    return mem, args, desc


def u32s(raw):
    return list(struct.unpack(f"<{len(raw) // 4}I", raw))


# -- vec_add -----------------------------------------------------------------

def test_vec_add_basic():
    mem = FlatMem()
    mem.write(0, struct.pack("<4I", 1, 2, 3, 4))
    mem.write(64, struct.pack("<4I", 10, 20, 30, 40))
    run_kernel(KernelKind.VEC_ADD, [0, 64, 128, 4], mem)
    assert u32s(mem.read(128, 16)) == [11, 22, 33, 44]


def test_vec_add_wraps_mod_2_32():
    mem = FlatMem()
    mem.write(0, struct.pack("<I", 0xFFFFFFFF))
    mem.write(64, struct.pack("<I", 2))
    run_kernel(KernelKind.VEC_ADD, [0, 64, 128, 1], mem)
    assert u32s(mem.read(128, 4)) == [1]


def test_vec_add_n_zero_touches_nothing():
    mem = FlatMem()
    before = bytes(mem.buf[:256])
    run_kernel(KernelKind.VEC_ADD, [0, 64, 128, 0], mem)
    assert bytes(mem.buf[:256]) == before


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, MASK32), st.integers(0, MASK32)),
                min_size=1, max_size=64))
def test_vec_add_matches_reference(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    n = len(pairs)
    mem = FlatMem()
    mem.write(0, struct.pack(f"<{n}I", *a))
    mem.write(4096, struct.pack(f"<{n}I", *b))
    run_kernel(KernelKind.VEC_ADD, [0, 4096, 8192, n], mem)
    assert u32s(mem.read(8192, 4 * n)) == ref_vec_add(a, b)


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    ident = [1, 0, 0, 1]
    v = [5, 6, 7, 8]
    mem = FlatMem()
    mem.write(0, struct.pack("<4I", *ident))
    mem.write(64, struct.pack("<4I", *v))
    run_kernel(KernelKind.MATMUL, [0, 64, 128, 2, 2, 2], mem)
    assert u32s(mem.read(128, 16)) == v


def test_matmul_inner_dim_zero_writes_zeros():
    mem = FlatMem()
    mem.write(128, b"\xff" * 32)
    run_kernel(KernelKind.MATMUL, [0, 64, 128, 2, 0, 4], mem)
    assert u32s(mem.read(128, 32)) == [0] * 8


@settings(max_examples=80, deadline=None)
@given(n=st.integers(1, 6), m=st.integers(1, 6), k=st.integers(1, 6),
       data=st.data())
def test_matmul_matches_reference(n, m, k, data):
    a = data.draw(st.lists(st.integers(0, MASK32), min_size=n * m,
                           max_size=n * m))
    b = data.draw(st.lists(st.integers(0, MASK32), min_size=m * k,
                           max_size=m * k))
    mem = FlatMem()
    mem.write(0, struct.pack(f"<{n * m}I", *a))
    mem.write(8192, struct.pack(f"<{m * k}I", *b))
    run_kernel(KernelKind.MATMUL, [0, 8192, 16384, n, m, k], mem)
    assert u32s(mem.read(16384, 4 * n * k)) == ref_matmul(a, b, n, m, k)


# -- sobel -------------------------------------------------------------------

def test_sobel_rejects_degenerate_dims():
    for w, h in ((2, 8), (8, 2), (0, 0), (1, 3)):
        with pytest.raises(KernelArgError):
            run_kernel(KernelKind.SOBEL, [0, 8192, w, h])


def test_sobel_constant_image_is_zero():
    mem = FlatMem()
    mem.write(0, bytes([77]) * 64)
    run_kernel(KernelKind.SOBEL, [0, 8192, 8, 8], mem)
    assert mem.read(8192, 64) == bytes(64)


def test_sobel_3x3_single_interior_pixel():
    px = [0, 0, 0,
          0, 0, 0,
          0, 255, 0]
    mem = FlatMem()
    mem.write(0, bytes(px))
    run_kernel(KernelKind.SOBEL, [0, 8192, 3, 3], mem)
    got = list(mem.read(8192, 9))
    expect = ref_sobel(px, 3, 3)
    assert got == expect
    assert got[4] != 0            # the one interior pixel
    assert sum(got) == got[4]     # border stays zero


def test_sobel_border_always_zero():
    import random
    rng = random.Random(5)
    px = [rng.randrange(256) for _ in range(16 * 16)]
    mem = FlatMem()
    mem.write(0, bytes(px))
    run_kernel(KernelKind.SOBEL, [0, 8192, 16, 16], mem)
    got = list(mem.read(8192, 256))
    for x in range(16):
        assert got[x] == 0 and got[240 + x] == 0
    for y in range(16):
        assert got[y * 16] == 0 and got[y * 16 + 15] == 0


@settings(max_examples=40, deadline=None)
@given(w=st.integers(3, 12), h=st.integers(3, 12), data=st.data())
def test_sobel_matches_reference(w, h, data):
    px = data.draw(st.lists(st.integers(0, 255), min_size=w * h,
                            max_size=w * h))
    mem = FlatMem()
    mem.write(0, bytes(px))
    run_kernel(KernelKind.SOBEL, [0, 8192, w, h], mem)
    assert list(mem.read(8192, w * h)) == ref_sobel(px, w, h)


# -- rogue writer ------------------------------------------------------------

def test_rogue_writer_stamps_pattern():
    mem = FlatMem()
    run_kernel(KernelKind.ROGUE_WRITER, [100, 16, 0xAB], mem)
    assert mem.read(100, 16) == b"\xab" * 16
    assert mem.read(99, 1) == b"\x00"
    assert mem.read(116, 1) == b"\x00"


def test_rogue_writer_len_zero():
    mem = FlatMem()
    before = bytes(mem.buf[:256])
    run_kernel(KernelKind.ROGUE_WRITER, [0, 0, 0xFF], mem)
    assert bytes(mem.buf[:256]) == before


# -- descriptors, cycles, masking ---------------------------------------------

def test_cycle_formulas():
    cases = [
        (KernelKind.VEC_ADD, {"n": 1000}, 1 * 1000),
        (KernelKind.MATMUL, {"n": 4, "m": 5, "k": 6}, 1 * 4 * 5 * 6),
        (KernelKind.SOBEL, {"w": 64, "h": 32}, 9 * 64 * 32),
        (KernelKind.ROGUE_WRITER, {"len": 512}, 1 * 512),
    ]
    for kind, args, expect in cases:
        desc = kernels.descriptor(kind)
        assert kernels.cycles_for(desc, args) == expect


def test_cycles_scale_with_cpi():
    desc = kernels.descriptor(KernelKind.VEC_ADD, 7)
    assert kernels.cycles_for(desc, {"n": 10}) == 70


def test_bind_args_masks_to_schema_width():
    desc = kernels.descriptor(KernelKind.ROGUE_WRITER)
    args = kernels.bind_args(desc, [2**64 - 1, 2**33 + 5, 0x1FF] +
                             [0] * (ARG_SLOTS - 3))
    assert args["target_addr"] == 2**64 - 1     # full 64-bit field
    assert args["len"] == 5                     # truncated to 32 bits
    assert args["pattern"] == 0xFF              # truncated to 8 bits


def test_descriptor_accepts_labels_and_ints():
    d1 = kernels.descriptor("matmul")
    d2 = kernels.descriptor(KernelKind.MATMUL)
    d3 = kernels.descriptor(2)
    assert d1 == d2 == d3
