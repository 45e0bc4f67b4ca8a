"""Container format checks.

The checksum oracle below is a bit-at-a-time CRC-32 written straight from
the reflected polynomial definition, so the container's checksum choice is
pinned by an implementation that shares no code with it.
"""

import struct

import pytest
from hypothesis import given, settings, strategies as st

from vfpga.bitstream import (ARG_SLOTS, HEADER_SIZE, MAGIC, VERSION,
                             BitfileHeader, KernelDescriptor, KernelKind,
                             cb_compatibility_check, decode_bitfile,
                             encode_bitfile)
from vfpga.errors import (CrcError, EncodingError, FormatError,
                          IncompatibleBitfile)
from vfpga.kernels import descriptor


# -- oracle ----------------------------------------------------------------

def crc32_bitwise(data: bytes) -> int:
    """Reflected CRC-32 (poly 0xEDB88320), one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xEDB88320
            else:
                crc >>= 1
    return crc ^ 0xFFFFFFFF


def test_crc_oracle_known_vectors():
    # published check values for the ubiquitous CRC-32/ISO-HDLC
    assert crc32_bitwise(b"123456789") == 0xCBF43926
    assert crc32_bitwise(b"") == 0
    assert crc32_bitwise(b"\x00") == 0xD202EF8D


@given(st.binary(max_size=256))
def test_container_crc_matches_bitwise_oracle(blob):
    import zlib
    assert zlib.crc32(blob) & 0xFFFFFFFF == crc32_bitwise(blob)


# -- encoding --------------------------------------------------------------

def vec_add_desc(cpi=None):
    return descriptor(KernelKind.VEC_ADD, cpi)


def test_round_trip_smallest():
    data = encode_bitfile(vec_add_desc(), device_id=1, shell_id=1, prr_id=0)
    bf = decode_bitfile(data)
    assert bf.header.version == VERSION
    assert bf.header.device_id == 1
    assert bf.header.shell_id == 1
    assert bf.header.prr_id == 0
    assert bf.descriptor.kind == KernelKind.VEC_ADD
    assert bf.size == len(data)


def test_encoded_layout_starts_with_magic():
    data = encode_bitfile(vec_add_desc(), device_id=1, shell_id=1, prr_id=0)
    assert data[:4] == b"VFPB"
    (payload_len,) = struct.unpack_from("<I", data, 4 + 2 + 4 + 4 + 1)
    assert len(data) == HEADER_SIZE + payload_len


def test_image_size_padding():
    data = encode_bitfile(vec_add_desc(), device_id=1, shell_id=1, prr_id=0,
                          image_size=4096)
    assert len(data) == 4096
    bf = decode_bitfile(data)
    assert bf.descriptor.kind == KernelKind.VEC_ADD


def test_image_size_too_small_rejected():
    with pytest.raises(EncodingError):
        encode_bitfile(vec_add_desc(), device_id=1, shell_id=1, prr_id=0,
                       image_size=8)


@pytest.mark.parametrize("field,value", [
    ("device_id", -1),
    ("device_id", 1 << 32),
    ("shell_id", -1),
    ("prr_id", 256),
    ("prr_id", -1),
])
def test_out_of_range_ids_rejected(field, value):
    kwargs = {"device_id": 1, "shell_id": 1, "prr_id": 0}
    kwargs[field] = value
    with pytest.raises(EncodingError):
        encode_bitfile(vec_add_desc(), **kwargs)


def test_too_many_params_rejected():
    desc = KernelDescriptor(
        kind=KernelKind.VEC_ADD,
        param_schema=tuple((f"p{i}", 32) for i in range(ARG_SLOTS + 1)),
        cycles_per_item=1)
    with pytest.raises(EncodingError):
        encode_bitfile(desc, device_id=1, shell_id=1, prr_id=0)


def test_bad_param_width_rejected():
    desc = KernelDescriptor(kind=KernelKind.VEC_ADD,
                            param_schema=(("p", 65),), cycles_per_item=1)
    with pytest.raises(EncodingError):
        encode_bitfile(desc, device_id=1, shell_id=1, prr_id=0)


# -- decoding --------------------------------------------------------------

def test_magic_violation_is_format_error():
    data = bytearray(encode_bitfile(vec_add_desc(), device_id=1, shell_id=1,
                                    prr_id=0))
    data[:4] = bytes(4)
    with pytest.raises(FormatError):
        decode_bitfile(bytes(data))


def test_unknown_version_is_format_error():
    data = bytearray(encode_bitfile(vec_add_desc(), device_id=1, shell_id=1,
                                    prr_id=0))
    struct.pack_into("<H", data, 4, VERSION + 1)
    with pytest.raises(FormatError):
        decode_bitfile(bytes(data))


def test_truncation_is_format_error():
    data = encode_bitfile(vec_add_desc(), device_id=1, shell_id=1, prr_id=0)
    for cut in (0, 3, HEADER_SIZE - 1, len(data) - 1):
        with pytest.raises(FormatError):
            decode_bitfile(data[:cut])


def test_payload_flip_is_crc_error():
    data = bytearray(encode_bitfile(vec_add_desc(), device_id=1, shell_id=1,
                                    prr_id=0, image_size=1024))
    data[HEADER_SIZE + 5] ^= 0x10
    with pytest.raises(CrcError):
        decode_bitfile(bytes(data))


def test_format_checked_before_crc():
    # both magic and payload are damaged; the structural error wins
    data = bytearray(encode_bitfile(vec_add_desc(), device_id=1, shell_id=1,
                                    prr_id=0, image_size=1024))
    data[0] ^= 0xFF
    data[HEADER_SIZE] ^= 0xFF
    with pytest.raises(FormatError):
        decode_bitfile(bytes(data))


def test_nonzero_padding_rejected():
    data = bytearray(encode_bitfile(vec_add_desc(), device_id=1, shell_id=1,
                                    prr_id=0, image_size=2048))
    # flip a pad byte and fix up the crc so only the padding rule trips
    import zlib
    data[-1] = 0xAA
    crc = zlib.crc32(bytes(data[HEADER_SIZE:])) & 0xFFFFFFFF
    struct.pack_into("<I", data, HEADER_SIZE - 4, crc)
    with pytest.raises(FormatError):
        decode_bitfile(bytes(data))


@settings(max_examples=60)
@given(kind=st.sampled_from(list(KernelKind)),
       cpi=st.integers(min_value=1, max_value=1000),
       device_id=st.integers(min_value=0, max_value=2**32 - 1),
       shell_id=st.integers(min_value=0, max_value=2**32 - 1),
       prr_id=st.integers(min_value=0, max_value=255))
def test_round_trip_any_descriptor(kind, cpi, device_id, shell_id, prr_id):
    desc = descriptor(kind, cpi)
    bf = decode_bitfile(encode_bitfile(desc, device_id=device_id,
                                       shell_id=shell_id, prr_id=prr_id))
    assert bf.descriptor == desc
    assert (bf.header.device_id, bf.header.shell_id, bf.header.prr_id) == \
        (device_id, shell_id, prr_id)


# -- compatibility check ---------------------------------------------------

def make_header(device_id, shell_id, prr_id):
    data = encode_bitfile(vec_add_desc(), device_id=device_id,
                          shell_id=shell_id, prr_id=prr_id)
    return decode_bitfile(data)


def test_cb_check_accepts_matching_ids():
    bf = make_header(3, 9, 1)
    assert cb_compatibility_check(bf, device_id=3, shell_id=9)


@pytest.mark.parametrize("dev,shell", [(4, 9), (3, 8), (0, 0)])
def test_cb_check_rejects_mismatched_ids(dev, shell):
    bf = make_header(3, 9, 1)
    assert not cb_compatibility_check(bf, device_id=dev, shell_id=shell)


def test_cb_check_ignores_prr_id():
    # the hardware checker has no notion of region assignment; only the
    # software layer above can police that field
    verdicts = {cb_compatibility_check(make_header(1, 1, p),
                                       device_id=1, shell_id=1)
                for p in range(256)}
    assert verdicts == {True}
    verdicts = {cb_compatibility_check(make_header(1, 2, p),
                                       device_id=1, shell_id=1)
                for p in range(256)}
    assert verdicts == {False}


def test_kernel_kind_labels():
    for kind in KernelKind:
        assert KernelKind.from_label(kind.label) is kind
    with pytest.raises(EncodingError):
        KernelKind.from_label("warp_drive")
