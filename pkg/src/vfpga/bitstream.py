"""Partial-bitfile container format.

A bitfile is a self-describing configuration image for one region: a fixed
little-endian header carrying device/shell/region identity plus a CRC-32
over the payload, followed by an encoded kernel descriptor. The payload may
be zero-padded to a target image size so file sizes track region size
rather than descriptor size.

Header layout (all little-endian):

    magic        4 bytes, b"VFPB"
    version      u16
    device_id    u32
    shell_id     u32
    prr_id       u8
    payload_len  u32
    payload_crc  u32   CRC-32 (IEEE) over the payload bytes

Payload layout:

    kind                 u8
    cycles_per_item      u32
    param_count          u8
    per param:  name_len u8, name bytes (ascii), width u8 (bits)
    zero padding to the requested image size
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

from .errors import CrcError, EncodingError, FormatError

MAGIC = b"VFPB"
VERSION = 1

# Width of the register file's argument bank; the device register file is
# sized from this and schemas beyond it cannot be encoded.
ARG_SLOTS = 8

_HEADER = struct.Struct("<4sHIIBII")
HEADER_SIZE = _HEADER.size


class KernelKind(enum.IntEnum):
    VEC_ADD = 1
    MATMUL = 2
    SOBEL = 3
    ROGUE_WRITER = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "KernelKind":
        try:
            return cls[label.upper()]
        except KeyError:
            raise EncodingError(f"unknown kernel kind {label!r}") from None


@dataclass(frozen=True)
class KernelDescriptor:
    kind: KernelKind
    param_schema: tuple = ()
    cycles_per_item: int = 1


@dataclass(frozen=True)
class BitfileHeader:
    device_id: int
    shell_id: int
    prr_id: int
    payload_len: int
    payload_crc: int
    version: int = VERSION


@dataclass(frozen=True)
class PartialBitfile:
    header: BitfileHeader
    descriptor: KernelDescriptor
    size: int = field(default=0)  # total encoded size, header included


def _encode_descriptor(desc: KernelDescriptor) -> bytes:
    if not isinstance(desc.kind, KernelKind):
        try:
            KernelKind(desc.kind)
        except ValueError:
            raise EncodingError(f"unknown kernel kind {desc.kind!r}") from None
    kind = KernelKind(desc.kind)
    if len(desc.param_schema) > ARG_SLOTS:
        raise EncodingError(
            f"{len(desc.param_schema)} params exceed the {ARG_SLOTS}-slot register bank")
    if not 0 <= desc.cycles_per_item <= 0xFFFFFFFF:
        raise EncodingError(f"cycles_per_item {desc.cycles_per_item} out of u32 range")
    out = bytearray()
    out += struct.pack("<BIB", kind, desc.cycles_per_item, len(desc.param_schema))
    for name, width in desc.param_schema:
        raw = name.encode("ascii", errors="strict") if isinstance(name, str) else bytes(name)
        if not 1 <= len(raw) <= 255:
            raise EncodingError(f"bad parameter name {name!r}")
        if not 1 <= width <= 64:
            raise EncodingError(f"parameter width {width} outside 1..64 bits")
        out += struct.pack("<B", len(raw)) + raw + struct.pack("<B", width)
    return bytes(out)


def _decode_descriptor(payload: bytes) -> KernelDescriptor:
    if len(payload) < 6:
        raise FormatError("payload too short for a descriptor")
    kind_raw, cycles, nparams = struct.unpack_from("<BIB", payload, 0)
    try:
        kind = KernelKind(kind_raw)
    except ValueError:
        raise FormatError(f"unknown kernel kind byte {kind_raw}") from None
    if nparams > ARG_SLOTS:
        raise FormatError(f"descriptor claims {nparams} params, bank has {ARG_SLOTS}")
    pos = 6
    schema = []
    for _ in range(nparams):
        if pos >= len(payload):
            raise FormatError("truncated parameter schema")
        (name_len,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        if pos + name_len + 1 > len(payload):
            raise FormatError("truncated parameter schema")
        try:
            name = payload[pos:pos + name_len].decode("ascii")
        except UnicodeDecodeError:
            raise FormatError("non-ascii parameter name") from None
        pos += name_len
        (width,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        if not 1 <= width <= 64:
            raise FormatError(f"parameter width {width} outside 1..64 bits")
        schema.append((name, width))
    # Anything past the schema is padding and must be zero.
    if any(payload[pos:]):
        raise FormatError("nonzero bytes in payload padding")
    return KernelDescriptor(kind=kind, param_schema=tuple(schema), cycles_per_item=cycles)


def encode_bitfile(desc: KernelDescriptor, device_id: int, shell_id: int,
                   prr_id: int, image_size: int | None = None) -> bytes:
    """Encode a descriptor into a bitfile image.

    image_size, when given, is the total file size to produce; the payload
    is zero-padded to reach it. The default is the minimal encoding.
    """
    if not 0 <= prr_id <= 0xFF:
        raise EncodingError(f"prr_id {prr_id} does not fit in 8 bits")
    if not 0 <= device_id <= 0xFFFFFFFF or not 0 <= shell_id <= 0xFFFFFFFF:
        raise EncodingError("device_id/shell_id out of u32 range")
    payload = _encode_descriptor(desc)
    if image_size is not None:
        if image_size < HEADER_SIZE + len(payload):
            raise EncodingError(
                f"image_size {image_size} smaller than minimal encoding "
                f"{HEADER_SIZE + len(payload)}")
        payload = payload + bytes(image_size - HEADER_SIZE - len(payload))
    header = _HEADER.pack(MAGIC, VERSION, device_id, shell_id, prr_id,
                          len(payload), zlib.crc32(payload) & 0xFFFFFFFF)
    return header + payload


def decode_bitfile(data: bytes) -> PartialBitfile:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"file of {len(data)} bytes is shorter than the header")
    magic, version, device_id, shell_id, prr_id, payload_len, payload_crc = \
        _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    payload = data[HEADER_SIZE:]
    if len(payload) != payload_len:
        raise FormatError(
            f"payload length {len(payload)} does not match header value {payload_len}")
    if zlib.crc32(payload) & 0xFFFFFFFF != payload_crc:
        raise CrcError("payload checksum mismatch")
    descriptor = _decode_descriptor(payload)
    header = BitfileHeader(device_id=device_id, shell_id=shell_id, prr_id=prr_id,
                           payload_len=payload_len, payload_crc=payload_crc,
                           version=version)
    return PartialBitfile(header=header, descriptor=descriptor, size=len(data))


def cb_compatibility_check(bitfile: PartialBitfile, device_id: int, shell_id: int) -> bool:
    """The control block's own legality check.

    Pure predicate over device and shell identity. The region index in the
    header is deliberately not consulted: the control block has no notion
    of which region a caller is entitled to, which is exactly the gap the
    broker-side check closes.
    """
    return (bitfile.header.device_id == device_id
            and bitfile.header.shell_id == shell_id)
