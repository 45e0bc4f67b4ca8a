"""Error taxonomy shared by the device model, the broker, and the guest stack.

Every error carries a stable ``kind`` string (its class name) which is what
shows up in trace records and travels over the wire protocol as a numeric
code; clients re-raise the matching class.
"""

from __future__ import annotations


class VfpgaError(Exception):
    """Base class for all simulator errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# --- bitstream ---------------------------------------------------------

class EncodingError(VfpgaError):
    """Descriptor cannot be encoded (unknown kind, oversized schema)."""


class FormatError(VfpgaError):
    """Bitfile is structurally invalid: bad magic, truncation, bad field."""


class CrcError(VfpgaError):
    """Bitfile payload checksum mismatch. Distinct from FormatError so the
    broker can log the precise cause."""


class IncompatibleBitfile(VfpgaError):
    """Control-block compatibility check rejected the bitfile (device or
    shell identity mismatch)."""


# --- device ------------------------------------------------------------

class Busy(VfpgaError):
    """Reconfiguration already in flight, or request queue full."""


class InvalidRegion(VfpgaError):
    """Region index or register index out of range."""


class DmaFault(VfpgaError):
    """Access outside device memory; no partial transfer occurred."""


class GuardFault(VfpgaError):
    """Region memory guard rejected a hardware-side access."""


class KernelArgError(VfpgaError):
    """Kernel launched with arguments it cannot execute."""


# --- mmu ---------------------------------------------------------------

class InvalidSize(VfpgaError):
    """Allocation request for zero or negative bytes."""


class OutOfDeviceMemory(VfpgaError):
    """No contiguous free run large enough; pool unchanged."""


class InvalidHandle(VfpgaError):
    """Handle is unknown to the pool or already freed."""


class InvalidAddress(VfpgaError):
    """Address outside device memory."""


# --- broker ------------------------------------------------------------

class NoRegionAvailable(VfpgaError):
    """All regions are assigned to sessions."""


class AlreadyAttached(VfpgaError):
    """A session for this VM id already exists."""


class PermissionDenied(VfpgaError):
    """Mediated operation touched another session's resource."""


class OutOfBounds(VfpgaError):
    """Buffer offset/length outside the handle's size."""


class ConfigMismatch(VfpgaError):
    """Trace replay attempted under a different configuration."""


class DeadlockDetected(VfpgaError):
    """No runnable events while scripts are incomplete."""

    def __init__(self, stuck_vms):
        super().__init__(f"stuck VMs: {sorted(stuck_vms)}")
        self.stuck_vms = sorted(stuck_vms)


# --- guest -------------------------------------------------------------

class NoSuchInterface(VfpgaError):
    """mmd_open() with an unknown interface name."""


class ClosedInterface(VfpgaError):
    """Operation on an interface handle after mmd_close()."""


class Unsupported(VfpgaError):
    """Operation not available on this interface."""


class NoKernelLoaded(VfpgaError):
    """Launch attempted with no kernel configured in the region."""


class FrozenAccess(VfpgaError):
    """Register access hit a region whose interfaces are frozen."""


# --- configuration / protocol ------------------------------------------

class ConfigError(VfpgaError):
    """Scenario or device configuration rejected at validation."""


class ProtocolError(VfpgaError):
    """Malformed wire message."""


# Stable numeric codes for the wire protocol. Append only.
ERROR_CODES = {
    EncodingError: 1,
    FormatError: 2,
    CrcError: 3,
    IncompatibleBitfile: 4,
    Busy: 5,
    InvalidRegion: 6,
    DmaFault: 7,
    GuardFault: 8,
    KernelArgError: 9,
    InvalidSize: 10,
    OutOfDeviceMemory: 11,
    InvalidHandle: 12,
    InvalidAddress: 13,
    NoRegionAvailable: 14,
    AlreadyAttached: 15,
    PermissionDenied: 16,
    OutOfBounds: 17,
    ConfigMismatch: 18,
    DeadlockDetected: 19,
    NoSuchInterface: 20,
    ClosedInterface: 21,
    Unsupported: 22,
    NoKernelLoaded: 23,
    FrozenAccess: 24,
    ConfigError: 25,
    ProtocolError: 26,
}

CODE_TO_ERROR = {code: cls for cls, code in ERROR_CODES.items()}


def error_from_code(code: int, message: str) -> VfpgaError:
    cls = CODE_TO_ERROR.get(code, VfpgaError)
    if cls is DeadlockDetected:
        err = DeadlockDetected([])
        err.args = (message,)
        return err
    return cls(message)
