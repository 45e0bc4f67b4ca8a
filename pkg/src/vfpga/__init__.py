"""Event-driven model of a multi-tenant FPGA: partially reconfigurable
regions behind a mediating broker, with guest runtimes attached either
in-process or over a unix-socket wire protocol."""

from .bitstream import (BitfileHeader, KernelDescriptor, KernelKind,
                        PartialBitfile, cb_compatibility_check,
                        decode_bitfile, encode_bitfile)
from .config import ScenarioConfig, config_hash, load_config, parse_config
from .device import CostModel, Device, DeviceConfig
from .errors import VfpgaError
from .guest import GuestDevice, InProcTransport, Runtime
from .mmu import MemHandle, SegmentPool
from .sim import EventQueue
from .vmm import Broker, OpResult
from .wire import WireServer, WireTransport

__version__ = "0.1.0"

__all__ = [
    "BitfileHeader", "Broker", "CostModel", "Device", "DeviceConfig",
    "EventQueue", "GuestDevice", "InProcTransport", "KernelDescriptor",
    "KernelKind", "MemHandle", "OpResult", "PartialBitfile", "Runtime",
    "ScenarioConfig", "SegmentPool", "VfpgaError", "WireServer",
    "WireTransport", "cb_compatibility_check", "config_hash",
    "decode_bitfile", "encode_bitfile", "load_config", "parse_config",
    "__version__",
]
