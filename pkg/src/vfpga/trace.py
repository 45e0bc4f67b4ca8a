"""Interposition records.

Every guest-visible operation the broker mediates or passes through
becomes exactly one TraceEvent; device-side anomalies (frozen accesses,
kernel faults, orphan interrupts) appear as extra rows with outcome
"note". The text form is line-delimited with '#'-prefixed header lines, a
stable field order, and full-precision timestamps so a parsed trace
compares equal to the original.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import FormatError

FORMAT_NAME = "vfpga-trace"
FORMAT_VERSION = 1
_FIELDS = ("seq", "time", "vm", "op", "args", "outcome")


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    time: float
    vm: int          # -1 for device/system rows
    op: str
    args: str        # digest of the operation arguments
    outcome: str     # "ok", an error kind, or "note"


def args_digest(*parts) -> str:
    """Stable short digest of operation arguments."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(b"b" + part)
        else:
            h.update(repr(part).encode())
        h.update(b"\x1f")
    return h.hexdigest()[:16]


class Trace:
    def __init__(self, config_hash: str = ""):
        self.config_hash = config_hash
        self.events: list = []

    def record(self, time: float, vm: int, op: str, args: str, outcome: str) -> TraceEvent:
        ev = TraceEvent(seq=len(self.events), time=time, vm=vm, op=op,
                        args=args, outcome=outcome)
        self.events.append(ev)
        return ev

    def render(self) -> str:
        lines = [f"# {FORMAT_NAME} {FORMAT_VERSION}",
                 f"# config = {self.config_hash}",
                 f"# fields = {' '.join(_FIELDS)}"]
        for ev in self.events:
            lines.append(f"{ev.seq}\t{ev.time!r}\t{ev.vm}\t{ev.op}\t"
                         f"{ev.args}\t{ev.outcome}")
        return "\n".join(lines) + "\n"


def parse(text: str) -> Trace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {FORMAT_NAME} "):
        raise FormatError("not a trace file")
    version = lines[0].split()[-1]
    if version != str(FORMAT_VERSION):
        raise FormatError(f"unsupported trace version {version}")
    trace = Trace()
    for line in lines[1:]:
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                if key.strip() == "config":
                    trace.config_hash = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) != len(_FIELDS):
            raise FormatError(f"malformed trace row: {line!r}")
        seq, time, vm, op, args, outcome = parts
        trace.events.append(TraceEvent(seq=int(seq), time=float(time),
                                       vm=int(vm), op=op, args=args,
                                       outcome=outcome))
    return trace
