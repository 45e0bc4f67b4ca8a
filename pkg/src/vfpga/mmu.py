"""Software MMU: device DDR carved into fixed-size segments.

Allocation is first-fit over a mark array (free segments are 0, used are
1), scanning ascending from index 0 and returning the first contiguous run
long enough. Requests round up to whole segments but the handle keeps the
exact requested size so buffer bounds checks stay byte-accurate.

SegmentPool is the normative array-scan implementation. LinkedSegmentPool
keeps a sorted free-run list instead of rescanning the marks; it must be
observationally identical and is exercised by the same oracle tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import ceil
from typing import Optional

from .errors import (ConfigError, InvalidAddress, InvalidHandle, InvalidSize,
                     OutOfDeviceMemory)

SEGMENT_SIZE = 1 << 20  # 1 MiB


@dataclass(frozen=True)
class MemHandle:
    handle_id: int
    base_addr: int
    size: int
    first_segment: int
    segment_count: int
    owner: int

    @property
    def segment_span(self) -> tuple:
        return (self.first_segment, self.segment_count)


class SegmentPool:
    backend = "array"

    def __init__(self, ddr_size: int, segment_size: int = SEGMENT_SIZE):
        if segment_size <= 0:
            raise ConfigError(f"segment_size {segment_size} must be positive")
        if ddr_size <= 0 or ddr_size % segment_size:
            raise ConfigError(
                f"ddr_size {ddr_size} is not a positive multiple of "
                f"segment_size {segment_size}")
        self.segment_size = segment_size
        self.ddr_size = ddr_size
        self.segment_count = ddr_size // segment_size
        self.marks = bytearray(self.segment_count)
        self.owners: list = [None] * self.segment_count
        self._live: dict = {}
        self._ids = itertools.count(1)

    # window is a (lo, hi) segment-index range restricting the search; the
    # broker uses it to pin allocations inside a region's guard range.
    def allocate(self, vm: int, size: int,
                 window: Optional[tuple] = None) -> MemHandle:
        if size <= 0:
            raise InvalidSize(f"allocation of {size} bytes")
        count = ceil(size / self.segment_size)
        lo, hi = window if window is not None else (0, self.segment_count)
        start = self._find_run(count, lo, hi)
        if start is None:
            raise OutOfDeviceMemory(
                f"no free run of {count} segments in [{lo}, {hi})")
        self._claim(start, count, vm)
        handle = MemHandle(handle_id=next(self._ids),
                           base_addr=start * self.segment_size,
                           size=size, first_segment=start,
                           segment_count=count, owner=vm)
        self._live[handle.handle_id] = handle
        return handle

    def free(self, handle: MemHandle) -> None:
        live = self._live.get(handle.handle_id)
        if live is None or live != handle:
            raise InvalidHandle(f"handle {handle.handle_id} is not live")
        del self._live[handle.handle_id]
        self._release(handle.first_segment, handle.segment_count)

    def owner_of(self, addr: int):
        if not 0 <= addr < self.ddr_size:
            raise InvalidAddress(f"address {addr:#x} outside device memory")
        return self.owners[addr // self.segment_size]

    def lookup(self, handle_id: int) -> Optional[MemHandle]:
        return self._live.get(handle_id)

    def live_handles(self) -> list:
        return list(self._live.values())

    def used_segment_count(self) -> int:
        return sum(self.marks)

    # -- backend hooks ----------------------------------------------------

    def _find_run(self, count: int, lo: int, hi: int):
        run = 0
        for i in range(lo, hi):
            if self.marks[i]:
                run = 0
            else:
                run += 1
                if run == count:
                    return i - count + 1
        return None

    def _claim(self, start: int, count: int, vm: int) -> None:
        for i in range(start, start + count):
            self.marks[i] = 1
            self.owners[i] = vm

    def _release(self, start: int, count: int) -> None:
        for i in range(start, start + count):
            self.marks[i] = 0
            self.owners[i] = None


class _Run:
    __slots__ = ("start", "count", "next")

    def __init__(self, start, count, nxt=None):
        self.start = start
        self.count = count
        self.next = nxt


class LinkedSegmentPool(SegmentPool):
    """Free-run linked list variant; avoids rescanning the mark array."""

    backend = "linked"

    def __init__(self, ddr_size: int, segment_size: int = SEGMENT_SIZE):
        super().__init__(ddr_size, segment_size)
        self._head = _Run(0, self.segment_count)

    def _find_run(self, count: int, lo: int, hi: int):
        node = self._head
        while node is not None:
            start = max(node.start, lo)
            if start + count <= min(node.start + node.count, hi):
                return start
            node = node.next
        return None

    def _claim(self, start: int, count: int, vm: int) -> None:
        super()._claim(start, count, vm)
        prev, node = None, self._head
        while node is not None:
            if node.start <= start and start + count <= node.start + node.count:
                break
            prev, node = node, node.next
        assert node is not None, "claim outside any free run"
        tail_start = start + count
        tail_count = node.start + node.count - tail_start
        if node.start < start:
            node.count = start - node.start
            if tail_count:
                node.next = _Run(tail_start, tail_count, node.next)
        elif tail_count:
            node.start, node.count = tail_start, tail_count
        elif prev is None:
            self._head = node.next
        else:
            prev.next = node.next

    def _release(self, start: int, count: int) -> None:
        super()._release(start, count)
        prev, node = None, self._head
        while node is not None and node.start < start:
            prev, node = node, node.next
        # merge with the left neighbour, the right neighbour, or both
        if prev is not None and prev.start + prev.count == start:
            prev.count += count
            if node is not None and node.start == prev.start + prev.count:
                prev.count += node.count
                prev.next = node.next
            return
        fresh = _Run(start, count, node)
        if node is not None and start + count == node.start:
            fresh.count += node.count
            fresh.next = node.next
        if prev is None:
            self._head = fresh
        else:
            prev.next = fresh


POOL_BACKENDS = {"array": SegmentPool, "linked": LinkedSegmentPool}
