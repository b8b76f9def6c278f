"""Wait-free fetch-and-add for a fixed number of threads.

The counter is a write-and-f-array of size ``P`` over integer addition. Each
thread owns one element and stores the running total of its own additions
there, so the array's fold is the counter value. A write returns the
post-addition total; subtracting the addend recovers the value before it.
That last step relies on addition being invertible.
"""
from __future__ import annotations

import operator
import threading

from .registers import Arena
from .wfarray import WriteAndFArray


class CapacityExhausted(Exception):
    pass


class WriterHandle:
    """A thread's slot in the counter. Use from one thread at a time."""

    __slots__ = ("_counter", "_writer", "slot", "local_sum")

    def __init__(self, counter: "Counter", writer, local_sum: int = 0) -> None:
        self._counter = counter
        self._writer = writer
        self.slot = writer.slot
        self.local_sum = local_sum

    def fetch_and_add(self, x: int) -> int:
        return self._counter.fetch_and_add(self, x)

    def release(self) -> None:
        """Give the slot back. Only valid once no call on this handle is running."""
        self._counter._release(self)


class Counter:
    def __init__(self, P: int, arena: Arena | None = None) -> None:
        self.P = P
        self._array = WriteAndFArray(P, operator.add, [0] * P, arena)
        self._free = list(range(P - 1, -1, -1))
        # A released slot keeps its value; the next owner continues from it.
        self._sums = [0] * P
        self._lock = threading.Lock()

    @property
    def array(self) -> WriteAndFArray:
        return self._array

    @property
    def registers(self) -> int:
        return self._array.registers

    def register_writer(self) -> WriterHandle:
        with self._lock:
            if not self._free:
                raise CapacityExhausted(f"all {self.P} slots are taken")
            slot = self._free.pop()
            return WriterHandle(self, self._array.writer(slot), self._sums[slot])

    def _release(self, handle: WriterHandle) -> None:
        with self._lock:
            self._sums[handle.slot] = handle.local_sum
            handle._writer.release()
            self._free.append(handle.slot)

    def fetch_and_add(self, handle: WriterHandle, x: int) -> int:
        """Add ``x`` and return the counter value just before the addition."""
        total = handle.local_sum + x
        _, _, after = handle._writer.write_and_f(total)
        handle.local_sum = total
        return after - x

    def read(self) -> int:
        return self._array.read()[1]
