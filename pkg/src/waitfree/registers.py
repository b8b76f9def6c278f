"""Atomic read/write/CAS registers over immutable records.

Two interchangeable backends share one interface:

* :class:`NativeArena` runs on real threads. Reads are plain reference loads;
  writes and compare-and-swap take a per-register lock, which is how a
  single-word CAS on a record handle is expressed in Python.
* :class:`InstrumentedArena` counts every register action and, when a
  scheduler is attached (see :mod:`waitfree.sched`), turns each action into a
  yield point so interleavings can be explored deterministically.

Register values are immutable records (tuples, usually ``NamedTuple``). CAS
compares them structurally. Every record type that the algorithms in this
package CAS carries a monotone version field, so structural comparison cannot
suffer from ABA.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable

RegisterId = int


class UsageFault(Exception):
    """A register operation was called with an id this arena never handed out."""


@dataclass(frozen=True)
class TraceEvent:
    """One register action or ghost mark recorded by the instrumented backend.

    ``kind`` is ``"rd"``, ``"wr"``, ``"cas"`` or ``"mark"``. For ``wr`` the
    written value is ``args[0]``; for ``cas`` the expected and new values are
    ``args[0]`` and ``args[1]``. Marks carry ``(name, *data)`` in ``args`` and
    have ``reg=None``.
    """

    step: int
    thread: int
    kind: str
    reg: RegisterId | None
    args: tuple
    result: Any = None


@dataclass
class Trace:
    """Register-level log of an instrumented run, replayable by the lemma checker."""

    initial: tuple
    tags: tuple
    structures: tuple
    events: list[TraceEvent] = field(default_factory=list)


class Arena:
    """Common bookkeeping: allocation, register tags and structure descriptors.

    Structure descriptors let the lemma checker interpret register traces (which
    registers form which history object, which tree node owns them, and so on).
    """

    def __init__(self) -> None:
        self._cells: list[Any] = []
        self._tags: list[tuple | None] = []
        self._structures: list[Any] = []
        self._alloc_lock = threading.Lock()

    @property
    def allocation_count(self) -> int:
        return len(self._cells)

    @property
    def structures(self) -> tuple:
        return tuple(self._structures)

    @property
    def tags(self) -> tuple:
        return tuple(self._tags)

    def alloc(self, initial: Any, tag: tuple | None = None) -> RegisterId:
        with self._alloc_lock:
            self._cells.append(initial)
            self._tags.append(tag)
            self._on_alloc()
            return len(self._cells) - 1

    def _on_alloc(self) -> None:
        pass

    def reserve_structure(self) -> int:
        """Reserve a descriptor slot; fill it later with :meth:`describe`."""
        with self._alloc_lock:
            self._structures.append(None)
            return len(self._structures) - 1

    def describe(self, sid: int, info: Any) -> None:
        self._structures[sid] = info

    def snapshot(self) -> tuple:
        """Current contents of every register, indexed by ``RegisterId``."""
        return tuple(self._cells)

    def _check(self, r: RegisterId) -> None:
        if not (type(r) is int and 0 <= r < len(self._cells)):
            raise UsageFault(f"unknown register id {r!r}")

    def reader(self) -> Callable[[RegisterId], Any]:
        """A read function for ids this arena allocated; may skip validation."""
        return self.rd

    # Ghost marks are free annotations used by the lemma checker. They never
    # touch shared memory and never count as steps. Hot loops may skip them
    # when ``records_marks`` is false.
    records_marks = False

    def mark(self, name: str, *data: Any) -> None:
        pass

    def open_mark(self, name: str, *data: Any) -> None:
        pass


class NativeArena(Arena):
    """Registers for real threads. Safe to use from any number of threads."""

    def __init__(self) -> None:
        super().__init__()
        self._locks: list[threading.Lock] = []

    def _on_alloc(self) -> None:
        self._locks.append(threading.Lock())

    def reader(self) -> Callable[[RegisterId], Any]:
        # Reference loads need no lock; the list object never changes identity.
        return self._cells.__getitem__

    def rd(self, r: RegisterId) -> Any:
        self._check(r)
        return self._cells[r]

    def wr(self, r: RegisterId, value: Any) -> None:
        self._check(r)
        with self._locks[r]:
            self._cells[r] = value

    def cas(self, r: RegisterId, expected: Any, new: Any) -> bool:
        self._check(r)
        with self._locks[r]:
            if self._cells[r] == expected:
                self._cells[r] = new
                return True
            return False


class InstrumentedArena(Arena):
    """Step-counting registers for a single real thread.

    Without a scheduler attached, operations execute immediately, ``steps`` is
    incremented once per register action and, if tracing is on, every action
    and mark is appended to :attr:`trace`. With a scheduler attached, each
    action is handed to the scheduler greenlet, which decides when it happens.

    Not safe to share with real threads, and not to be mixed with a native arena.
    """

    records_marks = True

    def __init__(self) -> None:
        super().__init__()
        self.steps = 0
        self.thread = 0
        self.trace: Trace | None = None
        # Set by the scheduler while logical threads run.
        self._hub = None
        self._sink: list | None = None

    def start_trace(self) -> Trace:
        self.trace = Trace(self.snapshot(), self.tags, self.structures)
        return self.trace

    def stop_trace(self) -> Trace | None:
        trace, self.trace = self.trace, None
        return trace

    def _log(self, kind: str, r: RegisterId | None, args: tuple, result: Any) -> None:
        self.trace.events.append(TraceEvent(self.steps, self.thread, kind, r, args, result))

    def rd(self, r: RegisterId) -> Any:
        if self._hub is not None:
            return self._hub.switch(("rd", r))
        self._check(r)
        self.steps += 1
        value = self._cells[r]
        if self.trace is not None:
            self._log("rd", r, (), value)
        return value

    def wr(self, r: RegisterId, value: Any) -> None:
        if self._hub is not None:
            self._hub.switch(("wr", r, value))
            return
        self._check(r)
        self.steps += 1
        self._cells[r] = value
        if self.trace is not None:
            self._log("wr", r, (value,), None)

    def cas(self, r: RegisterId, expected: Any, new: Any) -> bool:
        if self._hub is not None:
            return self._hub.switch(("cas", r, expected, new))
        self._check(r)
        self.steps += 1
        ok = self._cells[r] == expected
        if ok:
            self._cells[r] = new
        if self.trace is not None:
            self._log("cas", r, (expected, new), ok)
        return ok

    def mark(self, name: str, *data: Any) -> None:
        if self._sink is not None:
            self._sink.append((name, data, False))
        elif self.trace is not None:
            self._log("mark", None, (name, *data), None)

    def open_mark(self, name: str, *data: Any) -> None:
        if self._sink is not None:
            self._sink.append((name, data, True))
        elif self.trace is not None:
            self._log("mark", None, (name, *data), None)
