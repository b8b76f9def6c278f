"""Single-writer write-and-f-array.

An ``N``-element array parameterised by an associative ``f``. ``write_and_f(i, T)``
stores ``T`` in element ``i`` and atomically returns ``f`` folded over the whole
array, together with the number of writes to ``i`` so far and a version number.
``read()`` returns the current version and fold in O(1) steps.

The structure is a binary tree. Leaves hold one element each. An inner node of
size ``N`` owns a history object of capacity ``N + 1`` whose values record both
children's aggregates and versions, plus one ``LastValue`` register per element
caching what ``get_last`` should answer.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import reduce
from typing import Any, Callable, NamedTuple, Sequence

from .history import HistoryObject, SlotRecord
from .registers import Arena, NativeArena


class NodeValue(NamedTuple):
    """Children's aggregates ``T`` and their versions ``v``, as published at a node."""

    T: tuple
    v: tuple


class LastValue(NamedTuple):
    """Write count ``n``, version ``v`` and aggregate ``T`` of an element's latest write."""

    n: int
    v: int
    T: Any


@dataclass(frozen=True)
class LeafInfo:
    sid: int
    S: int


@dataclass(frozen=True)
class NodeInfo:
    sid: int
    N: int
    f: Callable[[Any, Any], Any]
    hist: int
    L: tuple
    children: tuple
    initial: Any


class SlotInUse(Exception):
    pass


class HandleReleased(Exception):
    """A writer handle was used after :meth:`SlotWriter.release`."""


def side(i: int, N: int) -> int:
    """Which child (0 or 1) element ``i`` of an ``N``-node belongs to."""
    return 0 if i < (N + 1) // 2 else 1


def child_id(i: int, N: int) -> int:
    """Index of element ``i`` within its child."""
    half = (N + 1) // 2
    return i if i < half else i - half


class _Leaf:
    size = 1

    def __init__(self, mem: Arena, f: Callable, init: Sequence) -> None:
        self._mem = mem
        self.sid = sid = mem.reserve_structure()
        self._S = mem.alloc(SlotRecord(0, init[0]), (sid, "leaf", 0))
        mem.describe(sid, LeafInfo(sid, self._S))

    def read(self) -> tuple[int, Any]:
        s = self._mem.rd(self._S)
        return s.v, s.T

    def write_and_f(self, i: int, T: Any) -> LastValue:
        mem = self._mem
        s = mem.rd(self._S)
        mem.wr(self._S, SlotRecord(s.v + 1, T))
        return LastValue(s.v + 1, s.v + 1, T)

    def get_last(self, i: int) -> LastValue:
        s = self._mem.rd(self._S)
        return LastValue(s.v, s.v, s.T)


class _Node:
    def __init__(self, mem: Arena, f: Callable, init: Sequence) -> None:
        N = len(init)
        half = (N + 1) // 2
        self._mem = mem
        self._f = f
        self.size = N
        self.sid = sid = mem.reserve_structure()
        self._C = (_build(mem, f, init[:half]), _build(mem, f, init[half:]))
        left, right = reduce(f, init[:half]), reduce(f, init[half:])
        total = f(left, right)
        self._H = HistoryObject(N + 1, N, NodeValue((left, right), (0, 0)), mem, owner=sid)
        self._L = tuple(mem.alloc(LastValue(0, 0, total), (sid, "last", x)) for x in range(N))
        # Element i lives at slot _route[i][1] of child _route[i][0].
        self._route = tuple((side(i, N), child_id(i, N)) for i in range(N))
        mem.describe(
            sid,
            NodeInfo(sid, N, f, self._H.sid, self._L, (self._C[0].sid, self._C[1].sid), total),
        )

    def read(self) -> tuple[int, Any]:
        v, h = self._H.get_current()
        return v, self._f(h.T[0], h.T[1])

    def write_and_f(self, i: int, T: Any) -> LastValue:
        mem = self._mem
        mem.open_mark("wfa_begin", self.sid, i)
        s, c = self._route[i]
        self._C[s].write_and_f(c, T)
        mem.open_mark("updates_begin", self.sid)
        attempts = 1
        if not self._update(i):
            attempts = 2
            self._update(i)
        mem.mark("updates_end", self.sid, attempts)
        last = self.get_last(i)
        mem.mark("wfa_end", self.sid, i)
        return last

    def _update(self, i: int) -> bool:
        mem = self._mem
        mem.open_mark("update_begin", self.sid)
        v, _ = self._H.get_current()
        v0, T0 = self._C[0].read()
        v1, T1 = self._C[1].read()
        self._help(v % self.size)
        ok = self._H.publish(i, v + 1, NodeValue((T0, T1), (v0, v1)))
        mem.mark("update_end", self.sid, ok)
        return ok

    def _help(self, x: int) -> None:
        # Bring L[x] up to date with the latest write to x that H has absorbed.
        mem = self._mem
        marks = mem.records_marks
        get = self._H.get
        s, c = self._route[x]
        lc = self._C[s].get_last(c)
        lc_v = lc.v
        current = self._H.get_current()[0]
        # First version in the window whose published child version covers lc.
        # The predicate may change while we search; the result is only relied
        # on when it does not.
        lo, hi = current - (self.size + 1), current
        found = None
        while lo <= hi:
            mid = (lo + hi) // 2
            if marks:
                mem.mark("bs_probe", self.sid, mid, current)
            h = get(mid)
            if h is not None and h.v[s] >= lc_v:
                found = mid
                hi = mid - 1
            else:
                lo = mid + 1
        if found is None:
            return
        h_old = get(found - 1)
        h_new = get(found)
        if h_old is None or h_new is None:
            return
        if s == 0:
            T = self._f(lc.T, h_old.T[1])
        else:
            T = self._f(h_new.T[0], lc.T)
        reg = self._L[x]
        l = mem.rd(reg)
        if l.n < lc.n:
            mem.cas(reg, l, LastValue(lc.n, found, T))

    def get_last(self, x: int) -> LastValue:
        mem = self._mem
        mem.open_mark("get_last_begin", self.sid, x)
        self._help(x)
        last = mem.rd(self._L[x])
        mem.mark("get_last_end", self.sid, x, last.n)
        return last


def _build(mem: Arena, f: Callable, init: Sequence):
    if len(init) == 1:
        return _Leaf(mem, f, init)
    return _Node(mem, f, init)


class WriteAndFArray:
    """Wait-free single-writer write-and-f-array of fixed size.

    ``read`` and ``get_last`` may be called by any thread at any time. Writes to
    element ``i`` go through the handle returned by :meth:`writer`, of which
    there is exactly one per element.
    """

    def __init__(self, size: int, f: Callable[[Any, Any], Any], init: Sequence, arena: Arena | None = None):
        if size < 1:
            raise ValueError("write-and-f-array needs at least one element")
        init = list(init)
        if len(init) != size:
            raise ValueError(f"expected {size} initial values, got {len(init)}")
        self.size = size
        self.f = f
        self.arena = arena if arena is not None else NativeArena()
        allocated = self.arena.allocation_count
        self._root = _build(self.arena, f, init)
        self.registers = self.arena.allocation_count - allocated
        self._claimed = [False] * size
        self._claim_lock = threading.Lock()

    @property
    def sid(self) -> int:
        return self._root.sid

    def read(self) -> tuple[int, Any]:
        """Return ``(version, f(a[0], ..., a[N-1]))``."""
        return self._root.read()

    def get_last(self, i: int) -> LastValue:
        """``(n, v, T)`` of the latest write to element ``i``; ``(0, 0, fold of init)`` before any."""
        self._check_index(i)
        return self._root.get_last(i)

    def writer(self, i: int) -> "SlotWriter":
        """Claim the exclusive writer handle for element ``i``."""
        self._check_index(i)
        with self._claim_lock:
            if self._claimed[i]:
                raise SlotInUse(f"element {i} already has a writer")
            self._claimed[i] = True
        return SlotWriter(self, i)

    def _release(self, i: int) -> None:
        with self._claim_lock:
            self._claimed[i] = False

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.size:
            raise IndexError(f"element {i} out of range [0, {self.size})")


class SlotWriter:
    """Sole right to write one element. Release it only when no write is in flight."""

    __slots__ = ("_array", "slot", "_write")

    def __init__(self, array: WriteAndFArray, slot: int) -> None:
        self._array = array
        self.slot = slot
        self._write = array._root.write_and_f

    def write_and_f(self, T: Any) -> LastValue:
        return self._write(self.slot, T)

    def release(self) -> None:
        if self._write is _released:
            raise HandleReleased(f"writer for element {self.slot} was already released")
        self._write = _released
        self._array._release(self.slot)


def _released(i: int, T: Any) -> LastValue:
    raise HandleReleased(f"writer for element {i} was released")
