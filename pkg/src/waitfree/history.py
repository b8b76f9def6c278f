"""Wait-free bounded history: a versioned cell that remembers its last N values.

``publish(v, T)`` succeeds only if ``v`` is one more than the current version.
``get(v)`` returns the value published as version ``v`` while it is still among
the last N, ``None`` otherwise. Every operation takes a constant number of
register actions.

Publishers are identified by an index in ``[0, P)``; two publishes with the same
index must never overlap in time.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, NamedTuple

from .registers import Arena, NativeArena


class HeadRecord(NamedTuple):
    """Version and publisher of the most recently published value."""

    v: int
    p: int


class SlotRecord(NamedTuple):
    v: int
    T: Any


@dataclass(frozen=True)
class HistoryInfo:
    """Descriptor used by the lemma checker to interpret history registers."""

    sid: int
    N: int
    P: int
    S: int
    H: tuple
    L: tuple
    owner: int | None = None


class PublisherInUse(Exception):
    pass


class HistoryObject:
    """Bounded history of capacity ``N`` shared by ``P`` publishers.

    Initial contents are chosen so that every slot's version is congruent to its
    index modulo ``N``: slot 0 holds ``(0, initial)`` and slot ``i`` holds
    ``(i - N, bottom)``. ``bottom`` is never returned to callers.
    """

    def __init__(
        self,
        N: int,
        P: int,
        initial: Any,
        arena: Arena | None = None,
        bottom: Any = None,
        owner: int | None = None,
    ) -> None:
        if N < 1 or P < 1:
            raise ValueError("history needs N >= 1 and P >= 1")
        self.N = N
        self.P = P
        self._mem = mem = arena if arena is not None else NativeArena()
        self.sid = sid = mem.reserve_structure()
        self._S = mem.alloc(HeadRecord(0, 0), (sid, "S", 0))
        self._H = tuple(
            mem.alloc(SlotRecord(0, initial) if i == 0 else SlotRecord(i - N, bottom), (sid, "H", i))
            for i in range(N)
        )
        self._L = tuple(mem.alloc(SlotRecord(-1, bottom), (sid, "L", p)) for p in range(P))
        mem.describe(sid, HistoryInfo(sid, N, P, self._S, self._H, self._L, owner))
        self._claimed = [False] * P
        self._claim_lock = threading.Lock()
        self._rd, self._cas, self._mark = mem.reader(), mem.cas, mem.mark
        self._marks = mem.records_marks

    @property
    def arena(self) -> Arena:
        return self._mem

    def get_current(self) -> tuple[int, Any]:
        """Return ``(version, value)`` of the latest publish."""
        sv, _ = self._rd(self._S)
        self._help()
        return tuple(self._rd(self._H[sv % self.N]))

    def get(self, v: int) -> Any:
        """Value published as version ``v``, or ``None`` if unpublished or evicted."""
        if v < 0:
            return None
        sv, _ = self._rd(self._S)
        if sv < v:
            return None
        self._help()
        hv, T = self._rd(self._H[v % self.N])
        if hv == v:
            return T
        return None

    def publish(self, p: int, v: int, T: Any) -> bool:
        """Publish ``T`` as version ``v`` on behalf of publisher ``p``.

        Callers must never run two publishes with the same ``p`` at once;
        :meth:`publisher` hands out handles that make this explicit.
        """
        mem = self._mem
        mem.open_mark("publish_begin", self.sid, p)
        s = self._rd(self._S)
        if v != s.v + 1:
            mem.mark("publish_end", self.sid, p)
            return False
        self._help()
        mem.wr(self._L[p], SlotRecord(v, T))
        ok = mem.cas(self._S, s, HeadRecord(v, p))
        mem.mark("publish_end", self.sid, p)
        return ok

    def _help(self) -> None:
        # Copy the latest published value from its staging slot into H.
        rd = self._rd
        sv, sp = rd(self._S)
        l = rd(self._L[sp])
        slot = self._H[sv % self.N]
        h = rd(slot)
        if l[0] == sv and h[0] < sv:
            self._cas(slot, h, l)
        if self._marks:
            self._mark("hist_help_end", self.sid, sv)

    def publisher(self, p: int) -> "Publisher":
        """Claim the exclusive handle for publisher index ``p``."""
        if not 0 <= p < self.P:
            raise IndexError(f"publisher index {p} out of range [0, {self.P})")
        with self._claim_lock:
            if self._claimed[p]:
                raise PublisherInUse(f"publisher {p} already claimed")
            self._claimed[p] = True
        return Publisher(self, p)


class Publisher:
    """Exclusive right to publish as one publisher index."""

    __slots__ = ("_hist", "p")

    def __init__(self, hist: HistoryObject, p: int) -> None:
        self._hist = hist
        self.p = p

    def publish(self, v: int, T: Any) -> bool:
        return self._hist.publish(self.p, v, T)
