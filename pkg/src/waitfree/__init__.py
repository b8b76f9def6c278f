"""Wait-free history objects, write-and-f-arrays and fetch-and-add.

The data structures run on :class:`NativeArena` registers for real threads or
on :class:`InstrumentedArena` registers for step counting and exhaustive
interleaving exploration (:mod:`waitfree.sched`).
"""
from .faa import CapacityExhausted, Counter, WriterHandle
from .history import HistoryObject, PublisherInUse
from .registers import InstrumentedArena, NativeArena, UsageFault
from .wfarray import HandleReleased, SlotInUse, WriteAndFArray

__all__ = [
    "CapacityExhausted",
    "Counter",
    "HandleReleased",
    "HistoryObject",
    "InstrumentedArena",
    "NativeArena",
    "PublisherInUse",
    "SlotInUse",
    "UsageFault",
    "WriteAndFArray",
    "WriterHandle",
]
__version__ = "0.1.0"
