"""Concurrent test programs shared by the exploration and acceptance tests."""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any, Sequence

from waitfree.faa import Counter, WriterHandle
from waitfree.history import HistoryObject
from waitfree.lemmas import LemmaMonitor
from waitfree.linearize import FAASpec, HistoryRecorder, HistorySpec, LinearizabilityMonitor, Spec, WFArraySpec, check
from waitfree.linearize import Violation
from waitfree.registers import InstrumentedArena
from waitfree.sched import Op, explore
from waitfree.wfarray import WriteAndFArray


@dataclass
class Program:
    arena: InstrumentedArena
    threads: list
    spec: Spec
    obj: Any = None


def history_program(N: int, publishers: Sequence[Sequence[tuple]], reader: Sequence[tuple], initial: Any = 0):
    """Publisher ``p`` runs ``publish(v, T)`` for each ``(v, T)``; the reader runs
    ``("get_current",)`` or ``("get", v)`` entries."""
    arena = InstrumentedArena()
    hist = HistoryObject(N, max(1, len(publishers)), initial, arena)
    threads = []
    for p, calls in enumerate(publishers):
        threads.append([Op("publish", (v, T), lambda p=p, v=v, T=T: hist.publish(p, v, T)) for v, T in calls])
    ops = []
    for call in reader:
        if call[0] == "get_current":
            ops.append(Op("get_current", (), hist.get_current))
        else:
            ops.append(Op("get", (call[1],), lambda v=call[1]: hist.get(v)))
    threads.append(ops)
    return Program(arena, threads, HistorySpec(N, initial), hist)


def wfarray_program(N: int, writers: dict, reader: Sequence[tuple], f=operator.add, init=None):
    """``writers`` maps element index to the values written there, one thread each.
    The reader runs ``("read",)`` or ``("get_last", i)`` entries."""
    init = [0] * N if init is None else list(init)
    arena = InstrumentedArena()
    arr = WriteAndFArray(N, f, init, arena)
    threads = []
    for i, values in writers.items():
        w = arr.writer(i)
        threads.append([Op("write_and_f", (i, T), lambda w=w, T=T: w.write_and_f(T)) for T in values])
    ops = []
    for call in reader:
        if call[0] == "read":
            ops.append(Op("read", (), arr.read))
        else:
            ops.append(Op("get_last", (call[1],), lambda i=call[1]: arr.get_last(i)))
    threads.append(ops)
    return Program(arena, threads, WFArraySpec(N, f, init), arr)


def faa_program(P: int, adders: Sequence[Sequence[int]], reads: int = 1):
    """Thread ``k`` adds each amount in ``adders[k]``; one reader reads ``reads`` times."""
    arena = InstrumentedArena()
    counter = Counter(P, arena)
    threads = []
    for amounts in adders:
        base = counter.register_writer()
        ops, before = [], 0
        for x in amounts:
            # One handle per op, reset on entry, so re-running the op starts
            # from the same local sum and the handle's identity stays fixed.
            h = WriterHandle(counter, base._writer, before)

            def run(h=h, before=before, x=x):
                h.local_sum = before
                return h.fetch_and_add(x)
            ops.append(Op("fetch_and_add", (x,), run))
            before += x
        threads.append(ops)
    threads.append([Op("read", (), counter.read) for _ in range(reads)])
    return Program(arena, threads, FAASpec(), counter)


def explore_checked(prog: Program, mode: str = "incremental", lemmas: bool = True, **kw):
    """Explore ``prog`` with the lemma monitor and a linearizability check.

    ``mode="incremental"`` keeps an online monitor in the state;
    ``mode="histories"`` records every distinct history and runs the offline
    checker on each at the end of its schedule.
    """
    observers = []
    monitor = None
    if lemmas:
        a = prog.arena
        monitor = LemmaMonitor(a.structures, a.tags, a.snapshot())
        observers.append(monitor)
    on_terminal = None
    histories: dict = {}
    if mode == "incremental":
        observers.append(LinearizabilityMonitor(prog.spec))
    else:
        rec = HistoryRecorder()
        observers.append(rec)

        def on_terminal(store, states):
            h = rec.history(states[-1])
            verdict = histories.get(h)
            if verdict is None:
                verdict = histories[h] = check(h, prog.spec, cap=64, minimize=False)
            if not verdict.linearizable:
                raise Violation("linearizability", f"history not linearizable:\n{h.dump()}")

    result = explore(prog.arena, prog.threads, observers, on_terminal, **kw)
    result.monitor = monitor
    result.histories = histories
    return result
