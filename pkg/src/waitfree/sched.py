"""Deterministic scheduling of logical threads over an instrumented arena.

Each logical thread is a list of :class:`Op` objects. Every op runs in its own
greenlet, and every register action the op performs is handed to a scheduler
that decides when it happens. Two schedulers are provided:

* :class:`Run` executes one chosen interleaving step by step against the
  arena's registers and records a :class:`~waitfree.registers.Trace` plus the
  invoke/response history. Use it for hand-built or random schedules.
* :func:`explore` visits every interleaving. It is stateful: a global state is
  the register contents, the position of each thread, and the state of each
  observer (invariant monitors, linearizability monitors). Schedules reaching
  an already seen state are merged, so the number of states stays far below
  the number of schedules, which is still counted exactly.

A thread's position is the op it is running plus the results of the register
actions it has performed in that op. The algorithms are deterministic, so
equal positions behave identically from then on. Positions form a tree; a
greenlet is attached to the position it has reached, and a position whose
greenlet moved on is re-created by replaying the recorded results when another
branch needs it.

With ``merge=True`` two positions are also identified when the suspended
greenlets have the same frames: same code, same instruction offset, equal
local variables, and the same records waiting to be emitted. Results that
only fed a helper whose locals are gone no longer split the state space.
This relies on ops keeping no temporaries on the evaluation stack that are
not functions of their locals while they wait for a register action, which
holds for the code in this package (every action is a statement-level call
whose arguments are locals or constants).

Ops therefore have to be re-runnable: calling ``op.run()`` again from the same
register contents must perform the same actions. Anything an op mutates
outside the arena has to be created inside ``run``.

Timing of annotations: an op emits ghost marks and its invoke/response
records between register actions. Records are attached to the action before
them, except that everything from the first *opening* record (invoke, or a
mark that opens an interval) onwards is attached to the action after them.
An op's execution interval therefore spans exactly its register actions.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from greenlet import greenlet

from .linearize import INVOKE, INVOKE_ITEM, RESPONSE, RESPONSE_ITEM, ConcurrentHistory, Event, Violation
from .registers import InstrumentedArena, Trace, TraceEvent

NOP = ("nop",)
_END = object()


@dataclass(frozen=True)
class Op:
    """One operation of a logical thread.

    ``run`` performs it and returns its result; ``name`` and ``args`` are what
    the history records and what the sequential oracle is asked to do.
    """

    name: str
    args: tuple
    run: Callable[[], Any] = field(compare=False)


def format_schedule(schedule: Sequence[int]) -> str:
    """Thread ids of a schedule as a comma-separated list."""
    return ",".join(str(t) for t in schedule)


def parse_schedule(text: str) -> list[int]:
    text = text.strip()
    return [int(x) for x in text.split(",")] if text else []


def _split(items: list) -> tuple[tuple, tuple]:
    for k, item in enumerate(items):
        if item[2]:
            return tuple(items[:k]), tuple(items[k:])
    return tuple(items), ()


class _Driver:
    """Starts and resumes op greenlets, collecting what they emit."""

    def __init__(self, arena: InstrumentedArena, threads: Sequence[Sequence[Op]]) -> None:
        if not isinstance(arena, InstrumentedArena):
            raise TypeError("scheduling needs an InstrumentedArena")
        if arena._hub is not None:
            raise RuntimeError("arena is already attached to a scheduler")
        self.arena = arena
        self.threads = [list(ops) for ops in threads]
        self.op_ids: list[list[int]] = []
        n = 0
        for ops in self.threads:
            self.op_ids.append(list(range(n, n + len(ops))))
            n += len(ops)

    def _body(self, t: int, j: int) -> Callable[[], Any]:
        op = self.threads[t][j]
        op_id = self.op_ids[t][j]
        arena = self.arena

        def body():
            arena._sink.append((INVOKE_ITEM, (op_id, op.name, tuple(op.args)), True))
            result = op.run()
            arena._sink.append((RESPONSE_ITEM, (op_id, result), False))
            return _END

        return body

    def _switch(self, glet: greenlet, *value) -> tuple[Any, list]:
        arena = self.arena
        items: list = []
        arena._sink = items
        arena._hub = greenlet.getcurrent()
        try:
            res = glet.switch(*value)
        finally:
            arena._sink = None
            arena._hub = None
        return res, items

    def start(self, t: int, j: int) -> tuple[greenlet | None, tuple, list]:
        """Run op ``j`` of thread ``t`` up to its first action."""
        glet = greenlet(self._body(t, j))
        res, items = self._switch(glet)
        if res is _END:
            return None, NOP, items
        return glet, res, items

    def resume(self, glet: greenlet | None, obs: Any) -> tuple[Any, list]:
        """Deliver an action's result; returns the next action (or ``_END``) and new records."""
        if glet is None:
            return _END, []
        return self._switch(glet, obs)


def _canon(v: Any) -> Any:
    # Tag scalars with their type so that, say, True and 1 stay distinct.
    if type(v) is tuple or isinstance(v, tuple):
        return (type(v), tuple(_canon(x) for x in v))
    try:
        hash(v)
    except TypeError:
        return ("id", id(v))
    return (type(v), v)


def _frames(glet: greenlet) -> tuple:
    """Code position and locals of every frame of a suspended greenlet."""
    sig = []
    f = glet.gr_frame
    while f is not None:
        sig.append((f.f_code, f.f_lasti, tuple((k, _canon(v)) for k, v in f.f_locals.items())))
        f = f.f_back
    return tuple(sig)


def _apply(store, action: tuple):
    """Perform ``action`` on a register tuple. Returns ``(result, new_store)``."""
    kind = action[0]
    if kind == "rd":
        return store[action[1]], store
    if kind == "wr":
        r = action[1]
        return None, store[:r] + (action[2],) + store[r + 1:]
    if kind == "cas":
        r = action[1]
        if store[r] == action[2]:
            return True, store[:r] + (action[3],) + store[r + 1:]
        return False, store
    return None, store


class Run:
    """Step-by-step execution of one interleaving on the arena's registers.

    ``step(t)`` performs thread ``t``'s next register action. The arena's
    ``steps`` counter advances once per action; ``trace`` records actions and
    marks, and ``history`` the invokes and responses, all with strictly
    increasing ``step`` fields.
    """

    def __init__(self, arena: InstrumentedArena, threads: Sequence[Sequence[Op]]) -> None:
        self._d = _Driver(arena, threads)
        self.arena = arena
        self.trace = Trace(arena.snapshot(), arena.tags, arena.structures)
        self.events: list[Event] = []
        self.schedule: list[int] = []
        self.results: list[list] = [[] for _ in self._d.threads]
        self._seq = 0
        self._names: dict[int, tuple] = {}
        n = len(self._d.threads)
        self._op = [0] * n
        self._glet: list = [None] * n
        self._action: list = [None] * n
        self._pre: list = [()] * n
        for t in range(n):
            self._begin(t)

    def _begin(self, t: int) -> None:
        j = self._op[t]
        if j >= len(self._d.threads[t]):
            self._action[t] = None
            return
        glet, action, items = self._d.start(t, j)
        self._glet[t], self._action[t], self._pre[t] = glet, action, tuple(items)

    def enabled(self) -> list[int]:
        return [t for t, a in enumerate(self._action) if a is not None]

    @property
    def done(self) -> bool:
        return all(a is None for a in self._action)

    @property
    def history(self) -> ConcurrentHistory:
        return ConcurrentHistory(self.events)

    def next_action(self, t: int) -> tuple | None:
        return self._action[t]

    def _record(self, t: int, items) -> None:
        for name, data, _ in items:
            self._seq += 1
            if name == INVOKE_ITEM:
                op_id, op_name, args = data
                self._names[op_id] = (op_name, args)
                self.events.append(Event(self._seq, t, op_id, INVOKE, op_name, args))
            elif name == RESPONSE_ITEM:
                op_id, result = data
                op_name, args = self._names[op_id]
                self.events.append(Event(self._seq, t, op_id, RESPONSE, op_name, args, result))
                self.results[t].append(result)
            else:
                self.trace.events.append(TraceEvent(self._seq, t, "mark", None, (name, *data)))

    def step(self, t: int) -> None:
        action = self._action[t]
        if action is None:
            raise ValueError(f"thread {t} has finished")
        self.schedule.append(t)
        self._record(t, self._pre[t])
        arena = self.arena
        cells = arena._cells
        kind = action[0]
        if kind != "nop":
            arena._check(action[1])
            arena.steps += 1
            self._seq += 1
            r = action[1]
            if kind == "rd":
                obs = cells[r]
                self.trace.events.append(TraceEvent(self._seq, t, "rd", r, (), obs))
            elif kind == "wr":
                obs = None
                cells[r] = action[2]
                self.trace.events.append(TraceEvent(self._seq, t, "wr", r, (action[2],)))
            else:
                obs = cells[r] == action[2]
                if obs:
                    cells[r] = action[3]
                self.trace.events.append(TraceEvent(self._seq, t, "cas", r, (action[2], action[3]), obs))
        else:
            obs = None
        res, items = self._d.resume(self._glet[t], obs)
        if res is _END:
            self._record(t, items)
            self._op[t] += 1
            self._begin(t)
        else:
            post, pre = _split(items)
            self._record(t, post)
            self._action[t], self._pre[t] = res, pre

    def run(self, schedule: Sequence[int] | str) -> "Run":
        """Follow ``schedule``, then finish remaining threads lowest id first."""
        if isinstance(schedule, str):
            schedule = parse_schedule(schedule)
        for t in schedule:
            self.step(t)
        return self.finish()

    def finish(self) -> "Run":
        while not self.done:
            self.step(self.enabled()[0])
        return self

    def run_random(self, rng) -> "Run":
        """Pick uniformly among enabled threads until all finish."""
        while not self.done:
            self.step(rng.choice(self.enabled()))
        return self


# -- exhaustive exploration ---------------------------------------------------


class _Pos:
    __slots__ = ("thread", "op", "parent", "obs", "action", "pre", "edges", "glet", "nid")

    def __init__(self, thread, op, parent, obs, action, pre, glet, nid):
        self.thread, self.op, self.parent, self.obs = thread, op, parent, obs
        self.action, self.pre, self.glet, self.nid = action, pre, glet, nid
        self.edges: dict = {}


@dataclass
class ViolationRecord:
    kind: str
    message: str
    schedule: str


@dataclass
class ExplorationResult:
    """Summary of :func:`explore`.

    ``schedules`` counts complete interleavings (exact when ``complete``).
    ``terminals`` maps each distinct final global state to the register
    contents and final observer states.
    """

    complete: bool
    states: int
    schedules: int
    positions: int
    terminals: list
    violations: list
    elapsed: float
    replays: int = 0

    @property
    def ok(self) -> bool:
        return self.complete and not self.violations


class _Interner:
    __slots__ = ("ids", "items")

    def __init__(self) -> None:
        self.ids: dict = {}
        self.items: list = []

    def __call__(self, x) -> int:
        k = self.ids.get(x)
        if k is None:
            k = len(self.items)
            self.ids[x] = k
            self.items.append(x)
        return k


class _Explorer:
    def __init__(self, arena, threads, observers, on_terminal, max_states, stop_on_violation, merge):
        self.d = _Driver(arena, threads)
        self.merge = merge
        self.by_frames: dict = {}
        self.observers = list(observers)
        self.on_terminal = on_terminal
        self.max_states = max_states
        self.stop_on_violation = stop_on_violation
        self.nodes: list[_Pos] = []
        self.roots: dict = {}
        self.stores = _Interner()
        self.obs_tables = [_Interner() for _ in self.observers]
        self.quiet_reads = all(getattr(o, "ignores_reads", False) for o in self.observers)
        self.replays = 0

    # positions ------------------------------------------------------------

    def _new(self, t, j, parent, obs, action, pre, glet) -> _Pos:
        node = _Pos(t, j, parent, obs, action, pre, glet, len(self.nodes))
        self.nodes.append(node)
        return node

    def root(self, t: int, j: int) -> int:
        key = (t, j)
        nid = self.roots.get(key)
        if nid is None:
            glet, action, items = self.d.start(t, j)
            node = self._new(t, j, None, None, action, tuple(items), glet)
            if glet is None:
                node.edges[None] = ((), None)
            nid = self.roots[key] = node.nid
        return nid

    def _replay(self, node: _Pos) -> greenlet:
        chain = []
        n = node
        while n is not None:
            chain.append(n)
            n = n.parent
        chain.reverse()
        self.replays += 1
        glet, action, _ = self.d.start(node.thread, node.op)
        if action != chain[0].action:
            raise RuntimeError("op is not deterministic: first action changed on replay")
        for child in chain[1:]:
            action, _ = self.d.resume(glet, child.obs)
            if action != child.action:
                raise RuntimeError("op is not deterministic: actions changed on replay")
        return glet

    def edge(self, node: _Pos, obs):
        e = node.edges.get(obs)
        if e is not None:
            return e
        glet = node.glet
        if glet is None:
            glet = self._replay(node)
        node.glet = None
        res, items = self.d.resume(glet, obs)
        if res is _END:
            e = (tuple(items), None)
        else:
            post, pre = _split(items)
            child = None
            if self.merge:
                sig = (node.thread, node.op, res, pre, _frames(glet))
                child = self.by_frames.get(sig)
                if child is not None and child.glet is None:
                    child.glet = glet
            if child is None:
                child = self._new(node.thread, node.op, node, obs, res, pre, glet)
                if self.merge:
                    self.by_frames[sig] = child
            e = (post, child)
        node.edges[obs] = e
        return e

    # transitions ------------------------------------------------------------

    def successor(self, key, t):
        store_id, pos, obs_ids = key
        node = self.nodes[pos[t]]
        store = self.stores.items[store_id]
        action = node.action
        obs, new_store = _apply(store, action)
        post, child = self.edge(node, obs)
        observers = self.observers
        if observers and (node.pre or post or action[0] != "rd" or not self.quiet_reads):
            states = [tab.items[i] for tab, i in zip(self.obs_tables, obs_ids)]
            for name, data, _ in node.pre:
                for k, o in enumerate(observers):
                    states[k] = o.on_item(states[k], t, name, data, store)
            for k, o in enumerate(observers):
                states[k] = o.on_action(states[k], t, action, obs, store, new_store)
            for name, data, _ in post:
                for k, o in enumerate(observers):
                    states[k] = o.on_item(states[k], t, name, data, new_store)
            new_obs = tuple(tab(s) for tab, s in zip(self.obs_tables, states))
        else:
            new_obs = obs_ids
        if child is not None:
            nxt = child.nid
        elif node.op + 1 < len(self.d.threads[t]):
            nxt = self.root(t, node.op + 1)
        else:
            nxt = -1
        new_pos = pos[:t] + (nxt,) + pos[t + 1:]
        sid = store_id if new_store is store else self.stores(new_store)
        return (sid, new_pos, new_obs)

    def run(self) -> ExplorationResult:
        started = time.perf_counter()
        threads = self.d.threads
        T = len(threads)
        store0 = self.d.arena.snapshot()
        pos0 = tuple(self.root(t, 0) if threads[t] else -1 for t in range(T))
        obs0 = tuple(tab(o.initial()) for tab, o in zip(self.obs_tables, self.observers))
        key0 = (self.stores(store0), pos0, obs0)
        counts: dict = {}
        terminals: list = []
        violations: list = []
        complete = True
        path: list[int] = []
        # Frame: [key, next thread to try, schedules found below].
        stack = [[key0, 0, 0]]
        stopped = False
        if all(p == -1 for p in pos0):
            stack = []
            counts[key0] = 1
            self._terminal(key0, terminals, violations, path)
        while stack:
            frame = stack[-1]
            key, t, _ = frame
            if t >= T:
                stack.pop()
                counts[key] = frame[2]
                if stack:
                    stack[-1][2] += frame[2]
                    path.pop()
                continue
            frame[1] = t + 1
            if key[1][t] == -1:
                continue
            try:
                child = self.successor(key, t)
            except Violation as v:
                violations.append(ViolationRecord(v.kind, v.message, format_schedule(path + [t])))
                frame[2] += 1
                if self.stop_on_violation:
                    stopped = True
                    break
                continue
            c = counts.get(child)
            if c is not None:
                frame[2] += c
                continue
            if all(p == -1 for p in child[1]):
                counts[child] = 1
                frame[2] += 1
                if not self._terminal(child, terminals, violations, path + [t]) and self.stop_on_violation:
                    stopped = True
                    break
                continue
            if len(counts) + len(stack) >= self.max_states:
                complete = False
                break
            path.append(t)
            stack.append([child, 0, 0])
        if stopped or not complete:
            complete = complete and not stopped
            schedules = sum(f[2] for f in stack)
        else:
            schedules = counts[key0]
        return ExplorationResult(
            complete=complete,
            states=len(counts),
            schedules=schedules,
            positions=len(self.nodes),
            terminals=terminals,
            violations=violations,
            elapsed=time.perf_counter() - started,
            replays=self.replays,
        )

    def _terminal(self, key, terminals, violations, path) -> bool:
        store = self.stores.items[key[0]]
        states = tuple(tab.items[i] for tab, i in zip(self.obs_tables, key[2]))
        terminals.append((store, states))
        if self.on_terminal is not None:
            try:
                self.on_terminal(store, states)
            except Violation as v:
                violations.append(ViolationRecord(v.kind, v.message, format_schedule(path)))
                return False
        return True


def explore(
    arena: InstrumentedArena,
    threads: Sequence[Sequence[Op]],
    observers: Sequence = (),
    on_terminal: Callable[[tuple, tuple], None] | None = None,
    max_states: int = 2_000_000,
    stop_on_violation: bool = True,
    merge: bool = True,
) -> ExplorationResult:
    """Visit every interleaving of ``threads`` on ``arena``.

    ``observers`` see every register action and every record in schedule
    order; each has ``initial()``, ``on_item(state, thread, name, data, store)``
    and ``on_action(state, thread, action, result, before, after)`` and returns
    a new hashable state or raises :class:`~waitfree.linearize.Violation`.
    An observer with ``ignores_reads = True`` promises ``on_action`` returns
    its state unchanged for ``rd`` actions; when all do, such calls are skipped.
    ``on_terminal(store, observer_states)`` runs once per distinct final state.

    Stops with ``complete=False`` once ``max_states`` states are stored.
    Threads are tried lowest id first, so the first violation found is
    reproducible; its schedule can be replayed with :meth:`Run.run`.
    ``merge`` turns on position merging by frame contents (see the module
    notes). The arena's registers are left untouched.
    """
    return _Explorer(arena, threads, observers, on_terminal, max_states, stop_on_violation, merge).run()
