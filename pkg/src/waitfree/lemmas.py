"""Invariant checks over register traces.

:class:`LemmaMonitor` watches the register writes and ghost marks of a run and
raises :class:`~waitfree.linearize.Violation` the moment an invariant fails.
It is a pure function of a hashable state, so the explorer can store the
state in its visited set; :func:`assert_lemmas` drives the same monitor over
a recorded :class:`~waitfree.registers.Trace`.

Besides the raw register contents, the monitor keeps one ghost variable per
history object and per leaf: the sequence of values published so far,
indexed by version. Everything below is phrased in terms of it.

History objects
    * every ``H`` slot's version only grows and stays congruent to the slot
      index, and every value it holds was published with that version
    * ``S`` advances one version at a time, and the publisher's staging slot
      holds the new version when it does
    * whenever ``S = (v, p)`` and ``L[p]`` holds version ``v``, its payload is
      the one published as ``v``
    * after a complete ``help`` that started when ``S.v = g``, the slot of
      every version in ``(g - N, g]`` holds that version or a later one
    * overlapping publishes never share a publisher index

Write-and-f-array nodes
    * child versions in consecutive published node values never decrease
    * a write makes at most two update attempts, and a successful update that
      began inside the attempts finished inside them
    * ``get_last`` answers an ``n`` between the number of writes to the element
      serialized when it started and when it finished
    * a new ``L[x] = (n, v, T)`` names the version at which the ``n``-th write to
      ``x`` serialized and the aggregate that write should return
    * binary-search probes stay within ``N + 1`` versions of the current one
    * overlapping writes never target the same element
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from .history import HistoryInfo
from .linearize import ConcurrentHistory, Violation
from .registers import Trace
from .wfarray import LeafInfo, NodeInfo, child_id, side


def _dset(items: tuple, key, value) -> tuple:
    d = dict(items)
    d[key] = value
    return tuple(sorted(d.items()))


def _ddel(items: tuple, key) -> tuple:
    return tuple(kv for kv in items if kv[0] != key)


def _dget(items: tuple, key, default=None):
    for k, v in items:
        if k == key:
            return v
    return default


class LemmaMonitor:
    """Online invariant checker for history objects and write-and-f-arrays.

    ``structures`` and ``tags`` come from the arena, ``initial`` is the register
    contents before the run. ``fired`` counts every check evaluated, passed or
    not, so callers can confirm the checks were actually exercised.
    """

    ignores_reads = True

    def __init__(self, structures: Sequence, tags: Sequence, initial: Sequence) -> None:
        self.structures = tuple(structures)
        self.fired: Counter = Counter()
        self._role: dict[int, tuple] = {}
        self._hist_owner: dict[int, int] = {}
        for info in self.structures:
            if isinstance(info, HistoryInfo):
                self._role[info.S] = ("S", info.sid)
                for i, r in enumerate(info.H):
                    self._role[r] = ("H", info.sid, i)
                for p, r in enumerate(info.L):
                    self._role[r] = ("L", info.sid, p)
                if info.owner is not None:
                    self._hist_owner[info.sid] = info.owner
            elif isinstance(info, LeafInfo):
                self._role[info.S] = ("leaf", info.sid)
            elif isinstance(info, NodeInfo):
                for x, r in enumerate(info.L):
                    self._role[r] = ("last", info.sid, x)
        pubs = []
        for info in self.structures:
            if isinstance(info, HistoryInfo):
                pubs.append((initial[info.H[0]].T,))
            elif isinstance(info, LeafInfo):
                pubs.append((initial[info.S].T,))
            else:
                pubs.append(None)
        self._initial = (tuple(pubs), (), (), (), frozenset(), frozenset())

    def initial(self) -> tuple:
        return self._initial

    # State layout: (pubs, lows, phases, updates, open publishes, open writes).
    # ``lows``, ``phases`` and ``updates`` are sorted item tuples keyed by
    # (thread, node sid).

    def _fire(self, kind: str, ok: bool, message: str) -> None:
        self.fired[kind] += 1
        if not ok:
            raise Violation(kind, message)

    # -- ghost queries --------------------------------------------------------

    def _count(self, pubs, sid: int, elem: int, version: int) -> int:
        """Writes to ``elem`` of structure ``sid`` serialized by ``version``."""
        info = self.structures[sid]
        while isinstance(info, NodeInfo):
            s, c = side(elem, info.N), child_id(elem, info.N)
            version = pubs[info.hist][version].v[s]
            info, elem = self.structures[info.children[s]], c
        return version

    def _current(self, pubs, sid: int) -> int:
        info = self.structures[sid]
        key = info.hist if isinstance(info, NodeInfo) else sid
        return len(pubs[key]) - 1

    def _serial_version(self, pubs, sid: int, elem: int, n: int) -> int | None:
        """Version of ``sid`` at which the ``n``-th write to ``elem`` serialized."""
        info = self.structures[sid]
        if isinstance(info, LeafInfo):
            return n if n <= len(pubs[sid]) - 1 else None
        s, c = side(elem, info.N), child_id(elem, info.N)
        vc = self._serial_version(pubs, info.children[s], c, n)
        if vc is None:
            return None
        for u, h in enumerate(pubs[info.hist]):
            if h.v[s] >= vc:
                return u
        return None

    def _serial_value(self, pubs, sid: int, elem: int, n: int) -> Any:
        """Aggregate the ``n``-th write to ``elem`` of ``sid`` should return."""
        info = self.structures[sid]
        if isinstance(info, LeafInfo):
            return pubs[sid][n]
        s, c = side(elem, info.N), child_id(elem, info.N)
        u = self._serial_version(pubs, sid, elem, n)
        tc = self._serial_value(pubs, info.children[s], c, n)
        hist = pubs[info.hist]
        if s == 0:
            return info.f(tc, hist[u - 1].T[1])
        return info.f(hist[u].T[0], tc)

    # -- observer interface ----------------------------------------------------

    def on_item(self, st: tuple, t: int, name: str, data: tuple, store: Sequence) -> tuple:
        pubs, lows, phases, updates, pub_open, wr_open = st
        if name == "publish_begin":
            key = tuple(data)
            self._fire("single_publisher", key not in pub_open,
                       f"thread {t} publishes as {data[1]} on history {data[0]} while another publish is open")
            return (pubs, lows, phases, updates, pub_open | {key}, wr_open)
        if name == "publish_end":
            return (pubs, lows, phases, updates, pub_open - {tuple(data)}, wr_open)
        if name == "hist_help_end":
            hsid, g = data
            info = self.structures[hsid]
            for u in range(max(0, g - info.N + 1), g + 1):
                got = store[info.H[u % info.N]].v
                self._fire("help_complete", got >= u,
                           f"after help on history {hsid} (S.v={g}) slot {u % info.N} holds version {got} < {u}")
            return st
        if name == "bs_probe":
            nsid, mid, current = data
            N = self.structures[nsid].N
            self._fire("bs_window", current - (N + 1) <= mid <= current,
                       f"node {nsid} probes version {mid} outside [{current - (N + 1)}, {current}]")
            return st
        if name == "wfa_begin":
            key = tuple(data)
            self._fire("single_writer", key not in wr_open,
                       f"thread {t} writes element {data[1]} of node {data[0]} while another write is open")
            return (pubs, lows, phases, updates, pub_open, wr_open | {key})
        if name == "wfa_end":
            return (pubs, lows, phases, updates, pub_open, wr_open - {tuple(data)})
        if name == "updates_begin":
            (nsid,) = data
            # Updates already running began before this phase and cannot witness it.
            updates = tuple((k, v - {t}) if k[1] == nsid else (k, v) for k, v in updates)
            return (pubs, lows, _dset(phases, (t, nsid), False), updates, pub_open, wr_open)
        if name == "update_begin":
            (nsid,) = data
            open_phases = frozenset(k[0] for k, _ in phases if k[1] == nsid)
            return (pubs, lows, phases, _dset(updates, (t, nsid), open_phases), pub_open, wr_open)
        if name == "update_end":
            nsid, ok = data
            witnesses = _dget(updates, (t, nsid), frozenset())
            updates = _ddel(updates, (t, nsid))
            if ok:
                phases = tuple((k, True) if k[1] == nsid and k[0] in witnesses else (k, w) for k, w in phases)
            return (pubs, lows, phases, updates, pub_open, wr_open)
        if name == "updates_end":
            nsid, attempts = data
            witnessed = _dget(phases, (t, nsid), False)
            self._fire("two_attempts", attempts <= 2 and witnessed,
                       f"thread {t} at node {nsid}: {attempts} update attempts, "
                       f"{'a' if witnessed else 'no'} successful update inside them")
            return (pubs, lows, _ddel(phases, (t, nsid)), updates, pub_open, wr_open)
        if name == "get_last_begin":
            nsid, x = data
            low = self._count(pubs, nsid, x, self._current(pubs, nsid))
            return (pubs, _dset(lows, (t, nsid), low), phases, updates, pub_open, wr_open)
        if name == "get_last_end":
            nsid, x, n = data
            low = _dget(lows, (t, nsid))
            high = self._count(pubs, nsid, x, self._current(pubs, nsid))
            self._fire("get_last_sandwich", low is not None and low <= n <= high,
                       f"get_last({x}) at node {nsid} returned n={n}, serialized writes went from {low} to {high}")
            return (pubs, _ddel(lows, (t, nsid)), phases, updates, pub_open, wr_open)
        return st

    def on_action(self, st: tuple, t: int, action: tuple, obs: Any, before: Sequence, after: Sequence) -> tuple:
        kind = action[0]
        if kind == "wr":
            pass
        elif kind == "cas":
            if not obs:
                return st
        else:
            return st
        r = action[1]
        role = self._role.get(r)
        if role is None:
            return st
        old, new = before[r], after[r]
        pubs = st[0]
        what = role[0]
        if what == "H":
            hsid, i = role[1], role[2]
            info = self.structures[hsid]
            self._fire("slot_monotone", new.v >= old.v,
                       f"H[{i}] of history {hsid} went from version {old.v} to {new.v}")
            self._fire("slot_residue", new.v % info.N == i,
                       f"H[{i}] of history {hsid} holds version {new.v}, not congruent to {i} mod {info.N}")
            hist = pubs[hsid]
            self._fire("slot_published", 0 <= new.v < len(hist) and hist[new.v] == new.T,
                       f"H[{i}] of history {hsid} holds version {new.v} with a value never published as it")
        elif what == "S":
            hsid = role[1]
            info = self.structures[hsid]
            self._fire("head_advance", new.v == old.v + 1,
                       f"S of history {hsid} went from version {old.v} to {new.v}")
            staged = after[info.L[new.p]]
            self._fire("staged", staged.v == new.v,
                       f"S of history {hsid} became {tuple(new)} while L[{new.p}] holds version {staged.v}")
            hist = pubs[hsid]
            owner = self._hist_owner.get(hsid)
            if owner is not None:
                prev = hist[-1]
                self._fire("child_versions", all(a <= b for a, b in zip(prev.v, staged.T.v)),
                           f"node {owner} published child versions {staged.T.v} after {prev.v}")
            pubs = _replace(pubs, hsid, hist + (staged.T,))
            st = (pubs,) + st[1:]
        elif what == "leaf":
            lsid = role[1]
            self._fire("leaf_version", new.v == old.v + 1,
                       f"leaf {lsid} went from version {old.v} to {new.v}")
            pubs = _replace(pubs, lsid, pubs[lsid] + (new.T,))
            st = (pubs,) + st[1:]
        elif what == "last":
            nsid, x = role[1], role[2]
            self._fire("last_monotone", new.n > old.n,
                       f"L[{x}] of node {nsid} went from n={old.n} to n={new.n}")
            u = self._serial_version(pubs, nsid, x, new.n)
            self._fire("last_count", u is not None,
                       f"L[{x}] of node {nsid} claims {new.n} writes, fewer have serialized")
            self._fire("last_version", new.v == u,
                       f"L[{x}] of node {nsid} records version {new.v}, write {new.n} serialized at {u}")
            want = self._serial_value(pubs, nsid, x, new.n)
            self._fire("last_value", new.T == want,
                       f"L[{x}] of node {nsid} records aggregate {new.T!r}, expected {want!r}")
        if what in ("S", "L"):
            hsid = role[1]
            info = self.structures[hsid]
            head = after[info.S]
            staged = after[info.L[head.p]]
            if staged.v == head.v:
                hist = st[0][hsid]
                self._fire("staging_consistent", head.v < len(hist) and hist[head.v] == staged.T,
                           f"history {hsid}: S=({head.v}, {head.p}) and L[{head.p}] holds an unpublished value")
        return st


def _replace(t: tuple, i: int, value) -> tuple:
    return t[:i] + (value,) + t[i + 1:]


@dataclass
class LemmaReport:
    """Result of :func:`assert_lemmas`. ``violations`` holds ``(step, kind, message)``."""

    violations: list = field(default_factory=list)
    fired: Counter = field(default_factory=Counter)
    events: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


def assert_lemmas(history: ConcurrentHistory | None, trace: Trace) -> LemmaReport:
    """Replay ``trace`` through :class:`LemmaMonitor` and collect every violation.

    A failing event is reported and skipped; checking carries on from the state
    before it. Events the monitor cannot interpret at all are reported with
    kind ``"unreadable"``. ``history`` is cross-checked for one invoke per op and responses
    after invokes when given.
    """
    report = LemmaReport()
    if history is not None:
        try:
            ConcurrentHistory(history.events)
        except ValueError as exc:
            report.violations.append((None, "history", str(exc)))
    monitor = LemmaMonitor(trace.structures, trace.tags, trace.initial)
    report.fired = monitor.fired
    st = monitor.initial()
    store = list(trace.initial)
    for ev in trace.events:
        report.events += 1
        try:
            if ev.kind == "mark":
                name, *data = ev.args
                st = monitor.on_item(st, ev.thread, name, tuple(data), store)
                continue
            if ev.kind == "rd":
                continue
            before = tuple(store)
            if ev.kind == "wr":
                action, obs = ("wr", ev.reg, ev.args[0]), None
                store[ev.reg] = ev.args[0]
            elif ev.kind == "cas":
                action, obs = ("cas", ev.reg, ev.args[0], ev.args[1]), ev.result
                if ev.result:
                    store[ev.reg] = ev.args[1]
            else:
                raise ValueError(f"unknown trace event kind {ev.kind!r}")
            st = monitor.on_action(st, ev.thread, action, obs, before, tuple(store))
        except Violation as v:
            report.violations.append((ev.step, v.kind, v.message))
        except (LookupError, AttributeError, TypeError, ValueError) as exc:
            # Typically fallout from an earlier violation: the registers no
            # longer describe anything the ghost state can follow.
            report.violations.append((ev.step, "unreadable", f"{type(exc).__name__}: {exc}"))
    return report
