"""Linearizability checking against the sequential oracles.

A :class:`ConcurrentHistory` is a totally ordered list of invoke and response
:class:`Event` records. :func:`check` searches for a serialization order that
respects real time and reproduces every recorded result (depth-first search
with memoisation, in the style of Wing and Gong). :class:`LinearizabilityMonitor`
does the same job online: it is fed events one at a time and keeps the set of
oracle configurations consistent with everything seen so far, so an
exhaustive explorer can merge schedules that reach the same configuration.

Write-and-f-array versions are not compared against a concrete counter. The
oracle hands out placeholders (:class:`Sym`) and a :class:`VersionChain`
records the order in which versions were handed out; a concrete result is
accepted if some assignment of integers satisfies the version contract
(nondecreasing, and strictly larger for a write that follows a read).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple, Sequence

from .seqspec import SeqFAA, SeqHistory, SeqRegister, SeqWFArray

INVOKE = "invoke"
RESPONSE = "response"

# Item names the explorer and live runs use for invoke and response records.
INVOKE_ITEM = "@invoke"
RESPONSE_ITEM = "@response"


class Violation(Exception):
    """A checked property failed. ``kind`` names the property."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


@dataclass(frozen=True)
class Event:
    """One invoke or response. ``step`` orders events within a history."""

    step: int
    thread: int
    op_id: int
    kind: str
    op_name: str
    args: tuple = ()
    result: Any = None


@dataclass(frozen=True)
class OpRecord:
    op_id: int
    thread: int
    name: str
    args: tuple
    invoke: int
    response: int | None
    result: Any

    @property
    def complete(self) -> bool:
        return self.response is not None


class ConcurrentHistory:
    """Step-ordered invoke/response events.

    Every op id has one invoke and at most one response, and the response
    comes strictly after the invoke. Ops without a response are pending.
    """

    def __init__(self, events: Iterable[Event]) -> None:
        self.events = tuple(sorted(events, key=lambda e: e.step))
        ops: dict[int, dict] = {}
        for idx, e in enumerate(self.events):
            if e.kind == INVOKE:
                if e.op_id in ops:
                    raise ValueError(f"op {e.op_id} invoked twice")
                ops[e.op_id] = dict(thread=e.thread, name=e.op_name, args=tuple(e.args), invoke=idx,
                                    response=None, result=None, step=e.step)
            elif e.kind == RESPONSE:
                rec = ops.get(e.op_id)
                if rec is None:
                    raise ValueError(f"op {e.op_id} responds before it is invoked")
                if rec["response"] is not None:
                    raise ValueError(f"op {e.op_id} responds twice")
                if e.step <= rec["step"]:
                    raise ValueError(f"op {e.op_id} responds at step {e.step}, not after its invoke")
                rec["response"], rec["result"] = idx, e.result
            else:
                raise ValueError(f"unknown event kind {e.kind!r}")
        self.ops = tuple(
            OpRecord(op_id, r["thread"], r["name"], r["args"], r["invoke"], r["response"], r["result"])
            for op_id, r in ops.items()
        )

    @property
    def pending(self) -> frozenset:
        return frozenset(op.op_id for op in self.ops if not op.complete)

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConcurrentHistory) and self.events == other.events

    def __hash__(self) -> int:
        return hash(self.events)

    def __repr__(self) -> str:
        return f"ConcurrentHistory({len(self.ops)} ops, {len(self.events)} events)"

    def prefix(self, k: int) -> "ConcurrentHistory":
        return ConcurrentHistory(self.events[:k])

    def dump(self) -> str:
        return dump(self)


# Text form: one event per line, "step thread op_id kind op_name args result".
# Payloads are decimal integers, tuples are comma-joined (a 1-tuple keeps a
# trailing comma), None is "none", booleans are 1/0 and "-" marks an empty
# field. Parsing returns booleans as 0/1, which compare equal.


def _fmt(x: Any) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, tuple):
        if not x:
            return "-"
        parts = [_fmt_scalar(e) for e in x]
        return ",".join(parts) + ("," if len(parts) == 1 else "")
    raise ValueError(f"cannot render {x!r} in the history dump format")


def _fmt_scalar(x: Any) -> str:
    if isinstance(x, tuple):
        raise ValueError(f"nested tuple {x!r} cannot be rendered")
    return _fmt(x)


def _parse_scalar(s: str) -> Any:
    return None if s == "none" else int(s)


def _parse_value(s: str) -> Any:
    if s == "-":
        return ()
    if "," in s:
        parts = s.split(",")
        if parts[-1] == "":
            parts = parts[:-1]
        return tuple(_parse_scalar(p) for p in parts)
    return _parse_scalar(s)


def dump(history: ConcurrentHistory | Iterable[Event]) -> str:
    events = history.events if isinstance(history, ConcurrentHistory) else tuple(history)
    lines = []
    for e in events:
        args = _fmt(tuple(e.args))
        result = "-" if e.kind == INVOKE else _fmt(e.result)
        lines.append(f"{e.step} {e.thread} {e.op_id} {e.kind} {e.op_name} {args} {result}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse(text: str) -> ConcurrentHistory:
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields, got {len(fields)}")
        step, thread, op_id, kind, name, args, result = fields
        if kind not in (INVOKE, RESPONSE):
            raise ValueError(f"line {lineno}: unknown event kind {kind!r}")
        parsed_args = _parse_value(args)
        if not isinstance(parsed_args, tuple):
            parsed_args = (parsed_args,)
        events.append(Event(
            int(step), int(thread), int(op_id), kind, name, parsed_args,
            None if kind == INVOKE else _parse_value(result),
        ))
    return ConcurrentHistory(events)


# -- version contract ------------------------------------------------------


@dataclass(frozen=True)
class Sym:
    """Placeholder for the version handed out to op ``tok``."""

    tok: int


class VersionChain(NamedTuple):
    """Order in which version numbers were handed out, with what is known of them.

    ``open`` holds ``(tok, kind, value)`` from the first element whose value is
    still unknown; everything before it is summarised by the last settled
    value ``low`` and its kind ``last``. ``kind`` is ``"r"`` for a read and
    ``"w"`` for a write. ``bound`` remembers every resolved token.
    """

    low: int | None = None
    last: str | None = None
    open: tuple = ()
    bound: tuple = ()

    def add(self, tok: int, kind: str) -> "VersionChain":
        return self._replace(open=self.open + ((tok, kind, None),))

    def value(self, tok: int) -> int | None:
        for t, v in self.bound:
            if t == tok:
                return v
        return None

    def bind(self, tok: int, val: int) -> "VersionChain | None":
        """Fix the version of ``tok``; ``None`` if the contract then fails."""
        known = self.value(tok)
        if known is not None:
            return self if known == val else None
        elems = list(self.open)
        for k, (t, kind, _) in enumerate(elems):
            if t == tok:
                elems[k] = (t, kind, val)
                break
        else:
            raise KeyError(f"token {tok} is not in the chain")
        if not _feasible(self.low, self.last, elems):
            return None
        low, last = self.low, self.last
        while elems and elems[0][2] is not None:
            _, last, low = elems.pop(0)
        bound = tuple(sorted(self.bound + ((tok, val),)))
        return VersionChain(low, last, tuple(elems), bound)


def _feasible(low: int | None, last: str | None, elems: Sequence) -> bool:
    # Giving every unknown the least value it may take leaves the most room
    # for the elements after it, so this greedy pass decides feasibility.
    cur, prev = low, last
    for _, kind, val in elems:
        need = cur
        if cur is not None and kind == "w" and prev == "r":
            need = cur + 1
        if val is None:
            val = need
        elif need is not None and val < need:
            return False
        cur, prev = val, kind
    return True


def _match_value(chain, expected: Any, actual: Any):
    """Compare one expected value (maybe a placeholder) with an actual one."""
    if isinstance(expected, Sym):
        if isinstance(actual, bool) or not isinstance(actual, int):
            return None, None
        known = chain.value(expected.tok)
        if known is not None:
            return (chain, None) if known == actual else (None, None)
        new = chain.bind(expected.tok, actual)
        return (new, (expected, actual)) if new is not None else (None, None)
    return (chain, None) if expected == actual else (None, None)


# -- sequential specs as checker adapters ----------------------------------


class Spec:
    """Adapter from a sequential oracle to the checker.

    States and chains are hashable. ``apply`` runs op ``name`` on a copy of
    ``state`` and returns the expected result; ``match`` compares it with an
    actual result and returns the refined ``(state, chain)``, or ``None``.
    """

    name = "spec"

    def initial(self) -> tuple[Any, Any]:
        raise NotImplementedError

    def apply(self, state, chain, name: str, args: tuple, tok: int):
        raise NotImplementedError

    def match(self, state, chain, expected, actual):
        return (state, chain) if expected == actual else None


class _ObjectSpec(Spec):
    def _make(self):
        raise NotImplementedError

    def initial(self):
        return self._make().snapshot(), None

    def apply(self, state, chain, name, args, tok):
        obj = self._make()
        obj.restore(state)
        try:
            method = getattr(obj, name)
        except AttributeError:
            raise ValueError(f"{self.name} has no operation {name!r}") from None
        result = method(*args)
        return obj.snapshot(), chain, result


class HistorySpec(_ObjectSpec):
    """History object. Ops: ``get_current()``, ``get(v)``, ``publish(v, T)``."""

    name = "history"

    def __init__(self, N: int, initial: Any) -> None:
        self.N, self.initial_value = N, initial

    def _make(self):
        return SeqHistory(self.N, self.initial_value)


class FAASpec(_ObjectSpec):
    """Counter. Ops: ``fetch_and_add(x)``, ``read()``."""

    name = "faa"

    def __init__(self, V: int = 0) -> None:
        self.V = V

    def _make(self):
        return SeqFAA(self.V)


class RegisterSpec(_ObjectSpec):
    """Single register. Ops: ``rd()``, ``wr(v)``, ``cas(o, n)``."""

    name = "register"

    def __init__(self, value: Any) -> None:
        self.value = value

    def _make(self):
        return SeqRegister(self.value)


class _SymbolicOracle:
    counter = 0

    def __init__(self, tok: int) -> None:
        self.tok = tok

    def version(self, advance: bool) -> Sym:
        return Sym(self.tok)


class WFArraySpec(Spec):
    """Write-and-f-array with versions checked against the version contract.

    Ops: ``write_and_f(i, T)``, ``get_last(i)``, ``read()``.
    """

    name = "wfarray"

    def __init__(self, N: int, f: Callable[[Any, Any], Any], init: Sequence) -> None:
        self.N, self.f, self.init = N, f, tuple(init)

    def initial(self):
        return SeqWFArray(self.N, self.f, self.init).snapshot(), VersionChain()

    def apply(self, state, chain, name, args, tok):
        obj = SeqWFArray(self.N, self.f, self.init, _SymbolicOracle(tok))
        obj.restore(state)
        if name == "write_and_f":
            result = obj.write_and_f(*args)
            chain = chain.add(tok, "w")
        elif name == "read":
            result = obj.read()
            chain = chain.add(tok, "r")
        elif name == "get_last":
            result = obj.get_last(*args)
        else:
            raise ValueError(f"wfarray has no operation {name!r}")
        return obj.snapshot(), chain, tuple(result)

    def match(self, state, chain, expected, actual):
        if not isinstance(actual, tuple) or len(actual) != len(expected):
            return None
        bindings = []
        for e, a in zip(expected, actual):
            chain, binding = _match_value(chain, e, a)
            if chain is None:
                return None
            if binding is not None:
                bindings.append(binding)
        if bindings:
            state = _substitute(state, dict(bindings))
        return state, chain


def _substitute(state: tuple, bindings: dict) -> tuple:
    v, lu, lver, lval, counter = state
    lver = tuple(bindings.get(x, x) if isinstance(x, Sym) else x for x in lver)
    return (v, lu, lver, lval, counter)


# -- offline checker ---------------------------------------------------------


@dataclass
class Verdict:
    """Outcome of :func:`check`.

    ``status`` is ``"linearizable"``, ``"not_linearizable"`` or ``"too_large"``.
    ``witness`` lists op ids in serialization order (pending ops that were
    left out do not appear). ``counterexample`` is the shortest failing prefix.
    """

    status: str
    witness: tuple | None = None
    counterexample: ConcurrentHistory | None = None
    explored: int = 0

    @property
    def linearizable(self) -> bool:
        return self.status == "linearizable"

    def __bool__(self) -> bool:
        return self.linearizable


def _search(ops: Sequence[OpRecord], spec: Spec):
    """Find a witness order for ``ops`` or return ``None``. Second value counts search nodes."""
    n = len(ops)
    preds = [0] * n
    for b, ob in enumerate(ops):
        for a, oa in enumerate(ops):
            if oa.complete and oa.response < ob.invoke:
                preds[b] |= 1 << a
    required = 0
    for k, op in enumerate(ops):
        if op.complete:
            required |= 1 << k
    state0, chain0 = spec.initial()
    failed: set = set()
    order: list[int] = []
    explored = 0

    def dfs(mask: int, state, chain) -> bool:
        nonlocal explored
        explored += 1
        if mask & required == required:
            return True
        key = (mask, state, chain)
        if key in failed:
            return False
        for k, op in enumerate(ops):
            bit = 1 << k
            if mask & bit or preds[k] & ~mask:
                continue
            s2, c2, expected = spec.apply(state, chain, op.name, op.args, op.op_id)
            if op.complete:
                m = spec.match(s2, c2, expected, op.result)
                if m is None:
                    continue
                s2, c2 = m
            order.append(op.op_id)
            if dfs(mask | bit, s2, c2):
                return True
            order.pop()
        failed.add(key)
        return False

    found = dfs(0, state0, chain0)
    return (tuple(order) if found else None), explored


def replay(history: ConcurrentHistory, spec: Spec, order: Sequence[int]) -> bool:
    """Does running ``order`` through ``spec`` reproduce every completed result?"""
    ops = {op.op_id: op for op in history.ops}
    if len(set(order)) != len(order) or any(o not in ops for o in order):
        return False
    if any(op.complete and op.op_id not in order for op in history.ops):
        return False
    pos = {o: k for k, o in enumerate(order)}
    for a in history.ops:
        for b in history.ops:
            if a.complete and a.op_id in pos and b.op_id in pos and a.response < b.invoke:
                if pos[a.op_id] > pos[b.op_id]:
                    return False
    state, chain = spec.initial()
    for o in order:
        op = ops[o]
        state, chain, expected = spec.apply(state, chain, op.name, op.args, o)
        if op.complete:
            m = spec.match(state, chain, expected, op.result)
            if m is None:
                return False
            state, chain = m
    return True


def check(history: ConcurrentHistory, spec: Spec, cap: int = 12, minimize: bool = True) -> Verdict:
    """Decide whether ``history`` is linearizable with respect to ``spec``.

    Pending ops may be placed anywhere after their invoke or left out.
    Histories with more than ``cap`` ops are reported as ``"too_large"``.
    """
    if len(history.ops) > cap:
        return Verdict("too_large")
    order, explored = _search(history.ops, spec)
    if order is not None:
        if not replay(history, spec, order):
            raise AssertionError("checker produced a witness that does not replay")
        return Verdict("linearizable", witness=order, explored=explored)
    counterexample = history
    if minimize:
        for k, e in enumerate(history.events):
            if e.kind != RESPONSE:
                continue
            prefix = history.prefix(k + 1)
            if _search(prefix.ops, spec)[0] is None:
                counterexample = prefix
                break
    return Verdict("not_linearizable", counterexample=counterexample, explored=explored)


# -- online monitor for the explorer ---------------------------------------


class LinearizabilityMonitor:
    """Just-in-time linearizability check over a stream of invokes and responses.

    The state is ``(pending, configs)``. ``pending`` holds invoked ops that
    have not responded. Each config is ``(oracle_state, chain, lin)`` where
    ``lin`` holds pending ops already placed in the order together with their
    expected results. At a response, pending ops are placed in every possible
    order until the responding op is placed and its result matches. An empty
    config set means no serialization exists.
    """

    ignores_reads = True

    def __init__(self, spec: Spec) -> None:
        self.spec = spec
        # The explorer reaches the same (state, response) pair along many
        # schedules; answers are pure, so keep them.
        self._memo: dict = {}

    def initial(self):
        state, chain = self.spec.initial()
        return (frozenset(), frozenset({(state, chain, frozenset())}))

    def on_item(self, st, thread: int, name: str, data: tuple, store=None):
        if name == INVOKE_ITEM:
            op_id, op_name, args = data
            pending, configs = st
            return (pending | {(op_id, op_name, tuple(args))}, configs)
        if name == RESPONSE_ITEM:
            op_id, result = data
            key = (st, op_id, type(result), result)
            out = self._memo.get(key)
            if out is None:
                out = self._memo[key] = self.respond(st, op_id, result)
            return out
        return st

    def on_action(self, st, thread, action, obs, before, after):
        return st

    def respond(self, st, op_id: int, result: Any):
        pending, configs = st
        entry = next((p for p in pending if p[0] == op_id), None)
        if entry is None:
            raise Violation("history", f"response for op {op_id} which is not pending")
        spec = self.spec
        out = set()
        for config in configs:
            seen = {config}
            stack = [config]
            while stack:
                state, chain, lin = stack.pop()
                placed = {p[0]: p[1] for p in lin}
                if op_id in placed:
                    m = spec.match(state, chain, placed[op_id], result)
                    if m is not None:
                        out.add((m[0], m[1], lin - {(op_id, placed[op_id])}))
                    continue
                for pid, name, args in pending:
                    if pid in placed:
                        continue
                    s2, c2, expected = spec.apply(state, chain, name, args, pid)
                    nxt = (s2, c2, lin | {(pid, expected)})
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
        if not out:
            raise Violation("linearizability", f"no serialization explains op {op_id} returning {result!r}")
        return (pending - {entry}, frozenset(out))


class HistoryRecorder:
    """Explorer observer that records the invoke/response sequence.

    States are small handles into an internal table, so recording stays cheap
    however long the history grows. :meth:`history` rebuilds the events.
    """

    ignores_reads = True

    def __init__(self) -> None:
        self._table: dict = {}
        self._rows: list = [None]

    def initial(self):
        return 0

    def on_item(self, st, thread: int, name: str, data: tuple, store=None):
        if name == INVOKE_ITEM:
            op_id, op_name, args = data
            rec = (thread, op_id, INVOKE, op_name, tuple(args), None)
        elif name == RESPONSE_ITEM:
            op_id, result = data
            rec = (thread, op_id, RESPONSE, None, None, result)
        else:
            return st
        key = (st, rec)
        handle = self._table.get(key)
        if handle is None:
            handle = len(self._rows)
            self._table[key] = handle
            self._rows.append(key)
        return handle

    def on_action(self, st, thread, action, obs, before, after):
        return st

    def history(self, st) -> ConcurrentHistory:
        recs = []
        while st:
            st, rec = self._rows[st]
            recs.append(rec)
        recs.reverse()
        names: dict[int, tuple] = {}
        events = []
        for step, (thread, op_id, kind, name, args, result) in enumerate(recs):
            if kind == INVOKE:
                names[op_id] = (name, args)
            else:
                name, args = names[op_id]
            events.append(Event(step, thread, op_id, kind, name, args, result))
        return ConcurrentHistory(events)
