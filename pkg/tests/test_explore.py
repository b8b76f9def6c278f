import random

import pytest

from programs import explore_checked, history_program, wfarray_program
from waitfree.linearize import FAASpec, LinearizabilityMonitor, RESPONSE_ITEM, check
from waitfree.registers import InstrumentedArena
from waitfree.sched import Op, Run, explore, format_schedule, parse_schedule


class ResultLog:
    """Observer keeping every op's result in its state."""

    ignores_reads = True

    def initial(self):
        return ()

    def on_item(self, st, t, name, data, store=None):
        if name == RESPONSE_ITEM:
            return tuple(sorted(st + (data,)))
        return st

    def on_action(self, st, t, action, obs, before, after):
        return st


def reads(arena, r, k):
    def run():
        return [arena.rd(r) for _ in range(k)]
    return Op("reads", (k,), run)


@pytest.mark.parametrize("k1,k2,expected", [(1, 1, 2), (2, 2, 6), (3, 2, 10), (1, 0, 1)])
def test_interleaving_counts(k1, k2, expected):
    a = InstrumentedArena()
    r = a.alloc(0)
    threads = [[reads(a, r, k1)]]
    if k2:
        threads.append([reads(a, r, k2)])
    res = explore(a, threads)
    assert res.complete and res.schedules == expected


def test_single_thread_has_one_schedule():
    a = InstrumentedArena()
    r = a.alloc(0)
    res = explore(a, [[reads(a, r, 3), reads(a, r, 2)]])
    assert res.schedules == 1


def test_op_without_actions_still_takes_a_turn():
    a = InstrumentedArena()
    r = a.alloc(0)
    res = explore(a, [[Op("noop", (), lambda: None)], [reads(a, r, 1)]])
    assert res.schedules == 2


def test_racing_cas_has_exactly_one_winner_in_every_schedule():
    a = InstrumentedArena()
    r = a.alloc(0)
    threads = [[Op("cas", (0, t + 1), lambda t=t: a.cas(r, 0, t + 1))] for t in range(2)]
    res = explore(a, threads, [ResultLog()])
    assert res.complete and res.schedules == 2
    for store, (log,) in res.terminals:
        assert sorted(x[1] for x in log) == [False, True]
        assert store[r] in (1, 2)


def test_explore_leaves_registers_untouched():
    a = InstrumentedArena()
    r = a.alloc(0)
    explore(a, [[Op("w", (), lambda: a.wr(r, 1))], [Op("w", (), lambda: a.wr(r, 2))]])
    assert a.snapshot() == (0,)
    assert a.steps == 0


def _racy_counter():
    # Read-then-write increment: loses updates under interleaving.
    a = InstrumentedArena()
    r = a.alloc(0)

    def add(x):
        o = a.rd(r)
        a.wr(r, o + x)
        return o

    threads = [[Op("fetch_and_add", (1,), lambda: add(1))] for _ in range(2)]
    threads.append([Op("read", (), lambda: a.rd(r))])
    return a, threads


def test_violation_schedule_replays_to_a_bad_history():
    a, threads = _racy_counter()
    res = explore(a, threads, [LinearizabilityMonitor(FAASpec())])
    assert res.violations
    v = res.violations[0]
    assert v.kind == "linearizability"
    run = Run(a, threads).run(v.schedule)
    assert not check(run.history, FAASpec()).linearizable


def test_keep_going_after_violation_counts_all_schedules():
    a, threads = _racy_counter()
    res = explore(a, threads, [LinearizabilityMonitor(FAASpec())], stop_on_violation=False)
    assert res.complete and len(res.violations) > 1


def test_run_records_history_trace_and_schedule():
    a = InstrumentedArena()
    r = a.alloc(0)
    threads = [[Op("w", (5,), lambda: a.wr(r, 5))], [reads(a, r, 2)]]
    run = Run(a, threads)
    assert run.enabled() == [0, 1]
    run.step(1)
    run.step(0)
    run.step(1)
    assert run.done
    assert run.results == [[None], [[0, 5]]]
    assert format_schedule(run.schedule) == "1,0,1"
    assert [e.kind for e in run.history.events] == ["invoke", "invoke", "response", "response"]
    steps = [e.step for e in run.history.events] + [e.step for e in run.trace.events]
    assert len(set(steps)) == len(steps)
    assert [e.kind for e in run.trace.events] == ["rd", "wr", "rd"]
    with pytest.raises(ValueError):
        run.step(0)


def test_schedule_text_round_trip():
    assert parse_schedule(format_schedule([0, 2, 1, 1])) == [0, 2, 1, 1]
    assert parse_schedule("") == []


def test_random_runs_are_reproducible():
    def once(seed):
        prog = history_program(2, [[(1, "a")], [(1, "b")]], [("get_current",)])
        run = Run(prog.arena, prog.threads).run_random(random.Random(seed))
        return run.schedule, run.results

    assert once(3) == once(3)


@pytest.mark.parametrize("make", [
    lambda: history_program(2, [[(1, "a")], [(1, "b")]], [("get_current",)]),
    lambda: history_program(2, [[(1, "a"), (2, "b")]], [("get", 1)]),
    lambda: wfarray_program(2, {0: [2]}, [("get_last", 0)]),
])
def test_frame_merging_changes_nothing_observable(make):
    merged = explore_checked(make(), "histories", merge=True)
    plain = explore_checked(make(), "histories", merge=False)
    assert merged.ok and plain.ok
    assert merged.schedules == plain.schedules
    assert set(merged.histories) == set(plain.histories)
    assert {t[0] for t in merged.terminals} == {t[0] for t in plain.terminals}
    assert merged.states <= plain.states
