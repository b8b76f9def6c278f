import operator
from functools import reduce

import pytest
from hypothesis import given, strategies as st

from oracles import version_contract_ok
from waitfree.seqspec import SeqFAA, SeqHistory, SeqWFArray, VersionOracle


def test_history_publish_next_version():
    h = SeqHistory(2, "t0")
    assert h.get_current() == (0, "t0")
    assert h.publish(1, "a") is True
    assert h.get_current() == (1, "a")


def test_history_rejects_skipped_version():
    h = SeqHistory(2, "t0")
    assert h.publish(3, "a") is False
    assert h.get_current() == (0, "t0")


def test_history_forgets_beyond_capacity():
    h = SeqHistory(2, "t0")
    for v in (1, 2, 3):
        assert h.publish(v, f"x{v}")
    assert h.get(1) is None
    assert h.get(2) == "x2"
    assert h.get(3) == "x3"
    assert h.get(4) is None
    assert h.get(-1) is None


def test_history_snapshot_restore():
    h = SeqHistory(3, 0)
    h.publish(1, 10)
    snap = h.snapshot()
    h.publish(2, 20)
    h.restore(snap)
    assert h.get_current() == (1, 10)


def test_wfarray_sequential_example():
    a = SeqWFArray(4, operator.add, [0] * 4)
    n, v1, t = a.write_and_f(2, 5)
    assert (n, t) == (1, 5)
    n, v2, t = a.write_and_f(0, 2)
    assert (n, t) == (1, 7) and v2 >= v1
    assert a.get_last(2)[0] == 1
    assert a.get_last(1) == (0, 0, 0)


def test_wfarray_read_separates_write_versions():
    a = SeqWFArray(2, operator.add, [0, 0])
    _, v1, _ = a.write_and_f(0, 1)
    rv, _ = a.read()
    _, v2, _ = a.write_and_f(1, 1)
    assert v2 > v1 and rv >= v1


def test_wfarray_fresh_get_last_and_read():
    a = SeqWFArray(3, max, [1, 5, 3])
    assert a.read() == (0, 5)
    assert a.get_last(0) == (0, 0, 5)
    with pytest.raises(IndexError):
        a.get_last(3)


def test_wfarray_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SeqWFArray(0, operator.add, [])
    with pytest.raises(ValueError):
        SeqWFArray(2, operator.add, [0])


def test_faa_examples():
    c = SeqFAA()
    assert c.fetch_and_add(5) == 0
    assert c.fetch_and_add(3) == 5
    assert c.read() == 8
    assert c.fetch_and_add(0) == 8 and c.read() == 8
    d = SeqFAA()
    d.fetch_and_add(5)
    assert d.fetch_and_add(-2) == 5 and d.read() == 3


def test_version_oracle_contract():
    o = VersionOracle()
    a = o.version(False)
    b = o.version(True)
    c = o.version(True)
    d = o.version(False)
    assert a < b <= c <= d


@given(st.lists(st.integers(-50, 50), max_size=40))
def test_faa_conservation(xs):
    c = SeqFAA()
    for x in xs:
        c.fetch_and_add(x)
    assert c.read() == sum(xs)


@given(
    st.integers(1, 6).flatmap(lambda n: st.tuples(
        st.just(n),
        st.lists(st.one_of(
            st.tuples(st.just("w"), st.integers(0, n - 1), st.integers(-9, 9)),
            st.tuples(st.just("r"), st.just(0), st.just(0)),
        ), max_size=30),
    ))
)
def test_wfarray_tracks_fold_counts_and_versions(case):
    n, ops = case
    a = SeqWFArray(n, operator.add, [0] * n)
    vals = [0] * n
    counts = [0] * n
    chain = []
    for kind, i, x in ops:
        if kind == "w":
            vals[i] = x
            counts[i] += 1
            cnt, v, t = a.write_and_f(i, x)
            assert (cnt, t) == (counts[i], sum(vals))
            assert a.get_last(i) == (cnt, v, t)
            chain.append(("w", v))
        else:
            v, t = a.read()
            assert t == reduce(operator.add, vals)
            chain.append(("r", v))
    assert version_contract_ok(chain)
