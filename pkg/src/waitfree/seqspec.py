"""Single-threaded reference objects.

These are the oracles the concurrent implementations are checked against.
They are deliberately plain: no registers, no helping, no concern for speed.
Each class can ``snapshot()`` its state into a hashable tuple and
``restore()`` it, which the linearizability checker uses to branch cheaply.
"""
from __future__ import annotations

from functools import reduce
from typing import Any, Callable, Sequence


class VersionOracle:
    """Increment-on-write version counter.

    ``version(False)`` returns the counter and ``version(True)`` bumps it first.
    This is one valid instance of the version contract: results never decrease,
    and a ``True`` call after a ``False`` call returns something strictly larger.
    """

    def __init__(self, counter: int = 0) -> None:
        self.counter = counter

    def version(self, advance: bool) -> Any:
        if advance:
            self.counter += 1
        return self.counter


class SeqHistory:
    """Unbounded versioned cell that answers ``get`` for its last ``N`` versions."""

    def __init__(self, N: int, initial: Any) -> None:
        if N < 1:
            raise ValueError("history needs N >= 1")
        self.N = N
        self.H: list[Any] = [initial]
        self.V = 0

    def get_current(self) -> tuple[int, Any]:
        return self.V, self.H[self.V]

    def get(self, v: int) -> Any:
        # Negative versions were never published; the concurrent object
        # answers none for them too.
        if v < 0 or v <= self.V - self.N or v > self.V:
            return None
        return self.H[v]

    def publish(self, v: int, T: Any) -> bool:
        if v != self.V + 1:
            return False
        self.H.append(T)
        self.V = v
        return True

    def snapshot(self) -> tuple:
        return (self.V, tuple(self.H))

    def restore(self, snap: tuple) -> None:
        self.V, H = snap
        self.H = list(H)


class SeqWFArray:
    """Reference write-and-f-array.

    Before any write to ``i``, ``get_last(i)`` answers ``(0, 0, fold of init)``.
    """

    def __init__(
        self,
        N: int,
        f: Callable[[Any, Any], Any],
        init: Sequence,
        oracle: VersionOracle | None = None,
    ) -> None:
        if N < 1:
            raise ValueError("write-and-f-array needs at least one element")
        if len(init) != N:
            raise ValueError(f"expected {N} initial values, got {len(init)}")
        self.N = N
        self.f = f
        self.oracle = oracle if oracle is not None else VersionOracle()
        self.v = list(init)
        total = self.fold()
        self.last_update = [0] * N
        self.last_version: list[Any] = [0] * N
        self.last_value = [total] * N

    def fold(self) -> Any:
        return reduce(self.f, self.v)

    def _check(self, i: int) -> None:
        if not 0 <= i < self.N:
            raise IndexError(f"element {i} out of range [0, {self.N})")

    def write_and_f(self, i: int, T: Any) -> tuple[int, Any, Any]:
        self._check(i)
        self.v[i] = T
        r = self.fold()
        self.last_update[i] += 1
        self.last_version[i] = self.oracle.version(True)
        self.last_value[i] = r
        return self.last_update[i], self.last_version[i], self.last_value[i]

    def get_last(self, i: int) -> tuple[int, Any, Any]:
        self._check(i)
        return self.last_update[i], self.last_version[i], self.last_value[i]

    def read(self) -> tuple[Any, Any]:
        return self.oracle.version(False), self.fold()

    def snapshot(self) -> tuple:
        return (
            tuple(self.v),
            tuple(self.last_update),
            tuple(self.last_version),
            tuple(self.last_value),
            self.oracle.counter,
        )

    def restore(self, snap: tuple) -> None:
        v, lu, lver, lval, counter = snap
        self.v, self.last_update = list(v), list(lu)
        self.last_version, self.last_value = list(lver), list(lval)
        self.oracle.counter = counter


class SeqFAA:
    """Plain integer fetch-and-add."""

    def __init__(self, V: int = 0) -> None:
        self.V = V

    def fetch_and_add(self, x: int) -> int:
        r = self.V
        self.V += x
        return r

    def read(self) -> int:
        return self.V

    def snapshot(self) -> int:
        return self.V

    def restore(self, snap: int) -> None:
        self.V = snap


class SeqRegister:
    """Sequential read/write/compare-and-swap cell."""

    def __init__(self, value: Any) -> None:
        self.value = value

    def rd(self) -> Any:
        return self.value

    def wr(self, v: Any) -> None:
        self.value = v

    def cas(self, expected: Any, new: Any) -> bool:
        if self.value == expected:
            self.value = new
            return True
        return False

    def snapshot(self) -> Any:
        return self.value

    def restore(self, snap: Any) -> None:
        self.value = snap
