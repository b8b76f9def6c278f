"""Throughput benchmark: wait-free counter vs. a naive CAS-loop counter.

Each worker increments a shared counter in a loop and counts its own
operations until a stop flag is raised. At the end the local counts are summed
and compared with the counter's final value.

    bench --impl waitfree --threads 4 --duration 5 --csv out.csv
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import threading
import time
import warnings
from dataclasses import dataclass, field

from .faa import Counter
from .registers import NativeArena

IMPLS = ("waitfree", "naive")
PINS = ("none", "per-core")
CSV_HEADER = ("impl", "threads", "seconds", "total_ops", "ns_per_op")


class ConfigError(ValueError):
    pass


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    impl: str = "waitfree"
    threads: int = 1
    duration: float = 20.0
    pin: str = "none"
    seed: int = 0
    capacity: int | None = None

    def validate(self) -> None:
        if self.impl not in IMPLS:
            raise ConfigError(f"unknown impl {self.impl!r}; choose from {', '.join(IMPLS)}")
        if self.pin not in PINS:
            raise ConfigError(f"unknown pin mode {self.pin!r}; choose from {', '.join(PINS)}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not self.duration >= 0:
            raise ConfigError("duration must be a non-negative number of seconds")
        if self.impl == "waitfree" and self.threads > self.counter_capacity:
            raise ConfigError(f"{self.threads} threads exceed the counter capacity {self.counter_capacity}")

    @property
    def counter_capacity(self) -> int:
        return self.capacity if self.capacity is not None else self.threads


@dataclass
class BenchResult:
    config: BenchConfig
    per_thread_ops: list[int]
    elapsed: float
    final_value: int
    total_ops: int = field(init=False)

    def __post_init__(self) -> None:
        self.total_ops = sum(self.per_thread_ops)

    @property
    def ns_per_op(self) -> float:
        if self.total_ops == 0:
            return math.nan
        return round(self.elapsed * 1e9 / self.total_ops, 1)

    @property
    def conserved(self) -> bool:
        return self.final_value == self.total_ops


class NaiveCounter:
    """Read, then CAS ``o`` to ``o + 1``; retry until the CAS wins."""

    def __init__(self, arena: NativeArena | None = None) -> None:
        self._mem = arena if arena is not None else NativeArena()
        self._V = self._mem.alloc(0)

    def fetch_and_add(self, x: int) -> int:
        rd, cas, V = self._mem.rd, self._mem.cas, self._V
        while True:
            o = rd(V)
            if cas(V, o, o + x):
                return o

    def read(self) -> int:
        return self._mem.rd(self._V)


def _pin(core: int) -> bool:
    if not hasattr(os, "sched_setaffinity"):
        return False
    cores = sorted(os.sched_getaffinity(0))
    try:
        os.sched_setaffinity(threading.get_native_id(), {cores[core % len(cores)]})
    except OSError:
        return False
    return True


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Run ``cfg.threads`` incrementing workers for ``cfg.duration`` seconds.

    Raises :class:`ConservationError` if the final counter value differs from
    the summed local counts.
    """
    cfg.validate()
    if cfg.impl == "waitfree":
        counter = Counter(cfg.counter_capacity)
        handles = [counter.register_writer() for _ in range(cfg.threads)]
        incs = [h.fetch_and_add for h in handles]
    else:
        counter = NaiveCounter()
        incs = [counter.fetch_and_add] * cfg.threads

    counts = [0] * cfg.threads
    stop = threading.Event()
    start = threading.Barrier(cfg.threads + 1)
    pin_failed = []

    def worker(k: int) -> None:
        if cfg.pin == "per-core" and not _pin(k):
            pin_failed.append(k)
        inc, n = incs[k], 0
        start.wait()
        while not stop.is_set():
            inc(1)
            n += 1
        counts[k] = n

    workers = [threading.Thread(target=worker, args=(k,), daemon=True) for k in range(cfg.threads)]
    for w in workers:
        w.start()
    start.wait()
    t0 = time.perf_counter()
    time.sleep(cfg.duration)
    stop.set()
    for w in workers:
        w.join()
    elapsed = time.perf_counter() - t0
    if pin_failed:
        warnings.warn("CPU pinning is unsupported here; ran unpinned", RuntimeWarning, stacklevel=2)

    result = BenchResult(cfg, counts, elapsed, counter.read())
    if not result.conserved:
        raise ConservationError(f"counter reads {result.final_value} but workers counted {result.total_ops}")
    return result


def csv_row(result: BenchResult) -> tuple[str, ...]:
    return (
        result.config.impl,
        str(result.config.threads),
        f"{result.elapsed:.3f}",
        str(result.total_ops),
        f"{result.ns_per_op:.1f}",
    )


def emit_csv(results: list[BenchResult], path: str | os.PathLike) -> None:
    """Write a header and one row per result to ``path``."""
    if not results:
        raise ValueError("no benchmark results to write")
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(CSV_HEADER)
            for r in results:
                out.writerow(csv_row(r))
    except OSError as e:
        raise OSError(e.errno, f"cannot write CSV to {os.fspath(path)}: {e.strerror}") from e


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Time fetch_and_add(1) loops on a shared counter.")
    p.add_argument("--impl", choices=IMPLS, default="waitfree")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--duration", type=float, default=20.0, help="seconds (default 20)")
    p.add_argument("--pin", choices=PINS, default="none", help="pin worker k to the k-th allowed core")
    p.add_argument("--capacity", type=int, default=None, help="wait-free counter capacity (default: --threads)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", dest="csv_path", default=None, metavar="PATH")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    cfg = BenchConfig(args.impl, args.threads, args.duration, args.pin, args.seed, args.capacity)
    try:
        result = run_bench(cfg)
    except ConfigError as e:
        print(f"bench: config error: {e}", file=sys.stderr)
        return 2
    except ConservationError as e:
        print(f"bench: conservation check failed: {e}", file=sys.stderr)
        return 3
    print(
        f"{cfg.impl} threads={cfg.threads} seconds={result.elapsed:.3f} "
        f"total_ops={result.total_ops} ns_per_op={result.ns_per_op:.1f} conservation=ok"
    )
    if args.csv_path is not None:
        try:
            emit_csv([result], args.csv_path)
        except OSError as e:
            print(f"bench: {e.strerror}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
