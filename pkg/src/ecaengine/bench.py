"""Scalable test theories and the timing harness behind `bench`.

Two families: `eca_basic(n)` is n reactive rules whose parts are all blank
(no functionality, full pipeline execution); `ec_basic(n)` is one
initiates/terminates rule pair over n alternating event facts, queried
with a single fluent decision.  Update (loading/polling) and execution
times are reported separately; absolute numbers are hardware-bound, the
interesting output is the ratio between adjacent problem sizes.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import EcaEngine, StopCondition
from .event_calculus import EventCalculus
from .kb import Clause, KnowledgeBase
from .terms import Variable, atom, compound, integer, var

_FAMILIES = ("eca_basic", "ec_basic")


def eca_basic_clauses(n: int) -> list:
    """n rules eca(_, _, _): event, condition and action all blank."""
    out = []
    for i in range(n):
        out.append(
            Clause(
                head=compound(
                    "eca",
                    Variable(name=f"_anonE{i}"),
                    Variable(name=f"_anonC{i}"),
                    Variable(name=f"_anonA{i}"),
                )
            )
        )
    return out


def ec_basic_clauses(n: int) -> list:
    """One initiating/terminating rule pair for fluent p plus n alternating
    e1/e2 event facts at unit-second spacing."""
    out = [
        Clause(head=compound("initiates", atom("e1"), atom("p"), var("T"))),
        Clause(head=compound("terminates", atom("e2"), atom("p"), var("T"))),
    ]
    for i in range(1, n + 1):
        name = "e1" if i % 2 == 1 else "e2"
        out.append(Clause(head=compound("happens", atom(name), integer(i * 1000))))
    return out


def ec_basic_query_time(n: int) -> int:
    return (n + 1) * 1000


@dataclass
class BenchRow:
    family: str
    n: int
    update_ms: float
    execution_ms: float


def _median_timed(fn: Callable[[], None], repetitions: int, inner: int = 1) -> float:
    """Median wall time of `repetitions` measurements, each running fn
    `inner` times; returns per-call milliseconds."""
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - start) / inner * 1000.0)
    return statistics.median(samples)


def calibrate_inner(fn: Callable[[], None], target_ms: float = 25.0) -> int:
    start = time.perf_counter()
    fn()
    once_ms = (time.perf_counter() - start) * 1000.0
    if once_ms >= target_ms:
        return 1
    return max(1, int(target_ms / max(once_ms, 1e-4)))


def bench_eca_basic(n: int, repetitions: int = 3, inner: Optional[int] = None) -> BenchRow:
    engine = EcaEngine()
    clauses = eca_basic_clauses(n)

    start = time.perf_counter()
    engine.kb.add_update("theory", clauses)
    engine.kb.snapshot()
    update_ms = (time.perf_counter() - start) * 1000.0

    def one_cycle():
        engine.run(
            poll_span=_one_second(),
            stop=StopCondition(max_cycles=1),
            start=0,
            serial=True,
        )

    if inner is None:
        inner = calibrate_inner(one_cycle)
    execution_ms = _median_timed(one_cycle, repetitions, inner)
    return BenchRow(family="eca_basic", n=n, update_ms=update_ms, execution_ms=execution_ms)


def bench_ec_basic(n: int, repetitions: int = 3, inner: Optional[int] = None) -> BenchRow:
    kb = KnowledgeBase()
    clauses = ec_basic_clauses(n)

    start = time.perf_counter()
    kb.add_update("theory", clauses)
    kb.snapshot()
    update_ms = (time.perf_counter() - start) * 1000.0

    fluent = atom("p")
    t = ec_basic_query_time(n)

    def decide():
        EventCalculus(kb.snapshot()).holds_at(fluent, t)

    if inner is None:
        inner = calibrate_inner(decide)
    execution_ms = _median_timed(decide, repetitions, inner)
    return BenchRow(family="ec_basic", n=n, update_ms=update_ms, execution_ms=execution_ms)


def run_family(family: str, sizes, repetitions: int = 3) -> list:
    if family not in _FAMILIES:
        raise ValueError(f"unknown benchmark family {family!r}")
    runner = bench_eca_basic if family == "eca_basic" else bench_ec_basic
    return [runner(n, repetitions) for n in sizes]


def format_table(rows) -> str:
    lines = [f"{'family':<10} {'n':>8} {'update_ms':>12} {'execution_ms':>14} {'ratio':>7}"]
    prev = None
    for row in rows:
        ratio = ""
        if prev is not None and prev.execution_ms > 0:
            ratio = f"{row.execution_ms / prev.execution_ms:.2f}"
        lines.append(
            f"{row.family:<10} {row.n:>8} {row.update_ms:>12.3f} {row.execution_ms:>14.3f} {ratio:>7}"
        )
        prev = row
    return "\n".join(lines)


def _one_second():
    from .temporal import Timespan

    return Timespan(seconds=1)
