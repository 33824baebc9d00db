"""Interval-based event algebra: operator tree, detection, consumption.

Complex events are detected over occurrence intervals.  A sequence chains
pairwise intervals whose gaps must be free of terminator occurrences; under
strict interpretation the terminators are all event atoms of the whole
expression, under non-strict interpretation all atoms not forming the
current pair.  Detection is a pure function of (expression, mode, store
snapshot); recording and consuming detections are explicit follow-ups.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .event_calculus import EventCalculus
from .kb import KnowledgeBase, Occurrence, QueryContext, Snapshot, register_builtin
from .terms import (
    Compound,
    Constant,
    DataLiteral,
    ListTerm,
    Term,
    apply,
    compound,
    integer,
    unify,
)
from .temporal import TimeInterval, Timespan, between, hull, interval_leq


class ExpressionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Expression tree


@dataclass(frozen=True)
class EventExpr:
    pass


@dataclass(frozen=True)
class Atom(EventExpr):
    event: Term


@dataclass(frozen=True)
class Sequence(EventExpr):
    items: tuple

    def __post_init__(self):
        if len(self.items) < 2:
            raise ExpressionError("sequence needs at least two items")


@dataclass(frozen=True)
class Or(EventExpr):
    items: tuple

    def __post_init__(self):
        if len(self.items) < 1:
            raise ExpressionError("or needs at least one item")


@dataclass(frozen=True)
class Xor(EventExpr):
    items: tuple

    def __post_init__(self):
        if len(self.items) < 2:
            raise ExpressionError("xor needs at least two items")


@dataclass(frozen=True)
class And(EventExpr):
    items: tuple

    def __post_init__(self):
        if len(self.items) < 2:
            raise ExpressionError("and needs at least two items")


@dataclass(frozen=True)
class Concurrent(EventExpr):
    items: tuple

    def __post_init__(self):
        if len(self.items) < 2:
            raise ExpressionError("concurrent needs at least two items")


@dataclass(frozen=True)
class Neg(EventExpr):
    forbidden: tuple  # Terms that must not occur inside the window
    window: tuple  # (EventExpr, EventExpr)

    def __post_init__(self):
        if not self.forbidden:
            raise ExpressionError("neg needs at least one forbidden event")
        if len(self.window) != 2:
            raise ExpressionError("neg window needs exactly two delimiters")


@dataclass(frozen=True)
class Any(EventExpr):
    n: int
    item: EventExpr

    def __post_init__(self):
        if self.n < 1:
            raise ExpressionError("any needs a positive count")


@dataclass(frozen=True)
class Aperiodic(EventExpr):
    item: EventExpr
    window: tuple

    def __post_init__(self):
        if len(self.window) != 2:
            raise ExpressionError("aperiodic window needs exactly two delimiters")


@dataclass(frozen=True)
class Periodic(EventExpr):
    span: Timespan
    window: tuple

    def __post_init__(self):
        if self.span.total_millis() <= 0:
            raise ExpressionError("periodic span must be positive")
        if len(self.window) != 2:
            raise ExpressionError("periodic window needs exactly two delimiters")


@dataclass(frozen=True)
class InterpretationMode:
    strict: bool = True


STRICT = InterpretationMode(strict=True)
NONSTRICT = InterpretationMode(strict=False)


def normalize_mode(mode: Union[InterpretationMode, str, None]) -> InterpretationMode:
    if mode is None:
        return STRICT
    if isinstance(mode, InterpretationMode):
        return mode
    if mode in ("strict",):
        return STRICT
    if mode in ("nonstrict", "non-strict"):
        return NONSTRICT
    raise ExpressionError(f"unknown interpretation mode {mode!r}")


CONSUME_ALL = "consume_all"
CONSUME_FIRST = "consume_first"
CONSUME_LAST = "consume_last"
CONSUME_NONE = "none"


@dataclass(frozen=True)
class Detection:
    detected_event: Term
    interval: TimeInterval
    contributors: tuple = ()


# ---------------------------------------------------------------------------
# Term <-> expression lifting (textual syntax `sequence(a,b)`, `neg([b],[a,c])`, ...)

_OPERATORS = (
    "sequence",
    "or",
    "xor",
    "and",
    "concurrent",
    "neg",
    "any",
    "aperiodic",
    "periodic",
)


def is_operator_term(t: Term) -> bool:
    return isinstance(t, Compound) and t.functor in _OPERATORS


def expr_from_term(t: Term) -> EventExpr:
    if not is_operator_term(t):
        return Atom(event=t)
    name, args = t.functor, t.args
    if name == "sequence":
        return Sequence(items=tuple(expr_from_term(a) for a in args))
    if name == "or":
        return Or(items=tuple(expr_from_term(a) for a in args))
    if name == "xor":
        return Xor(items=tuple(expr_from_term(a) for a in args))
    if name == "and":
        return And(items=tuple(expr_from_term(a) for a in args))
    if name == "concurrent":
        return Concurrent(items=tuple(expr_from_term(a) for a in args))
    if name == "neg":
        if len(args) != 2:
            raise ExpressionError("neg takes a forbidden list and a window")
        forbidden = args[0].items if isinstance(args[0], ListTerm) else (args[0],)
        return Neg(forbidden=tuple(forbidden), window=_window_from_term(args[1]))
    if name == "any":
        if len(args) != 2:
            raise ExpressionError("any takes a count and an event")
        count = args[0]
        if not isinstance(count, DataLiteral) or count.kind != "integer":
            raise ExpressionError("any count must be an integer")
        return Any(n=int(count.value), item=expr_from_term(args[1]))
    if name == "aperiodic":
        if len(args) != 2:
            raise ExpressionError("aperiodic takes an event and a window")
        return Aperiodic(item=expr_from_term(args[0]), window=_window_from_term(args[1]))
    if name == "periodic":
        if len(args) != 2:
            raise ExpressionError("periodic takes a timespan and a window")
        return Periodic(span=_span_from_term(args[0]), window=_window_from_term(args[1]))
    raise ExpressionError(f"unknown operator {name!r}")


def _window_from_term(t: Term) -> tuple:
    if not isinstance(t, ListTerm) or len(t.items) != 2:
        raise ExpressionError("window must be a two-element list")
    return (expr_from_term(t.items[0]), expr_from_term(t.items[1]))


def _span_from_term(t: Term) -> Timespan:
    if isinstance(t, Compound) and t.functor == "timespan" and t.arity == 4:
        values = []
        for a in t.args:
            if not isinstance(a, DataLiteral) or a.kind != "integer":
                raise ExpressionError("timespan components must be integers")
            values.append(int(a.value))
        return Timespan(*values)
    raise ExpressionError("periodic span must be a timespan term")


def expr_to_term(e: EventExpr) -> Term:
    if isinstance(e, Atom):
        return e.event
    if isinstance(e, Sequence):
        return compound("sequence", *(expr_to_term(i) for i in e.items))
    if isinstance(e, Or):
        return compound("or", *(expr_to_term(i) for i in e.items))
    if isinstance(e, Xor):
        return compound("xor", *(expr_to_term(i) for i in e.items))
    if isinstance(e, And):
        return compound("and", *(expr_to_term(i) for i in e.items))
    if isinstance(e, Concurrent):
        return compound("concurrent", *(expr_to_term(i) for i in e.items))
    if isinstance(e, Neg):
        return compound(
            "neg",
            ListTerm(items=tuple(e.forbidden)),
            ListTerm(items=(expr_to_term(e.window[0]), expr_to_term(e.window[1]))),
        )
    if isinstance(e, Any):
        return compound("any", integer(e.n), expr_to_term(e.item))
    if isinstance(e, Aperiodic):
        return compound(
            "aperiodic",
            expr_to_term(e.item),
            ListTerm(items=(expr_to_term(e.window[0]), expr_to_term(e.window[1]))),
        )
    if isinstance(e, Periodic):
        span = e.span
        return compound(
            "periodic",
            compound(
                "timespan",
                integer(span.days),
                integer(span.hours),
                integer(span.minutes),
                integer(span.seconds),
            ),
            ListTerm(items=(expr_to_term(e.window[0]), expr_to_term(e.window[1]))),
        )
    raise ExpressionError(f"not an expression: {e!r}")


def parse_expression(text: str) -> EventExpr:
    from .syntax import parse_term

    return expr_from_term(parse_term(text))


def atoms_of_expr(e: EventExpr) -> list:
    """All atomic event terms in the tree, deduplicated, in first-seen order."""
    seen = {}

    def walk(node: EventExpr):
        if isinstance(node, Atom):
            seen.setdefault(_canon(node.event), node.event)
        elif isinstance(node, (Sequence, Or, Xor, And, Concurrent)):
            for i in node.items:
                walk(i)
        elif isinstance(node, Neg):
            for f in node.forbidden:
                seen.setdefault(_canon(f), f)
            walk(node.window[0])
            walk(node.window[1])
        elif isinstance(node, Any):
            walk(node.item)
        elif isinstance(node, (Aperiodic,)):
            walk(node.item)
            walk(node.window[0])
            walk(node.window[1])
        elif isinstance(node, Periodic):
            walk(node.window[0])
            walk(node.window[1])

    walk(e)
    return list(seen.values())


def _canon(t: Term) -> str:
    from .syntax import term_to_text

    return term_to_text(t)


# ---------------------------------------------------------------------------
# Detection


@dataclass(frozen=True)
class _Instance:
    interval: TimeInterval
    contributors: tuple


def terminator_set(
    seq_items: Sequence[EventExpr], position: int, mode: InterpretationMode, alphabet=None
) -> list:
    """Terminator terms for the pairwise interval at `position` (between item
    position and position+1).  Strict: every atom of the expression.
    Non-strict: every atom not forming the current pair."""
    if alphabet is None:
        alphabet = []
        seen = set()
        for item in seq_items:
            for a in atoms_of_expr(item):
                if _canon(a) not in seen:
                    seen.add(_canon(a))
                    alphabet.append(a)
    if mode.strict:
        return list(alphabet)
    pair_atoms = {
        _canon(a)
        for a in atoms_of_expr(seq_items[position]) + atoms_of_expr(seq_items[position + 1])
    }
    return [a for a in alphabet if _canon(a) not in pair_atoms]


class _Evaluator:
    def __init__(self, ec: EventCalculus, mode: InterpretationMode, alphabet):
        self.ec = ec
        self.mode = mode
        self.alphabet = alphabet

    def eval(self, expr: EventExpr) -> list:
        if isinstance(expr, Atom):
            return [
                _Instance(interval=occ.interval, contributors=(occ,))
                for occ, _ in self.ec.event_instances(expr.event)
            ]
        if isinstance(expr, Sequence):
            return self._eval_sequence(expr)
        if isinstance(expr, Or):
            out = []
            for item in expr.items:
                out.extend(self.eval(item))
            return out
        if isinstance(expr, Xor):
            per_item = [self.eval(item) for item in expr.items]
            out = []
            for i, insts in enumerate(per_item):
                if all(not per_item[j] for j in range(len(per_item)) if j != i):
                    out.extend(insts)
            return out
        if isinstance(expr, And):
            out = []
            for combo in itertools.product(*(self.eval(item) for item in expr.items)):
                iv = hull(i.interval for i in combo)
                out.append(_Instance(iv, _concat(combo)))
            return out
        if isinstance(expr, Concurrent):
            out = []
            for combo in itertools.product(*(self.eval(item) for item in expr.items)):
                first = combo[0].interval
                if all(i.interval == first for i in combo[1:]):
                    out.append(_Instance(first, _concat(combo)))
            return out
        if isinstance(expr, Neg):
            return self._eval_window_pairs(expr.window, list(expr.forbidden))
        if isinstance(expr, Any):
            insts = sorted(
                self.eval(expr.item), key=lambda i: (i.interval.start, i.interval.end)
            )
            out = []
            for k in range(expr.n, len(insts) + 1, expr.n):
                chunk = insts[k - expr.n : k]
                iv = TimeInterval(chunk[0].interval.start, chunk[-1].interval.end)
                out.append(_Instance(iv, _concat(chunk)))
            return out
        if isinstance(expr, Aperiodic):
            delimiters = atoms_of_expr(expr.window[0]) + atoms_of_expr(expr.window[1])
            windows = self._eval_window_pairs(expr.window, delimiters)
            items = self.eval(expr.item)
            out = []
            for w in windows:
                for inst in items:
                    if between(inst.interval, w.interval):
                        out.append(inst)
            return out
        if isinstance(expr, Periodic):
            return self._eval_periodic(expr)
        raise ExpressionError(f"cannot evaluate {expr!r}")

    def _eval_sequence(self, expr: Sequence) -> list:
        per_item = [self.eval(item) for item in expr.items]
        termsets = [
            terminator_set(expr.items, k, self.mode, alphabet=self.alphabet)
            for k in range(len(expr.items) - 1)
        ]
        pair_terms = [_repr_term(item) for item in expr.items]
        out = []

        def chain(k: int, prev: _Instance, acc: tuple):
            if k == len(per_item):
                iv = TimeInterval(acc[0].interval.start, prev.interval.end)
                out.append(_Instance(iv, _concat(acc)))
                return
            for inst in per_item[k]:
                if not interval_leq(prev.interval, inst.interval):
                    continue
                if self.ec.broken(
                    prev.interval.end,
                    (pair_terms[k - 1], pair_terms[k]),
                    inst.interval.start,
                    termsets[k - 1],
                ):
                    continue
                chain(k + 1, inst, acc + (inst,))

        for first in per_item[0]:
            chain(1, first, (first,))
        return out

    def _eval_window_pairs(self, window: tuple, forbidden: list) -> list:
        """Unbroken [opening-instance, closing-instance] spans; forbidden
        terms act as local terminators strictly inside the gap."""
        opens = self.eval(window[0])
        closes = self.eval(window[1])
        pair = (_repr_term(window[0]), _repr_term(window[1]))
        out = []
        for o in opens:
            for c in closes:
                if not interval_leq(o.interval, c.interval):
                    continue
                if self.ec.broken(o.interval.end, pair, c.interval.start, forbidden):
                    continue
                iv = TimeInterval(o.interval.start, c.interval.end)
                out.append(_Instance(iv, _concat((o, c))))
        return out

    def _eval_periodic(self, expr: Periodic) -> list:
        delimiters = atoms_of_expr(expr.window[0]) + atoms_of_expr(expr.window[1])
        span = expr.span.total_millis()
        out = []
        for w in self._eval_window_pairs(expr.window, delimiters):
            t = w.interval.start + span
            while t <= w.interval.end:
                out.append(_Instance(TimeInterval(t, t), ()))
                t += span
        return out


def _concat(instances: Iterable[_Instance]) -> tuple:
    contributors = []
    for inst in instances:
        contributors.extend(inst.contributors)
    return tuple(contributors)


def _repr_term(e: EventExpr) -> Term:
    return e.event if isinstance(e, Atom) else expr_to_term(e)


def detect(
    expr: EventExpr,
    source: Union[EventCalculus, Snapshot, KnowledgeBase],
    mode: Union[InterpretationMode, str, None] = None,
    as_event: Optional[Term] = None,
) -> list:
    """Evaluate the expression over a store snapshot and return detections
    sorted by interval end then start.  Pure: identical inputs give identical
    results."""
    mode = normalize_mode(mode)
    if isinstance(source, KnowledgeBase):
        source = source.snapshot()
    ec = source if isinstance(source, EventCalculus) else EventCalculus(source)
    alphabet = atoms_of_expr(expr)
    instances = _Evaluator(ec, mode, alphabet).eval(expr)
    label = as_event if as_event is not None else expr_to_term(expr)
    detections = [
        Detection(detected_event=label, interval=i.interval, contributors=i.contributors)
        for i in instances
    ]
    detections.sort(key=lambda d: (d.interval.end, d.interval.start))
    return detections


# ---------------------------------------------------------------------------
# Recording and consuming


def record_detection(kb: KnowledgeBase, detection: Detection, eis_key: str):
    """Store the detected event as a transient occurrence so it can feed
    other complex event definitions."""
    occ = Occurrence(
        event=detection.detected_event,
        interval=detection.interval,
        kind="transient",
        eis_key=eis_key,
    )
    return kb.add_occurrence(occ)


def consume(kb: KnowledgeBase, eis_key: str, policy: str = CONSUME_ALL):
    return kb.consume(eis_key, policy=policy)


# ---------------------------------------------------------------------------
# Goal bridge: event(Expression, Interval)


@register_builtin("event", 2)
def _bi_event(ctx: QueryContext, args, subst):
    expr_term, out = args
    expr = expr_from_term(expr_term)
    mode = getattr(ctx, "algebra_mode", None)
    for d in detect(expr, ctx.ec, mode=mode):
        iv = ListTerm(items=(integer(d.interval.start), integer(d.interval.end)))
        s2 = unify(out, iv, subst)
        if s2 is not None:
            yield s2
