"""Event calculus over the occurrence store.

Classical part: fluents initiated/terminated by persistent events with
default persistence (`holds_at`, `clipped`, `declipped`), `initially`
axioms, and parameterized fluents via trajectories (`value_at`).

Interval part: event intervals spanned by an initiator and a terminator
instance (`holds_interval_*`), broken by global interval terminators or a
local terminator list strictly inside the gap.

A fluent does not yet hold at its initiation instant: initiation must lie
strictly before the query time, termination strictly between.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .kb import (
    Occurrence,
    QueryContext,
    Snapshot,
    _rename_goal,
    register_builtin,
    solve,
)
from .terms import (
    Compound,
    Constant,
    ListTerm,
    Substitution,
    Term,
    Variable,
    apply,
    integer,
    is_ground,
    rename_apart,
    unify,
)
from .temporal import TimeInterval, interval_leq

NEG_INF = None  # window-start sentinel for `initially` clipping checks

MAX_DERIVATION_DEPTH = 24


@dataclass(frozen=True)
class EffectAxiom:
    kind: str  # initiates | terminates | initially
    event_pattern: Optional[Term]
    fluent_pattern: Term
    time_pattern: Optional[Term] = None
    guard: tuple = ()


@dataclass(frozen=True)
class IntervalTerminator:
    event_pattern: Term
    interval_pattern: tuple  # (initiator pattern, terminator pattern)
    window_pattern: Optional[Term] = None
    guard: tuple = ()


@dataclass(frozen=True)
class Trajectory:
    fluent_pattern: Term
    parameter: Term
    value_fn: str  # "elapsed" | "constant"
    constant: Optional[Term] = None


def _millis(t: Term) -> Optional[int]:
    from .kb import _is_time_term, _time_value

    if _is_time_term(t):
        return _time_value(t)
    return None


def _interval_pair(t: Term) -> Optional[tuple]:
    if isinstance(t, ListTerm) and len(t.items) == 2:
        return (t.items[0], t.items[1])
    return None


class EventCalculus:
    """Evaluator bound to one store snapshot.  Re-entrant: derived-event
    evaluation that would loop back into an identical pending check is cut
    off as unfounded (treated as failure)."""

    def __init__(self, snapshot: Snapshot, ctx: Optional[QueryContext] = None):
        self.snapshot = snapshot
        if ctx is None:
            ctx = QueryContext(snapshot)
            ctx._ec = self
        self.ctx = ctx
        self._active: set = set()
        self._axioms: Optional[list] = None
        self._interval_terminators: Optional[list] = None
        self._trajectories: Optional[list] = None
        self._happens_sorted: Optional[list] = None

    # -- axiom extraction ----------------------------------------------------

    def _load_axioms(self) -> None:
        axioms = []
        terminators = []
        for clause in self.snapshot.clauses_for("initiates", 3):
            ev, fl, tv = clause.head.args
            axioms.append(EffectAxiom("initiates", ev, fl, tv, clause.body))
        for clause in self.snapshot.clauses_for("terminates", 3):
            ev, fl, tv = clause.head.args
            pair = _interval_pair(fl)
            if pair is not None:
                terminators.append(
                    IntervalTerminator(ev, pair, window_pattern=tv, guard=clause.body)
                )
            else:
                axioms.append(EffectAxiom("terminates", ev, fl, tv, clause.body))
        for clause in self.snapshot.clauses_for("initially", 1):
            axioms.append(EffectAxiom("initially", None, clause.head.args[0], None, clause.body))
        self._axioms = axioms
        self._interval_terminators = terminators

    @property
    def axioms(self) -> list:
        if self._axioms is None:
            self._load_axioms()
        return self._axioms

    @property
    def interval_terminators(self) -> list:
        if self._interval_terminators is None:
            self._load_axioms()
        return self._interval_terminators

    @property
    def trajectories(self) -> list:
        if self._trajectories is None:
            out = []
            for clause in self.snapshot.clauses_for("trajectory", 5):
                fl, t1, param, t2, expr = clause.head.args
                fn, const = _classify_value_fn(t1, t2, expr)
                if fn is not None:
                    out.append(Trajectory(fl, param, fn, const))
            self._trajectories = out
        return self._trajectories

    # -- event instance access -------------------------------------------------

    def event_instances(self, pattern: Term) -> list:
        """Stored occurrences (transient and persistent) whose event term
        unifies with pattern, in store order."""
        out = []
        for occ in self.snapshot.occurrences:
            s = unify(pattern, occ.event)
            if s is not None:
                out.append((occ, s))
        return out

    def _happens_stored(self) -> list:
        if self._happens_sorted is None:
            items = [
                (occ.interval.start, occ)
                for occ in self.snapshot.occurrences
                if occ.kind == "persistent"
            ]
            items.sort(key=lambda e: e[0])
            self._happens_sorted = items
        return self._happens_sorted

    def happens_instances(self, pattern: Term, depth: int = 0) -> list:
        """Persistent event instances matching pattern: stored happens facts
        plus instances derived from happens/2 rules, as (event, time) pairs."""
        out = []
        for t0, occ in self._happens_stored():
            if unify(pattern, occ.event) is not None:
                out.append((occ.event, t0))
        out.extend(self._derived_happens(pattern, depth))
        return out

    def _derived_happens(self, pattern: Term, depth: int) -> list:
        if depth > MAX_DERIVATION_DEPTH:
            return []
        out = []
        for clause in self.snapshot.clauses_for("happens", 2):
            if clause.is_fact:
                continue
            suffix = self.ctx.fresh_suffix()
            head = rename_apart(clause.head, suffix)
            s = unify(pattern, head.args[0])
            if s is None:
                continue
            key = ("derive", id(clause), _canon(apply(s, head.args[0])))
            if key in self._active:
                continue
            self._active.add(key)
            try:
                body = [_rename_goal(g, suffix) for g in clause.body]
                for s2 in solve(body, s, self.ctx, depth):
                    ev = apply(s2, head.args[0])
                    t = _millis(apply(s2, head.args[1]))
                    if t is not None and unify(pattern, ev) is not None:
                        out.append((ev, t))
            finally:
                self._active.discard(key)
        return out

    # -- classical event calculus ---------------------------------------------

    def holds_at_solutions(self, fluent: Term, t: int, depth: int = 0) -> list:
        """Answer substitutions under which the fluent holds at time t; one
        answer per distinct ground fluent instance."""
        groups: dict[str, tuple] = {}
        for ground, t0 in self._initiation_candidates(fluent, t, depth):
            key = _canon(ground)
            rank = float("-inf") if t0 is NEG_INF else t0
            prev = groups.get(key)
            if prev is None or rank > prev[1]:
                groups[key] = (ground, rank, t0)
        answers = []
        for ground, _, t0 in groups.values():
            if not self.clipped(t0, ground, t, depth=depth + 1):
                s = unify(fluent, ground)
                if s is not None:
                    answers.append(s)
        return answers

    def holds_at(self, fluent: Term, t: int, depth: int = 0) -> bool:
        if is_ground(fluent):
            # the latest matching initiation decides: its clipping window is
            # the tightest, so if it is clipped every earlier one is too
            best = NEG_INF
            found = False
            for _, t0 in self._initiation_candidates(fluent, t, depth):
                found = True
                if t0 is not NEG_INF and (best is NEG_INF or t0 > best):
                    best = t0
            if not found:
                return False
            return not self.clipped(best, fluent, t, depth=depth + 1)
        return bool(self.holds_at_solutions(fluent, t, depth))

    def _initiation_candidates(self, fluent: Term, t: int, depth: int) -> Iterator[tuple]:
        """(ground fluent, initiation time) pairs with time < t; NEG_INF marks
        `initially` axioms."""
        for axiom in self.axioms:
            if axiom.kind == "initially":
                suffix = self.ctx.fresh_suffix()
                pat = rename_apart(axiom.fluent_pattern, suffix)
                guard = tuple(_rename_goal(g, suffix) for g in axiom.guard)
                s = unify(pat, fluent)
                if s is None:
                    continue
                for s2 in self._guard_solutions(guard, s, depth):
                    ground = apply(s2, pat)
                    if is_ground(ground):
                        yield (ground, NEG_INF)
            elif axiom.kind == "initiates":
                yield from self._effect_instances(axiom, fluent, NEG_INF, t, depth)

    def _effect_instances(
        self, axiom: EffectAxiom, fluent: Term, lo, hi, depth: int
    ) -> Iterator[tuple]:
        """(ground fluent, event time) pairs for axiom firings with the event
        time strictly inside (lo, hi); lo/hi may be unbounded (None)."""
        suffix = self.ctx.fresh_suffix()
        ev_pat = rename_apart(axiom.event_pattern, suffix)
        fl_pat = rename_apart(axiom.fluent_pattern, suffix)
        tm_pat = rename_apart(axiom.time_pattern, suffix) if axiom.time_pattern else None
        guard = tuple(_rename_goal(g, suffix) for g in axiom.guard)
        s0 = unify(fl_pat, fluent)
        if s0 is None:
            return
        for ev, t0 in self.happens_instances(apply(s0, ev_pat), depth):
            if hi is not None and t0 >= hi:
                continue
            if lo is not None and t0 <= lo:
                continue
            s1 = unify(ev_pat, ev, s0)
            if s1 is None:
                continue
            if tm_pat is not None:
                s1 = unify(tm_pat, integer(t0), s1)
                if s1 is None:
                    continue
            for s2 in self._guard_solutions(guard, s1, depth):
                ground = apply(s2, fl_pat)
                if is_ground(ground):
                    yield (ground, t0)

    def _guard_solutions(self, guard: tuple, s: Substitution, depth: int):
        if not guard:
            yield s
            return
        yield from solve(list(guard), s, self.ctx, depth)

    def clipped(self, t1, fluent: Term, t2: int, depth: int = 0) -> bool:
        """A termination for the fluent occurs strictly between t1 and t2
        (t1 NEG_INF means unbounded below)."""
        return self._clip("terminates", t1, fluent, t2, depth)

    def declipped(self, t1, fluent: Term, t2: int, depth: int = 0) -> bool:
        return self._clip("initiates", t1, fluent, t2, depth)

    def _clip(self, kind: str, t1, fluent: Term, t2: int, depth: int) -> bool:
        if depth > MAX_DERIVATION_DEPTH:
            return False
        key = (kind, _canon(fluent), "-inf" if t1 is NEG_INF else t1, t2)
        if key in self._active:
            return False  # recursive support is unfounded
        self._active.add(key)
        try:
            for axiom in self.axioms:
                if axiom.kind != kind:
                    continue
                for _ in self._effect_instances(axiom, fluent, t1, t2, depth + 1):
                    return True
            return False
        finally:
            self._active.discard(key)

    # -- trajectories ------------------------------------------------------------

    def span_start(self, fluent: Term, t: int, depth: int = 0) -> Optional[int]:
        """Start of the validity span within which the (ground) fluent holds
        at t: the earliest initiation whose window up to t is unclipped."""
        times = sorted(
            {
                t0
                for _, t0 in self._initiation_candidates(fluent, t, depth)
                if t0 is not NEG_INF
            }
        )
        for t0 in times:
            if not self.clipped(t0, fluent, t, depth=depth + 1):
                return t0
        return None

    def value_at(self, parameter: Term, t: int, depth: int = 0) -> Optional[tuple]:
        """(value term, substitution) when some trajectory's fluent holds at
        t, else None."""
        if depth > MAX_DERIVATION_DEPTH:
            return None
        key = ("valueat", _canon(parameter), t)
        if key in self._active:
            return None
        self._active.add(key)
        try:
            for traj in self.trajectories:
                s = unify(traj.parameter, parameter)
                if s is None:
                    continue
                candidates = [apply(s, traj.fluent_pattern)]
                if not is_ground(candidates[0]):
                    candidates = [
                        apply(answer, candidates[0])
                        for answer in self.holds_at_solutions(candidates[0], t, depth + 1)
                    ]
                for fluent in candidates:
                    if not is_ground(fluent):
                        continue
                    t0 = self.span_start(fluent, t, depth + 1)
                    if t0 is None:
                        continue
                    if traj.value_fn == "elapsed":
                        return (integer(t - t0), s)
                    return (traj.constant, s)
            return None
        finally:
            self._active.discard(key)

    def value_at_solve(self, parameter: Term, value: Term, depth: int = 0) -> list:
        """Inverse mode: times at which the parameter evaluates to the given
        value (elapsed trajectories only)."""
        millis = _millis(value)
        if millis is None or depth > MAX_DERIVATION_DEPTH:
            return []
        out = []
        for traj in self.trajectories:
            if traj.value_fn != "elapsed":
                continue
            s = unify(traj.parameter, parameter)
            if s is None:
                continue
            fluent_pat = apply(s, traj.fluent_pattern)
            starts = set()
            for axiom in self.axioms:
                if axiom.kind == "initiates":
                    for ground, t0 in self._effect_instances(
                        axiom, fluent_pat, NEG_INF, None, depth + 1
                    ):
                        starts.add((_canon(ground), ground, t0))
            for _, ground, t0 in sorted(starts, key=lambda e: (e[2], e[0])):
                t = t0 + millis
                key = ("valueat-solve", _canon(parameter), t0, millis)
                if key in self._active:
                    continue
                self._active.add(key)
                try:
                    if self.span_start(ground, t, depth + 1) == t0:
                        out.append((t, s))
                finally:
                    self._active.discard(key)
        return out

    # -- interval event calculus ---------------------------------------------------

    def broken(
        self,
        t1: int,
        pair: tuple,
        t2: int,
        local_terminators: Sequence[Term] = (),
        depth: int = 0,
    ) -> bool:
        """True when a terminator occurrence lies strictly inside (t1, t2):
        either a global interval terminator matching the pair, or any of the
        local terminator patterns."""
        if t2 <= t1:
            return False
        patterns = list(local_terminators)
        for ivt in self.interval_terminators:
            suffix = self.ctx.fresh_suffix()
            first = rename_apart(ivt.interval_pattern[0], suffix)
            second = rename_apart(ivt.interval_pattern[1], suffix)
            ev_pat = rename_apart(ivt.event_pattern, suffix)
            guard = tuple(_rename_goal(g, suffix) for g in ivt.guard)
            s = unify(first, pair[0])
            if s is None:
                continue
            s = unify(second, pair[1], s)
            if s is None:
                continue
            if ivt.window_pattern is not None:
                window = rename_apart(ivt.window_pattern, suffix)
                s_w = unify(window, ListTerm(items=(integer(t1), integer(t2))), s)
                if s_w is not None:
                    s = s_w
            matched = not guard
            for _ in self._guard_solutions(guard, s, depth):
                matched = True
                break
            if matched:
                patterns.append(apply(s, ev_pat))
        for pattern in patterns:
            for occ, _ in self.event_instances(pattern):
                if t1 < occ.interval.start and occ.interval.end < t2:
                    return True
        return False

    def holds_interval_free(
        self, pair: Sequence[Term], terminators: Sequence[Term] = ()
    ) -> list:
        """Every unbroken [initiator-instance, terminator-instance] spanned
        interval, sorted by end then start."""
        e1, e2 = pair
        out = []
        for o1, s1 in self.event_instances(e1):
            for o2, _ in self.event_instances(apply(s1, e2)):
                if not interval_leq(o1.interval, o2.interval):
                    continue
                if self.broken(o1.interval.end, (e1, e2), o2.interval.start, terminators):
                    continue
                out.append(TimeInterval(o1.interval.start, o2.interval.end))
        out.sort(key=lambda iv: (iv.end, iv.start))
        return out

    def holds_interval_bound(
        self,
        pair: Sequence[Term],
        window: TimeInterval,
        terminators: Sequence[Term] = (),
    ) -> bool:
        """Whether some unbroken instance pair lies inside the window."""
        e1, e2 = pair
        for o1, s1 in self.event_instances(e1):
            if o1.interval.start < window.start:
                continue
            for o2, _ in self.event_instances(apply(s1, e2)):
                if o2.interval.end > window.end:
                    continue
                if not interval_leq(o1.interval, o2.interval):
                    continue
                if not self.broken(o1.interval.end, (e1, e2), o2.interval.start, terminators):
                    return True
        return False

    def holds_interval_single(self, event: Term) -> list:
        return sorted(
            (occ.interval for occ, _ in self.event_instances(event)),
            key=lambda iv: (iv.end, iv.start),
        )


def _classify_value_fn(t1: Term, t2: Term, expr: Term) -> tuple:
    """Recognize elapsed-time expressions minus(T2, T1) over the trajectory's
    time variables; ground value expressions are constant trajectories."""
    if (
        isinstance(expr, Compound)
        and expr.functor == "minus"
        and expr.arity == 2
        and isinstance(t1, Variable)
        and isinstance(t2, Variable)
        and isinstance(expr.args[0], Variable)
        and isinstance(expr.args[1], Variable)
        and expr.args[0].name == t2.name
        and expr.args[1].name == t1.name
    ):
        return ("elapsed", None)
    if is_ground(expr):
        return ("constant", expr)
    return (None, None)


def _canon(t: Term) -> str:
    from .syntax import term_to_text

    return term_to_text(t)


# ---------------------------------------------------------------------------
# Builtins bridging goals to the evaluator


def _interval_term(iv: TimeInterval) -> ListTerm:
    return ListTerm(items=(integer(iv.start), integer(iv.end)))


def _merge_answer(answer: Substitution, subst: Substitution) -> Optional[Substitution]:
    merged = subst
    for name, value in answer.items():
        merged = unify(Variable(name=name), value, merged)
        if merged is None:
            return None
    return merged


@register_builtin("holdsAt", 2)
def _bi_holds_at(ctx: QueryContext, args, subst):
    fluent, when = args
    t = _millis(when)
    if t is None:
        return
    for answer in ctx.ec.holds_at_solutions(fluent, t):
        merged = _merge_answer(answer, subst)
        if merged is not None:
            yield merged


@register_builtin("valueAt", 3)
def _bi_value_at(ctx: QueryContext, args, subst):
    param, when, value = args
    t = _millis(when)
    if t is not None:
        result = ctx.ec.value_at(param, t)
        if result is None:
            return
        val, _ = result
        s2 = unify(value, val, subst)
        if s2 is not None:
            yield s2
        return
    if isinstance(when, Variable) and is_ground(value):
        for t_out, _ in ctx.ec.value_at_solve(param, value):
            s2 = unify(when, integer(t_out), subst)
            if s2 is not None:
                yield s2


def _holds_interval(ctx: QueryContext, pair_term: Term, out_term: Term, terminators, subst):
    local = []
    if terminators is not None:
        if not isinstance(terminators, ListTerm):
            return
        local = list(terminators.items)
    if isinstance(pair_term, ListTerm) and len(pair_term.items) == 2:
        results = ctx.ec.holds_interval_free(tuple(pair_term.items), local)
    elif isinstance(pair_term, ListTerm) and len(pair_term.items) == 1:
        results = ctx.ec.holds_interval_single(pair_term.items[0])
    elif isinstance(pair_term, (Compound, Constant)):
        from .algebra import detect, expr_from_term

        expr = expr_from_term(pair_term)
        results = [d.interval for d in detect(expr, ctx.ec)]
    else:
        return
    for iv in results:
        s2 = unify(out_term, _interval_term(iv), subst)
        if s2 is not None:
            yield s2


@register_builtin("holdsInterval", 2)
def _bi_holds_interval2(ctx, args, subst):
    yield from _holds_interval(ctx, args[0], args[1], None, subst)


@register_builtin("holdsInterval", 3)
def _bi_holds_interval3(ctx, args, subst):
    yield from _holds_interval(ctx, args[0], args[1], args[2], subst)
