"""ECA rule processor.

Rules have six parts (time, event, condition, action, postcondition, else);
absent parts are true.  A polling demon collects the rules each cycle,
evaluates the time part serially, and runs the remaining phases per rule,
optionally on a bounded thread pool.  Variable bindings flow forward
through the phases; on action failure the evaluator backtracks to
alternative event/condition bindings, a cut postcondition commits the
first successful action, and the else action runs when the time part
succeeded but the rest of the pipeline failed.
"""

from __future__ import annotations

import itertools
import json
import queue
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from . import algebra
from .algebra import EventExpr, InterpretationMode, STRICT, detect, expr_from_term, is_operator_term, normalize_mode
from .kb import (
    Budget,
    BudgetExceeded,
    Call,
    Clause,
    Goal,
    KbError,
    KnowledgeBase,
    Occurrence,
    QueryContext,
    Snapshot,
    UnknownHostFunction,
    default_eis_key,
    goal_from_term,
    solve,
)
from .syntax import TraceRecord, term_to_text
from .terms import (
    Compound,
    Constant,
    Substitution,
    Term,
    Variable,
    apply,
    compound,
    integer,
)
from .temporal import Timespan, TimeInterval

CUT = object()  # postcondition marker: commit the first successful action

PHASES = ("time", "event", "condition", "action", "postcondition")


class EngineError(Exception):
    pass


# ---------------------------------------------------------------------------
# Rules and actions


@dataclass(frozen=True)
class GoalAction:
    goal: Goal


@dataclass(frozen=True)
class AssertAction:
    update_id: str
    clauses: tuple
    transactional: bool = False


@dataclass(frozen=True)
class RetractAction:
    update_id: Optional[str] = None
    clauses: tuple = ()
    remove_all: bool = False
    transactional: bool = False


@dataclass(frozen=True)
class HostAction:
    fn: str
    args: tuple


@dataclass(frozen=True)
class SequenceAction:
    items: tuple
    transactional: bool = False


ActionSpec = Union[GoalAction, AssertAction, RetractAction, HostAction, SequenceAction]


@dataclass(frozen=True)
class EcaRule:
    oid: Optional[str] = None
    time: Optional[Goal] = None
    event: Optional[Union[Goal, EventExpr]] = None
    condition: Optional[Goal] = None
    action: Optional[ActionSpec] = None
    postcondition: Optional[object] = None  # Goal or CUT
    else_action: Optional[ActionSpec] = None


@dataclass
class RuleOutcome:
    oid: str
    phases: tuple = ()
    fired: bool = False
    else_fired: bool = False
    bindings: Optional[Substitution] = None
    errors: tuple = ()
    duration_ms: float = 0.0
    cycle: Optional[int] = None
    timed_out: bool = False

    @property
    def phase(self) -> str:
        return self.phases[-1] if self.phases else "time"

    def record(self) -> dict:
        return {
            "cycle": self.cycle,
            "oid": self.oid,
            "phase": self.phase,
            "fired": self.fired,
            "duration_ms": round(self.duration_ms, 3),
            "else_fired": self.else_fired,
            "errors": list(self.errors),
        }


class HostFunction:
    """Registered external callable usable in any goal position and as an
    action.  The callable receives (ctx, args) and returns a truthiness
    flag, a bindings dict, or an iterable of bindings dicts."""

    def __init__(self, name: str, arity: int, fn: Callable, side_effecting: bool = False):
        self.name = name
        self.arity = arity
        self.fn = fn
        self.side_effecting = side_effecting

    def __call__(self, ctx, args):
        if len(args) != self.arity:
            raise UnknownHostFunction(
                f"host function {self.name} called with arity {len(args)}, registered {self.arity}"
            )
        return self.fn(ctx, args)


# ---------------------------------------------------------------------------
# Normalizing eca/1..6 facts


_ARITY_PARTS = {
    1: ("action",),
    2: ("condition", "action"),
    3: ("event", "condition", "action"),
    4: ("event", "condition", "action", "postcondition"),
    5: ("time", "event", "condition", "action", "postcondition"),
    6: ("time", "event", "condition", "action", "postcondition", "else"),
}


def _is_blank(t: Term) -> bool:
    return isinstance(t, Variable) and (t.name == "_" or t.name.startswith("_anon"))


def rule_from_fact(fact: Term, oid: Optional[str] = None) -> EcaRule:
    """Normalize an eca/1..6 fact to a six-part rule; `_` parts become
    absent (true)."""
    if not isinstance(fact, Compound) or fact.functor != "eca":
        raise EngineError(f"not an eca fact: {fact!r}")
    roles = _ARITY_PARTS.get(fact.arity)
    if roles is None:
        raise EngineError(f"eca fact arity {fact.arity} out of range 1..6")
    parts = {}
    for role, arg in zip(roles, fact.args):
        if _is_blank(arg):
            continue
        parts[role] = arg
    time_goal = goal_from_term(parts["time"]) if "time" in parts else None
    event_part: Optional[Union[Goal, EventExpr]] = None
    if "event" in parts:
        ev = parts["event"]
        event_part = expr_from_term(ev) if is_operator_term(ev) else goal_from_term(ev)
    condition = goal_from_term(parts["condition"]) if "condition" in parts else None
    action = action_from_term(parts["action"]) if "action" in parts else None
    post: Optional[object] = None
    if "postcondition" in parts:
        pc = parts["postcondition"]
        post = CUT if isinstance(pc, Constant) and pc.name == "!" else goal_from_term(pc)
    else_action = action_from_term(parts["else"]) if "else" in parts else None
    return EcaRule(
        oid=oid,
        time=time_goal,
        event=event_part,
        condition=condition,
        action=action,
        postcondition=post,
        else_action=else_action,
    )


def action_from_term(t: Term) -> ActionSpec:
    if isinstance(t, Compound) and t.functor == "sequence":
        return SequenceAction(items=tuple(action_from_term(a) for a in t.args))
    if isinstance(t, Compound) and t.functor == "transaction" and t.arity == 1:
        inner = action_from_term(t.args[0])
        return _mark_transactional(inner)
    return GoalAction(goal=goal_from_term(t))


def _mark_transactional(a: ActionSpec) -> ActionSpec:
    from dataclasses import replace as _replace

    if isinstance(a, GoalAction):
        return SequenceAction(items=(a,), transactional=True)
    return _replace(a, transactional=True)


# ---------------------------------------------------------------------------
# The engine


@dataclass
class PeriodicSchedule:
    """Synthetic periodic event: while the window's opening event has
    occurred and its closing event has not, a tick fires every span since
    the opening, timestamped at the scheduled tick time."""

    event: Term
    span: Timespan
    open_pattern: Term
    close_pattern: Term
    last_emitted: Optional[int] = None

    def due_ticks(self, snapshot: Snapshot, now: int) -> list:
        from .terms import unify

        opens = [
            occ.interval.start
            for occ in snapshot.occurrences
            if occ.interval.end <= now and unify(self.open_pattern, occ.event) is not None
        ]
        closed = any(
            occ.interval.start <= now and unify(self.close_pattern, occ.event) is not None
            for occ in snapshot.occurrences
        )
        if not opens or closed:
            return []
        t_open = min(opens)
        span = self.span.total_millis()
        first = t_open + span
        ticks = []
        t = first
        while t <= now:
            if self.last_emitted is None or t > self.last_emitted:
                ticks.append(t)
            t += span
        if ticks:
            self.last_emitted = ticks[-1]
        return ticks


@dataclass
class StopCondition:
    max_cycles: Optional[int] = None
    wall_ms: Optional[float] = None
    quiescent_cycles: Optional[int] = None


@dataclass
class RunReport:
    cycles: int = 0
    outcomes: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def fired_outcomes(self) -> list:
        return [o for o in self.outcomes if o.fired]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(o.record(), sort_keys=True) for o in self.outcomes)


DEFAULT_TIMEOUT_MS = 5000.0
MAX_TIME_BINDINGS = 64


class EcaEngine:
    """Embeddable rule processor over one knowledge base."""

    def __init__(
        self,
        kb: Optional[KnowledgeBase] = None,
        mode: Union[InterpretationMode, str] = STRICT,
        timeout_ms: float = DEFAULT_TIMEOUT_MS,
        workers: int = 4,
        step_budget: int = 200_000,
    ):
        self.kb = kb if kb is not None else KnowledgeBase()
        self.mode = normalize_mode(mode)
        self.timeout_ms = timeout_ms
        self.workers = workers
        self.step_budget = step_budget
        self.registered_rules: list = []
        self.schedules: dict = {}
        self.periodic_schedules: list = []
        self.notifications: list = []
        self._hosts: dict = {}
        self._rule_counter = itertools.count(1)
        self.register_host_function(
            "notify", 2, self._notify_host, side_effecting=True
        )

    # -- registration --------------------------------------------------------

    def register_host_function(
        self, name: str, arity: int, fn: Callable, side_effecting: bool = False
    ) -> HostFunction:
        if name in self._hosts:
            raise EngineError(f"host function {name!r} already registered")
        wrapped = HostFunction(name, arity, fn, side_effecting)
        self._hosts[name] = wrapped
        return wrapped

    def _notify_host(self, ctx, args):
        self.notifications.append(tuple(term_to_text(a) for a in args))
        return True

    def add_rule(self, rule: EcaRule) -> EcaRule:
        if rule.action is None:
            raise EngineError("an ECA rule must at least specify an action")
        if rule.oid is None:
            rule = EcaRule(
                oid=f"r{next(self._rule_counter)}",
                time=rule.time,
                event=rule.event,
                condition=rule.condition,
                action=rule.action,
                postcondition=rule.postcondition,
                else_action=rule.else_action,
            )
        self.registered_rules.append(rule)
        return rule

    def schedule_periodic(
        self, event: Term, span: Timespan, window: tuple
    ) -> PeriodicSchedule:
        if span.total_millis() <= 0:
            raise EngineError("periodic span must be positive")
        handle = PeriodicSchedule(
            event=event, span=span, open_pattern=window[0], close_pattern=window[1]
        )
        self.periodic_schedules.append(handle)
        return handle

    def inject_event(
        self,
        event: Term,
        at: int,
        eis_key: Optional[str] = None,
        kind: str = "transient",
        end: Optional[int] = None,
    ):
        """Push an occurrence into the store (visible to the next cycle)."""
        occ = Occurrence(
            event=event,
            interval=TimeInterval(at, end if end is not None else at),
            kind=kind,
            eis_key=eis_key or default_eis_key(event),
        )
        return self.kb.add_occurrence(occ)

    # -- polling ---------------------------------------------------------------

    def poll_rules(self, snapshot: Optional[Snapshot] = None, diagnostics: Optional[list] = None):
        """Registered rules plus every eca/1..6 fact currently in the kb,
        normalized to six parts; malformed facts are skipped with a
        diagnostic."""
        snapshot = snapshot or self.kb.snapshot()
        rules = list(self.registered_rules)
        entries = []
        for arity in range(1, 7):
            for seq, clause in zip(
                snapshot.seqs.get(("eca", arity), ()), snapshot.clauses_for("eca", arity)
            ):
                entries.append((seq, clause))
        entries.sort(key=lambda e: e[0])
        for seq, clause in entries:
            if not clause.is_fact:
                if diagnostics is not None:
                    diagnostics.append(f"eca clause with body skipped: {term_to_text(clause.head)}")
                continue
            try:
                rules.append(rule_from_fact(clause.head, oid=f"kb{seq}"))
            except EngineError as exc:
                if diagnostics is not None:
                    diagnostics.append(str(exc))
        return rules

    # -- contexts ----------------------------------------------------------------

    def _read_ctx(self, snapshot: Snapshot, now: int, deadline: Optional[float], rule_key: str) -> QueryContext:
        ctx = QueryContext(
            snapshot,
            kb=self.kb,
            budget=Budget(steps=self.step_budget, deadline=deadline),
            now_fn=lambda: now,
            host_functions=self._hosts,
            allow_effects=False,
            rule_key=rule_key,
            schedules=self.schedules,
            engine=self,
        )
        ctx.algebra_mode = self.mode
        return ctx

    def _effect_ctx(self, now: int, deadline: Optional[float], rule_key: str) -> QueryContext:
        ctx = QueryContext(
            self.kb.snapshot(),
            kb=self.kb,
            budget=Budget(steps=self.step_budget, deadline=deadline),
            now_fn=lambda: now,
            host_functions=self._hosts,
            allow_effects=True,
            rule_key=rule_key,
            schedules=self.schedules,
            engine=self,
        )
        ctx.algebra_mode = self.mode
        return ctx

    # -- rule evaluation -----------------------------------------------------------

    def evaluate_rule(
        self,
        rule: EcaRule,
        now: int,
        timeout_ms: Optional[float] = None,
        snapshot: Optional[Snapshot] = None,
        cycle: Optional[int] = None,
    ) -> RuleOutcome:
        """Run the phases in order with forward-flowing bindings; see module
        docstring for the backtracking and else semantics."""
        started = _time.perf_counter()
        timeout_ms = timeout_ms if timeout_ms is not None else self.timeout_ms
        deadline = started + timeout_ms / 1000.0
        snapshot = snapshot or self.kb.snapshot()
        oid = rule.oid or "rule"
        outcome = RuleOutcome(oid=oid, cycle=cycle)
        try:
            time_bindings = self._time_solutions(rule, snapshot, now, deadline, oid)
            outcome.phases = ("time",)
            if not time_bindings:
                return outcome
            self._evaluate_pipeline(rule, time_bindings, snapshot, now, deadline, outcome)
        except BudgetExceeded as exc:
            outcome.errors += (str(exc),)
            outcome.timed_out = getattr(exc, "reason", "") == "deadline"
        except (KbError, EngineError, algebra.ExpressionError) as exc:
            outcome.errors += (f"{type(exc).__name__}: {exc}",)
        finally:
            outcome.duration_ms = (_time.perf_counter() - started) * 1000.0
        return outcome

    def _time_solutions(self, rule, snapshot, now, deadline, oid) -> list:
        if rule.time is None:
            return [Substitution()]
        ctx = self._read_ctx(snapshot, now, deadline, oid)
        out = []
        for s in solve([rule.time], Substitution(), ctx):
            out.append(s)
            if len(out) >= MAX_TIME_BINDINGS:
                break
        return out

    def _evaluate_pipeline(self, rule, time_bindings, snapshot, now, deadline, outcome):
        oid = outcome.oid
        for tb in time_bindings:
            for eb in self._event_solutions(rule, tb, snapshot, now, deadline, oid, outcome):
                for cb in self._condition_solutions(rule, eb, snapshot, now, deadline, oid, outcome):
                    ok, err = self._attempt_action(rule, cb, now, deadline, oid, outcome)
                    if err:
                        outcome.errors += (err,)
                    if ok:
                        outcome.fired = True
                        outcome.bindings = cb
                        return
        # pipeline failed after a successful time part: run the else action
        if rule.else_action is not None:
            outcome.phases += ("else",)
            ok, err = self._execute_action(
                rule.else_action, Substitution(), now, deadline, oid, post_goal=None
            )
            if err:
                outcome.errors += (err,)
            outcome.else_fired = ok

    def _event_solutions(self, rule, binding, snapshot, now, deadline, oid, outcome):
        if "event" not in outcome.phases:
            outcome.phases += ("event",)
        if rule.event is None:
            yield binding
            return
        if isinstance(rule.event, EventExpr):
            detections = detect(rule.event, snapshot, mode=self.mode)
            for _ in detections:
                yield binding
            return
        ctx = self._read_ctx(snapshot, now, deadline, oid)
        yield from solve([rule.event], binding, ctx)

    def _condition_solutions(self, rule, binding, snapshot, now, deadline, oid, outcome):
        if "condition" not in outcome.phases:
            outcome.phases += ("condition",)
        if rule.condition is None:
            yield binding
            return
        ctx = self._read_ctx(snapshot, now, deadline, oid)
        yield from solve([rule.condition], binding, ctx)

    def _attempt_action(self, rule, binding, now, deadline, oid, outcome):
        if "action" not in outcome.phases:
            outcome.phases += ("action",)
        post_goal = rule.postcondition if rule.postcondition not in (None, CUT) else None
        if post_goal is not None and "postcondition" not in outcome.phases:
            outcome.phases += ("postcondition",)
        return self._execute_action(
            rule.action, binding, now, deadline, oid, post_goal=post_goal
        )

    # -- action execution -------------------------------------------------------------

    def execute_action(
        self, action: ActionSpec, bindings: Substitution, now: Optional[int] = None
    ) -> bool:
        """Public single-action entry point (no postcondition)."""
        now = now if now is not None else round(_time.time() * 1000)
        ok, err = self._execute_action(action, bindings, now, None, "action", post_goal=None)
        if err and not ok:
            raise EngineError(err)
        return ok

    def _execute_action(self, action, bindings, now, deadline, oid, post_goal):
        transactional = getattr(action, "transactional", False)
        if transactional:
            txn = self.kb.begin_transaction()
            try:
                ok, err = self._run_action(action, bindings, now, deadline, oid)
                if ok and post_goal is not None:
                    ok = self._prove_post(post_goal, bindings, now, deadline, oid)
                    if not ok:
                        err = "postcondition failed; transaction rolled back"
            except Exception:
                self.kb.rollback(txn)
                raise
            if not ok:
                self.kb.rollback(txn)
                return (False, err or "rollback-performed")
            receipt = self.kb.commit(txn)
            if not receipt.applied:
                return (False, "integrity violation; transaction rolled back: " + "; ".join(receipt.violations))
            return (True, None)
        ok, err = self._run_action(action, bindings, now, deadline, oid)
        if ok and post_goal is not None:
            ok = self._prove_post(post_goal, bindings, now, deadline, oid)
            if not ok:
                err = "postcondition failed"
        return (ok, err)

    def _prove_post(self, post_goal, bindings, now, deadline, oid) -> bool:
        ctx = self._effect_ctx(now, deadline, oid)
        ctx.allow_effects = False
        for _ in solve([post_goal], bindings, ctx):
            return True
        return False

    def _run_action(self, action, bindings, now, deadline, oid):
        if isinstance(action, GoalAction):
            ctx = self._effect_ctx(now, deadline, oid)
            try:
                for _ in solve([action.goal], bindings, ctx):
                    return (True, None)
                return (False, None)
            except UnknownHostFunction as exc:
                return (False, str(exc))
        if isinstance(action, AssertAction):
            clauses = [
                Clause(head=apply(bindings, c.head), body=tuple(c.body)) for c in action.clauses
            ]
            receipt = self.kb.add_update(action.update_id, clauses)
            return (receipt.applied, None if receipt.applied else "; ".join(receipt.violations))
        if isinstance(action, RetractAction):
            if action.update_id and not action.clauses:
                receipt = self.kb.remove_update(action.update_id)
                return (True, None)
            removed = self.kb.remove_clauses(
                [apply(bindings, c.head) for c in action.clauses],
                update_id=action.update_id,
                all_matches=action.remove_all,
            )
            return (removed > 0 or action.remove_all, None)
        if isinstance(action, HostAction):
            ctx = self._effect_ctx(now, deadline, oid)
            fn = self._hosts.get(action.fn)
            if fn is None:
                return (False, f"no host function registered for {action.fn!r}")
            result = fn(ctx, [apply(bindings, a) for a in action.args])
            return (bool(result), None)
        if isinstance(action, SequenceAction):
            for item in action.items:
                ok, err = self._execute_action(item, bindings, now, deadline, oid, post_goal=None)
                if not ok:
                    return (False, err)
            return (True, None)
        raise EngineError(f"unknown action spec {action!r}")

    # -- the demon -----------------------------------------------------------------

    def run(
        self,
        poll_span: Timespan,
        stop: StopCondition,
        start: Optional[int] = None,
        trace: Optional[Sequence[TraceRecord]] = None,
        serial: bool = False,
        wall_clock: bool = False,
    ) -> RunReport:
        """Poll-and-evaluate loop over a virtual clock (or the wall clock):
        inject due trace records, poll the rules, fire periodic schedules,
        evaluate each rule whose time part succeeds."""
        report = RunReport()
        span_ms = poll_span.total_millis()
        if span_ms <= 0:
            raise EngineError("poll span must be positive")
        pending = sorted(trace or [], key=lambda r: r.at)
        if start is None:
            start = pending[0].at if pending else round(_time.time() * 1000)
        wall_start = _time.monotonic()
        quiet = 0
        executor = None if serial else ThreadPoolExecutor(max_workers=self.workers)
        try:
            cycle = 0
            while True:
                now = start + cycle * span_ms
                if wall_clock:
                    now = round(_time.time() * 1000)
                while pending and pending[0].at <= now:
                    record = pending.pop(0)
                    kind = "transient" if record.kind == "occurs" else "persistent"
                    key = None if kind == "transient" else "trace"
                    self.inject_event(record.event, record.at, eis_key=key, kind=kind)
                snapshot = self.kb.snapshot()
                for schedule in self.periodic_schedules:
                    for tick in schedule.due_ticks(snapshot, now):
                        self.inject_event(schedule.event, tick)
                if self.periodic_schedules:
                    snapshot = self.kb.snapshot()
                rules = self.poll_rules(snapshot, diagnostics=report.diagnostics)
                outcomes = self._run_cycle(rules, snapshot, now, cycle, executor, report)
                report.outcomes.extend(outcomes)
                report.cycles = cycle + 1
                fired_any = any(o.fired or o.else_fired for o in outcomes)
                quiet = 0 if (fired_any or pending) else quiet + 1
                cycle += 1
                if stop.max_cycles is not None and cycle >= stop.max_cycles:
                    break
                if stop.wall_ms is not None and (_time.monotonic() - wall_start) * 1000 >= stop.wall_ms:
                    break
                if stop.quiescent_cycles is not None and quiet >= stop.quiescent_cycles:
                    break
                if stop.max_cycles is None and stop.wall_ms is None and stop.quiescent_cycles is None:
                    raise EngineError("run() needs at least one stop condition")
        finally:
            if executor is not None:
                executor.shutdown(wait=True)
        return report

    def _run_cycle(self, rules, snapshot, now, cycle, executor, report) -> list:
        outcomes: list = []
        futures = []
        for rule in rules:
            oid = rule.oid or "rule"
            if executor is None:
                outcomes.append(
                    self.evaluate_rule(rule, now, snapshot=snapshot, cycle=cycle)
                )
                continue
            if len(futures) >= self.workers * 2:
                deferred = RuleOutcome(oid=oid, cycle=cycle, phases=("time",))
                deferred.errors = ("executor saturated; rule deferred to next cycle",)
                outcomes.append(deferred)
                report.diagnostics.append(f"cycle {cycle}: rule {oid} deferred (executor saturated)")
                continue
            started = _time.perf_counter()
            deadline = started + self.timeout_ms / 1000.0
            try:
                time_bindings = self._time_solutions(rule, snapshot, now, deadline, oid)
            except (KbError, EngineError) as exc:
                failed = RuleOutcome(oid=oid, cycle=cycle, phases=("time",))
                failed.errors = (str(exc),)
                outcomes.append(failed)
                continue
            if not time_bindings:
                outcomes.append(RuleOutcome(oid=oid, cycle=cycle, phases=("time",)))
                continue
            futures.append(
                executor.submit(
                    self._evaluate_after_time, rule, time_bindings, snapshot, now, deadline, cycle, started
                )
            )
        for future in futures:
            outcomes.append(future.result())
        return outcomes

    def _evaluate_after_time(self, rule, time_bindings, snapshot, now, deadline, cycle, started):
        oid = rule.oid or "rule"
        outcome = RuleOutcome(oid=oid, cycle=cycle, phases=("time",))
        try:
            self._evaluate_pipeline(rule, time_bindings, snapshot, now, deadline, outcome)
        except BudgetExceeded as exc:
            outcome.errors += (str(exc),)
            outcome.timed_out = getattr(exc, "reason", "") == "deadline"
        except (KbError, EngineError, algebra.ExpressionError) as exc:
            outcome.errors += (f"{type(exc).__name__}: {exc}",)
        outcome.duration_ms = (_time.perf_counter() - started) * 1000.0
        return outcome

    # -- loading documents ----------------------------------------------------------

    def load_document(self, doc) -> None:
        """Install a parsed rule document: ECA rules are registered, event
        calculus facts and updates go to the knowledge base, named algebra
        definitions become detect/2 rules."""
        from . import ecarml

        ecarml.install(doc, self)
