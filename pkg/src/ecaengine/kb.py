"""Transactional knowledge base with ID-labeled updates and a top-down evaluator.

Facts and rules are grouped under update keys so whole updates can be
retracted again.  Queries run depth-first over clause insertion order with
negation-as-failure and a mandatory step budget.  Updates applied in
transactional mode are integrity-checked and rolled back on violation.

The clause store doubles as the event instance store: `occurs/2` and
`happens/2` facts are additionally indexed as occurrences so that the
event algebra and the event calculus can scan them chronologically.
"""

from __future__ import annotations

import itertools
import threading
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

from .terms import (
    Compound,
    Constant,
    DataLiteral,
    ListTerm,
    Substitution,
    Term,
    Variable,
    apply,
    atom,
    compare_data,
    compound,
    functor_of,
    integer,
    floating,
    rename_apart,
    string,
    unify,
    variables_of,
)
from .temporal import TimeInterval


class KbError(Exception):
    pass


class StratificationError(KbError):
    """The program would contain recursion through negation."""


class TransactionError(KbError):
    pass


class BudgetExceeded(KbError):
    """The step budget ran out: the answer is unknown, not 'no'."""

    def __init__(self, message: str, reason: str = "steps"):
        super().__init__(message)
        self.reason = reason


class UnknownHostFunction(KbError):
    pass


# ---------------------------------------------------------------------------
# Goals and clauses


@dataclass(frozen=True)
class Goal:
    pass


@dataclass(frozen=True)
class Call(Goal):
    term: Term


@dataclass(frozen=True)
class Naf(Goal):
    inner: Goal


@dataclass(frozen=True)
class StrongNeg(Goal):
    term: Term


@dataclass(frozen=True)
class Builtin(Goal):
    name: str
    args: tuple


@dataclass(frozen=True)
class HostCall(Goal):
    fn: str
    args: tuple


@dataclass(frozen=True)
class Clause:
    head: Term
    body: tuple = ()

    def __post_init__(self):
        if not isinstance(self.head, (Compound, Constant)):
            raise KbError(f"clause head must be compound or constant: {self.head!r}")
        object.__setattr__(self, "body", tuple(self.body))

    @property
    def is_fact(self) -> bool:
        return not self.body


def goal_from_term(t: Term) -> Goal:
    """Lift a term into a goal: not(...) is negation as failure, neg(...) is
    the strong-negation wrapper, everything else a plain call."""
    if isinstance(t, Compound) and t.functor == "not" and t.arity == 1:
        return Naf(goal_from_term(t.args[0]))
    if isinstance(t, Compound) and t.functor == "neg" and t.arity == 1:
        return StrongNeg(t.args[0])
    return Call(t)


def term_of_goal(g: Goal) -> Term:
    if isinstance(g, Call):
        return g.term
    if isinstance(g, Naf):
        return compound("not", term_of_goal(g.inner))
    if isinstance(g, StrongNeg):
        return compound("neg", g.term)
    if isinstance(g, Builtin):
        return compound(g.name, *g.args)
    if isinstance(g, HostCall):
        return compound(g.fn, *g.args)
    raise KbError(f"not a goal: {g!r}")


def goal_pred(g: Goal) -> Optional[tuple[str, int, bool]]:
    """(name, arity, negative) of the predicate a goal depends on."""
    if isinstance(g, Naf):
        inner = goal_pred(g.inner)
        if inner is None:
            return None
        return (inner[0], inner[1], True)
    if isinstance(g, StrongNeg):
        return ("neg", 1, False)
    if isinstance(g, Call):
        ind = functor_of(g.term)
        return (ind[0], ind[1], False) if ind else None
    return None


# ---------------------------------------------------------------------------
# Updates, occurrences, integrity constraints


@dataclass(frozen=True)
class Occurrence:
    """One event instance: transient `occurs` or persistent `happens`."""

    event: Term
    interval: TimeInterval
    kind: str  # "transient" | "persistent"
    eis_key: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("transient", "persistent"):
            raise KbError(f"invalid occurrence kind {self.kind!r}")


@dataclass
class Update:
    id: str
    transactional: bool = False
    state: str = "applied"  # applied | pending | committed | rolled_back
    seqs: list = field(default_factory=list)


CONSTRAINT_KINDS = ("not", "xor", "or", "and")


@dataclass(frozen=True)
class IntegrityConstraint:
    kind: str
    literals: tuple
    condition: tuple = ()

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise KbError(f"unknown integrity constraint kind {self.kind!r}")
        if not self.literals:
            raise KbError("integrity constraint needs at least one literal")
        object.__setattr__(self, "literals", tuple(self.literals))
        object.__setattr__(self, "condition", tuple(self.condition))


@dataclass(frozen=True)
class UpdateReceipt:
    id: str
    applied: bool
    found: bool = True
    violations: tuple = ()


@dataclass(frozen=True)
class IntegrityReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# Evaluation context


DEFAULT_BUDGET = 200_000


class Budget:
    """Mutable step budget shared across one query, optionally with a wall
    deadline (monotonic seconds)."""

    __slots__ = ("steps", "deadline")

    def __init__(self, steps: int = DEFAULT_BUDGET, deadline: Optional[float] = None):
        self.steps = steps
        self.deadline = deadline

    def spend(self, n: int = 1) -> None:
        self.steps -= n
        if self.steps < 0:
            raise BudgetExceeded("resolution step budget exceeded", reason="steps")
        if self.deadline is not None and self.steps % 64 == 0:
            if _time.monotonic() > self.deadline:
                raise BudgetExceeded("evaluation deadline exceeded", reason="deadline")


class QueryContext:
    """Carries everything a resolution step may need besides the clauses:
    the store snapshot, the live kb (for effectful action goals), the clock,
    host functions, and the derived-event evaluator."""

    def __init__(
        self,
        snapshot: "Snapshot",
        kb: Optional["KnowledgeBase"] = None,
        budget: Optional[Budget] = None,
        now_fn: Optional[Callable[[], int]] = None,
        host_functions: Optional[dict] = None,
        allow_effects: bool = False,
        hypothetical: bool = False,
        rule_key: Optional[str] = None,
        schedules: Optional[dict] = None,
        engine=None,
    ):
        self.snapshot = snapshot
        self.kb = kb
        self.budget = budget or Budget()
        self.now_fn = now_fn
        self.host_functions = host_functions if host_functions is not None else {}
        self.allow_effects = allow_effects
        self.hypothetical = hypothetical
        self.rule_key = rule_key
        self.schedules = schedules if schedules is not None else {}
        self.engine = engine
        self._ec = None
        self._rename_counter = itertools.count(1)

    @property
    def ec(self):
        if self._ec is None:
            from .event_calculus import EventCalculus

            self._ec = EventCalculus(self.snapshot)
        return self._ec

    def fresh_suffix(self) -> str:
        return f"__{next(self._rename_counter)}"

    def now(self) -> int:
        if self.now_fn is None:
            return round(_time.time() * 1000)
        return self.now_fn()


# Builtin handlers: fn(ctx, args, subst) -> iterator of Substitution.
# Handlers observing no solutions simply yield nothing.
BUILTINS: dict[tuple[str, int], Callable] = {}


def register_builtin(name: str, arity: int):
    def wrap(fn):
        BUILTINS[(name, arity)] = fn
        return fn

    return wrap


def is_builtin(name: str, arity: int) -> bool:
    return (name, arity) in BUILTINS


# ---------------------------------------------------------------------------
# Snapshot


class Snapshot:
    """Immutable view for queries: clauses by predicate (insertion order),
    occurrences, integrity constraints."""

    __slots__ = ("version", "clauses", "seqs", "occurrences", "constraints", "_sorted_occ")

    def __init__(self, version, clauses, occurrences, constraints, seqs=None):
        self.version = version
        self.clauses = clauses  # dict[(name, arity)] -> tuple[Clause, ...]
        self.seqs = seqs if seqs is not None else {}  # same keys -> tuple[int, ...]
        self.occurrences = occurrences  # tuple[Occurrence, ...]
        self.constraints = constraints  # tuple[IntegrityConstraint, ...]
        self._sorted_occ = None

    def clauses_for(self, name: str, arity: int) -> tuple:
        return self.clauses.get((name, arity), ())

    def occurrences_sorted(self) -> tuple:
        if self._sorted_occ is None:
            self._sorted_occ = tuple(
                sorted(self.occurrences, key=lambda o: (o.interval.start, o.interval.end))
            )
        return self._sorted_occ


# ---------------------------------------------------------------------------
# The knowledge base


def _is_time_term(t: Term) -> bool:
    return isinstance(t, DataLiteral) and t.kind in ("integer", "datetime")


def _time_value(t: Term) -> int:
    from .temporal import to_millis

    if isinstance(t, DataLiteral):
        if t.kind == "integer":
            return int(t.value)
        if t.kind == "datetime":
            return to_millis(t.value)
    raise KbError(f"not a time literal: {t!r}")


def _occurrence_of_fact(head: Term, eis_key: str) -> Optional[Occurrence]:
    ind = functor_of(head)
    if ind is None or ind[1] != 2 or ind[0] not in ("occurs", "happens"):
        return None
    event, when = head.args  # type: ignore[union-attr]
    kind = "transient" if ind[0] == "occurs" else "persistent"
    if _is_time_term(when):
        t = _time_value(when)
        return Occurrence(event=event, interval=TimeInterval(t, t), kind=kind, eis_key=eis_key)
    if isinstance(when, ListTerm) and len(when.items) == 2 and all(_is_time_term(x) for x in when.items):
        iv = TimeInterval(_time_value(when.items[0]), _time_value(when.items[1]))
        return Occurrence(event=event, interval=iv, kind=kind, eis_key=eis_key)
    return None  # non-ground time: queryable clause, not an indexed instance


def _constraint_of_clause(clause: Clause) -> Optional[IntegrityConstraint]:
    ind = functor_of(clause.head)
    if ind is None or ind != ("integrity", 1):
        return None
    inner = clause.head.args[0]  # type: ignore[union-attr]
    iind = functor_of(inner)
    if iind is None or iind[0] not in CONSTRAINT_KINDS or iind[1] == 0:
        raise KbError(f"malformed integrity constraint: {clause.head!r}")
    return IntegrityConstraint(kind=iind[0], literals=inner.args, condition=clause.body)


class KnowledgeBase:
    """Fact/rule storage with ID-labeled updates, one writer, many readers."""

    def __init__(self):
        self._lock = threading.RLock()
        self._seq = itertools.count(1)
        self._version = 0
        self._clauses: dict[tuple[str, int], list] = {}  # pred -> [(seq, id, Clause)]
        self._updates: dict[str, Update] = {}
        self._occurrences: list = []  # [(seq, id, Occurrence)]
        self._constraints: list = []  # [(seq, IntegrityConstraint)]
        self._rules: list = []  # [(seq, Clause)] clauses with bodies, for stratification
        self._snapshot: Optional[Snapshot] = None
        self._txn_journal: Optional[list] = None
        self._txn_id: Optional[str] = None
        self._txn_counter = itertools.count(1)
        self._test_hooks: list[tuple[str, Goal]] = []

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> Snapshot:
        with self._lock:
            if self._snapshot is None or self._snapshot.version != self._version:
                clauses = {}
                seqs = {}
                for pred, entries in self._clauses.items():
                    if not entries:
                        continue
                    ordered = sorted(entries)
                    clauses[pred] = tuple(c for _, _, c in ordered)
                    seqs[pred] = tuple(s for s, _, _ in ordered)
                occs = tuple(o for _, _, o in sorted(self._occurrences, key=lambda e: e[0]))
                cons = tuple(c for _, c in sorted(self._constraints, key=lambda e: e[0]))
                self._snapshot = Snapshot(self._version, clauses, occs, cons, seqs=seqs)
            return self._snapshot

    def _bump(self):
        self._version += 1

    # -- low-level clause plumbing ------------------------------------------

    def _insert_clause(self, update_id: str, clause: Clause, seq: Optional[int] = None) -> int:
        seq = seq if seq is not None else next(self._seq)
        ind = functor_of(clause.head)
        self._clauses.setdefault(ind, []).append((seq, update_id, clause))
        self._clauses[ind].sort()
        if clause.body:
            self._rules.append((seq, clause))
        if clause.is_fact:
            occ = _occurrence_of_fact(clause.head, update_id)
            if occ is not None:
                self._occurrences.append((seq, update_id, occ))
        constraint = _constraint_of_clause(clause)
        if constraint is not None:
            self._constraints.append((seq, constraint))
        return seq

    def _delete_seq(self, seq: int) -> Optional[tuple[str, Clause]]:
        removed = None
        for pred, entries in self._clauses.items():
            for i, (s, uid, c) in enumerate(entries):
                if s == seq:
                    removed = (uid, c)
                    del entries[i]
                    break
            if removed:
                break
        if removed is None:
            return None
        self._occurrences = [e for e in self._occurrences if e[0] != seq]
        self._constraints = [e for e in self._constraints if e[0] != seq]
        self._rules = [e for e in self._rules if e[0] != seq]
        return removed

    def _journal(self, entry) -> None:
        if self._txn_journal is not None:
            self._txn_journal.append(entry)

    # -- stratification ------------------------------------------------------

    def _check_stratified(self, new_clauses: Sequence[Clause]) -> None:
        rules = [c for _, c in self._rules] + [c for c in new_clauses if c.body]
        if not any(c.body for c in new_clauses):
            return  # facts cannot introduce edges
        edges: dict[tuple[str, int], set] = {}
        neg_edges: set = set()
        for c in rules:
            head = functor_of(c.head)
            for g in c.body:
                dep = goal_pred(g)
                if dep is None:
                    continue
                name, arity, negative = dep
                if is_builtin(name, arity) or "." in name:
                    continue
                edges.setdefault(head, set()).add((name, arity))
                if negative:
                    neg_edges.add((head, (name, arity)))
        # reject any cycle that passes through a negative edge
        for (src, dst) in neg_edges:
            if self._reaches(edges, dst, src):
                raise StratificationError(
                    f"negation cycle through {src[0]}/{src[1]} and {dst[0]}/{dst[1]}"
                )

    @staticmethod
    def _reaches(edges, start, goal) -> bool:
        seen = set()
        stack = [start]
        while stack:
            node = stack.pop()
            if node == goal:
                return True
            if node in seen:
                continue
            seen.add(node)
            stack.extend(edges.get(node, ()))
        return False

    # -- updates --------------------------------------------------------------

    def add_update(
        self,
        update_id: str,
        clauses: Iterable[Clause],
        transactional: bool = False,
    ) -> UpdateReceipt:
        clauses = list(clauses)
        with self._lock:
            self._check_stratified(clauses)
            update = self._updates.setdefault(update_id, Update(id=update_id, transactional=transactional))
            seqs = [self._insert_clause(update_id, c) for c in clauses]
            update.seqs.extend(seqs)
            self._bump()
            self._journal(("add", update_id, list(seqs)))
            if transactional and self._txn_journal is None:
                report = self.test_integrity()
                if not report.ok:
                    for seq in seqs:
                        self._delete_seq(seq)
                    update.seqs = [s for s in update.seqs if s not in seqs]
                    update.state = "rolled_back"
                    self._bump()
                    return UpdateReceipt(
                        id=update_id, applied=False, violations=tuple(report.violations)
                    )
                update.state = "committed"
            return UpdateReceipt(id=update_id, applied=True)

    def add_update_text(
        self, update_id: str, text: str, args: Sequence = (), transactional: bool = False
    ) -> UpdateReceipt:
        """Add clauses given in clause-text form, substituting `_0`, `_1`, ...
        placeholders positionally from args."""
        from .syntax import parse_program

        clauses = parse_program(text)
        if args:
            mapping = {f"_{i}": _lift_arg(a) for i, a in enumerate(args)}
            subst = Substitution(mapping)
            clauses = [
                Clause(head=apply(subst, c.head), body=tuple(_apply_goal(subst, g) for g in c.body))
                for c in clauses
            ]
        return self.add_update(update_id, clauses, transactional=transactional)

    def remove_update(self, update_id: str, transactional: bool = False) -> UpdateReceipt:
        with self._lock:
            update = self._updates.get(update_id)
            if update is None or not update.seqs:
                return UpdateReceipt(id=update_id, applied=False, found=False)
            removed = []
            for seq in list(update.seqs):
                entry = self._delete_seq(seq)
                if entry is not None:
                    removed.append((seq, entry[0], entry[1]))
            update.seqs = []
            self._bump()
            self._journal(("remove", update_id, removed))
            if transactional and self._txn_journal is None:
                report = self.test_integrity()
                if not report.ok:
                    for seq, uid, clause in removed:
                        self._insert_clause(uid, clause, seq=seq)
                    update.seqs = [seq for seq, _, _ in removed]
                    self._bump()
                    return UpdateReceipt(
                        id=update_id, applied=False, violations=tuple(report.violations)
                    )
            return UpdateReceipt(id=update_id, applied=True)

    def remove_clauses(
        self,
        heads: Iterable[Term],
        update_id: Optional[str] = None,
        all_matches: bool = False,
    ) -> int:
        """Remove stored fact/rule entries whose head unifies with any of the
        given head terms: the first match per head, or every match when
        all_matches is set; optionally restricted to one update key."""
        removed = 0
        with self._lock:
            journal_payload = []
            for head in heads:
                ind = functor_of(head)
                if ind is None:
                    continue
                entries = list(self._clauses.get(ind, ()))
                for seq, uid, clause in entries:
                    if update_id is not None and uid != update_id:
                        continue
                    if unify(head, clause.head) is None:
                        continue
                    entry = self._delete_seq(seq)
                    if entry is not None:
                        journal_payload.append((seq, entry[0], entry[1]))
                        update = self._updates.get(uid)
                        if update is not None:
                            update.seqs = [s for s in update.seqs if s != seq]
                        removed += 1
                    if not all_matches:
                        break
            if removed:
                self._bump()
                self._journal(("remove", update_id or "*", journal_payload))
        return removed

    # -- occurrence store -----------------------------------------------------

    def add_occurrence(self, occ: Occurrence) -> UpdateReceipt:
        """Store an event instance as an occurs/happens fact under its EIS key."""
        key = occ.eis_key or default_eis_key(occ.event)
        functor = "occurs" if occ.kind == "transient" else "happens"
        iv = occ.interval
        when: Term
        if iv.is_atomic:
            when = integer(iv.start)
        else:
            when = ListTerm(items=(integer(iv.start), integer(iv.end)))
        clause = Clause(head=compound(functor, occ.event, when))
        return self.add_update(key, [clause])

    def consume(self, eis_key: str, policy: str = "consume_all") -> UpdateReceipt:
        """Remove transient occurrences under an EIS key per policy:
        consume_all, consume_first, consume_last, or none."""
        if policy not in ("consume_all", "consume_first", "consume_last", "none"):
            raise KbError(f"unknown consumption policy {policy!r}")
        with self._lock:
            entries = [
                e
                for e in self._occurrences
                if e[1] == eis_key and e[2].kind == "transient"
            ]
            if not entries:
                return UpdateReceipt(id=eis_key, applied=False, found=False)
            if policy == "none":
                return UpdateReceipt(id=eis_key, applied=True)
            chronological = sorted(entries, key=lambda e: (e[2].interval.start, e[0]))
            if policy == "consume_first":
                victims = [chronological[0]]
            elif policy == "consume_last":
                victims = [chronological[-1]]
            else:
                victims = chronological
            removed = []
            for seq, uid, _ in victims:
                entry = self._delete_seq(seq)
                if entry is not None:
                    removed.append((seq, entry[0], entry[1]))
                update = self._updates.get(uid)
                if update is not None:
                    update.seqs = [s for s in update.seqs if s != seq]
            self._bump()
            self._journal(("remove", eis_key, removed))
            return UpdateReceipt(id=eis_key, applied=True)

    # -- transactions -----------------------------------------------------------

    def begin_transaction(self) -> str:
        with self._lock:
            if self._txn_journal is not None:
                raise TransactionError("a transaction is already open")
            self._txn_id = f"txn{next(self._txn_counter)}"
            self._txn_journal = []
            return self._txn_id

    def _require_txn(self, txn_id: str) -> list:
        if self._txn_journal is None or txn_id != self._txn_id:
            raise TransactionError(f"unknown or closed transaction {txn_id!r}")
        return self._txn_journal

    def _undo(self, journal: list) -> None:
        for entry in reversed(journal):
            op, uid, payload = entry
            if op == "add":
                for seq in payload:
                    self._delete_seq(seq)
                update = self._updates.get(uid)
                if update is not None:
                    update.seqs = [s for s in update.seqs if s not in payload]
            else:  # remove
                for seq, owner, clause in payload:
                    self._insert_clause(owner, clause, seq=seq)
                    update = self._updates.get(owner)
                    if update is not None and seq not in update.seqs:
                        update.seqs.append(seq)
        self._bump()

    def rollback(self, txn_id: str) -> UpdateReceipt:
        with self._lock:
            journal = self._require_txn(txn_id)
            self._undo(journal)
            self._txn_journal = None
            self._txn_id = None
            return UpdateReceipt(id=txn_id, applied=True)

    def commit(self, txn_id: str) -> UpdateReceipt:
        """Re-check integrity once over the final state and publish; on
        violation the whole transaction is reverted."""
        with self._lock:
            journal = self._require_txn(txn_id)
            report = self.test_integrity()
            if not report.ok:
                self._undo(journal)
                self._txn_journal = None
                self._txn_id = None
                return UpdateReceipt(id=txn_id, applied=False, violations=tuple(report.violations))
            self._txn_journal = None
            self._txn_id = None
            return UpdateReceipt(id=txn_id, applied=True)

    # -- integrity ---------------------------------------------------------------

    def register_test_hook(self, name: str, goal: Goal) -> None:
        """Post-update test evaluated like an integrity constraint: the goal
        must be derivable after every transactional update."""
        with self._lock:
            self._test_hooks.append((name, goal))

    def _derivable(self, lit: Term, ctx: QueryContext) -> bool:
        for _ in solve([Call(lit)], Substitution(), ctx):
            return True
        return False

    def _check_constraint(self, c: IntegrityConstraint, ctx: QueryContext) -> Optional[str]:
        if c.condition:
            ok = False
            for _ in solve(list(c.condition), Substitution(), ctx):
                ok = True
                break
            if not ok:
                return None  # conditional constraint not triggered
        derivable = [self._derivable(lit, ctx) for lit in c.literals]
        if c.kind == "not" and any(derivable):
            return f"not-constraint violated: {_lits(c, derivable, True)}"
        if c.kind == "and" and not all(derivable):
            return f"and-constraint violated: {_lits(c, derivable, False)}"
        if c.kind == "or" and not any(derivable):
            return "or-constraint violated: no listed conclusion derivable"
        if c.kind == "xor" and sum(derivable) > 1:
            return f"xor-constraint violated: {_lits(c, derivable, True)}"
        return None

    def _integrity_ctx(self) -> QueryContext:
        return QueryContext(self.snapshot(), kb=self, hypothetical=True)

    def test_integrity(self) -> IntegrityReport:
        """Check every constraint and registered test hook against the current
        derivable conclusions."""
        with self._lock:
            ctx = self._integrity_ctx()
            violations = []
            for c in ctx.snapshot.constraints:
                detail = self._check_constraint(c, ctx)
                if detail is not None:
                    violations.append(detail)
            for name, goal in self._test_hooks:
                ok = False
                for _ in solve([goal], Substitution(), ctx):
                    ok = True
                    break
                if not ok:
                    violations.append(f"test hook failed: {name}")
            return IntegrityReport(violations=tuple(violations))

    def test_integrity_literal(self, lit: Term) -> IntegrityReport:
        """Hypothetically assert lit, check the constraints mentioning it, and
        restore the knowledge base unconditionally."""
        hypo_id = "__hypothesis__"
        with self._lock:
            receipt = self.add_update(hypo_id, [Clause(head=lit)])
            try:
                ctx = self._integrity_ctx()
                violations = []
                for c in ctx.snapshot.constraints:
                    if not any(unify(lit, other) is not None for other in c.literals):
                        continue
                    detail = self._check_constraint(c, ctx)
                    if detail is not None:
                        violations.append(detail)
                return IntegrityReport(violations=tuple(violations))
            finally:
                if receipt.applied:
                    self.remove_update(hypo_id)
                self._updates.pop(hypo_id, None)

    # -- querying -------------------------------------------------------------------

    def query(
        self,
        goal: Union[Goal, Term, str],
        budget: Optional[int] = None,
        ctx: Optional[QueryContext] = None,
    ) -> Iterator[Substitution]:
        """Enumerate answer substitutions for a goal (depth-first, clause
        insertion order).  Accepts a Goal, a term, or goal text."""
        if isinstance(goal, str):
            from .syntax import parse_term

            goal = goal_from_term(parse_term(goal))
        elif isinstance(goal, Term):
            goal = goal_from_term(goal)
        if ctx is None:
            ctx = QueryContext(self.snapshot(), kb=self)
        if budget is not None:
            ctx.budget = Budget(steps=budget)
        return solve([goal], Substitution(), ctx)

    def ask(self, goal, budget: Optional[int] = None) -> bool:
        for _ in self.query(goal, budget=budget):
            return True
        return False


def _lits(c: IntegrityConstraint, derivable: list, keep_true: bool) -> str:
    from .syntax import term_to_text

    picked = [term_to_text(l) for l, d in zip(c.literals, derivable) if d == keep_true]
    return ", ".join(picked)


def _lift_arg(a) -> Term:
    if isinstance(a, Term):
        return a
    if isinstance(a, bool):
        return atom("true" if a else "false")
    if isinstance(a, int):
        return integer(a)
    if isinstance(a, float):
        return floating(a)
    if isinstance(a, str):
        return atom(a)
    raise KbError(f"cannot lift update argument {a!r}")


def _apply_goal(s: Substitution, g: Goal) -> Goal:
    if isinstance(g, Call):
        return Call(apply(s, g.term))
    if isinstance(g, Naf):
        return Naf(_apply_goal(s, g.inner))
    if isinstance(g, StrongNeg):
        return StrongNeg(apply(s, g.term))
    if isinstance(g, Builtin):
        return Builtin(g.name, tuple(apply(s, a) for a in g.args))
    if isinstance(g, HostCall):
        return HostCall(g.fn, tuple(apply(s, a) for a in g.args))
    return g


def default_eis_key(event: Term) -> str:
    ind = functor_of(event)
    name = ind[0] if ind else "event"
    return f"eis({name})"


# ---------------------------------------------------------------------------
# SLD resolution


def solve(goals: list, subst: Substitution, ctx: QueryContext, depth: int = 0) -> Iterator[Substitution]:
    """Depth-first resolution over the context snapshot."""
    if not goals:
        yield subst
        return
    ctx.budget.spend()
    goal, rest = goals[0], goals[1:]

    if isinstance(goal, Naf):
        inner_effects = ctx.allow_effects
        ctx.allow_effects = False
        try:
            for _ in solve([goal.inner], subst, ctx, depth + 1):
                return  # inner succeeded: negation fails
        finally:
            ctx.allow_effects = inner_effects
        yield from solve(rest, subst, ctx, depth + 1)
        return

    if isinstance(goal, StrongNeg):
        goal = Call(compound("neg", goal.term))

    if isinstance(goal, Builtin):
        handler = BUILTINS.get((goal.name, len(goal.args)))
        if handler is None:
            raise KbError(f"unknown builtin {goal.name}/{len(goal.args)}")
        for s2 in handler(ctx, [apply(subst, a) for a in goal.args], subst):
            yield from solve(rest, s2, ctx, depth + 1)
        return

    if isinstance(goal, HostCall):
        yield from _solve_host(goal.fn, [apply(subst, a) for a in goal.args], subst, rest, ctx, depth)
        return

    if isinstance(goal, Call):
        term = apply(subst, goal.term)
        ind = functor_of(term)
        if ind is None:
            if isinstance(term, Variable):
                raise KbError("unbound variable called as goal")
            return  # data literals and lists are not callable
        name, arity = ind
        if is_builtin(name, arity):
            args = list(term.args) if isinstance(term, Compound) else []
            for s2 in BUILTINS[(name, arity)](ctx, args, subst):
                yield from solve(rest, s2, ctx, depth + 1)
            return
        if "." in name or name in ctx.host_functions:
            args = list(term.args) if isinstance(term, Compound) else []
            yield from _solve_host(name, args, subst, rest, ctx, depth)
            return
        for clause in ctx.snapshot.clauses_for(name, arity):
            ctx.budget.spend()
            suffix = ctx.fresh_suffix()
            head = rename_apart(clause.head, suffix)
            s2 = unify(term, head, subst)
            if s2 is None:
                continue
            body = [_rename_goal(g, suffix) for g in clause.body]
            yield from solve(body + rest, s2, ctx, depth + 1)
        return

    raise KbError(f"cannot solve goal {goal!r}")


def _rename_goal(g: Goal, suffix: str) -> Goal:
    if isinstance(g, Call):
        return Call(rename_apart(g.term, suffix))
    if isinstance(g, Naf):
        return Naf(_rename_goal(g.inner, suffix))
    if isinstance(g, StrongNeg):
        return StrongNeg(rename_apart(g.term, suffix))
    if isinstance(g, Builtin):
        return Builtin(g.name, tuple(rename_apart(a, suffix) for a in g.args))
    if isinstance(g, HostCall):
        return HostCall(g.fn, tuple(rename_apart(a, suffix) for a in g.args))
    return g


def _solve_host(name: str, args: list, subst: Substitution, rest: list, ctx: QueryContext, depth: int):
    fn = ctx.host_functions.get(name)
    if fn is None:
        raise UnknownHostFunction(f"no host function registered for {name!r}")
    if getattr(fn, "side_effecting", False) and ctx.hypothetical:
        return  # never run side-effecting host code during hypothetical tests
    result = fn(ctx, args)
    for s2 in _host_result_to_substs(result, args, subst):
        yield from solve(rest, s2, ctx, depth + 1)


def _host_result_to_substs(result, args: list, subst: Substitution) -> Iterator[Substitution]:
    """A host callable may return a truthiness flag, one bindings mapping, or
    an iterable of bindings mappings (variable name -> Term)."""
    if result is True:
        yield subst
        return
    if result is False or result is None:
        return
    if isinstance(result, dict):
        result = [result]
    for bindings in result:
        s = subst
        ok = True
        for name, value in bindings.items():
            s2 = unify(Variable(name=name), _lift_arg(value), s)
            if s2 is None:
                ok = False
                break
            s = s2
        if ok:
            yield s


# ---------------------------------------------------------------------------
# Core builtins (comparisons, arithmetic, equality)


def _cmp_handler(op):
    def handler(ctx, args, subst):
        a, b = args
        if not isinstance(a, DataLiteral) or not isinstance(b, DataLiteral):
            return
        c = compare_data(a, b)
        if c is not None and op(c):
            yield subst

    return handler


register_builtin("less", 2)(_cmp_handler(lambda c: c < 0))
register_builtin("lessequ", 2)(_cmp_handler(lambda c: c <= 0))
register_builtin("more", 2)(_cmp_handler(lambda c: c > 0))
register_builtin("moreequ", 2)(_cmp_handler(lambda c: c >= 0))


@register_builtin("equal", 2)
def _bi_equal(ctx, args, subst):
    s2 = unify(args[0], args[1], subst)
    if s2 is not None:
        yield s2


@register_builtin("true", 0)
def _bi_true(ctx, args, subst):
    yield subst


@register_builtin("fail", 0)
def _bi_fail(ctx, args, subst):
    return
    yield  # pragma: no cover


def _numeric(t: Term) -> Optional[Union[int, float]]:
    if isinstance(t, DataLiteral) and t.kind in ("integer", "float"):
        return t.value
    return None


def _as_literal(x) -> DataLiteral:
    return integer(x) if isinstance(x, int) else floating(x)


def _arith_handler(fwd, inv_left, inv_right):
    def handler(ctx, args, subst):
        a, b, c = args
        na, nb, nc = _numeric(a), _numeric(b), _numeric(c)
        if na is not None and nb is not None:
            s2 = unify(c, _as_literal(fwd(na, nb)), subst)
        elif na is not None and nc is not None:
            s2 = unify(b, _as_literal(inv_right(na, nc)), subst)
        elif nb is not None and nc is not None:
            s2 = unify(a, _as_literal(inv_left(nb, nc)), subst)
        else:
            return
        if s2 is not None:
            yield s2

    return handler


register_builtin("plus", 3)(
    _arith_handler(lambda a, b: a + b, lambda b, c: c - b, lambda a, c: c - a)
)
register_builtin("minus", 3)(
    _arith_handler(lambda a, b: a - b, lambda b, c: b + c, lambda a, c: a - c)
)


# -- effect builtins (permitted in action phases only) -------------------------


def _require_effects(ctx: QueryContext) -> "KnowledgeBase":
    if not ctx.allow_effects or ctx.kb is None:
        raise KbError("effectful goal outside an action context")
    return ctx.kb


def _refresh(ctx: QueryContext) -> None:
    """Make kb mutations visible to the remaining goals of the resolution."""
    ctx.snapshot = ctx.kb.snapshot()
    ctx._ec = None


def _key_text(t: Term) -> str:
    from .syntax import term_to_text

    return term_to_text(t)


@register_builtin("add", 2)
def _bi_add2(ctx, args, subst):
    kb = _require_effects(ctx)
    key, payload = args
    if not isinstance(payload, DataLiteral) or payload.kind != "string":
        raise KbError("add/2 expects a clause-text string payload")
    receipt = kb.add_update_text(_key_text(key), payload.value)
    _refresh(ctx)
    if receipt.applied:
        yield subst


@register_builtin("add", 3)
def _bi_add3(ctx, args, subst):
    kb = _require_effects(ctx)
    key, payload, params = args
    if not isinstance(payload, DataLiteral) or payload.kind != "string":
        raise KbError("add/3 expects a clause-text string payload")
    if not isinstance(params, ListTerm):
        raise KbError("add/3 expects a list of placeholder arguments")
    receipt = kb.add_update_text(_key_text(key), payload.value, args=list(params.items))
    _refresh(ctx)
    if receipt.applied:
        yield subst


@register_builtin("remove", 1)
def _bi_remove(ctx, args, subst):
    kb = _require_effects(ctx)
    receipt = kb.remove_update(_key_text(args[0]))
    _refresh(ctx)
    if receipt.applied or not receipt.found:
        yield subst


_POLICY_NAMES = {
    "all": "consume_all",
    "first": "consume_first",
    "last": "consume_last",
    "none": "none",
    "consume_all": "consume_all",
    "consume_first": "consume_first",
    "consume_last": "consume_last",
}


@register_builtin("consume", 1)
def _bi_consume1(ctx, args, subst):
    kb = _require_effects(ctx)
    kb.consume(_key_text(args[0]))
    _refresh(ctx)
    yield subst


@register_builtin("consume", 2)
def _bi_consume2(ctx, args, subst):
    kb = _require_effects(ctx)
    policy = args[1]
    if not isinstance(policy, Constant) or policy.name not in _POLICY_NAMES:
        raise KbError(f"unknown consumption policy {policy!r}")
    kb.consume(_key_text(args[0]), policy=_POLICY_NAMES[policy.name])
    _refresh(ctx)
    yield subst


@register_builtin("transaction", 1)
def _bi_transaction(ctx, args, subst):
    """Run an inner effectful goal transactionally: integrity is re-checked at
    commit and the whole inner update sequence is reverted on failure."""
    kb = _require_effects(ctx)
    txn = kb.begin_transaction()
    inner = goal_from_term(args[0])
    try:
        solved = False
        for s2 in solve([inner], subst, ctx):
            solved = True
            break
    except Exception:
        kb.rollback(txn)
        raise
    if not solved:
        kb.rollback(txn)
        _refresh(ctx)
        return
    receipt = kb.commit(txn)
    _refresh(ctx)
    if receipt.applied:
        yield s2


@register_builtin("sysTime", 1)
def _bi_systime(ctx, args, subst):
    s2 = unify(args[0], integer(ctx.now()), subst)
    if s2 is not None:
        yield s2


@register_builtin("interval", 2)
def _bi_interval(ctx, args, subst):
    """Periodic schedule check: interval(timespan(D,H,M,S), Now) succeeds when
    a full span has passed since this rule's schedule last fired, and records
    the firing."""
    from .temporal import Timespan, periodic_due

    span_term, now_term = args
    ind = functor_of(span_term)
    if ind != ("timespan", 4):
        return
    parts = [_numeric(a) for a in span_term.args]
    if any(p is None for p in parts):
        return
    span = Timespan(days=int(parts[0]), hours=int(parts[1]), minutes=int(parts[2]), seconds=int(parts[3]))
    now = _time_value(now_term) if isinstance(now_term, DataLiteral) else ctx.now()
    key = (ctx.rule_key, span.total_millis())
    last = ctx.schedules.get(key)
    if periodic_due(span, last, now):
        ctx.schedules[key] = now
        yield subst
