"""ECA-RuleML reader, validator and writer.

Maps the XML rule markup subset (reaction rules, event calculus constructs,
event algebra operators, ID-based update primitives, complex terms with
procedural attachments) to the engine's internal types and back.  The
serializer is canonical: two-space indentation, UTF-8, role tags in
grammar order; `parse(serialize(doc))` is structurally equal to `doc`.
"""

from __future__ import annotations

import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional, Union

from .algebra import (
    Any as AnyExpr,
    Aperiodic,
    Atom as AtomExpr,
    And as AndExpr,
    Concurrent,
    EventExpr,
    ExpressionError,
    Neg,
    Or as OrExpr,
    Periodic,
    Sequence as SequenceExpr,
    Xor,
    expr_to_term,
    is_operator_term,
)
from .engine import (
    CUT,
    AssertAction,
    EcaRule,
    GoalAction,
    RetractAction,
    SequenceAction,
)
from .kb import Call, Clause, Goal, Naf, StrongNeg, goal_from_term, term_of_goal
from .temporal import Timespan, parse_datetime, parse_timespan, format_datetime, to_millis
from .terms import (
    Compound,
    Constant,
    DataLiteral,
    ListTerm,
    Term,
    Variable,
    compound,
    integer,
    floating,
    string,
)


class EcarmlError(ValueError):
    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass(frozen=True)
class EcFact:
    """One event calculus layer assertion in term form (happens/2, occurs/2,
    planned/2, initially/1, initiates/3, terminates/3, holdsAt/2, valueAt/3,
    holdsInterval/2, plus generic atoms such as trajectory/5 and
    integrity/1)."""

    term: Term
    oid: Optional[str] = None


@dataclass(frozen=True)
class UpdatePayload:
    kind: str  # "assert" | "retract" | "retract_all"
    update_id: Optional[str]
    clauses: tuple
    transactional: bool = False


@dataclass
class Document:
    eca_rules: list = field(default_factory=list)
    ec_facts: list = field(default_factory=list)
    algebra_defs: dict = field(default_factory=dict)
    updates: list = field(default_factory=list)

    def __eq__(self, other):
        return (
            isinstance(other, Document)
            and self.eca_rules == other.eca_rules
            and self.ec_facts == other.ec_facts
            and self.algebra_defs == other.algebra_defs
            and self.updates == other.updates
        )


FILE_EXTENSION = ".ecarml"

_OPERATOR_TAGS = {
    "Sequence",
    "Or",
    "Xor",
    "And",
    "Concurrent",
    "Not",
    "Any",
    "Aperiodic",
    "Periodic",
}

_EC_FACT_TAGS = {
    "Happens": ("happens", 2),
    "Planned": ("planned", 2),
    "Occurs": ("occurs", 2),
    "Initially": ("initially", 1),
    "Initiates": ("initiates", 3),
    "Terminates": ("terminates", 3),
    "HoldsAt": ("holdsAt", 2),
    "ValueAt": ("valueAt", 3),
    "HoldsInterval": ("holdsInterval", 2),
}

_EC_ROLE_NAMES = {
    "happens": ("event", "time"),
    "planned": ("event", "time"),
    "occurs": ("event", "interval"),
    "initially": ("fluent",),
    "initiates": ("event", "fluent", "time"),
    "terminates": ("event", "fluent", "time"),
    "holdsAt": ("fluent", "time"),
    "valueAt": ("parameter", "time", None),
    "holdsInterval": ("interval", "interval"),
}

_ROLE_TAGS = {
    "oid",
    "time",
    "event",
    "condition",
    "action",
    "postcondition",
    "else",
    "fluent",
    "parameter",
    "interval",
    "side",
    "body",
    "head",
}


def _tag(el: ET.Element) -> str:
    return el.tag.split("}")[-1]


def _local_attrs(el: ET.Element) -> dict:
    return {k.split("}")[-1]: v for k, v in el.attrib.items()}


def _text(el: ET.Element) -> str:
    return (el.text or "").strip()


# ---------------------------------------------------------------------------
# Parsing


class _Reader:
    def __init__(self):
        self.diagnostics: list = []

    def note(self, message: str, location: str) -> None:
        self.diagnostics.append(f"{location}: {message}")

    # -- terms --------------------------------------------------------------

    def term(self, el: ET.Element, loc: str) -> Term:
        tag = _tag(el)
        attrs = _local_attrs(el)
        type_tag = attrs.get("type")
        mode_tag = attrs.get("mode", "?")
        if tag == "Ind":
            return Constant(name=_text(el), type_tag=type_tag, mode_tag=mode_tag)
        if tag == "Var":
            return Variable(name=_text(el) or "_", type_tag=type_tag, mode_tag=mode_tag)
        if tag == "Data":
            return self._data(_text(el), type_tag, mode_tag)
        if tag == "Cterm":
            return self._cterm(el, loc, type_tag, mode_tag)
        if tag == "Plex":
            items = tuple(self.term(c, f"{loc}/Plex") for c in el)
            return ListTerm(items=items, type_tag=type_tag, mode_tag=mode_tag)
        if tag == "Interval":
            kids = list(el)
            if len(kids) != 2:
                self.note("Interval needs exactly two delimiters", loc)
                kids = (kids + [None, None])[:2]
            items = tuple(
                self.term(c, f"{loc}/Interval") if c is not None else Constant(name="_")
                for c in kids
            )
            return ListTerm(items=items)
        if tag == "Atom":
            return self._atom(el, loc)
        if tag in ("Naf", "Neg", "Equal"):
            return self.goal_term(el, loc)
        raise EcarmlError(f"unknown term element <{tag}>", loc)

    def _data(self, text: str, type_tag: Optional[str], mode_tag: str) -> Term:
        kind = None
        if type_tag:
            t = type_tag.split(":")[-1].lower()
            if t in ("int", "integer", "long"):
                kind = "integer"
            elif t in ("double", "float", "decimal"):
                kind = "float"
            elif t == "datetime":
                kind = "datetime"
            elif t == "string":
                kind = "string"
        if kind is None:
            for probe, k in ((int, "integer"), (float, "float")):
                try:
                    probe(text)
                    kind = k
                    break
                except ValueError:
                    continue
        if kind is None:
            try:
                parse_datetime(text)
                kind = "datetime"
            except ValueError:
                kind = "string"
        if kind == "integer":
            return DataLiteral(kind="integer", value=int(text), type_tag=type_tag, mode_tag=mode_tag)
        if kind == "float":
            return DataLiteral(kind="float", value=float(text), type_tag=type_tag, mode_tag=mode_tag)
        if kind == "datetime":
            from datetime import datetime, timezone

            millis = parse_datetime(text)
            value = datetime.fromtimestamp(millis / 1000, tz=timezone.utc)
            return DataLiteral(kind="datetime", value=value, type_tag=type_tag, mode_tag=mode_tag)
        return DataLiteral(kind="string", value=text, type_tag=type_tag, mode_tag=mode_tag)

    def _cterm(self, el: ET.Element, loc: str, type_tag, mode_tag) -> Term:
        kids = list(el)
        if not kids:
            raise EcarmlError("empty Cterm", loc)
        head, rest = kids[0], kids[1:]
        head_tag = _tag(head)
        if head_tag == "Ctor":
            functor = _text(head)
            if not functor:
                self.note("empty Ctor", loc)
                functor = "_missing"
        elif head_tag == "Attachment":
            functor = self._attachment_name(head, f"{loc}/Attachment")
        else:
            raise EcarmlError(f"Cterm must start with Ctor or Attachment, found <{head_tag}>", loc)
        args = tuple(self.term(c, f"{loc}/Cterm") for c in rest)
        if not args and functor != "_missing":
            return (
                Constant(name=functor, type_tag=type_tag, mode_tag=mode_tag)
                if functor == "!"
                else Compound(functor=functor, args=(), type_tag=type_tag, mode_tag=mode_tag)
            )
        return Compound(functor=functor, args=args, type_tag=type_tag, mode_tag=mode_tag)

    def _attachment_name(self, el: ET.Element, loc: str) -> str:
        kids = list(el)
        if len(kids) != 2:
            self.note("Attachment needs a class and a method individual", loc)
        parts = [_text(c) for c in kids[:2]]
        return ".".join(p for p in parts if p) or "_attachment"

    def _atom(self, el: ET.Element, loc: str) -> Term:
        kids = list(el)
        if not kids or _tag(kids[0]) != "Rel":
            raise EcarmlError("Atom needs a leading Rel", loc)
        functor = _text(kids[0])
        args = tuple(self.term(c, f"{loc}/Atom") for c in kids[1:])
        return Compound(functor=functor, args=args) if args else Constant(name=functor)

    def goal_term(self, el: ET.Element, loc: str) -> Term:
        """Naf/Neg/Equal/Atom/Cterm in a goal position, as a term."""
        tag = _tag(el)
        if tag == "Naf":
            inner = self._single_child(el, loc)
            return compound("not", self.goal_term(inner, f"{loc}/Naf"))
        if tag == "Neg":
            inner = self._single_child(el, loc)
            return compound("neg", self.goal_term(inner, f"{loc}/Neg"))
        if tag == "Equal":
            sides = []
            for child in el:
                if _tag(child) == "side":
                    sides.append(self._single_child(child, f"{loc}/Equal/side"))
                else:
                    sides.append(child)
            if len(sides) != 2:
                self.note("Equal needs exactly two sides", loc)
                return compound("equal", Constant(name="_bad"), Constant(name="_bad"))
            return compound(
                "equal",
                self.term(sides[0], f"{loc}/Equal"),
                self.term(sides[1], f"{loc}/Equal"),
            )
        return self.term(el, loc)

    def _single_child(self, el: ET.Element, loc: str) -> ET.Element:
        kids = list(el)
        if len(kids) != 1:
            raise EcarmlError(f"<{_tag(el)}> needs exactly one child", loc)
        return kids[0]

    # -- algebra operators ----------------------------------------------------

    def expr(self, el: ET.Element, loc: str):
        """(oid, EventExpr) for an operator element."""
        tag = _tag(el)
        loc = f"{loc}/{tag}"
        kids = list(el)
        oid = None
        if kids and _tag(kids[0]) == "oid":
            oid = _text(self._single_child(kids[0], loc))
            kids = kids[1:]
        try:
            if tag in ("Sequence", "Or", "Xor", "And", "Concurrent"):
                items = tuple(self._event_item(c, loc) for c in kids)
                cls = {
                    "Sequence": SequenceExpr,
                    "Or": OrExpr,
                    "Xor": Xor,
                    "And": AndExpr,
                    "Concurrent": Concurrent,
                }[tag]
                return (oid, cls(items=items))
            if tag == "Not":
                if len(kids) != 2 or _tag(kids[1]) != "Interval":
                    raise ExpressionError("Not needs one event and one Interval")
                forbidden = self._forbidden(kids[0], loc)
                return (oid, Neg(forbidden=forbidden, window=self._window(kids[1], loc)))
            if tag == "Any":
                if len(kids) != 2:
                    raise ExpressionError("Any needs a count and an event")
                count = self.term(kids[0], loc)
                if not isinstance(count, (DataLiteral, Constant)):
                    raise ExpressionError("Any count must be a literal")
                raw = count.value if isinstance(count, DataLiteral) else count.name
                return (oid, AnyExpr(n=int(raw), item=self._event_item(kids[1], loc)))
            if tag == "Aperiodic":
                if len(kids) != 2 or _tag(kids[1]) != "Interval":
                    raise ExpressionError("Aperiodic needs an event and an Interval")
                return (
                    oid,
                    Aperiodic(item=self._event_item(kids[0], loc), window=self._window(kids[1], loc)),
                )
            if tag == "Periodic":
                if len(kids) != 2 or _tag(kids[1]) != "Interval":
                    raise ExpressionError("Periodic needs a timespan and an Interval")
                return (
                    oid,
                    Periodic(span=self._timespan(kids[0], loc), window=self._window(kids[1], loc)),
                )
        except (ExpressionError, ValueError) as exc:
            raise EcarmlError(str(exc), loc)
        raise EcarmlError(f"unknown operator element <{tag}>", loc)

    def _event_item(self, el: ET.Element, loc: str) -> EventExpr:
        if _tag(el) in _OPERATOR_TAGS:
            return self.expr(el, loc)[1]
        return AtomExpr(event=self.term(el, loc))

    def _forbidden(self, el: ET.Element, loc: str) -> tuple:
        if _tag(el) == "Plex":
            return tuple(self.term(c, loc) for c in el)
        if _tag(el) in _OPERATOR_TAGS:
            return (expr_to_term(self.expr(el, loc)[1]),)
        return (self.term(el, loc),)

    def _window(self, el: ET.Element, loc: str) -> tuple:
        kids = list(el)
        if len(kids) != 2:
            raise EcarmlError("Interval needs exactly two delimiters", f"{loc}/Interval")
        return (self._event_item(kids[0], loc), self._event_item(kids[1], loc))

    def _timespan(self, el: ET.Element, loc: str) -> Timespan:
        t = self.term(el, loc)
        if isinstance(t, Compound) and t.functor == "timespan" and t.arity == 4:
            values = []
            for a in t.args:
                if not isinstance(a, DataLiteral) or a.kind != "integer":
                    raise EcarmlError("timespan components must be integers", loc)
                values.append(int(a.value))
            return Timespan(*values)
        if isinstance(t, Constant):
            return parse_timespan(t.name)
        if isinstance(t, DataLiteral) and t.kind == "string":
            return parse_timespan(t.value)
        raise EcarmlError("cannot read a timespan from this element", loc)

    # -- updates ------------------------------------------------------------------

    def update(self, el: ET.Element, loc: str) -> UpdatePayload:
        tag = _tag(el)
        loc = f"{loc}/{tag}"
        kind = {"Assert": "assert", "Retract": "retract", "RetractAll": "retract_all"}[tag]
        transactional = _local_attrs(el).get("safety") == "transactional"
        kids = list(el)
        update_id = None
        content = kids
        if len(kids) == 1 and _tag(kids[0]) == "And":
            content = list(kids[0])
        if content and _tag(content[0]) == "oid":
            update_id = _text(self._single_child(content[0], loc))
            content = content[1:]
        clauses = tuple(self.clause(c, loc) for c in content)
        if not clauses and update_id is None:
            self.note(f"{tag} without content", loc)
        return UpdatePayload(
            kind=kind, update_id=update_id, clauses=clauses, transactional=transactional
        )

    def clause(self, el: ET.Element, loc: str) -> Clause:
        tag = _tag(el)
        if tag == "Implies":
            kids = list(el)
            body_el, head_el = None, None
            roles = {_tag(c) for c in kids}
            if "head" in roles or "body" in roles:
                for c in kids:
                    if _tag(c) == "body":
                        body_el = self._single_child(c, f"{loc}/Implies/body")
                    elif _tag(c) == "head":
                        head_el = self._single_child(c, f"{loc}/Implies/head")
            elif len(kids) == 2:
                body_el, head_el = kids
            if body_el is None or head_el is None:
                raise EcarmlError("Implies needs a body and a head", loc)
            head = self.goal_term(head_el, f"{loc}/Implies")
            body = self._body_goals(body_el, f"{loc}/Implies")
            return Clause(head=head, body=tuple(body))
        head = self.goal_term(el, loc)
        return Clause(head=head)

    def _body_goals(self, el: ET.Element, loc: str) -> list:
        if _tag(el) == "And":
            out = []
            for c in el:
                out.extend(self._body_goals(c, loc))
            return out
        return [goal_from_term(self.goal_term(el, loc))]

    # -- ECA rules -------------------------------------------------------------------

    def eca(self, el: ET.Element, loc: str) -> EcaRule:
        loc = f"{loc}/ECA"
        oid = None
        parts: dict = {}
        for child in el:
            tag = _tag(child)
            if tag == "oid":
                oid = _text(self._single_child(child, loc))
                continue
            if tag not in ("time", "event", "condition", "action", "postcondition", "else"):
                raise EcarmlError(f"unknown ECA part <{tag}>", loc)
            if tag in parts:
                self.note(f"duplicate <{tag}> part", loc)
                continue
            parts[tag] = self._single_child(child, f"{loc}/{tag}")
        if "action" not in parts:
            self.note("ECA rule without an action part", loc)
        time_goal = (
            goal_from_term(self.goal_term(parts["time"], f"{loc}/time")) if "time" in parts else None
        )
        event_part = None
        if "event" in parts:
            ev = parts["event"]
            if _tag(ev) in _OPERATOR_TAGS:
                event_part = self.expr(ev, f"{loc}/event")[1]
            else:
                event_part = goal_from_term(self.goal_term(ev, f"{loc}/event"))
        condition = (
            goal_from_term(self.goal_term(parts["condition"], f"{loc}/condition"))
            if "condition" in parts
            else None
        )
        action = self._action(parts["action"], f"{loc}/action") if "action" in parts else None
        post = None
        if "postcondition" in parts:
            term = self.goal_term(parts["postcondition"], f"{loc}/postcondition")
            if isinstance(term, Constant) and term.name == "!":
                post = CUT
            else:
                post = goal_from_term(term)
        else_action = self._action(parts["else"], f"{loc}/else") if "else" in parts else None
        return EcaRule(
            oid=oid,
            time=time_goal,
            event=event_part,
            condition=condition,
            action=action,
            postcondition=post,
            else_action=else_action,
        )

    def _action(self, el: ET.Element, loc: str):
        tag = _tag(el)
        if tag in ("Assert", "Retract", "RetractAll"):
            payload = self.update(el, loc)
            return action_from_payload(payload)
        return GoalAction(goal=goal_from_term(self.goal_term(el, loc)))

    # -- documents -----------------------------------------------------------------------

    def document(self, root: ET.Element) -> Document:
        if _tag(root) not in ("RuleML", "ECARuleML"):
            raise EcarmlError(f"unexpected root element <{_tag(root)}>", "/")
        doc = Document()
        for i, child in enumerate(root):
            tag = _tag(child)
            loc = f"/{_tag(root)}/{tag}[{i + 1}]"
            if tag == "ECA":
                doc.eca_rules.append(self.eca(child, loc))
            elif tag in _EC_FACT_TAGS:
                doc.ec_facts.append(self.ec_fact(child, loc))
            elif tag == "Atom":
                doc.ec_facts.append(EcFact(term=self._atom(child, loc)))
            elif tag in _OPERATOR_TAGS:
                oid, expr = self.expr(child, loc)
                if oid is None:
                    self.note("top-level operator definitions need an oid", loc)
                    oid = f"_expr{len(doc.algebra_defs) + 1}"
                doc.algebra_defs[oid] = expr
            elif tag in ("Assert", "Retract", "RetractAll"):
                doc.updates.append(self.update(child, loc))
            else:
                raise EcarmlError(f"unknown element <{tag}>", loc)
        return doc

    def ec_fact(self, el: ET.Element, loc: str) -> EcFact:
        tag = _tag(el)
        functor, arity = _EC_FACT_TAGS[tag]
        kids = list(el)
        oid = None
        if kids and _tag(kids[0]) == "oid":
            oid = _text(self._single_child(kids[0], loc))
            kids = kids[1:]
        args = []
        for child in kids:
            if _tag(child) in _ROLE_TAGS:
                child = self._single_child(child, f"{loc}/{_tag(child)}")
            if _tag(child) in _OPERATOR_TAGS:
                args.append(expr_to_term(self.expr(child, loc)[1]))
            else:
                args.append(self.goal_term(child, loc))
        if len(args) != arity:
            self.note(f"{tag} needs {arity} parts, found {len(args)}", loc)
            while len(args) < arity:
                args.append(Constant(name="_missing"))
            args = args[:arity]
        return EcFact(term=compound(functor, *args), oid=oid)


def action_from_payload(payload: UpdatePayload):
    if payload.kind == "assert":
        return AssertAction(
            update_id=payload.update_id or "update",
            clauses=payload.clauses,
            transactional=payload.transactional,
        )
    return RetractAction(
        update_id=payload.update_id,
        clauses=payload.clauses,
        remove_all=payload.kind == "retract_all",
        transactional=payload.transactional,
    )


def payload_from_action(action) -> Optional[UpdatePayload]:
    if isinstance(action, AssertAction):
        return UpdatePayload(
            kind="assert",
            update_id=action.update_id,
            clauses=action.clauses,
            transactional=action.transactional,
        )
    if isinstance(action, RetractAction):
        return UpdatePayload(
            kind="retract_all" if action.remove_all else "retract",
            update_id=action.update_id,
            clauses=action.clauses,
            transactional=action.transactional,
        )
    return None


def parse(data: Union[bytes, str], strict: bool = True) -> Document:
    """Read a document; raises on malformed XML, unknown elements, and (in
    strict mode) grammar violations."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise EcarmlError(f"malformed XML: {exc}")
    reader = _Reader()
    doc = reader.document(root)
    if strict and reader.diagnostics:
        raise EcarmlError("; ".join(reader.diagnostics))
    return doc


def validate(source: Union[bytes, str, Document]) -> list:
    """Grammar diagnostics.  Accepts raw XML (full structural checks) or an
    already parsed Document (document-level checks only)."""
    if isinstance(source, Document):
        out = []
        for i, rule in enumerate(source.eca_rules, start=1):
            if rule.action is None:
                out.append(f"ECA rule {rule.oid or i}: missing action part")
        return out
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        root = ET.fromstring(source)
    except ET.ParseError as exc:
        return [f"malformed XML: {exc}"]
    reader = _Reader()
    try:
        doc = reader.document(root)
    except EcarmlError as exc:
        return reader.diagnostics + [str(exc)]
    return reader.diagnostics + validate(doc)


# ---------------------------------------------------------------------------
# Serialization


class _Writer:
    def __init__(self):
        self.lines: list = []
        self.depth = 0

    def open(self, tag: str, attrs: dict = None):
        self.lines.append("  " * self.depth + f"<{tag}{_fmt_attrs(attrs)}>")
        self.depth += 1

    def close(self, tag: str):
        self.depth -= 1
        self.lines.append("  " * self.depth + f"</{tag}>")

    def leaf(self, tag: str, text: str, attrs: dict = None):
        self.lines.append("  " * self.depth + f"<{tag}{_fmt_attrs(attrs)}>{_escape(text)}</{tag}>")

    def result(self) -> str:
        return "\n".join(self.lines) + "\n"


def _fmt_attrs(attrs: Optional[dict]) -> str:
    if not attrs:
        return ""
    return "".join(f' {k}="{_escape(v)}"' for k, v in attrs.items() if v is not None)


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _term_attrs(t: Term) -> dict:
    attrs = {}
    if t.type_tag:
        attrs["type"] = t.type_tag
    if t.mode_tag != "?":
        attrs["mode"] = t.mode_tag
    return attrs


_DATA_TYPES = {
    "integer": "xs:integer",
    "float": "xs:double",
    "string": "xs:string",
    "datetime": "xs:dateTime",
}


def _sniffs_differently(text: str) -> bool:
    """Whether untyped re-parsing of this text would not yield a string."""
    for probe in (int, float, parse_datetime):
        try:
            probe(text)
            return True
        except ValueError:
            continue
    return False


def _write_term(w: _Writer, t: Term, interval_hint: bool = False):
    if isinstance(t, Constant):
        w.leaf("Ind", t.name, _term_attrs(t))
        return
    if isinstance(t, Variable):
        w.leaf("Var", t.name, _term_attrs(t))
        return
    if isinstance(t, DataLiteral):
        # untyped literals re-sniff their kind from the text on reparse, so
        # a type attribute is emitted only when one was carried in
        attrs = _term_attrs(t)
        if t.kind == "datetime":
            text = format_datetime(to_millis(t.value))
        elif t.kind == "string" and _sniffs_differently(str(t.value)) and "type" not in attrs:
            attrs["type"] = _DATA_TYPES["string"]
            text = str(t.value)
        else:
            text = str(t.value)
        w.leaf("Data", text, attrs)
        return
    if isinstance(t, ListTerm):
        tag = "Interval" if interval_hint and len(t.items) == 2 else "Plex"
        w.open(tag, _term_attrs(t))
        for item in t.items:
            _write_term(w, item)
        w.close(tag)
        return
    if isinstance(t, Compound):
        _write_goal_term(w, t)
        return
    raise EcarmlError(f"cannot serialize term {t!r}")


def _write_goal_term(w: _Writer, t: Term):
    """Compound terms in goal-ish positions: not/neg/equal get their own
    elements, dotted functors become attachments, the rest are Cterms."""
    if isinstance(t, Compound) and t.functor == "not" and t.arity == 1:
        w.open("Naf")
        _write_goal_term_or_term(w, t.args[0])
        w.close("Naf")
        return
    if isinstance(t, Compound) and t.functor == "neg" and t.arity == 1:
        w.open("Neg")
        _write_goal_term_or_term(w, t.args[0])
        w.close("Neg")
        return
    if isinstance(t, Compound) and t.functor == "equal" and t.arity == 2:
        w.open("Equal")
        for side in t.args:
            w.open("side")
            _write_goal_term_or_term(w, side)
            w.close("side")
        w.close("Equal")
        return
    if isinstance(t, Compound):
        w.open("Cterm", _term_attrs(t))
        if "." in t.functor:
            cls, _, method = t.functor.rpartition(".")
            w.open("Attachment")
            w.leaf("Ind", cls)
            w.leaf("Ind", method)
            w.close("Attachment")
        else:
            w.leaf("Ctor", t.functor)
        for a in t.args:
            _write_term(w, a)
        w.close("Cterm")
        return
    _write_term(w, t)


def _write_goal_term_or_term(w: _Writer, t: Term):
    if isinstance(t, Compound):
        _write_goal_term(w, t)
    else:
        _write_term(w, t)


def _write_goal(w: _Writer, g: Goal):
    _write_goal_term_or_term(w, term_of_goal(g))


def _write_expr(w: _Writer, e: EventExpr, oid: Optional[str] = None):
    def write_oid():
        if oid is not None:
            w.open("oid")
            w.leaf("Ind", oid)
            w.close("oid")

    if isinstance(e, AtomExpr):
        _write_term(w, e.event)
        return
    if isinstance(e, (SequenceExpr, OrExpr, Xor, AndExpr, Concurrent)):
        tag = {
            SequenceExpr: "Sequence",
            OrExpr: "Or",
            Xor: "Xor",
            AndExpr: "And",
            Concurrent: "Concurrent",
        }[type(e)]
        w.open(tag)
        write_oid()
        for item in e.items:
            _write_expr(w, item)
        w.close(tag)
        return
    if isinstance(e, Neg):
        w.open("Not")
        write_oid()
        if len(e.forbidden) == 1:
            _write_term(w, e.forbidden[0])
        else:
            w.open("Plex")
            for f in e.forbidden:
                _write_term(w, f)
            w.close("Plex")
        _write_window(w, e.window)
        w.close("Not")
        return
    if isinstance(e, AnyExpr):
        w.open("Any")
        write_oid()
        w.leaf("Data", str(e.n), {"type": "xs:integer"})
        _write_expr(w, e.item)
        w.close("Any")
        return
    if isinstance(e, Aperiodic):
        w.open("Aperiodic")
        write_oid()
        _write_expr(w, e.item)
        _write_window(w, e.window)
        w.close("Aperiodic")
        return
    if isinstance(e, Periodic):
        w.open("Periodic")
        write_oid()
        w.open("Cterm")
        w.leaf("Ctor", "timespan")
        for v in (e.span.days, e.span.hours, e.span.minutes, e.span.seconds):
            w.leaf("Data", str(v), {"type": "xs:integer"})
        w.close("Cterm")
        _write_window(w, e.window)
        w.close("Periodic")
        return
    raise EcarmlError(f"cannot serialize expression {e!r}")


def _write_window(w: _Writer, window: tuple):
    w.open("Interval")
    _write_expr(w, window[0])
    _write_expr(w, window[1])
    w.close("Interval")


def _write_clause(w: _Writer, c: Clause):
    if c.is_fact:
        _write_fact_atom(w, c.head)
        return
    w.open("Implies")
    if len(c.body) == 1:
        _write_goal(w, c.body[0])
    else:
        w.open("And")
        for g in c.body:
            _write_goal(w, g)
        w.close("And")
    _write_fact_atom(w, c.head)
    w.close("Implies")


def _write_fact_atom(w: _Writer, head: Term):
    if isinstance(head, Constant):
        w.open("Atom")
        w.leaf("Rel", head.name)
        w.close("Atom")
        return
    if isinstance(head, Compound):
        w.open("Atom")
        w.leaf("Rel", head.functor)
        for a in head.args:
            _write_term(w, a)
        w.close("Atom")
        return
    raise EcarmlError(f"cannot serialize clause head {head!r}")


def _write_update(w: _Writer, u: UpdatePayload):
    tag = {"assert": "Assert", "retract": "Retract", "retract_all": "RetractAll"}[u.kind]
    attrs = {"safety": "transactional"} if u.transactional else None
    w.open(tag, attrs)
    w.open("And")
    if u.update_id is not None:
        w.open("oid")
        w.leaf("Ind", u.update_id)
        w.close("oid")
    for c in u.clauses:
        _write_clause(w, c)
    w.close("And")
    w.close(tag)


_EC_ELEMENT_BY_FUNCTOR = {
    ("happens", 2): "Happens",
    ("planned", 2): "Planned",
    ("occurs", 2): "Occurs",
    ("initially", 1): "Initially",
    ("initiates", 3): "Initiates",
    ("terminates", 3): "Terminates",
    ("holdsAt", 2): "HoldsAt",
    ("valueAt", 3): "ValueAt",
    ("holdsInterval", 2): "HoldsInterval",
}


def _write_ec_fact(w: _Writer, fact: EcFact):
    t = fact.term
    ind = (t.functor, t.arity) if isinstance(t, Compound) else None
    element = _EC_ELEMENT_BY_FUNCTOR.get(ind)
    if element is None:
        _write_fact_atom(w, t)
        return
    w.open(element)
    if fact.oid is not None:
        w.open("oid")
        w.leaf("Ind", fact.oid)
        w.close("oid")
    roles = _EC_ROLE_NAMES[t.functor]
    for role, arg in zip(roles, t.args):
        interval_hint = role == "interval"
        if role is None:
            _write_term(w, arg, interval_hint=interval_hint)
            continue
        w.open(role)
        if is_operator_term(arg) and t.functor == "holdsInterval":
            from .algebra import expr_from_term

            _write_expr(w, expr_from_term(arg))
        else:
            _write_term(w, arg, interval_hint=interval_hint)
        w.close(role)
    w.close(element)


def _write_eca(w: _Writer, rule: EcaRule):
    w.open("ECA")
    if rule.oid is not None:
        w.open("oid")
        w.leaf("Ind", rule.oid)
        w.close("oid")
    if rule.time is not None:
        w.open("time")
        _write_goal(w, rule.time)
        w.close("time")
    if rule.event is not None:
        w.open("event")
        if isinstance(rule.event, EventExpr):
            _write_expr(w, rule.event)
        else:
            _write_goal(w, rule.event)
        w.close("event")
    if rule.condition is not None:
        w.open("condition")
        _write_goal(w, rule.condition)
        w.close("condition")
    if rule.action is not None:
        w.open("action")
        _write_action(w, rule.action)
        w.close("action")
    if rule.postcondition is not None:
        w.open("postcondition")
        if rule.postcondition is CUT:
            w.open("Cterm")
            w.leaf("Ctor", "!")
            w.close("Cterm")
        else:
            _write_goal(w, rule.postcondition)
        w.close("postcondition")
    if rule.else_action is not None:
        w.open("else")
        _write_action(w, rule.else_action)
        w.close("else")
    w.close("ECA")


def _write_action(w: _Writer, action):
    payload = payload_from_action(action)
    if payload is not None:
        _write_update(w, payload)
        return
    if isinstance(action, GoalAction):
        _write_goal(w, action.goal)
        return
    if isinstance(action, SequenceAction):
        w.open("Cterm")
        w.leaf("Ctor", "sequence")
        for item in action.items:
            inner = payload_from_action(item)
            if inner is not None:
                raise EcarmlError("update actions inside action sequences are not serializable")
            _write_goal(w, item.goal)
        w.close("Cterm")
        return
    raise EcarmlError(f"cannot serialize action {action!r}")


def serialize(doc: Document) -> bytes:
    """Canonical UTF-8 document: rules, then event calculus facts, named
    operator definitions, and updates."""
    w = _Writer()
    w.lines.append('<?xml version="1.0" encoding="UTF-8"?>')
    w.open("RuleML")
    for rule in doc.eca_rules:
        _write_eca(w, rule)
    for fact in doc.ec_facts:
        _write_ec_fact(w, fact)
    for name, expr in doc.algebra_defs.items():
        _write_expr(w, expr, oid=name)
    for update in doc.updates:
        _write_update(w, update)
    w.close("RuleML")
    return w.result().encode("utf-8")


# ---------------------------------------------------------------------------
# Clause text <-> document conversion (for the convert command)


def document_from_clauses(clauses) -> Document:
    """Bucket clause-text content: eca facts become rules, detect/2 rules
    over event/2 become named operator definitions, plain facts become event
    calculus layer assertions, everything else one assert update."""
    from .engine import rule_from_fact

    doc = Document()
    rule_clauses = []
    for c in clauses:
        head = c.head
        if c.is_fact and isinstance(head, Compound) and head.functor == "eca" and 1 <= head.arity <= 6:
            doc.eca_rules.append(rule_from_fact(head))
            continue
        named = _named_detect_def(c)
        if named is not None:
            doc.algebra_defs[named[0]] = named[1]
            continue
        if c.is_fact:
            doc.ec_facts.append(EcFact(term=head))
            continue
        rule_clauses.append(c)
    if rule_clauses:
        doc.updates.append(
            UpdatePayload(kind="assert", update_id="rules", clauses=tuple(rule_clauses))
        )
    return doc


def _named_detect_def(c: Clause):
    from .algebra import expr_from_term

    if c.is_fact or len(c.body) != 1:
        return None
    head = c.head
    if not (isinstance(head, Compound) and head.functor == "detect" and head.arity == 2):
        return None
    name, tvar = head.args
    if not isinstance(name, Constant) or not isinstance(tvar, Variable):
        return None
    goal = c.body[0]
    if not isinstance(goal, Call):
        return None
    term = goal.term
    if not (isinstance(term, Compound) and term.functor == "event" and term.arity == 2):
        return None
    expr_term, out = term.args
    if not isinstance(out, Variable) or out.name != tvar.name:
        return None
    if not is_operator_term(expr_term):
        return None
    try:
        return (name.name, expr_from_term(expr_term))
    except ExpressionError:
        return None


def document_to_clauses(doc: Document) -> list:
    """Flatten a document back to clause-text clauses; update keys other than
    the default bucket are not representable in clause text."""
    from .engine import AssertAction, GoalAction, HostAction, RetractAction, SequenceAction

    out = []
    for rule in doc.eca_rules:
        out.append(Clause(head=_eca_fact_term(rule)))
    for fact in doc.ec_facts:
        out.append(Clause(head=fact.term))
    for name, expr in doc.algebra_defs.items():
        head = compound("detect", Constant(name=name), Variable(name="T"))
        body = (Call(compound("event", expr_to_term(expr), Variable(name="T"))),)
        out.append(Clause(head=head, body=body))
    for update in doc.updates:
        if update.kind != "assert":
            raise EcarmlError("retract updates have no clause-text form")
        out.extend(update.clauses)
    return out


def _blank() -> Variable:
    return Variable(name="_")


def _eca_fact_term(rule: EcaRule) -> Term:
    from .engine import GoalAction, SequenceAction

    def action_term(action) -> Term:
        if isinstance(action, GoalAction):
            return term_of_goal(action.goal)
        if isinstance(action, SequenceAction):
            inner = [action_term(a) for a in action.items]
            term = compound("sequence", *inner) if len(inner) > 1 else inner[0]
            return compound("transaction", term) if action.transactional else term
        payload = payload_from_action(action)
        if payload is None:
            raise EcarmlError(f"action {action!r} has no clause-text form")
        from .syntax import program_to_text

        text = program_to_text(payload.clauses).strip()
        term = compound(
            "add" if payload.kind == "assert" else "remove",
            Constant(name=payload.update_id or "update"),
            string(text),
        )
        return compound("transaction", term) if payload.transactional else term

    parts = [
        term_of_goal(rule.time) if rule.time is not None else _blank(),
        _event_term(rule) if rule.event is not None else _blank(),
        term_of_goal(rule.condition) if rule.condition is not None else _blank(),
        action_term(rule.action) if rule.action is not None else _blank(),
        _post_term(rule) if rule.postcondition is not None else _blank(),
        action_term(rule.else_action) if rule.else_action is not None else _blank(),
    ]
    return compound("eca", *parts)


def _event_term(rule: EcaRule) -> Term:
    if isinstance(rule.event, EventExpr):
        return expr_to_term(rule.event)
    return term_of_goal(rule.event)


def _post_term(rule: EcaRule) -> Term:
    if rule.postcondition is CUT:
        return Constant(name="!")
    return term_of_goal(rule.postcondition)


# ---------------------------------------------------------------------------
# Installing a document into an engine


def install(doc: Document, engine) -> None:
    for rule in doc.eca_rules:
        engine.add_rule(rule)
    facts = [Clause(head=f.term) for f in doc.ec_facts]
    if facts:
        engine.kb.add_update("document", facts)
    for name, expr in doc.algebra_defs.items():
        head = compound("detect", Constant(name=name), Variable(name="T"))
        body = (Call(compound("event", expr_to_term(expr), Variable(name="T"))),)
        engine.kb.add_update(f"detect({name})", [Clause(head=head, body=body)])
    for update in doc.updates:
        if update.kind == "assert":
            engine.kb.add_update(
                update.update_id or "update",
                list(update.clauses),
                transactional=update.transactional,
            )
        elif update.update_id and not update.clauses:
            engine.kb.remove_update(update.update_id, transactional=update.transactional)
        else:
            engine.kb.remove_clauses(
                [c.head for c in update.clauses],
                update_id=update.update_id,
                all_matches=update.kind == "retract_all",
            )
