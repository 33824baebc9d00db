"""Clause-text and trace parsing plus the canonical term formatter.

Clause grammar: `fact.` or `head :- goal {, goal}.`  `not(...)` is negation
as failure, `neg(...)` strong negation.  ISO 8601 datetime tokens are
converted to epoch-millisecond integers on ingest; `<n><unit>` shorthands
(e.g. `10s`) become timespan terms.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterator, Optional

from .kb import Clause, Goal, goal_from_term, term_of_goal
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
from .temporal import parse_datetime, parse_timespan


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        super().__init__(where + message)
        self.line = line
        self.source = source


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<datetime>\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:\d{2})?)
  | (?P<timespan>\d+:\d+:\d+:\d+|\d+(?:d|h|m|s)\b)
  | (?P<float>-?\d+\.\d+)
  | (?P<int>-?\d+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<implies>:-)
  | (?P<punct>[()\[\],.!])
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<ident>[a-z][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    line: int


def _tokenize(text: str, source: Optional[str] = None) -> list:
    tokens = []
    pos = 0
    line = 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line=line, source=source)
        kind = m.lastgroup
        value = m.group()
        line += value.count("\n")
        pos = m.end()
        if kind in ("ws", "comment"):
            continue
        tokens.append(_Token(kind=kind, text=value, line=line))
    return tokens


class _Parser:
    def __init__(self, tokens: list, source: Optional[str] = None):
        self.tokens = tokens
        self.pos = 0
        self.source = source
        self._anon = itertools.count(1)

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input", source=self.source)
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", line=tok.line, source=self.source)
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    # -- terms -------------------------------------------------------------

    def term(self) -> Term:
        tok = self.next()
        if tok.kind == "int":
            return integer(int(tok.text))
        if tok.kind == "float":
            return floating(float(tok.text))
        if tok.kind == "string":
            raw = tok.text[1:-1]
            return string(raw.replace('\\"', '"').replace("\\\\", "\\"))
        if tok.kind == "datetime":
            return integer(parse_datetime(tok.text))
        if tok.kind == "timespan":
            span = parse_timespan(tok.text)
            return compound(
                "timespan",
                integer(span.days),
                integer(span.hours),
                integer(span.minutes),
                integer(span.seconds),
            )
        if tok.kind == "var":
            if tok.text == "_":
                return Variable(name=f"_anon{next(self._anon)}")
            return Variable(name=tok.text)
        if tok.text == "[":
            items = []
            if not self.at("]"):
                items.append(self.term())
                while self.at(","):
                    self.next()
                    items.append(self.term())
            self.expect("]")
            return ListTerm(items=tuple(items))
        if tok.text == "!":
            return Constant(name="!")
        if tok.kind == "ident":
            if self.at("("):
                self.next()
                args = []
                if not self.at(")"):
                    args.append(self.term())
                    while self.at(","):
                        self.next()
                        args.append(self.term())
                self.expect(")")
                return Compound(functor=tok.text, args=tuple(args))
            return Constant(name=tok.text)
        raise ParseError(f"unexpected token {tok.text!r}", line=tok.line, source=self.source)

    # -- clauses ------------------------------------------------------------

    def clause(self) -> Clause:
        head = self.term()
        if self.at(":-"):
            self.next()
            body = [goal_from_term(self.term())]
            while self.at(","):
                self.next()
                body.append(goal_from_term(self.term()))
            self.expect(".")
            return Clause(head=head, body=tuple(body))
        self.expect(".")
        return Clause(head=head)

    def program(self) -> list:
        clauses = []
        while self.peek() is not None:
            clauses.append(self.clause())
        return clauses


def parse_term(text: str, source: Optional[str] = None) -> Term:
    parser = _Parser(_tokenize(text, source), source)
    t = parser.term()
    if parser.peek() is not None:
        tok = parser.peek()
        raise ParseError(f"trailing input {tok.text!r}", line=tok.line, source=source)
    return t


def parse_goal(text: str, source: Optional[str] = None) -> Goal:
    return goal_from_term(parse_term(text, source))


def parse_program(text: str, source: Optional[str] = None) -> list:
    return _Parser(_tokenize(text, source), source).program()


# ---------------------------------------------------------------------------
# Formatting


_IDENT_RE = re.compile(r"^[a-z][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*$")


def term_to_text(t: Term) -> str:
    if isinstance(t, Constant):
        return t.name if (_IDENT_RE.match(t.name) or t.name == "!") else f'"{t.name}"'
    if isinstance(t, Variable):
        return "_" if t.name.startswith("_anon") else t.name
    if isinstance(t, DataLiteral):
        if t.kind == "integer":
            return str(t.value)
        if t.kind == "float":
            return repr(t.value)
        if t.kind == "datetime":
            from .temporal import format_datetime, to_millis

            return format_datetime(to_millis(t.value))
        escaped = str(t.value).replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(t, Compound):
        inner = ", ".join(term_to_text(a) for a in t.args)
        return f"{t.functor}({inner})"
    if isinstance(t, ListTerm):
        inner = ", ".join(term_to_text(a) for a in t.items)
        return f"[{inner}]"
    raise TypeError(f"not a term: {t!r}")


def goal_to_text(g: Goal) -> str:
    return term_to_text(term_of_goal(g))


def clause_to_text(c: Clause) -> str:
    if c.is_fact:
        return term_to_text(c.head) + "."
    body = ", ".join(goal_to_text(g) for g in c.body)
    return f"{term_to_text(c.head)} :- {body}."


def program_to_text(clauses) -> str:
    return "\n".join(clause_to_text(c) for c in clauses) + "\n"


# ---------------------------------------------------------------------------
# Trace files: `<ISO8601> <occurs|happens> <term-text>` per line


@dataclass(frozen=True)
class TraceRecord:
    at: int  # epoch millis
    kind: str  # "occurs" | "happens"
    event: Term


def parse_trace(text: str, source: Optional[str] = None) -> list:
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("%"):
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise ParseError("expected `<time> <occurs|happens> <event>`", line=lineno, source=source)
        when, kind, event_text = parts
        if kind not in ("occurs", "happens"):
            raise ParseError(f"unknown record kind {kind!r}", line=lineno, source=source)
        try:
            at = parse_datetime(when)
        except ValueError:
            try:
                at = int(when)
            except ValueError:
                raise ParseError(f"cannot parse timestamp {when!r}", line=lineno, source=source)
        try:
            event = parse_term(event_text, source)
        except ParseError as exc:
            raise ParseError(f"bad event term: {exc}", line=lineno, source=source)
        records.append(TraceRecord(at=at, kind=kind, event=event))
    records.sort(key=lambda r: r.at)
    return records


def format_trace(records) -> str:
    from .temporal import format_datetime

    lines = [f"{format_datetime(r.at)} {r.kind} {term_to_text(r.event)}" for r in records]
    return "\n".join(lines) + "\n"
