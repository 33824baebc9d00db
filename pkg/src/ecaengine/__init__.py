"""Embeddable complex event processing over interval-based event semantics.

Layers: logical terms and unification (`terms`), time machinery
(`temporal`), the transactional knowledge base and resolution engine
(`kb`), the event calculus (`event_calculus`), the interval event algebra
(`algebra`), the ECA rule processor (`engine`), ECA-RuleML markup I/O
(`ecarml`), clause-text and trace syntax (`syntax`), benchmark theories
(`bench`), and the CLI (`cli`).
"""

from . import algebra, bench, ecarml, engine, event_calculus, kb, syntax, temporal, terms
from .algebra import (
    Detection,
    EventExpr,
    InterpretationMode,
    NONSTRICT,
    STRICT,
    consume,
    detect,
    parse_expression,
    record_detection,
)
from .engine import CUT, EcaEngine, EcaRule, RuleOutcome, StopCondition
from .event_calculus import EventCalculus
from .kb import Clause, KnowledgeBase, Occurrence
from .syntax import parse_program, parse_term, parse_trace, term_to_text
from .temporal import TimeInterval, Timespan
from .terms import Term, apply, unify

__all__ = [
    "algebra",
    "bench",
    "ecarml",
    "engine",
    "event_calculus",
    "kb",
    "syntax",
    "temporal",
    "terms",
    "Detection",
    "EventExpr",
    "InterpretationMode",
    "NONSTRICT",
    "STRICT",
    "consume",
    "detect",
    "parse_expression",
    "record_detection",
    "CUT",
    "EcaEngine",
    "EcaRule",
    "RuleOutcome",
    "StopCondition",
    "EventCalculus",
    "Clause",
    "KnowledgeBase",
    "Occurrence",
    "parse_program",
    "parse_term",
    "parse_trace",
    "term_to_text",
    "TimeInterval",
    "Timespan",
    "Term",
    "apply",
    "unify",
]

__version__ = "0.1.0"
