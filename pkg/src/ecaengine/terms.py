"""Logical terms, substitutions and untyped unification.

Terms are immutable values: constants, variables, tagged data literals,
compound terms and list terms.  Every other layer (knowledge base, event
calculus, event algebra, rule engine) queries over these.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterator, Optional, Union


MODE_INPUT = "+"
MODE_OUTPUT = "-"
MODE_ANY = "?"

_MODES = (MODE_INPUT, MODE_OUTPUT, MODE_ANY)


@dataclass(frozen=True)
class Term:
    """Base class; use the concrete variants below."""

    type_tag: Optional[str] = field(default=None, kw_only=True)
    mode_tag: str = field(default=MODE_ANY, kw_only=True)

    def __post_init__(self):
        if self.mode_tag not in _MODES:
            raise ValueError(f"invalid mode tag {self.mode_tag!r}")


@dataclass(frozen=True)
class Constant(Term):
    name: str = ""


@dataclass(frozen=True)
class Variable(Term):
    name: str = ""

    @property
    def is_anonymous(self) -> bool:
        return self.name == "_"


@dataclass(frozen=True)
class DataLiteral(Term):
    """Tagged scalar: kind one of integer/float/string/datetime."""

    kind: str = "string"
    value: Union[int, float, str, datetime] = ""

    def __post_init__(self):
        super().__post_init__()
        if self.kind not in ("integer", "float", "string", "datetime"):
            raise ValueError(f"invalid data literal kind {self.kind!r}")


@dataclass(frozen=True)
class Compound(Term):
    functor: str = ""
    args: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)


@dataclass(frozen=True)
class ListTerm(Term):
    items: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "items", tuple(self.items))


def integer(value: int) -> DataLiteral:
    return DataLiteral(kind="integer", value=int(value))


def floating(value: float) -> DataLiteral:
    return DataLiteral(kind="float", value=float(value))


def string(value: str) -> DataLiteral:
    return DataLiteral(kind="string", value=value)


def datetime_literal(value: datetime) -> DataLiteral:
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return DataLiteral(kind="datetime", value=value)


def atom(name: str) -> Constant:
    return Constant(name=name)


def var(name: str) -> Variable:
    return Variable(name=name)


def compound(functor: str, *args: Term) -> Compound:
    return Compound(functor=functor, args=tuple(args))


def listterm(*items: Term) -> ListTerm:
    return ListTerm(items=tuple(items))


def functor_of(t: Term) -> Optional[tuple[str, int]]:
    """(name, arity) indicator for constants and compounds, else None."""
    if isinstance(t, Constant):
        return (t.name, 0)
    if isinstance(t, Compound):
        return (t.functor, t.arity)
    return None


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, Compound):
        for a in t.args:
            yield from subterms(a)
    elif isinstance(t, ListTerm):
        for a in t.items:
            yield from subterms(a)


def variables_of(t: Term) -> set[str]:
    return {s.name for s in subterms(t) if isinstance(s, Variable)}


def is_ground(t: Term) -> bool:
    return not any(isinstance(s, Variable) for s in subterms(t))


def compare_data(a: DataLiteral, b: DataLiteral) -> Optional[int]:
    """Total order on comparable literal pairs: -1, 0, 1; None if incomparable.

    Numeric kinds compare with integer promoted to float; strings compare
    lexicographically; datetimes chronologically.
    """
    numeric = ("integer", "float")
    if a.kind in numeric and b.kind in numeric:
        av, bv = float(a.value), float(b.value)
    elif a.kind == b.kind and a.kind in ("string", "datetime"):
        av, bv = a.value, b.value
    else:
        return None
    return (av > bv) - (av < bv)


class Substitution:
    """Immutable idempotent variable binding map (occurs-check respected)."""

    __slots__ = ("_bindings",)

    def __init__(self, bindings: Optional[dict[str, Term]] = None):
        self._bindings = dict(bindings) if bindings else {}

    def lookup(self, name: str) -> Optional[Term]:
        return self._bindings.get(name)

    def domain(self) -> set[str]:
        return set(self._bindings)

    def items(self):
        return self._bindings.items()

    def __len__(self) -> int:
        return len(self._bindings)

    def __eq__(self, other) -> bool:
        return isinstance(other, Substitution) and self._bindings == other._bindings

    def __repr__(self) -> str:
        inside = ", ".join(f"{k} -> {v!r}" for k, v in sorted(self._bindings.items()))
        return "{" + inside + "}"

    def bind(self, name: str, value: Term) -> "Substitution":
        """Extend with one binding, resolving existing bindings in value and
        re-applying the new binding across the current range (keeps the map
        idempotent)."""
        value = apply(self, value)
        if isinstance(value, Variable) and value.name == name:
            return self
        if name in variables_of(value):
            raise OccursCheckError(name, value)
        single = Substitution({name: value})
        merged = {k: apply(single, v) for k, v in self._bindings.items()}
        merged[name] = value
        return Substitution(merged)


EMPTY_SUBST = Substitution()


class OccursCheckError(ValueError):
    def __init__(self, name: str, value: Term):
        super().__init__(f"variable {name} occurs in {value!r}")


def apply(s: Substitution, t: Term) -> Term:
    """Replace every bound variable in t; the result is free of s's domain."""
    if isinstance(t, Variable):
        bound = s.lookup(t.name)
        if bound is None:
            return t
        return apply(s, bound)
    if isinstance(t, Compound):
        new_args = tuple(apply(s, a) for a in t.args)
        if all(x is y for x, y in zip(new_args, t.args)):
            return t
        return replace(t, args=new_args)
    if isinstance(t, ListTerm):
        new_items = tuple(apply(s, a) for a in t.items)
        if all(x is y for x, y in zip(new_items, t.items)):
            return t
        return replace(t, items=new_items)
    return t


def _shape_equal(a: Term, b: Term) -> bool:
    """Ground structural equality ignoring type/mode annotations."""
    if isinstance(a, Constant) and isinstance(b, Constant):
        return a.name == b.name
    if isinstance(a, DataLiteral) and isinstance(b, DataLiteral):
        return a.kind == b.kind and a.value == b.value
    return False


def unify(a: Term, b: Term, subst: Optional[Substitution] = None) -> Optional[Substitution]:
    """Most general unifier of a and b, or None.

    Untyped: type/mode annotations are carried along but never compared.
    The occurs check is on.
    """
    s = subst if subst is not None else EMPTY_SUBST
    a = apply(s, a)
    b = apply(s, b)
    if isinstance(a, Variable):
        if isinstance(b, Variable) and b.name == a.name:
            return s
        try:
            return s.bind(a.name, b)
        except OccursCheckError:
            return None
    if isinstance(b, Variable):
        try:
            return s.bind(b.name, a)
        except OccursCheckError:
            return None
    if isinstance(a, Compound) and isinstance(b, Compound):
        if a.functor != b.functor or a.arity != b.arity:
            return None
        for x, y in zip(a.args, b.args):
            s = unify(x, y, s)
            if s is None:
                return None
        return s
    if isinstance(a, ListTerm) and isinstance(b, ListTerm):
        if len(a.items) != len(b.items):
            return None
        for x, y in zip(a.items, b.items):
            s = unify(x, y, s)
            if s is None:
                return None
        return s
    if _shape_equal(a, b):
        return s
    return None


def rename_apart(t: Term, suffix: str) -> Term:
    """Append suffix to every variable name; ground subterms are unchanged."""
    if isinstance(t, Variable):
        return replace(t, name=t.name + suffix)
    if isinstance(t, Compound):
        return replace(t, args=tuple(rename_apart(a, suffix) for a in t.args))
    if isinstance(t, ListTerm):
        return replace(t, items=tuple(rename_apart(a, suffix) for a in t.items))
    return t
