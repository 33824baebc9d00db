"""Unification, substitution application, and renaming."""

import random

import pytest
from hypothesis import given, strategies as st

from ecaengine.terms import (
    Substitution,
    apply,
    atom,
    compound,
    integer,
    is_ground,
    rename_apart,
    unify,
    var,
    variables_of,
)


def test_unify_single_binding():
    s = unify(compound("p", var("X"), integer(1)), compound("p", atom("a"), integer(1)))
    assert s is not None
    assert apply(s, var("X")) == atom("a")


def test_unify_functor_clash():
    assert unify(compound("p", var("X")), compound("q", var("X"))) is None


def test_unify_shared_variable_conflict():
    assert unify(compound("p", var("X"), var("X")), compound("p", atom("a"), atom("b"))) is None


def test_unify_arity_mismatch():
    assert unify(compound("p", atom("a")), compound("p", atom("a"), atom("b"))) is None


def test_occurs_check():
    assert unify(var("X"), compound("f", var("X"))) is None


def test_apply_identity():
    t = compound("p", atom("a"), var("Y"))
    assert apply(Substitution(), t) == t


def test_apply_partial():
    s = unify(var("X"), atom("a"))
    assert apply(s, compound("p", var("X"), var("Y"))) == compound("p", atom("a"), var("Y"))


def test_apply_resolves_chains():
    s = Substitution().bind("Y", atom("b")).bind("X", compound("f", var("Y")))
    assert apply(s, compound("p", var("X"))) == compound("p", compound("f", atom("b")))


def test_substitution_idempotent():
    s = Substitution().bind("X", compound("f", var("Y"))).bind("Y", atom("b"))
    t = compound("p", var("X"), var("Y"))
    assert apply(s, apply(s, t)) == apply(s, t)


def test_rename_apart():
    assert rename_apart(compound("p", var("X")), "_1") == compound("p", var("X_1"))
    assert rename_apart(compound("p", atom("a")), "_1") == compound("p", atom("a"))
    renamed = rename_apart(compound("p", var("X"), compound("f", var("X"))), "_2")
    assert renamed == compound("p", var("X_2"), compound("f", var("X_2")))


# -- randomized comparison against a naive textbook unifier --------------------


def naive_unify(a, b, bindings):
    """Independent reference: substitution as a plain dict, walk-based."""
    from ecaengine.terms import Compound, Constant, DataLiteral, ListTerm, Variable

    def walk(t):
        while isinstance(t, Variable) and t.name in bindings:
            t = bindings[t.name]
        return t

    def occurs(name, t):
        t = walk(t)
        if isinstance(t, Variable):
            return t.name == name
        if isinstance(t, Compound):
            return any(occurs(name, x) for x in t.args)
        if isinstance(t, ListTerm):
            return any(occurs(name, x) for x in t.items)
        return False

    a, b = walk(a), walk(b)
    if isinstance(a, Variable) and isinstance(b, Variable) and a.name == b.name:
        return True
    if isinstance(a, Variable):
        if occurs(a.name, b):
            return False
        bindings[a.name] = b
        return True
    if isinstance(b, Variable):
        return naive_unify(b, a, bindings)
    if isinstance(a, Constant) and isinstance(b, Constant):
        return a.name == b.name
    if isinstance(a, DataLiteral) and isinstance(b, DataLiteral):
        return a.kind == b.kind and a.value == b.value
    if isinstance(a, Compound) and isinstance(b, Compound):
        if a.functor != b.functor or len(a.args) != len(b.args):
            return False
        return all(naive_unify(x, y, bindings) for x, y in zip(a.args, b.args))
    if isinstance(a, ListTerm) and isinstance(b, ListTerm):
        if len(a.items) != len(b.items):
            return False
        return all(naive_unify(x, y, bindings) for x, y in zip(a.items, b.items))
    return False


def random_term(rng, depth=0):
    choice = rng.random()
    if depth >= 3 or choice < 0.25:
        return atom(rng.choice("abc"))
    if choice < 0.45:
        return var(rng.choice("XYZ"))
    if choice < 0.55:
        return integer(rng.randrange(3))
    functor = rng.choice("fgp")
    arity = rng.randrange(1, 3)
    return compound(functor, *(random_term(rng, depth + 1) for _ in range(arity)))


def test_against_naive_unifier():
    rng = random.Random(7)
    agree = 0
    for _ in range(2000):
        a, b = random_term(rng), random_term(rng)
        mine = unify(a, b)
        theirs = naive_unify(a, b, {})
        assert (mine is not None) == theirs, f"{a} vs {b}"
        if mine is not None:
            assert apply(mine, a) == apply(mine, b)
            agree += 1
    assert agree > 100  # the generator must actually produce unifiable pairs


terms_strategy = st.deferred(
    lambda: st.one_of(
        st.sampled_from([atom("a"), atom("b"), atom("c"), integer(0), integer(1)]),
        st.sampled_from([var("X"), var("Y"), var("Z")]),
        st.builds(lambda f, args: compound(f, *args), st.sampled_from(["f", "g"]),
                  st.lists(terms_strategy, min_size=1, max_size=2)),
    )
)


@given(terms_strategy, terms_strategy)
def test_unify_symmetric(a, b):
    assert (unify(a, b) is not None) == (unify(b, a) is not None)


@given(terms_strategy, terms_strategy)
def test_unifier_equates_both_sides(a, b):
    s = unify(a, b)
    if s is not None:
        assert apply(s, a) == apply(s, b)


@given(terms_strategy)
def test_rename_apart_preserves_unifiability_with_ground(t):
    ground = compound("f", atom("a"), atom("b"))
    renamed = rename_apart(t, "_r")
    assert (unify(t, ground) is not None) == (unify(renamed, ground) is not None)
    assert variables_of(renamed) == {v + "_r" for v in variables_of(t)}
