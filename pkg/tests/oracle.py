"""Brute-force reference enumerator for the event algebra.

Implements each operator's interval formula directly over plain
(symbol, time) tuples with nested loops: enumerate all occurrence tuples,
check the interval-order conditions, and check terminator occurrences
strictly inside the gaps.  Deliberately independent of the package
internals so it can act as an oracle.

Expression notation (plain tuples):
    ('atom', 'a')
    ('seq', item, item, ...)
    ('or', ...), ('xor', ...), ('and', ...), ('conc', ...)
    ('neg', ['b', ...], (open_item, close_item))
    ('any', n, item)
    ('ap', item, (open_item, close_item))
"""

import itertools


def atoms_of(expr):
    kind = expr[0]
    if kind == "atom":
        return [expr[1]]
    if kind in ("seq", "or", "xor", "and", "conc"):
        out = []
        for item in expr[1:]:
            out.extend(atoms_of(item))
        return out
    if kind == "neg":
        return list(expr[1]) + atoms_of(expr[2][0]) + atoms_of(expr[2][1])
    if kind == "any":
        return atoms_of(expr[2])
    if kind == "ap":
        return atoms_of(expr[1]) + atoms_of(expr[2][0]) + atoms_of(expr[2][1])
    raise ValueError(expr)


def _dedup(symbols):
    seen = []
    for s in symbols:
        if s not in seen:
            seen.append(s)
    return seen


def _gap_broken(eis, t1, t2, terminators):
    return any(s in terminators and t1 < t < t2 for (s, t) in eis)


def instances(expr, eis, strict, alphabet=None):
    """Multiset of (start, end) occurrence intervals of the expression."""
    if alphabet is None:
        alphabet = _dedup(atoms_of(expr))
    kind = expr[0]
    if kind == "atom":
        return [(t, t) for (s, t) in eis if s == expr[1]]
    if kind == "seq":
        items = expr[1:]
        per_item = [instances(item, eis, strict, alphabet) for item in items]
        out = []
        for combo in itertools.product(*per_item):
            ok = True
            for k in range(len(combo) - 1):
                left, right = combo[k], combo[k + 1]
                if not left[1] <= right[0]:
                    ok = False
                    break
                if strict:
                    terminators = set(alphabet)
                else:
                    pair = set(atoms_of(items[k])) | set(atoms_of(items[k + 1]))
                    terminators = set(alphabet) - pair
                if _gap_broken(eis, left[1], right[0], terminators):
                    ok = False
                    break
            if ok:
                out.append((combo[0][0], combo[-1][1]))
        return out
    if kind == "or":
        out = []
        for item in expr[1:]:
            out.extend(instances(item, eis, strict, alphabet))
        return out
    if kind == "xor":
        per_item = [instances(item, eis, strict, alphabet) for item in expr[1:]]
        out = []
        for i, insts in enumerate(per_item):
            if all(not per_item[j] for j in range(len(per_item)) if j != i):
                out.extend(insts)
        return out
    if kind == "and":
        per_item = [instances(item, eis, strict, alphabet) for item in expr[1:]]
        out = []
        for combo in itertools.product(*per_item):
            starts = [iv[0] for iv in combo] + [iv[1] for iv in combo]
            out.append((min(starts), max(starts)))
        return out
    if kind == "conc":
        per_item = [instances(item, eis, strict, alphabet) for item in expr[1:]]
        out = []
        for combo in itertools.product(*per_item):
            if all(iv == combo[0] for iv in combo[1:]):
                out.append(combo[0])
        return out
    if kind == "neg":
        forbidden = set(expr[1])
        return _window_pairs(expr[2], eis, strict, alphabet, forbidden)
    if kind == "any":
        n = expr[1]
        insts = sorted(instances(expr[2], eis, strict, alphabet))
        out = []
        for k in range(n, len(insts) + 1, n):
            chunk = insts[k - n : k]
            out.append((chunk[0][0], chunk[-1][1]))
        return out
    if kind == "ap":
        delimiters = set(atoms_of(expr[2][0])) | set(atoms_of(expr[2][1]))
        windows = _window_pairs(expr[2], eis, strict, alphabet, delimiters)
        items = instances(expr[1], eis, strict, alphabet)
        out = []
        for (w1, w2) in windows:
            for (t1, t2) in items:
                if w1 < t1 and t2 < w2:
                    out.append((t1, t2))
        return out
    raise ValueError(expr)


def _window_pairs(window, eis, strict, alphabet, gap_terminators):
    opens = instances(window[0], eis, strict, alphabet)
    closes = instances(window[1], eis, strict, alphabet)
    out = []
    for o in opens:
        for c in closes:
            if o[1] <= c[0] and not _gap_broken(eis, o[1], c[0], gap_terminators):
                out.append((o[0], c[1]))
    return out


def detect_intervals(expr, eis, strict=True):
    return sorted(instances(expr, eis, strict))
