"""Highway (``:--``) desugaring by one-level unfolding.

A ``:--`` rule behaves like an ordinary ``:-`` rule and additionally lets
every rule that mentions its head see the head's own body directly.  We
implement that by unfolding: for each original rule and each positive body
element whose functor is highway-defined, one new rule per highway
definition is appended, in which that element is replaced by the
definition's body and every other element is marked ``: 0``.  The trigger
of an update rule is never deleted; it is kept with ``: 0`` and the
unfolded atoms are inserted right after it.

Chains of highways are handled by first closing the set of highway
definitions under unfolding, so ``a :-- b`` and ``b :-- c`` give ``a`` the
highway bodies ``b`` and ``c``.
"""

from __future__ import annotations

from dataclasses import replace

from .errors import CyclicDeduction
from .syntax import DEDUCTIVE, HIGHWAY, Atom, Element, ProgramAST, Rule, Var
from .params import ZERO_NAME

_ZERO = Atom(ZERO_NAME)


def _rule_vars(rule: Rule) -> set[str]:
    return {v.name for v in rule.variables()}


def _rename_apart(rule: Rule, taken: set[str]) -> Rule:
    """Rename the variables of ``rule`` that collide with ``taken``."""
    mapping = {}
    used = set(taken) | _rule_vars(rule)
    for v in sorted(_rule_vars(rule)):
        if v in taken:
            k = 1
            while f"{v}{k}" in used:
                k += 1
            mapping[Var(v)] = Var(f"{v}{k}")
            used.add(f"{v}{k}")
    return _subst_rule(rule, mapping) if mapping else rule


def _subst_atom(a: Atom | None, s: dict) -> Atom | None:
    return None if a is None else a.substitute(s)


def _subst_rule(rule: Rule, s: dict) -> Rule:
    body = tuple(Element(e.atom.substitute(s), e.negated, _subst_atom(e.param, s)) for e in rule.body)
    return replace(
        rule,
        head=rule.head.substitute(s),
        body=body,
        beta_param=_subst_atom(rule.beta_param, s),
        bias_param=_subst_atom(rule.bias_param, s),
        full_param=_subst_atom(rule.full_param, s),
    )


def unify(target: Atom, pattern: Atom, keep: set[str]) -> dict | None:
    """Most general unifier of two flat atoms, or None.

    Variables named in ``keep`` (the host rule's variables) are preferred as
    representatives so that the host rule keeps its variable names.
    """
    if target.functor != pattern.functor or len(target.args) != len(pattern.args):
        return None
    parent: dict = {}

    def find(t):
        while type(t) is Var and t in parent:
            t = parent[t]
        return t

    def rank(t):
        if type(t) is not Var:
            return 0
        return 1 if t.name in keep else 2

    for a, b in zip(target.args, pattern.args):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if type(ra) is not Var and type(rb) is not Var:
            return None
        # attach the weaker representative under the stronger one
        if rank(ra) <= rank(rb):
            parent[rb] = ra
        else:
            parent[ra] = rb
    return {v: find(v) for v in parent}


def _highway_graph_check(highways: list[Rule]):
    heads = {r.head.functor for r in highways}
    graph = {f: set() for f in heads}
    for r in highways:
        for e in r.body:
            if not e.negated and e.atom.functor in heads:
                graph[r.head.functor].add(e.atom.functor)
    state: dict[str, int] = {}
    for root in sorted(graph):
        if root in state:
            continue
        stack = [(root, iter(sorted(graph[root])))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state.get(nxt) == 1:
                cyc = path[path.index(nxt):] + [nxt]
                r = next(h for h in highways if h.head.functor == root)
                raise CyclicDeduction(
                    "highway definitions are cyclic: " + " -> ".join(cyc), r.line, r.col
                )
            elif nxt not in state:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(sorted(graph[nxt]))))


def _unfold_at(rule: Rule, i: int, hwy: Rule) -> Rule | None:
    """Unfold body element ``i`` of ``rule`` against highway rule ``hwy``."""
    keep = _rule_vars(rule)
    hwy = _rename_apart(hwy, keep)
    s = unify(rule.body[i].atom, hwy.head, keep)
    if s is None:
        return None
    inserted = tuple(
        Element(e.atom, e.negated, e.param if e.param == _ZERO else None) for e in hwy.body
    )
    body = []
    for j, e in enumerate(rule.body):
        if j == i:
            if rule.is_update and j == 0:
                body.append(Element(e.atom, False, _ZERO))
            body.extend(inserted)
        else:
            body.append(Element(e.atom, e.negated, None if e.negated else _ZERO))
    kind = DEDUCTIVE if rule.kind == HIGHWAY else rule.kind
    new = Rule(kind, rule.head, tuple(body), rule.head_negated, line=rule.line, col=rule.col)
    return _subst_rule(new, s)


def _close_highways(highways: list[Rule]) -> dict[str, list[Rule]]:
    """Map each highway-defined functor to all its (transitive) highway bodies."""
    _highway_graph_check(highways)
    by_head: dict[str, list[Rule]] = {}
    for r in highways:
        by_head.setdefault(r.head.functor, []).append(r)
    closed: dict[str, list[Rule]] = {}

    def close(f: str) -> list[Rule]:
        if f in closed:
            return closed[f]
        out = []
        for r in by_head[f]:
            out.append(r)
            for i, e in enumerate(r.body):
                if e.negated or e.atom.functor not in by_head:
                    continue
                for h in close(e.atom.functor):
                    u = _unfold_at(r, i, h)
                    if u is not None:
                        out.append(replace(u, kind=HIGHWAY))
        closed[f] = out
        return out

    for f in sorted(by_head):
        close(f)
    return closed


def desugar_highways(ast: ProgramAST) -> ProgramAST:
    """Replace ``:--`` rules by ``:-`` rules plus their unfolded variants."""
    highways = [r for r in ast.rules if r.kind == HIGHWAY]
    if not highways:
        return ast
    closed = _close_highways(highways)
    originals = [replace(r, kind=DEDUCTIVE) if r.kind == HIGHWAY else r for r in ast.rules]
    added = []
    for r in ast.rules:
        for i, e in enumerate(r.body):
            if e.negated or e.atom.functor not in closed:
                continue
            for h in closed[e.atom.functor]:
                u = _unfold_at(r, i, h)
                if u is not None:
                    added.append(u)
    return ProgramAST(tuple(originals + added), ast.declarations)
