"""Brute-force reference evaluator used as an independent oracle for the engine.

Every rule is grounded over the full Herbrand universe (all constants that
appear in the program or the replayed events) and iterated to a fixpoint,
one stratum at a time.  Strata are recomputed here by rank relaxation rather
than taken from the program.  Nothing is shared with the engine except the
parsed rule objects.
"""

from __future__ import annotations

import itertools

from ndtt.syntax import DEDUCTIVE, UPDATE_ADD, UPDATE_REMOVE, Atom, Var


def _ground(a: Atom, env: dict) -> Atom:
    return Atom(a.functor, tuple(env[x.name] if isinstance(x, Var) else x for x in a.args))


def _rule_vars(rule) -> list[str]:
    names = []
    for a in [rule.head] + [e.atom for e in rule.body]:
        for x in a.args:
            if isinstance(x, Var) and x.name not in names:
                names.append(x.name)
    return names


def groundings(rule, constants):
    names = _rule_vars(rule)
    for combo in itertools.product(sorted(constants), repeat=len(names)):
        yield dict(zip(names, combo))


def ranks(rules) -> dict[str, int]:
    rank: dict[str, int] = {}
    for _ in range(len(rules) + 2):
        changed = False
        for r in rules:
            h = r.head.functor
            need = max([rank.get(e.atom.functor, 0) + (1 if e.negated else 0) for e in r.body] + [0])
            if rank.get(h, 0) < need:
                rank[h] = need
                changed = True
        if not changed:
            return rank
    raise ValueError("program is not stratified")


class NaiveDatalog:
    def __init__(self, program, extra_constants=()):
        self.rules = [r for r in program.rules if r.kind == DEDUCTIVE]
        self.updates = [r for r in program.rules if r.kind in (UPDATE_ADD, UPDATE_REMOVE)]
        consts = set(extra_constants)
        for r in program.rules:
            for a in [r.head] + [e.atom for e in r.body]:
                consts.update(x for x in a.args if not isinstance(x, Var))
        self.constants = consts
        self.rank = ranks(self.rules)
        self.ground = {
            id(r): [(_ground(r.head, env), env) for env in groundings(r, consts)] for r in self.rules
        }

    def _holds(self, rule, env, facts) -> bool:
        for e in rule.body:
            if (_ground(e.atom, env) in facts) == e.negated:
                return False
        return True

    def fixpoint(self, adrift) -> tuple[frozenset, set]:
        facts = set(adrift)
        for level in sorted(set(self.rank.values()) | {0}):
            layer = [r for r in self.rules if self.rank.get(r.head.functor, 0) == level]
            while True:
                new = {
                    h for r in layer for h, env in self.ground[id(r)] if h not in facts and self._holds(r, env, facts)
                }
                if not new:
                    break
                facts |= new
        proofs = set()
        for r in self.rules:
            for h, env in self.ground[id(r)]:
                if self._holds(r, env, facts):
                    body = tuple(_ground(e.atom, env) for e in r.body if not e.negated)
                    proofs.add((h, r.index, body))
        return frozenset(facts), proofs

    def step(self, adrift: set, facts: frozenset, events) -> tuple[set, set, set]:
        """New adrift set plus the docked and launched heads for simultaneous events."""
        adds, removes = set(), set()
        functors = {e.functor for e in events}
        for r in self.updates:
            if r.body[0].atom.functor not in functors:
                continue
            for env in groundings(r, self.constants):
                if _ground(r.body[0].atom, env) not in events:
                    continue
                ok = all((_ground(e.atom, env) in facts) != e.negated for e in r.body[1:])
                if ok:
                    (adds if r.kind == UPDATE_ADD else removes).add(_ground(r.head, env))
        new = (set(adrift) - removes) | adds
        return new, removes, adds


def engine_proofs(state) -> set:
    return {
        (h, r, inst.body_atoms)
        for h, per_rule in state.proofs.items()
        for r, insts in per_rule.items()
        for inst in insts
    }
