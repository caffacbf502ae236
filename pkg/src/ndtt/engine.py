"""The temporal deductive database: fixpoints, proofs and update matching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

from .errors import CyclicDeduction, ProgramError
from .program import ValidatedProgram
from .syntax import DEDUCTIVE, UPDATE_ADD, Atom, Rule, Var

ADD = "add"
REMOVE = "remove"


class ProofInstantiation(NamedTuple):
    rule_index: int
    head: Atom
    body_atoms: tuple[Atom, ...]  # positive slots only, rule order
    m: int
    binding: tuple[tuple[str, str], ...]


class UpdateMatch(NamedTuple):
    rule_index: int
    polarity: str
    head: Atom
    trigger: Atom
    body_atoms: tuple[Atom, ...]  # positive slots, trigger first
    m: int
    binding: tuple[tuple[str, str], ...]


@dataclass
class DatabaseState:
    """Symbolic state at one time.

    ``adrift`` maps each adrift atom to its cell payload, which the engine
    treats as opaque (the neural layer stores cell blocks there).
    """

    time: float = 0.0
    adrift: dict[Atom, Any] = field(default_factory=dict)
    facts: frozenset = frozenset()
    proofs: dict[Atom, dict[int, tuple[ProofInstantiation, ...]]] = field(default_factory=dict)
    memo: dict = field(default_factory=dict)
    version: int = 0  # bumped whenever facts or cells change

    def copy(self) -> "DatabaseState":
        return DatabaseState(self.time, dict(self.adrift), self.facts, self.proofs, {}, self.version)

    def is_fact(self, a: Atom) -> bool:
        return a in self.facts

    def dump(self) -> str:
        """One fact per line, sorted; adrift atoms are flagged."""
        lines = []
        for a in sorted(self.facts, key=str):
            lines.append(f"{a} [adrift]" if a in self.adrift else str(a))
        return "\n".join(lines) + ("\n" if lines else "")


def _canon(body: tuple[Atom, ...]) -> tuple[str, ...]:
    return tuple(str(a) for a in body)


def _binding_key(binding: dict) -> tuple:
    return tuple(sorted((v.name, c) for v, c in binding.items()))


class _Relations:
    """Per-functor fact lists with lazily built lookups on bound positions.

    The lookup tables are the query memo: keyed by (functor, positions),
    they are valid until the fact set changes and are discarded wholesale.
    """

    def __init__(self, facts: Iterable[Atom], memo: dict | None, use_memo: bool):
        self.by_functor: dict[str, list[Atom]] = {}
        for a in facts:
            self.by_functor.setdefault(a.functor, []).append(a)
        self.memo = memo if memo is not None else {}
        self.use_memo = use_memo

    def lookup(self, functor: str, positions: tuple[int, ...], key: tuple) -> list[Atom]:
        rows = self.by_functor.get(functor, ())
        if not positions:
            return list(rows)
        if not self.use_memo:
            return [a for a in rows if tuple(a.args[p] for p in positions) == key]
        table = self.memo.get((functor, positions))
        if table is None:
            table = {}
            for a in rows:
                table.setdefault(tuple(a.args[p] for p in positions), []).append(a)
            self.memo[(functor, positions)] = table
        return table.get(key, ())


def _match(pattern: Atom, fact: Atom, binding: dict) -> dict | None:
    if pattern.functor != fact.functor or len(pattern.args) != len(fact.args):
        return None
    new = None
    for p, c in zip(pattern.args, fact.args):
        if type(p) is Var:
            b = binding.get(p) if new is None else new.get(p)
            if b is None:
                if new is None:
                    new = dict(binding)
                new[p] = c
            elif b != c:
                return None
        elif p != c:
            return None
    return binding if new is None else new


def _join(elements, rel: _Relations, binding: dict, facts, delta_at: int = -1, delta: _Relations | None = None):
    """Enumerate bindings satisfying all positive elements and negations."""
    positives = [e for e in elements if not e.negated]
    negatives = [e for e in elements if e.negated]

    def rec(i: int, b: dict):
        if i == len(positives):
            for e in negatives:
                if e.atom.substitute(b) in facts:
                    return
            yield b
            return
        pat = positives[i].atom
        pos = tuple(k for k, a in enumerate(pat.args) if type(a) is not Var or a in b)
        key = tuple(b[a] if type(a) is Var else a for a in (pat.args[k] for k in pos))
        source = delta if i == delta_at else rel
        for fact in source.lookup(pat.functor, pos, key):
            nb = _match(pat, fact, b)
            if nb is not None:
                yield from rec(i + 1, nb)

    return rec(0, binding)


class Engine:
    """Fixpoint evaluation and update matching for one program."""

    def __init__(self, program: ValidatedProgram, use_memo: bool = True):
        self.program = program
        self.use_memo = use_memo
        self.base_facts = []
        self.base_rules = []
        by_stratum: dict[int, list[Rule]] = {}
        for r in program.deductive_rules:
            if not r.body:
                self.base_facts.append(r.head)
                self.base_rules.append(r)
            else:
                by_stratum.setdefault(program.strata[r.head.functor], []).append(r)
        self.strata = [by_stratum[s] for s in sorted(by_stratum)]
        self.rule_positives = {
            r.index: [e for e in r.body if not e.negated] for r in program.rules
        }

    # -- fixpoint ---------------------------------------------------------
    def fixpoint(self, adrift_atoms: Iterable[Atom]) -> tuple[frozenset, dict]:
        facts = set(adrift_atoms)
        facts.update(self.base_facts)
        for rules in self.strata:
            delta = set(facts)
            while delta:
                rel = _Relations(facts, None, True)
                drel = _Relations(delta, None, True)
                dfun = {a.functor for a in delta}
                new = set()
                for r in rules:
                    pos = self.rule_positives[r.index]
                    for k, e in enumerate(pos):
                        if e.atom.functor not in dfun:
                            continue
                        for b in _join(r.body, rel, {}, facts, k, drel):
                            h = r.head.substitute(b)
                            if h not in facts:
                                new.add(h)
                facts |= new
                delta = new
        facts = frozenset(facts)
        proofs = self._instantiations(facts)
        self._check_acyclic(proofs)
        return facts, proofs

    def _instantiations(self, facts: frozenset) -> dict:
        rel = _Relations(facts, None, True)
        raw: dict[Atom, dict[int, dict]] = {}
        for r in self.base_rules:
            raw.setdefault(r.head, {}).setdefault(r.index, {})[()] = ()
        for rules in self.strata:
            for r in rules:
                for b in _join(r.body, rel, {}, facts):
                    h = r.head.substitute(b)
                    body = tuple(e.atom.substitute(b) for e in self.rule_positives[r.index])
                    raw.setdefault(h, {}).setdefault(r.index, {})[body] = _binding_key(b)
        proofs = {}
        for h, per_rule in raw.items():
            proofs[h] = {}
            for ri in sorted(per_rule):
                items = sorted(per_rule[ri].items(), key=lambda kv: _canon(kv[0]))
                proofs[h][ri] = tuple(
                    ProofInstantiation(ri, h, body, m, bk) for m, (body, bk) in enumerate(items)
                )
        return proofs

    @staticmethod
    def _check_acyclic(proofs: dict):
        children: dict[Atom, set] = {}
        indeg: dict[Atom, int] = {}
        for h, per_rule in proofs.items():
            parents = {a for insts in per_rule.values() for inst in insts for a in inst.body_atoms}
            indeg[h] = indeg.get(h, 0) + len(parents)
            for p in parents:
                children.setdefault(p, set()).add(h)
                indeg.setdefault(p, 0)
        ready = [a for a, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            a = ready.pop()
            seen += 1
            for c in children.get(a, ()):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if seen == len(indeg):
            return
        # walk backwards through unresolved atoms until one repeats
        stuck = {a for a, d in indeg.items() if d > 0}
        node = min(stuck, key=str)
        path = [node]
        while True:
            nxt = min(
                (a for insts in proofs[node].values() for i in insts for a in i.body_atoms if a in stuck),
                key=str,
            )
            if nxt in path:
                cyc = path[path.index(nxt):] + [nxt]
                raise CyclicDeduction(
                    "ground atoms participate in their own proof: " + " <- ".join(map(str, cyc))
                )
            path.append(nxt)
            node = nxt

    # -- states -----------------------------------------------------------
    def init_state(self) -> DatabaseState:
        state = DatabaseState(0.0)
        self.refresh(state)
        return state

    def refresh(self, state: DatabaseState):
        state.facts, state.proofs = self.fixpoint(state.adrift)
        state.memo = {}
        state.version += 1

    def possible_events(self, state: DatabaseState) -> list[Atom]:
        """E(t): facts with an event-declared functor, in canonical order."""
        ev = set(self.program.event_functors)
        return sorted((a for a in state.facts if a.functor in ev), key=str)

    # -- updates ----------------------------------------------------------
    def match_updates(self, state: DatabaseState, events: Iterable[Atom]) -> list[UpdateMatch]:
        events = list(events)
        for e in events:
            if not e.is_ground:
                raise ProgramError(f"event {e} is not ground")
        rel = _Relations(state.facts, state.memo if self.use_memo else None, self.use_memo)
        raw: dict[tuple, dict] = {}
        for r in self.program.update_rules:
            trig = r.body[0].atom
            for ev in events:
                b0 = _match(trig, ev, {})
                if b0 is None:
                    continue
                for b in _join(r.body[1:], rel, b0, state.facts):
                    h = r.head.substitute(b)
                    body = tuple(e.atom.substitute(b) for e in self.rule_positives[r.index])
                    raw.setdefault((r.index, h), {})[body] = (ev, _binding_key(b))
        out = []
        for (ri, h) in sorted(raw, key=lambda k: (k[0], str(k[1]))):
            pol = ADD if self.program.rule(ri).kind == UPDATE_ADD else REMOVE
            items = sorted(raw[(ri, h)].items(), key=lambda kv: _canon(kv[0]))
            for m, (body, (ev, bk)) in enumerate(items):
                out.append(UpdateMatch(ri, pol, h, ev, body, m, bk))
        return out

    def apply_updates(self, state: DatabaseState, matches: list[UpdateMatch]) -> tuple[set, set]:
        """Dock removed heads, then launch added heads; recompute facts.

        Returns (docked, launched).  A launched head that was not adrift
        after docking gets payload None, meaning "start from a zero cell".
        """
        docked, launched = set(), set()
        for mt in matches:
            if mt.polarity == REMOVE and mt.head in state.adrift:
                del state.adrift[mt.head]
                docked.add(mt.head)
            elif mt.polarity == REMOVE:
                docked.add(mt.head)
        for mt in matches:
            if mt.polarity == ADD:
                if mt.head not in state.adrift:
                    state.adrift[mt.head] = None
                launched.add(mt.head)
        if matches:
            self.refresh(state)
        return docked, launched


def init_state(program: ValidatedProgram) -> DatabaseState:
    return Engine(program).init_state()


def fixpoint(program: ValidatedProgram, adrift_atoms) -> tuple[frozenset, dict]:
    return Engine(program).fixpoint(adrift_atoms)
