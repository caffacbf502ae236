"""Static validation, stratification and parameter resolution."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

from .desugar import desugar_highways
from .errors import (
    CyclicDeduction,
    DuplicateDeclaration,
    ParameterError,
    ProgramSyntaxError,
    RangeRestrictionViolation,
    UnstratifiedNegation,
)
from .params import ZERO_NAME
from .syntax import (
    DEDUCTIVE,
    HIGHWAY,
    UPDATE_ADD,
    UPDATE_REMOVE,
    Atom,
    Declaration,
    ProgramAST,
    Rule,
    format_program,
    parse_program,
)

CONTINUOUS = "continuous"
DISCRETE = "discrete"
GATES = {CONTINUOUS: 7, DISCRETE: 3}


@dataclass(frozen=True)
class RuleParams:
    """Resolved parameter names and shapes for one rule.

    ``slots`` has one name per positive body element (trigger first for
    update rules).  Names may still contain rule variables; they are
    grounded per instantiation.
    """

    rule_index: int
    rows: int
    slot_dims: tuple[int, ...]
    beta: Atom | None
    bias: Atom | None
    slots: tuple[Atom, ...]
    full: Atom | None

    @property
    def cols(self) -> int:
        return 1 + sum(self.slot_dims)

    @property
    def zero_slots(self) -> tuple[bool, ...]:
        return tuple(s.functor == ZERO_NAME and not s.args for s in self.slots)

    def signatures(self) -> list[tuple[Atom, str, tuple]]:
        """(name pattern, role, shape) triples, excluding the constant zero.

        A rule whose head carries no vector (rows == 0) has no parameters.
        """
        if not self.rows:
            return []
        out = []
        if self.beta is not None:
            out.append((self.beta, "beta", ()))
        if self.full is not None:
            out.append((self.full, "matrix", (self.rows, self.cols)))
        else:
            if self.bias is not None:
                out.append((self.bias, "matrix", (self.rows, 1)))
            for name, d in zip(self.slots, self.slot_dims):
                out.append((name, "matrix", (self.rows, d)))
        return [s for s in out if str(s[0]) != ZERO_NAME]


@dataclass(frozen=True, eq=False)
class ValidatedProgram:
    rules: tuple[Rule, ...]
    declarations: dict[str, Declaration]
    strata: dict[str, int]
    dependency_graph: dict[str, frozenset[tuple[str, bool]]]
    source: str = ""
    _param_cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- declarations -----------------------------------------------------
    def dim(self, functor: str) -> int:
        d = self.declarations.get(functor)
        return d.dim if d else 0

    def is_event(self, functor: str) -> bool:
        d = self.declarations.get(functor)
        return d is not None and d.kind == "event"

    def dim_plus(self, functor: str) -> int:
        """Rows of the preactivation: D, plus one intensity row for events."""
        return self.dim(functor) + (1 if self.is_event(functor) else 0)

    def tau_name(self, functor: str) -> Atom:
        d = self.declarations.get(functor)
        if d is not None and d.tau_param is not None:
            return d.tau_param
        return Atom("tau", (functor,))

    @cached_property
    def event_functors(self) -> tuple[str, ...]:
        return tuple(sorted(f for f, d in self.declarations.items() if d.kind == "event"))

    # -- rules ------------------------------------------------------------
    @cached_property
    def deductive_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.kind == DEDUCTIVE)

    @cached_property
    def update_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.is_update)

    @cached_property
    def functors(self) -> frozenset[str]:
        fs = set(self.declarations)
        for r in self.rules:
            fs.add(r.head.functor)
            fs.update(e.atom.functor for e in r.body)
        return frozenset(fs)

    @property
    def mentions_init(self) -> bool:
        return "init" in self.functors

    @cached_property
    def constants(self) -> frozenset[str]:
        cs = set()
        for r in self.rules:
            for a in [r.head] + [e.atom for e in r.body]:
                cs.update(x for x in a.args if isinstance(x, str))
        return frozenset(cs)

    @cached_property
    def program_hash(self) -> str:
        return hashlib.sha256(self.canonical_text.encode()).hexdigest()

    @cached_property
    def canonical_text(self) -> str:
        decls = tuple(self.declarations[f] for f in sorted(self.declarations))
        return format_program(ProgramAST(self.rules, decls))

    def rule(self, index: int) -> Rule:
        return self.rules[index - 1]

    # -- parameters -------------------------------------------------------
    def params(self, mode: str = CONTINUOUS) -> dict[int, RuleParams]:
        if mode not in self._param_cache:
            self._param_cache[mode] = resolve_rule_params(self, mode)
        return self._param_cache[mode]


# ---------------------------------------------------------------------------
# validation


def _check_declarations(decls: tuple[Declaration, ...]) -> dict[str, Declaration]:
    out: dict[str, Declaration] = {}
    for d in decls:
        if d.functor in out:
            raise DuplicateDeclaration(f"functor {d.functor!r} is declared more than once", d.line, d.col)
        out[d.functor] = d
    return out


def _check_range(rule: Rule):
    bound = set()
    for e in rule.body:
        if not e.negated:
            bound.update(e.atom.variables())
    where = f"rule {rule.index}" if rule.index else "rule"
    for v in rule.head.variables():
        if v not in bound:
            raise RangeRestrictionViolation(
                f"{where}: head variable {v} does not occur in a positive body atom", rule.line, rule.col
            )
    for e in rule.body:
        if e.negated:
            for v in e.atom.variables():
                if v not in bound:
                    raise RangeRestrictionViolation(
                        f"{where}: variable {v} of negated condition {e.atom} is unbound", rule.line, rule.col
                    )
    names = [rule.bias_param, rule.full_param] + [e.param for e in rule.body]
    for n in names:
        if n is None:
            continue
        for v in n.variables():
            if v not in bound:
                raise RangeRestrictionViolation(
                    f"{where}: variable {v} of parameter name {n} is unbound", rule.line, rule.col
                )
    if rule.beta_param is not None:
        head_vars = set(rule.head.variables())
        for v in rule.beta_param.variables():
            if v not in head_vars:
                raise ParameterError(
                    f"{where}: pooling parameter {rule.beta_param} uses variable {v} that is not in the head",
                    rule.line,
                    rule.col,
                )


def _sccs(nodes: list[str], graph: dict[str, set[str]]) -> list[list[str]]:
    """Tarjan's algorithm, iterative; components come out in reverse topological order."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(sorted(graph.get(root, ()))))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            nxt = next(it, None)
            if nxt is not None:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(sorted(graph.get(nxt, ())))))
                elif nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(sorted(comp))
    return out


def stratify(rules: tuple[Rule, ...], functors) -> tuple[dict[str, int], dict[str, frozenset]]:
    """Strata over the functor-level deductive dependency graph.

    Edges run from a head functor to each body functor, flagged negative
    for negated conditions.  A negative edge inside a strongly connected
    component is unstratifiable.  The stratum of a functor is the longest
    path below it, counting negative edges as 1 and positive edges as 0.
    """
    edges: dict[str, set[tuple[str, bool]]] = {f: set() for f in functors}
    for r in rules:
        if r.kind != DEDUCTIVE:
            continue
        for e in r.body:
            edges[r.head.functor].add((e.atom.functor, e.negated))
    plain = {f: {g for g, _ in es} for f, es in edges.items()}
    comps = _sccs(sorted(functors), plain)
    comp_of = {f: i for i, c in enumerate(comps) for f in c}
    for r in rules:
        if r.kind != DEDUCTIVE:
            continue
        for e in r.body:
            if e.negated and comp_of[e.atom.functor] == comp_of[r.head.functor]:
                raise UnstratifiedNegation(
                    f"{r.head.functor} depends negatively on {e.atom.functor} within a recursive cycle",
                    r.line,
                    r.col,
                )
    strata: dict[str, int] = {}
    # Tarjan emits dependencies before dependents
    for comp in comps:
        level = 0
        for f in comp:
            for g, neg in edges[f]:
                if comp_of[g] != comp_of[f]:
                    level = max(level, strata[g] + (1 if neg else 0))
        for f in comp:
            strata[f] = level
    return strata, {f: frozenset(es) for f, es in edges.items()}


def validate(ast: ProgramAST, source: str = "") -> ValidatedProgram:
    """Check a desugared AST and return the executable program."""
    decls = _check_declarations(ast.declarations)
    rules = []
    for i, r in enumerate(ast.rules, start=1):
        if r.kind == HIGHWAY:
            raise ProgramSyntaxError("highway rules must be desugared before validation", r.line, r.col)
        r = replace(r, index=i)
        if r.kind == DEDUCTIVE:
            for e in r.body:
                if not e.negated and e.atom == r.head:
                    raise CyclicDeduction(f"{r.head} is used to prove itself", r.line, r.col)
        _check_range(r)
        rules.append(r)
    rules = tuple(rules)
    functors = set(decls)
    for r in rules:
        functors.add(r.head.functor)
        functors.update(e.atom.functor for e in r.body)
    strata, graph = stratify(rules, functors)
    prog = ValidatedProgram(rules, decls, strata, graph, source)
    resolve_parameters(prog)
    return prog


# ---------------------------------------------------------------------------
# parameters


def _default(r: int, what) -> Atom:
    return Atom("params", (str(r), str(what)))


def resolve_rule_params(prog: ValidatedProgram, mode: str = CONTINUOUS) -> dict[int, RuleParams]:
    out = {}
    for r in prog.rules:
        if r.kind == UPDATE_REMOVE:
            continue
        h = r.head.functor
        if r.kind == UPDATE_ADD:
            rows = GATES[mode] * prog.dim_plus(h)
        else:
            rows = prog.dim_plus(h)
        slots, dims = [], []
        cond_no = 0
        for j, e in enumerate(r.body):
            is_trigger = r.is_update and j == 0
            if not is_trigger:
                cond_no += 1
            if e.negated:
                continue
            slots.append(e.param if e.param is not None else _default(r.index, 0 if is_trigger else cond_no))
            dims.append(prog.dim(e.atom.functor))
        out[r.index] = RuleParams(
            rule_index=r.index,
            rows=rows,
            slot_dims=tuple(dims),
            beta=r.beta_param if r.beta_param is not None else _default(r.index, "beta"),
            bias=None if r.full_param is not None else (r.bias_param or _default(r.index, "bias")),
            slots=tuple(slots),
            full=r.full_param,
        )
    return out


def resolve_parameters(prog: ValidatedProgram, mode: str = CONTINUOUS) -> dict[str, tuple[str, tuple]]:
    """Map every parameter name pattern to its (role, shape).

    Raises ParameterError when one name is used with two different shapes.
    Names containing variables are listed as patterns; each distinct ground
    instance gets its own storage at run time.
    """
    sigs: dict[str, tuple[str, tuple]] = {}
    where: dict[str, int] = {}

    def add(name: Atom, role: str, shape: tuple, r: Rule | None):
        key = str(name)
        if key in sigs and sigs[key] != (role, shape):
            line, col = (r.line, r.col) if r is not None else (None, None)
            raise ParameterError(
                f"parameter {key} used with shape {shape} here but {sigs[key][1]} in rule {where[key]}",
                line,
                col,
            )
        sigs[key] = (role, shape)
        where.setdefault(key, r.index if r is not None else 0)

    for idx, rp in prog.params(mode).items():
        r = prog.rule(idx)
        if rp.full is not None:
            bad = [e for e in r.body if e.param is not None and str(e.param) != ZERO_NAME]
            if bad or r.bias_param is not None:
                raise ParameterError("a '::' name cannot be combined with per-slot names", r.line, r.col)
        for name, role, shape in rp.signatures():
            add(name, role, shape, r)
    for f in prog.event_functors:
        add(prog.tau_name(f), "tau", (), None)
    return dict(sorted(sigs.items()))


def parameter_signatures(prog: ValidatedProgram, mode: str = CONTINUOUS) -> set[tuple[str, str, tuple]]:
    return {(n, role, shape) for n, (role, shape) in resolve_parameters(prog, mode).items()}


# ---------------------------------------------------------------------------
# convenience


def compile_program(text: str) -> ValidatedProgram:
    """parse -> desugar -> validate."""
    return validate(desugar_highways(parse_program(text)), source=text)


def load_program(path) -> ValidatedProgram:
    return compile_program(Path(path).read_text(encoding="utf-8"))
