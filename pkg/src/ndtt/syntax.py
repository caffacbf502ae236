"""Terms, atoms, rules, and the surface syntax of .ndtt programs.

Grammar (``%`` starts a comment that runs to end of line)::

    program     := statement*
    statement   := ':-' declaration '.'
                 | ['!'] atom [':' pname] [connector body] ['::' pname] '.'
    declaration := 'embed' '(' functor ',' INT ')'
                 | 'event' '(' functor ',' INT ')' [':' pname]
    connector   := ':-' | ':--' | '<-'
    body        := element (',' element)*
    element     := ':' pname                       (bias name, first only)
                 | ['!'] atom [':' pname]
    atom        := functor ['(' term (',' term)* ')']
    term        := constant | Variable             (no nesting)
    pname       := '0' | atom
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Union

from .errors import ProgramSyntaxError, UnsupportedExtension


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __str__(self):
        return self.name


Term = Union[str, Var]


class Atom(NamedTuple):
    functor: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.functor
        return f"{self.functor}({','.join(str(a) for a in self.args)})"

    @property
    def is_ground(self) -> bool:
        return not any(type(a) is Var for a in self.args)

    def variables(self) -> list[Var]:
        return [a for a in self.args if type(a) is Var]

    def substitute(self, binding: dict) -> "Atom":
        if not self.args:
            return self
        return Atom(self.functor, tuple(binding.get(a, a) if type(a) is Var else a for a in self.args))


def atom(functor: str, *args) -> Atom:
    """Convenience constructor: capitalised strings become variables."""
    conv = []
    for a in args:
        if isinstance(a, Var):
            conv.append(a)
        else:
            s = str(a)
            conv.append(Var(s) if s[:1].isupper() or s[:1] == "_" else s)
    return Atom(functor, tuple(conv))


DEDUCTIVE = "deductive"
HIGHWAY = "deductive_highway"
UPDATE_ADD = "update_add"
UPDATE_REMOVE = "update_remove"


@dataclass(frozen=True)
class Element:
    """One body slot: an atom, a negation flag, and an optional parameter name."""

    atom: Atom
    negated: bool = False
    param: Atom | None = None


@dataclass(frozen=True)
class Rule:
    kind: str
    head: Atom
    body: tuple[Element, ...] = ()
    head_negated: bool = False
    beta_param: Atom | None = None
    bias_param: Atom | None = None
    full_param: Atom | None = None
    index: int | None = None
    line: int | None = field(default=None, compare=False)
    col: int | None = field(default=None, compare=False)

    @property
    def is_update(self) -> bool:
        return self.kind in (UPDATE_ADD, UPDATE_REMOVE)

    @property
    def trigger(self) -> Atom | None:
        return self.body[0].atom if self.is_update else None

    @property
    def conditions(self) -> tuple[Element, ...]:
        return self.body[1:] if self.is_update else self.body

    def positive_slots(self) -> list[Element]:
        """Body elements that feed embeddings, in order (trigger first for updates)."""
        return [e for e in self.body if not e.negated]

    def variables(self) -> set[Var]:
        out = set(self.head.variables())
        for e in self.body:
            out.update(e.atom.variables())
        return out

    def without_location(self) -> "Rule":
        return replace(self, line=None, col=None)


@dataclass(frozen=True)
class Declaration:
    kind: str  # "embed" | "event"
    functor: str
    dim: int
    tau_param: Atom | None = None
    line: int | None = field(default=None, compare=False)
    col: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ProgramAST:
    rules: tuple[Rule, ...] = ()
    declarations: tuple[Declaration, ...] = ()

    def __len__(self):
        return len(self.rules) + len(self.declarations)


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>%[^\n]*)
  | (?P<hwy>:--)
  | (?P<neck>:-)
  | (?P<dcolon>::)
  | (?P<colon>:)
  | (?P<arrow><-)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<comma>,)
  | (?P<dot>\.)
  | (?P<bang>!)
  | (?P<star>\*)
  | (?P<int>[0-9]+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<ident>[a-z][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ProgramSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "star":
            raise UnsupportedExtension(
                "the anonymous-entity extension '*' is not supported", line, col
            )
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, kind: str) -> Token | None:
        if self.tok.kind == kind:
            return self.next()
        return None

    def expect(self, kind: str, what: str) -> Token:
        t = self.tok
        if t.kind != kind:
            if t.kind == "eof":
                raise ProgramSyntaxError(f"unterminated rule: expected {what}", t.line, t.col)
            raise ProgramSyntaxError(f"expected {what}, found {t.text!r}", t.line, t.col)
        return self.next()

    def parse(self) -> ProgramAST:
        rules, decls = [], []
        while self.tok.kind != "eof":
            if self.tok.kind == "neck":
                decls.append(self.declaration())
            else:
                rules.append(self.rule())
        return ProgramAST(tuple(rules), tuple(decls))

    def declaration(self) -> Declaration:
        start = self.expect("neck", "':-'")
        kw = self.expect("ident", "'embed' or 'event'")
        if kw.text not in ("embed", "event"):
            raise ProgramSyntaxError(f"unknown declaration {kw.text!r}", kw.line, kw.col)
        self.expect("lpar", "'('")
        f = self.expect("ident", "a functor name")
        self.expect("comma", "','")
        d = self.expect("int", "a dimension")
        self.expect("rpar", "')'")
        tau = None
        if self.accept("colon"):
            if kw.text != "event":
                raise ProgramSyntaxError("only event declarations take a parameter name", kw.line, kw.col)
            tau = self.pname()
        self.expect("dot", "'.'")
        return Declaration(kw.text, f.text, int(d.text), tau, start.line, start.col)

    def term(self) -> Term:
        t = self.tok
        if t.kind == "var":
            self.next()
            return Var(t.text)
        if t.kind in ("ident", "int"):
            self.next()
            if t.kind == "ident" and self.tok.kind == "lpar":
                raise ProgramSyntaxError("nested terms are not allowed", t.line, t.col)
            return t.text
        raise ProgramSyntaxError(f"expected a term, found {t.text!r}", t.line, t.col)

    def atom(self) -> Atom:
        f = self.tok
        if f.kind == "var":
            raise ProgramSyntaxError(f"atom expected, found variable {f.text}", f.line, f.col)
        f = self.expect("ident", "an atom")
        args = []
        if self.accept("lpar"):
            args.append(self.term())
            while self.accept("comma"):
                args.append(self.term())
            self.expect("rpar", "')'")
        return Atom(f.text, tuple(args))

    def pname(self) -> Atom:
        t = self.tok
        if t.kind == "int":
            self.next()
            if t.text != "0":
                raise ProgramSyntaxError("ill-formed annotation: integer names other than 0", t.line, t.col)
            return Atom("0")
        if t.kind != "ident":
            raise ProgramSyntaxError(f"ill-formed annotation near {t.text!r}", t.line, t.col)
        return self.atom()

    def rule(self) -> Rule:
        start = self.tok
        negated = bool(self.accept("bang"))
        head = self.atom()
        if head.functor in ("embed", "event") and self.tok.kind == "dot":
            raise ProgramSyntaxError("declarations must be introduced by ':-'", start.line, start.col)
        beta = self.pname() if self.accept("colon") else None
        kind = DEDUCTIVE
        body: list[Element] = []
        bias = None
        conn = self.tok
        if conn.kind in ("neck", "hwy", "arrow"):
            self.next()
            kind = {"neck": DEDUCTIVE, "hwy": HIGHWAY, "arrow": UPDATE_ADD}[conn.kind]
            first = True
            while True:
                if self.tok.kind == "colon":
                    c = self.next()
                    if not first:
                        raise ProgramSyntaxError("a bias annotation must come first in the body", c.line, c.col)
                    bias = self.pname()
                    self.expect("comma", "','")
                    first = False
                    continue
                first = False
                neg = bool(self.accept("bang"))
                a = self.atom()
                p = self.pname() if self.accept("colon") else None
                body.append(Element(a, neg, p))
                if not self.accept("comma"):
                    break
        full = self.pname() if self.accept("dcolon") else None
        self.expect("dot", "'.'")
        if negated:
            if kind != UPDATE_ADD:
                raise ProgramSyntaxError("only update rules ('<-') may have a negated head", start.line, start.col)
            kind = UPDATE_REMOVE
        if kind in (UPDATE_ADD, UPDATE_REMOVE):
            if not body:
                raise ProgramSyntaxError("an update rule needs a triggering event", start.line, start.col)
            if body[0].negated:
                raise ProgramSyntaxError("the triggering event cannot be negated", start.line, start.col)
        return Rule(kind, head, tuple(body), negated, beta, bias, full, None, start.line, start.col)


def parse_program(text: str) -> ProgramAST:
    """Parse program text into an AST (rules in source order, no indices yet)."""
    return _Parser(text).parse()


def parse_atom(text: str) -> Atom:
    p = _Parser(text)
    a = p.atom()
    if p.tok.kind != "eof":
        t = p.tok
        raise ProgramSyntaxError(f"trailing input {t.text!r} after atom", t.line, t.col)
    return a


def parse_ground_atom(text: str) -> Atom:
    a = parse_atom(text.strip())
    if not a.is_ground:
        raise ProgramSyntaxError(f"{text!r} is not a ground atom")
    return a


# ---------------------------------------------------------------------------
# printer

_CONNECTOR = {DEDUCTIVE: ":-", HIGHWAY: ":--", UPDATE_ADD: "<-", UPDATE_REMOVE: "<-"}


def format_element(e: Element) -> str:
    s = ("!" if e.negated else "") + str(e.atom)
    if e.param is not None:
        s += f" : {e.param}"
    return s


def format_rule(r: Rule) -> str:
    s = ("!" if r.head_negated else "") + str(r.head)
    if r.beta_param is not None:
        s += f" : {r.beta_param}"
    parts = []
    if r.bias_param is not None:
        parts.append(f": {r.bias_param}")
    parts.extend(format_element(e) for e in r.body)
    if parts:
        s += f" {_CONNECTOR[r.kind]} " + ", ".join(parts)
    if r.full_param is not None:
        s += f" :: {r.full_param}"
    return s + "."


def format_declaration(d: Declaration) -> str:
    s = f":- {d.kind}({d.functor}, {d.dim})"
    if d.tau_param is not None:
        s += f" : {d.tau_param}"
    return s + "."


def format_program(ast: ProgramAST) -> str:
    lines = [format_declaration(d) for d in ast.declarations]
    lines += [format_rule(r) for r in ast.rules]
    return "\n".join(lines) + ("\n" if lines else "")
