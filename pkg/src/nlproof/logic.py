"""First-order logical forms in the event-semantics fragment.

The grammar covers quantifier blocks, the usual connectives and predicate
application in both curried (``Agent e x``) and tupled (``Agent(e, x)``)
spelling.  Parsing is lenient about notation (Unicode, ASCII and escape-form
connectives); rendering always emits the curried Unicode normal form, and
``parse_formula(render_formula(f)) == f`` holds structurally.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

__all__ = [
    "SourceSpan",
    "ParseError",
    "Var",
    "Const",
    "Term",
    "Predicate",
    "Not",
    "And",
    "Or",
    "Implies",
    "Iff",
    "Exists",
    "Forall",
    "Truth",
    "Falsity",
    "Formula",
    "parse_formula",
    "render_formula",
    "free_vars",
]

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*")


@dataclass(frozen=True)
class SourceSpan:
    """Half-open byte range of a token or error site within the input."""

    offset: int
    length: int

    def __post_init__(self) -> None:
        if self.offset < 0 or self.length < 0:
            raise ValueError("span offset and length must be non-negative")


class ParseError(Exception):
    """Raised for any input that is not a formula of the fragment."""

    def __init__(self, message: str, span: SourceSpan, expected: Sequence[str] = ()):
        self.span = span
        self.expected = frozenset(expected)
        suffix = ""
        if self.expected:
            suffix = " (expected %s)" % ", ".join(sorted(self.expected))
        super().__init__(f"{message} at offset {span.offset}{suffix}")


def _check_name(name: str) -> None:
    if not _IDENT.fullmatch(name):
        raise ValueError(f"not a valid identifier: {name!r}")


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self) -> None:
        _check_name(self.name)


@dataclass(frozen=True)
class Const:
    name: str

    def __post_init__(self) -> None:
        _check_name(self.name)


Term = Union[Var, Const]


@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple[Term, ...]

    def __init__(self, name: str, args: Sequence[Term]):
        _check_name(name)
        if len(args) < 1:
            raise ValueError(f"predicate {name} needs at least one argument")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "args", tuple(args))


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


def _check_quantifier_vars(variables: Sequence[str]) -> tuple[str, ...]:
    if not variables:
        raise ValueError("quantifier needs at least one variable")
    seen = set()
    for v in variables:
        _check_name(v)
        if v in seen:
            raise ValueError(f"duplicate quantified variable {v!r}")
        seen.add(v)
    return tuple(variables)


@dataclass(frozen=True)
class Exists:
    variables: tuple[str, ...]
    body: "Formula"

    def __init__(self, variables: Sequence[str], body: "Formula"):
        object.__setattr__(self, "variables", _check_quantifier_vars(variables))
        object.__setattr__(self, "body", body)


@dataclass(frozen=True)
class Forall:
    variables: tuple[str, ...]
    body: "Formula"

    def __init__(self, variables: Sequence[str], body: "Formula"):
        object.__setattr__(self, "variables", _check_quantifier_vars(variables))
        object.__setattr__(self, "body", body)


@dataclass(frozen=True)
class Truth:
    pass


@dataclass(frozen=True)
class Falsity:
    pass


Formula = Union[
    Predicate, Not, And, Or, Implies, Iff, Exists, Forall, Truth, Falsity
]


# --- tokenizer ---------------------------------------------------------------

_EXISTS, _FORALL, _NOT, _AND, _OR, _IMPLIES, _IFF = (
    "EXISTS", "FORALL", "NOT", "AND", "OR", "IMPLIES", "IFF",
)
_LPAREN, _RPAREN, _COMMA, _DOT, _IDENT_TOK, _TRUE, _FALSE, _EOF = (
    "LPAREN", "RPAREN", "COMMA", "DOT", "IDENT", "TRUE", "FALSE", "EOF",
)

# Multi-character spellings first so maximal munch wins over prefixes.
_FIXED_TOKENS = [
    ("\\<longleftrightarrow>", _IFF),
    ("\\<longrightarrow>", _IMPLIES),
    ("\\<exists>", _EXISTS),
    ("\\<forall>", _FORALL),
    ("\\<and>", _AND),
    ("\\<not>", _NOT),
    ("\\<or>", _OR),
    ("-->", _IMPLIES),
    ("<->", _IFF),
    ("⟷", _IFF),
    ("↔", _IFF),
    ("⟶", _IMPLIES),
    ("→", _IMPLIES),
    ("∧", _AND),
    ("&", _AND),
    ("∨", _OR),
    ("|", _OR),
    ("¬", _NOT),
    ("~", _NOT),
    ("∃", _EXISTS),
    ("∀", _FORALL),
    ("(", _LPAREN),
    (")", _RPAREN),
    (",", _COMMA),
    (".", _DOT),
]

_KEYWORDS = {"EX": _EXISTS, "ALL": _FORALL, "True": _TRUE, "False": _FALSE}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int

    @property
    def span(self) -> SourceSpan:
        return SourceSpan(self.offset, len(self.text))


def _lex(text: str) -> Iterator[_Token]:
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        for fixed, kind in _FIXED_TOKENS:
            if text.startswith(fixed, i):
                yield _Token(kind, fixed, i)
                i += len(fixed)
                break
        else:
            m = _IDENT.match(text, i)
            if m:
                word = m.group(0)
                yield _Token(_KEYWORDS.get(word, _IDENT_TOK), word, i)
                i = m.end()
            else:
                raise ParseError(
                    f"unexpected character {ch!r}", SourceSpan(i, 1)
                )
    yield _Token(_EOF, "", n)


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = list(_lex(text))
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(
                f"unexpected {tok.text!r}" if tok.kind != _EOF else "unexpected end of input",
                tok.span,
                expected=[what],
            )
        return self.advance()

    # Precedence, loosest first: quantifier body, iff, implies, or, and, not, atom.
    def formula(self) -> Formula:
        return self.iff()

    def iff(self) -> Formula:
        left = self.implies()
        if self.peek().kind == _IFF:
            self.advance()
            return Iff(left, self.iff())
        return left

    def implies(self) -> Formula:
        left = self.disjunction()
        if self.peek().kind == _IMPLIES:
            self.advance()
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> Formula:
        left = self.conjunction()
        if self.peek().kind == _OR:
            self.advance()
            return Or(left, self.disjunction())
        return left

    def conjunction(self) -> Formula:
        left = self.unary()
        if self.peek().kind == _AND:
            self.advance()
            return And(left, self.conjunction())
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.kind == _NOT:
            self.advance()
            return Not(self.unary())
        if tok.kind in (_EXISTS, _FORALL):
            self.advance()
            variables = []
            while self.peek().kind == _IDENT_TOK:
                var_tok = self.advance()
                if var_tok.text in variables:
                    raise ParseError(
                        f"duplicate quantified variable {var_tok.text!r}",
                        var_tok.span,
                    )
                variables.append(var_tok.text)
            if not variables:
                bad = self.peek()
                raise ParseError(
                    "quantifier needs at least one variable",
                    bad.span,
                    expected=["identifier"],
                )
            self.expect(_DOT, "'.'")
            # The body extends maximally to the right.
            body = self.formula()
            return (Exists if tok.kind == _EXISTS else Forall)(variables, body)
        return self.atom()

    def atom(self) -> Formula:
        tok = self.advance()
        if tok.kind == _LPAREN:
            inner = self.formula()
            self.expect(_RPAREN, "')'")
            return inner
        if tok.kind == _TRUE:
            return Truth()
        if tok.kind == _FALSE:
            return Falsity()
        if tok.kind == _IDENT_TOK:
            return self.application(tok)
        raise ParseError(
            f"unexpected {tok.text!r}" if tok.kind != _EOF else "unexpected end of input",
            tok.span,
            expected=["formula"],
        )

    def application(self, name_tok: _Token) -> Formula:
        if self.peek().kind == _LPAREN:
            self.advance()
            args = [self.term()]
            while self.peek().kind == _COMMA:
                self.advance()
                args.append(self.term())
            self.expect(_RPAREN, "')'")
            return Predicate(name_tok.text, args)
        args = []
        while self.peek().kind == _IDENT_TOK:
            args.append(Var(self.advance().text))
        if not args:
            raise ParseError(
                f"predicate {name_tok.text!r} needs at least one argument",
                name_tok.span,
                expected=["argument"],
            )
        return Predicate(name_tok.text, args)

    def term(self) -> Term:
        tok = self.expect(_IDENT_TOK, "identifier")
        return Var(tok.text)


def parse_formula(text: str) -> Formula:
    """Parse ``text`` into a Formula or raise ParseError with a source span."""

    parser = _Parser(text)
    formula = parser.formula()
    trailing = parser.peek()
    if trailing.kind != _EOF:
        raise ParseError(
            f"unexpected trailing {trailing.text!r}", trailing.span, expected=["end of input"]
        )
    return formula


# --- renderer ----------------------------------------------------------------

# Binding strength of each context; children weaker than their context get parens.
_LEVEL_QUANT = 0
_LEVEL_IFF = 1
_LEVEL_IMPLIES = 2
_LEVEL_OR = 3
_LEVEL_AND = 4
_LEVEL_NOT = 5
_LEVEL_ATOM = 6


def _render(f: Formula, level: int) -> str:
    if isinstance(f, Truth):
        return "True"
    if isinstance(f, Falsity):
        return "False"
    if isinstance(f, Predicate):
        return " ".join([f.name] + [a.name for a in f.args])
    if isinstance(f, Not):
        text = "¬" + _render(f.operand, _LEVEL_NOT)
        return f"({text})" if level > _LEVEL_NOT else text
    if isinstance(f, (Exists, Forall)):
        symbol = "∃" if isinstance(f, Exists) else "∀"
        text = symbol + " ".join(f.variables) + ". " + _render(f.body, _LEVEL_QUANT)
        return f"({text})" if level > _LEVEL_QUANT else text
    connectives = {
        And: (" ∧ ", _LEVEL_AND),
        Or: (" ∨ ", _LEVEL_OR),
        Implies: (" ⟶ ", _LEVEL_IMPLIES),
        Iff: (" ⟷ ", _LEVEL_IFF),
    }
    glue, own = connectives[type(f)]
    # Right-associative: the left child must bind strictly tighter.
    text = _render(f.left, own + 1) + glue + _render(f.right, own)
    return f"({text})" if level > own else text


def render_formula(f: Formula) -> str:
    """Deterministic curried Unicode form; reparses to an equal Formula."""

    return _render(f, _LEVEL_QUANT)


def free_vars(f: Formula) -> list[str]:
    """Free variable names in first-occurrence order, left to right."""

    found: list[str] = []

    def walk(g: Formula, bound: frozenset[str]) -> None:
        if isinstance(g, Predicate):
            for arg in g.args:
                if isinstance(arg, Var) and arg.name not in bound and arg.name not in found:
                    found.append(arg.name)
        elif isinstance(g, Not):
            walk(g.operand, bound)
        elif isinstance(g, (And, Or, Implies, Iff)):
            walk(g.left, bound)
            walk(g.right, bound)
        elif isinstance(g, (Exists, Forall)):
            walk(g.body, bound | frozenset(g.variables))

    walk(f, frozenset())
    return found
