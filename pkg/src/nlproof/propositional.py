"""Propositional layer: glossed atoms, relations between them, and the
derivation of implicit implications by exhaustive truth-table entailment.

Relations arrive as text blocks (``Logical Propositions:`` /
``Logical Relations:``), are checked against the declared atoms, and the
derived section is recomputed rather than trusted from input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

__all__ = [
    "PropAtom",
    "Atom",
    "Not",
    "And",
    "Or",
    "Implies",
    "Equivalent",
    "TRUE",
    "FALSE",
    "PropFormula",
    "Literal",
    "Implication",
    "PropositionalModel",
    "FormatError",
    "UndeclaredAtom",
    "TooManyAtoms",
    "ATOM_LIMIT",
    "sanitize_symbol",
    "parse_logical_information",
    "format_logical_information",
    "entails",
    "equivalent",
    "simplify",
    "derive_implications",
]

ATOM_LIMIT = 20


class FormatError(Exception):
    """A line of a logical-information block that cannot be interpreted."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UndeclaredAtom(FormatError):
    """A relation names an atom that was never declared."""

    def __init__(self, name: str, line_no: Optional[int] = None):
        self.name = name
        super().__init__(f"undeclared atom {name!r}", line_no)


class TooManyAtoms(Exception):
    """Entailment was asked to enumerate more atoms than the cap allows."""

    def __init__(self, count: int, limit: int = ATOM_LIMIT):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} atoms exceed the enumeration limit of {limit}")


@dataclass(frozen=True)
class PropAtom:
    """A declared atom: single-letter-or-sanitised symbol plus its NL gloss."""

    symbol: str
    gloss: str
    source_sentence: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.symbol:
            raise ValueError("atom symbol must be non-empty")
        if not self.gloss:
            raise ValueError(f"atom {self.symbol}: gloss must be non-empty")


@dataclass(frozen=True)
class Atom:
    symbol: str


@dataclass(frozen=True)
class Not:
    operand: "PropFormula"


@dataclass(frozen=True)
class And:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Or:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Implies:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Equivalent:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class _Constant:
    value: bool


TRUE = _Constant(True)
FALSE = _Constant(False)

PropFormula = Union[Atom, Not, And, Or, Implies, Equivalent, _Constant]


@dataclass(frozen=True)
class Literal:
    """An atom or its negation; the only shapes derived implications relate."""

    symbol: str
    negated: bool = False

    def formula(self) -> PropFormula:
        return Not(Atom(self.symbol)) if self.negated else Atom(self.symbol)

    def __str__(self) -> str:
        return f"Not({self.symbol})" if self.negated else self.symbol


@dataclass(frozen=True)
class Implication:
    antecedent: Literal
    consequent: Literal

    def formula(self) -> PropFormula:
        return Implies(self.antecedent.formula(), self.consequent.formula())

    def __str__(self) -> str:
        return f"Implies({self.antecedent}, {self.consequent})"


@dataclass(frozen=True)
class PropositionalModel:
    atoms: tuple[PropAtom, ...]
    relations: tuple[PropFormula, ...] = ()
    derived: tuple[Implication, ...] = ()

    def __post_init__(self) -> None:
        symbols = [a.symbol for a in self.atoms]
        if len(symbols) != len(set(symbols)):
            raise ValueError("atom symbols must be unique")

    def atom_by_symbol(self, symbol: str) -> PropAtom:
        for a in self.atoms:
            if a.symbol == symbol:
                return a
        raise KeyError(symbol)


# --- text format ---------------------------------------------------------------

_SECTION_HEADERS = {
    "logical propositions": "atoms",
    "logical relations": "relations",
    "derived implications": "derived",
}
_RELATION_NAMES = {
    "Implies": Implies,
    "Equivalent": Equivalent,
    "And": And,
    "Or": Or,
    "Not": Not,
}
_SOURCE_SUFFIX = re.compile(
    r"\s*\(from Explanatory Sentence (\d+)\)\s*$", re.IGNORECASE
)


def sanitize_symbol(key: str) -> str:
    """Replace every non-alphanumeric character of an atom key by underscore."""

    return re.sub(r"[^A-Za-z0-9]", "_", key.strip())


def _split_header(line: str) -> Optional[tuple[str, str]]:
    head, sep, rest = line.partition(":")
    if not sep:
        return None
    section = _SECTION_HEADERS.get(head.strip().lower())
    if section is None:
        return None
    return section, rest.strip()


class _RelationParser:
    """Recursive parser for ``Op(arg, ...)`` relation expressions."""

    def __init__(self, text: str, line_no: int, resolver: "_AtomResolver"):
        self.text = text
        self.pos = 0
        self.line_no = line_no
        self.resolver = resolver

    def fail(self, message: str) -> FormatError:
        return FormatError(f"{message} in relation {self.text!r}", self.line_no)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def parse(self) -> PropFormula:
        self.skip_ws()
        if self._operator_ahead() is None:
            raise self.fail("expected a relation (Implies/Equivalent/Not/And/Or)")
        expr = self.expr()
        self.skip_ws()
        # Anything after the balanced expression is commentary ("...: A -> B").
        rest = self.text[self.pos:].strip()
        if rest and not rest.startswith(":"):
            raise self.fail(f"trailing text {rest!r}")
        return expr

    def _operator_ahead(self) -> Optional[tuple[type, int]]:
        match = re.match(r"\s*([A-Za-z]+)\s*\(", self.text[self.pos:])
        if match and match.group(1) in _RELATION_NAMES:
            return _RELATION_NAMES[match.group(1)], self.pos + match.end()
        return None

    def expr(self) -> PropFormula:
        self.skip_ws()
        ahead = self._operator_ahead()
        if ahead is not None:
            op, self.pos = ahead
            args = [self.expr()]
            self.skip_ws()
            while self.pos < len(self.text) and self.text[self.pos] == ",":
                self.pos += 1
                args.append(self.expr())
                self.skip_ws()
            if self.pos >= len(self.text) or self.text[self.pos] != ")":
                raise self.fail("missing ')'")
            self.pos += 1
            if op is Not:
                if len(args) != 1:
                    raise self.fail("Not takes exactly one argument")
                return Not(args[0])
            if len(args) < 2:
                raise self.fail("a binary relation takes two arguments")
            # N-ary And/Or fold to the right; Implies/Equivalent stay binary.
            if len(args) > 2 and op in (And, Or):
                folded: PropFormula = args[-1]
                for a in reversed(args[:-1]):
                    folded = op(a, folded)
                return folded
            if len(args) > 2:
                raise self.fail("a binary relation takes two arguments")
            return op(args[0], args[1])
        # A bare name: read up to the next delimiter, resolve as symbol or gloss.
        end = self.pos
        while end < len(self.text) and self.text[end] not in ",()":
            end += 1
        name = self.text[self.pos:end].strip()
        if not name:
            raise self.fail("empty atom reference")
        self.pos = end
        return Atom(self.resolver.resolve(name, self.line_no))


class _AtomResolver:
    def __init__(self) -> None:
        self.atoms: list[PropAtom] = []
        self.by_symbol: dict[str, PropAtom] = {}
        self.by_gloss: dict[str, str] = {}

    @staticmethod
    def _gloss_key(gloss: str) -> str:
        return re.sub(r"\s+", " ", gloss).strip().rstrip(".").lower()

    def declare(self, atom: PropAtom, line_no: int) -> None:
        if atom.symbol in self.by_symbol:
            raise FormatError(
                f"atom symbol {atom.symbol!r} already declared"
                " (collision after sanitisation)",
                line_no,
            )
        self.atoms.append(atom)
        self.by_symbol[atom.symbol] = atom
        self.by_gloss.setdefault(self._gloss_key(atom.gloss), atom.symbol)

    def resolve(self, name: str, line_no: int) -> str:
        if name in self.by_symbol:
            return name
        sanitised = sanitize_symbol(name)
        if sanitised in self.by_symbol:
            return sanitised
        gloss = self.by_gloss.get(self._gloss_key(name))
        if gloss is not None:
            return gloss
        raise UndeclaredAtom(name, line_no)


def parse_logical_information(text: str) -> PropositionalModel:
    """Parse a Logical Propositions / Logical Relations block.

    Lines before the first section header are ignored (model preambles such
    as "Answer:").  A ``Derived Implications`` section in the input is
    skipped: derived implications are recomputed, never trusted.  Relation
    lines whose arguments are atom glosses rather than symbols resolve to the
    glossed atoms; exact duplicates introduced that way are dropped.
    """

    resolver = _AtomResolver()
    relations: list[PropFormula] = []
    section: Optional[str] = None

    for line_no, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.strip()
        if not line:
            continue
        header = _split_header(line)
        if header is not None:
            section, rest = header
            if rest and rest.lower() != "none":
                raise FormatError(f"unexpected text after section header: {rest!r}", line_no)
            continue
        if section is None:
            continue
        if line.lower() == "none":
            continue
        if section == "derived":
            continue
        if section == "atoms":
            key, sep, gloss = line.partition(":")
            if not sep:
                raise FormatError(f"expected 'SYMBOL: gloss', got {line!r}", line_no)
            source: Optional[int] = None
            gloss = gloss.strip()
            suffix = _SOURCE_SUFFIX.search(gloss)
            if suffix:
                source = int(suffix.group(1))
                gloss = gloss[: suffix.start()].strip()
            if not gloss:
                raise FormatError("atom gloss must be non-empty", line_no)
            symbol = sanitize_symbol(key)
            if not symbol:
                raise FormatError(f"unusable atom key {key!r}", line_no)
            resolver.declare(PropAtom(symbol, gloss, source), line_no)
        else:
            relation = _RelationParser(line, line_no, resolver).parse()
            if relation not in relations:
                relations.append(relation)

    if not resolver.atoms and section is None:
        raise FormatError("no 'Logical Propositions:' section found")
    return PropositionalModel(tuple(resolver.atoms), tuple(relations))


def _formula_text(f: PropFormula, glosses: Optional[Mapping[str, str]] = None) -> str:
    if isinstance(f, Atom):
        return glosses[f.symbol] if glosses else f.symbol
    if isinstance(f, _Constant):
        return "True" if f.value else "False"
    if isinstance(f, Not):
        return f"Not({_formula_text(f.operand, glosses)})"
    names = {And: "And", Or: "Or", Implies: "Implies", Equivalent: "Equivalent"}
    return "%s(%s, %s)" % (
        names[type(f)],
        _formula_text(f.left, glosses),
        _formula_text(f.right, glosses),
    )


def format_logical_information(model: PropositionalModel) -> str:
    """Render the three-section block; empty sections read ``none``.

    Initial relations are followed by a gloss-substituted copy; derived
    implications are emitted with symbols only.
    """

    glosses = {a.symbol: a.gloss for a in model.atoms}
    lines = ["Logical Propositions:"]
    if model.atoms:
        for a in model.atoms:
            suffix = (
                f" (from Explanatory Sentence {a.source_sentence})"
                if a.source_sentence is not None
                else ""
            )
            lines.append(f"{a.symbol}: {a.gloss}{suffix}")
    else:
        lines.append("none")
    lines.append("")
    lines.append("Logical Relations:")
    if model.relations:
        for r in model.relations:
            lines.append(_formula_text(r))
            lines.append(_formula_text(r, glosses))
    else:
        lines.append("none")
    lines.append("")
    lines.append("Derived Implications:")
    if model.derived:
        for imp in model.derived:
            lines.append(str(imp))
    else:
        lines.append("none")
    return "\n".join(lines) + "\n"


# --- truth tables ---------------------------------------------------------------


def _collect_atoms(formulas: Iterable[PropFormula], order: list[str]) -> None:
    for f in formulas:
        if isinstance(f, Atom):
            if f.symbol not in order:
                order.append(f.symbol)
        elif isinstance(f, Not):
            _collect_atoms([f.operand], order)
        elif isinstance(f, (And, Or, Implies, Equivalent)):
            _collect_atoms([f.left, f.right], order)


def _atom_pattern(j: int, width: int) -> int:
    """Truth table of atom j over all 2**width assignments.

    Assignment i makes atom j true iff bit j of i is set, so the table is
    the periodic pattern of 2**j zeros followed by 2**j ones.
    """

    block = 1 << j
    unit_len = 2 * block
    reps = (1 << width) // unit_len
    repeater = ((1 << (unit_len * reps)) - 1) // ((1 << unit_len) - 1)
    return repeater * (((1 << block) - 1) << block)


class _Tables:
    """Truth tables as assignment bitmasks over a fixed atom order.

    Bit i of a mask is set iff assignment i (atom j true iff bit j of i is
    set) satisfies the formula: exhaustive enumeration, one table at a time.
    """

    def __init__(self, formulas: Sequence[PropFormula], declared: Sequence[str] = ()):
        order = list(declared)
        _collect_atoms(formulas, order)
        if len(order) > ATOM_LIMIT:
            raise TooManyAtoms(len(order))
        self.order = order
        self.width = len(order)
        self.index = {s: i for i, s in enumerate(order)}
        self.full = (1 << (1 << self.width)) - 1
        self._atoms = {
            s: _atom_pattern(j, self.width) for s, j in self.index.items()
        }

    def mask(self, f: PropFormula) -> int:
        if isinstance(f, Atom):
            return self._atoms[f.symbol]
        if isinstance(f, _Constant):
            return self.full if f.value else 0
        if isinstance(f, Not):
            return self.full & ~self.mask(f.operand)
        left = self.mask(f.left)
        right = self.mask(f.right)
        if isinstance(f, And):
            return left & right
        if isinstance(f, Or):
            return left | right
        if isinstance(f, Implies):
            return (self.full & ~left) | right
        return self.full & ~(left ^ right)


def entails(premises: Sequence[PropFormula], goal: PropFormula) -> bool:
    """True iff every assignment satisfying all premises satisfies the goal."""

    tables = _Tables(list(premises) + [goal])
    satisfied = tables.full
    for p in premises:
        satisfied &= tables.mask(p)
    return satisfied & ~tables.mask(goal) == 0


def equivalent(f: PropFormula, g: PropFormula) -> bool:
    """True iff the two formulas agree under every assignment."""

    tables = _Tables([f, g])
    return tables.mask(f) == tables.mask(g)


def simplify(f: PropFormula) -> PropFormula:
    """Light canonicalisation: double negation, And/Or identities with the
    constants, and Equivalent unfolded into the two implications."""

    if isinstance(f, Not):
        inner = simplify(f.operand)
        if isinstance(inner, Not):
            return inner.operand
        if isinstance(inner, _Constant):
            return FALSE if inner.value else TRUE
        return Not(inner)
    if isinstance(f, And):
        left, right = simplify(f.left), simplify(f.right)
        if left == TRUE:
            return right
        if right == TRUE:
            return left
        if FALSE in (left, right):
            return FALSE
        return And(left, right)
    if isinstance(f, Or):
        left, right = simplify(f.left), simplify(f.right)
        if left == FALSE:
            return right
        if right == FALSE:
            return left
        if TRUE in (left, right):
            return TRUE
        return Or(left, right)
    if isinstance(f, Implies):
        return Implies(simplify(f.left), simplify(f.right))
    if isinstance(f, Equivalent):
        left, right = simplify(f.left), simplify(f.right)
        return And(Implies(left, right), Implies(right, left))
    return f


def derive_implications(model: PropositionalModel) -> PropositionalModel:
    """Enumerate ordered pairs of distinct literals over the declared atoms
    and keep every implication that the relations entail, is not a tautology
    on its own, and is not equivalent to an initial relation (or to either
    conjunct of an unfolded Equivalent).

    Returns a new model with the ``derived`` field replaced.  With no
    relations there is nothing to entail and the derived list is empty.
    """

    if not model.relations:
        return replace(model, derived=())

    declared = [a.symbol for a in model.atoms]
    tables = _Tables(list(model.relations), declared)
    premise_mask = tables.full
    for r in model.relations:
        premise_mask &= tables.mask(r)

    reference_masks = []
    for r in model.relations:
        canonical = simplify(r)
        reference_masks.append(tables.mask(canonical))
        if isinstance(r, Equivalent):
            # Both directions of an equivalence are already stated, not new.
            assert isinstance(canonical, And)
            reference_masks.append(tables.mask(canonical.left))
            reference_masks.append(tables.mask(canonical.right))

    literals = []
    for symbol in declared:
        literals.append(Literal(symbol, False))
        literals.append(Literal(symbol, True))

    derived = []
    for antecedent in literals:
        for consequent in literals:
            if antecedent == consequent:
                continue
            candidate = Implies(antecedent.formula(), consequent.formula())
            mask = tables.mask(candidate)
            if mask == tables.full:
                continue  # valid on its own, carries no information
            if any(mask == ref for ref in reference_masks):
                continue  # restates an initial relation
            if premise_mask & ~mask == 0:
                derived.append(Implication(antecedent, consequent))
    return replace(model, derived=tuple(derived))
