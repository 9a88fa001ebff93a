"""Prover theories: axioms from explanation sentences, one theorem whose
assumption is the premise conjunction and whose goal is the hypothesis, plus
the proof-sketch machinery (steps with <ATP> placeholder tactics).

The rendered layout keeps the natural-language sentences next to their
logical forms as ``(* ... *)`` comments and is stable enough to be parsed
back; parse and render are inverse on canonical text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

from .logic import And, Falsity, Formula, ParseError, parse_formula, render_formula

__all__ = [
    "NLIInstance",
    "Axiom",
    "NamedTactic",
    "AtpPlaceholder",
    "ATP",
    "ProofStep",
    "ProofSketch",
    "ProofOutcome",
    "TheoryDoc",
    "MissingForm",
    "TheoryParseError",
    "IndexOutOfRange",
    "NotAPlaceholder",
    "build_theory",
    "build_false_theorem",
    "render_theory",
    "parse_theory",
    "parse_proof_lines",
    "extract_used_axioms",
    "substitute_atp",
]

AXIOM_LABEL_PREFIX = "explanation_"
CONSISTENCY_SUFFIX = "_consistency"


class MissingForm(Exception):
    """A sentence of the instance has no logical form to build from."""

    def __init__(self, sentence: str):
        self.sentence = sentence
        super().__init__(f"no logical form for sentence: {sentence!r}")


class TheoryParseError(Exception):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class IndexOutOfRange(LookupError):
    pass


class NotAPlaceholder(ValueError):
    pass


@dataclass(frozen=True)
class NLIInstance:
    id: str
    premises: tuple[str, ...]
    hypothesis: str
    explanations: tuple[str, ...]

    def __init__(
        self,
        id: str,
        premises: Sequence[str],
        hypothesis: str,
        explanations: Sequence[str],
    ):
        if not hypothesis.strip():
            raise ValueError("hypothesis must be non-empty")
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "premises", tuple(premises))
        object.__setattr__(self, "hypothesis", hypothesis)
        object.__setattr__(self, "explanations", tuple(explanations))


@dataclass(frozen=True)
class Axiom:
    label: str
    comment: str
    formula: Formula


@dataclass(frozen=True)
class NamedTactic:
    text: str


@dataclass(frozen=True)
class AtpPlaceholder:
    pass


ATP = AtpPlaceholder()
Tactic = Union[NamedTactic, AtpPlaceholder]


@dataclass(frozen=True)
class ProofStep:
    statement: str
    tactic: Tactic
    comments: tuple[str, ...] = ()

    def render(self) -> str:
        if isinstance(self.tactic, AtpPlaceholder):
            return f"{self.statement} <ATP>"
        if self.tactic.text:
            return f"{self.statement} {self.tactic.text}"
        return self.statement


@dataclass(frozen=True)
class ProofSketch:
    steps: tuple[ProofStep, ...]

    def placeholder_indices(self) -> list[int]:
        return [
            i for i, s in enumerate(self.steps) if isinstance(s.tactic, AtpPlaceholder)
        ]

    def render_body(self) -> str:
        lines = ["proof -"]
        for step in self.steps:
            for comment in step.comments:
                lines.append(f"  (* {comment} *)")
            lines.append("  " + step.render())
        lines.append("qed")
        return "\n".join(lines)


@dataclass(frozen=True)
class ProofOutcome:
    used_axiom_labels: frozenset[str]
    proof_text: str
    uses_assumption: bool = False


@dataclass(frozen=True)
class TheoryDoc:
    name: str
    axioms: tuple[Axiom, ...]
    assumption: Optional[Formula]
    goal: Formula
    proof_body: Optional[ProofSketch] = None
    premise_comments: tuple[str, ...] = ()
    hypothesis_comment: Optional[str] = None
    warnings: tuple[str, ...] = ()

    def axiom_labels(self) -> list[str]:
        return [a.label for a in self.axioms]


def build_theory(
    instance: NLIInstance,
    forms: Mapping[str, Formula],
    name: Optional[str] = None,
) -> TheoryDoc:
    """Assemble the theory for an instance from per-sentence logical forms.

    Axioms are labelled ``explanation_k`` in explanation order (1-based);
    premises conjoin under the single ``asm`` assumption; the hypothesis form
    becomes the goal.  A sentence without a form raises MissingForm.
    """

    def form_of(sentence: str) -> Formula:
        try:
            return forms[sentence]
        except KeyError:
            raise MissingForm(sentence) from None

    axioms = tuple(
        Axiom(f"{AXIOM_LABEL_PREFIX}{k}", sentence, form_of(sentence))
        for k, sentence in enumerate(instance.explanations, 1)
    )
    assumption: Optional[Formula] = None
    if instance.premises:
        parts = [form_of(p) for p in instance.premises]
        assumption = parts[-1]
        for part in reversed(parts[:-1]):
            assumption = And(part, assumption)
    warnings = ()
    if not axioms:
        warnings = ("explanation set is empty: theory has no axioms",)
    return TheoryDoc(
        name=name or instance.id,
        axioms=axioms,
        assumption=assumption,
        goal=form_of(instance.hypothesis),
        premise_comments=instance.premises,
        hypothesis_comment=instance.hypothesis,
        warnings=warnings,
    )


def build_false_theorem(doc: TheoryDoc) -> TheoryDoc:
    """Same axioms and assumption, goal replaced by Falsity.

    Proving this theory means the axioms (with the assumption) are
    inconsistent.  Idempotent: applying it twice changes nothing further.
    """

    name = doc.name
    if not name.endswith(CONSISTENCY_SUFFIX):
        name += CONSISTENCY_SUFFIX
    return replace(
        doc,
        name=name,
        goal=Falsity(),
        proof_body=None,
        hypothesis_comment=None,
    )


def render_theory(doc: TheoryDoc) -> str:
    lines: list[str] = []
    for i, axiom in enumerate(doc.axioms):
        number = axiom.label.removeprefix(AXIOM_LABEL_PREFIX) or str(i + 1)
        comment = f"(* Explanation {number}: {axiom.comment} *)"
        formula = render_formula(axiom.formula)
        binding = f'  {axiom.label}: "{formula}"'
        if i + 1 < len(doc.axioms):
            binding += " and"
        if i == 0:
            lines.append(comment)
            lines.append("axiomatization where")
        else:
            lines.append("  " + comment)
        lines.append(binding)
    lines.append("theorem hypothesis:")
    for premise in doc.premise_comments:
        lines.append(f"  (* Premise: {premise} *)")
    if doc.assumption is not None:
        lines.append(f'  assumes asm: "{render_formula(doc.assumption)}"')
    if doc.hypothesis_comment is not None:
        lines.append(f"  (* Hypothesis: {doc.hypothesis_comment} *)")
    lines.append(f'  shows "{render_formula(doc.goal)}"')
    if doc.proof_body is not None:
        lines.append(doc.proof_body.render_body())
    return "\n".join(lines) + "\n"


_COMMENT = re.compile(r"^\(\*\s*(.*?)\s*\*\)$")
_AXIOM_BINDING = re.compile(r'^(\w+)\s*:\s*"(.*)"\s*(and)?\s*$')
_EXPLANATION_COMMENT = re.compile(r"^Explanation\s+\d+\s*:\s*(.*)$")
_PREMISE_COMMENT = re.compile(r"^Premise\s*:\s*(.*)$")
_HYPOTHESIS_COMMENT = re.compile(r"^Hypothesis\s*:\s*(.*)$")
_ASSUMES = re.compile(r'^assumes\s+(\w+)\s*:\s*"(.*)"$')
_SHOWS = re.compile(r'^shows\s+"(.*)"$')


def _parse_formula_at(text: str, line_no: int) -> Formula:
    try:
        return parse_formula(text)
    except ParseError as exc:
        raise TheoryParseError(f"bad formula {text!r}: {exc}", line_no) from exc


def parse_proof_lines(
    lines: Sequence[tuple[int, str]],
) -> ProofSketch:
    """Parse the body between ``proof -`` and ``qed`` into steps.

    A trailing ``<ATP>`` marks a placeholder tactic; otherwise the tactic is
    the trailing ``by ...`` clause when present, empty when not.  Comment
    lines attach to the following step.
    """

    steps: list[ProofStep] = []
    comments: list[str] = []
    for line_no, raw in lines:
        line = raw.strip()
        if not line:
            continue
        comment = _COMMENT.match(line)
        if comment:
            comments.append(comment.group(1))
            continue
        tactic: Tactic
        if line.endswith("<ATP>"):
            statement = line[: -len("<ATP>")].strip()
            tactic = ATP
        else:
            at = line.rfind(" by ")
            if at >= 0:
                statement = line[:at].rstrip()
                tactic = NamedTactic(line[at + 1:])
            else:
                statement = line
                tactic = NamedTactic("")
        if not statement:
            raise TheoryParseError("proof step without a statement", line_no)
        steps.append(ProofStep(statement, tactic, tuple(comments)))
        comments = []
    return ProofSketch(tuple(steps))


def parse_theory(text: str, name: str = "theory") -> TheoryDoc:
    """Parse rendered theory text back into a TheoryDoc."""

    axioms: list[Axiom] = []
    premise_comments: list[str] = []
    hypothesis_comment: Optional[str] = None
    assumption: Optional[Formula] = None
    goal: Optional[Formula] = None
    proof_lines: list[tuple[int, str]] = []
    sketch: Optional[ProofSketch] = None

    pending_comments: list[str] = []
    in_axioms = False
    in_proof = False
    saw_proof = False

    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if in_proof:
            if line == "qed":
                in_proof = False
                sketch = parse_proof_lines(proof_lines)
            else:
                proof_lines.append((line_no, line))
            continue
        comment = _COMMENT.match(line)
        if comment:
            pending_comments.append(comment.group(1))
            continue
        if line == "axiomatization where":
            in_axioms = True
            continue
        if line.startswith("theorem"):
            in_axioms = False
            continue
        if line == "proof -":
            in_proof = True
            saw_proof = True
            continue
        binding = _AXIOM_BINDING.match(line)
        if in_axioms and binding:
            label, formula_text, _ = binding.groups()
            comment_text = ""
            for c in pending_comments:
                explanation = _EXPLANATION_COMMENT.match(c)
                comment_text = explanation.group(1) if explanation else c
            pending_comments = []
            axioms.append(
                Axiom(label, comment_text, _parse_formula_at(formula_text, line_no))
            )
            continue
        assumes = _ASSUMES.match(line)
        if assumes:
            for c in pending_comments:
                premise = _PREMISE_COMMENT.match(c)
                if premise:
                    premise_comments.append(premise.group(1))
            pending_comments = []
            assumption = _parse_formula_at(assumes.group(2), line_no)
            continue
        shows = _SHOWS.match(line)
        if shows:
            for c in pending_comments:
                hypothesis = _HYPOTHESIS_COMMENT.match(c)
                if hypothesis:
                    hypothesis_comment = hypothesis.group(1)
            pending_comments = []
            goal = _parse_formula_at(shows.group(1), line_no)
            continue
        raise TheoryParseError(f"unrecognised line {line!r}", line_no)

    if in_proof:
        raise TheoryParseError("unterminated proof body (missing 'qed')")
    if goal is None:
        raise TheoryParseError("theory has no 'shows' goal")
    return TheoryDoc(
        name=name,
        axioms=tuple(axioms),
        assumption=assumption,
        goal=goal,
        proof_body=sketch if saw_proof else None,
        premise_comments=tuple(premise_comments),
        hypothesis_comment=hypothesis_comment,
    )


_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def extract_used_axioms(proof_text: str, declared: Sequence[str]) -> ProofOutcome:
    """Declared labels cited as standalone tokens anywhere in the proof.

    ``asm``/``assms`` citations set ``uses_assumption`` instead of entering
    the label set, so the set is always a subset of the declared labels.
    """

    tokens = set(_TOKEN.findall(proof_text))
    used = frozenset(label for label in declared if label in tokens)
    return ProofOutcome(
        used_axiom_labels=used,
        proof_text=proof_text,
        uses_assumption=bool({"asm", "assms"} & tokens),
    )


def substitute_atp(sketch: ProofSketch, step_index: int, proof_line: str) -> ProofSketch:
    """Replace the <ATP> placeholder of one step with a concrete tactic."""

    if not 0 <= step_index < len(sketch.steps):
        raise IndexOutOfRange(
            f"step {step_index} out of range for a {len(sketch.steps)}-step sketch"
        )
    step = sketch.steps[step_index]
    if not isinstance(step.tactic, AtpPlaceholder):
        raise NotAPlaceholder(f"step {step_index} already has tactic {step.tactic!r}")
    steps = list(sketch.steps)
    steps[step_index] = replace(step, tactic=NamedTactic(proof_line.strip()))
    return ProofSketch(tuple(steps))
