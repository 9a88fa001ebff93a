"""Iterative verify-and-refine loop for explanation checking.

One instance runs through up to ``max_iterations`` refinement rounds after the
initial attempt.  Every round formalises the current sentences, repairs the
theory until the prover accepts its syntax, rejects inconsistent axiom sets,
then tries a direct proof and, failing that, a guided proof sketch whose
placeholder steps are discharged one by one.  A failed round turns the prover
feedback into refined explanation sentences for the next round.

Everything recorded here is deterministic: records carry content digests and
verdicts, never timestamps, so replayed runs serialise byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from dataclasses import replace as _replace
from enum import Enum
from typing import Optional, Sequence

from .informalise import UnsupportedShape, faithfulness
from .llm import (
    CassetteMiss,
    FormalisationAnswer,
    LLMGateway,
    MalformedAnswer,
    ProviderError,
    Stage,
    TemplateError,
)
from .logic import ParseError, parse_formula, render_formula
from .propositional import TooManyAtoms, derive_implications, format_logical_information
from .prover import (
    CassetteMismatch,
    ProofFound,
    SessionDown,
    StepFailed,
    SyntaxFault,
    Timeout,
    step_probe,
    theory_digest,
    verdict_to_dict,
)
from .theory import (
    AXIOM_LABEL_PREFIX,
    NLIInstance,
    ProofOutcome,
    TheoryDoc,
    TheoryParseError,
    build_false_theorem,
    build_theory,
    parse_theory,
    render_theory,
    substitute_atp,
)


class Status(Enum):
    IN_PROGRESS = "in_progress"
    VALID_INITIAL = "valid_initial"
    VALID_REFINED = "valid_refined"
    EXHAUSTED = "exhausted"
    ABORTED = "aborted"


@dataclass(frozen=True)
class PipelineOptions:
    max_iterations: int = 10
    max_syntax_repairs: int = 5
    quantifier_refine: bool = True
    quantifier_refine_first_iteration_only: bool = False
    syntax_refine: bool = True
    logical_relations: bool = True
    detailed_feedback: bool = True
    compute_faithfulness: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.max_syntax_repairs < 0:
            raise ValueError("max_syntax_repairs must be >= 0")


@dataclass
class IterationRecord:
    """Everything one round did, in submission order."""

    iteration: int
    explanations: tuple[str, ...]
    new_sentences: tuple[str, ...] = ()
    syntax_repairs: int = 0
    theory_text: Optional[str] = None
    consistency_text: Optional[str] = None
    logic_block: Optional[str] = None
    derivation_skipped: Optional[str] = None
    sketch_text: Optional[str] = None
    prover_events: list[dict] = field(default_factory=list)
    result: str = "in_progress"
    failure_message: Optional[str] = None
    feedback: Optional[str] = None
    proof_text: Optional[str] = None
    used_axioms: tuple[str, ...] = ()
    used_sentences: tuple[str, ...] = ()
    uses_assumption: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "explanations": list(self.explanations),
            "new_sentences": list(self.new_sentences),
            "syntax_repairs": self.syntax_repairs,
            "theory_sha256": (
                theory_digest(self.theory_text) if self.theory_text else None
            ),
            "consistency_sha256": (
                theory_digest(self.consistency_text) if self.consistency_text else None
            ),
            "logic_block": self.logic_block,
            "derivation_skipped": self.derivation_skipped,
            "sketch": self.sketch_text,
            "prover_events": self.prover_events,
            "result": self.result,
            "failure_message": self.failure_message,
            "feedback": self.feedback,
            "proof_text": self.proof_text,
            "used_axioms": list(self.used_axioms),
            "used_sentences": list(self.used_sentences),
            "uses_assumption": self.uses_assumption,
        }


@dataclass(frozen=True)
class FaithfulnessRow:
    """Similarity of one theory statement against its source sentence.

    Index 0 is the premise assumption when present, 1..k the explanation
    axioms, k+1 the hypothesis goal.  Statements the informaliser cannot
    verbalise keep a None similarity rather than a fake zero.
    """

    index: int
    original: str
    informalised: Optional[str]
    similarity: Optional[float]


@dataclass
class RefinementState:
    instance: NLIInstance
    status: Status = Status.IN_PROGRESS
    iterations: list[IterationRecord] = field(default_factory=list)
    final_explanations: tuple[str, ...] = ()
    pruned_explanations: tuple[str, ...] = ()
    final_theory: Optional[str] = None
    final_proof: Optional[str] = None
    faithfulness: tuple[FaithfulnessRow, ...] = ()
    llm_calls: int = 0
    prover_calls: int = 0
    error: Optional[str] = None

    @property
    def succeeded(self) -> bool:
        return self.status in (Status.VALID_INITIAL, Status.VALID_REFINED)

    @property
    def iterations_to_valid(self) -> Optional[int]:
        if not self.succeeded or not self.iterations:
            return None
        return self.iterations[-1].iteration

    def to_dict(self) -> dict:
        return {
            "id": self.instance.id,
            "status": self.status.value,
            "iterations": self.iterations_to_valid,
            "llm_calls": self.llm_calls,
            "prover_calls": self.prover_calls,
            "final_explanations": list(self.final_explanations),
            "pruned_explanations": list(self.pruned_explanations),
            "error": self.error,
        }


GENERIC_FEEDBACK = (
    "The hypothesis could not be proven from the premise and explanation sentences."
)

_ABORTS = (
    ProviderError,
    CassetteMiss,
    MalformedAnswer,
    TemplateError,
    SessionDown,
    CassetteMismatch,
)


class _RepairBudget:
    """Shared per-iteration allowance for syntax repair calls."""

    def __init__(self, limit: int, enabled: bool) -> None:
        self.left = limit
        self.enabled = enabled

    def take(self) -> bool:
        if not self.enabled or self.left <= 0:
            return False
        self.left -= 1
        return True


def _numbered(sentences: Sequence[str]) -> str:
    if not sentences:
        return "none"
    return "\n".join(f"{i}. {s}" for i, s in enumerate(sentences, 1))


def _sentence_block(instance: NLIInstance) -> str:
    lines = ["Premise Sentence:", _numbered(instance.premises)]
    lines += ["Hypothesis Sentence:", f"1. {instance.hypothesis}"]
    lines += ["Explanation Sentences:", _numbered(instance.explanations)]
    return "\n".join(lines)


def _explanatory_block(sentences: Sequence[str]) -> str:
    return "\n".join(
        f"Explanatory Sentence {i}: {s}" for i, s in enumerate(sentences, 1)
    )


def _render_raw_theory(instance: NLIInstance, answer: FormalisationAnswer) -> str:
    """Theory text from unparsed logical forms, mirroring render_theory.

    Used when a returned form does not parse: the broken text still has to
    reach the repair stage in the layout the repair prompt expects.
    """

    lines: list[str] = []
    total = len(answer.explanations)
    for k, (sentence, raw) in enumerate(
        zip(instance.explanations, answer.explanations), 1
    ):
        comment = f"(* Explanation {k}: {sentence} *)"
        binding = f'  {AXIOM_LABEL_PREFIX}{k}: "{raw}"'
        if k < total:
            binding += " and"
        if k == 1:
            lines.append(comment)
            lines.append("axiomatization where")
        else:
            lines.append("  " + comment)
        lines.append(binding)
    lines.append("theorem hypothesis:")
    for premise in instance.premises:
        lines.append(f"  (* Premise: {premise} *)")
    if answer.premises:
        lines.append(f'  assumes asm: "{" ∧ ".join(answer.premises)}"')
    lines.append(f"  (* Hypothesis: {instance.hypothesis} *)")
    lines.append(f'  shows "{answer.hypothesis}"')
    return "\n".join(lines) + "\n"


def run_instance(
    instance: NLIInstance,
    llm: LLMGateway,
    prover,
    options: PipelineOptions = PipelineOptions(),
) -> RefinementState:
    state = RefinementState(instance=instance)
    explanations = instance.explanations
    previous: Optional[tuple[str, ...]] = None
    calls_before = llm.call_count
    try:
        for iteration in range(options.max_iterations + 1):
            new = (
                ()
                if previous is None
                else tuple(s for s in explanations if s not in set(previous))
            )
            record = IterationRecord(
                iteration=iteration, explanations=explanations, new_sentences=new
            )
            state.iterations.append(record)
            working = NLIInstance(
                instance.id, instance.premises, instance.hypothesis, explanations
            )
            success = _run_iteration(record, working, llm, prover, options, iteration)
            if success is not None:
                doc, theory_text, outcome = success
                _finish_success(state, record, doc, theory_text, outcome, options)
                state.status = (
                    Status.VALID_INITIAL if iteration == 0 else Status.VALID_REFINED
                )
                break
            if iteration == options.max_iterations:
                state.status = Status.EXHAUSTED
                state.final_explanations = explanations
                break
            feedback = (
                record.failure_message
                if options.detailed_feedback and record.failure_message
                else GENERIC_FEEDBACK
            )
            record.feedback = feedback
            refined = llm.ask(
                Stage.REFINE_EXPLANATION,
                {
                    "premise_sentence": _numbered(instance.premises),
                    "hypothesis_sentence": instance.hypothesis,
                    "explanation_sentences": _numbered(explanations),
                    "feedback": feedback,
                },
            )
            previous = explanations
            explanations = tuple(refined)
    except _ABORTS as exc:
        state.status = Status.ABORTED
        state.error = f"{type(exc).__name__}: {exc}"
        state.final_explanations = explanations
    state.llm_calls = llm.call_count - calls_before
    state.prover_calls = sum(len(r.prover_events) for r in state.iterations)
    return state


def _run_iteration(
    record: IterationRecord,
    instance: NLIInstance,
    llm: LLMGateway,
    prover,
    options: PipelineOptions,
    iteration: int,
) -> Optional[tuple[TheoryDoc, str, ProofOutcome]]:
    """One round; returns (doc, theory text, proof outcome) on success.

    On failure the record's ``result`` and ``failure_message`` say why.
    """

    budget = _RepairBudget(options.max_syntax_repairs, options.syntax_refine)

    parse_text = llm.ask(
        Stage.SYNTACTIC_PARSE, {"sentences": _sentence_block(instance)}
    )
    answer = llm.ask(
        Stage.AUTOFORMALISE,
        {
            "premise_sentences": _numbered(instance.premises),
            "hypothesis_sentence": instance.hypothesis,
            "explanation_sentences": _numbered(instance.explanations),
            "syntactic_parse": parse_text,
        },
    )
    if len(answer.premises) != len(instance.premises) or len(
        answer.explanations
    ) != len(instance.explanations):
        raise MalformedAnswer(
            "logical form count does not match the sentence count",
            Stage.AUTOFORMALISE,
        )

    doc = _parse_forms(record, instance, answer, llm, budget)
    if doc is None:
        record.result = "syntax_exhausted"
        return None
    theory_text = render_theory(doc)
    record.theory_text = theory_text

    run_quantifier = options.quantifier_refine and (
        iteration == 0 or not options.quantifier_refine_first_iteration_only
    )
    if run_quantifier:
        refined_code = llm.ask(Stage.QUANTIFIER_REFINE, {"isabelle_code": theory_text})
        if refined_code is not None:
            new_doc = _parse_or_repair(
                record, refined_code, instance.id, llm, budget
            )
            if new_doc is None:
                record.result = "syntax_exhausted"
                return None
            doc = new_doc
            theory_text = render_theory(doc)
            record.theory_text = theory_text

    # The syntax gate doubles as the first proof attempt on the main theory.
    checked = _prover_checked(record, instance.id, doc, theory_text, llm, prover, budget)
    if checked is None:
        record.result = "syntax_exhausted"
        return None
    doc, theory_text, held_verdict = checked

    consistent = _consistency_gate(record, doc, theory_text, llm, prover, budget)
    if consistent is None:
        return None
    doc, theory_text, theory_changed = consistent

    if theory_changed:
        checked = _prover_checked(
            record, instance.id, doc, theory_text, llm, prover, budget
        )
        if checked is None:
            record.result = "syntax_exhausted"
            return None
        doc, theory_text, held_verdict = checked

    if isinstance(held_verdict, ProofFound):
        return doc, theory_text, held_verdict.outcome

    logic_block = "none"
    if options.logical_relations:
        model = llm.ask(
            Stage.EXTRACT_LOGIC,
            {"explanatory_sentences": _explanatory_block(instance.explanations)},
        )
        try:
            model = derive_implications(model)
        except TooManyAtoms as exc:
            record.derivation_skipped = str(exc)
        logic_block = format_logical_information(model)
        record.logic_block = logic_block

    sketch = llm.ask(
        Stage.PROOF_SKETCH,
        {
            "premise_sentence": _numbered(instance.premises),
            "explanation_sentences": _numbered(instance.explanations),
            "hypothesis_sentence": instance.hypothesis,
            "isabelle_code": theory_text,
            "logical_information": logic_block,
            "known_information": (
                render_formula(doc.assumption) if doc.assumption is not None else "none"
            ),
            "try_to_prove": render_formula(doc.goal),
        },
    )
    record.sketch_text = sketch.render_body()

    indices = sketch.placeholder_indices()
    if not indices:
        # Nothing to discharge stepwise: submit the sketch as a full proof.
        full_text = render_theory(_replace(doc, proof_body=sketch))
        verdict = _check_theory(record, prover, full_text, "full_proof")
        if isinstance(verdict, ProofFound):
            outcome = ProofOutcome(
                used_axiom_labels=verdict.outcome.used_axiom_labels,
                proof_text=sketch.render_body(),
                uses_assumption=verdict.outcome.uses_assumption,
            )
            return doc, theory_text, outcome
        record.result = "step_failed"
        record.failure_message = _describe_failure(verdict)
        return None

    current = sketch
    used: set[str] = set()
    uses_assumption = False
    for index in indices:
        probe = step_probe(theory_text, current, index)
        verdict = prover.check_step(theory_text, current, index)
        _log_event(record, prover, f"step_{index}", probe, verdict)
        if isinstance(verdict, ProofFound):
            used |= verdict.outcome.used_axiom_labels
            uses_assumption = uses_assumption or verdict.outcome.uses_assumption
            current = substitute_atp(current, index, verdict.outcome.proof_text)
            continue
        record.result = "step_failed"
        record.failure_message = _describe_step_failure(verdict, current, index)
        return None
    record.sketch_text = current.render_body()
    outcome = ProofOutcome(
        used_axiom_labels=frozenset(used),
        proof_text=current.render_body(),
        uses_assumption=uses_assumption,
    )
    return doc, theory_text, outcome


def _parse_forms(
    record: IterationRecord,
    instance: NLIInstance,
    answer: FormalisationAnswer,
    llm: LLMGateway,
    budget: _RepairBudget,
) -> Optional[TheoryDoc]:
    try:
        forms = {}
        for sentence, raw in zip(instance.premises, answer.premises):
            forms[sentence] = parse_formula(raw)
        forms[instance.hypothesis] = parse_formula(answer.hypothesis)
        for sentence, raw in zip(instance.explanations, answer.explanations):
            forms[sentence] = parse_formula(raw)
        return build_theory(instance, forms, name=instance.id)
    except ParseError as exc:
        raw_text = _render_raw_theory(instance, answer)
        return _repair_to_doc(record, raw_text, str(exc), instance.id, llm, budget)


def _parse_or_repair(
    record: IterationRecord,
    code: str,
    name: str,
    llm: LLMGateway,
    budget: _RepairBudget,
) -> Optional[TheoryDoc]:
    try:
        return parse_theory(code, name=name)
    except (ParseError, TheoryParseError) as exc:
        return _repair_to_doc(record, code, str(exc), name, llm, budget)


def _repair_to_doc(
    record: IterationRecord,
    code: str,
    error: str,
    name: str,
    llm: LLMGateway,
    budget: _RepairBudget,
) -> Optional[TheoryDoc]:
    while budget.take():
        record.syntax_repairs += 1
        corrected = llm.ask(
            Stage.SYNTAX_REFINE, {"isabelle_code": code, "error_message": error}
        )
        try:
            return parse_theory(corrected, name=name)
        except (ParseError, TheoryParseError) as exc:
            code, error = corrected, str(exc)
    record.failure_message = error
    return None


def _log_event(record: IterationRecord, prover, what: str, text: str, verdict) -> None:
    record.prover_events.append(
        {
            "what": what,
            "theory_sha256": theory_digest(text),
            "verdict": verdict_to_dict(verdict),
            "raw": getattr(prover, "last_raw", ""),
        }
    )


def _check_theory(record: IterationRecord, prover, text: str, what: str):
    verdict = prover.check_theory(text)
    _log_event(record, prover, what, text, verdict)
    return verdict


def _prover_checked(
    record: IterationRecord,
    name: str,
    doc: TheoryDoc,
    theory_text: str,
    llm: LLMGateway,
    prover,
    budget: _RepairBudget,
) -> Optional[tuple[TheoryDoc, str, object]]:
    """Submit the main theory, repairing syntax faults until accepted."""

    verdict = _check_theory(record, prover, theory_text, "main")
    while isinstance(verdict, SyntaxFault):
        new_doc = _repair_to_doc(record, theory_text, verdict.message, name, llm, budget)
        if new_doc is None:
            record.failure_message = verdict.message
            return None
        doc = new_doc
        theory_text = render_theory(doc)
        record.theory_text = theory_text
        verdict = _check_theory(record, prover, theory_text, "main")
    return doc, theory_text, verdict


def _consistency_gate(
    record: IterationRecord,
    doc: TheoryDoc,
    theory_text: str,
    llm: LLMGateway,
    prover,
    budget: _RepairBudget,
) -> Optional[tuple[TheoryDoc, str, bool]]:
    """Reject axiom sets that prove False; one repair attempt allowed.

    Anything other than a proof of False counts as consistent: a prover that
    cannot derive False within its budget is the best evidence available.
    """

    consistency_text = render_theory(build_false_theorem(doc))
    record.consistency_text = consistency_text
    verdict = _check_theory(record, prover, consistency_text, "consistency")
    if not isinstance(verdict, ProofFound):
        return doc, theory_text, False

    prover_output = getattr(prover, "last_raw", "") or verdict.outcome.proof_text
    corrected = llm.ask(
        Stage.CONSISTENCY_REFINE,
        {"isabelle_code": theory_text, "prover_output": prover_output},
    )
    new_doc = _parse_or_repair(record, corrected, doc.name, llm, budget)
    if new_doc is None:
        record.result = "inconsistent"
        return None
    doc = new_doc
    theory_text = render_theory(doc)
    record.theory_text = theory_text
    consistency_text = render_theory(build_false_theorem(doc))
    record.consistency_text = consistency_text
    verdict = _check_theory(record, prover, consistency_text, "consistency")
    if isinstance(verdict, ProofFound):
        record.result = "inconsistent"
        record.failure_message = (
            "the explanation axioms remain contradictory: a proof of False "
            f"was found ({verdict.outcome.proof_text})"
        )
        return None
    return doc, theory_text, True


def _describe_failure(verdict) -> str:
    if isinstance(verdict, StepFailed):
        return f"the proof failed: {verdict.message}"
    if isinstance(verdict, Timeout):
        return f"the prover timed out ({verdict.stage})"
    if isinstance(verdict, SyntaxFault):
        return f"the proof was rejected: {verdict.message}"
    return "the proof failed"


def _describe_step_failure(verdict, sketch, index: int) -> str:
    statement = sketch.steps[index].statement
    if isinstance(verdict, StepFailed):
        return (
            f"proof step {index} could not be proven: {statement!r}. "
            f"Prover message: {verdict.message}"
        )
    if isinstance(verdict, Timeout):
        return f"proof step {index} timed out: {statement!r}"
    if isinstance(verdict, SyntaxFault):
        return f"proof step {index} was rejected: {statement!r}: {verdict.message}"
    return f"proof step {index} failed: {statement!r}"


def _finish_success(
    state: RefinementState,
    record: IterationRecord,
    doc: TheoryDoc,
    theory_text: str,
    outcome: ProofOutcome,
    options: PipelineOptions,
) -> None:
    record.result = "proved"
    record.proof_text = outcome.proof_text
    record.used_axioms = tuple(sorted(outcome.used_axiom_labels))
    record.uses_assumption = outcome.uses_assumption

    label_to_sentence = {a.label: a.comment for a in doc.axioms}
    used_sentences = {
        label_to_sentence[label]
        for label in outcome.used_axiom_labels
        if label in label_to_sentence
    }
    record.used_sentences = tuple(
        s for s in record.explanations if s in used_sentences
    )

    # Pruning only ever happens off the back of a successful proof, and never
    # empties the set: a proof citing no axiom keeps every sentence.
    if record.used_sentences:
        state.final_explanations = record.used_sentences
        state.pruned_explanations = tuple(
            s for s in record.explanations if s not in used_sentences
        )
    else:
        state.final_explanations = record.explanations
        state.pruned_explanations = ()

    state.final_theory = theory_text
    state.final_proof = outcome.proof_text
    if options.compute_faithfulness:
        state.faithfulness = faithfulness_rows(doc)


def faithfulness_rows(doc: TheoryDoc) -> tuple[FaithfulnessRow, ...]:
    rows: list[FaithfulnessRow] = []
    if doc.assumption is not None:
        rows.append(
            _faithfulness_row(0, " ".join(doc.premise_comments), doc.assumption)
        )
    for k, axiom in enumerate(doc.axioms, 1):
        rows.append(_faithfulness_row(k, axiom.comment, axiom.formula))
    rows.append(
        _faithfulness_row(
            len(doc.axioms) + 1, doc.hypothesis_comment or "", doc.goal
        )
    )
    return tuple(rows)


def _faithfulness_row(index: int, original: str, formula) -> FaithfulnessRow:
    try:
        report = faithfulness(original, formula)
    except UnsupportedShape:
        return FaithfulnessRow(index, original, None, None)
    return FaithfulnessRow(index, original, report.informalised, report.similarity)


def compute_utility(record: IterationRecord) -> Optional[float]:
    """Share of a refinement's new sentences the eventual proof used.

    Defined as 1.0 when the refinement added nothing, and undefined (None)
    until the record's round actually produced a proof.
    """

    if not record.new_sentences:
        return 1.0
    if record.result != "proved":
        return None
    used = set(record.used_sentences)
    hits = sum(1 for s in record.new_sentences if s in used)
    return hits / len(record.new_sentences)


@dataclass(frozen=True)
class RunMetrics:
    total: int
    initial_valid: int
    final_valid: int
    initial_valid_pct: float
    final_valid_pct: float
    avg_iterations: Optional[float]
    avg_llm_calls: Optional[float]
    avg_utility: Optional[float]


def aggregate_metrics(states: Sequence[RefinementState]) -> RunMetrics:
    """Averages follow the reporting convention: iteration and call counts
    are taken over instances that end valid, and utility only over
    refinements that both added sentences and led to a proof."""

    total = len(states)
    initial = sum(1 for s in states if s.status is Status.VALID_INITIAL)
    final = sum(1 for s in states if s.succeeded)

    def pct(n: int) -> float:
        return 100.0 * n / total if total else 0.0

    iteration_counts = [
        s.iterations_to_valid for s in states if s.iterations_to_valid is not None
    ]
    call_counts = [s.llm_calls for s in states if s.succeeded]
    utilities = [
        utility
        for s in states
        for r in s.iterations
        if r.new_sentences
        for utility in [compute_utility(r)]
        if utility is not None
    ]

    def mean(values: Sequence[float]) -> Optional[float]:
        return sum(values) / len(values) if values else None

    return RunMetrics(
        total=total,
        initial_valid=initial,
        final_valid=final,
        initial_valid_pct=pct(initial),
        final_valid_pct=pct(final),
        avg_iterations=mean(iteration_counts),
        avg_llm_calls=mean(call_counts),
        avg_utility=mean(utilities),
    )


def format_metrics(metrics: RunMetrics) -> str:
    def fmt(value: Optional[float]) -> str:
        return "n/a" if value is None else f"{value:.2f}"

    lines = [
        f"instances: {metrics.total}",
        f"valid on first attempt: {metrics.initial_valid}"
        f" ({metrics.initial_valid_pct:.1f}%)",
        f"valid after refinement: {metrics.final_valid}"
        f" ({metrics.final_valid_pct:.1f}%)",
        f"average iterations to valid: {fmt(metrics.avg_iterations)}",
        f"average llm calls to valid: {fmt(metrics.avg_llm_calls)}",
        f"average refinement utility: {fmt(metrics.avg_utility)}",
    ]
    return "\n".join(lines) + "\n"
