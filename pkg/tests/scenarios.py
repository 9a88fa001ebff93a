"""Shared test fixtures: scripted pipeline scenarios and random generators.

A scenario bundles an instance with the scripted model answers and prover
outputs that drive one deterministic pipeline run.  The same data can be
used in process (`gateway()` / `prover()`) or written out as cassette files
for command line runs (`write_cassette()`).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from nlproof.llm import LLMGateway, LLMRecord, ReplayProvider, load_templates
from nlproof.logic import (
    And,
    Exists,
    Falsity,
    Forall,
    Formula,
    Iff,
    Implies,
    Not,
    Or,
    Predicate,
    Truth,
    Var,
)
from nlproof.propositional import (
    And as PAnd,
    Atom,
    Equivalent,
    Implies as PImplies,
    Not as PNot,
    Or as POr,
    PropAtom,
    PropositionalModel,
)
from nlproof.prover import MockProver, ProverRecord, classify_output
from nlproof.theory import NLIInstance, TheoryDoc, build_theory

_TEMPLATES = load_templates()


@dataclass(frozen=True)
class Scenario:
    instance: NLIInstance
    llm_responses: tuple[tuple[str, str], ...]  # (stage value, response)
    prover_raws: tuple[str, ...]


def gateway(scenario: Scenario) -> LLMGateway:
    records = [
        LLMRecord(stage=stage, prompt_sha256="*", response=response)
        for stage, response in scenario.llm_responses
    ]
    return LLMGateway(ReplayProvider(records), _TEMPLATES)


def prover(scenario: Scenario) -> MockProver:
    return MockProver(
        [ProverRecord("*", classify_output(raw), raw) for raw in scenario.prover_raws]
    )


def write_cassette(directory: Path, scenario: Scenario) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "llm.jsonl", "w", encoding="utf-8") as handle:
        for stage, response in scenario.llm_responses:
            record = LLMRecord(stage=stage, prompt_sha256="*", response=response)
            handle.write(record.to_json() + "\n")
    with open(directory / "prover.jsonl", "w", encoding="utf-8") as handle:
        for raw in scenario.prover_raws:
            handle.write(
                json.dumps({"theory_sha256": "*", "raw": raw}, ensure_ascii=False)
                + "\n"
            )


def write_instances(path: Path, *instances: NLIInstance) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for instance in instances:
            handle.write(
                json.dumps(
                    {
                        "id": instance.id,
                        "premises": list(instance.premises),
                        "hypothesis": instance.hypothesis,
                        "explanations": list(instance.explanations),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


# --- scenario A: valid on the first attempt ---------------------------------------

VIOLIN_PREMISE = (
    "A smiling woman is playing the violin in front of a turquoise background."
)
VIOLIN_HYPOTHESIS = "A woman is playing an instrument."
VIOLIN_EXPLANATION = "A violin is an instrument."

_A_PARSE = """Premise Sentence:
1. A smiling woman is playing the violin in front of a turquoise background.
Subject: A smiling woman
Verb Phrase: is playing the violin
 - Main Verb: playing
 - Auxiliary Verb: is
Direct Object: the violin
Hypothesis Sentence:
1. A woman is playing an instrument.
Subject: A woman
Verb Phrase: is playing an instrument
 - Main Verb: playing
 - Auxiliary Verb: is
Direct Object: an instrument
Explanation Sentences:
1. A violin is an instrument.
Subject: A violin
Verb Phrase: is an instrument
 - Main Verb: is
Direct Object: an instrument"""

_A_FORMS = """Premise 1: ∃x y e. Woman x ∧ Smiling x ∧ Violin y ∧ Play e ∧ Agent e x ∧ Patient e y
Hypothesis: ∃x y e. Woman x ∧ Instrument y ∧ Play e ∧ Agent e x ∧ Patient e y
Explanation 1: ∀x. Violin x ⟶ Instrument x"""

NO_CHANGE = "All quantifiers are defined correctly. No changes are needed."

_A_LOGIC = """Logical Propositions:
A: a violin (from Explanatory Sentence 1)
B: an instrument (from Explanatory Sentence 1)

Logical Relations:
Implies(A, B): A → B"""

_A_SKETCH = """proof -
  (* The violin the woman plays is an instrument. *)
  from asm have "∃x y e. Woman x ∧ Violin y ∧ Play e ∧ Agent e x ∧ Patient e y" <ATP>
  then have "∃x y e. Woman x ∧ Instrument y ∧ Play e ∧ Agent e x ∧ Patient e y" <ATP>
  then show ?thesis <ATP>
qed"""

NO_PROOF = "No proof found"

SCENARIO_A = Scenario(
    instance=NLIInstance(
        id="esnli_0",
        premises=(VIOLIN_PREMISE,),
        hypothesis=VIOLIN_HYPOTHESIS,
        explanations=(VIOLIN_EXPLANATION,),
    ),
    llm_responses=(
        ("syntactic_parse", _A_PARSE),
        ("autoformalise", _A_FORMS),
        ("quantifier_refine", NO_CHANGE),
        ("extract_logic", _A_LOGIC),
        ("proof_sketch", _A_SKETCH),
    ),
    prover_raws=(
        NO_PROOF,
        NO_PROOF,
        "Try this: by (metis asm)",
        "Try this: by (metis explanation_1)",
        "Try this: by blast",
    ),
)

A_FINAL_THEORY = """(* Explanation 1: A violin is an instrument. *)
axiomatization where
  explanation_1: "∀x. Violin x ⟶ Instrument x"
theorem hypothesis:
  (* Premise: A smiling woman is playing the violin in front of a turquoise background. *)
  assumes asm: "∃x y e. Woman x ∧ Smiling x ∧ Violin y ∧ Play e ∧ Agent e x ∧ Patient e y"
  (* Hypothesis: A woman is playing an instrument. *)
  shows "∃x y e. Woman x ∧ Instrument y ∧ Play e ∧ Agent e x ∧ Patient e y"
"""

A_FINAL_PROOF = """proof -
  (* The violin the woman plays is an instrument. *)
  from asm have "∃x y e. Woman x ∧ Violin y ∧ Play e ∧ Agent e x ∧ Patient e y" by (metis asm)
  then have "∃x y e. Woman x ∧ Instrument y ∧ Play e ∧ Agent e x ∧ Patient e y" by (metis explanation_1)
  then show ?thesis by blast
qed"""

A_LOGIC_BLOCK = """Logical Propositions:
A: a violin (from Explanatory Sentence 1)
B: an instrument (from Explanatory Sentence 1)

Logical Relations:
Implies(A, B)
Implies(a violin, an instrument)

Derived Implications:
none
"""


# --- scenario B: valid after one refinement round ----------------------------------

VIRUS_HYPOTHESIS = "Some viruses have a coating of phospholipids."
VIRUS_INITIAL = (
    "Some viruses have an envelope of phospholipids and proteins.",
    "Proteins are sometimes coats of a virus.",
)
VIRUS_REFINED = VIRUS_INITIAL + (
    "An envelope can be considered a type of coating.",
    "Phospholipids are a component of the envelope of some viruses.",
)

_B_PARSE_0 = """Premise Sentence:
none
Hypothesis Sentence:
1. Some viruses have a coating of phospholipids.
Subject: Some viruses
Verb Phrase: have a coating of phospholipids
 - Main Verb: have
Direct Object: a coating of phospholipids
Explanation Sentences:
1. Some viruses have an envelope of phospholipids and proteins.
Subject: Some viruses
Verb Phrase: have an envelope of phospholipids and proteins
 - Main Verb: have
Direct Object: an envelope of phospholipids and proteins
2. Proteins are sometimes coats of a virus.
Subject: Proteins
Verb Phrase: are sometimes coats of a virus
 - Main Verb: are
Direct Object: coats of a virus"""

_B_PARSE_1 = _B_PARSE_0 + """
3. An envelope can be considered a type of coating.
Subject: An envelope
Verb Phrase: can be considered a type of coating
 - Main Verb: considered
 - Auxiliary Verb: can be
Direct Object: a type of coating
4. Phospholipids are a component of the envelope of some viruses.
Subject: Phospholipids
Verb Phrase: are a component of the envelope of some viruses
 - Main Verb: are
Direct Object: a component of the envelope"""

_B_HYP_FORM = "∃x y. Virus x ∧ Coating y ∧ Phospholipid y ∧ Have x y"
_B_E1_FORM = "∃x y. Virus x ∧ Envelope y ∧ Phospholipid y ∧ Protein y ∧ Have x y"
_B_E2_FORM = "∃x y. Protein x ∧ Virus y ∧ CoatOf x y"
_B_E3_FORM = "∀x. Envelope x ⟶ Coating x"
_B_E4_FORM = "∃x y. Phospholipid x ∧ Envelope y ∧ ComponentOf x y"

_B_FORMS_0 = f"""Hypothesis: {_B_HYP_FORM}
Explanation 1: {_B_E1_FORM}
Explanation 2: {_B_E2_FORM}"""

_B_FORMS_1 = f"""Hypothesis: {_B_HYP_FORM}
Explanation 1: {_B_E1_FORM}
Explanation 2: {_B_E2_FORM}
Explanation 3: {_B_E3_FORM}
Explanation 4: {_B_E4_FORM}"""

_B_LOGIC_0 = """Logical Propositions:
A: viruses have an envelope of phospholipids and proteins (from Explanatory Sentence 1)
B: proteins are coats of a virus (from Explanatory Sentence 2)

Logical Relations:
none"""

_B_LOGIC_1 = """Logical Propositions:
A: viruses have an envelope of phospholipids and proteins (from Explanatory Sentence 1)
B: proteins are coats of a virus (from Explanatory Sentence 2)
C: an envelope is a type of coating (from Explanatory Sentence 3)
D: phospholipids are a component of the envelope (from Explanatory Sentence 4)

Logical Relations:
Implies(A, D): A → D"""

_B_SKETCH_0 = """proof -
  from explanation_1 have "∃x y. Virus x ∧ Envelope y ∧ Phospholipid y ∧ Have x y" <ATP>
  then show ?thesis <ATP>
qed"""

_B_SKETCH_1 = """proof -
  from explanation_1 explanation_4 have "∃x y. Virus x ∧ Envelope y ∧ Phospholipid y ∧ Have x y" <ATP>
  then show ?thesis <ATP>
qed"""

_B_REFINED_ANSWER = "\n".join(
    f"{i}. {sentence}" for i, sentence in enumerate(VIRUS_REFINED, 1)
)

SCENARIO_B = Scenario(
    instance=NLIInstance(
        id="qasc_1",
        premises=(),
        hypothesis=VIRUS_HYPOTHESIS,
        explanations=VIRUS_INITIAL,
    ),
    llm_responses=(
        ("syntactic_parse", _B_PARSE_0),
        ("autoformalise", _B_FORMS_0),
        ("quantifier_refine", NO_CHANGE),
        ("extract_logic", _B_LOGIC_0),
        ("proof_sketch", _B_SKETCH_0),
        ("refine_explanation", _B_REFINED_ANSWER),
        ("syntactic_parse", _B_PARSE_1),
        ("autoformalise", _B_FORMS_1),
        ("quantifier_refine", NO_CHANGE),
        ("extract_logic", _B_LOGIC_1),
        ("proof_sketch", _B_SKETCH_1),
    ),
    prover_raws=(
        NO_PROOF,
        NO_PROOF,
        NO_PROOF,
        NO_PROOF,
        NO_PROOF,
        "Try this: by (metis explanation_1 explanation_3)",
        "Try this: by (metis explanation_2 explanation_4)",
    ),
)

B_FINAL_THEORY = f"""(* Explanation 1: {VIRUS_REFINED[0]} *)
axiomatization where
  explanation_1: "{_B_E1_FORM}" and
  (* Explanation 2: {VIRUS_REFINED[1]} *)
  explanation_2: "{_B_E2_FORM}" and
  (* Explanation 3: {VIRUS_REFINED[2]} *)
  explanation_3: "{_B_E3_FORM}" and
  (* Explanation 4: {VIRUS_REFINED[3]} *)
  explanation_4: "{_B_E4_FORM}"
theorem hypothesis:
  (* Hypothesis: {VIRUS_HYPOTHESIS} *)
  shows "{_B_HYP_FORM}"
"""


# A complete worked theory with a mixed proof body: named tactics,
# placeholders, and comments that must survive a parse/render cycle.
PARK_THEORY = """(* Explanation 1: A man and woman are at the park. *)
axiomatization where
  explanation_1: "∃x y z. Man x ∧ Woman y ∧ Park z ∧ At x z ∧ At y z"
theorem hypothesis:
  (* Premise: A man and woman sit on a park bench with a set of newlyweds behind *)
  assumes asm: "Man x ∧ Woman y ∧ ParkBench z ∧ Newlyweds w ∧ Sit e ∧ Agent e x ∧ Agent e y ∧ Patient e z ∧ Behind w z"
  (* Hypothesis: People outside *)
  shows "∃x. People x ∧ Outside x"
proof -
  (* From the premise, we have information about a man and a woman sitting on a park bench. *)
  from asm have "Man x ∧ Woman y" by blast
  (* Explanation 1 states that a man and a woman are at the park. *)
  (* This implies that they are outside, as parks are typically outdoor locations. *)
  from explanation_1 have "∃x y z. Man x ∧ Woman y ∧ Park z ∧ At x z ∧ At y z" by blast
  (* Since a man and a woman are at the park, they are outside. *)
  then have "People x ∧ Outside x" <ATP>
  then show ?thesis <ATP>
qed
"""


# --- bounded-failure scenarios ------------------------------------------------------

_LOOP_PARSE = """Hypothesis Sentence:
1. The hypothesis holds.
Subject: The hypothesis
Verb Phrase: holds
 - Main Verb: holds"""

_LOOP_FORMS = """Hypothesis: Hyp x
Explanation 1: Fact x"""

_LOOP_SKETCH = """proof -
  show ?thesis <ATP>
qed"""


def perpetual_failure(max_iterations: int = 10) -> Scenario:
    """Every round fails its single proof step; refinement never helps."""

    llm: list[tuple[str, str]] = []
    raws: list[str] = []
    for iteration in range(max_iterations + 1):
        llm.append(("syntactic_parse", _LOOP_PARSE))
        llm.append(("autoformalise", _LOOP_FORMS))
        llm.append(("proof_sketch", _LOOP_SKETCH))
        raws.extend([NO_PROOF, NO_PROOF, NO_PROOF])
        if iteration < max_iterations:
            llm.append(
                ("refine_explanation", f"1. Attempt {iteration + 1} supporting fact.")
            )
    return Scenario(
        instance=NLIInstance(
            id="loop_0",
            premises=(),
            hypothesis="The hypothesis holds.",
            explanations=("The supporting fact holds.",),
        ),
        llm_responses=tuple(llm),
        prover_raws=tuple(raws),
    )


SYNTAX_ERROR = "Inner syntax error (line 2): malformed formula"


def persistent_syntax(max_repairs: int = 5) -> Scenario:
    """The prover rejects every (re)submission as a syntax fault."""

    llm: list[tuple[str, str]] = [
        ("syntactic_parse", _LOOP_PARSE),
        ("autoformalise", _LOOP_FORMS),
    ]
    for attempt in range(1, max_repairs + 1):
        llm.append(
            (
                "syntax_refine",
                "axiomatization where\n"
                f'  explanation_1: "Fact{attempt} x"\n'
                "theorem hypothesis:\n"
                '  shows "Hyp x"',
            )
        )
    return Scenario(
        instance=NLIInstance(
            id="syntax_0",
            premises=(),
            hypothesis="The hypothesis holds.",
            explanations=("The supporting fact holds.",),
        ),
        llm_responses=tuple(llm),
        prover_raws=tuple([SYNTAX_ERROR] * (max_repairs + 1)),
    )


def consistency_repair() -> Scenario:
    """Contradictory axioms get one repair, then the round succeeds."""

    corrected = """(* Explanation 1: The first fact holds. *)
axiomatization where
  explanation_1: "Fact x" and
  (* Explanation 2: The second fact holds. *)
  explanation_2: "Other x"
theorem hypothesis:
  (* Hypothesis: The conclusion holds. *)
  shows "Goal x"
"""
    return Scenario(
        instance=NLIInstance(
            id="incon_0",
            premises=(),
            hypothesis="The conclusion holds.",
            explanations=("The first fact holds.", "The second fact holds."),
        ),
        llm_responses=(
            ("syntactic_parse", _LOOP_PARSE),
            ("autoformalise", "Hypothesis: Goal x\nExplanation 1: Fact x\nExplanation 2: ¬Fact x"),
            ("consistency_refine", corrected),
            ("proof_sketch", _LOOP_SKETCH),
        ),
        prover_raws=(
            NO_PROOF,
            "Try this: by (metis explanation_1 explanation_2)",
            NO_PROOF,
            NO_PROOF,
            "Try this: by (metis explanation_1)",
        ),
    )


def held_proof() -> Scenario:
    """The very first theory submission already comes back proved."""

    return Scenario(
        instance=NLIInstance(
            id="direct_0",
            premises=("The fact is given.",),
            hypothesis="The conclusion holds.",
            explanations=("The rule holds.",),
        ),
        llm_responses=(
            ("syntactic_parse", _LOOP_PARSE),
            ("autoformalise", "Premise 1: Given x\nHypothesis: Goal x\nExplanation 1: Rule x"),
        ),
        prover_raws=(
            "Try this: by (metis asm explanation_1)",
            NO_PROOF,
        ),
    )


# --- random generators --------------------------------------------------------------

_PREDICATES = ("P", "Q", "Man", "Woman", "ParkBench", "Feed", "Agent", "R2")
_VARS = ("x", "y", "z", "e", "w", "v")


def random_formula(rng: random.Random, depth: int = 6) -> Formula:
    """A random formula of the fragment; renders and reparses structurally."""

    if depth <= 0 or rng.random() < 0.25:
        roll = rng.random()
        if roll < 0.05:
            return Truth()
        if roll < 0.1:
            return Falsity()
        args = [Var(rng.choice(_VARS)) for _ in range(rng.randint(1, 3))]
        return Predicate(rng.choice(_PREDICATES), args)
    kind = rng.randrange(7)
    if kind == 0:
        return Not(random_formula(rng, depth - 1))
    if kind in (1, 2):
        variables = rng.sample(_VARS, rng.randint(1, 3))
        quantifier = Exists if kind == 1 else Forall
        return quantifier(variables, random_formula(rng, depth - 1))
    connective = (And, Or, Implies, Iff)[kind - 3]
    return connective(
        random_formula(rng, depth - 1), random_formula(rng, depth - 1)
    )


_SENTENCES = (
    "The first fact holds.",
    "The second fact holds.",
    "The third fact holds.",
    "The fourth fact holds.",
    "The premise is given.",
    "The other premise is given.",
)


def random_theory(rng: random.Random, index: int = 0) -> TheoryDoc:
    n_premises = rng.randint(0, 2)
    n_explanations = rng.randint(1, 3)
    premises = _SENTENCES[4 : 4 + n_premises]
    explanations = _SENTENCES[:n_explanations]
    instance = NLIInstance(
        id=f"random_{index}",
        premises=premises,
        hypothesis="The conclusion holds.",
        explanations=explanations,
    )
    forms = {
        sentence: random_formula(rng, 3)
        for sentence in (*premises, *explanations, instance.hypothesis)
    }
    return build_theory(instance, forms)


def random_prop_formula(rng: random.Random, symbols: list[str], depth: int = 2):
    if depth <= 0 or rng.random() < 0.4:
        return Atom(rng.choice(symbols))
    kind = rng.randrange(5)
    if kind == 0:
        return PNot(random_prop_formula(rng, symbols, depth - 1))
    connective = (PImplies, Equivalent, PAnd, POr)[kind - 1]
    return connective(
        random_prop_formula(rng, symbols, depth - 1),
        random_prop_formula(rng, symbols, depth - 1),
    )


def random_prop_model(rng: random.Random) -> PropositionalModel:
    count = rng.randint(1, 6)
    symbols = list("ABCDEF"[:count])
    atoms = tuple(
        PropAtom(symbol, f"the {symbol.lower()} fact", source_sentence=i + 1)
        for i, symbol in enumerate(symbols)
    )
    relations = tuple(
        random_prop_formula(rng, symbols) for _ in range(rng.randint(0, 4))
    )
    return PropositionalModel(atoms, relations)
