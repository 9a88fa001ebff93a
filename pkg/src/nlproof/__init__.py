"""Neuro-symbolic verification and refinement of natural language explanations.

Sentences are formalised into event-semantic first-order theories, checked
with an external prover, and iteratively refined from the prover's feedback.
The subpackages split along that pipeline: ``logic`` for formulas, ``theory``
for proof documents, ``propositional`` for extracted relations and their
consequences, ``informalise`` for verbalising formulas back, ``prover`` and
``llm`` for the two external gateways, and ``orchestrator`` for the loop.
"""

from .datasets import InstanceFile, RunConfig, load_instances, save_instances
from .informalise import cosine, faithfulness, informalise
from .llm import LLMGateway, ReplayProvider, Stage, load_templates
from .logic import ParseError, parse_formula, render_formula
from .orchestrator import (
    PipelineOptions,
    RefinementState,
    RunMetrics,
    Status,
    aggregate_metrics,
    compute_utility,
    run_instance,
)
from .propositional import (
    PropositionalModel,
    derive_implications,
    entails,
    format_logical_information,
    parse_logical_information,
)
from .prover import MockProver, SubprocessProver, classify_output
from .theory import (
    NLIInstance,
    TheoryDoc,
    build_false_theorem,
    build_theory,
    parse_theory,
    render_theory,
)

__version__ = "0.1.0"

__all__ = [
    "InstanceFile",
    "RunConfig",
    "load_instances",
    "save_instances",
    "cosine",
    "faithfulness",
    "informalise",
    "LLMGateway",
    "ReplayProvider",
    "Stage",
    "load_templates",
    "ParseError",
    "parse_formula",
    "render_formula",
    "PipelineOptions",
    "RefinementState",
    "RunMetrics",
    "Status",
    "aggregate_metrics",
    "compute_utility",
    "run_instance",
    "PropositionalModel",
    "derive_implications",
    "entails",
    "format_logical_information",
    "parse_logical_information",
    "MockProver",
    "SubprocessProver",
    "classify_output",
    "NLIInstance",
    "TheoryDoc",
    "build_false_theorem",
    "build_theory",
    "parse_theory",
    "render_theory",
    "__version__",
]
