"""Language model gateway: prompt templates, providers, and answer parsing.

Every model interaction belongs to one of eight pipeline stages.  A stage has
a prompt template stored as a data file next to this module; templates are
plain text with ``{{slot}}`` placeholders and full-line ``#`` comments that
are stripped at load time.  Rendered prompts are hashed so that recorded
exchanges can be replayed deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .propositional import FormatError, PropositionalModel, parse_logical_information
from .theory import ProofSketch, TheoryParseError, parse_proof_lines


class TemplateError(Exception):
    """A prompt template file is missing, unreadable, or ill-formed."""


class MissingSlot(TemplateError):
    """A template placeholder was not given a value."""

    def __init__(self, slot: str, stage: "Stage") -> None:
        super().__init__(f"no value for slot {slot!r} in stage {stage.value}")
        self.slot = slot
        self.stage = stage


class MalformedAnswer(Exception):
    """A model answer could not be parsed into the stage's output shape."""

    def __init__(self, message: str, stage: "Stage | None" = None) -> None:
        super().__init__(message)
        self.stage = stage


class ProviderError(Exception):
    """The model provider failed to produce a response."""


class RateLimited(ProviderError):
    """The provider rejected the request for rate reasons after retries."""


class CassetteMiss(Exception):
    """A replayed exchange did not match the recorded cassette."""


class Stage(Enum):
    SYNTACTIC_PARSE = "syntactic_parse"
    AUTOFORMALISE = "autoformalise"
    QUANTIFIER_REFINE = "quantifier_refine"
    SYNTAX_REFINE = "syntax_refine"
    CONSISTENCY_REFINE = "consistency_refine"
    EXTRACT_LOGIC = "extract_logic"
    PROOF_SKETCH = "proof_sketch"
    REFINE_EXPLANATION = "refine_explanation"


# Slots each stage's template may reference.  Unknown placeholders in a
# template file are a TemplateError so typos fail at load, not at render.
STAGE_SLOTS: dict[Stage, frozenset[str]] = {
    Stage.SYNTACTIC_PARSE: frozenset({"sentences"}),
    Stage.AUTOFORMALISE: frozenset(
        {
            "premise_sentences",
            "hypothesis_sentence",
            "explanation_sentences",
            "syntactic_parse",
        }
    ),
    Stage.QUANTIFIER_REFINE: frozenset({"isabelle_code"}),
    Stage.SYNTAX_REFINE: frozenset({"isabelle_code", "error_message"}),
    Stage.CONSISTENCY_REFINE: frozenset({"isabelle_code", "prover_output"}),
    Stage.EXTRACT_LOGIC: frozenset({"explanatory_sentences"}),
    Stage.PROOF_SKETCH: frozenset(
        {
            "premise_sentence",
            "explanation_sentences",
            "hypothesis_sentence",
            "isabelle_code",
            "logical_information",
            "known_information",
            "try_to_prove",
        }
    ),
    Stage.REFINE_EXPLANATION: frozenset(
        {
            "premise_sentence",
            "hypothesis_sentence",
            "explanation_sentences",
            "feedback",
        }
    ),
}

_SLOT_RE = re.compile(r"\{\{([a-z_]+)\}\}")
_DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "prompts"


@dataclass(frozen=True)
class PromptTemplate:
    stage: Stage
    system: str
    user: str

    @property
    def slots(self) -> frozenset[str]:
        found = set(_SLOT_RE.findall(self.system))
        found.update(_SLOT_RE.findall(self.user))
        return frozenset(found)


@dataclass(frozen=True)
class PromptRequest:
    """A fully rendered prompt ready to send to a provider."""

    stage: Stage
    system: str
    user: str

    @property
    def rendered(self) -> str:
        return self.system + "\n\n" + self.user

    @property
    def digest(self) -> str:
        return prompt_digest(self.rendered)


def prompt_digest(rendered: str) -> str:
    return hashlib.sha256(rendered.encode("utf-8")).hexdigest()


def _parse_template(stage: Stage, text: str) -> PromptTemplate:
    # Full-line comments are template metadata, never sent to the model.
    lines = [ln for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    system_lines: list[str] | None = None
    user_lines: list[str] | None = None
    current: list[str] | None = None
    for line in lines:
        if line.startswith("SYSTEM:"):
            if system_lines is not None:
                raise TemplateError(f"duplicate SYSTEM section in {stage.value}")
            system_lines = [line[len("SYSTEM:") :].lstrip()]
            current = system_lines
        elif line.startswith("USER:"):
            if user_lines is not None:
                raise TemplateError(f"duplicate USER section in {stage.value}")
            user_lines = [line[len("USER:") :].lstrip()]
            current = user_lines
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise TemplateError(
                f"text before SYSTEM section in {stage.value}: {line!r}"
            )
    if system_lines is None or user_lines is None:
        raise TemplateError(f"template {stage.value} needs SYSTEM and USER sections")
    template = PromptTemplate(
        stage=stage,
        system="\n".join(system_lines).strip("\n"),
        user="\n".join(user_lines).strip("\n"),
    )
    unknown = template.slots - STAGE_SLOTS[stage]
    if unknown:
        raise TemplateError(
            f"template {stage.value} uses unknown slots: {sorted(unknown)}"
        )
    return template


def load_templates(directory: str | Path | None = None) -> dict[Stage, PromptTemplate]:
    base = Path(directory) if directory is not None else _DEFAULT_TEMPLATE_DIR
    templates: dict[Stage, PromptTemplate] = {}
    for stage in Stage:
        path = base / f"{stage.value}.txt"
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise TemplateError(f"cannot read template {path}: {exc}") from exc
        templates[stage] = _parse_template(stage, text)
    return templates


def render_request(
    template: PromptTemplate, values: dict[str, str]
) -> PromptRequest:
    def fill(text: str) -> str:
        def replace(match: re.Match[str]) -> str:
            slot = match.group(1)
            if slot not in values:
                raise MissingSlot(slot, template.stage)
            return values[slot]

        return _SLOT_RE.sub(replace, text)

    return PromptRequest(
        stage=template.stage, system=fill(template.system), user=fill(template.user)
    )


def render_prompt(template: PromptTemplate, values: dict[str, str]) -> str:
    return render_request(template, values).rendered


@dataclass(frozen=True)
class LLMExchange:
    stage: Stage
    request: PromptRequest
    response: str


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    model: str
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    # The key is read from this environment variable, never from config data.
    api_key_env: str = "NLPROOF_API_KEY"
    requests_per_minute: int | None = None


class RateLimiter:
    """Spaces calls so at most ``requests_per_minute`` start per minute."""

    def __init__(
        self,
        requests_per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self._interval = 60.0 / requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._last: float | None = None

    def wait(self) -> None:
        now = self._clock()
        if self._last is not None:
            remaining = self._interval - (now - self._last)
            if remaining > 0:
                self._sleep(remaining)
                now = self._clock()
        self._last = now


class LLMProvider:
    """Interface for anything that can answer a rendered prompt."""

    def complete(self, request: PromptRequest) -> str:
        raise NotImplementedError


class HTTPProvider(LLMProvider):
    """Chat-completion provider speaking the common JSON HTTP shape."""

    def __init__(
        self,
        config: ProviderConfig,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self._sleep = sleep
        self._limiter = (
            RateLimiter(config.requests_per_minute, sleep=sleep)
            if config.requests_per_minute
            else None
        )

    def complete(self, request: PromptRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if self._limiter is not None:
                self._limiter.wait()
            try:
                response = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = ProviderError(f"request failed: {exc}")
            else:
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = RateLimited(
                        f"status {response.status_code} from provider"
                    )
                    if response.status_code >= 500:
                        last_error = ProviderError(
                            f"status {response.status_code} from provider"
                        )
                else:
                    return self._extract_content(response)
            if attempt < self.config.max_retries:
                self._sleep(2.0**attempt)
        assert last_error is not None
        raise last_error

    @staticmethod
    def _extract_content(response) -> str:
        try:
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {exc}") from exc


class ScriptedProvider(LLMProvider):
    """Returns canned responses in order; handy for tests."""

    def __init__(self, responses: Sequence[str]) -> None:
        self._responses = list(responses)
        self._cursor = 0
        self.requests: list[PromptRequest] = []

    def complete(self, request: PromptRequest) -> str:
        self.requests.append(request)
        if self._cursor >= len(self._responses):
            raise ProviderError(
                f"scripted provider exhausted after {self._cursor} responses"
            )
        response = self._responses[self._cursor]
        self._cursor += 1
        return response


@dataclass(frozen=True)
class LLMRecord:
    """One recorded exchange: stage, prompt digest, and the raw response."""

    stage: str
    prompt_sha256: str
    response: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "prompt_sha256": self.prompt_sha256,
                "response": self.response,
            },
            ensure_ascii=False,
        )


def load_llm_cassette(path: str | Path) -> list[LLMRecord]:
    records: list[LLMRecord] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                records.append(
                    LLMRecord(
                        stage=data["stage"],
                        prompt_sha256=data.get("prompt_sha256", "*"),
                        response=data["response"],
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise CassetteMiss(f"{path}:{line_no}: bad record: {exc}") from exc
    return records


class ReplayProvider(LLMProvider):
    """Replays a cassette strictly in order.

    Each incoming request must match the next record's stage, and its prompt
    digest must match unless the record uses the ``*`` wildcard (handwritten
    cassettes).  Any divergence fails loudly rather than answering from the
    wrong position.
    """

    def __init__(self, records: Sequence[LLMRecord]) -> None:
        self._records = list(records)
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayProvider":
        return cls(load_llm_cassette(path))

    @property
    def remaining(self) -> int:
        return len(self._records) - self._cursor

    def complete(self, request: PromptRequest) -> str:
        if self._cursor >= len(self._records):
            raise CassetteMiss(
                f"cassette exhausted: call {self._cursor + 1} "
                f"(stage {request.stage.value}) has no recorded response"
            )
        record = self._records[self._cursor]
        if record.stage != request.stage.value:
            raise CassetteMiss(
                f"cassette record {self._cursor + 1} is for stage "
                f"{record.stage!r}, got request for {request.stage.value!r}"
            )
        if record.prompt_sha256 != "*" and record.prompt_sha256 != request.digest:
            raise CassetteMiss(
                f"cassette record {self._cursor + 1} prompt digest mismatch "
                f"for stage {record.stage!r}"
            )
        self._cursor += 1
        return record.response


class RecordingProvider(LLMProvider):
    """Wraps a provider and appends every exchange to a cassette file."""

    def __init__(self, inner: LLMProvider, path: str | Path) -> None:
        self._inner = inner
        self._path = Path(path)

    def complete(self, request: PromptRequest) -> str:
        response = self._inner.complete(request)
        record = LLMRecord(
            stage=request.stage.value,
            prompt_sha256=request.digest,
            response=response,
        )
        with open(self._path, "a", encoding="utf-8") as handle:
            handle.write(record.to_json() + "\n")
        return response


class LLMGateway:
    """Binds templates to a provider and tracks every exchange."""

    def __init__(
        self,
        provider: LLMProvider,
        templates: dict[Stage, PromptTemplate] | None = None,
    ) -> None:
        self._provider = provider
        self._templates = templates if templates is not None else load_templates()
        self.history: list[LLMExchange] = []

    @property
    def call_count(self) -> int:
        return len(self.history)

    def complete(self, stage: Stage, values: dict[str, str]) -> str:
        request = render_request(self._templates[stage], values)
        response = self._provider.complete(request)
        self.history.append(LLMExchange(stage=stage, request=request, response=response))
        return response

    def ask(self, stage: Stage, values: dict[str, str]):
        """Complete and parse, re-asking once if the answer is malformed."""
        response = self.complete(stage, values)
        try:
            return parse_stage_answer(stage, response)
        except MalformedAnswer:
            response = self.complete(stage, values)
            return parse_stage_answer(stage, response)


@dataclass(frozen=True)
class FormalisationAnswer:
    """Logical forms keyed back to their sentence labels."""

    premises: tuple[str, ...]
    hypothesis: str
    explanations: tuple[str, ...]


_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*\n(.*?)```", re.S)
_CODE_MARKERS = ("(*", "axiomatization", "theorem")
_NO_CHANGE_RE = re.compile(
    r"no (?:changes?|refinements?|corrections?)(?: are)? (?:is |are )?(?:needed|required|necessary)"
    r"|defined correctly"
    r"|already (?:correct|consistent|valid)",
    re.I,
)
_LABELLED_FORM_RE = re.compile(r"^(Premise|Explanation)\s+(\d+)\s*:\s*(.+?)\s*$")
_HYPOTHESIS_FORM_RE = re.compile(r"^Hypothesis\s*:\s*(.+?)\s*$")
_NUMBERED_LINE_RE = re.compile(r"^\s*(?:Explanation\s+)?(\d+)\s*[.):]\s*(.+?)\s*$")


def extract_code_block(text: str) -> str | None:
    """Pulls theory code out of an answer, fenced or bare."""
    fence = _FENCE_RE.search(text)
    if fence:
        block = fence.group(1).strip()
        return block or None
    positions = [text.find(marker) for marker in _CODE_MARKERS]
    positions = [p for p in positions if p >= 0]
    if not positions:
        return None
    block = text[min(positions) :].strip()
    return block or None


def parse_code_answer(text: str, stage: Stage) -> str:
    block = extract_code_block(text)
    if block is None:
        raise MalformedAnswer("answer contains no theory code", stage)
    return block


def parse_quantifier_answer(text: str) -> str | None:
    """Refined code, or None when the answer declares nothing to fix."""
    block = extract_code_block(text)
    if block is not None:
        return block
    if _NO_CHANGE_RE.search(text):
        return None
    raise MalformedAnswer(
        "answer has neither refined code nor a no-change statement",
        Stage.QUANTIFIER_REFINE,
    )


def parse_formalisation_answer(text: str) -> FormalisationAnswer:
    premises: dict[int, str] = {}
    explanations: dict[int, str] = {}
    hypothesis: str | None = None
    for line in text.splitlines():
        line = line.strip()
        match = _LABELLED_FORM_RE.match(line)
        if match:
            kind, index, form = match.group(1), int(match.group(2)), match.group(3)
            target = premises if kind == "Premise" else explanations
            target[index] = form
            continue
        match = _HYPOTHESIS_FORM_RE.match(line)
        if match:
            hypothesis = match.group(1)
    if hypothesis is None:
        raise MalformedAnswer("no hypothesis logical form", Stage.AUTOFORMALISE)

    def in_order(forms: dict[int, str], kind: str) -> tuple[str, ...]:
        expected = list(range(1, len(forms) + 1))
        if sorted(forms) != expected:
            raise MalformedAnswer(
                f"{kind} logical forms are not numbered 1..{len(forms)}",
                Stage.AUTOFORMALISE,
            )
        return tuple(forms[i] for i in expected)

    return FormalisationAnswer(
        premises=in_order(premises, "premise"),
        hypothesis=hypothesis,
        explanations=in_order(explanations, "explanation"),
    )


def parse_numbered_sentences(text: str) -> tuple[str, ...]:
    sentences: list[str] = []
    for line in text.splitlines():
        match = _NUMBERED_LINE_RE.match(line)
        if match:
            sentences.append(match.group(2))
    if not sentences:
        raise MalformedAnswer("no numbered sentences", Stage.REFINE_EXPLANATION)
    return tuple(sentences)


def parse_logic_answer(text: str) -> PropositionalModel:
    try:
        return parse_logical_information(text)
    except FormatError as exc:
        raise MalformedAnswer(str(exc), Stage.EXTRACT_LOGIC) from exc


def parse_proof_answer(text: str) -> ProofSketch:
    lines = text.splitlines()
    start = next(
        (i + 1 for i, ln in enumerate(lines) if ln.strip() == "proof -"), None
    )
    end = next((i for i, ln in enumerate(lines) if ln.strip() == "qed"), None)
    if start is not None:
        stop = end if end is not None else len(lines)
        body = list(enumerate(lines, start=1))[start:stop]
    else:
        body = list(enumerate(lines, start=1))
    body = [(no, ln) for no, ln in body if ln.strip()]
    if not body:
        raise MalformedAnswer("no proof steps", Stage.PROOF_SKETCH)
    try:
        sketch = parse_proof_lines(body)
    except TheoryParseError as exc:
        raise MalformedAnswer(f"bad proof sketch: {exc}", Stage.PROOF_SKETCH) from exc
    if not sketch.steps:
        raise MalformedAnswer("no proof steps", Stage.PROOF_SKETCH)
    return sketch


def parse_stage_answer(stage: Stage, text: str):
    """Dispatches to the stage-specific parser."""
    if stage is Stage.SYNTACTIC_PARSE:
        stripped = text.strip()
        if not stripped:
            raise MalformedAnswer("empty syntactic parse", stage)
        return stripped
    if stage is Stage.AUTOFORMALISE:
        return parse_formalisation_answer(text)
    if stage is Stage.QUANTIFIER_REFINE:
        return parse_quantifier_answer(text)
    if stage in (Stage.SYNTAX_REFINE, Stage.CONSISTENCY_REFINE):
        return parse_code_answer(text, stage)
    if stage is Stage.EXTRACT_LOGIC:
        return parse_logic_answer(text)
    if stage is Stage.PROOF_SKETCH:
        return parse_proof_answer(text)
    if stage is Stage.REFINE_EXPLANATION:
        return parse_numbered_sentences(text)
    raise ValueError(f"unknown stage: {stage}")
