"""Gateway to an external automated theorem prover.

Two backends share one verdict vocabulary: a subprocess runner for a real
prover command, and a cassette-driven mock that replays scripted verdicts in
order while verifying theory digests.  Raw prover output is classified into
typed verdicts by a pattern table shipped as data, because prover message
formats drift independently of this code.
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

from .theory import (
    AtpPlaceholder,
    IndexOutOfRange,
    NotAPlaceholder,
    ProofOutcome,
    ProofSketch,
)

__all__ = [
    "SyntaxErrorKind",
    "ProofFound",
    "StepFailed",
    "SyntaxFault",
    "Timeout",
    "ProverVerdict",
    "ProverSession",
    "SessionDown",
    "CassetteMismatch",
    "classify_output",
    "SubprocessProver",
    "MockProver",
    "RecordingProver",
    "theory_digest",
    "step_probe",
    "verdict_to_dict",
    "verdict_from_dict",
    "load_prover_cassette",
]


class SyntaxErrorKind(Enum):
    MISSING_BRACKET = "missing_bracket"
    TYPE_UNIFICATION = "type_unification"
    UNDEFINED_SYMBOL = "undefined_symbol"
    INNER_SYNTAX = "inner_syntax"
    OTHER = "other"


@dataclass(frozen=True)
class ProofFound:
    outcome: ProofOutcome


@dataclass(frozen=True)
class StepFailed:
    step_index: int
    statement: str
    message: str


@dataclass(frozen=True)
class SyntaxFault:
    kind: SyntaxErrorKind
    message: str
    line: Optional[int] = None


@dataclass(frozen=True)
class Timeout:
    stage: str


ProverVerdict = Union[ProofFound, StepFailed, SyntaxFault, Timeout]


class SessionDown(Exception):
    """Transport-level failure talking to the prover."""


class CassetteMismatch(Exception):
    """The submitted theory does not match the scripted cassette record."""


@dataclass(frozen=True)
class ProverSession:
    command: tuple[str, ...]
    timeout: float = 30.0
    options: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if not self.command:
            raise ValueError("prover command must be non-empty")


_LABEL = re.compile(r"\bexplanation_\d+\b")
_LINE_NUMBER = re.compile(r"\(line (\d+)")

_PATTERN_FILE = Path(__file__).parent / "data" / "prover_patterns.json"


def _load_patterns() -> list[dict]:
    with open(_PATTERN_FILE, encoding="utf-8") as fh:
        table = json.load(fh)
    for entry in table:
        entry["compiled"] = re.compile(entry["pattern"])
    return table


_PATTERNS = _load_patterns()


def _proof_outcome(proof_line: str) -> ProofOutcome:
    tokens = set(_LABEL.findall(proof_line))
    return ProofOutcome(
        used_axiom_labels=frozenset(tokens),
        proof_text=proof_line.strip(),
        uses_assumption=bool(re.search(r"\basms?\b", proof_line)),
    )


def classify_output(
    raw: str,
    step_index: Optional[int] = None,
    statement: str = "",
) -> ProverVerdict:
    """Map raw prover output onto a typed verdict.

    ``step_index`` marks step context: unmatched output then becomes a
    StepFailed for that step instead of an unclassified syntax fault.
    """

    if not raw.strip():
        return Timeout(stage="empty output")
    for entry in _PATTERNS:
        match = entry["compiled"].search(raw)
        if not match:
            continue
        verdict = entry["verdict"]
        if verdict == "proof":
            return ProofFound(_proof_outcome(match.group("proof")))
        if verdict == "syntax":
            line_match = _LINE_NUMBER.search(raw)
            return SyntaxFault(
                kind=SyntaxErrorKind(entry["kind"]),
                message=raw.strip(),
                line=int(line_match.group(1)) if line_match else None,
            )
        if verdict == "timeout":
            return Timeout(stage="atp")
        if verdict == "failed":
            return StepFailed(
                step_index=step_index if step_index is not None else 0,
                statement=statement,
                message=raw.strip(),
            )
    if step_index is not None:
        return StepFailed(step_index=step_index, statement=statement, message=raw.strip())
    return SyntaxFault(kind=SyntaxErrorKind.OTHER, message=raw.strip(), line=None)


def theory_digest(theory_text: str) -> str:
    return hashlib.sha256(theory_text.encode("utf-8")).hexdigest()


def step_probe(theory_text: str, sketch: ProofSketch, step_index: int) -> str:
    """Deterministic submission text for proving one sketch step."""

    step = _checked_step(sketch, step_index)
    return f"{theory_text}\n(* probe step {step_index} *)\n{step.statement}\n"


def _checked_step(sketch: ProofSketch, step_index: int):
    if not 0 <= step_index < len(sketch.steps):
        raise IndexOutOfRange(
            f"step {step_index} out of range for a {len(sketch.steps)}-step sketch"
        )
    step = sketch.steps[step_index]
    if not isinstance(step.tactic, AtpPlaceholder):
        raise NotAPlaceholder(f"step {step_index} has no <ATP> placeholder")
    return step


class SubprocessProver:
    """Runs a configured prover command on a temporary theory file."""

    def __init__(self, session: ProverSession):
        self.session = session
        self.last_raw = ""

    def _submit(self, text: str, step_index: Optional[int] = None, statement: str = "") -> ProverVerdict:
        with tempfile.NamedTemporaryFile(
            "w", suffix=".thy", delete=False, encoding="utf-8"
        ) as fh:
            fh.write(text)
            path = fh.name
        argv = list(self.session.command) + [path]
        for key, value in self.session.options:
            argv.append(f"--{key}={value}")
        try:
            completed = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=self.session.timeout,
            )
        except subprocess.TimeoutExpired:
            self.last_raw = ""
            return Timeout(stage="step" if step_index is not None else "theory")
        except OSError as exc:
            raise SessionDown(f"cannot run prover command {argv[0]!r}: {exc}") from exc
        finally:
            Path(path).unlink(missing_ok=True)
        self.last_raw = completed.stdout + completed.stderr
        return classify_output(self.last_raw, step_index=step_index, statement=statement)

    def check_theory(self, theory_text: str) -> ProverVerdict:
        return self._submit(theory_text)

    def check_step(
        self, theory_text: str, sketch: ProofSketch, step_index: int
    ) -> ProverVerdict:
        step = _checked_step(sketch, step_index)
        probe = step_probe(theory_text, sketch, step_index)
        return self._submit(probe, step_index=step_index, statement=step.statement)


# --- cassette serialisation -------------------------------------------------------


def verdict_to_dict(verdict: ProverVerdict) -> dict:
    if isinstance(verdict, ProofFound):
        return {
            "type": "proof_found",
            "proof": verdict.outcome.proof_text,
            "used": sorted(verdict.outcome.used_axiom_labels),
            "uses_assumption": verdict.outcome.uses_assumption,
        }
    if isinstance(verdict, StepFailed):
        return {
            "type": "step_failed",
            "step_index": verdict.step_index,
            "statement": verdict.statement,
            "message": verdict.message,
        }
    if isinstance(verdict, SyntaxFault):
        return {
            "type": "syntax_error",
            "kind": verdict.kind.value,
            "message": verdict.message,
            "line": verdict.line,
        }
    return {"type": "timeout", "stage": verdict.stage}


def verdict_from_dict(data: dict) -> ProverVerdict:
    kind = data["type"]
    if kind == "proof_found":
        return ProofFound(
            ProofOutcome(
                used_axiom_labels=frozenset(data.get("used", [])),
                proof_text=data["proof"],
                uses_assumption=bool(data.get("uses_assumption", False)),
            )
        )
    if kind == "step_failed":
        return StepFailed(
            step_index=int(data.get("step_index", 0)),
            statement=data.get("statement", ""),
            message=data.get("message", ""),
        )
    if kind == "syntax_error":
        return SyntaxFault(
            kind=SyntaxErrorKind(data.get("kind", "other")),
            message=data.get("message", ""),
            line=data.get("line"),
        )
    if kind == "timeout":
        return Timeout(stage=data.get("stage", "atp"))
    raise ValueError(f"unknown verdict type {kind!r}")


@dataclass(frozen=True)
class ProverRecord:
    theory_sha256: str
    verdict: ProverVerdict
    raw: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "theory_sha256": self.theory_sha256,
                "verdict": verdict_to_dict(self.verdict),
                "raw": self.raw,
            },
            ensure_ascii=False,
        )


def load_prover_cassette(path: Union[str, Path]) -> list[ProverRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CassetteMismatch(f"{path}:{line_no}: not a record: {exc}") from exc
            raw = data.get("raw", "")
            if "verdict" in data:
                verdict = verdict_from_dict(data["verdict"])
            else:
                verdict = classify_output(raw)
            records.append(
                ProverRecord(data.get("theory_sha256", "*"), verdict, raw)
            )
    return records


class MockProver:
    """Replays scripted verdicts in order, verifying theory digests.

    A record digest of ``*`` skips verification (for handwritten scripts);
    anything else must equal the sha256 of the submitted text, otherwise the
    replay fails loudly rather than returning a misaligned verdict.
    """

    def __init__(self, records: Sequence[ProverRecord]):
        self.records = list(records)
        self.cursor = 0
        self.last_raw = ""

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MockProver":
        return cls(load_prover_cassette(path))

    def _replay(self, text: str, what: str) -> ProverVerdict:
        if self.cursor >= len(self.records):
            raise CassetteMismatch(
                f"prover cassette exhausted after {len(self.records)} records"
                f" ({what} submission)"
            )
        record = self.records[self.cursor]
        digest = theory_digest(text)
        if record.theory_sha256 not in ("*", digest):
            raise CassetteMismatch(
                f"record {self.cursor}: expected theory {record.theory_sha256[:12]},"
                f" got {digest[:12]} ({what} submission)"
            )
        self.cursor += 1
        self.last_raw = record.raw
        return record.verdict

    def check_theory(self, theory_text: str) -> ProverVerdict:
        return self._replay(theory_text, "theory")

    def check_step(
        self, theory_text: str, sketch: ProofSketch, step_index: int
    ) -> ProverVerdict:
        _checked_step(sketch, step_index)
        return self._replay(step_probe(theory_text, sketch, step_index), "step")


class RecordingProver:
    """Wraps a backend and appends every submission to a cassette file."""

    def __init__(self, inner, path: Union[str, Path]):
        self.inner = inner
        self.path = Path(path)
        self.last_raw = ""

    def _record(self, text: str, verdict: ProverVerdict) -> ProverVerdict:
        self.last_raw = getattr(self.inner, "last_raw", "")
        record = ProverRecord(theory_digest(text), verdict, self.last_raw)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(record.to_json() + "\n")
        return verdict

    def check_theory(self, theory_text: str) -> ProverVerdict:
        return self._record(theory_text, self.inner.check_theory(theory_text))

    def check_step(
        self, theory_text: str, sketch: ProofSketch, step_index: int
    ) -> ProverVerdict:
        verdict = self.inner.check_step(theory_text, sketch, step_index)
        return self._record(step_probe(theory_text, sketch, step_index), verdict)
