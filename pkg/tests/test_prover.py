"""Prover backends, output classification, and cassette replay."""

from __future__ import annotations

import json
import os

import pytest

from nlproof.prover import (
    CassetteMismatch,
    MockProver,
    ProofFound,
    ProverRecord,
    ProverSession,
    RecordingProver,
    SessionDown,
    StepFailed,
    SubprocessProver,
    SyntaxErrorKind,
    SyntaxFault,
    Timeout,
    classify_output,
    load_prover_cassette,
    step_probe,
    theory_digest,
    verdict_from_dict,
    verdict_to_dict,
)
from nlproof.theory import (
    ATP,
    IndexOutOfRange,
    NamedTactic,
    NotAPlaceholder,
    ProofSketch,
    ProofStep,
)

def make_sketch() -> ProofSketch:
    return ProofSketch(
        steps=(
            ProofStep('have "Violin y"', ATP),
            ProofStep("then show ?thesis", NamedTactic("by simp")),
            ProofStep("show ?thesis", ATP),
        )
    )


class TestClassifyOutput:
    def test_empty_output_is_a_timeout(self):
        verdict = classify_output("   \n")
        assert verdict == Timeout(stage="empty output")

    def test_try_this_proof(self):
        verdict = classify_output("Sledgehammering...\nTry this: by (metis asm explanation_1) (12 ms)\n")
        assert isinstance(verdict, ProofFound)
        assert verdict.outcome.proof_text == "by (metis asm explanation_1) (12 ms)"
        assert verdict.outcome.used_axiom_labels == frozenset({"explanation_1"})
        assert verdict.outcome.uses_assumption

    def test_proof_colon_line(self):
        verdict = classify_output("some preamble\n  proof: by blast\n")
        assert isinstance(verdict, ProofFound)
        assert verdict.outcome.proof_text == "by blast"
        assert verdict.outcome.used_axiom_labels == frozenset()
        assert not verdict.outcome.uses_assumption

    def test_plural_assumption_token(self):
        verdict = classify_output("Try this: by (metis asms explanation_2 explanation_10)")
        assert verdict.outcome.uses_assumption
        assert verdict.outcome.used_axiom_labels == frozenset(
            {"explanation_2", "explanation_10"}
        )

    def test_missing_bracket_with_line(self):
        raw = "Malformed command syntax (line 3): unexpected end of input"
        verdict = classify_output(raw)
        assert verdict == SyntaxFault(
            kind=SyntaxErrorKind.MISSING_BRACKET, message=raw, line=3
        )

    def test_type_unification(self):
        verdict = classify_output("Type unification failed: Clash of types")
        assert verdict.kind is SyntaxErrorKind.TYPE_UNIFICATION
        assert verdict.line is None

    def test_undefined_symbol_variants(self):
        for raw in ('Undefined constant: "Has"', "Bad name: foo", "Unknown fact: bar"):
            verdict = classify_output(raw)
            assert verdict.kind is SyntaxErrorKind.UNDEFINED_SYMBOL, raw

    def test_inner_and_outer_syntax(self):
        inner = classify_output("Inner syntax error (line 2): malformed formula")
        outer = classify_output("Outer syntax error: command expected")
        assert inner.kind is SyntaxErrorKind.INNER_SYNTAX
        assert inner.line == 2
        assert outer.kind is SyntaxErrorKind.INNER_SYNTAX
        assert outer.line is None

    def test_timeout_phrases(self):
        assert classify_output("Timed out after 30s") == Timeout(stage="atp")
        assert classify_output("sledgehammer: timeout after 5s") == Timeout(stage="atp")

    def test_failed_is_case_insensitive(self):
        for raw in ("No proof found", "NO PROOF FOUND", "Nitpick: Counterexample found"):
            verdict = classify_output(raw)
            assert isinstance(verdict, StepFailed), raw
            assert verdict.message == raw

    def test_failed_carries_step_context(self):
        verdict = classify_output("gave up", step_index=3, statement='have "P x"')
        assert verdict == StepFailed(3, 'have "P x"', "gave up")

    def test_unmatched_with_step_context_is_step_failure(self):
        verdict = classify_output("inscrutable noise", step_index=1, statement="show ?thesis")
        assert verdict == StepFailed(1, "show ?thesis", "inscrutable noise")

    def test_unmatched_without_context_is_other_syntax(self):
        verdict = classify_output("inscrutable noise")
        assert verdict == SyntaxFault(
            kind=SyntaxErrorKind.OTHER, message="inscrutable noise", line=None
        )


class TestVerdictSerialisation:
    @pytest.mark.parametrize(
        "verdict",
        [
            classify_output("Try this: by (metis asm explanation_1 explanation_3)"),
            StepFailed(2, 'have "Q x"', "No proof found"),
            SyntaxFault(SyntaxErrorKind.INNER_SYNTAX, "Inner syntax error (line 4)", 4),
            Timeout(stage="atp"),
        ],
    )
    def test_round_trip(self, verdict):
        assert verdict_from_dict(verdict_to_dict(verdict)) == verdict

    def test_used_labels_serialise_sorted(self):
        verdict = classify_output("Try this: by (metis explanation_3 explanation_1)")
        assert verdict_to_dict(verdict)["used"] == ["explanation_1", "explanation_3"]

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            verdict_from_dict({"type": "mystery"})


class TestStepProbe:
    def test_probe_layout(self):
        probe = step_probe("theory text\n", make_sketch(), 0)
        assert probe == 'theory text\n\n(* probe step 0 *)\nhave "Violin y"\n'

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            step_probe("t", make_sketch(), 5)

    def test_named_tactic_step_rejected(self):
        with pytest.raises(NotAPlaceholder):
            step_probe("t", make_sketch(), 1)


class TestMockProver:
    def test_wildcard_digest_skips_verification(self):
        prover = MockProver([ProverRecord("*", Timeout(stage="atp"), "")])
        assert prover.check_theory("anything") == Timeout(stage="atp")

    def test_matching_digest_accepted(self):
        text = "theory body\n"
        record = ProverRecord(theory_digest(text), Timeout(stage="atp"), "raw out")
        prover = MockProver([record])
        assert prover.check_theory(text) == Timeout(stage="atp")
        assert prover.last_raw == "raw out"

    def test_digest_mismatch_fails_loudly(self):
        record = ProverRecord(theory_digest("expected"), Timeout(stage="atp"), "")
        prover = MockProver([record])
        with pytest.raises(CassetteMismatch, match="record 0"):
            prover.check_theory("something else")

    def test_exhaustion_fails_loudly(self):
        prover = MockProver([])
        with pytest.raises(CassetteMismatch, match="exhausted after 0 records"):
            prover.check_theory("text")

    def test_step_digest_covers_probe_text(self):
        sketch = make_sketch()
        probe = step_probe("theory\n", sketch, 2)
        record = ProverRecord(theory_digest(probe), Timeout(stage="atp"), "")
        prover = MockProver([record])
        assert prover.check_step("theory\n", sketch, 2) == Timeout(stage="atp")

    def test_step_still_validates_placeholder(self):
        prover = MockProver([ProverRecord("*", Timeout(stage="atp"), "")])
        with pytest.raises(NotAPlaceholder):
            prover.check_step("theory\n", make_sketch(), 1)


class TestCassetteFiles:
    def test_records_without_verdict_classify_raw(self, tmp_path):
        path = tmp_path / "prover.jsonl"
        path.write_text(
            json.dumps({"theory_sha256": "*", "raw": "Try this: by blast"}) + "\n\n"
            + json.dumps({"theory_sha256": "*", "raw": "No proof found"}) + "\n",
            encoding="utf-8",
        )
        records = load_prover_cassette(path)
        assert len(records) == 2
        assert isinstance(records[0].verdict, ProofFound)
        assert records[0].verdict.outcome.proof_text == "by blast"
        assert isinstance(records[1].verdict, StepFailed)

    def test_explicit_verdict_wins_over_raw(self, tmp_path):
        path = tmp_path / "prover.jsonl"
        path.write_text(
            json.dumps(
                {
                    "theory_sha256": "*",
                    "verdict": {"type": "timeout", "stage": "atp"},
                    "raw": "Try this: by blast",
                }
            )
            + "\n",
            encoding="utf-8",
        )
        assert load_prover_cassette(path)[0].verdict == Timeout(stage="atp")

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "prover.jsonl"
        path.write_text('{"ok": true}\nnot json\n', encoding="utf-8")
        with pytest.raises(CassetteMismatch, match=":2:"):
            load_prover_cassette(path)

    def test_recording_round_trip(self, tmp_path):
        inner = MockProver(
            [
                ProverRecord("*", classify_output("Try this: by blast"), "Try this: by blast"),
                ProverRecord("*", Timeout(stage="atp"), "Timed out after 30s"),
            ]
        )
        cassette = tmp_path / "recorded.jsonl"
        recorder = RecordingProver(inner, cassette)
        sketch = make_sketch()
        first = recorder.check_theory("theory one\n")
        second = recorder.check_step("theory one\n", sketch, 0)

        replayed = MockProver.from_file(cassette)
        assert replayed.records[0].theory_sha256 == theory_digest("theory one\n")
        assert replayed.records[1].theory_sha256 == theory_digest(
            step_probe("theory one\n", sketch, 0)
        )
        assert replayed.check_theory("theory one\n") == first
        assert replayed.check_step("theory one\n", sketch, 0) == second


class TestProverSession:
    def test_rejects_bad_timeout(self):
        with pytest.raises(ValueError):
            ProverSession(command=("isabelle",), timeout=0)

    def test_rejects_empty_command(self):
        with pytest.raises(ValueError):
            ProverSession(command=())


def write_script(path, body: str) -> str:
    path.write_text("#!/bin/sh\n" + body, encoding="utf-8")
    os.chmod(path, 0o755)
    return str(path)


class TestSubprocessProver:
    def test_classifies_command_output(self, tmp_path):
        cmd = write_script(tmp_path / "fake_prover", 'echo "Try this: by blast"\n')
        prover = SubprocessProver(ProverSession(command=(cmd,)))
        verdict = prover.check_theory("theory x\n")
        assert isinstance(verdict, ProofFound)
        assert verdict.outcome.proof_text == "by blast"
        assert "Try this" in prover.last_raw

    def test_options_appended_to_argv(self, tmp_path):
        cmd = write_script(tmp_path / "echo_args", 'echo "$@"\n')
        session = ProverSession(command=(cmd,), options=(("mode", "hol"),))
        verdict = SubprocessProver(session).check_theory("theory x\n")
        assert isinstance(verdict, SyntaxFault)
        assert "--mode=hol" in verdict.message

    def test_wallclock_timeout(self, tmp_path):
        cmd = write_script(tmp_path / "slow_prover", "sleep 5\n")
        prover = SubprocessProver(ProverSession(command=(cmd,), timeout=0.2))
        assert prover.check_theory("theory x\n") == Timeout(stage="theory")

    def test_missing_binary_is_session_down(self, tmp_path):
        missing = str(tmp_path / "no_such_prover")
        prover = SubprocessProver(ProverSession(command=(missing,)))
        with pytest.raises(SessionDown):
            prover.check_theory("theory x\n")

    def test_step_submission_carries_context(self, tmp_path):
        cmd = write_script(tmp_path / "refuser", 'echo "No proof found"\n')
        prover = SubprocessProver(ProverSession(command=(cmd,)))
        verdict = prover.check_step("theory x\n", make_sketch(), 0)
        assert verdict == StepFailed(0, 'have "Violin y"', "No proof found")
