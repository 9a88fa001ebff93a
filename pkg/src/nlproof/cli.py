"""Command line entry points.

``verify`` runs each instance through a single formalise-and-prove pass;
``refine`` allows the full iterative loop.  ``derive`` and ``informalise``
expose the symbolic helpers on their own: recomputing derived implications
for a logical-information file, and verbalising a theory file back into
sentences with faithfulness scores.

Exit codes: 0 all instances valid, 1 some instance failed or a file could
not be processed, 2 bad usage or configuration, 3 infrastructure trouble
(cassette mismatch, provider or prover failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .datasets import (
    ConfigError,
    DatasetError,
    RunConfig,
    load_config_file,
    load_instances,
)
from .informalise import write_faithfulness_csv
from .llm import (
    CassetteMiss,
    HTTPProvider,
    LLMGateway,
    ProviderConfig,
    ProviderError,
    RecordingProvider,
    ReplayProvider,
    TemplateError,
    load_templates,
)
from .logic import ParseError
from .orchestrator import (
    PipelineOptions,
    RefinementState,
    Status,
    aggregate_metrics,
    faithfulness_rows,
    format_metrics,
    run_instance,
)
from .propositional import (
    FormatError,
    TooManyAtoms,
    derive_implications,
    format_logical_information,
    parse_logical_information,
)
from .prover import (
    CassetteMismatch,
    MockProver,
    ProverSession,
    RecordingProver,
    SessionDown,
    SubprocessProver,
)
from .theory import TheoryParseError, parse_theory

LLM_CASSETTE = "llm.jsonl"
PROVER_CASSETTE = "prover.jsonl"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlproof",
        description="Verify and refine natural language explanations "
        "through formal proof.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser(
        "verify", help="single formalise-and-prove pass per instance"
    )
    _add_run_arguments(verify)
    verify.set_defaults(func=_cmd_verify)

    refine = sub.add_parser(
        "refine", help="iterative refinement until proof or exhaustion"
    )
    _add_run_arguments(refine)
    refine.set_defaults(func=_cmd_refine)

    derive = sub.add_parser(
        "derive", help="recompute derived implications for a logic file"
    )
    derive.add_argument("input", help="logical-information text file")
    derive.add_argument("--output", help="write here instead of stdout")
    derive.set_defaults(func=_cmd_derive)

    informalise = sub.add_parser(
        "informalise", help="verbalise a theory file with faithfulness scores"
    )
    informalise.add_argument("input", help="theory file")
    informalise.add_argument("--output", help="write CSV here instead of stdout")
    informalise.set_defaults(func=_cmd_informalise)

    return parser


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("instances", help="instance JSONL file")
    parser.add_argument(
        "--mode", choices=["live", "record", "replay"], default=None,
        help="where model and prover answers come from (default: replay)",
    )
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--max-syntax-repairs", type=int, default=None)
    parser.add_argument("--no-quantifier-refine", action="store_true")
    parser.add_argument("--no-syntax-refine", action="store_true")
    parser.add_argument("--no-logical-relations", action="store_true")
    parser.add_argument(
        "--binary-feedback", action="store_true",
        help="refine with a generic failure message instead of prover detail",
    )
    parser.add_argument("--no-faithfulness", action="store_true")
    parser.add_argument(
        "--cassette", help="directory holding llm.jsonl and prover.jsonl"
    )
    parser.add_argument("--prover-cmd", help="prover command line (live/record)")
    parser.add_argument("--timeout", type=float, default=None)
    parser.add_argument(
        "--config",
        help="JSON config file; its values override command line flags",
    )
    parser.add_argument("--output", help="run directory (default: run)")
    parser.add_argument("--endpoint", help="model API endpoint (live/record)")
    parser.add_argument("--model", help="model name (live/record)")
    parser.add_argument(
        "--api-key-env",
        help="environment variable that holds the API key",
    )
    parser.add_argument("--requests-per-minute", type=int, default=None)


def _flag_settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if args.mode is not None:
        settings["mode"] = args.mode
    if args.jobs is not None:
        settings["jobs"] = args.jobs
    if args.max_iters is not None:
        settings["max_iterations"] = args.max_iters
    if args.max_syntax_repairs is not None:
        settings["max_syntax_repairs"] = args.max_syntax_repairs
    if args.no_quantifier_refine:
        settings["quantifier_refine"] = False
    if args.no_syntax_refine:
        settings["syntax_refine"] = False
    if args.no_logical_relations:
        settings["logical_relations"] = False
    if args.binary_feedback:
        settings["detailed_feedback"] = False
    if args.no_faithfulness:
        settings["compute_faithfulness"] = False
    if args.cassette:
        settings["cassette"] = args.cassette
    if args.prover_cmd:
        settings["prover_cmd"] = args.prover_cmd
    if args.timeout is not None:
        settings["timeout"] = args.timeout
    if args.output:
        settings["output"] = args.output
    if args.endpoint:
        settings["endpoint"] = args.endpoint
    if args.model:
        settings["model"] = args.model
    if args.api_key_env:
        settings["api_key_env"] = args.api_key_env
    if args.requests_per_minute is not None:
        settings["requests_per_minute"] = args.requests_per_minute
    return settings


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    settings = _flag_settings(args)
    if args.config:
        # The config file pins the run: file values beat flags.
        settings.update(load_config_file(args.config))
    return RunConfig(**settings)


def _pipeline_options(cfg: RunConfig, single_pass: bool) -> PipelineOptions:
    return PipelineOptions(
        max_iterations=0 if single_pass else cfg.max_iterations,
        max_syntax_repairs=cfg.max_syntax_repairs,
        quantifier_refine=cfg.quantifier_refine,
        syntax_refine=cfg.syntax_refine,
        logical_relations=cfg.logical_relations,
        detailed_feedback=cfg.detailed_feedback,
        compute_faithfulness=cfg.compute_faithfulness,
    )


def _build_llm_provider(cfg: RunConfig):
    if cfg.mode == "replay":
        return ReplayProvider.from_file(Path(cfg.cassette) / LLM_CASSETTE)
    if not cfg.endpoint or not cfg.model:
        raise ConfigError(f"mode {cfg.mode!r} needs an endpoint and a model")
    provider = HTTPProvider(
        ProviderConfig(
            endpoint=cfg.endpoint,
            model=cfg.model,
            timeout=cfg.timeout,
            api_key_env=cfg.api_key_env,
            requests_per_minute=cfg.requests_per_minute,
        )
    )
    if cfg.mode == "record":
        path = Path(cfg.cassette) / LLM_CASSETTE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
        provider = RecordingProvider(provider, path)
    return provider


def _build_prover(cfg: RunConfig):
    if cfg.mode == "replay":
        return MockProver.from_file(Path(cfg.cassette) / PROVER_CASSETTE)
    argv = cfg.prover_argv()
    if argv is None:
        raise ConfigError(f"mode {cfg.mode!r} needs --prover-cmd")
    prover = SubprocessProver(ProverSession(command=tuple(argv), timeout=cfg.timeout))
    if cfg.mode == "record":
        path = Path(cfg.cassette) / PROVER_CASSETTE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
        prover = RecordingProver(prover, path)
    return prover


def _run_batch(cfg: RunConfig, options: PipelineOptions, instances) -> list[RefinementState]:
    provider = _build_llm_provider(cfg)
    prover = _build_prover(cfg)
    templates = load_templates()
    if cfg.effective_jobs == 1:
        return [
            run_instance(inst, LLMGateway(provider, templates), prover, options)
            for inst in instances
        ]

    # Parallel runs happen only live, with an isolated prover per instance
    # (the subprocess prover keeps per-call state).
    session = prover.session

    def work(inst):
        return run_instance(
            inst,
            LLMGateway(provider, templates),
            SubprocessProver(session),
            options,
        )

    with ThreadPoolExecutor(max_workers=cfg.effective_jobs) as pool:
        return list(pool.map(work, instances))


_UNSAFE_PATH = re.compile(r"[^A-Za-z0-9._-]")


def _safe_name(name: str) -> str:
    return _UNSAFE_PATH.sub("_", name) or "instance"


def _write_outputs(run_dir: Path, states: Sequence[RefinementState]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics = aggregate_metrics(states)
    (run_dir / "report.txt").write_text(format_metrics(metrics), encoding="utf-8")

    with open(run_dir / "report.csv", "w", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            [
                "instance_id",
                "status",
                "iterations_to_valid",
                "llm_calls",
                "prover_calls",
                "final_explanations",
                "pruned_explanations",
                "error",
            ]
        )
        for state in states:
            writer.writerow(
                [
                    state.instance.id,
                    state.status.value,
                    "" if state.iterations_to_valid is None else state.iterations_to_valid,
                    state.llm_calls,
                    state.prover_calls,
                    " | ".join(state.final_explanations),
                    " | ".join(state.pruned_explanations),
                    state.error or "",
                ]
            )

    rows = [
        (state.instance.id, row.index, row.similarity, row.informalised or "")
        for state in states
        for row in state.faithfulness
    ]
    with open(run_dir / "faithfulness.csv", "w", encoding="utf-8") as handle:
        write_faithfulness_csv(rows, handle)

    for state in states:
        instance_dir = run_dir / _safe_name(state.instance.id)
        instance_dir.mkdir(parents=True, exist_ok=True)
        with open(instance_dir / "history.jsonl", "w", encoding="utf-8") as handle:
            for record in state.iterations:
                handle.write(
                    json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
                    + "\n"
                )
        for record in state.iterations:
            iter_dir = instance_dir / str(record.iteration)
            iter_dir.mkdir(parents=True, exist_ok=True)
            if record.theory_text:
                (iter_dir / "main.thy").write_text(
                    record.theory_text, encoding="utf-8"
                )
            if record.consistency_text:
                (iter_dir / "consistency.thy").write_text(
                    record.consistency_text, encoding="utf-8"
                )
            with open(iter_dir / "verdicts.log", "w", encoding="utf-8") as handle:
                for event in record.prover_events:
                    handle.write(
                        json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n"
                    )


def _exit_code(states: Sequence[RefinementState]) -> int:
    if any(s.status is Status.ABORTED for s in states):
        return 3
    if all(s.succeeded for s in states) and states:
        return 0
    return 0 if not states else 1


def _run_command(args: argparse.Namespace, single_pass: bool) -> int:
    cfg = _load_run_config(args)
    instance_file = load_instances(args.instances)
    options = _pipeline_options(cfg, single_pass)
    states = _run_batch(cfg, options, instance_file.instances)
    run_dir = Path(cfg.output or "run")
    _write_outputs(run_dir, states)
    for state in states:
        line = f"{state.instance.id}: {state.status.value}"
        if state.error:
            line += f" ({state.error})"
        print(line)
    sys.stdout.write(format_metrics(aggregate_metrics(states)))
    return _exit_code(states)


def _cmd_verify(args: argparse.Namespace) -> int:
    return _run_command(args, single_pass=True)


def _cmd_refine(args: argparse.Namespace) -> int:
    return _run_command(args, single_pass=False)


def _cmd_derive(args: argparse.Namespace) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    try:
        model = parse_logical_information(text)
        model = derive_implications(model)
    except (FormatError, TooManyAtoms) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    formatted = format_logical_information(model)
    if args.output:
        Path(args.output).write_text(formatted, encoding="utf-8")
    else:
        sys.stdout.write(formatted)
    return 0


def _cmd_informalise(args: argparse.Namespace) -> int:
    path = Path(args.input)
    text = path.read_text(encoding="utf-8")
    try:
        doc = parse_theory(text, name=path.stem)
    except (TheoryParseError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rows = [
        (path.stem, row.index, row.similarity, row.informalised or "")
        for row in faithfulness_rows(doc)
    ]
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            write_faithfulness_csv(rows, handle)
    else:
        write_faithfulness_csv(rows, sys.stdout)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CassetteMiss, CassetteMismatch, SessionDown, ProviderError, TemplateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
