"""Instance files and run configuration.

Instances travel as JSON lines.  An optional header object carrying only a
``dataset`` tag may precede them; every other line is one instance with an
id, optional premises, a hypothesis, and explanation sentences.  Loading and
saving round-trip exactly.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from .theory import NLIInstance


class DatasetError(Exception):
    """An instance file could not be read; points at the offending line."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        where = f"line {line_no}: " if line_no else ""
        super().__init__(where + message)
        self.line_no = line_no


class ConfigError(Exception):
    """A run configuration value is unusable."""


@dataclass(frozen=True)
class InstanceFile:
    dataset: Optional[str]
    instances: tuple[NLIInstance, ...]


def _string_list(value, what: str, line_no: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise DatasetError(f"{what} must be a list of strings", line_no)
    return tuple(value)


def _parse_instance(data: dict, line_no: int) -> NLIInstance:
    unknown = set(data) - {"id", "premises", "hypothesis", "explanations"}
    if unknown:
        raise DatasetError(f"unknown instance keys: {sorted(unknown)}", line_no)
    instance_id = data.get("id")
    if not isinstance(instance_id, str) or not instance_id.strip():
        raise DatasetError("instance needs a non-empty string 'id'", line_no)
    hypothesis = data.get("hypothesis")
    if not isinstance(hypothesis, str) or not hypothesis.strip():
        raise DatasetError("instance needs a non-empty 'hypothesis'", line_no)
    premises = _string_list(data.get("premises", []), "'premises'", line_no)
    explanations = _string_list(
        data.get("explanations", []), "'explanations'", line_no
    )
    return NLIInstance(
        id=instance_id,
        premises=premises,
        hypothesis=hypothesis,
        explanations=explanations,
    )


def load_instances(path: Union[str, Path]) -> InstanceFile:
    dataset: Optional[str] = None
    instances: list[NLIInstance] = []
    seen: set[str] = set()
    first_content_line = True
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"not valid JSON: {exc}", line_no) from exc
            if not isinstance(data, dict):
                raise DatasetError("each line must be a JSON object", line_no)
            if first_content_line and set(data) == {"dataset"}:
                if not isinstance(data["dataset"], str):
                    raise DatasetError("'dataset' tag must be a string", line_no)
                dataset = data["dataset"]
                first_content_line = False
                continue
            first_content_line = False
            instance = _parse_instance(data, line_no)
            if instance.id in seen:
                raise DatasetError(f"duplicate instance id {instance.id!r}", line_no)
            seen.add(instance.id)
            instances.append(instance)
    return InstanceFile(dataset=dataset, instances=tuple(instances))


def save_instances(instance_file: InstanceFile, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        if instance_file.dataset is not None:
            handle.write(
                json.dumps({"dataset": instance_file.dataset}, ensure_ascii=False)
                + "\n"
            )
        for instance in instance_file.instances:
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


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond the instances themselves.

    ``api_key_env`` names the environment variable holding the provider key;
    the key itself never appears in configuration data.
    """

    mode: str = "replay"
    jobs: int = 1
    max_iterations: int = 10
    max_syntax_repairs: int = 5
    quantifier_refine: bool = True
    syntax_refine: bool = True
    logical_relations: bool = True
    detailed_feedback: bool = True
    compute_faithfulness: bool = True
    cassette: Optional[str] = None
    prover_cmd: Optional[str] = None
    timeout: float = 30.0
    output: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "NLPROOF_API_KEY"
    requests_per_minute: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("live", "record", "replay"):
            raise ConfigError(f"mode must be live, record, or replay: {self.mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.mode in ("record", "replay") and not self.cassette:
            raise ConfigError(f"mode {self.mode!r} needs a cassette path")

    @property
    def effective_jobs(self) -> int:
        # Cassettes are strictly ordered, so replay and record run
        # single-threaded regardless of the jobs setting.
        return 1 if self.mode in ("replay", "record") else self.jobs

    def prover_argv(self) -> Optional[list[str]]:
        if not self.prover_cmd:
            return None
        argv = shlex.split(self.prover_cmd)
        if not argv:
            raise ConfigError("prover command is empty")
        return argv


_SECRET_KEYS = {"api_key", "apikey", "token", "secret"}


def load_config_file(path: Union[str, Path]) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key.lower() in _SECRET_KEYS:
            raise ConfigError(
                f"config must not contain secrets ({key!r}); "
                "put the key in the environment variable named by 'api_key_env'"
            )
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    return data


def merge_config(base: RunConfig, overrides: dict) -> RunConfig:
    """Apply config-file values on top of flag-derived settings.

    File values win over flags so a checked-in config fully pins a run.
    """

    if not overrides:
        return base
    return replace(base, **overrides)
