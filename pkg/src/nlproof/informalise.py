"""Rule-based back-translation of logical forms into plain sentences, and a
lexical faithfulness score between the original sentence and that rendering.

The supported fragment mirrors what the formalisation step produces:
quantified conjunctions of unary attribute predicates and binary role
predicates, optionally combined by implication or disjunction.  Anything
else raises UnsupportedShape rather than being dropped silently.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

from .logic import (
    And,
    Exists,
    Forall,
    Formula,
    Iff,
    Implies,
    Not,
    Or,
    Predicate,
    render_formula,
)

__all__ = [
    "EntityDescriptor",
    "EventFrame",
    "FaithfulnessReport",
    "RoleLexicon",
    "DEFAULT_ROLES",
    "UnsupportedShape",
    "EmbedderUnavailable",
    "LexicalEmbedder",
    "RemoteEmbedder",
    "cosine",
    "split_predicate_name",
    "informalise",
    "faithfulness",
    "write_faithfulness_csv",
]


class UnsupportedShape(Exception):
    """The formula falls outside the informalisable fragment."""

    def __init__(self, formula: Formula, reason: str):
        self.formula = formula
        self.reason = reason
        super().__init__(f"{reason}: {render_formula(formula)}")


class EmbedderUnavailable(Exception):
    pass


@dataclass(frozen=True)
class RoleLexicon:
    """Binary predicate names with special rendering.

    Event roles take the event variable first; prepositions render as
    ``<x> <word> <y>`` phrases.  Unknown binary predicates fall back to
    their own split name as the relation word.
    """

    agent: frozenset[str] = frozenset({"Agent"})
    patient: frozenset[str] = frozenset({"Patient"})
    theme: frozenset[str] = frozenset({"Theme"})
    location: frozenset[str] = frozenset({"Location"})
    prepositions: Mapping[str, str] = field(
        default_factory=lambda: {
            "At": "at",
            "Behind": "behind",
            "In": "in",
            "On": "on",
        }
    )

    def event_roles(self) -> frozenset[str]:
        return self.agent | self.patient | self.theme | self.location


DEFAULT_ROLES = RoleLexicon()


@dataclass(frozen=True)
class EntityDescriptor:
    variable: str
    attributes: tuple[str, ...]

    def phrase(self) -> str:
        """Attributes read right to left: adjectives first, head noun last."""

        if not self.attributes:
            return self.variable
        words = [split_predicate_name(a) for a in reversed(self.attributes)]
        return " ".join(words)


@dataclass(frozen=True)
class EventFrame:
    event_var: str
    verb: str
    roles: Mapping[str, tuple[str, ...]]


@dataclass(frozen=True)
class FaithfulnessReport:
    original: str
    informalised: str
    similarity: float


_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def split_predicate_name(name: str) -> str:
    """ParkBench -> "park bench"; underscores count as boundaries too."""

    parts = []
    for chunk in name.split("_"):
        if chunk:
            parts.extend(_CAMEL_BOUNDARY.split(chunk))
    return " ".join(p.lower() for p in parts if p)


def _strip_quantifiers(f: Formula) -> Formula:
    while isinstance(f, (Exists, Forall)):
        f = f.body
    return f


def _conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        return _conjuncts(f.left) + _conjuncts(f.right)
    return [f]


def informalise(f: Formula, roles: RoleLexicon = DEFAULT_ROLES) -> str:
    """Render a fragment formula as a plain lowercase phrase."""

    stripped = _strip_quantifiers(f)
    if isinstance(stripped, Implies):
        return "if %s, %s" % (
            informalise(stripped.left, roles),
            informalise(stripped.right, roles),
        )
    if isinstance(stripped, Or):
        return "%s or %s" % (
            informalise(stripped.left, roles),
            informalise(stripped.right, roles),
        )
    if isinstance(stripped, (Not, Iff)):
        raise UnsupportedShape(f, "negation and equivalence have no reading")
    return _render_conjunction(f, _conjuncts(stripped), roles)


def _render_conjunction(
    origin: Formula, conjuncts: Sequence[Formula], roles: RoleLexicon
) -> str:
    attributes: dict[str, list[str]] = {}
    event_roles: dict[str, dict[str, list[str]]] = {}
    relations: list[tuple[str, str, str]] = []
    var_order: list[str] = []

    def note_var(v: str) -> None:
        if v not in var_order:
            var_order.append(v)

    for conjunct in conjuncts:
        if not isinstance(conjunct, Predicate):
            raise UnsupportedShape(origin, "conjunct is not a predicate application")
        args = [a.name for a in conjunct.args]
        for a in args:
            note_var(a)
        if len(args) == 1:
            attributes.setdefault(args[0], []).append(conjunct.name)
        elif len(args) == 2:
            if conjunct.name in roles.event_roles():
                frame = event_roles.setdefault(args[0], {})
                frame.setdefault(conjunct.name, []).append(args[1])
            else:
                word = roles.prepositions.get(
                    conjunct.name, split_predicate_name(conjunct.name)
                )
                relations.append((args[0], word, args[1]))
        else:
            raise UnsupportedShape(origin, "predicates take one or two arguments")

    def entity_phrase(v: str) -> str:
        return EntityDescriptor(v, tuple(attributes.get(v, ()))).phrase()

    clauses: list[str] = []
    for event in (v for v in var_order if v in event_roles):
        frame = event_roles[event]
        verbs = attributes.get(event)
        if not verbs:
            raise UnsupportedShape(origin, f"event {event} has no verb predicate")
        words: list[str] = []
        agents = [v for role in sorted(roles.agent) for v in frame.get(role, ())]
        if agents:
            words.append(" and ".join(entity_phrase(v) for v in agents))
        words.extend(split_predicate_name(v) for v in verbs)
        for role_set in (roles.patient, roles.theme):
            participants = [v for role in sorted(role_set) for v in frame.get(role, ())]
            if participants:
                words.append(" and ".join(entity_phrase(v) for v in participants))
        for role in sorted(roles.location):
            for v in frame.get(role, ()):
                words.append(f"at {entity_phrase(v)}")
        for first, word, second in relations:
            if first == event:
                words.append(f"{word} {entity_phrase(second)}")
        clauses.append(" ".join(words))

    for first, word, second in relations:
        if first not in event_roles:
            clauses.append(f"{entity_phrase(first)} {word} {entity_phrase(second)}")

    if clauses:
        return "; ".join(clauses)
    # No events or relations at all: describe the entities themselves.
    described = [v for v in var_order if v in attributes]
    if not described:
        raise UnsupportedShape(origin, "nothing to describe")
    return ", ".join(entity_phrase(v) for v in described)


# --- faithfulness ----------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+")


class LexicalEmbedder:
    """Bag-of-tokens embedding: lowercase word counts, no weighting."""

    def embed(self, sentence: str) -> Mapping[str, float]:
        return Counter(_WORD.findall(sentence.lower()))


class RemoteEmbedder:
    """Calls an external embedding service; failures raise, never degrade."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def embed(self, sentence: str) -> Sequence[float]:
        import requests

        try:
            response = requests.post(
                self.url, json={"sentence": sentence}, timeout=self.timeout
            )
            response.raise_for_status()
            vector = response.json()["vector"]
        except Exception as exc:
            raise EmbedderUnavailable(str(exc)) from exc
        return [float(x) for x in vector]


Vector = Union[Mapping[str, float], Sequence[float]]


def cosine(u: Vector, v: Vector) -> float:
    """Cosine similarity; zero vectors score 0 against anything."""

    if isinstance(u, Mapping) and isinstance(v, Mapping):
        dot = sum(weight * v.get(token, 0.0) for token, weight in u.items())
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
    elif not isinstance(u, Mapping) and not isinstance(v, Mapping):
        if len(u) != len(v):
            raise ValueError("dense vectors must have equal dimension")
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
    else:
        raise ValueError("cannot mix sparse and dense vectors")
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def faithfulness(
    original: str,
    f: Formula,
    embedder: Optional[object] = None,
    roles: RoleLexicon = DEFAULT_ROLES,
) -> FaithfulnessReport:
    """Similarity between the original sentence and the formula's reading."""

    embedder = embedder or LexicalEmbedder()
    informalised = informalise(f, roles)
    similarity = cosine(embedder.embed(original), embedder.embed(informalised))
    return FaithfulnessReport(original, informalised, similarity)


def write_faithfulness_csv(
    rows: Iterable[tuple[str, object, Optional[float], str]], out: IO[str]
) -> None:
    """Rows are (instance_id, sentence_index, similarity or None, text)."""

    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["instance_id", "sentence_index", "similarity", "informalised_text"])
    for instance_id, sentence_index, similarity, text in rows:
        writer.writerow(
            [
                instance_id,
                sentence_index,
                "" if similarity is None else f"{similarity:.6f}",
                text,
            ]
        )
