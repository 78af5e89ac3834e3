"""Template realization of concept sets as operator-facing sentences.

Wording lives in a JSON lexicon (``data/lexicon_en.json``); this module only
fills templates. Numbers are rendered exactly (shortest round-trip form), so
every numeral in a sentence can be traced back to the concept set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Protocol

from .explainer import EQ, NE, Condition, ConceptSet
from .telemetry import BOOLEAN, LABELS, DEFAULT_SCHEMA, FeatureSchema, format_wall

DEFAULT_LEXICON_PATH = Path(__file__).parent / "data" / "lexicon_en.json"
RELATIONS = ("<", ">=", "==", "!=")
TIME_MODES = ("mission", "wall")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class Lexicon:
    behaviours: dict
    features: dict
    relations: dict
    templates: dict
    stale_marker: str
    agent: str = "the vehicle"

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema = DEFAULT_SCHEMA) -> "Lexicon":
        for section in ("behaviours", "features", "relations", "templates", "stale_marker"):
            if section not in d:
                raise LexiconError(f"lexicon lacks section {section!r}")
        lex = cls(
            behaviours=dict(d["behaviours"]),
            features=dict(d["features"]),
            relations=dict(d["relations"]),
            templates=dict(d["templates"]),
            stale_marker=str(d["stale_marker"]),
            agent=str(d.get("agent", "the vehicle")),
        )
        lex.check(schema)
        return lex

    @classmethod
    def load(cls, path: str | Path = DEFAULT_LEXICON_PATH, schema: FeatureSchema = DEFAULT_SCHEMA) -> "Lexicon":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise LexiconError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d, schema)

    def check(self, schema: FeatureSchema) -> None:
        """Raise LexiconError unless every label, feature and relation is covered."""
        missing = [l.value for l in LABELS if l.value not in self.behaviours]
        if missing:
            raise LexiconError(f"lexicon has no phrase for behaviours {missing}")
        for spec in schema:
            entry = self.features.get(spec.name)
            if not entry or "phrase" not in entry:
                raise LexiconError(f"lexicon has no phrase for feature {spec.name!r}")
            if spec.kind == BOOLEAN and not ("true" in entry and "false" in entry):
                raise LexiconError(f"boolean feature {spec.name!r} needs true/false clauses")
        missing = [r for r in RELATIONS if r not in self.relations]
        if missing:
            raise LexiconError(f"lexicon has no phrase for relations {missing}")
        for key in ("event", "default"):
            if key not in self.templates:
                raise LexiconError(f"lexicon lacks template {key!r}")

    def feature(self, name: str) -> dict:
        try:
            return self.features[name]
        except KeyError:
            raise LexiconError(f"lexicon has no phrase for feature {name!r}") from None


def format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def format_time(t: float, wall: datetime | None = None, mode: str = "mission") -> str:
    """``HH:MM:SS`` of mission time (floored), or the ISO 8601 UTC wall clock."""
    if mode == "wall":
        if wall is None:
            raise ValueError("wall mode needs a wall-clock instant")
        return format_wall(wall)
    if mode != "mission":
        raise ValueError(f"unknown time mode {mode!r}")
    if t < 0:
        raise ValueError("mission time must be non-negative")
    total = math.floor(t)
    hours, rest = divmod(total, 3600)
    minutes, seconds = divmod(rest, 60)
    return f"{hours:02d}:{minutes:02d}:{seconds:02d}"


def realize_condition(c: Condition, lex: Lexicon) -> str:
    entry = lex.feature(c.feature)
    if "true" in entry and "false" in entry and c.relation in (EQ, NE):
        truth = float(c.value) == 1.0
        if c.relation == NE:
            truth = not truth
        phrase = entry["true" if truth else "false"]
    else:
        if c.relation not in lex.relations:
            raise LexiconError(f"lexicon has no phrase for relation {c.relation!r}")
        if isinstance(c.value, str):
            value = entry.get("values", {}).get(c.value, c.value)
        else:
            value = format_number(c.value)
            unit = entry.get("unit", c.unit)
            if unit:
                value = f"{value} {unit}"
        phrase = f"{entry['phrase']} {lex.relations[c.relation]} {value}"
    if c.stale:
        phrase = f"{phrase} {lex.stale_marker}"
    return phrase


def join_clauses(clauses: list[str]) -> str:
    if len(clauses) == 1:
        return clauses[0]
    return ", ".join(clauses[:-1]) + " and " + clauses[-1]


@dataclass(frozen=True)
class Sentence:
    text: str
    slots: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.text:
            raise ValueError("empty sentence")

    def __str__(self) -> str:
        return self.text


def realize(cs: ConceptSet, lex: Lexicon, time_mode: str = "mission") -> Sentence:
    if cs.behaviour.value not in lex.behaviours:
        raise LexiconError(f"lexicon has no phrase for behaviour {cs.behaviour.value!r}")
    fields = {
        "time": format_time(cs.t, cs.wall, time_mode),
        "agent": lex.agent,
        "behaviour": lex.behaviours[cs.behaviour.value],
    }
    slots = [("time", "time"), ("behaviour", "behaviour")]
    if cs.causality:
        clauses = [realize_condition(c, lex) for c in cs.causality]
        fields["causes"] = join_clauses(clauses)
        slots += [(f"cause[{i}]", f"causality[{i}]") for i in range(len(clauses))]
        text = lex.templates["event"].format(**fields)
    else:
        text = lex.templates["default"].format(**fields)
    return Sentence(text, tuple(slots))


def realize_question(c: Condition, lex: Lexicon) -> str:
    """Interrogative rendering of one condition, e.g. for operator prompts."""
    template = lex.templates.get("question", "Was it the case that {condition}?")
    return template.format(condition=realize_condition(c, lex))


class Realizer(Protocol):
    def realize(self, cs: ConceptSet) -> Sentence: ...


@dataclass(frozen=True)
class TemplateRealizer:
    """The shipped realizer. Anything with ``realize(cs) -> Sentence`` can replace it."""

    lexicon: Lexicon
    time_mode: str = "mission"

    def __post_init__(self):
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"unknown time mode {self.time_mode!r}")

    def realize(self, cs: ConceptSet) -> Sentence:
        return realize(cs, self.lexicon, self.time_mode)
