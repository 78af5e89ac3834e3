"""Tree traversal, causality simplification and behaviour-change events.

A traversal is the root-to-leaf path a feature vector takes through the
distilled tree. Its split tests, simplified to one bound per side for numeric
features and one equality (or a set of exclusions) for categorical ones,
become the causality of a ``ConceptSet``: the (behaviour, causality, time)
triple reported to the operator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Iterator, Mapping

from .distiller import EQUALITY, THRESHOLD, DecisionTree, SplitCondition, check_fingerprint
from .telemetry import (
    BOOLEAN,
    BehaviourLabel,
    FeatureSchema,
    FeatureVector,
    TimestampRegressionError,
    TraceRecord,
    VehicleState,
    featurize,
    format_wall,
)

LEFT, RIGHT = "left", "right"
LT, GE, EQ, NE = "<", ">=", "==", "!="
MISSION_START, BEHAVIOUR_CHANGE = "mission_start", "behaviour_change"


class InconsistentPathError(RuntimeError):
    """A path whose conditions cannot all hold; the tree must be corrupt."""


@dataclass(frozen=True)
class TraversalPath:
    steps: tuple[tuple[SplitCondition, str], ...]
    leaf: int
    label: BehaviourLabel
    confidence: float
    schema: FeatureSchema
    stale: frozenset = frozenset()

    def satisfied_by(self, values) -> bool:
        """Whether a raw value tuple takes every recorded branch."""
        for cond, branch in self.steps:
            if cond.goes_left(values[cond.feature]) != (branch == LEFT):
                return False
        return True


@dataclass(frozen=True)
class Condition:
    feature: str
    relation: str
    value: float | str
    unit: str = ""
    stale: bool = False

    def holds(self, value) -> bool:
        if self.relation == LT:
            return value < self.value
        if self.relation == GE:
            return value >= self.value
        if self.relation == EQ:
            return value == self.value
        return value != self.value

    def to_json(self) -> dict:
        return {
            "feature": self.feature,
            "relation": self.relation,
            "value": self.value,
            "unit": self.unit,
            "stale": self.stale,
        }


@dataclass(frozen=True)
class ConceptSet:
    behaviour: BehaviourLabel
    causality: tuple[Condition, ...]
    t: float
    wall: datetime
    confidence: float

    @property
    def time(self) -> tuple[float, datetime]:
        return self.t, self.wall


@dataclass(frozen=True)
class ExplanationEvent:
    concept_set: ConceptSet
    previous_behaviour: BehaviourLabel | None
    trigger: str

    def __post_init__(self):
        if (self.trigger == MISSION_START) != (self.previous_behaviour is None):
            raise ValueError("mission_start events, and only those, have no previous behaviour")

    def to_json(self, sentence: str | None = None) -> dict:
        cs = self.concept_set
        return {
            "t": cs.t,
            "wall": format_wall(cs.wall),
            "behaviour": cs.behaviour.value,
            "previous": None if self.previous_behaviour is None else self.previous_behaviour.value,
            "trigger": self.trigger,
            "confidence": cs.confidence,
            "conditions": [c.to_json() for c in cs.causality],
            "sentence": sentence,
        }

    def to_line(self, sentence: str | None = None) -> str:
        return json.dumps(self.to_json(sentence), ensure_ascii=False, separators=(",", ":"))


def traverse(tree: DecisionTree, fv: FeatureVector) -> TraversalPath:
    check_fingerprint(tree, fv)
    steps = []
    i = tree.root
    node = tree.nodes[i]
    while not node.is_leaf:
        left = node.split.goes_left(fv.values[node.split.feature])
        steps.append((node.split, LEFT if left else RIGHT))
        i = node.left if left else node.right
        node = tree.nodes[i]
    return TraversalPath(tuple(steps), i, node.label, node.confidence, tree.schema, fv.stale)


def simplify_path(path: TraversalPath, schema: FeatureSchema | None = None) -> list[Condition]:
    """Collapse a path into an equivalent, minimal list of conditions.

    Numeric features keep at most a tightest lower bound (``>=``) and upper
    bound (``<``); categorical features keep their equality if one was taken,
    otherwise every exclusion. Boolean exclusions become the complementary
    equality. Conditions are ordered by first appearance along the path.
    """
    schema = schema or path.schema
    first_seen: dict = {}
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    equal: dict[int, object] = {}
    excluded: dict[int, list] = {}

    for pos, (cond, branch) in enumerate(path.steps):
        j = cond.feature
        if cond.kind == THRESHOLD:
            if branch == LEFT:
                upper[j] = min(upper.get(j, cond.value), cond.value)
                first_seen.setdefault((j, LT), pos)
            else:
                lower[j] = max(lower.get(j, cond.value), cond.value)
                first_seen.setdefault((j, GE), pos)
        elif branch == LEFT:
            if j in equal and equal[j] != cond.value:
                raise InconsistentPathError(f"{schema[j].name} equals both {equal[j]!r} and {cond.value!r}")
            equal[j] = cond.value
            first_seen.setdefault((j, "cat"), pos)
        else:
            if schema[j].kind == BOOLEAN:
                flipped = 1.0 - float(cond.value)
                if j in equal and equal[j] != flipped:
                    raise InconsistentPathError(f"{schema[j].name} is both true and false")
                equal[j] = flipped
            elif cond.value not in excluded.setdefault(j, []):
                excluded[j].append(cond.value)
            first_seen.setdefault((j, "cat"), pos)

    for j in set(lower) & set(upper):
        if lower[j] >= upper[j]:
            raise InconsistentPathError(
                f"{schema[j].name}: lower bound {lower[j]!r} >= upper bound {upper[j]!r}"
            )
    for j, v in equal.items():
        if v in excluded.get(j, ()):
            raise InconsistentPathError(f"{schema[j].name} both equals and excludes {v!r}")

    conditions = []
    for (j, tag), pos in sorted(first_seen.items(), key=lambda item: item[1]):
        spec = schema[j]
        stale = spec.name in path.stale
        if tag == LT:
            conditions.append(Condition(spec.name, LT, upper[j], spec.unit, stale))
        elif tag == GE:
            conditions.append(Condition(spec.name, GE, lower[j], spec.unit, stale))
        elif j in equal:
            conditions.append(Condition(spec.name, EQ, equal[j], spec.unit, stale))
        else:
            conditions.extend(Condition(spec.name, NE, v, spec.unit, stale) for v in excluded[j])
    return conditions


def conditions_hold(conditions: Iterable[Condition], fv: FeatureVector) -> bool:
    values = fv.as_dict()
    return all(c.holds(values[c.feature]) for c in conditions)


def extract_concept_set(path: TraversalPath, state: VehicleState) -> ConceptSet:
    return ConceptSet(
        behaviour=path.label,
        causality=tuple(simplify_path(path)),
        t=state.t,
        wall=state.wall,
        confidence=path.confidence,
    )


def staleness_guard(fv: FeatureVector, ages: Mapping[str, float], max_age: float) -> FeatureVector:
    """Mark features whose last update is older than ``max_age`` seconds.

    Values are left untouched (the tree keeps using the last known value);
    only the annotation changes. Features absent from ``ages`` count as fresh.
    """
    for name, age in ages.items():
        if age < 0:
            raise ValueError(f"negative age for {name!r}")
    stale = frozenset(n for n in fv.schema.names if ages.get(n, 0.0) > max_age)
    return replace(fv, stale=stale)


@dataclass
class EventDetector:
    """Stateful fold turning a tick stream into explanation events.

    ``min_dwell`` > 1 only reports a change once the new prediction has held
    for that many consecutive ticks; the event then carries the concept set
    of the first tick of the new run.
    """

    tree: DecisionTree
    min_dwell: int = 0
    _last_t: float | None = field(default=None, init=False)
    _current: BehaviourLabel | None = field(default=None, init=False)
    _pending: tuple | None = field(default=None, init=False)

    def push(self, state: VehicleState, fv: FeatureVector) -> ExplanationEvent | None:
        if self._last_t is not None and state.t <= self._last_t:
            raise TimestampRegressionError(
                f"timestamp regression: t={state.t!r} after t={self._last_t!r}"
            )
        self._last_t = state.t
        path = traverse(self.tree, fv)
        label = path.label

        if self._current is None:
            self._current = label
            return ExplanationEvent(extract_concept_set(path, state), None, MISSION_START)
        if label == self._current:
            self._pending = None
            return None
        if self.min_dwell <= 1:
            previous, self._current = self._current, label
            return ExplanationEvent(extract_concept_set(path, state), previous, BEHAVIOUR_CHANGE)

        if self._pending is None or self._pending[0] != label:
            self._pending = (label, extract_concept_set(path, state), 1)
        else:
            self._pending = (label, self._pending[1], self._pending[2] + 1)
        if self._pending[2] >= self.min_dwell:
            previous, self._current = self._current, label
            concept = self._pending[1]
            self._pending = None
            return ExplanationEvent(concept, previous, BEHAVIOUR_CHANGE)
        return None


def detect_events(
    stream: Iterable[tuple[VehicleState, FeatureVector]],
    tree: DecisionTree,
    min_dwell: int = 0,
) -> Iterator[ExplanationEvent]:
    detector = EventDetector(tree, min_dwell)
    for state, fv in stream:
        event = detector.push(state, fv)
        if event is not None:
            yield event


def featurized(records: Iterable[TraceRecord], schema: FeatureSchema) -> Iterator[tuple[VehicleState, FeatureVector]]:
    for r in records:
        yield r.state, featurize(r.state, schema)
