"""Vehicle state model, feature encoding and the JSON-lines trace format.

One trace line is one JSON object with the keys listed in ``TRACE_KEYS``.
``obstacle_range`` is written as the string ``"inf"`` when nothing is
detected; ``behaviour`` is omitted for unlabeled inference streams.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Sequence

NO_OBSTACLE_SENTINEL = 1.0e9

TRACE_KEYS = (
    "t", "wall", "x", "y", "depth", "speed", "heading", "battery",
    "objective_id", "objective_complete", "obstacle_range",
    "in_exclusion_zone", "gps_fix_age", "behaviour",
)


class BehaviourLabel(str, enum.Enum):
    GOTO = "goto"
    TRANSIT = "transit"
    SURVEY = "survey"
    WAIT = "wait"
    GPS = "gps"
    AVOID_OBSTACLES = "avoid-obstacles"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "BehaviourLabel":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown behaviour label {text!r}") from None


LABELS: tuple[BehaviourLabel, ...] = tuple(BehaviourLabel)
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


class TraceParseError(ValueError):
    """A trace line could not be decoded; carries the field and line number."""

    def __init__(self, message: str, field: str | None = None, lineno: int | None = None):
        self.field = field
        self.lineno = lineno
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class TimestampRegressionError(ValueError):
    pass


def format_wall(wall: datetime) -> str:
    """Canonical ISO 8601 UTC rendering with a ``Z`` suffix."""
    wall = wall.astimezone(timezone.utc)
    if wall.microsecond:
        return wall.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return wall.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_wall(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    wall = datetime.fromisoformat(text)
    if wall.tzinfo is None:
        raise ValueError("wall-clock instant must carry a UTC offset")
    return wall.astimezone(timezone.utc)


@dataclass(frozen=True)
class VehicleState:
    t: float
    wall: datetime
    x: float
    y: float
    depth: float
    speed: float
    heading: float
    battery: float
    objective_id: str | None
    objective_complete: bool
    obstacle_range: float
    in_exclusion_zone: bool
    gps_fix_age: float

    def __post_init__(self):
        for name in ("t", "x", "y", "depth", "speed", "heading", "battery", "gps_fix_age"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if math.isnan(self.obstacle_range) or self.obstacle_range == -math.inf:
            raise ValueError(f"obstacle_range must be finite or +inf, got {self.obstacle_range!r}")
        if self.obstacle_range < 0:
            raise ValueError("obstacle_range must be non-negative")
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if not 0.0 <= self.heading < 360.0:
            raise ValueError("heading must lie in [0, 360)")
        if not 0.0 <= self.battery <= 100.0:
            raise ValueError("battery must lie in [0, 100]")
        if self.gps_fix_age < 0:
            raise ValueError("gps_fix_age must be non-negative")
        if self.wall.tzinfo is None:
            raise ValueError("wall must be timezone-aware")


@dataclass(frozen=True)
class TraceRecord:
    state: VehicleState
    behaviour: BehaviourLabel | None = None

    def to_json(self) -> dict:
        s = self.state
        obj = {
            "t": float(s.t),
            "wall": format_wall(s.wall),
            "x": float(s.x),
            "y": float(s.y),
            "depth": float(s.depth),
            "speed": float(s.speed),
            "heading": float(s.heading),
            "battery": float(s.battery),
            "objective_id": s.objective_id,
            "objective_complete": bool(s.objective_complete),
            "obstacle_range": "inf" if math.isinf(s.obstacle_range) else float(s.obstacle_range),
            "in_exclusion_zone": bool(s.in_exclusion_zone),
            "gps_fix_age": float(s.gps_fix_age),
        }
        if self.behaviour is not None:
            obj["behaviour"] = self.behaviour.value
        return obj

    def to_line(self) -> str:
        """Serialize to one line (no trailing newline)."""
        return json.dumps(self.to_json(), separators=(",", ":"), allow_nan=False)


def _reject_constant(name: str):
    raise ValueError(f"non-finite literal {name}")


def _number(obj: dict, key: str, lineno: int | None) -> float:
    if key not in obj:
        raise TraceParseError("missing field", key, lineno)
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceParseError(f"expected a number, got {value!r}", key, lineno)
    value = float(value)
    if not math.isfinite(value):
        raise TraceParseError("non-finite numeric value", key, lineno)
    return value


def _boolean(obj: dict, key: str, lineno: int | None) -> bool:
    if key not in obj:
        raise TraceParseError("missing field", key, lineno)
    value = obj[key]
    if not isinstance(value, bool):
        raise TraceParseError(f"expected a boolean, got {value!r}", key, lineno)
    return value


def parse_trace_record(line: str, lineno: int | None = None) -> TraceRecord:
    """Decode one trace line.

    Raises TraceParseError naming the offending field (and the line number
    when given) for malformed input, unknown labels and non-finite numbers.
    """
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise TraceParseError(f"malformed JSON ({exc})", None, lineno) from None
    if not isinstance(obj, dict):
        raise TraceParseError("record must be a JSON object", None, lineno)
    unknown = set(obj) - set(TRACE_KEYS)
    if unknown:
        raise TraceParseError("unexpected field", sorted(unknown)[0], lineno)

    if "wall" not in obj:
        raise TraceParseError("missing field", "wall", lineno)
    if not isinstance(obj["wall"], str):
        raise TraceParseError("expected an ISO 8601 string", "wall", lineno)
    try:
        wall = parse_wall(obj["wall"])
    except ValueError as exc:
        raise TraceParseError(str(exc), "wall", lineno) from None

    if "objective_id" not in obj:
        raise TraceParseError("missing field", "objective_id", lineno)
    objective_id = obj["objective_id"]
    if objective_id is not None and not isinstance(objective_id, str):
        raise TraceParseError("expected a string or null", "objective_id", lineno)

    if "obstacle_range" not in obj:
        raise TraceParseError("missing field", "obstacle_range", lineno)
    if obj["obstacle_range"] == "inf":
        obstacle_range = math.inf
    else:
        obstacle_range = _number(obj, "obstacle_range", lineno)

    behaviour = None
    if "behaviour" in obj:
        if not isinstance(obj["behaviour"], str):
            raise TraceParseError("expected a string", "behaviour", lineno)
        try:
            behaviour = BehaviourLabel.parse(obj["behaviour"])
        except ValueError as exc:
            raise TraceParseError(str(exc), "behaviour", lineno) from None

    fields = dict(
        t=_number(obj, "t", lineno),
        wall=wall,
        x=_number(obj, "x", lineno),
        y=_number(obj, "y", lineno),
        depth=_number(obj, "depth", lineno),
        speed=_number(obj, "speed", lineno),
        heading=_number(obj, "heading", lineno),
        battery=_number(obj, "battery", lineno),
        objective_id=objective_id,
        objective_complete=_boolean(obj, "objective_complete", lineno),
        obstacle_range=obstacle_range,
        in_exclusion_zone=_boolean(obj, "in_exclusion_zone", lineno),
        gps_fix_age=_number(obj, "gps_fix_age", lineno),
    )
    try:
        state = VehicleState(**fields)
    except ValueError as exc:
        name = str(exc).split(" ", 1)[0]
        raise TraceParseError(str(exc), name if name in fields else None, lineno) from None
    return TraceRecord(state, behaviour)


def iter_trace(lines: Iterable[str | bytes], start_line: int = 1) -> Iterator[TraceRecord]:
    """Parse records lazily, checking that timestamps strictly increase."""
    prev_t = None
    prev_lineno = None
    for lineno, raw in enumerate(lines, start=start_line):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        record = parse_trace_record(raw, lineno)
        if prev_t is not None and record.state.t <= prev_t:
            raise TimestampRegressionError(
                f"timestamp regression: line {lineno} (t={record.state.t!r}) "
                f"does not follow line {prev_lineno} (t={prev_t!r})"
            )
        prev_t, prev_lineno = record.state.t, lineno
        yield record


def read_trace(source: IO) -> list[TraceRecord]:
    """Read every record from a text or byte stream, in file order."""
    return list(iter_trace(source))


def write_trace(records: Iterable[TraceRecord], sink: IO[str]) -> int:
    n = 0
    for record in records:
        sink.write(record.to_line())
        sink.write("\n")
        n += 1
    return n


def dumps_trace(records: Iterable[TraceRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


# -- feature encoding ---------------------------------------------------------

NUMERIC, BOOLEAN, CATEGORICAL = "numeric", "boolean", "categorical"
NO_OBJECTIVE = "none"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    unit: str = ""

    def __post_init__(self):
        if self.kind not in (NUMERIC, BOOLEAN, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def is_equality(self) -> bool:
        """Boolean and categorical features are split by equality."""
        return self.kind != NUMERIC


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        for f in self.features:
            if f.name not in _STATE_FIELDS:
                raise ValueError(f"feature {f.name!r} is not a VehicleState field")

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> FeatureSpec:
        return self.features[i]

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> list[dict]:
        return [{"name": f.name, "kind": f.kind, "unit": f.unit} for f in self.features]

    @classmethod
    def from_json(cls, items: Sequence[dict]) -> "FeatureSchema":
        return cls(tuple(FeatureSpec(d["name"], d["kind"], d.get("unit", "")) for d in items))

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_STATE_FIELDS = {
    "x", "y", "depth", "speed", "heading", "battery", "objective_id",
    "objective_complete", "obstacle_range", "in_exclusion_zone", "gps_fix_age",
}

# Raw x/y/heading are left out: they tie the tree to one mission geometry.
# Order matters for split tie-breaking (lowest index wins). Mission and
# sensing features come before battery, depth and speed, which drift
# monotonically over a mission and would otherwise win ties as time proxies.
DEFAULT_SCHEMA = FeatureSchema((
    FeatureSpec("objective_id", CATEGORICAL),
    FeatureSpec("objective_complete", BOOLEAN),
    FeatureSpec("obstacle_range", NUMERIC, "m"),
    FeatureSpec("gps_fix_age", NUMERIC, "s"),
    FeatureSpec("in_exclusion_zone", BOOLEAN),
    FeatureSpec("battery", NUMERIC, "%"),
    FeatureSpec("depth", NUMERIC, "m"),
    FeatureSpec("speed", NUMERIC, "m/s"),
))

# Optional extras for schemas configured with position features.
OPTIONAL_FEATURES = {
    "x": FeatureSpec("x", NUMERIC, "m"),
    "y": FeatureSpec("y", NUMERIC, "m"),
    "heading": FeatureSpec("heading", NUMERIC, "deg"),
}


def schema_from_names(names: Sequence[str]) -> FeatureSchema:
    """Build a schema from feature names using the default kinds and units."""
    known = {f.name: f for f in DEFAULT_SCHEMA}
    known.update(OPTIONAL_FEATURES)
    try:
        return FeatureSchema(tuple(known[n] for n in names))
    except KeyError as exc:
        raise ValueError(f"unknown feature {exc.args[0]!r}") from None


@dataclass(frozen=True)
class FeatureVector:
    """Encoded state. Numeric and boolean entries are floats, categorical ones strings.

    ``stale`` holds names of features whose last update is older than the
    allowed age (see ``explainer.staleness_guard``).
    """

    values: tuple
    schema: FeatureSchema
    stale: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.values) != len(self.schema):
            raise ValueError("feature vector length does not match schema")

    @property
    def fingerprint(self) -> str:
        return self.schema.fingerprint

    def __getitem__(self, key):
        if isinstance(key, str):
            key = self.schema.index(key)
        return self.values[key]

    def as_dict(self) -> dict:
        return dict(zip(self.schema.names, self.values))


def encode_value(spec: FeatureSpec, raw):
    if spec.kind == NUMERIC:
        if spec.name == "obstacle_range" and math.isinf(raw):
            return NO_OBSTACLE_SENTINEL
        return float(raw)
    if spec.kind == BOOLEAN:
        return 1.0 if raw else 0.0
    return NO_OBJECTIVE if raw is None else str(raw)


def featurize(state: VehicleState, schema: FeatureSchema = DEFAULT_SCHEMA) -> FeatureVector:
    return FeatureVector(tuple(encode_value(f, getattr(state, f.name)) for f in schema), schema)
