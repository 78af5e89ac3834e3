import math
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helmexplain.distiller import FitParams, fit_tree, labelled_samples
from helmexplain.helm_sim import load_scenario
from helmexplain.telemetry import (
    DEFAULT_SCHEMA,
    LABELS,
    BehaviourLabel,
    FeatureSchema,
    FeatureSpec,
    FeatureVector,
    TraceRecord,
    VehicleState,
    featurize,
)

T0 = datetime(2022, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


def make_state(t=0.0, **overrides) -> VehicleState:
    fields = dict(
        t=t, wall=T0 + timedelta(seconds=t), x=0.0, y=0.0, depth=2.0, speed=1.0,
        heading=90.0, battery=80.0, objective_id="Transit1", objective_complete=False,
        obstacle_range=math.inf, in_exclusion_zone=False, gps_fix_age=10.0,
    )
    fields.update(overrides)
    return VehicleState(**fields)


def random_record(rng: np.random.Generator, t: float, labelled=True) -> TraceRecord:
    obstacle = math.inf if rng.random() < 0.3 else float(rng.uniform(0, 200))
    state = VehicleState(
        t=t,
        wall=T0 + timedelta(seconds=t) + timedelta(microseconds=int(rng.integers(0, 1_000_000))),
        x=float(rng.normal(0, 500)),
        y=float(rng.normal(0, 500)),
        depth=float(rng.uniform(0, 50)),
        speed=float(rng.uniform(0, 3)),
        heading=float(rng.uniform(0, 360)) % 360.0,
        battery=float(rng.uniform(0, 100)),
        objective_id=None if rng.random() < 0.2 else f"Obj{int(rng.integers(0, 9))}",
        objective_complete=bool(rng.random() < 0.5),
        obstacle_range=obstacle,
        in_exclusion_zone=bool(rng.random() < 0.5),
        gps_fix_age=float(rng.uniform(0, 1000)),
    )
    label = LABELS[int(rng.integers(0, len(LABELS)))] if labelled else None
    return TraceRecord(state, label)


def random_fv(rng: np.random.Generator) -> FeatureVector:
    return featurize(random_record(rng, 0.0).state)


def sample_for_path(rng, path, witness: FeatureVector):
    """Perturb a vector known to follow ``path`` at one to three of its tests.

    Numeric values move onto a cutoff, one ulp either side of it, or one unit
    away; categories flip between the tested value and another one. Roughly
    half the samples stay inside the path's region.
    """
    values = list(witness.values)
    if not path.steps:
        return witness
    for _ in range(int(rng.integers(1, 4))):
        cond, _ = path.steps[int(rng.integers(0, len(path.steps)))]
        j = cond.feature
        if isinstance(cond.value, str):
            values[j] = cond.value if rng.random() < 0.5 else f"Obj{int(rng.integers(0, 9))}"
        elif path.schema[j].kind == "boolean":
            values[j] = float(rng.integers(0, 2))
        else:
            c = cond.value
            nudge = [0.0, math.nextafter(c, math.inf) - c, math.nextafter(c, -math.inf) - c, 1.0, -1.0]
            values[j] = c + nudge[int(rng.integers(0, len(nudge)))]
    return FeatureVector(tuple(values), path.schema, witness.stale)


OBSTACLE_SCHEMA = FeatureSchema((FeatureSpec("obstacle_range", "numeric", "m"),))


def obstacle_samples():
    """Four-record dataset: close obstacles are avoided, far ones ignored."""
    data = [(5.0, BehaviourLabel.AVOID_OBSTACLES), (8.0, BehaviourLabel.AVOID_OBSTACLES),
            (50.0, BehaviourLabel.TRANSIT), (60.0, BehaviourLabel.TRANSIT)]
    return [(FeatureVector((r,), OBSTACLE_SCHEMA), label) for r, label in data]


@pytest.fixture(scope="session")
def obstacle_tree():
    return fit_tree(obstacle_samples(), FitParams(min_samples_leaf=1))


@pytest.fixture(scope="session")
def obstacle_scenario():
    return load_scenario("obstacle_field")


@pytest.fixture(scope="session")
def golden_run(obstacle_scenario):
    return obstacle_scenario.run()


@pytest.fixture(scope="session")
def golden_samples(golden_run):
    return labelled_samples(golden_run.records, DEFAULT_SCHEMA)


@pytest.fixture(scope="session")
def golden_tree(golden_samples):
    return fit_tree(golden_samples)


NUMERAL = r"(?<![\w.])-?\d+(?:\.\d+)?(?:e[+-]?\d+)?(?![\w.])"


def random_concept_set(rng: np.random.Generator):
    """Concept set with 0-4 random conditions drawn over the default schema."""
    from helmexplain.explainer import ConceptSet, Condition

    conditions = []
    for _ in range(int(rng.integers(0, 5))):
        spec = DEFAULT_SCHEMA[int(rng.integers(0, len(DEFAULT_SCHEMA)))]
        stale = bool(rng.random() < 0.2)
        if spec.kind == "categorical":
            value = "none" if rng.random() < 0.2 else f"Obj{int(rng.integers(0, 20))}"
            conditions.append(Condition(spec.name, str(rng.choice(["==", "!="])), value, spec.unit, stale))
        elif spec.kind == "boolean":
            conditions.append(Condition(spec.name, "==", float(rng.integers(0, 2)), spec.unit, stale))
        else:
            value = float(rng.choice([
                rng.uniform(0, 100), round(rng.uniform(0, 100), 2), float(rng.integers(0, 1000)),
                rng.uniform(0, 1e-4), 1.0e9, -rng.uniform(0, 5),
            ]))
            conditions.append(Condition(spec.name, str(rng.choice(["<", ">="])), value, spec.unit, stale))
    t = float(rng.uniform(0, 200000))
    return ConceptSet(
        behaviour=LABELS[int(rng.integers(0, len(LABELS)))],
        causality=tuple(conditions),
        t=t,
        wall=T0 + timedelta(seconds=t),
        confidence=float(rng.uniform(0.2, 1.0)),
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
