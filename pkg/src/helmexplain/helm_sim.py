"""A small priority-arbitrated behaviour helm and mission simulator.

This is the opaque autonomy the distiller learns from. Arbitration, highest
priority first:

1. ``avoid-obstacles`` when the nearest sensed obstacle is closer than
   ``obstacle_trigger_range``;
2. ``wait`` when the battery is below ``battery_wait_threshold``;
3. ``gps`` when the last position fix is older than ``gps_fix_interval``;
4. the behaviour of the first incomplete objective;
5. ``wait`` once every objective is complete.

Each tick records the state the helm saw and the behaviour it picked, then
applies that behaviour's motion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .telemetry import BehaviourLabel, TraceRecord, VehicleState, parse_wall

SURVEY_AREA, TRANSIT_WAYPOINT, GOTO_POINT = "survey_area", "transit_waypoint", "goto_point"
OBJECTIVE_BEHAVIOUR = {
    SURVEY_AREA: BehaviourLabel.SURVEY,
    TRANSIT_WAYPOINT: BehaviourLabel.TRANSIT,
    GOTO_POINT: BehaviourLabel.GOTO,
}


class ScenarioError(ValueError):
    """Invalid mission plan, helm configuration or scenario file."""


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ScenarioError(f"degenerate rectangle {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float

    def surface_distance(self, x: float, y: float) -> float:
        return max(0.0, math.hypot(x - self.x, y - self.y) - self.radius)


@dataclass(frozen=True)
class Objective:
    id: str
    kind: str
    geometry: Rect | tuple[float, float]
    tolerance: float
    depth: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_BEHAVIOUR:
            raise ScenarioError(f"objective {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == SURVEY_AREA and not isinstance(self.geometry, Rect):
            raise ScenarioError(f"objective {self.id!r}: survey needs a rectangle")
        if self.kind != SURVEY_AREA and isinstance(self.geometry, Rect):
            raise ScenarioError(f"objective {self.id!r}: {self.kind} needs a point")
        if self.tolerance <= 0:
            raise ScenarioError(f"objective {self.id!r}: tolerance must be positive")
        if self.depth < 0:
            raise ScenarioError(f"objective {self.id!r}: depth must be non-negative")

    @property
    def behaviour(self) -> BehaviourLabel:
        return OBJECTIVE_BEHAVIOUR[self.kind]


@dataclass(frozen=True)
class MissionPlan:
    objectives: tuple[Objective, ...]

    def __post_init__(self):
        if not self.objectives:
            raise ScenarioError("mission plan needs at least one objective")
        ids = [o.id for o in self.objectives]
        if len(set(ids)) != len(ids):
            raise ScenarioError("objective ids must be unique")

    def __len__(self) -> int:
        return len(self.objectives)

    def __getitem__(self, i: int) -> Objective:
        return self.objectives[i]


@dataclass(frozen=True)
class HelmConfig:
    gps_fix_interval: float = 600.0
    obstacle_trigger_range: float = 25.0
    battery_wait_threshold: float = 20.0
    cruise_speed: float = 1.0
    standoff_radius: float = 15.0
    sensor_range: float = 100.0
    range_resolution: float = 0.0  # sonar range bin in metres, 0 for exact ranges
    vertical_speed: float = 0.5
    cruise_drain: float = 0.02  # %/s
    wait_drain: float = 0.005  # %/s
    lane_spacing_factor: float = 2.0  # lawnmower spacing in completion tolerances
    post_mission_hold: float = 0.0  # seconds of wait emitted after the last objective

    def __post_init__(self):
        for name in ("gps_fix_interval", "obstacle_trigger_range", "battery_wait_threshold",
                     "cruise_speed", "standoff_radius", "sensor_range", "vertical_speed",
                     "cruise_drain", "wait_drain", "lane_spacing_factor"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(f"helm config {name} must be strictly positive, got {value!r}")
        if not 0 < self.battery_wait_threshold < 100:
            raise ScenarioError("battery_wait_threshold must lie in (0, 100)")
        if self.range_resolution < 0:
            raise ScenarioError("range_resolution must be non-negative")
        if self.post_mission_hold < 0:
            raise ScenarioError("post_mission_hold must be non-negative")


@dataclass(frozen=True)
class WorldState:
    x: float
    y: float
    depth: float
    heading: float
    speed: float
    battery: float
    clock: float
    gps_fix_age: float
    obstacles: tuple[Obstacle, ...] = ()
    exclusion_zones: tuple[Rect, ...] = ()
    completed: tuple[bool, ...] = ()
    survey_leg: int = 0
    just_completed: bool = False
    hold_elapsed: float = 0.0
    start_wall: datetime = datetime(2022, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


# -- geometry helpers ---------------------------------------------------------

def _compass(dx: float, dy: float) -> float:
    heading = math.degrees(math.atan2(dx, dy)) % 360.0
    return 0.0 if heading >= 360.0 else heading


def nearest_obstacle(world: WorldState) -> tuple[float, Obstacle | None]:
    best, nearest = math.inf, None
    for ob in world.obstacles:
        d = ob.surface_distance(world.x, world.y)
        if d < best:
            best, nearest = d, ob
    return best, nearest


def sensed_obstacle_range(world: WorldState, cfg: HelmConfig) -> float:
    """Range to the nearest obstacle surface, or +inf beyond sensor range.

    With a positive ``range_resolution`` the reading is floored to that bin.
    """
    rng, _ = nearest_obstacle(world)
    if rng > cfg.sensor_range:
        return math.inf
    if cfg.range_resolution:
        rng = math.floor(rng / cfg.range_resolution) * cfg.range_resolution
    return rng


def active_objective(world: WorldState) -> int | None:
    for i, done in enumerate(world.completed):
        if not done:
            return i
    return None


def lawnmower_waypoints(obj: Objective, cfg: HelmConfig) -> list[tuple[float, float]]:
    r = obj.geometry
    spacing = cfg.lane_spacing_factor * obj.tolerance
    points = []
    y, lane = r.ymin, 0
    while y <= r.ymax + 1e-9:
        ends = [(r.xmin, y), (r.xmax, y)]
        points.extend(ends if lane % 2 == 0 else ends[::-1])
        y += spacing
        lane += 1
    return points


def objective_target(world: WorldState, plan: MissionPlan, cfg: HelmConfig) -> tuple[float, float] | None:
    i = active_objective(world)
    if i is None:
        return None
    obj = plan[i]
    if obj.kind == SURVEY_AREA:
        return lawnmower_waypoints(obj, cfg)[world.survey_leg]
    return obj.geometry


# -- arbitration and stepping -------------------------------------------------

def select_behaviour(world: WorldState, plan: MissionPlan, cfg: HelmConfig) -> BehaviourLabel:
    if sensed_obstacle_range(world, cfg) < cfg.obstacle_trigger_range:
        return BehaviourLabel.AVOID_OBSTACLES
    if world.battery < cfg.battery_wait_threshold:
        return BehaviourLabel.WAIT
    if world.gps_fix_age > cfg.gps_fix_interval:
        return BehaviourLabel.GPS
    i = active_objective(world)
    if i is None:
        return BehaviourLabel.WAIT
    return plan[i].behaviour


def _toward(x, y, tx, ty, max_dist):
    dx, dy = tx - x, ty - y
    dist = math.hypot(dx, dy)
    if dist <= max_dist:
        return tx, ty, dist
    return x + dx / dist * max_dist, y + dy / dist * max_dist, max_dist


def _avoid_direction(world: WorldState, target, cfg: HelmConfig) -> tuple[float, float]:
    _, ob = nearest_obstacle(world)
    rx, ry = world.x - ob.x, world.y - ob.y
    norm = math.hypot(rx, ry)
    # dead centre of an obstacle has no outward direction; leave due north
    rx, ry = (rx / norm, ry / norm) if norm > 0 else (0.0, 1.0)
    if target is None:
        return rx, ry
    tx, ty = target[0] - world.x, target[1] - world.y
    tnorm = math.hypot(tx, ty)
    if tnorm > 0 and tx * rx + ty * ry >= 0:
        # past the closest point of approach: the straight line opens range
        return tx / tnorm, ty / tnorm
    cx, cy = -ry, rx
    if cx * tx + cy * ty < 0:
        cx, cy = -cx, -cy
    # pull toward the standoff ring so the vehicle circles rather than spirals
    err = (ob.surface_distance(world.x, world.y) - cfg.standoff_radius) / cfg.standoff_radius
    gain = 0.5 * max(-1.0, min(1.0, err))
    dx, dy = cx - gain * rx, cy - gain * ry
    n = math.hypot(dx, dy)
    return dx / n, dy / n


def _approach_depth(depth: float, target: float, rate: float) -> float:
    if abs(target - depth) <= rate:
        return target
    return depth + math.copysign(rate, target - depth)


def step(world: WorldState, plan: MissionPlan, cfg: HelmConfig, dt: float) -> tuple[WorldState, BehaviourLabel]:
    """Select a behaviour for ``world`` and advance the simulation by ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    label = select_behaviour(world, plan, cfg)
    i = active_objective(world)
    target = objective_target(world, plan, cfg)
    x, y, depth, heading = world.x, world.y, world.depth, world.heading
    reach = cfg.cruise_speed * dt
    moved = 0.0

    if label is BehaviourLabel.GPS:
        depth = _approach_depth(depth, 0.0, cfg.vertical_speed * dt)
    elif label is BehaviourLabel.AVOID_OBSTACLES:
        ux, uy = _avoid_direction(world, target, cfg)
        x, y, moved = x + ux * reach, y + uy * reach, reach
        heading = _compass(ux, uy)
    elif label is not BehaviourLabel.WAIT and target is not None:
        x, y, moved = _toward(x, y, target[0], target[1], reach)
        if moved > 0:
            heading = _compass(x - world.x, y - world.y)
        depth = _approach_depth(depth, plan[i].depth, cfg.vertical_speed * dt)

    drain = cfg.wait_drain if label is BehaviourLabel.WAIT else cfg.cruise_drain
    battery = max(0.0, world.battery - drain * dt)
    gps_fix_age = 0.0 if depth == 0.0 else world.gps_fix_age + dt

    completed = list(world.completed)
    survey_leg = world.survey_leg
    just_completed = False
    if i is not None:
        obj = plan[i]
        if obj.kind == SURVEY_AREA:
            waypoints = lawnmower_waypoints(obj, cfg)
            if math.hypot(x - target[0], y - target[1]) <= obj.tolerance:
                survey_leg += 1
                if survey_leg == len(waypoints):
                    completed[i], just_completed, survey_leg = True, True, 0
        elif math.hypot(x - obj.geometry[0], y - obj.geometry[1]) <= obj.tolerance:
            completed[i], just_completed = True, True

    hold = world.hold_elapsed
    if i is None and label is BehaviourLabel.WAIT:
        hold += dt

    new_world = replace(
        world,
        x=x, y=y, depth=depth, heading=heading, speed=moved / dt,
        battery=battery, clock=world.clock + dt, gps_fix_age=gps_fix_age,
        completed=tuple(completed), survey_leg=survey_leg,
        just_completed=just_completed, hold_elapsed=hold,
    )
    return new_world, label


def observe(world: WorldState, plan: MissionPlan, cfg: HelmConfig) -> VehicleState:
    """The telemetry tick the helm publishes for ``world``."""
    i = active_objective(world)
    return VehicleState(
        t=world.clock,
        wall=world.start_wall + timedelta(seconds=world.clock),
        x=world.x,
        y=world.y,
        depth=world.depth,
        speed=world.speed,
        heading=world.heading,
        battery=world.battery,
        objective_id=None if i is None else plan[i].id,
        objective_complete=world.just_completed,
        obstacle_range=sensed_obstacle_range(world, cfg),
        in_exclusion_zone=any(z.contains(world.x, world.y) for z in world.exclusion_zones),
        gps_fix_age=world.gps_fix_age,
    )


# -- missions -----------------------------------------------------------------

@dataclass(frozen=True)
class StartPose:
    x: float = 0.0
    y: float = 0.0
    depth: float = 0.0
    heading: float = 0.0
    battery: float = 100.0
    gps_fix_age: float = 0.0
    wall: datetime = datetime(2022, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


@dataclass
class MissionRun:
    records: list[TraceRecord]
    timed_out: bool
    seed: int
    final_world: WorldState

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def behaviours(self) -> list[BehaviourLabel]:
        return [r.behaviour for r in self.records]


def initial_world(plan: MissionPlan, start: StartPose, obstacles=(), exclusion_zones=()) -> WorldState:
    return WorldState(
        x=start.x, y=start.y, depth=start.depth, heading=start.heading, speed=0.0,
        battery=start.battery, clock=0.0, gps_fix_age=start.gps_fix_age,
        obstacles=tuple(obstacles), exclusion_zones=tuple(exclusion_zones),
        completed=(False,) * len(plan), start_wall=start.wall,
    )


def run_mission(
    plan: MissionPlan,
    cfg: HelmConfig,
    seed: int,
    max_duration: float,
    dt: float = 1.0,
    *,
    obstacles: Sequence[Obstacle] = (),
    exclusion_zones: Sequence[Rect] = (),
    start: StartPose = StartPose(),
    obstacle_jitter: float = 0.0,
    start_jitter: float = 0.0,
) -> MissionRun:
    """Run a mission to completion (plus ``cfg.post_mission_hold``) or timeout.

    The seed only drives the jitter applied to obstacle centres and the start
    position, so a zero-jitter run is independent of it.
    """
    if not dt > 0:
        raise ScenarioError("dt must be positive")
    if not max_duration > dt:
        raise ScenarioError("max_duration must exceed dt")
    rng = np.random.default_rng(seed)
    jittered = []
    for ob in obstacles:
        dx, dy = rng.uniform(-obstacle_jitter, obstacle_jitter, size=2) if obstacle_jitter else (0.0, 0.0)
        jittered.append(Obstacle(ob.x + float(dx), ob.y + float(dy), ob.radius))
    if start_jitter:
        sx, sy = rng.uniform(-start_jitter, start_jitter, size=2)
        start = replace(start, x=start.x + float(sx), y=start.y + float(sy))

    world = initial_world(plan, start, jittered, exclusion_zones)
    records = []
    n_steps = 0
    finished = False
    while n_steps * dt < max_duration:
        if active_objective(world) is None and world.hold_elapsed >= cfg.post_mission_hold:
            finished = True
            break
        state = observe(world, plan, cfg)
        world, label = step(world, plan, cfg, dt)
        # clock as k*dt keeps timestamps free of accumulated rounding
        n_steps += 1
        world = replace(world, clock=n_steps * dt)
        records.append(TraceRecord(state, label))
    return MissionRun(records, timed_out=not finished, seed=seed, final_world=world)


# -- scenario files -----------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    plan: MissionPlan
    helm: HelmConfig = HelmConfig()
    obstacles: tuple[Obstacle, ...] = ()
    exclusion_zones: tuple[Rect, ...] = ()
    start: StartPose = StartPose()
    seed: int = 0
    dt: float = 1.0
    max_duration: float = 3600.0
    obstacle_jitter: float = 0.0
    start_jitter: float = 0.0
    name: str = "scenario"
    extra: dict = field(default_factory=dict, compare=False)

    def run(self, seed: int | None = None) -> MissionRun:
        return run_mission(
            self.plan, self.helm, self.seed if seed is None else seed,
            self.max_duration, self.dt,
            obstacles=self.obstacles, exclusion_zones=self.exclusion_zones,
            start=self.start, obstacle_jitter=self.obstacle_jitter,
            start_jitter=self.start_jitter,
        )


def _objective_from_json(d: dict) -> Objective:
    kind = d.get("kind")
    if kind == SURVEY_AREA:
        geometry = Rect(*map(float, d["rect"]))
    else:
        x, y = d["point"]
        geometry = (float(x), float(y))
    return Objective(str(d["id"]), kind, geometry, float(d["tolerance"]), float(d.get("depth", 0.0)))


def scenario_from_dict(d: dict, helm_overrides: dict | None = None) -> Scenario:
    try:
        plan = MissionPlan(tuple(_objective_from_json(o) for o in d["plan"]))
        helm_fields = dict(d.get("helm", {}))
        helm_fields.update(helm_overrides or {})
        unknown = set(helm_fields) - set(HelmConfig.__dataclass_fields__)
        if unknown:
            raise ScenarioError(f"unknown helm config keys {sorted(unknown)}")
        helm = HelmConfig(**{k: float(v) for k, v in helm_fields.items()})
        start_d = dict(d.get("start", {}))
        if "wall" in start_d:
            start_d["wall"] = parse_wall(start_d["wall"])
        start = StartPose(**start_d)
        jitter = d.get("jitter", {})
        return Scenario(
            plan=plan,
            helm=helm,
            obstacles=tuple(Obstacle(float(o["x"]), float(o["y"]), float(o["radius"]))
                            for o in d.get("obstacles", [])),
            exclusion_zones=tuple(Rect(*map(float, z)) for z in d.get("exclusion_zones", [])),
            start=start,
            seed=int(d.get("seed", 0)),
            dt=float(d.get("dt", 1.0)),
            max_duration=float(d.get("max_duration", 3600.0)),
            obstacle_jitter=float(jitter.get("obstacle", 0.0)),
            start_jitter=float(jitter.get("start", 0.0)),
            name=str(d.get("name", "scenario")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc!r}") from None


BUNDLED_SCENARIOS = Path(__file__).parent / "data" / "scenarios"


def resolve_scenario_path(path: str | Path) -> Path:
    """Filesystem path, falling back to a bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED_SCENARIOS / p.name
    if bundled.exists():
        return bundled
    if (BUNDLED_SCENARIOS / f"{p.name}.json").exists():
        return BUNDLED_SCENARIOS / f"{p.name}.json"
    raise ScenarioError(f"scenario file not found: {path}")


def load_scenario(path: str | Path, helm_overrides: dict | None = None) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        d = json.loads(p.read_text())
    except ValueError as exc:
        raise ScenarioError(f"{p}: not valid JSON ({exc})") from None
    return scenario_from_dict(d, helm_overrides)
