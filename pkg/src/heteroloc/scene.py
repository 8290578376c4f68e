"""Scene data model, synthetic scenario generator and scene files.

A track stores its states as a ``(T, 6)`` float array with columns
``x, y, heading, vx, vy, valid``. ``valid`` is 0/1; numeric fields of an
invalid state are carried along but never read.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

SCHEMA_VERSION = 1
STATE_FIELDS = ("x", "y", "heading", "vx", "vy", "valid")
X, Y, HEADING, VX, VY, VALID = range(6)


class ValidationError(ValueError):
    pass


class SceneFormatError(ValueError):
    """Malformed scene file; ``line`` is 1-based, ``column`` is 1-based within the line."""

    def __init__(self, message, line: int, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SchemaVersionError(ValueError):
    pass


class AgentType(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"

    @property
    def index(self) -> int:
        return _TYPE_ORDER.index(self)

    @property
    def radius(self) -> float:
        """Default footprint radius in meters."""
        return FOOTPRINT_RADIUS[self]

    @classmethod
    def parse(cls, value: str) -> "AgentType":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown agent type {value!r}") from None


_TYPE_ORDER = (AgentType.VEHICLE, AgentType.PEDESTRIAN, AgentType.CYCLIST)
AGENT_TYPES = _TYPE_ORDER
FOOTPRINT_RADIUS = {AgentType.VEHICLE: 1.5, AgentType.PEDESTRIAN: 0.4, AgentType.CYCLIST: 0.8}


class PolylineKind(enum.Enum):
    LANE_CENTER = "lane_center"
    ROAD_EDGE = "road_edge"
    CROSSWALK = "crosswalk"

    @property
    def index(self) -> int:
        return list(PolylineKind).index(self)


class ScenarioKind(enum.Enum):
    PLATOON = "platoon"
    CROWD_CROSSING = "crowd"
    MIXED_INTERSECTION = "intersection"


class AgentState(NamedTuple):
    x: float
    y: float
    heading: float
    vx: float
    vy: float
    valid: bool


def _states(arr, name) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(STATE_FIELDS):
        raise ValidationError(f"{name} must be a (T, {len(STATE_FIELDS)}) array, got {arr.shape}")
    return arr


@dataclass(eq=False)
class AgentTrack:
    id: str
    type: AgentType
    history: np.ndarray
    future: np.ndarray | None = None
    timestep: float = 0.1

    def __post_init__(self):
        self.history = _states(self.history, "history")
        if self.future is not None:
            self.future = _states(self.future, "future")

    def validate(self) -> None:
        if len(self.history) < 1:
            raise ValidationError(f"agent {self.id}: empty history")
        if not self.history[:, VALID].any():
            raise ValidationError(f"agent {self.id}: no valid history state")
        if not self.timestep > 0:
            raise ValidationError(f"agent {self.id}: timestep must be > 0")

    @property
    def has_valid_history(self) -> bool:
        return bool(len(self.history)) and bool(self.history[:, VALID].any())

    def state(self, t: int) -> AgentState:
        r = self.history[t]
        return AgentState(*r[:5], bool(r[VALID]))

    def last_valid_index(self) -> int:
        idx = np.flatnonzero(self.history[:, VALID] > 0)
        if not len(idx):
            raise ValidationError(f"agent {self.id}: no valid history state")
        return int(idx[-1])

    def reference_pose(self) -> tuple[float, float, float]:
        s = self.history[self.last_valid_index()]
        return float(s[X]), float(s[Y]), float(s[HEADING])

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        same_future = (self.future is None and other.future is None) or (
            self.future is not None and other.future is not None and np.array_equal(self.future, other.future)
        )
        return (self.id == other.id and self.type == other.type and self.timestep == other.timestep
                and np.array_equal(self.history, other.history) and same_future)


@dataclass(eq=False)
class Polyline:
    points: np.ndarray  # (P, 2) or (P, 3) with heading
    kind: PolylineKind

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise ValidationError(f"polyline points must be (P, 2) or (P, 3), got {self.points.shape}")
        if len(self.points) < 2:
            raise ValidationError("polyline needs at least 2 points")
        steps = np.hypot(*np.diff(self.points[:, :2], axis=0).T)
        if np.any(steps <= 1e-6):
            raise ValidationError("polyline has coincident consecutive points")

    @property
    def has_heading(self) -> bool:
        return self.points.shape[1] == 3

    def __eq__(self, other):
        if not isinstance(other, Polyline):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.points, other.points)


@dataclass(eq=False)
class Scene:
    agents: list
    polylines: list = field(default_factory=list)
    target_ids: list = field(default_factory=list)
    seed: int = 0

    def validate(self) -> None:
        if not self.agents:
            raise ValidationError("scene needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValidationError("agent ids must be unique")
        missing = [t for t in self.target_ids if t not in set(ids)]
        if missing:
            raise ValidationError(f"target ids not in scene: {missing}")
        first = self.agents[0]
        shape = (len(first.history), None if first.future is None else len(first.future), first.timestep)
        for a in self.agents:
            if not a.timestep > 0:
                raise ValidationError(f"agent {a.id}: timestep must be > 0")
            if len(a.history) < 1:
                raise ValidationError(f"agent {a.id}: empty history")
            other = (len(a.history), None if a.future is None else len(a.future), a.timestep)
            if other != shape:
                raise ValidationError(f"agent {a.id}: track shape {other} differs from {shape}")
        for p in self.polylines:
            p.validate()

    @property
    def timestep(self) -> float:
        return self.agents[0].timestep

    @property
    def history_len(self) -> int:
        return len(self.agents[0].history)

    @property
    def future_len(self) -> int:
        f = self.agents[0].future
        return 0 if f is None else len(f)

    def agent_index(self, agent_id: str) -> int:
        for i, a in enumerate(self.agents):
            if a.id == agent_id:
                return i
        raise KeyError(agent_id)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.seed == other.seed and self.target_ids == other.target_ids
                and self.agents == other.agents and self.polylines == other.polylines)


# ----------------------------------------------------------------------------
# history / future utilities


def split_history_future(track: AgentTrack, t_now: int) -> tuple[np.ndarray, np.ndarray]:
    """Re-split a track's full state sequence at step ``t_now``."""
    states = track.history if track.future is None else np.concatenate([track.history, track.future])
    if not 1 <= t_now <= len(states):
        raise IndexError(f"t_now={t_now} outside [1, {len(states)}]")
    return states[:t_now].copy(), states[t_now:].copy()


def constant_velocity_baseline(track: AgentTrack, future_len: int) -> np.ndarray:
    """Extrapolate the last valid state for ``future_len`` steps; returns (T_f, 2)."""
    h = track.history
    valid = np.flatnonzero(h[:, VALID] > 0)
    if not len(valid):
        raise ValidationError(f"agent {track.id}: no valid history state")
    last = valid[-1]
    p = h[last, [X, Y]]
    v = h[last, [VX, VY]]
    if not np.all(np.isfinite(v)):
        if len(valid) >= 2:
            prev = valid[-2]
            v = (p - h[prev, [X, Y]]) / ((last - prev) * track.timestep)
        else:
            v = np.zeros(2)
    lag = len(h) - 1 - last
    steps = (np.arange(1, future_len + 1) + lag) * track.timestep
    return p[None, :] + steps[:, None] * v[None, :]


# ----------------------------------------------------------------------------
# synthetic scenarios


@dataclass
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.PLATOON
    n_agents: int = 6
    speed: float = 10.0
    spacing: float = 10.0
    noise_sigma: float = 0.0
    history_len: int = 11
    future_len: int = 80
    timestep: float = 0.1
    invalid_prob: float = 0.0  # chance that a non-final history state is marked invalid

    def validate(self) -> None:
        if not isinstance(self.kind, ScenarioKind):
            raise ValidationError(f"kind: unknown scenario kind {self.kind!r}")
        if self.n_agents < 1:
            raise ValidationError("n_agents: must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma: must be >= 0")
        if self.speed < 0:
            raise ValidationError("speed: must be >= 0")
        if self.spacing <= 0:
            raise ValidationError("spacing: must be > 0")
        if self.history_len < 1:
            raise ValidationError("history_len: must be >= 1")
        if self.future_len < 0:
            raise ValidationError("future_len: must be >= 0")
        if not self.timestep > 0:
            raise ValidationError("timestep: must be > 0")
        if not 0 <= self.invalid_prob < 1:
            raise ValidationError("invalid_prob: must be in [0, 1)")


def quantize(values):
    """Round to the 9 significant digits used in scene files."""
    arr = np.asarray(values, dtype=float)
    flat = [float(f"{v:.9g}") for v in arr.ravel().tolist()]
    return np.array(flat, dtype=float).reshape(arr.shape)


class _Path:
    """Piecewise straight/arc centerline parameterised by arc length."""

    def __init__(self, start, heading):
        self.start = np.asarray(start, dtype=float)
        self.heading0 = float(heading)
        self.segments = []  # (length, curvature)

    def straight(self, length):
        self.segments.append((float(length), 0.0))
        return self

    def arc(self, radius, angle):
        """Turn by ``angle`` radians (positive = left) on a circle of ``radius``."""
        self.segments.append((abs(angle) * radius, math.copysign(1.0 / radius, angle)))
        return self

    def pose(self, s):
        p = self.start.copy()
        h = self.heading0
        remaining = s
        for length, kappa in self.segments:
            step = min(remaining, length)
            if kappa == 0.0:
                p = p + step * np.array([math.cos(h), math.sin(h)])
            else:
                h1 = h + kappa * step
                p = p + np.array([math.sin(h1) - math.sin(h), math.cos(h) - math.cos(h1)]) / kappa
                h = h1
            remaining -= step
            if remaining <= 0:
                return p, h
        # beyond the last segment: continue straight
        return p + remaining * np.array([math.cos(h), math.sin(h)]), h

    @property
    def length(self):
        return sum(seg[0] for seg in self.segments)

    def polyline(self, step, kind, s0=0.0, extra=0.0):
        total = self.length + extra
        n = max(2, int(math.floor((total - s0) / step)) + 1)
        pts = []
        for s in s0 + step * np.arange(n):
            p, h = self.pose(s)
            pts.append((p[0], p[1], _wrap(h)))
        return Polyline(quantize(np.array(pts)), kind)


def _wrap(angle):
    """Map to (-pi, pi]."""
    a = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if a <= -math.pi else a


def _offset_polyline(pl: Polyline, offset: float, kind: PolylineKind) -> Polyline:
    pts = pl.points
    h = pts[:, 2]
    x = pts[:, 0] - offset * np.sin(h)
    y = pts[:, 1] + offset * np.cos(h)
    return Polyline(quantize(np.stack([x, y, h], axis=1)), kind)


def _follow(path: _Path, s0, speeds, dt):
    """Integrate a trajectory along ``path`` with p[t+1] = p[t] + v[t] * dt."""
    n = len(speeds)
    out = np.zeros((n, 6))
    p, h = path.pose(s0)
    s = s0
    for t in range(n):
        _, h = path.pose(s)
        v = speeds[t] * np.array([math.cos(h), math.sin(h)])
        out[t] = (p[0], p[1], _wrap(h), v[0], v[1], 1.0)
        p = p + v * dt
        s += speeds[t] * dt
    return out


def _heading_from_velocity(states):
    moving = np.hypot(states[:, VX], states[:, VY]) > 0
    h = np.arctan2(states[:, VY], states[:, VX])
    h = np.where(h <= -np.pi, np.pi, h)
    states[:, HEADING] = np.where(moving, h, states[:, HEADING])
    return states


def _finish_track(aid, atype, states, spec: ScenarioSpec, rng) -> AgentTrack:
    states = _heading_from_velocity(states)
    if spec.noise_sigma > 0:
        states[:, [X, Y]] += rng.normal(0.0, spec.noise_sigma, size=(len(states), 2))
    th = spec.history_len
    if spec.invalid_prob > 0 and th > 1:
        drop = rng.random(th - 1) < spec.invalid_prob
        states[: th - 1, VALID] = np.where(drop, 0.0, 1.0)
    states = quantize(states)
    return AgentTrack(aid, atype, states[:th], states[th:], quantize(spec.timestep).item())


def _platoon(spec: ScenarioSpec, rng) -> tuple[list, list]:
    n, dt = spec.n_agents, spec.timestep
    total = spec.history_len + spec.future_len
    lead_now = spec.spacing * (n - 1) + spec.speed * (spec.history_len - 1) * dt
    turn_at = lead_now + rng.uniform(5.0, 25.0)
    maneuver = rng.integers(3)  # 0 straight, 1 left, 2 right
    radius = rng.uniform(15.0, 30.0)
    path = _Path((0.0, 0.0), 0.0).straight(turn_at)
    if maneuver:
        path.arc(radius, math.pi / 2 if maneuver == 1 else -math.pi / 2)
    reach = spec.speed * total * dt + spec.spacing * n + 20.0
    path.straight(max(10.0, reach - path.length))
    agents = []
    speeds = np.full(total, spec.speed)
    for i in range(n):
        states = _follow(path, spec.spacing * i, speeds, dt)
        agents.append(_finish_track(f"veh-{i}", AgentType.VEHICLE, states, spec, rng))
    lane = path.polyline(2.0, PolylineKind.LANE_CENTER)
    # lane geometry behind the tail
    tail = Polyline(quantize(np.array([[-20.0, 0.0, 0.0], [-10.0, 0.0, 0.0]])), PolylineKind.LANE_CENTER)
    polylines = [tail, lane, _offset_polyline(lane, 3.5, PolylineKind.ROAD_EDGE),
                 _offset_polyline(lane, -3.5, PolylineKind.ROAD_EDGE)]
    return agents, polylines


def _crowd(spec: ScenarioSpec, rng) -> tuple[list, list]:
    dt = spec.timestep
    total = spec.history_len + spec.future_len
    half = 5.0  # road half width
    polylines = [
        Polyline(quantize(np.array([[0.0, -half - 2.0], [0.0, half + 2.0]])), PolylineKind.CROSSWALK),
        Polyline(quantize(np.array([[3.0, -half - 2.0], [3.0, half + 2.0]])), PolylineKind.CROSSWALK),
        Polyline(quantize(np.array([[x, -half] for x in np.arange(-30.0, 31.0, 5.0)])), PolylineKind.ROAD_EDGE),
        Polyline(quantize(np.array([[x, half] for x in np.arange(-30.0, 31.0, 5.0)])), PolylineKind.ROAD_EDGE),
    ]
    cols = max(1, int(math.ceil(math.sqrt(spec.n_agents))))
    agents = []
    for i in range(spec.n_agents):
        direction = 1.0 if rng.random() < 0.5 else -1.0
        row, col = divmod(i, cols)
        x0 = 1.5 + (col - (cols - 1) / 2) * spec.spacing * 0.5 + rng.uniform(-0.2, 0.2)
        y0 = -direction * (half + 1.0 + row * spec.spacing * 0.5 + rng.uniform(0.0, 1.0))
        heading = math.pi / 2 if direction > 0 else -math.pi / 2
        cross = abs(y0) + half + 1.0
        turn = math.pi / 2 if rng.random() < 0.5 else -math.pi / 2
        path = _Path((x0, y0), heading).straight(cross).arc(1.0, turn).straight(50.0)
        speed = spec.speed * rng.uniform(0.85, 1.15)
        states = _follow(path, 0.0, np.full(total, speed), dt)
        agents.append(_finish_track(f"ped-{i}", AgentType.PEDESTRIAN, states, spec, rng))
    return agents, polylines


def _intersection(spec: ScenarioSpec, rng) -> tuple[list, list]:
    dt = spec.timestep
    total = spec.history_len + spec.future_len
    arm = 60.0
    lane_off = 2.0
    polylines = []
    approaches = []
    for k in range(4):
        h = k * math.pi / 2
        c, s = math.cos(h), math.sin(h)
        # inbound lane: travels along heading h, offset to its right
        start = np.array([-arm * c + lane_off * s, -arm * s - lane_off * c])
        approaches.append((start, h))
        pts = np.array([start + t * np.array([c, s]) for t in np.linspace(0.0, arm - 8.0, 14)])
        polylines.append(Polyline(quantize(np.column_stack([pts, np.full(len(pts), _wrap(h))])),
                                  PolylineKind.LANE_CENTER))
        cw_center = np.array([-10.0 * c, -10.0 * s])
        perp = np.array([-s, c])
        polylines.append(Polyline(quantize(np.array([cw_center - 7.0 * perp, cw_center + 7.0 * perp])),
                                  PolylineKind.CROSSWALK))
    for k in range(4):
        h = k * math.pi / 2
        c, s = math.cos(h), math.sin(h)
        for side in (-8.0, 8.0):
            pts = [(-r * c - side * s, -r * s + side * c) for r in np.arange(arm, 7.0, -10.0)]
            polylines.append(Polyline(quantize(np.array(pts)), PolylineKind.ROAD_EDGE))
    agents = []
    counts = [0, 0, 0]
    for i in range(spec.n_agents):
        u = rng.random()
        atype = AgentType.VEHICLE if u < 0.6 else (AgentType.CYCLIST if u < 0.8 else AgentType.PEDESTRIAN)
        counts[atype.index] += 1
        if atype is AgentType.PEDESTRIAN:
            k = rng.integers(4)
            h = k * math.pi / 2
            c, s = math.cos(h), math.sin(h)
            perp = np.array([-s, c])
            start = np.array([-10.0 * c, -10.0 * s]) - (7.0 + rng.uniform(0, 3)) * perp
            speed = 1.4 * rng.uniform(0.8, 1.2)
            path = _Path(start, math.atan2(perp[1], perp[0])).straight(200.0)
        else:
            k = rng.integers(4)
            start, h = approaches[k]
            lane_pos = arm - 8.0 - rng.uniform(5.0, 30.0) - (i % 3) * spec.spacing
            speed = spec.speed if atype is AgentType.VEHICLE else 0.5 * spec.speed
            move = rng.integers(3)
            path = _Path(start, h).straight(arm - 8.0)
            if move == 1:
                path.arc(10.0, math.pi / 2)
            elif move == 2:
                path.arc(6.0, -math.pi / 2)
            path.straight(200.0)
            start_s = max(0.0, lane_pos)
            states = _follow(path, start_s, np.full(total, speed), dt)
            prefix = "veh" if atype is AgentType.VEHICLE else "cyc"
            agents.append(_finish_track(f"{prefix}-{i}", atype, states, spec, rng))
            continue
        states = _follow(path, 0.0, np.full(total, speed), dt)
        agents.append(_finish_track(f"ped-{i}", atype, states, spec, rng))
    return agents, polylines


_GENERATORS = {
    ScenarioKind.PLATOON: _platoon,
    ScenarioKind.CROWD_CROSSING: _crowd,
    ScenarioKind.MIXED_INTERSECTION: _intersection,
}


def generate_synthetic_scene(spec: ScenarioSpec, seed: int) -> Scene:
    """Deterministic synthetic scene for ``(spec, seed)``; every agent is a target."""
    spec.validate()
    rng = np.random.default_rng(seed)
    agents, polylines = _GENERATORS[spec.kind](spec, rng)
    scene = Scene(agents, polylines, [a.id for a in agents], int(seed))
    scene.validate()
    return scene


def generate_corpus(kinds: Iterable[ScenarioSpec], count: int, seed: int) -> list[Scene]:
    """``count`` scenes cycling through ``kinds``; scene i uses seed ``seed + i``."""
    kinds = list(kinds)
    return [generate_synthetic_scene(kinds[i % len(kinds)], seed + i) for i in range(count)]


def random_scene(n_agents: int, seed: int, density: float = 0.01, history_len: int = 11,
                 future_len: int = 0, n_polylines: int | None = None) -> Scene:
    """Agents scattered uniformly at a fixed density (agents per square meter).

    Used for benchmarks and randomized property tests.
    """
    rng = np.random.default_rng(seed)
    side = math.sqrt(n_agents / density)
    agents = []
    for i in range(n_agents):
        p0 = rng.uniform(0, side, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(0.5, 12.0)
        v = speed * np.array([math.cos(heading), math.sin(heading)])
        total = history_len + future_len
        t = np.arange(total)[:, None] * 0.1
        pos = p0 + v * t + rng.normal(0, 0.05, size=(total, 2))
        states = np.column_stack([pos, np.full(total, heading), np.tile(v, (total, 1)), np.ones(total)])
        atype = _TYPE_ORDER[int(rng.integers(3))]
        agents.append(AgentTrack(f"a{i}", atype, states[:history_len],
                                 states[history_len:] if future_len else None, 0.1))
    n_poly = max(1, n_agents // 4) if n_polylines is None else n_polylines
    polylines = []
    for _ in range(n_poly):
        start = rng.uniform(0, side, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        steps = np.arange(rng.integers(2, 30))[:, None] * 2.0
        pts = start + steps * np.array([math.cos(heading), math.sin(heading)])
        kind = list(PolylineKind)[int(rng.integers(3))]
        polylines.append(Polyline(pts, kind))
    return Scene(agents, polylines, [a.id for a in agents], seed)


# ----------------------------------------------------------------------------
# scene files (JSON lines)


def _rows(arr) -> list:
    out = []
    for row in quantize(arr).tolist():
        out.append([int(v) if i == VALID else v for i, v in enumerate(row)] if len(row) == 6 else row)
    return out


def scene_to_record(scene: Scene) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "seed": int(scene.seed),
        "target_ids": list(scene.target_ids),
        "agents": [
            {
                "id": a.id,
                "type": a.type.value,
                "timestep": float(quantize(a.timestep)),
                "history": _rows(a.history),
                "future": None if a.future is None else _rows(a.future),
            }
            for a in scene.agents
        ],
        "polylines": [{"kind": p.kind.value, "points": quantize(p.points).tolist()} for p in scene.polylines],
    }


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_record(scene), separators=(",", ":"))


def _array(rows, width, what):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or (width is not None and arr.shape[1] != width):
        raise ValidationError(f"{what}: expected rows of width {width}, got shape {arr.shape}")
    return arr


def scene_from_record(rec: dict) -> Scene:
    if not isinstance(rec, dict):
        raise ValidationError("scene record must be a JSON object")
    if rec.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported scene schema {rec.get('schema')!r}, expected {SCHEMA_VERSION}")
    try:
        agents = []
        for a in rec["agents"]:
            fut = a.get("future")
            agents.append(AgentTrack(
                str(a["id"]),
                AgentType.parse(a["type"]),
                _array(a["history"], 6, f"agent {a['id']} history"),
                None if fut is None else _array(fut, 6, f"agent {a['id']} future") if fut else np.zeros((0, 6)),
                float(a["timestep"]),
            ))
        polylines = []
        for p in rec.get("polylines", []):
            try:
                kind = PolylineKind(p["kind"])
            except ValueError:
                raise ValidationError(f"unknown polyline kind {p['kind']!r}") from None
            polylines.append(Polyline(_array(p["points"], None, "polyline points"), kind))
        scene = Scene(agents, polylines, [str(t) for t in rec.get("target_ids", [])], int(rec.get("seed", 0)))
    except KeyError as e:
        raise ValidationError(f"missing field {e.args[0]!r}") from None
    scene.validate()
    return scene


def save_scenes(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in scenes:
            fh.write(scene_to_json(s))
            fh.write("\n")


def save_scene(scene: Scene, path) -> None:
    save_scenes([scene], path)


def load_scenes(path) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SceneFormatError(e.msg, lineno, e.colno) from None
            try:
                scenes.append(scene_from_record(rec))
            except ValidationError as e:
                raise ValidationError(f"line {lineno}: {e}") from None
    return scenes


def load_scene(path) -> Scene:
    scenes = load_scenes(path)
    if not scenes:
        raise SceneFormatError("file contains no scene", 1, 0)
    return scenes[0]
