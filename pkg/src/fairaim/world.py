"""Discrete-time simulator of a four-way, one-lane, unsignalized intersection.

Vehicles follow fixed polyline routes and are controlled only through their
longitudinal acceleration. Right-hand traffic; the origin is the centre of
the 20 m x 20 m conflict box and +y points north.
"""
from __future__ import annotations

import csv
import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .reward import EmissionModel, emission_rate


class Approach(enum.IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


class Intent(enum.IntEnum):
    LEFT = 0
    STRAIGHT = 1
    RIGHT = 2


class Fuel(enum.IntEnum):
    PETROL = 0
    ELECTRIC = 1


@dataclass(frozen=True, order=True)
class RouteId:
    approach: Approach
    intent: Intent

    @property
    def index(self):
        return int(self.approach) * 3 + int(self.intent)

    @classmethod
    def from_index(cls, i):
        return cls(Approach(i // 3), Intent(i % 3))

    def __str__(self):
        return f"{self.approach.name.title()}-{self.intent.name.title()}"


ALL_ROUTES = [RouteId.from_index(i) for i in range(12)]

# Geometry constants (metres).
APPROACH_LENGTH = 100.0
EXIT_LENGTH = 50.0
BOX_HALF = 10.0
LANE_OFFSET = 1.75
RIGHT_RADIUS = 6.25
LEFT_RADIUS = 13.75
ARC_SAGITTA_TOL = 0.05
# Left turns leave the approach line this far before the box edge.
LANE_SPLIT = LEFT_RADIUS - LANE_OFFSET - BOX_HALF
# Right turns leave the approach line this far inside the box. Lanes are
# treated as shared up to there on approach and from there on exit.
SHARED_MARGIN = BOX_HALF - LANE_OFFSET - RIGHT_RADIUS

# rotation taking the southern approach frame (heading +y) to each approach
_ROTATION = {
    Approach.SOUTH: 0.0,
    Approach.EAST: 0.5 * math.pi,
    Approach.NORTH: math.pi,
    Approach.WEST: -0.5 * math.pi,
}


def exit_side(route: RouteId) -> Approach:
    """Side of the box a route leaves through."""
    offset = {Intent.STRAIGHT: 2, Intent.RIGHT: 3, Intent.LEFT: 1}[route.intent]
    # approaches are numbered clockwise N, E, S, W
    return Approach((int(route.approach) + offset) % 4)


@dataclass(frozen=True)
class RouteGeometry:
    id: RouteId
    polyline: np.ndarray  # (m, 2)
    cum: np.ndarray  # (m,) arc length at each vertex
    approach_end: float  # s where the shared approach lane ends
    exit_start: float  # s where the shared exit lane begins

    @property
    def length(self):
        return float(self.cum[-1])


def _arc(center, radius, a0, a1):
    sweep = abs(a1 - a0)
    step = 2.0 * math.acos(1.0 - ARC_SAGITTA_TOL / radius)
    n = max(2, math.ceil(sweep / step))
    ang = np.linspace(a0, a1, n + 1)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _local_polyline(intent):
    w, b = LANE_OFFSET, BOX_HALF
    split = b + LANE_SPLIT
    far_in = -(b + APPROACH_LENGTH)
    far_out = b + EXIT_LENGTH
    head = [(w, far_in), (w, -split)]
    if intent == Intent.STRAIGHT:
        pts = head + [(w, split), (w, far_out)]
        return np.array(pts, dtype=np.float64)
    if intent == Intent.RIGHT:
        r = RIGHT_RADIUS
        c = (w + r, -(w + r))
        arc = _arc(c, r, math.pi, 0.5 * math.pi)
        arc[0] = (w, c[1])
        arc[-1] = (c[0], -w)
        pts = np.vstack([head, arc, [(split, -w), (far_out, -w)]])
        return pts
    r = LEFT_RADIUS
    c = (w - r, w - r)
    arc = _arc(c, r, 0.0, 0.5 * math.pi)
    arc[0] = (w, -split)
    arc[-1] = (-split, w)
    pts = np.vstack([head[:1], arc, [(-far_out, w)]])
    return pts


def _rotate(pts, theta):
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    # keep lane coordinates exact after the quarter-turn rotations
    return np.round(out, 12)


def _cumulative(pts):
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def build_network(cfg: WorldConfig | None = None) -> list[RouteGeometry]:
    """The 12 routes of the intersection, indexed by ``RouteId.index``."""
    routes = []
    for rid in ALL_ROUTES:
        pts = _rotate(_local_polyline(rid.intent), _ROTATION[rid.approach])
        cum = _cumulative(pts)
        routes.append(
            RouteGeometry(
                id=rid,
                polyline=pts,
                cum=cum,
                approach_end=APPROACH_LENGTH + SHARED_MARGIN,
                exit_start=float(cum[-1]) - (EXIT_LENGTH + SHARED_MARGIN),
            )
        )
    return routes


@functools.lru_cache(maxsize=1)
def default_network() -> list[RouteGeometry]:
    """Shared, never-mutated instance of the standard geometry."""
    return build_network()


def pose_of(route: RouteGeometry, s: float) -> tuple[np.ndarray, float]:
    """Position and heading at arc length ``s`` along ``route``."""
    if not 0.0 <= s <= route.length:
        raise ValueError(f"s={s} outside [0, {route.length}] on route {route.id}")
    out = _accel.route_poses_numpy(
        route.polyline, route.cum, np.array([0, len(route.cum)]), np.zeros(1, np.int64), np.array([float(s)])
    )
    return out[0, :2], float(out[0, 2])


@dataclass
class WorldConfig:
    dt: float = 0.1
    flow_rate: float = 1200.0
    v_lim: float = 13.89
    a_min: float = -4.5
    a_max: float = 3.0
    electric_fraction: float = 0.5
    collision_radius: float = 2.0
    standstill_eps: float = 0.05
    max_vehicles: int = 30
    horizon: int = 600
    seed: int = 0

    def validate(self):
        checks = [
            ("dt", self.dt > 0, "must be > 0"),
            ("flow_rate", self.flow_rate >= 0, "must be >= 0"),
            ("v_lim", self.v_lim > 0, "must be > 0"),
            ("a_min", self.a_min < 0, "must be < 0"),
            ("a_max", self.a_max > 0, "must be > 0"),
            ("electric_fraction", 0 <= self.electric_fraction <= 1, "must lie in [0, 1]"),
            ("collision_radius", self.collision_radius > 0, "must be > 0"),
            ("standstill_eps", self.standstill_eps >= 0, "must be >= 0"),
            ("max_vehicles", self.max_vehicles >= 1, "must be >= 1"),
            ("horizon", self.horizon >= 1, "must be >= 1"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ValueError(f"world.{name} {msg} (got {getattr(self, name)!r})")
        if self.flow_rate * self.dt / 3600.0 > 1.0:
            raise ValueError("world.flow_rate too high: spawn probability per step exceeds 1")
        return self

    @property
    def spawn_probability(self):
        return self.flow_rate * self.dt / 3600.0


@dataclass(frozen=True)
class VehicleState:
    id: int
    route: RouteId
    s: float
    v: float
    a_meas: float
    fuel: Fuel
    spawn_step: int


@dataclass
class Snapshot:
    """Post-integration kinematics of the vehicles controlled in one step."""

    v: np.ndarray
    a: np.ndarray
    fuel: np.ndarray
    dt: float


@dataclass
class StepOutcome:
    collided: bool = False
    collided_pairs: list = field(default_factory=list)
    exited: list = field(default_factory=list)  # (id, travel_time, Fuel)
    all_standstill: bool = False
    emissions_g: float = 0.0
    snapshot: Snapshot | None = None


SPAWN_CLEARANCE = 8.0


class World:
    """Mutable simulator state stored as parallel arrays, ordered by vehicle id."""

    def __init__(self, cfg: WorldConfig, emission: EmissionModel | None = None, routes=None, trace_path=None):
        self.cfg = cfg.validate()
        self.emission = emission or EmissionModel()
        self.routes = routes if routes is not None else default_network()
        self._packed_xy = np.vstack([r.polyline for r in self.routes])
        self._packed_cum = np.concatenate([r.cum for r in self.routes])
        self._offsets = np.cumsum([0] + [len(r.cum) for r in self.routes]).astype(np.int64)
        self.route_length = np.array([r.length for r in self.routes])
        self.rng = np.random.default_rng(cfg.seed)
        self._trace = None
        if trace_path is not None:
            self._trace_file = open(trace_path, "w", newline="")
            self._trace = csv.writer(self._trace_file, lineterminator="\n")
            self._trace.writerow(["step", "vehicle_id", "route", "fuel", "s", "v", "a", "collided"])
        self.ids = np.empty(0, np.int64)
        self.t = 0
        self.next_id = 0
        self.spawned_total = 0
        self.exited_total = 0
        self.collision_removed = 0
        self.reset_removed = 0
        self.reset()

    def reset(self):
        """Drop every vehicle (episode boundary); counters and RNG stream carry on."""
        self.reset_removed += len(self.ids)
        for name in ("ids", "route_idx", "fuel", "spawn_step"):
            setattr(self, name, np.empty(0, np.int64))
        for name in ("s", "v", "a"):
            setattr(self, name, np.empty(0))
        self.episode_t = 0

    def __len__(self):
        return len(self.ids)

    def vehicles(self) -> list[VehicleState]:
        return [
            VehicleState(
                id=int(self.ids[k]),
                route=ALL_ROUTES[self.route_idx[k]],
                s=float(self.s[k]),
                v=float(self.v[k]),
                a_meas=float(self.a[k]),
                fuel=Fuel(int(self.fuel[k])),
                spawn_step=int(self.spawn_step[k]),
            )
            for k in range(len(self.ids))
        ]

    def add_vehicle(self, route: RouteId, s=0.0, v=0.0, a=0.0, fuel=Fuel.PETROL, vid=None):
        """Place a vehicle directly (tests and scenario construction)."""
        if vid is None:
            vid = self.next_id
        if vid in self.ids:
            raise ValueError(f"duplicate vehicle id {vid}")
        if not 0.0 <= s <= self.route_length[route.index]:
            raise ValueError("s outside route")
        self.next_id = max(self.next_id, vid + 1)
        self._append(vid, route.index, s, v, a, int(fuel), self.t)
        self.spawned_total += 1
        return vid

    def _append(self, vid, ridx, s, v, a, fuel, spawn_step):
        pos = int(np.searchsorted(self.ids, vid))
        self.ids = np.insert(self.ids, pos, vid)
        self.route_idx = np.insert(self.route_idx, pos, ridx)
        self.s = np.insert(self.s, pos, s)
        self.v = np.insert(self.v, pos, v)
        self.a = np.insert(self.a, pos, a)
        self.fuel = np.insert(self.fuel, pos, fuel)
        self.spawn_step = np.insert(self.spawn_step, pos, spawn_step)

    def _keep(self, mask):
        for name in ("ids", "route_idx", "s", "v", "a", "fuel", "spawn_step"):
            setattr(self, name, getattr(self, name)[mask])

    def poses(self):
        """(n, 3) array of x, y, heading for every vehicle."""
        if len(self.ids) == 0:
            return np.empty((0, 3))
        return _accel.route_poses(self._packed_xy, self._packed_cum, self._offsets, self.route_idx, self.s)

    def spawn(self, rng=None) -> list[VehicleState]:
        """One Bernoulli arrival trial; returns the vehicles created (0 or 1)."""
        rng = self.rng if rng is None else rng
        cfg = self.cfg
        # three draws every step keep the stream aligned whether or not a vehicle appears
        u, ridx, uf = rng.random(), int(rng.integers(12)), rng.random()
        if u >= cfg.spawn_probability or len(self.ids) >= cfg.max_vehicles:
            return []
        approach = ridx // 3
        same_approach = (self.route_idx // 3) == approach
        if np.any(same_approach & (self.s < SPAWN_CLEARANCE)):
            return []
        fuel = int(uf < cfg.electric_fraction)
        vid = self.next_id
        self.next_id += 1
        self._append(vid, ridx, 0.0, 0.5 * cfg.v_lim, 0.0, fuel, self.t)
        self.spawned_total += 1
        return [VehicleState(vid, ALL_ROUTES[ridx], 0.0, 0.5 * cfg.v_lim, 0.0, Fuel(fuel), self.t)]

    def detect_collisions(self) -> list[tuple[int, int]]:
        if len(self.ids) < 2:
            return []
        pairs = _accel.close_pairs(np.ascontiguousarray(self.poses()[:, :2]), self.cfg.collision_radius)
        # ids are sorted, so index order is id order
        return [(int(self.ids[i]), int(self.ids[j])) for i, j in pairs]

    def _action_array(self, actions):
        n = len(self.ids)
        if isinstance(actions, dict):
            acc = np.zeros(n)
            index = {int(v): k for k, v in enumerate(self.ids)}
            for vid, val in actions.items():
                if vid not in index:
                    raise KeyError(f"action for unknown vehicle id {vid}")
                acc[index[vid]] = val
        else:
            acc = np.asarray(actions, dtype=np.float64).reshape(-1)
            if acc.shape[0] != n:
                raise ValueError(f"got {acc.shape[0]} actions for {n} vehicles")
        return np.clip(acc, self.cfg.a_min, self.cfg.a_max)

    def step(self, actions) -> StepOutcome:
        """Advance one tick. ``actions`` maps id -> m/s^2, or is aligned with ``self.ids``."""
        cfg = self.cfg
        dt = cfg.dt
        a = self._action_array(actions)
        v0 = self.v
        v1 = v0 + a * dt
        stops = v1 < 0.0
        ds = np.where(stops, 0.0, v0 * dt + 0.5 * a * dt * dt)
        if np.any(stops):
            ds[stops] = v0[stops] ** 2 / (2.0 * np.abs(a[stops]))
        v1 = np.maximum(v1, 0.0)
        s1 = self.s + ds
        self.s, self.v, self.a = s1, v1, a
        self.t += 1
        self.episode_t += 1

        petrol = self.fuel == Fuel.PETROL
        grams = emission_rate(v1[petrol], a[petrol], self.emission) * dt
        out = StepOutcome(
            emissions_g=float(np.sum(grams)),
            snapshot=Snapshot(v=v1.copy(), a=a.copy(), fuel=self.fuel.copy(), dt=dt),
        )

        done = s1 >= self.route_length[self.route_idx]
        if np.any(done):
            for k in np.nonzero(done)[0]:
                tt = (self.t - int(self.spawn_step[k])) * dt
                out.exited.append((int(self.ids[k]), tt, Fuel(int(self.fuel[k]))))
            self._keep(~done)
            self.exited_total += int(done.sum())

        out.all_standstill = len(self.ids) > 0 and bool(np.all(self.v < cfg.standstill_eps))
        out.collided_pairs = self.detect_collisions()
        out.collided = bool(out.collided_pairs)
        hit_ids = {i for pair in out.collided_pairs for i in pair}
        if self._trace is not None:
            for k in range(len(self.ids)):
                self._trace.writerow([
                    self.t, int(self.ids[k]), str(ALL_ROUTES[self.route_idx[k]]),
                    Fuel(int(self.fuel[k])).name.lower(), repr(float(self.s[k])), repr(float(self.v[k])),
                    repr(float(self.a[k])), int(int(self.ids[k]) in hit_ids),
                ])
        if hit_ids:
            self._keep(~np.isin(self.ids, list(hit_ids)))
            self.collision_removed += len(hit_ids)

        self.spawn()
        return out

    def conservation_ok(self):
        return self.spawned_total == len(self.ids) + self.exited_total + self.collision_removed + self.reset_removed

    def close(self):
        if self._trace is not None:
            self._trace_file.close()
            self._trace = None
