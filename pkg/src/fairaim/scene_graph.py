"""Typed-graph observation of a world snapshot.

Vertices carry [s/L, v/v_lim, a_norm, k]; edges carry [1/d, chi] and one of
eight relations (same-lane or crossing, times the four fuel pairs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import first_intersection
from .world import RouteGeometry, exit_side

SAME_LANE = 0
CROSSING = 1
FUEL_PAIRS = ("pp", "pe", "ep", "ee")
REL_NAMES = ("SameLane", "Crossing")
N_RELATIONS = 8
MIN_DISTANCE = 0.1


def relation_index(rel, k_src, k_dst):
    return rel * 4 + 2 * k_src + k_dst


@dataclass
class SceneGraph:
    vertex_ids: np.ndarray  # (n,) ascending
    x: np.ndarray  # (n, 4)
    src: np.ndarray  # (E,)
    dst: np.ndarray  # (E,)
    rel: np.ndarray  # (E,) SAME_LANE or CROSSING
    fuel_pair: np.ndarray  # (E,) index into FUEL_PAIRS
    edge_attr: np.ndarray  # (E, 2) inv_d, chi
    omega: float

    def __post_init__(self):
        self.relation = self.rel * 4 + self.fuel_pair

    @property
    def n_vertices(self):
        return len(self.vertex_ids)

    @property
    def n_edges(self):
        return len(self.src)

    def with_omega(self, omega):
        return replace(self, omega=float(omega))

    def edge_set(self):
        """{(src_id, dst_id, rel_name, fuel_pair)} for comparisons."""
        ids = self.vertex_ids
        return {
            (int(ids[a]), int(ids[b]), REL_NAMES[r], FUEL_PAIRS[f])
            for a, b, r, f in zip(self.src, self.dst, self.rel, self.fuel_pair)
        }

    def to_text(self) -> str:
        lines = [f"{self.n_vertices} {self.n_edges} {self.omega!r}"]
        for vid, row in zip(self.vertex_ids, self.x):
            lines.append(" ".join([str(int(vid))] + [repr(float(v)) for v in row]))
        for a, b, r, f, (inv_d, chi) in zip(self.src, self.dst, self.rel, self.fuel_pair, self.edge_attr):
            lines.append(f"{int(a)} {int(b)} {REL_NAMES[r]} {FUEL_PAIRS[f]} {float(inv_d)!r} {float(chi)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SceneGraph:
        rows = text.strip("\n").split("\n")
        n, m, omega = rows[0].split()
        n, m = int(n), int(m)
        vrows = [r.split() for r in rows[1 : 1 + n]]
        erows = [r.split() for r in rows[1 + n : 1 + n + m]]
        return cls(
            vertex_ids=np.array([int(r[0]) for r in vrows], dtype=np.int64),
            x=np.array([[float(v) for v in r[1:]] for r in vrows], dtype=np.float64).reshape(n, 4),
            src=np.array([int(r[0]) for r in erows], dtype=np.int64),
            dst=np.array([int(r[1]) for r in erows], dtype=np.int64),
            rel=np.array([REL_NAMES.index(r[2]) for r in erows], dtype=np.int64),
            fuel_pair=np.array([FUEL_PAIRS.index(r[3]) for r in erows], dtype=np.int64),
            edge_attr=np.array([[float(r[4]), float(r[5])] for r in erows], dtype=np.float64).reshape(m, 2),
            omega=float(omega),
        )


_CONFLICT_CACHE: dict = {}


def conflict_point(route_a: RouteGeometry, route_b: RouteGeometry):
    """Arc lengths (s_a, s_b) of the first place the two routes meet, or None."""
    if route_a.id == route_b.id:
        raise ValueError("conflict_point needs two distinct routes")
    swap = route_b.id.index < route_a.id.index
    first, second = (route_b, route_a) if swap else (route_a, route_b)
    key = (id(first), id(second))
    if key not in _CONFLICT_CACHE:
        _CONFLICT_CACHE[key] = (first, second, first_intersection(first.polyline, first.cum, second.polyline, second.cum))
    hit = _CONFLICT_CACHE[key][2]
    if hit is None:
        return None
    return (hit[1], hit[0]) if swap else (float(hit[0]), float(hit[1]))


_TABLE_CACHE: dict = {}


def conflict_table(routes) -> np.ndarray:
    """(12, 12) array: entry [a, b] is s on route a of its conflict with b (nan if none)."""
    key = id(routes)
    if key not in _TABLE_CACHE:
        table = np.full((len(routes), len(routes)), np.nan)
        for a in range(len(routes)):
            for b in range(len(routes)):
                if a != b:
                    hit = conflict_point(routes[a], routes[b])
                    if hit is not None:
                        table[a, b] = hit[0]
        _TABLE_CACHE[key] = (routes, table)
    return _TABLE_CACHE[key][1]


def lane_of(route: RouteGeometry, s: float) -> tuple[int, float]:
    """Physical lane occupied at arc length ``s`` and the position along it.

    Approach lanes are 0-3, exit lanes 4-7, in-box connectors 8 + route index.
    Exit positions are measured back from the route end so that every route
    feeding the same exit agrees on them.
    """
    if s < route.approach_end:
        return int(route.id.approach), s
    if s >= route.exit_start:
        return 4 + int(exit_side(route.id)), s - route.length
    return 8 + route.id.index, s


def wrap_angle(x):
    """Map angles to (-pi, pi]."""
    return math.pi - np.mod(math.pi - x, 2.0 * math.pi)


def vertex_features(world) -> np.ndarray:
    cfg = world.cfg
    a = world.a
    a_norm = np.where(a >= 0.0, a / cfg.a_max, a / abs(cfg.a_min))
    return np.stack(
        [world.s / world.route_length[world.route_idx], world.v / cfg.v_lim, a_norm, world.fuel.astype(np.float64)],
        axis=1,
    ).reshape(-1, 4)


def _lanes(world):
    n = len(world.ids)
    lane = np.empty(n, np.int64)
    pos = np.empty(n)
    for k in range(n):
        lane[k], pos[k] = lane_of(world.routes[world.route_idx[k]], float(world.s[k]))
    return lane, pos


def build_graph(world, omega: float) -> SceneGraph:
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    n = len(world.ids)
    x = vertex_features(world)
    k = world.fuel.astype(np.int64)
    src, dst, rel, dist = [], [], [], []

    if n > 1:
        lane, pos = _lanes(world)
        # same lane: nearest strictly-ahead vehicle leads each follower
        order = np.lexsort((world.ids, pos, lane))
        for a, j in enumerate(order):
            for i in order[a + 1 :]:
                if lane[i] != lane[j]:
                    break
                if pos[i] > pos[j]:
                    src.append(i)
                    dst.append(j)
                    rel.append(SAME_LANE)
                    dist.append(pos[i] - pos[j])
                    break

        table = conflict_table(world.routes)
        r = world.route_idx
        s = world.s
        conf = table[r[:, None], r[None, :]]  # conf[i, j]: s on i's route of its conflict with j
        with np.errstate(invalid="ignore"):
            ahead = (s[:, None] < conf) & (s[None, :] < conf.T)
        ahead &= r[:, None] != r[None, :]
        ii, jj = np.nonzero(np.triu(ahead, k=1))
        for i, j in zip(ii, jj):
            d = 0.5 * ((conf[i, j] - s[i]) + (conf[j, i] - s[j]))
            for a, b in ((i, j), (j, i)):
                src.append(a)
                dst.append(b)
                rel.append(CROSSING)
                dist.append(d)

    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    rel = np.array(rel, dtype=np.int64)
    dist = np.maximum(np.array(dist, dtype=np.float64), MIN_DISTANCE)
    order = np.lexsort((rel, dst, src))
    src, dst, rel, dist = src[order], dst[order], rel[order], dist[order]

    if len(src):
        pose = world.poses()
        dx = pose[src, 0] - pose[dst, 0]
        dy = pose[src, 1] - pose[dst, 1]
        chi = wrap_angle(np.arctan2(dy, dx) - pose[dst, 2])
    else:
        chi = np.empty(0)
    return SceneGraph(
        vertex_ids=world.ids.copy(),
        x=x,
        src=src,
        dst=dst,
        rel=rel,
        fuel_pair=2 * k[src] + k[dst],
        edge_attr=np.stack([1.0 / dist, chi], axis=1).reshape(-1, 2),
        omega=float(omega),
    )


def edge_distance(world, i: int, j: int) -> float:
    """Distance measure between vehicle ids i and j, as used for their edge."""
    a, b = _index(world, i), _index(world, j)
    ra, rb = world.routes[world.route_idx[a]], world.routes[world.route_idx[b]]
    la, pa = lane_of(ra, float(world.s[a]))
    lb, pb = lane_of(rb, float(world.s[b]))
    if la == lb:
        return max(MIN_DISTANCE, abs(pa - pb))
    hit = conflict_point(ra, rb)
    if hit is None:
        raise ValueError(f"vehicles {i} and {j} share neither lane nor conflict point")
    return max(MIN_DISTANCE, 0.5 * ((hit[0] - world.s[a]) + (hit[1] - world.s[b])))


def bearing_angle(world, i: int, j: int) -> float:
    """Direction of vehicle i as seen in vehicle j's heading frame."""
    pose = world.poses()
    a, b = _index(world, i), _index(world, j)
    ang = math.atan2(pose[a, 1] - pose[b, 1], pose[a, 0] - pose[b, 0]) - pose[b, 2]
    return float(wrap_angle(ang))


def _index(world, vid):
    hit = np.nonzero(world.ids == vid)[0]
    if len(hit) == 0:
        raise KeyError(f"no vehicle with id {vid}")
    return int(hit[0])

