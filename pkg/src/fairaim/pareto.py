"""Front analytics: dominance filtering, 2-D hypervolume, k-means regimes,
travel-time fairness gap and constrained policy selection."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

REGIMES = ("EmissionSaving", "Balanced", "PerformanceBased")


@dataclass
class ParetoPoint:
    omega: float
    obj_speed: float  # m/s, maximise
    obj_emission: float  # g/s per petrol vehicle, minimise
    delta_f: float | None = None  # seconds; None when a fleet completed no trip
    crashes: int = 0
    aux: dict = field(default_factory=dict)

    def objectives(self):
        """Maximisation form: (speed, emission saving)."""
        return (self.obj_speed, -self.obj_emission)


def _oriented(points, directions):
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty((0, len(directions)))
    if pts.ndim != 2:
        pts = pts.reshape(len(pts), -1)
    signs = np.array([1.0 if d in ("max", "maximize", 1) else -1.0 for d in directions])
    if len(signs) != pts.shape[1]:
        raise ValueError("one direction per objective required")
    return pts * signs


def pareto_mask(points, directions=("max", "max")) -> np.ndarray:
    """Boolean mask of the points not dominated by any other point."""
    p = _oriented(points, directions)
    n = len(p)
    if n == 0:
        return np.zeros(0, dtype=bool)
    ge = np.all(p[:, None, :] >= p[None, :, :], axis=2)  # ge[j, i]: j at least as good as i
    gt = np.any(p[:, None, :] > p[None, :, :], axis=2)
    dominated = np.any(ge & gt, axis=0)
    return ~dominated


def pareto_filter(points, directions=("max", "max")):
    """Non-dominated subset, in input order; exact duplicates are all kept."""
    mask = pareto_mask(points, directions)
    if isinstance(points, np.ndarray):
        return points[mask]
    return [p for p, keep in zip(points, mask) if keep]


def hypervolume(front, ref) -> float:
    """Area dominated by a 2-D maximisation front relative to ``ref``.

    Points that do not strictly improve on ``ref`` in both objectives add no
    area and are dropped first.
    """
    pts = np.asarray(front, dtype=np.float64).reshape(-1, 2)
    rx, ry = float(ref[0]), float(ref[1])
    pts = pts[(pts[:, 0] > rx) & (pts[:, 1] > ry)]
    if len(pts) == 0:
        return 0.0
    pts = pts[np.lexsort((-pts[:, 1], -pts[:, 0]))]
    area = 0.0
    best_y = ry
    for x, y in pts:
        if y > best_y:
            area += (x - rx) * (y - best_y)
            best_y = y
    return float(area)


def default_reference(points: list[ParetoPoint]):
    """(0 m/s, -1.1 x worst observed emission) in maximisation form."""
    em = [p.obj_emission for p in points if math.isfinite(p.obj_emission)]
    worst = max(em) if em else 0.0
    return (0.0, -1.1 * worst)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray  # in normalised coordinates
    inertia: float
    restart_inertias: list


def minmax_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(x, centers, max_iter=300):
    k = len(centers)
    labels = None
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new == c):
                # re-seed an empty cluster at the worst-served point
                far = int(np.argmax(d2[np.arange(len(x)), new]))
                new[far] = c
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    inertia = float(np.sum((x - centers[labels]) ** 2))
    return labels, centers, inertia


def kmeans_cluster(points, k=3, rng=None, n_init=10, normalize=True) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < k:
        raise ValueError(f"need at least k={k} points to cluster, got {len(x)}")
    if normalize:
        x = minmax_normalize(x)
    rng = np.random.default_rng(0) if rng is None else rng
    best, inertias = None, []
    for _ in range(n_init):
        labels, centers, inertia = _lloyd(x, _kmeanspp(x, k, rng))
        inertias.append(inertia)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return KMeansResult(best[0], best[1], best[2], inertias)


def name_clusters(labels, omegas) -> list[str]:
    """Map cluster ids to regimes by where the extreme trade-off weights fall."""
    labels = np.asarray(labels)
    omegas = np.asarray(omegas, dtype=np.float64)
    low = labels[int(np.argmin(omegas))]
    high = labels[int(np.argmax(omegas))]
    if high == low:
        # one cluster spans both extremes: promote the other cluster reaching highest omega
        others = [c for c in np.unique(labels) if c != low]
        if others:
            high = max(others, key=lambda c: omegas[labels == c].max())
    names = {c: "Balanced" for c in np.unique(labels)}
    names[high] = "PerformanceBased"
    names[low] = "EmissionSaving"
    return [names[c] for c in labels]


def fairness_delta(trips) -> float | None:
    """Mean petrol minus mean electric travel time; None if either fleet is empty.

    ``trips`` holds (fuel, travel_time) with fuel 0/"petrol" or 1/"electric".
    """
    petrol, electric = [], []
    for fuel, tt in trips:
        is_electric = fuel in (1, "electric", "e") or getattr(fuel, "value", None) == 1
        (electric if is_electric else petrol).append(float(tt))
    if not petrol or not electric:
        return None
    return float(np.mean(petrol) - np.mean(electric))


@dataclass
class FrontReport:
    points: list[ParetoPoint]
    front: list[int]  # indices into points
    hypervolume: float
    ref_point: tuple
    clusters: dict[int, str]  # point index -> regime
    selected: int | None = None

    def front_points(self):
        return [self.points[i] for i in self.front]

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        doc = {
            "points": [{k: clean(v) for k, v in asdict(p).items()} for p in self.points],
            "front": self.front,
            "hypervolume": self.hypervolume,
            "ref_point": list(self.ref_point),
            "clusters": {str(k): v for k, v in self.clusters.items()},
            "selected": self.selected,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> FrontReport:
        doc = json.loads(text)
        pts = [ParetoPoint(**p) for p in doc["points"]]
        return cls(
            points=pts,
            front=list(doc["front"]),
            hypervolume=float(doc["hypervolume"]),
            ref_point=tuple(doc["ref_point"]),
            clusters={int(k): v for k, v in doc["clusters"].items()},
            selected=doc.get("selected"),
        )


def build_report(points: list[ParetoPoint], rng=None, ref=None, k=3) -> FrontReport:
    valid = [i for i, p in enumerate(points) if math.isfinite(p.obj_speed) and math.isfinite(p.obj_emission)]
    objs = np.array([points[i].objectives() for i in valid]).reshape(-1, 2)
    mask = pareto_mask(objs, ("max", "max"))
    front = [valid[j] for j in np.nonzero(mask)[0]]
    ref = default_reference(points) if ref is None else tuple(ref)
    hv = hypervolume(objs[mask], ref)
    clusters = {}
    if len(front) >= k:
        res = kmeans_cluster(np.array([points[i].objectives() for i in front]), k, rng)
        names = name_clusters(res.labels, [points[i].omega for i in front])
        clusters = dict(zip(front, names))
    return FrontReport(points, front, hv, ref, clusters)


def select_policy(report: FrontReport, emission_cap: float, speed_floor: float) -> ParetoPoint | None:
    """Fairest front policy meeting an emission cap and a speed floor.

    Minimises |delta_f|; ties go to the larger omega, then the earlier point.
    """
    best_key, best = None, None
    for i in report.front:
        p = report.points[i]
        if p.delta_f is None or not math.isfinite(p.delta_f):
            continue
        if p.obj_emission > emission_cap or p.obj_speed < speed_floor:
            continue
        key = (abs(p.delta_f), -p.omega, i)
        if best_key is None or key < best_key:
            best_key, best = key, i
    if best is None:
        report.selected = None
        return None
    report.selected = best
    return report.points[best]
