"""Polyline intersection used to locate conflict points between routes."""
import numpy as np

TOL = 1e-9


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def segment_intersection(p0, p1, q0, q1):
    """First point of segment p0-p1 that also lies on q0-q1.

    Returns (t, u) fractional positions along each segment, or None. Touching
    endpoints count; for collinear overlap the point closest to p0 is returned.
    """
    r = p1 - p0
    s = q1 - q0
    qp = q0 - p0
    denom = _cross(r, s)
    scale = np.hypot(*r) * np.hypot(*s)
    if abs(denom) > TOL * scale:
        t = _cross(qp, s) / denom
        u = _cross(qp, r) / denom
        if -TOL <= t <= 1 + TOL and -TOL <= u <= 1 + TOL:
            return min(max(t, 0.0), 1.0), min(max(u, 0.0), 1.0)
        return None
    if abs(_cross(qp, r)) > TOL * np.hypot(*r) * max(1.0, np.hypot(*qp)):
        return None
    rr = float(r @ r)
    t0 = float(qp @ r) / rr
    t1 = float((q1 - p0) @ r) / rr
    lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
    if lo > hi + TOL:
        return None
    point = p0 + lo * r
    ss = float(s @ s)
    u = float((point - q0) @ s) / ss
    return lo, min(max(u, 0.0), 1.0)


def polyline_intersections(pa, ca, pb, cb):
    """Every (s_a, s_b) where a segment of polyline a meets a segment of b."""
    hits = []
    for i in range(len(pa) - 1):
        a0, a1 = pa[i], pa[i + 1]
        amin, amax = np.minimum(a0, a1) - TOL, np.maximum(a0, a1) + TOL
        for j in range(len(pb) - 1):
            b0, b1 = pb[j], pb[j + 1]
            if np.any(np.maximum(b0, b1) < amin) or np.any(np.minimum(b0, b1) > amax):
                continue
            hit = segment_intersection(a0, a1, b0, b1)
            if hit is not None:
                t, u = hit
                hits.append((ca[i] + t * (ca[i + 1] - ca[i]), cb[j] + u * (cb[j + 1] - cb[j])))
    return hits


def first_intersection(pa, ca, pb, cb):
    """Earliest intersection along polyline a (ties broken by s_b), or None."""
    hits = polyline_intersections(pa, ca, pb, cb)
    if not hits:
        return None
    return min(hits)
