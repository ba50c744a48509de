"""Per-step efficiency, environmental and safety rewards and their scalarization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLLISION_PENALTY = -10.0
STANDSTILL_PENALTY = -1.0


@dataclass
class EmissionModel:
    """Petrol CO2 surrogate: c_idle + c_v*v + c_av*v*max(a, 0), in g/s."""

    c_idle: float = 1.0
    c_v: float = 0.15
    c_av: float = 0.3

    def validate(self):
        for name in ("c_idle", "c_v", "c_av"):
            if getattr(self, name) < 0:
                raise ValueError(f"reward.{name} must be >= 0 (got {getattr(self, name)!r})")
        return self


@dataclass(frozen=True)
class RewardVector:
    r_eff: float
    r_env: float
    r_saf: float
    omega: float
    r_scalar: float


def efficiency_map(x):
    """Piecewise per-vehicle efficiency score of a speed ratio v / v_lim."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.8, 1.25 * x, np.where(x <= 1.0, 1.0, 6.0 - 5.0 * x))


def r_eff(speed_ratios) -> float:
    ratios = np.asarray(speed_ratios, dtype=np.float64)
    if ratios.size == 0:
        return 0.0
    return float(np.mean(efficiency_map(ratios)))


def emission_rate(v, a, model: EmissionModel | None = None):
    """CO2 rate in g/s; braking contributes nothing beyond the speed term."""
    m = model or EmissionModel()
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    out = m.c_idle + m.c_v * v + m.c_av * v * np.maximum(a, 0.0)
    return float(out) if out.ndim == 0 else out


def r_env(snapshot, model: EmissionModel | None = None) -> float:
    """Negative mean CO2 grams emitted this step per petrol vehicle.

    ``snapshot`` needs ``v``, ``a``, ``fuel`` arrays (fuel 0 = petrol) and ``dt``.
    """
    petrol = np.asarray(snapshot.fuel) == 0
    if not np.any(petrol):
        return 0.0
    grams = emission_rate(np.asarray(snapshot.v)[petrol], np.asarray(snapshot.a)[petrol], model) * snapshot.dt
    return -float(np.mean(grams))


def r_saf(outcome) -> float:
    if outcome.collided:
        return COLLISION_PENALTY
    if outcome.all_standstill:
        return STANDSTILL_PENALTY
    return 0.0


def scalarize(eff, env, saf, omega) -> float:
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    return omega * eff + (1.0 - omega) * env + saf


def reward_vector(outcome, omega, v_lim, model: EmissionModel | None = None) -> RewardVector:
    """All reward terms for one world step under trade-off weight ``omega``."""
    snap = outcome.snapshot
    eff = r_eff(snap.v / v_lim)
    env = r_env(snap, model)
    saf = r_saf(outcome)
    return RewardVector(eff, env, saf, omega, scalarize(eff, env, saf, omega))
