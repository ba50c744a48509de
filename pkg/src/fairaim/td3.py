"""Trade-off-conditioned TD3 over scene graphs: replay, updates, training
loop and the exploit-only evaluation sweep."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .networks import (
    GraphBatch,
    ParamStore,
    actor_forward,
    actor_trace,
    critic_forward,
    critic_trace,
    init_params,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)
from .pareto import ParetoPoint, default_reference, fairness_delta, hypervolume, pareto_filter
from .reward import EmissionModel, emission_rate, reward_vector
from .scene_graph import SceneGraph, build_graph
from .world import Fuel, World, WorldConfig

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["step", "hypervolume", "crashes", "mean_speed", "mean_emission"]
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
# 0.0, 0.1, ..., 1.0 as the shortest decimals, so config files round-trip it exactly
DEFAULT_OMEGA_GRID = tuple(round(float(w), 10) for w in np.linspace(0.0, 1.0, 11))


@dataclass
class TrainConfig:
    gamma: float = 0.99
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    explore_noise_sigma: float = 0.1
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    total_steps: int = 30_000
    eval_every: int = 2500
    eval_steps: int = 3000  # world steps per omega in each evaluation sweep
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"td3.gamma must lie in [0, 1) (got {self.gamma})")
        if self.policy_delay < 1:
            raise ValueError("td3.policy_delay must be >= 1")
        for name in ("target_noise_sigma", "target_noise_clip", "explore_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"td3.{name} must be >= 0")
        for name in ("actor_lr", "critic_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"td3.{name} must be > 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("td3.tau must lie in [0, 1]")
        for name in ("batch_size", "buffer_capacity", "eval_every", "eval_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"td3.{name} must be >= 1")
        for name in ("warmup_steps", "total_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"td3.{name} must be >= 0")
        return self


@dataclass
class Transition:
    g: SceneGraph
    actions: np.ndarray
    reward: float
    g_next: SceneGraph
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring; uniform sampling with replacement."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.storage: list[Transition] = []
        self.pos = 0

    def __len__(self):
        return len(self.storage)

    def push(self, tr: Transition):
        if tr.g.omega != tr.g_next.omega:
            raise ValueError("transition endpoints carry different omega")
        if not math.isfinite(tr.reward):
            raise ValueError("non-finite reward")
        if len(self.storage) < self.capacity:
            self.storage.append(tr)
        else:
            self.storage[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, n: int) -> list[Transition]:
        if not self.storage:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self.storage), size=n)
        return [self.storage[i] for i in idx]


class Adam:
    def __init__(self, stores: list[ParamStore], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.stores = stores
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [{k: np.zeros_like(t.value) for k, t in s.items()} for s in stores]
        self.v = [{k: np.zeros_like(t.value) for k, t in s.items()} for s in stores]

    def zero_grad(self):
        for s in self.stores:
            s.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for s, m, v in zip(self.stores, self.m, self.v):
            for k, t in s.items():
                g = t.grad
                m[k] = self.b1 * m[k] + (1.0 - self.b1) * g
                v[k] = self.b2 * v[k] + (1.0 - self.b2) * g * g
                t.value = t.value - self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)

    def state(self, prefix):
        out = {f"{prefix}.t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            for k in m:
                out[f"{prefix}.{i}.m.{k}"] = m[k]
                out[f"{prefix}.{i}.v.{k}"] = v[k]
        return out

    def load_state(self, prefix, extra):
        self.t = int(extra[f"{prefix}.t"])
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            for k in m:
                m[k] = np.array(extra[f"{prefix}.{i}.m.{k}"], dtype=np.float64)
                v[k] = np.array(extra[f"{prefix}.{i}.v.{k}"], dtype=np.float64)


def to_physical(a, a_min, a_max):
    """Affine map of normalised actions [-1, 1] onto [a_min, a_max]."""
    return a_min + (np.asarray(a, dtype=np.float64) + 1.0) * 0.5 * (a_max - a_min)


def select_action(params: ParamStore, g: SceneGraph, explore: bool, rng=None, sigma=0.1) -> np.ndarray:
    a = actor_forward(params, g)
    if explore and len(a):
        a = np.clip(a + rng.normal(0.0, sigma, size=a.shape), -1.0, 1.0)
    return a


class TD3Agent:
    STORE_NAMES = ("actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target")

    def __init__(self, cfg: TrainConfig, hidden=32, omega_hidden=16, rng=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.rng = rng
        self.actor = init_params("actor", hidden, omega_hidden, rng)
        self.critic1 = init_params("critic", hidden, omega_hidden, rng)
        self.critic2 = init_params("critic", hidden, omega_hidden, rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam([self.actor], cfg.actor_lr)
        self.critic_opt = Adam([self.critic1, self.critic2], cfg.critic_lr)
        self.critic_updates = 0

    def stores(self):
        return {name: getattr(self, name) for name in self.STORE_NAMES}

    def targets(self, batch: list[Transition], noise_rng=None):
        """Bootstrapped critic targets y (no gradient path)."""
        cfg = self.cfg
        rng = self.rng if noise_rng is None else noise_rng
        gn = GraphBatch.from_graphs([t.g_next for t in batch])
        a_next = actor_forward(self.actor_target, gn)
        noise = np.clip(rng.normal(0.0, cfg.target_noise_sigma, a_next.shape), -cfg.target_noise_clip, cfg.target_noise_clip)
        a_next = np.clip(a_next + noise, -1.0, 1.0)
        q1 = critic_forward(self.critic1_target, gn, a_next)
        q2 = critic_forward(self.critic2_target, gn, a_next)
        r = np.array([t.reward for t in batch])
        not_done = 1.0 - np.array([float(t.done) for t in batch])
        return r + cfg.gamma * not_done * np.minimum(q1, q2)

    def critic_loss(self, batch: list[Transition], y):
        gb = GraphBatch.from_graphs([t.g for t in batch])
        acts = np.concatenate([t.actions for t in batch]) if batch else np.empty(0)
        q1 = critic_trace(self.critic1, gb, acts).output
        q2 = critic_trace(self.critic2, gb, acts).output
        return ad.add(ad.mean(ad.square(ad.sub(q1, y))), ad.mean(ad.square(ad.sub(q2, y))))

    def critic_update(self, batch: list[Transition]) -> float:
        if not batch:
            raise ValueError("empty batch")
        y = self.targets(batch)
        self.critic_opt.zero_grad()
        loss = self.critic_loss(batch, y)
        ad.backward(loss)
        self.critic_opt.step()
        self.critic_updates += 1
        return float(loss.value)

    def actor_loss(self, batch: list[Transition]):
        gb = GraphBatch.from_graphs([t.g for t in batch])
        a = actor_trace(self.actor, gb).output
        q = critic_trace(self.critic1, gb, a).output
        return ad.mul(ad.mean(q), -1.0)

    def actor_update(self, batch: list[Transition]) -> float:
        self.actor_opt.zero_grad()
        self.critic1.zero_grad()
        loss = self.actor_loss(batch)
        ad.backward(loss)
        self.actor_opt.step()
        # critic grads from this pass are discarded
        self.critic1.zero_grad()
        tau = self.cfg.tau
        soft_update(self.actor_target, self.actor, tau)
        soft_update(self.critic1_target, self.critic1, tau)
        soft_update(self.critic2_target, self.critic2, tau)
        return float(loss.value)

    def update(self, batch: list[Transition]):
        """One critic step, plus an actor step every ``policy_delay`` critic steps."""
        closs = self.critic_update(batch)
        aloss = None
        if self.critic_updates % self.cfg.policy_delay == 0:
            aloss = self.actor_update(batch)
        return closs, aloss


# ---------------------------------------------------------------- evaluation

def _quantiles(xs):
    xs = [x for x in xs if math.isfinite(x)]
    if not xs:
        return [float("nan")] * len(QUANTILES)
    return [float(q) for q in np.quantile(xs, QUANTILES)]


def run_policy(policy, world_cfg: WorldConfig, omega: float, steps: int, emission=None, seed=None) -> ParetoPoint:
    """Exploit ``policy`` (graph -> actions in [-1, 1]) for ``steps`` world steps.

    Collisions are counted and followed by a fresh, empty intersection.
    """
    cfg = world_cfg if seed is None else replace(world_cfg, seed=seed)
    emission = emission or EmissionModel()
    world = World(cfg, emission)
    speed_sum = speed_n = 0.0
    em_sum = em_n = 0.0
    step_speed, step_em = [], []
    trips = []
    crashes = 0
    for _ in range(steps):
        g = build_graph(world, omega)
        a = policy(g)
        out = world.step(to_physical(a, cfg.a_min, cfg.a_max))
        snap = out.snapshot
        if len(snap.v):
            speed_sum += float(snap.v.sum())
            speed_n += len(snap.v)
            step_speed.append(float(snap.v.mean()))
        petrol = snap.fuel == Fuel.PETROL
        if np.any(petrol):
            rates = emission_rate(snap.v[petrol], snap.a[petrol], emission)
            em_sum += float(np.sum(rates))
            em_n += int(petrol.sum())
            step_em.append(float(np.mean(rates)))
        trips.extend((int(f), tt) for _, tt, f in out.exited)
        if out.collided:
            crashes += 1
            world.reset()
    mean_speed = speed_sum / speed_n if speed_n else 0.0
    mean_em = em_sum / em_n if em_n else float("nan")
    aux = {
        "speed_q": _quantiles(step_speed),
        "emission_q": _quantiles(step_em),
        "trips_petrol": sum(1 for f, _ in trips if f == 0),
        "trips_electric": sum(1 for f, _ in trips if f == 1),
    }
    return ParetoPoint(omega, mean_speed, mean_em, fairness_delta(trips), crashes, aux)


def actor_policy(params: ParamStore):
    return lambda g: actor_forward(params, g)


def random_policy(rng: np.random.Generator):
    return lambda g: rng.uniform(-1.0, 1.0, size=g.n_vertices)


def evaluate(params, world_cfg: WorldConfig, omega_grid, steps_per_omega, emission=None, seed=0) -> list[ParetoPoint]:
    """One exploit-only ParetoPoint per omega.

    Every omega replays the same seeded traffic stream, so differences
    between points come from the policy rather than from arrivals.

    ``params`` is an actor ParamStore or any callable graph -> actions.
    """
    grid = [float(w) for w in omega_grid]
    if any(not 0.0 <= w <= 1.0 for w in grid):
        raise ValueError("omega grid values must lie in [0, 1]")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("omega grid must be ascending")
    policy = params if callable(params) else actor_policy(params)
    return [run_policy(policy, world_cfg, w, steps_per_omega, emission, seed=seed) for w in grid]


def summarize(points: list[ParetoPoint]) -> dict:
    """Metrics-log row fields for one evaluation sweep."""
    objs = [p.objectives() for p in points if math.isfinite(p.obj_speed) and math.isfinite(p.obj_emission)]
    front = pareto_filter(np.array(objs).reshape(-1, 2))
    speeds = [p.obj_speed for p in points]
    ems = [p.obj_emission for p in points if math.isfinite(p.obj_emission)]
    return {
        "hypervolume": hypervolume(front, default_reference(points)),
        "crashes": sum(p.crashes for p in points),
        "mean_speed": float(np.mean(speeds)) if speeds else float("nan"),
        "mean_emission": float(np.mean(ems)) if ems else float("nan"),
    }


# ---------------------------------------------------------------- training

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("step", "crashes") else float(v)) for k, v in r.items()} for r in rows]


def train(
    world_cfg: WorldConfig,
    train_cfg: TrainConfig,
    out_dir,
    emission=None,
    hidden=32,
    omega_hidden=16,
    omega_grid=None,
    resume=False,
    eval_seed=None,
    on_eval=None,
):
    """Train one agent; writes checkpoint.npz and metrics.csv into ``out_dir``.

    Every environment step draws a fresh omega ~ U[0, 1]; it is part of the
    observed graph and of the reward scalarisation for that transition.
    """
    cfg = train_cfg.validate()
    world_cfg.validate()
    emission = emission or EmissionModel()
    omega_grid = list(DEFAULT_OMEGA_GRID if omega_grid is None else omega_grid)
    eval_seed = cfg.seed * 1000 + 7919 if eval_seed is None else eval_seed
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.npz")
    metrics_path = os.path.join(out_dir, "metrics.csv")

    rng = np.random.default_rng(cfg.seed)
    agent = TD3Agent(cfg, hidden, omega_hidden, rng)
    world = World(replace(world_cfg, seed=cfg.seed), emission)
    buffer = ReplayBuffer(cfg.buffer_capacity, rng)
    rows = []
    start = 0
    warmup_until = cfg.warmup_steps
    if resume:
        if not os.path.exists(ckpt_path):
            raise FileNotFoundError(f"no checkpoint to resume from at {ckpt_path}")
        stores, extra = load_checkpoint(ckpt_path)
        for name in agent.STORE_NAMES:
            getattr(agent, name).load_state(stores[name].state())
        agent.actor_opt.load_state("actor_opt", extra)
        agent.critic_opt.load_state("critic_opt", extra)
        agent.critic_updates = int(extra["critic_updates"])
        start = int(extra["step"])
        rng.bit_generator.state = json.loads(str(extra["rng_state"]))
        world.rng.bit_generator.state = json.loads(str(extra["world_rng_state"]))
        rows = read_metrics(metrics_path) if os.path.exists(metrics_path) else []
        # the replay buffer is not checkpointed: refill it before learning again
        warmup_until = start + min(cfg.warmup_steps, cfg.batch_size)

    def checkpoint(step):
        extra = {
            "step": step,
            "critic_updates": agent.critic_updates,
            "rng_state": json.dumps(rng.bit_generator.state),
            "world_rng_state": json.dumps(world.rng.bit_generator.state),
        }
        extra.update(agent.actor_opt.state("actor_opt"))
        extra.update(agent.critic_opt.state("critic_opt"))
        save_checkpoint(ckpt_path, agent.stores(), extra)

    omega = float(rng.uniform())
    g = build_graph(world, omega)
    for step in range(start, cfg.total_steps):
        if step < cfg.warmup_steps and not resume:
            actions = rng.uniform(-1.0, 1.0, size=g.n_vertices)
        else:
            actions = select_action(agent.actor, g, True, rng, cfg.explore_noise_sigma)
        out = world.step(to_physical(actions, world_cfg.a_min, world_cfg.a_max))
        rv = reward_vector(out, omega, world_cfg.v_lim, emission)
        g_next = build_graph(world, omega)
        buffer.push(Transition(g, actions, rv.r_scalar, g_next, out.collided))
        if out.collided or world.episode_t >= world_cfg.horizon:
            world.reset()
            g_next = build_graph(world, omega)
        omega = float(rng.uniform())
        g = g_next.with_omega(omega)

        if step >= warmup_until and len(buffer) >= 1:
            agent.update(buffer.sample(cfg.batch_size))

        if (step + 1) % cfg.eval_every == 0:
            points = evaluate(agent.actor, world_cfg, omega_grid, cfg.eval_steps, emission, seed=eval_seed)
            row = {"step": step + 1, **summarize(points)}
            rows.append(row)
            log.info("step %d hv %.4f crashes %d", row["step"], row["hypervolume"], row["crashes"])
            write_metrics(metrics_path, rows)
            checkpoint(step + 1)
            if on_eval is not None:
                on_eval(row, points)

    write_metrics(metrics_path, rows)
    checkpoint(cfg.total_steps)
    return agent, rows
