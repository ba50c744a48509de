"""Relational graph actor and critic networks.

Both networks share one trunk: vertex, edge and trade-off encoders, an
edge-conditioned relational layer, a plain relational layer, concatenation of
the encoded trade-off weight, and a feed-forward layer. The actor decodes one
action per vertex; the critic mean-pools vertices and decodes a single value.
Graphs are processed as a disjoint union so a batch is one forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .scene_graph import N_RELATIONS, SceneGraph

VERTEX_DIM = 4
EDGE_DIM = 3  # inv_d, sin chi, cos chi


class ParamStore:
    """Named float64 parameters of one network (actor or critic)."""

    def __init__(self, kind: str, tensors: dict[str, ad.Tensor], hidden: int, omega_hidden: int):
        if kind not in ("actor", "critic"):
            raise ValueError(f"unknown network kind {kind!r}")
        self.kind = kind
        self.tensors = tensors
        self.hidden = hidden
        self.omega_hidden = omega_hidden

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def n_params(self):
        return sum(t.value.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.value)

    def grads(self):
        return {k: t.grad.copy() for k, t in self.tensors.items()}

    def copy(self) -> ParamStore:
        return ParamStore(
            self.kind,
            {k: ad.Tensor(t.value.copy(), requires_grad=True) for k, t in self.tensors.items()},
            self.hidden,
            self.omega_hidden,
        )

    def state(self):
        return {k: t.value for k, t in self.tensors.items()}

    def load_state(self, state):
        for k, t in self.tensors.items():
            if state[k].shape != t.value.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {t.value.shape}")
            t.value = np.array(state[k], dtype=np.float64)

    def all_finite(self):
        return all(np.all(np.isfinite(t.value)) for t in self.tensors.values())


def param_shapes(kind, hidden=32, omega_hidden=16):
    h, hw = hidden, omega_hidden
    vin = VERTEX_DIM + (1 if kind == "critic" else 0)
    dec = "dec_actor" if kind == "actor" else "dec_critic"
    return {
        "v_enc.W": (vin, h),
        "v_enc.b": (h,),
        "e_enc.W": (EDGE_DIM, h),
        "e_enc.b": (h,),
        "o_enc.W": (1, hw),
        "o_enc.b": (hw,),
        "rgcn1.W_rel": (N_RELATIONS, 2 * h, h),
        "rgcn1.b_rel": (N_RELATIONS, h),
        "rgcn1.W_self": (h, h),
        "rgcn1.b_self": (h,),
        "rgcn2.W_rel": (N_RELATIONS, h, h),
        "rgcn2.W_self": (h, h),
        "rgcn2.b_self": (h,),
        "ff.W": (h + hw, h),
        "ff.b": (h,),
        f"{dec}.W": (h, 1),
        f"{dec}.b": (1,),
    }


def init_params(kind, hidden=32, omega_hidden=16, rng=None, zero=False) -> ParamStore:
    """Uniform fan-in initialisation; the decoder starts near zero output."""
    rng = np.random.default_rng(0) if rng is None else rng
    tensors = {}
    for name, shape in param_shapes(kind, hidden, omega_hidden).items():
        if zero or name.endswith(".b") or ".b_" in name:
            value = np.zeros(shape)
        else:
            fan_in = shape[-2]
            bound = 3e-3 if name.startswith("dec") else 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = ad.Tensor(value, requires_grad=True)
    if not zero:
        # put each omega unit's relu kink inside [0, 1]; a zero bias leaves every
        # unit with a negative weight dead for all valid omega
        w = tensors["o_enc.W"].value
        tensors["o_enc.b"].value[:] = -w[0] * rng.uniform(0.0, 1.0, size=w.shape[1])
    return ParamStore(kind, tensors, hidden, omega_hidden)


@dataclass
class GraphBatch:
    """Disjoint union of scene graphs with global vertex indexing."""

    x: np.ndarray  # (N, 4)
    edge_feat: np.ndarray  # (E, 3)
    src: np.ndarray
    dst: np.ndarray
    bounds: np.ndarray  # (R + 1,) edges are sorted by relation; r owns bounds[r]:bounds[r+1]
    edge_norm: np.ndarray  # (E,) 1 / |incoming edges of that relation at dst|
    graph_of: np.ndarray  # (N,) graph index of each vertex
    omega: np.ndarray  # (B, 1)
    sizes: np.ndarray  # (B,) vertex count per graph

    @property
    def n_vertices(self):
        return len(self.x)

    @property
    def n_graphs(self):
        return len(self.sizes)

    @classmethod
    def from_graphs(cls, graphs: list[SceneGraph]) -> GraphBatch:
        sizes = np.array([g.n_vertices for g in graphs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        n_total = int(sizes.sum())
        if graphs:
            x = np.concatenate([g.x for g in graphs]).reshape(-1, VERTEX_DIM)
            src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)]).astype(np.int64)
            dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]).astype(np.int64)
            rel = np.concatenate([g.relation for g in graphs]).astype(np.int64)
            attr = np.concatenate([g.edge_attr for g in graphs]).reshape(-1, 2)
        else:
            x = np.empty((0, VERTEX_DIM))
            src = dst = rel = np.empty(0, np.int64)
            attr = np.empty((0, 2))
        order = np.argsort(rel, kind="stable")
        src, dst, rel, attr = src[order], dst[order], rel[order], attr[order]
        bounds = np.searchsorted(rel, np.arange(N_RELATIONS + 1))
        edge_feat = np.stack([attr[:, 0], np.sin(attr[:, 1]), np.cos(attr[:, 1])], axis=1).reshape(-1, EDGE_DIM)
        key = dst * N_RELATIONS + rel
        counts = np.bincount(key, minlength=max(n_total * N_RELATIONS, 1))
        edge_norm = 1.0 / counts[key] if len(key) else np.empty(0)
        return cls(
            x=x,
            edge_feat=edge_feat,
            src=src,
            dst=dst,
            bounds=bounds,
            edge_norm=edge_norm,
            graph_of=np.repeat(np.arange(len(graphs)), sizes),
            omega=np.array([[g.omega] for g in graphs], dtype=np.float64).reshape(-1, 1),
            sizes=sizes,
        )


def _as_batch(g):
    if isinstance(g, GraphBatch):
        return g
    if isinstance(g, SceneGraph):
        return GraphBatch.from_graphs([g])
    return GraphBatch.from_graphs(list(g))


def trunk(params: ParamStore, batch: GraphBatch, vertex_in, cache=None):
    """Shared encoder + two relational layers + trade-off fusion; returns h3."""
    p = params
    n = batch.n_vertices
    x = ad.relu(ad.linear(vertex_in, p["v_enc.W"], p["v_enc.b"]))
    e = ad.relu(ad.linear(batch.edge_feat, p["e_enc.W"], p["e_enc.b"]))
    msg = ad.relu(
        ad.relation_linear(ad.concat([ad.gather(x, batch.src), e]), p["rgcn1.W_rel"], p["rgcn1.b_rel"], batch.bounds)
    )
    agg1 = ad.scatter_sum(msg, batch.dst, n, batch.edge_norm)
    h1 = ad.relu(ad.add(ad.linear(x, p["rgcn1.W_self"], p["rgcn1.b_self"]), agg1))
    msg2 = ad.relation_linear(ad.gather(h1, batch.src), p["rgcn2.W_rel"], None, batch.bounds)
    agg2 = ad.scatter_sum(msg2, batch.dst, n, batch.edge_norm)
    h2 = ad.relu(ad.add(ad.linear(h1, p["rgcn2.W_self"], p["rgcn2.b_self"]), agg2))
    z = ad.relu(ad.linear(batch.omega, p["o_enc.W"], p["o_enc.b"]))
    h3 = ad.relu(ad.linear(ad.concat([h2, ad.gather(z, batch.graph_of)]), p["ff.W"], p["ff.b"]))
    if cache is not None:
        cache.update(h1=h1.value, h2=h2.value, h3=h3.value)
    return h3


def actor_trace(params: ParamStore, g) -> ad.ForwardTrace:
    batch = _as_batch(g)
    cache = {}
    h3 = trunk(params, batch, batch.x, cache)
    a = ad.tanh(ad.linear(h3, params["dec_actor.W"], params["dec_actor.b"]))
    return ad.ForwardTrace(ad.reshape(a, (batch.n_vertices,)), cache)


def actor_forward(params: ParamStore, g) -> np.ndarray:
    """Per-vertex actions in [-1, 1], in vertex order."""
    return actor_trace(params, g).output.value


def critic_trace(params: ParamStore, g, actions) -> ad.ForwardTrace:
    batch = _as_batch(g)
    actions = ad.as_tensor(actions)
    if actions.value.reshape(-1).shape[0] != batch.n_vertices:
        raise ValueError(f"{actions.value.size} actions for {batch.n_vertices} vertices")
    vin = ad.concat([batch.x, ad.reshape(actions, (batch.n_vertices, 1))])
    cache = {}
    h3 = trunk(params, batch, vin, cache)
    sizes = batch.sizes
    weight = 1.0 / np.maximum(sizes, 1)[batch.graph_of]
    pooled = ad.scatter_sum(h3, batch.graph_of, batch.n_graphs, weight)
    q = ad.linear(pooled, params["dec_critic.W"], params["dec_critic.b"])
    # empty scenes have no value to estimate
    q = ad.mul(ad.reshape(q, (batch.n_graphs,)), (sizes > 0).astype(np.float64))
    return ad.ForwardTrace(q, cache)


def critic_forward(params: ParamStore, g, actions):
    """Q value; a float for one SceneGraph, an array for a batch."""
    out = critic_trace(params, g, actions).output.value
    return float(out[0]) if isinstance(g, SceneGraph) else out


def soft_update(target: ParamStore, online: ParamStore, tau: float):
    """Polyak averaging: target <- tau * online + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if set(target.tensors) != set(online.tensors):
        raise ValueError("parameter names differ")
    for k, t in target.tensors.items():
        o = online.tensors[k].value
        if o.shape != t.value.shape:
            raise ValueError(f"shape mismatch for {k}")
        if tau == 1.0:
            t.value = o.copy()
        elif tau > 0.0:
            t.value = tau * o + (1.0 - tau) * t.value
    return target


def save_checkpoint(path, stores: dict[str, ParamStore], extra: dict | None = None):
    """One .npz holding every store as '<store>/<param>' arrays plus metadata."""
    arrays = {}
    for sname, store in stores.items():
        arrays[f"{sname}/__kind__"] = np.array(store.kind)
        arrays[f"{sname}/__widths__"] = np.array([store.hidden, store.omega_hidden])
        for k, t in store.items():
            arrays[f"{sname}/{k}"] = t.value
    for k, v in (extra or {}).items():
        arrays[f"__extra__/{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``: (stores, extra)."""
    stores, extra = {}, {}
    with np.load(path, allow_pickle=False) as z:
        names = sorted({k.split("/", 1)[0] for k in z.files} - {"__extra__"})
        for sname in names:
            kind = str(z[f"{sname}/__kind__"])
            h, hw = (int(v) for v in z[f"{sname}/__widths__"])
            tensors = {
                k: ad.Tensor(z[f"{sname}/{k}"].copy(), requires_grad=True) for k in param_shapes(kind, h, hw)
            }
            stores[sname] = ParamStore(kind, tensors, h, hw)
        for k in z.files:
            if k.startswith("__extra__/"):
                extra[k.split("/", 1)[1]] = z[k]
    return stores, extra
