import numpy as np
import pytest
from gradcheck import max_relative_error, small_graph

from fairaim import autodiff as ad
from fairaim.networks import (
    GraphBatch,
    ParamStore,
    actor_forward,
    actor_trace,
    critic_forward,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    soft_update,
)
from fairaim.scene_graph import SceneGraph, build_graph
from fairaim.world import Approach, Fuel, Intent, RouteId, World, WorldConfig


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


# ---------------------------------------------------------------- autodiff ops

OPS = {
    "linear": lambda x, w: ad.linear(x, w, np.arange(3.0)),
    "relu_tanh": lambda x, w: ad.tanh(ad.relu(ad.linear(x, w))),
    "concat_gather": lambda x, w: ad.concat(
        [ad.add(ad.linear(ad.gather(x, [0, 2, 2, 1]), w), ad.linear(ad.gather(x, [1, 1, 0, 3]), w)), ad.gather(x, [3, 0, 0, 2])]
    ),
    "scatter": lambda x, w: ad.linear(ad.scatter_sum(x, [1, 1, 0, 2], 3, [0.5, 2.0, 1.0, -1.0]), w),
    "square_mean_sub": lambda x, w: ad.mean(ad.square(ad.sub(ad.linear(x, w), 0.3))),
    "reshape_mul": lambda x, w: ad.mul(ad.reshape(ad.linear(x, w), (12,)), np.linspace(-1, 1, 12)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    op = OPS[name]
    out = op(x, w)
    up = rng.normal(size=out.shape)
    ad.backward(out, up)

    def f():
        return float(np.sum(op(ad.Tensor(x.value), ad.Tensor(w.value)).value * up))

    np.testing.assert_allclose(x.grad, numeric_grad(f, x.value), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(w.grad, numeric_grad(f, w.value), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("with_bias", [True, False])
def test_relation_linear_gradients(with_bias):
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True) if with_bias else None
    bounds = np.array([0, 2, 2, 5])  # relation 1 is empty
    out = ad.relation_linear(x, w, b, bounds)
    rel = np.array([0, 0, 2, 2, 2])
    expect = np.einsum("ei,eio->eo", x.value, w.value[rel]) + (b.value[rel] if with_bias else 0.0)
    np.testing.assert_allclose(out.value, expect, atol=1e-14)
    up = rng.normal(size=out.shape)
    ad.backward(out, up)

    def f():
        bb = None if b is None else b.value
        return float(np.sum(ad.relation_linear(x.value, w.value, bb, bounds).value * up))

    for leaf in [x, w] + ([b] if with_bias else []):
        np.testing.assert_allclose(leaf.grad, numeric_grad(f, leaf.value), rtol=1e-6, atol=1e-8)
    assert np.all(w.grad[1] == 0.0)


def test_backward_accumulates_shared_leaf():
    x = ad.Tensor(np.array([[2.0]]), requires_grad=True)
    y = ad.add(ad.square(x), ad.linear(x, np.array([[3.0]])))
    ad.backward(y, np.ones((1, 1)))
    assert x.grad[0, 0] == pytest.approx(7.0)


def test_trace_single_use():
    rng = np.random.default_rng(0)
    g = small_graph(rng)
    p = init_params("actor", 8, 4, rng)
    tr = actor_trace(p, g)
    ad.backward(tr, np.ones(g.n_vertices))
    with pytest.raises(RuntimeError):
        ad.backward(tr, np.ones(g.n_vertices))


def test_backward_shape_checks():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(x)
    with pytest.raises(ValueError):
        ad.backward(x, np.ones(2))


# ---------------------------------------------------------------- networks

@pytest.mark.parametrize("kind", ["actor", "critic"])
def test_end_to_end_gradients(kind):
    rng = np.random.default_rng(5)
    for _ in range(3):
        assert max_relative_error(kind, small_graph(rng), rng) < 1e-4


def scene(order):
    w = World(WorldConfig(flow_rate=0.0))
    cases = [
        (RouteId(Approach.SOUTH, Intent.STRAIGHT), 90.0, 5.0, Fuel.PETROL),
        (RouteId(Approach.SOUTH, Intent.LEFT), 70.0, 8.0, Fuel.ELECTRIC),
        (RouteId(Approach.EAST, Intent.STRAIGHT), 95.0, 3.0, Fuel.ELECTRIC),
        (RouteId(Approach.NORTH, Intent.RIGHT), 60.0, 10.0, Fuel.PETROL),
    ]
    for k in order:
        r, s, v, f = cases[k]
        w.add_vehicle(r, s=s, v=v, fuel=f, vid=10 + k)
    return w


def test_permutation_equivariance_and_invariance():
    """Vehicle insertion order must not change per-vehicle actions or Q."""
    rng = np.random.default_rng(2)
    actor = init_params("actor", 16, 8, rng)
    critic = init_params("critic", 16, 8, rng)
    for t in list(actor.tensors.values()) + list(critic.tensors.values()):
        t.value = rng.normal(0, 0.4, t.value.shape)
    ga = build_graph(scene([0, 1, 2, 3]), 0.4)
    gb = build_graph(scene([3, 1, 0, 2]), 0.4)
    np.testing.assert_allclose(actor_forward(actor, ga), actor_forward(actor, gb), atol=1e-13)
    # same vertex ids, so relabel the edges by a permutation and compare
    perm = np.array([2, 0, 3, 1])
    inv = np.argsort(perm)
    gp = SceneGraph(ga.vertex_ids[perm], ga.x[perm], inv[ga.src], inv[ga.dst], ga.rel, ga.fuel_pair, ga.edge_attr, ga.omega)
    acts = rng.uniform(-1, 1, 4)
    np.testing.assert_allclose(actor_forward(actor, gp), actor_forward(actor, ga)[perm], atol=1e-13)
    assert critic_forward(critic, gp, acts[perm]) == pytest.approx(critic_forward(critic, ga, acts), abs=1e-12)


def test_omega_sensitivity():
    rng = np.random.default_rng(3)
    actor = init_params("actor", 16, 8, rng)
    for t in actor.tensors.values():
        t.value = rng.normal(0, 0.5, t.value.shape)
    g = build_graph(scene([0, 1, 2, 3]), 0.0)
    assert not np.allclose(actor_forward(actor, g), actor_forward(actor, g.with_omega(1.0)))


def test_batch_equals_single_graphs():
    rng = np.random.default_rng(4)
    actor = init_params("actor", 16, 8, rng)
    critic = init_params("critic", 16, 8, rng)
    for t in list(actor.tensors.values()) + list(critic.tensors.values()):
        t.value = rng.normal(0, 0.4, t.value.shape)
    graphs = [small_graph(rng) for _ in range(5)] + [build_graph(World(WorldConfig(flow_rate=0.0)), 0.5)]
    acts = [rng.uniform(-1, 1, g.n_vertices) for g in graphs]
    batch = GraphBatch.from_graphs(graphs)
    np.testing.assert_allclose(
        actor_forward(actor, batch), np.concatenate([actor_forward(actor, g) for g in graphs]), atol=1e-13
    )
    q = critic_forward(critic, batch, np.concatenate(acts))
    np.testing.assert_allclose(q, [critic_forward(critic, g, a) for g, a in zip(graphs, acts)], atol=1e-12)
    assert q[-1] == 0.0  # empty scene


def test_actor_output_range_and_initial_scale():
    rng = np.random.default_rng(6)
    actor = init_params("actor", 32, 16, rng)
    g = small_graph(rng)
    a = actor_forward(actor, g)
    assert a.shape == (g.n_vertices,)
    assert np.all(np.abs(a) < 0.1)


def test_critic_rejects_wrong_action_count():
    rng = np.random.default_rng(7)
    critic = init_params("critic", 8, 4, rng)
    g = small_graph(rng)
    with pytest.raises(ValueError):
        critic_forward(critic, g, np.zeros(g.n_vertices + 1))


def test_param_shapes_and_count():
    shapes = param_shapes("actor", 32, 16)
    assert shapes["rgcn1.W_rel"] == (8, 64, 32)
    assert shapes["v_enc.W"] == (4, 32)
    assert param_shapes("critic", 32, 16)["v_enc.W"] == (5, 32)
    with pytest.raises(ValueError):
        ParamStore("value", {}, 1, 1)


def test_soft_update_ema():
    rng = np.random.default_rng(8)
    online = init_params("actor", 8, 4, rng)
    target = online.copy()
    expect = {k: t.value.copy() for k, t in target.items()}
    for _ in range(5):
        for t in online.tensors.values():
            t.value = t.value + rng.normal(size=t.value.shape)
        soft_update(target, online, 0.1)
        for k in expect:
            expect[k] = 0.1 * online[k].value + 0.9 * expect[k]
    for k in expect:
        np.testing.assert_allclose(target[k].value, expect[k], rtol=1e-14)
    soft_update(target, online, 1.0)
    for k in expect:
        np.testing.assert_array_equal(target[k].value, online[k].value)
    with pytest.raises(ValueError):
        soft_update(target, online, 1.5)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    stores = {"actor": init_params("actor", 8, 4, rng), "critic1": init_params("critic", 8, 4, rng)}
    save_checkpoint(tmp_path / "c.npz", stores, {"step": 12})
    loaded, extra = load_checkpoint(tmp_path / "c.npz")
    assert int(extra["step"]) == 12
    for name, store in stores.items():
        assert loaded[name].kind == store.kind
        for k, t in store.items():
            np.testing.assert_array_equal(loaded[name][k].value, t.value)


def test_load_state_shape_mismatch():
    rng = np.random.default_rng(10)
    a = init_params("actor", 8, 4, rng)
    b = init_params("actor", 16, 4, rng)
    with pytest.raises(ValueError):
        a.load_state(b.state())


def test_omega_units_have_kinks_inside_unit_interval():
    p = init_params("actor", 8, 64, np.random.default_rng(3))
    w, b = p["o_enc.W"].value[0], p["o_enc.b"].value
    kinks = -b / w
    assert np.all((kinks >= 0.0) & (kinks <= 1.0))
    # every unit is active somewhere in (0, 1): rising units above the kink, falling below
    assert np.all(np.maximum(w * 0.999 + b, b + w * 0.001) > 0)
