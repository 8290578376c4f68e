import numpy as np
import pytest

from heteroloc import autodiff as ad
from heteroloc.autodiff import ContractError, ShapeError
from heteroloc.graphs import GraphConfig, build_multiscale_from_positions
from heteroloc.message_passing import (
    N_CATEGORIES, MessagePassingDims, aggregate_edge, decompose_messages, init_message_passing_params, propagate,
)

from conftest import store_grad_check

D = 6


def mp_params(seed=0, n_scales=3, d=D):
    return init_message_passing_params(np.random.default_rng(seed), MessagePassingDims(d, 2, n_scales), {})


def random_graph(rng, n, k=3, scales=(3, 4)):
    pos = rng.uniform(0, 40, size=(n, 2))
    g = build_multiscale_from_positions(np.arange(n), [], pos, GraphConfig(k, scales))
    return g.member_arrays(), pos


def closure(member_arrays, a, rounds):
    """Agents whose round-0 features can reach agent a, per scale, union over scales."""
    out = {a}
    for fam in member_arrays:
        reach = {a}
        for _ in range(rounds):
            reach |= {int(m) for row in fam for m in row if reach & {int(x) for x in row}}
        out |= reach
    return out


# --- aggregate / decompose ---------------------------------------------------


def test_aggregate_hand_example():
    agg = aggregate_edge(np.array([[1.0], [3.0]]), np.array([[0.0, 0.0], [3.0, 4.0]])).data
    assert agg[0] == 2.0 and agg[1] == 3.0
    assert agg[2] == pytest.approx(0.5)  # 5 m in network units


def test_aggregate_constant_set(rng):
    f = np.tile(rng.normal(size=4), (4, 1))  # 4 rows keep the mean exact
    agg = aggregate_edge(f, rng.normal(size=(4, 2))).data
    assert np.array_equal(agg[:4], f[0]) and np.array_equal(agg[4:8], f[0])


def test_aggregate_permutation(rng):
    f = rng.normal(size=(5, 4))
    p = rng.normal(size=(5, 2))
    base = aggregate_edge(f, p).data
    for _ in range(10):
        perm = rng.permutation(5)
        assert np.array_equal(aggregate_edge(f[perm], p[perm]).data, base)


def test_aggregate_needs_two_members():
    with pytest.raises(ContractError):
        aggregate_edge(np.ones((1, 3)), np.zeros((1, 2)))


def test_decompose_zero_weights_give_bias():
    params = mp_params(d=4)
    params = dict(params)
    params["mp.pair.decomp.w"] = np.zeros_like(params["mp.pair.decomp.w"])
    bank = decompose_messages(np.ones(9), params).data
    assert np.array_equal(bank.reshape(-1), params["mp.pair.decomp.b"])


def test_decompose_width():
    params = mp_params(d=64, n_scales=1)
    assert params["mp.pair.decomp.w"].shape == (64, 192)
    assert decompose_messages(np.zeros(129), params).shape == (N_CATEGORIES, 64)
    with pytest.raises(ShapeError):
        decompose_messages(np.zeros(10), params)


def test_decompose_identical_aggregates(rng):
    params = mp_params()
    a = rng.normal(size=2 * D + 1)
    bank = decompose_messages(np.stack([a, a]), params).data
    assert np.array_equal(bank[0], bank[1])


# --- propagate ---------------------------------------------------------------


def test_single_agent_identity(rng):
    x = rng.normal(size=(1, D))
    out = propagate([np.zeros((0, 2)), np.zeros((0, 3))], x, [0], mp_params(), positions=np.zeros((1, 2)))
    assert np.array_equal(out.data, x)


def test_isolated_agent_passes_through(rng):
    x = rng.normal(size=(3, D))
    pos = rng.normal(size=(3, 2))
    out = propagate([np.array([[0, 1]])], x, [0, 1, 2], mp_params(n_scales=1), positions=pos).data
    assert np.array_equal(out[2], x[2])
    assert not np.array_equal(out[0], x[0])


def test_receiver_category_routing(rng):
    params = mp_params()
    x = rng.normal(size=(4, D))
    pos = rng.normal(size=(4, 2))
    members = [np.array([[0, 1], [2, 3]]), np.array([[0, 1, 2]]), np.zeros((0, 4), dtype=int)]
    a = propagate(members, x, [0, 0, 2, 1], params, positions=pos).data
    b = propagate(members, x, [1, 0, 2, 1], params, positions=pos).data
    assert not np.array_equal(a[0], b[0])


def test_member_order_invariance(rng):
    params = mp_params()
    members, pos = random_graph(rng, 15)
    x = rng.normal(size=(15, D))
    types = rng.integers(0, 3, size=15)
    base = propagate(members, x, types, params, positions=pos).data
    shuffled = [np.array([rng.permutation(row) for row in fam]).reshape(fam.shape) for fam in members]
    assert np.array_equal(propagate(shuffled, x, types, params, positions=pos).data, base)


def test_locality_bit_identical(rng):
    params = mp_params(n_scales=2)
    checked = 0
    for _ in range(20):
        n = 25
        members, pos = random_graph(np.random.default_rng(rng.integers(1 << 30)), n, k=2, scales=(3,))
        x = rng.normal(size=(n, D))
        types = rng.integers(0, 3, size=n)
        base = propagate(members, x, types, params, positions=pos).data
        for a in range(n):
            outside = sorted(set(range(n)) - closure(members, a, 2))
            if not outside:
                continue
            x2 = x.copy()
            x2[outside] += rng.normal(size=(len(outside), D)) * 10
            out = propagate(members, x2, types, params, positions=pos).data
            assert np.array_equal(out[a], base[a])
            checked += 1
    assert checked > 50


def test_type_count_mismatch(rng):
    with pytest.raises(ShapeError):
        propagate([np.array([[0, 1]])], rng.normal(size=(2, D)), [0], mp_params(n_scales=1),
                  positions=np.zeros((2, 2)))


def test_propagate_gradients(rng):
    params = mp_params(d=4)
    members, pos = random_graph(rng, 7, k=2, scales=(3, 4))
    x = rng.normal(size=(7, 4))
    types = rng.integers(0, 3, size=7)
    w = rng.normal(size=(7, 4))
    store = dict(params, features=x)

    def fn(p):
        return ad.sum(ad.mul(propagate(members, p["features"], types, p, positions=pos), w))

    assert store_grad_check(fn, store, coords=3) < 1e-4
