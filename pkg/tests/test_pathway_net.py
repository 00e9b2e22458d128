import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathway_cl.energy import EnergyLedger
from pathway_cl.errors import ConfigError, ContractError, ShapeError
from pathway_cl.nn_core import LrSchedule, NetArch, backward, forward, loss, sgd_step
from pathway_cl.pathway_net import (ParamStore, PathwayLayout, active_params, build, encode,
                                    pathway_backward, pathway_forward)

from helpers import central_difference, max_relative_error


def layout(enc=(6, 5), head=(5, 4, 3), act="tanh"):
    encoder = NetArch(enc, act) if enc else None
    return PathwayLayout(encoder, (NetArch(head, act, "softmax_xent"),))


def subnet_params(store, k):
    """Active sub-network parameters in encoder-then-head order, taken by index."""
    return store.theta[active_params(store, k)]


def test_k1_active_set_is_everything():
    store = build(layout(), 1, 0)
    assert np.array_equal(np.sort(active_params(store, 0)), np.arange(store.n_params))


def test_disjoint_equal_heads_active_fraction_is_one_over_k():
    store = build(layout(enc=None, head=(6, 5, 2)), 4, 0)
    assert store.shared_idx.size == 0
    assert 4 * active_params(store, 2).size == store.n_params


def test_active_count_arithmetic():
    # 24*4+4 = 100 shared; 4*5+5 = 25 per head
    lay = PathwayLayout(NetArch((24, 4), "relu"), (NetArch((4, 5), "relu"),))
    store = build(lay, 4, 0)
    assert store.shared_idx.size == 100
    assert all(idx.size == 25 for idx in store.ps_idx)
    assert active_params(store, 3).size == 125


def test_build_rejects_k_zero_and_index_out_of_range():
    with pytest.raises(ConfigError):
        build(layout(), 0, 0)
    store = build(layout(), 2, 0)
    with pytest.raises(ConfigError):
        active_params(store, 2)
    with pytest.raises(ConfigError):
        active_params(store, -1)


def test_layout_width_mismatch_rejected():
    with pytest.raises(ConfigError):
        PathwayLayout(NetArch((6, 5), "tanh"), (NetArch((4, 2), "tanh", "softmax_xent"),))


@settings(max_examples=40, deadline=None)
@given(enc=st.one_of(st.none(), st.lists(st.integers(1, 6), min_size=2, max_size=3)),
       head_tail=st.lists(st.integers(1, 6), min_size=1, max_size=3),
       K=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_partition_is_disjoint_and_exhaustive(enc, head_tail, K, seed):
    d_h = enc[-1] if enc else 3
    lay = PathwayLayout(NetArch(enc, "relu") if enc else None, (NetArch([d_h] + head_tail, "relu"),))
    store = build(lay, K, seed)
    parts = [store.shared_idx] + list(store.ps_idx)
    allidx = np.concatenate(parts)
    assert allidx.size == store.n_params == np.unique(allidx).size
    assert store.n_params == store.shared_idx.size + sum(p.size for p in store.ps_idx)
    assert len({p.size for p in store.ps_idx}) == 1


def test_identical_heads_give_identical_outputs():
    store = build(layout(), 2, 3)
    store.theta[store.ps_idx[1]] = store.theta[store.ps_idx[0]]
    x = np.random.default_rng(0).normal(size=(7, 6))
    a, _ = pathway_forward(store, 0, x)
    b, _ = pathway_forward(store, 1, x)
    assert np.array_equal(a, b)


def test_forward_flop_and_access_booking():
    store = build(layout(), 3, 0)
    led = EnergyLedger()
    x = np.ones((10, 6))
    pathway_forward(store, 1, x, led, "inference")
    per_sample = (2 * 6 * 5 + 5) + (2 * 5 * 4 + 4) + (2 * 4 * 3 + 3)
    assert led.get("inference", "flops") == 10 * per_sample
    assert led.get("inference", "param_accesses") == active_params(store, 1).size
    assert led.get("inference", "samples") == 10


def test_forward_matches_extracted_subnetwork():
    store = build(layout(), 3, 5)
    x = np.random.default_rng(1).normal(size=(4, 6))
    for k in range(3):
        out, _ = pathway_forward(store, k, x)
        ref, _ = forward(store.layout.pathway_arch(k), subnet_params(store, k), x)
        assert np.allclose(out, ref, rtol=0, atol=1e-14)


def test_backward_zero_outside_pathway_and_matches_subnetwork():
    store = build(layout(), 3, 5)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 6))
    y = rng.integers(0, 3, size=5)
    _, cache = pathway_forward(store, 1, x)
    g = pathway_backward(store, cache, y)
    outside = np.setdiff1d(np.arange(store.n_params), active_params(store, 1))
    assert np.all(g[outside] == 0.0)
    arch = store.layout.pathway_arch(1)
    p = subnet_params(store, 1)
    _, c2 = forward(arch, p, x)
    assert np.allclose(g[active_params(store, 1)], backward(arch, p, c2, y), atol=1e-13)


def test_backward_matches_central_difference_through_encoder():
    store = build(layout(), 2, 9)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 6))
    y = rng.integers(0, 3, size=3)
    head = store.layout.heads[0]

    def f(theta):
        s = store.copy()
        s.theta = theta
        return loss(head, pathway_forward(s, 0, x)[0], y)

    _, cache = pathway_forward(store, 0, x)
    g = pathway_backward(store, cache, y)
    assert max_relative_error(g, central_difference(f, store.theta)) < 1e-6


def test_zero_loss_gives_zero_gradient():
    lay = PathwayLayout(None, (NetArch((3, 4, 2), "tanh", "mse"),))
    store = build(lay, 2, 0)
    x = np.ones((2, 3))
    out, cache = pathway_forward(store, 0, x)
    assert np.all(pathway_backward(store, cache, out) == 0.0)


def test_backward_books_twice_forward_cost():
    store = build(layout(), 2, 0)
    led = EnergyLedger()
    _, cache = pathway_forward(store, 0, np.ones((4, 6)), led, "train")
    f = led.get("train", "flops")
    pathway_backward(store, cache, np.zeros(4, dtype=int), ledger=led)
    assert led.get("train", "flops") == 3 * f


def test_stale_cache_rejected():
    store = build(layout(), 2, 0)
    _, cache = pathway_forward(store, 0, np.ones((2, 6)))
    store.theta = store.theta + 1e-3
    with pytest.raises(ContractError):
        pathway_backward(store, cache, np.zeros(2, dtype=int))


def test_training_one_pathway_never_touches_other_blocks():
    store = build(layout(enc=None, head=(6, 5, 3)), 3, 4)
    frozen = [store.theta[idx].copy() for idx in store.ps_idx]
    rng = np.random.default_rng(5)
    sched = LrSchedule(0.5)
    for t in range(1, 60):
        x = rng.normal(size=(8, 6))
        y = rng.integers(0, 3, size=8)
        _, cache = pathway_forward(store, 1, x)
        store.theta = sgd_step(store.theta, pathway_backward(store, cache, y), sched, t)
    assert np.array_equal(store.theta[store.ps_idx[0]], frozen[0])
    assert np.array_equal(store.theta[store.ps_idx[2]], frozen[2])
    assert not np.array_equal(store.theta[store.ps_idx[1]], frozen[1])


def test_encode_shape_check_and_identity_without_encoder():
    store = build(layout(enc=None, head=(6, 2)), 2, 0)
    x = np.arange(12.0).reshape(2, 6)
    assert np.array_equal(encode(store, x), x)
    with pytest.raises(ShapeError):
        encode(store, np.ones((2, 5)))


def test_snapshot_bytes_round_trip_and_determinism():
    store = build(layout(), 3, 11)
    blob = store.to_bytes()
    back = ParamStore.from_bytes(blob)
    assert back.to_bytes() == blob
    assert np.array_equal(back.theta, store.theta)
    assert back.layout == store.layout
    assert all(np.array_equal(a, b) for a, b in zip(back.ps_idx, store.ps_idx))


def test_build_is_deterministic_per_seed():
    assert np.array_equal(build(layout(), 3, 7).theta, build(layout(), 3, 7).theta)
    assert not np.array_equal(build(layout(), 3, 7).theta, build(layout(), 3, 8).theta)
