import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import array_shapes, arrays

from pathway_cl import snapshot
from pathway_cl.errors import ContractError


@settings(max_examples=50, deadline=None)
@given(f=arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=5)),
       i=arrays(np.int64, array_shapes(max_dims=2, max_side=5)))
def test_round_trip_is_exact(f, i):
    blob = snapshot.dumps("thing", {"a": 1, "b": [1, 2]}, {"f": f, "i": i})
    kind, meta, out = snapshot.loads(blob, "thing")
    assert kind == "thing" and meta == {"a": 1, "b": [1, 2]}
    assert out["f"].shape == f.shape and out["f"].tobytes() == f.astype("<f8").tobytes()
    assert np.array_equal(out["i"], i)
    assert snapshot.dumps(kind, meta, out) == blob


def test_key_order_does_not_change_bytes():
    a = snapshot.dumps("k", {"x": 1, "y": 2}, {"p": np.ones(2), "q": np.zeros(1)})
    b = snapshot.dumps("k", {"y": 2, "x": 1}, {"q": np.zeros(1), "p": np.ones(2)})
    assert a == b


def test_corrupt_or_mismatched_blobs_rejected():
    blob = snapshot.dumps("router", {}, {"psi": np.ones(3)})
    with pytest.raises(ContractError):
        snapshot.loads(b"garbage" + blob)
    with pytest.raises(ContractError):
        snapshot.loads(blob, "store")
    with pytest.raises(ContractError):
        snapshot.loads(blob + b"\0")
    with pytest.raises(ContractError):
        snapshot.dumps("k", {}, {"s": np.array(["a"])})
