import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unimodal_acim.cache import FORMAT_VERSION, CacheStore, cache_key, load_file, roundtrip
from unimodal_acim.errors import ArtifactError

scalars = st.one_of(st.integers(-10 ** 6, 10 ** 6), st.floats(allow_nan=False), st.text(max_size=5),
                    st.booleans(), st.none(),
                    st.complex_numbers(allow_nan=False, allow_infinity=False))
nested = st.recursive(scalars, lambda inner: st.one_of(
    st.lists(inner, max_size=4), st.tuples(inner, inner),
    st.dictionaries(st.text(max_size=4), inner, max_size=3),
    st.dictionaries(st.integers(0, 50), inner, max_size=3)), max_leaves=12)


@given(nested)
def test_roundtrip_is_exact(obj):
    assert roundtrip(obj) == obj


@given(st.lists(st.floats(allow_nan=False), min_size=1, max_size=20))
def test_array_roundtrip(vals):
    a = np.array(vals).reshape(-1, 1)
    b = roundtrip(a)
    assert b.dtype == a.dtype and b.shape == a.shape and np.array_equal(a, b)


def _assert_same(a, b):
    if isinstance(a, np.ndarray):
        assert np.array_equal(a, b)
    elif isinstance(a, (list, tuple)):
        assert type(a) is type(b) and len(a) == len(b)
        for x, y in zip(a, b):
            _assert_same(x, y)
    elif hasattr(a, "__dataclass_fields__"):
        for name in a.__dataclass_fields__:
            _assert_same(getattr(a, name), getattr(b, name))
    elif hasattr(a, "fingerprint"):
        assert a.fingerprint() == b.fingerprint()
    else:
        assert a == b


def test_horseshoe_roundtrip(ship_h):
    _assert_same(ship_h, roundtrip(ship_h))


def test_store_hit_miss_and_corruption(tmp_path, ship_h):
    store = CacheStore(tmp_path)
    params = {"u1": ship_h.u1, "n": 30}
    calls = []
    first = store.get_or_compute("horseshoe", params, lambda: calls.append(1) or ship_h)
    again = store.get_or_compute("horseshoe", params, lambda: calls.append(1) or ship_h)
    assert calls == [1] and store.hits == 1 and store.misses == 1
    _assert_same(first, again)
    p = store.path("horseshoe", params)
    payload = json.loads(p.read_text())
    payload["data"]["fields"]["u1"] = 0.2
    p.write_text(json.dumps(payload))
    with pytest.raises(ArtifactError) as err:
        load_file(p)
    assert err.value.code == "hash-mismatch"
    store.get_or_compute("horseshoe", params, lambda: calls.append(1) or ship_h)
    assert calls == [1, 1]


def test_version_mismatch(tmp_path):
    store = CacheStore(tmp_path)
    p = store.save("x", {}, [1.0, 2.0])
    payload = json.loads(p.read_text())
    payload["version"] = FORMAT_VERSION + 1
    p.write_text(json.dumps(payload))
    with pytest.raises(ArtifactError) as err:
        load_file(p)
    assert err.value.code == "version-mismatch"


def test_keys_depend_on_parameters():
    assert cache_key("h", {"u1": 0.1}) != cache_key("h", {"u1": 0.2})
    assert cache_key("h", {"a": 1, "b": 2}) == cache_key("h", {"b": 2, "a": 1})


def test_disabled_store_always_computes(tmp_path):
    store = CacheStore(tmp_path, enabled=False)
    store.get_or_compute("k", {}, lambda: 1)
    store.get_or_compute("k", {}, lambda: 1)
    assert store.misses == 2 and not list(tmp_path.iterdir())
