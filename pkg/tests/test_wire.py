import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadswarm.wire import DecodeError, EncodeError, deserialize, serialize


def roundtrip_equal(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and np.array_equal(a, b)
    if isinstance(a, list):
        return isinstance(b, list) and len(a) == len(b) and all(
            roundtrip_equal(x, y) for x, y in zip(a, b)
        )
    if isinstance(a, dict):
        return (
            isinstance(b, dict)
            and list(a.keys()) == list(b.keys())
            and all(roundtrip_equal(a[k], b[k]) for k in a)
        )
    if isinstance(a, float):
        return isinstance(b, float) and (a == b or (a != a and b != b))
    return type(a) is type(b) and a == b


class TestRoundTrip:
    def test_empty_map(self):
        assert deserialize(serialize({})) == {}

    def test_state_message_bit_exact(self):
        msg = {
            "position": np.array([1.5, -2.0, 0.25]),
            "velocity": np.array([0.0, 0.0, 0.0]),
        }
        out = deserialize(serialize(msg))
        assert np.array_equal(out["position"], msg["position"])
        assert np.array_equal(out["velocity"], msg["velocity"])

    def test_scalars(self):
        for v in (None, True, False, 0, -1, 2**62, "hi", "", b"\x00\xff", 3.14159, -0.0):
            assert roundtrip_equal(deserialize(serialize(v)), v)

    def test_nested(self):
        v = {"a": [1, 2.5, "x", None, {"b": np.arange(4.0)}], 7: b"raw", "c": []}
        assert roundtrip_equal(deserialize(serialize(v)), v)

    def test_encoding_deterministic(self):
        v = {"k": [1.0, 2.0], "j": np.array([3.0])}
        assert serialize(v) == serialize(v)

    def test_version_header(self):
        assert serialize(None)[0] == 1


nested_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**63), max_value=2**63 - 1)
    | st.floats(allow_nan=False, width=64)
    | st.text(max_size=20)
    | st.binary(max_size=20)
    | st.builds(
        np.array,
        st.lists(st.floats(allow_nan=False, width=64), max_size=8),
    ),
    lambda children: st.lists(children, max_size=5)
    | st.dictionaries(st.text(max_size=6) | st.integers(-100, 100), children, max_size=5),
    max_leaves=25,
)


@settings(max_examples=1000, deadline=None)
@given(nested_values)
def test_random_roundtrip(value):
    assert roundtrip_equal(deserialize(serialize(value)), value)


class TestErrors:
    def test_unsupported_type(self):
        with pytest.raises(EncodeError):
            serialize(object())

    def test_int_overflow(self):
        with pytest.raises(EncodeError):
            serialize(2**64)

    def test_bad_version(self):
        with pytest.raises(DecodeError):
            deserialize(b"\x07\x00")

    def test_truncated_reports_offset(self):
        data = serialize({"k": [1.0, 2.0, 3.0]})
        with pytest.raises(DecodeError) as exc:
            deserialize(data[:-5])
        assert exc.value.offset > 0

    def test_unknown_tag_offset(self):
        with pytest.raises(DecodeError) as exc:
            deserialize(bytes([1, 0xEE]))
        assert exc.value.offset == 1

    def test_trailing_bytes(self):
        with pytest.raises(DecodeError):
            deserialize(serialize(1) + b"\x00")

    def test_unhashable_key_rejected(self):
        with pytest.raises(EncodeError):
            serialize({(1, 2): "x"})  # type: ignore[dict-item]
