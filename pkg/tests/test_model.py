import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import SMALL_LAYERS, jittered_network, random_spec
from vbplupi import model
from vbplupi.model import NetworkSpec, SpecError
from vbplupi.oracle import FiniteDiffConfig, finite_diff_grad, posthoc_vbp, relative_error
from vbplupi.tensor import ShapeError
from vbplupi.vbp import vbp_forward

seeds = st.integers(0, 2**31 - 1)


def small_spec(channels=1, size=8, k=3):
    return NetworkSpec((channels, size, size), SMALL_LAYERS.replace("linear(3)", f"linear({k})"), k)


@pytest.mark.parametrize("text", [
    SMALL_LAYERS,
    "conv(2,1,1,0) relu gap linear(1) sigmoid",
    "conv(8,1,1,0) relu conv(8,2,2,0) relu resblock(3) resblock(1) gap linear(5) sigmoid",
])
def test_layer_string_round_trip(text):
    assert model.format_layers(model.parse_layers(text)) == text


@pytest.mark.parametrize("text,msg", [
    ("conv(2,3,1,1) gap linear(2) sigmoid", "followed by relu"),
    ("conv(2,3,1,1) relu linear(2) sigmoid", "end with"),
    ("conv(2,3,3,1) relu gap linear(2) sigmoid", "strides above 2"),
    ("conv(2,3,1,1) relu resblock(2) gap linear(2) sigmoid", "odd"),
    ("conv(2,9,1,0) relu gap linear(2) sigmoid", "nonpositive"),
    ("resblock(3) relu gap linear(2) sigmoid", "relu is only allowed"),
    ("conv(2,3,1,1) relu gap linear(3) sigmoid", "expected 2 outputs"),
    ("conv(2,3,1,1) relu pool gap linear(2) sigmoid", "unknown layer"),
])
def test_spec_validation(text, msg):
    with pytest.raises(SpecError, match=msg):
        NetworkSpec((1, 8, 8), text, 2)


def test_spec_dict_round_trip():
    spec = small_spec()
    again = NetworkSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict() and again.param_shapes() == spec.param_shapes()


def test_build_is_deterministic():
    a, b = model.build(small_spec(), 7), model.build(small_spec(), 7)
    assert list(a.params) == list(b.params)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_fresh_biases_zero_and_weights_bounded():
    net = model.build(small_spec(), 3)
    for name, p in net.params.items():
        if name.endswith("bias"):
            assert not p.any()
        else:
            assert np.abs(p).max() <= model.glorot_bound(p.shape)


def test_glorot_bound_fans():
    assert model.glorot_bound((4, 2, 3, 3)) == pytest.approx(np.sqrt(6 / (18 + 36)))
    assert model.glorot_bound((3, 8)) == pytest.approx(np.sqrt(6 / 11))


def test_trace_length_and_geometry_chain(rng):
    net = jittered_network(small_spec(), 0)
    _, trace = model.forward_with_trace(net, rng.uniform(size=(1, 8, 8)))
    assert len(trace) == 3
    trace.validate()
    prev = (8, 8)
    for f, g in trace.entries:
        assert tuple(g.output_shape) == prev
        assert g.input_shape() == f.shape[-2:]
        prev = f.shape[-2:]


def test_zero_network_predicts_half():
    net = model.build(small_spec(), 0)
    for p in net.params.values():
        p[...] = 0.0
    np.testing.assert_array_equal(model.predict(net, np.ones((1, 8, 8))), [0.5, 0.5, 0.5])


@given(seeds)
def test_predict_matches_traced_forward_bitwise(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng)
    net = jittered_network(spec, seed % 1000)
    x = rng.uniform(size=(int(rng.integers(1, 4)),) + spec.input_shape)
    probs, trace = model.forward_with_trace(net, x)
    assert np.array_equal(model.predict(net, x), probs)
    vbp_forward(trace)  # computing the mask must not feed back into the prediction
    assert np.array_equal(model.forward_with_trace(net, x)[0], probs)


def test_network_mask_matches_posthoc(rng):
    net = jittered_network(small_spec(), 1)
    _, trace = model.forward_with_trace(net, rng.uniform(size=(1, 8, 8)))
    np.testing.assert_allclose(vbp_forward(trace), posthoc_vbp(trace), atol=1e-10)


def test_aux_mask_channel(rng):
    spec = small_spec(channels=4)
    net = model.build(spec, 0)
    x = rng.uniform(size=(2, 3, 8, 8))
    aux = np.zeros((2, 1, 8, 8))
    np.testing.assert_array_equal(model.predict(net, x, aux), model.predict(net, np.concatenate([x, aux], 1)))
    with pytest.raises(ShapeError):
        model.predict(net, x)


def test_backward_classification_only_finite_differences(rng):
    net = jittered_network(small_spec(), 2)
    x = rng.uniform(size=(2, 1, 8, 8))
    w = rng.normal(size=(2, 3))
    probs, _, caches = model.forward_cached(net, x)
    grads = model.backward(net, caches, w)
    assert list(grads) == list(net.params)
    for name in ("0.weight", "4.conv2.bias", "6.weight"):
        num = finite_diff_grad(lambda: float((model.predict(net, x) * w).sum()), net.params[name],
                               FiniteDiffConfig(h=1e-6))
        assert relative_error(grads[name], num) < 1e-5


def test_checkpoint_round_trip(tmp_path, rng):
    net = jittered_network(small_spec(), 4)
    net.meta = {"regime": "half-focus"}
    path = tmp_path / "m.pfck"
    model.save_checkpoint(net, path)
    back = model.load_checkpoint(path)
    assert back.spec.to_dict() == net.spec.to_dict() and back.meta == net.meta and back.rng_seed == 4
    for name in net.params:
        np.testing.assert_array_equal(back.params[name], net.params[name])
    assert model.checkpoint_bytes(back) == model.checkpoint_bytes(net)


def test_fresh_checkpoint_keeps_zero_biases():
    back = model.checkpoint_from_bytes(model.checkpoint_bytes(model.build(small_spec(), 0)))
    assert all(not p.any() for n, p in back.params.items() if n.endswith("bias"))


def _corrupt(buf, where, value):
    b = bytearray(buf)
    b[where] = value
    return bytes(b)


def test_checkpoint_errors():
    buf = model.checkpoint_bytes(model.build(small_spec(), 0))
    with pytest.raises(model.CheckpointFormatError):
        model.checkpoint_from_bytes(_corrupt(buf, 0, ord("X")))
    with pytest.raises(model.CheckpointVersionError):
        model.checkpoint_from_bytes(_corrupt(buf, 4, 9))
    with pytest.raises(model.CheckpointTruncatedError):
        model.checkpoint_from_bytes(buf[:-8])
    with pytest.raises(model.CheckpointLengthError):
        model.checkpoint_from_bytes(buf + b"\0" * 8)
    with pytest.raises(model.CheckpointLengthError):
        model.checkpoint_from_bytes(buf[:8] + (10**9).to_bytes(8, "little") + buf[16:])
    with pytest.raises(model.CheckpointTruncatedError):
        model.checkpoint_from_bytes(buf[:6])
    assert all(issubclass(e, model.CheckpointError) for e in (
        model.CheckpointFormatError, model.CheckpointVersionError,
        model.CheckpointLengthError, model.CheckpointTruncatedError))
