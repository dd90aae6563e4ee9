import numpy as np
import pytest

from deepcat import autodiff as ad
from deepcat import featurenet as fn
from deepcat.autodiff import grad_check
from deepcat.errors import ConfigurationError, DimensionError


def test_parameter_count_and_feature_dim():
    net = fn.build([fn.dense(2, 4), fn.relu(), fn.dense(4, 3)], seed=7)
    assert net.feature_dim == 3
    # weights + biases per dense layer
    assert net.num_parameters() == (2 * 4 + 4) + (4 * 3 + 3) == 27


def test_same_seed_same_parameters():
    spec = [fn.dense(2, 4), fn.relu(), fn.dense(4, 3)]
    a, b = fn.build(spec, seed=7), fn.build(spec, seed=7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pa.data, pb.data)


def test_broken_chain_names_layer_index():
    with pytest.raises(ConfigurationError, match="layer 1"):
        fn.build([fn.dense(2, 4), fn.dense(5, 3)], seed=0)


def test_empty_stack_rejected():
    with pytest.raises(ConfigurationError):
        fn.build([], seed=0)


def test_conv_stack_shapes():
    net = fn.build(fn.default_image_layers((3, 8, 8), 5), seed=1, input_shape=(3, 8, 8))
    out = net.forward(np.zeros((2, 3, 8, 8)))
    assert out.shape == (2, 5)


def test_conv_stack_must_end_flat():
    with pytest.raises(ConfigurationError):
        fn.build([fn.conv2d(1, 2, 3)], seed=0, input_shape=(1, 5, 5))


def test_identity_dense_layer_returns_input():
    net = fn.build([fn.dense(3, 3)], seed=0)
    net.params["phi.0.weight"].data = np.eye(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(net.forward(x).data, x)


def test_all_negative_preactivations_give_zero_features():
    net = fn.build([fn.dense(2, 3), fn.relu()], seed=0)
    net.params["phi.0.weight"].data = np.zeros((2, 3))
    net.params["phi.0.bias"].data = -np.ones(3)
    np.testing.assert_array_equal(net.forward(np.ones((4, 2))).data, np.zeros((4, 3)))


def test_forward_shape_mismatch():
    net = fn.build([fn.dense(2, 3)], seed=0)
    with pytest.raises(DimensionError):
        net.forward(np.ones((4, 5)))


def test_identity_net_flattens():
    net = fn.FeatureNet.identity((1, 2, 2))
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    np.testing.assert_array_equal(net.forward(x).data, x.reshape(2, 4))
    assert net.feature_dim == 4 and net.num_parameters() == 0


def test_gradient_through_forward():
    rng = np.random.default_rng(2)
    net = fn.build([fn.dense(3, 4), fn.relu(), fn.dense(4, 2)], seed=3)
    while True:
        x = rng.uniform(-1, 1, (5, 3))
        trace = []
        with ad.no_grad():
            net.forward(x, trace=trace)
        if np.min(np.abs(trace[1].data)) > 1e-2:
            break
    report = grad_check(lambda *p: net.forward(x).square().sum(), net.parameters())
    assert report.max_rel_error < 1e-5


def test_parse_layers_round_trip():
    text = "conv2d:1:8:3:2, relu, flatten, dense:72:4"
    layers = fn.parse_layers(text)
    assert ", ".join(str(layer) for layer in layers) == text
    assert [fn.LayerSpec.from_dict(layer.to_dict()) for layer in layers] == layers


@pytest.mark.parametrize("bad", ["dense:2", "conv2d:1:2", "pool", "dense:a:b"])
def test_parse_layers_rejects(bad):
    with pytest.raises(ConfigurationError):
        fn.parse_layers(bad)
