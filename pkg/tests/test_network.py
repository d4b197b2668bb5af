import math

import numpy as np
import pytest

from megloc import (
    DenseLayer,
    InvalidArgumentError,
    NetworkModel,
    ServingEngine,
    SpaceTimeConvLayer,
    build_cnn,
    build_mlp,
    forward_pass,
    layer_activations,
    predict_locations,
)

TABLE_MLP = {1: 11_428_303, 2: 11_431_906, 3: 11_435_509}
TABLE_CNN = {1: 11_711_295, 2: 11_714_898, 3: 11_718_501}


# ---------------------------------------------------------------------------
# architectures and parameter counts
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("q,expected", sorted(TABLE_MLP.items()))
def test_mlp_published_parameter_counts(q, expected):
    assert build_mlp(306, q).parameter_count == expected


@pytest.mark.parametrize("q,expected", sorted(TABLE_CNN.items()))
def test_cnn_published_parameter_counts(q, expected):
    assert build_cnn(306, 16, q).parameter_count == expected


def test_mlp_count_small_sensor_array():
    # (4*3000+3000) + (3000*2500+2500) + (2500*1200+1200) + (1200*3+3)
    expected = 15_000 + 7_502_500 + 3_001_200 + 3_603
    assert expected == 10_522_303
    assert build_mlp(4, 1).parameter_count == expected


def test_cnn_feature_length_is_valid_convolution():
    model = build_cnn(306, 16, 1)
    conv = model.layers[0]
    n_frames = model.input_shape[1] - conv.n_taps + 1
    assert n_frames == 12
    assert model.layers[1].in_dim == conv.n_filters * n_frames == 384


def test_cnn_rejects_too_few_samples():
    with pytest.raises(InvalidArgumentError):
        build_cnn(306, 4, 1)


def test_builders_reject_bad_q():
    with pytest.raises(InvalidArgumentError):
        build_mlp(306, 4)
    with pytest.raises(InvalidArgumentError):
        build_cnn(306, 16, 0)


def test_builds_are_seed_deterministic():
    a = build_mlp(16, 1, seed=9)
    b = build_mlp(16, 1, seed=9)
    c = build_mlp(16, 1, seed=10)
    assert all(np.array_equal(x.weights, y.weights) for x, y in zip(a.layers, b.layers))
    assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)


def test_layer_chain_validation():
    good = DenseLayer(weights=np.zeros((4, 3)), biases=np.zeros(4), activation="sigmoid")
    bad = DenseLayer(weights=np.zeros((5, 7)), biases=np.zeros(5), activation="identity")
    with pytest.raises(InvalidArgumentError):
        NetworkModel(input_shape=(3,), layers=(good, bad), output_dim=5)


# ---------------------------------------------------------------------------
# forward evaluation
# ---------------------------------------------------------------------------

def zeroed(model):
    layers = []
    for layer in model.layers:
        if isinstance(layer, SpaceTimeConvLayer):
            layers.append(
                SpaceTimeConvLayer(
                    kernels=np.zeros_like(layer.kernels), biases=np.zeros_like(layer.biases)
                )
            )
        else:
            layers.append(
                DenseLayer(
                    weights=np.zeros_like(layer.weights),
                    biases=np.zeros_like(layer.biases),
                    activation=layer.activation,
                )
            )
    return NetworkModel(
        input_shape=model.input_shape,
        layers=tuple(layers),
        output_dim=model.output_dim,
        input_scale=model.input_scale,
    )


def test_all_zero_parameters_give_zero_output_and_half_sigmoids(rng):
    model = zeroed(build_mlp(8, 2, seed=0))
    x = rng.standard_normal(8)
    activations = layer_activations(model, x)
    for hidden in activations[:-1]:
        np.testing.assert_array_equal(hidden, 0.5)
    np.testing.assert_array_equal(activations[-1], 0.0)


def test_single_sigmoid_dense_layer_scalar_value():
    layer = DenseLayer(weights=np.array([[1.0, 2.0]]), biases=np.array([0.0]), activation="sigmoid")
    head = DenseLayer(weights=np.eye(3, 1), biases=np.zeros(3), activation="identity")
    model = NetworkModel(input_shape=(2,), layers=(layer, head), output_dim=3)
    out = forward_pass(model, np.array([1.0, 1.0]))
    expected = 1.0 / (1.0 + math.exp(-3.0))
    assert out[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.95257, abs=1e-5)


def test_conv_hand_example_all_ones():
    # M=2 sensors, T=2 taps, N=3 samples, one all-ones kernel on constant
    # input: each frame sums 2 sensors x 2 taps = 4.
    conv = SpaceTimeConvLayer(kernels=np.ones((1, 2, 2)), biases=np.zeros(1))
    head = DenseLayer(weights=np.zeros((3, 2)), biases=np.zeros(3), activation="identity")
    model = NetworkModel(input_shape=(2, 3), layers=(conv, head), output_dim=3)
    features = layer_activations(model, np.ones((2, 3)))[0]
    np.testing.assert_array_equal(features, [4.0, 4.0])


def test_conv_is_cross_correlation_no_flip():
    # Kernel picks tap tau=1 of sensor 0: C(t) = Y[0, t+1].
    kernels = np.zeros((1, 1, 2))
    kernels[0, 0, 1] = 1.0
    conv = SpaceTimeConvLayer(kernels=kernels, biases=np.zeros(1))
    head = DenseLayer(weights=np.zeros((3, 3)), biases=np.zeros(3), activation="identity")
    model = NetworkModel(input_shape=(1, 4), layers=(conv, head), output_dim=3)
    y = np.array([[10.0, 20.0, 30.0, 40.0]])
    features = layer_activations(model, y)[0]
    np.testing.assert_array_equal(features, [20.0, 30.0, 40.0])


def test_conv_flatten_is_filter_major():
    # Filter 0 reads sensor 0, filter 1 reads sensor 1; flatten must list all
    # frames of filter 0 before filter 1.
    kernels = np.zeros((2, 2, 1))
    kernels[0, 0, 0] = 1.0
    kernels[1, 1, 0] = 1.0
    conv = SpaceTimeConvLayer(kernels=kernels, biases=np.zeros(2))
    head = DenseLayer(weights=np.zeros((3, 4)), biases=np.zeros(3), activation="identity")
    model = NetworkModel(input_shape=(2, 2), layers=(conv, head), output_dim=3)
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    features = layer_activations(model, y)[0]
    np.testing.assert_array_equal(features, [1.0, 2.0, 3.0, 4.0])


def test_input_scale_divides_measurement(rng):
    base = build_mlp(6, 1, seed=3, input_scale=1.0)
    scaled = NetworkModel(
        input_shape=base.input_shape,
        layers=base.layers,
        output_dim=base.output_dim,
        input_scale=4.0,
    )
    x = rng.standard_normal(6)
    np.testing.assert_allclose(
        forward_pass(scaled, x), forward_pass(base, x / 4.0), rtol=1e-12
    )


def test_forward_rejects_shape_mismatch():
    model = build_mlp(8, 1, seed=0)
    with pytest.raises(InvalidArgumentError):
        forward_pass(model, np.zeros(7))
    cnn = build_cnn(4, 8, 1, seed=0)
    with pytest.raises(InvalidArgumentError):
        forward_pass(cnn, np.zeros((4, 7)))


def test_hidden_sigmoid_activations_in_open_unit_interval(rng):
    model = build_mlp(12, 1, seed=1, normalize_input=True)
    for _ in range(5):
        # unit-scale inputs keep pre-activations in the range where float64
        # sigmoids are strictly inside (0, 1)
        activations = layer_activations(model, rng.standard_normal(12))
        for hidden in activations[:-1]:
            assert np.all(hidden > 0.0)
            assert np.all(hidden < 1.0)
    # extreme inputs may round to the interval ends but never beyond
    extreme = layer_activations(build_mlp(12, 1, seed=1), 1e6 * rng.standard_normal(12))
    for hidden in extreme[:-1]:
        assert np.all(hidden >= 0.0)
        assert np.all(hidden <= 1.0)


# ---------------------------------------------------------------------------
# predict_locations and the serving engine
# ---------------------------------------------------------------------------

def test_predict_locations_layout(rng):
    model = build_mlp(10, 3, seed=2)
    x = rng.standard_normal(10)
    out = forward_pass(model, x)
    located = predict_locations(model, x)
    assert located.shape == (3, 3)
    np.testing.assert_array_equal(located[0], out[0:3])
    np.testing.assert_array_equal(located[1], out[3:6])
    np.testing.assert_array_equal(located[2], out[6:9])


def test_predict_locations_single_source_equals_forward(rng):
    model = build_mlp(10, 1, seed=2)
    x = rng.standard_normal(10)
    np.testing.assert_array_equal(predict_locations(model, x)[0], forward_pass(model, x))


def test_mlp_accepts_column_matrix(rng):
    model = build_mlp(10, 1, seed=4)
    x = rng.standard_normal(10)
    np.testing.assert_array_equal(forward_pass(model, x), forward_pass(model, x[:, None]))


def test_serving_engine_matches_reference(rng):
    mlp = build_mlp(24, 2, seed=5, input_scale=3.0)
    cnn = build_cnn(12, 16, 1, seed=6, input_scale=3.0)
    x = 50.0 * rng.standard_normal(24)
    y = 50.0 * rng.standard_normal((12, 16))
    np.testing.assert_allclose(
        ServingEngine(mlp).predict_locations(x), predict_locations(mlp, x), rtol=2e-5, atol=1e-7
    )
    np.testing.assert_allclose(
        ServingEngine(cnn).predict_locations(y), predict_locations(cnn, y), rtol=2e-5, atol=1e-7
    )


def test_serving_engine_is_repeatable(rng):
    model = build_mlp(16, 1, seed=7)
    engine = ServingEngine(model)
    x = rng.standard_normal(16)
    assert np.array_equal(engine.predict(x), engine.predict(x))
