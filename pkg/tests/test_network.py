import numpy as np
import numpy.testing as npt
import pytest

from sdrestore import network as N
from sdrestore.tensor import ConvKernel, ShapeError

from oracles import central_difference, relative_error


class TestBuiltinSpecs:
    def test_structure_branch_shape(self):
        spec = N.build_net_s()
        assert [l.kernel_size for l in spec.layers] == [9, 1, 5]
        assert [l.out_channels for l in spec.layers] == [64, 32, 1]
        assert spec.input_channels == 1
        assert [l.relu for l in spec.layers] == [True, True, False]

    def test_detail_branch_shape(self):
        spec = N.build_net_d()
        assert spec.depth == 20
        assert all(l.kernel_size == 3 for l in spec.layers)
        assert [l.out_channels for l in spec.layers[:-1]] == [64] * 19
        assert spec.layers[-1].out_channels == 1
        assert not spec.layers[-1].relu

    def test_parameter_counts_exact(self):
        s = 9 * 9 * 1 * 64 + 64 + 1 * 1 * 64 * 32 + 32 + 5 * 5 * 32 * 1 + 1
        d = 3 * 3 * 1 * 64 + 64 + 18 * (3 * 3 * 64 * 64 + 64) + 3 * 3 * 64 * 1 + 1
        assert N.build_net_s().parameter_count() == s
        assert N.build_net_d().parameter_count() == d

    def test_zero_params_give_zero_output(self, rng):
        spec = N.build_net_s()
        params = N.zero_parameters(spec)
        out, _ = N.forward(params, rng.random((1, 12, 12)))
        assert not out.any()

    def test_detail_branch_output_can_go_negative(self):
        spec = N.build_scaled(N.NET_D, channel_scale=4, depth=3)
        params = N.init_parameters(spec, seed=3)
        rng = np.random.default_rng(0)
        out, _ = N.forward(params, rng.random((1, 8, 8)))
        assert (out < 0).any()


class TestBuildScaled:
    def test_detail_family(self):
        spec = N.build_scaled(N.NET_D, channel_scale=8, depth=5)
        assert spec.depth == 5
        assert all(l.kernel_size == 3 for l in spec.layers)
        assert [l.out_channels for l in spec.layers] == [8, 8, 8, 8, 1]
        assert not spec.layers[-1].relu

    def test_structure_family_channel_halving(self):
        spec = N.build_scaled(N.NET_S, channel_scale=8)
        assert [l.out_channels for l in spec.layers] == [8, 4, 1]
        assert [l.kernel_size for l in spec.layers] == [9, 1, 5]

    def test_depth_one_is_single_layer(self):
        for kind in (N.NET_S, N.NET_D):
            spec = N.build_scaled(kind, channel_scale=8, depth=1)
            assert spec.depth == 1
            assert spec.layers[0].out_channels == 1
            assert not spec.layers[0].relu

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            N.build_scaled("net_q")


class TestInit:
    def test_deterministic_per_seed(self):
        spec = N.build_scaled(N.NET_D, 4, 3)
        a = N.init_parameters(spec, seed=11)
        b = N.init_parameters(spec, seed=11)
        for ka, kb in zip(a.kernels, b.kernels):
            npt.assert_array_equal(ka.weights, kb.weights)
            npt.assert_array_equal(ka.bias, kb.bias)

    def test_different_seeds_differ(self):
        spec = N.build_scaled(N.NET_D, 4, 3)
        a = N.init_parameters(spec, seed=11)
        b = N.init_parameters(spec, seed=12)
        assert any((ka.weights != kb.weights).any() for ka, kb in zip(a.kernels, b.kernels))

    def test_sample_std_near_he_target(self):
        # layers with >= 1000 weights: sample std within 20% of sqrt(2/(in*k^2))
        spec = N.build_net_d()
        params = N.init_parameters(spec, seed=5)
        in_c = spec.input_channels
        checked = 0
        for layer, kernel in zip(spec.layers, params.kernels):
            if kernel.weights.size >= 1000:
                target = np.sqrt(2.0 / (in_c * layer.kernel_size ** 2))
                sample = kernel.weights.std()
                assert abs(sample - target) / target < 0.2
                checked += 1
            in_c = layer.out_channels
        assert checked >= 1

    def test_biases_zero(self):
        params = N.init_parameters(N.build_net_s(), seed=0)
        assert all(not k.bias.any() for k in params.kernels)


class TestForwardBackward:
    def test_identity_single_layer(self, rng):
        spec = N.NetworkSpec(
            kind=N.NET_D, input_channels=1, layers=(N.LayerSpec(1, 3, relu=False),)
        )
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        params = N.Parameters(spec=spec, kernels=(ConvKernel(w, np.zeros(1)),))
        x = rng.random((1, 6, 6))
        out, _ = N.forward(params, x)
        npt.assert_array_equal(out, x)

    def test_spatial_size_preserved(self, rng):
        for kind, scale, depth in ((N.NET_S, 4, 3), (N.NET_D, 4, 4)):
            spec = N.build_scaled(kind, scale, depth)
            params = N.init_parameters(spec, seed=2)
            out, _ = N.forward(params, rng.random((1, 9, 7)))
            assert out.shape == (1, 9, 7)

    def test_channel_mismatch(self, rng):
        params = N.init_parameters(N.build_scaled(N.NET_D, 2, 2), seed=0)
        with pytest.raises(ShapeError):
            N.forward(params, rng.random((2, 5, 5)))

    def test_forward_deterministic(self, rng):
        spec = N.build_scaled(N.NET_D, 4, 3)
        params = N.init_parameters(spec, seed=7)
        x = rng.random((1, 8, 8))
        a, _ = N.forward(params, x)
        b, _ = N.forward(params, x)
        npt.assert_array_equal(a, b)

    def test_zero_grad_output_gives_zero_grads(self, rng):
        spec = N.build_scaled(N.NET_D, 3, 2)
        params = N.init_parameters(spec, seed=1)
        x = rng.random((1, 5, 5))
        out, cache = N.forward(params, x)
        grads, gin = N.backward(params, cache, np.zeros_like(out))
        assert not gin.any()
        assert all(not k.weights.any() and not k.bias.any() for k in grads.kernels)

    def test_linear_layer_bias_grad_is_grad_sum(self, rng):
        spec = N.NetworkSpec(
            kind=N.NET_D, input_channels=2, layers=(N.LayerSpec(3, 3, relu=False),)
        )
        params = N.Parameters(
            spec=spec,
            kernels=(ConvKernel(rng.normal(0, 1, (3, 2, 3, 3)), rng.normal(0, 1, 3)),),
        )
        x = rng.normal(0, 1, (2, 5, 5))
        out, cache = N.forward(params, x)
        go = rng.normal(0, 1, out.shape)
        grads, _ = N.backward(params, cache, go)
        npt.assert_allclose(grads.kernels[0].bias, go.sum(axis=(1, 2)), atol=1e-12)

    def test_grad_output_shape_mismatch(self, rng):
        spec = N.build_scaled(N.NET_D, 2, 2)
        params = N.init_parameters(spec, seed=0)
        _, cache = N.forward(params, rng.random((1, 5, 5)))
        with pytest.raises(ShapeError):
            N.backward(params, cache, np.zeros((1, 6, 5)))


def _kink_free(cache, margin=1e-4):
    return all(np.abs(z).min() > margin for z in cache.pre_acts)


def _params_with_weights(params, flat):
    kernels = []
    offset = 0
    for k in params.kernels:
        nw = k.weights.size
        nb = k.bias.size
        kernels.append(
            ConvKernel(
                weights=flat[offset : offset + nw].reshape(k.weights.shape),
                bias=flat[offset + nw : offset + nw + nb],
            )
        )
        offset += nw + nb
    return N.Parameters(spec=params.spec, kernels=tuple(kernels))


def _flatten(params):
    return np.concatenate([np.concatenate([k.weights.ravel(), k.bias]) for k in params.kernels])


@pytest.mark.parametrize("kind,scale,depth", [(N.NET_D, 3, 2), (N.NET_S, 4, 2), (N.NET_D, 2, 5)])
def test_network_gradients_match_finite_differences(kind, scale, depth):
    # retry seeds until every ReLU pre-activation is safely away from zero
    for seed in range(50):
        rng = np.random.default_rng(seed)
        spec = N.build_scaled(kind, scale, depth)
        params = N.init_parameters(spec, seed=seed + 100)
        x = rng.normal(0, 1, (1, 5, 5))
        out, cache = N.forward(params, x)
        if _kink_free(cache):
            break
    else:
        pytest.fail("no kink-free configuration found")

    go = rng.normal(0, 1, out.shape)
    grads, grad_in = N.backward(params, cache, go)

    def f_theta(flat):
        o, _ = N.forward(_params_with_weights(params, flat), x)
        return float(np.sum(go * o))

    numeric = central_difference(f_theta, _flatten(params), 1e-6)
    assert relative_error(_flatten(grads), numeric) < 1e-6

    def f_input(xv):
        o, _ = N.forward(params, xv)
        return float(np.sum(go * o))

    assert relative_error(grad_in, central_difference(f_input, x.copy(), 1e-6)) < 1e-6


def test_directional_derivative_matches_fd(rng):
    spec = N.build_scaled(N.NET_S, 4, 2)
    for seed in range(50):
        params = N.init_parameters(spec, seed=seed)
        x = np.random.default_rng(seed).normal(0, 1, (1, 6, 6))
        out, cache = N.forward(params, x)
        if _kink_free(cache):
            break
    direction = rng.normal(0, 1, x.shape)
    direction /= np.linalg.norm(direction)
    go = rng.normal(0, 1, out.shape)
    _, grad_in = N.backward(params, cache, go)
    analytic = float(np.sum(grad_in * direction))
    h = 1e-6
    op, _ = N.forward(params, x + h * direction)
    om, _ = N.forward(params, x - h * direction)
    numeric = float(np.sum(go * (op - om)) / (2 * h))
    assert abs(analytic - numeric) / max(abs(analytic), abs(numeric)) < 1e-6
