import math

import numpy as np
import pytest

from nncore import layers, ops
from nncore.exceptions import InvalidArgument, NonFiniteError, ShapeError
from nncore.gradcheck import grad_check
from nncore.layers import Parameters
from nncore.tensor import Tensor

TOLERANCE = 1e-4


def random_tensor(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def weighted(out, weights):
    """Scalar sum(out * weights) so every output element carries a distinct gradient."""
    return ops.sum(ops.mul(out, Tensor(weights)))


def check(fn, inputs, **kwargs):
    kwargs.setdefault('epsilon', 1e-5)
    kwargs.setdefault('floor', 1e-6)
    return grad_check(fn, inputs, **kwargs)


def test_grad_check_of_constant_function():
    x = Tensor(np.array([1.0, 2.0]))
    assert grad_check(lambda: ops.scale(ops.sum(x), 0.0), [x]) == 0.0
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_grad_check_of_quadratic():
    x = Tensor(np.array([1.0, 2.0]))
    error = grad_check(lambda: ops.sum(ops.mul(x, x)), [x])
    assert np.array_equal(x.grad, [2.0, 4.0])
    assert error < 1e-8


@pytest.mark.parametrize("epsilon", [1e-8, 1e-2])
def test_grad_check_epsilon_range(epsilon):
    x = Tensor(np.ones(2))
    with pytest.raises(InvalidArgument):
        grad_check(lambda: ops.sum(x), [x], epsilon=epsilon)


def test_grad_check_finds_a_wrong_backward_rule():
    x = Tensor(np.array([0.3, -0.7]))

    def broken():
        def backward(grad):
            x.grad += grad * 2.0
        return Tensor(np.sum(x.data), requires_grad=True, parents=(x,), backward=backward)
    assert grad_check(broken, [x]) > 0.4


def test_grad_check_subset():
    rng = np.random.default_rng(0)
    x = random_tensor(rng, 6, 5)
    assert check(lambda: ops.sum(ops.mul(x, x)), [x], max_checks=7) < TOLERANCE


def test_linear_ops_gradients():
    rng = np.random.default_rng(1)
    a, b = random_tensor(rng, 4, 3), random_tensor(rng, 3, 5)
    c, row = random_tensor(rng, 4, 5), random_tensor(rng, 5)
    w = rng.normal(size=(4, 5))
    fn = lambda: weighted(ops.sub(ops.add(ops.matmul(a, b), row), ops.scale(ops.mul(c, c), 0.5)), w)  # noqa: E731
    assert check(fn, [a, b, c, row]) < TOLERANCE


def test_div_broadcasts_and_rejects_zero():
    rng = np.random.default_rng(19)
    a, b = random_tensor(rng, 4, 3), random_tensor(rng, 1, 3, low=0.5, high=2.0)
    assert np.allclose(ops.div(a, b).data, a.data / b.data, atol=1e-15)
    w = rng.normal(size=(4, 3))
    assert check(lambda: weighted(ops.div(a, b), w), [a, b]) < TOLERANCE
    with pytest.raises(InvalidArgument):
        ops.div(a, Tensor(np.zeros(3)))


def test_transpose_and_operators():
    rng = np.random.default_rng(2)
    a, b = random_tensor(rng, 3, 2), random_tensor(rng, 3, 2)
    out = (a - b) * 2.0 + (-a) * b
    assert np.allclose(out.data, 2 * (a.data - b.data) - a.data * b.data, atol=1e-15)
    assert (a @ b.T).shape == (3, 3)
    assert check(lambda: ops.sum(ops.mul(a @ b.T, a @ b.T)), [a, b]) < TOLERANCE


def test_activation_gradients():
    rng = np.random.default_rng(3)
    x = random_tensor(rng, 5, 4)
    w = rng.normal(size=(5, 4))
    assert check(lambda: weighted(ops.relu(x), w), [x]) < TOLERANCE
    assert check(lambda: weighted(ops.sigmoid(x), w), [x]) < TOLERANCE


def test_sigmoid_is_stable_for_large_inputs():
    out = ops.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0])))
    assert np.array_equal(out.data, [0.0, 0.5, 1.0])


def test_softmax_rows():
    rng = np.random.default_rng(4)
    x = random_tensor(rng, 6, 5, low=-30.0, high=30.0)
    value = ops.softmax(x).data
    assert np.all(value >= 0.0)
    assert np.abs(value.sum(axis=1) - 1.0).max() < 1e-9

    y = random_tensor(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    assert check(lambda: weighted(ops.softmax(y), w), [y]) < TOLERANCE


def test_layer_norm():
    rng = np.random.default_rng(5)
    x = random_tensor(rng, 4, 6, low=-3.0, high=3.0)
    gamma, beta = random_tensor(rng, 6), random_tensor(rng, 6)
    out = ops.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    assert np.abs(out.mean(axis=1)).max() < 1e-12
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4

    w = rng.normal(size=(4, 6))
    assert check(lambda: weighted(ops.layer_norm(x, gamma, beta), w), [x, gamma, beta]) < TOLERANCE


def test_concat_gather_and_columns():
    rng = np.random.default_rng(6)
    a, b = random_tensor(rng, 2, 3), random_tensor(rng, 4, 3)
    w = rng.normal(size=(5, 2))

    def fn():
        rows = ops.gather_rows(ops.concat([a, b], axis=0), [5, 0, 0, 3, 1])
        return weighted(ops.columns(rows, 1, 3), w)
    assert check(fn, [a, b]) < TOLERANCE
    # repeated rows accumulate
    assert np.allclose(a.grad[0, 1:3], w[1] + w[2], atol=1e-15)

    side = random_tensor(rng, 2, 4)
    wide = rng.normal(size=(2, 7))
    assert ops.concat([a, side], axis=1).shape == (2, 7)
    assert check(lambda: weighted(ops.concat([a, side], axis=1), wide), [a, side]) < TOLERANCE


def test_concat_shape_error():
    with pytest.raises(ShapeError) as excinfo:
        ops.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)
    assert '(2, 3)' in str(excinfo.value) and '(2, 4)' in str(excinfo.value)


def test_group_max():
    x = Tensor(np.array([[1.0, 5.0], [3.0, 2.0], [0.0, -1.0], [-2.0, 4.0]]), requires_grad=True)
    out = ops.group_max(x, 2)
    assert np.array_equal(out.data, [[3.0, 5.0], [0.0, 4.0]])
    ops.sum(out).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    rng = np.random.default_rng(7)
    y = random_tensor(rng, 12, 3)
    w = rng.normal(size=(3, 3))
    assert check(lambda: weighted(ops.group_max(y, 4), w), [y]) < TOLERANCE

    with pytest.raises(ShapeError):
        ops.group_max(y, 5)


def test_reductions_and_losses():
    rng = np.random.default_rng(8)
    x = random_tensor(rng, 5, 3)
    targets = (rng.uniform(size=(5, 3)) > 0.5).astype(float)
    goal = rng.uniform(-1.0, 1.0, size=(5, 3))
    assert ops.sum(x, axis=1).shape == (5, 1)
    assert ops.sum(x, axis=0).shape == (1, 3)
    assert check(lambda: ops.mean(ops.mul(ops.sum(x, axis=1), ops.sum(x, axis=1))), [x]) < TOLERANCE
    assert check(lambda: ops.bce_with_logits(x, targets), [x]) < TOLERANCE
    assert check(lambda: ops.mse(x, goal), [x]) < TOLERANCE
    # residuals stay away from the |d| = beta kink
    far = x.data - np.where(rng.uniform(size=goal.shape) > 0.5, 1.7, -0.2)
    assert check(lambda: ops.smooth_l1(x, far, beta=1.0), [x]) < TOLERANCE


def test_loss_values():
    logits = Tensor(np.array([[0.0], [2.0]]))
    expected = (math.log(2.0) + math.log1p(math.exp(-2.0))) / 2.0
    assert ops.bce_with_logits(logits, [[1.0], [1.0]]).item() == pytest.approx(expected, abs=1e-15)
    assert ops.smooth_l1(Tensor(np.array([0.5, 3.0])), [0.0, 0.0]).item() == pytest.approx((0.125 + 2.5) / 2)
    assert ops.mse(Tensor(np.array([1.0, 3.0])), [1.0, 1.0]).item() == 2.0


def naive_attention(q, k, v):
    n_q, d = q.shape
    out = np.zeros((n_q, v.shape[1]))
    for i in range(n_q):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        for j in range(k.shape[0]):
            for c in range(v.shape[1]):
                out[i, c] += weights[j] / total * v[j, c]
    return out


def test_attention_matches_naive_loops():
    rng = np.random.default_rng(9)
    q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(6, 8)), rng.normal(size=(6, 5))
    out = ops.attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.abs(out - naive_attention(q, k, v)).max() < 1e-12


def test_attention_with_identical_keys_averages_values():
    rng = np.random.default_rng(10)
    k = np.tile(rng.normal(size=(1, 4)), (5, 1))
    v = rng.normal(size=(5, 3))
    out = ops.attention(Tensor(rng.normal(size=(2, 4))), Tensor(k), Tensor(v)).data
    assert np.allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_with_single_key():
    rng = np.random.default_rng(11)
    v = rng.normal(size=(1, 3))
    out = ops.attention(Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(1, 2))), Tensor(v)).data
    assert np.allclose(out, np.tile(v, (4, 1)), atol=1e-15)


def test_attention_gradients():
    rng = np.random.default_rng(12)
    q, k, v = random_tensor(rng, 3, 4), random_tensor(rng, 5, 4), random_tensor(rng, 5, 2)
    w = rng.normal(size=(3, 2))
    assert check(lambda: weighted(ops.attention(q, k, v), w), [q, k, v]) < TOLERANCE


@pytest.mark.parametrize("shapes", [
    ((3, 4), (5, 3), (5, 2)),
    ((3, 4), (5, 4), (6, 2)),
    ((3, 4, 1), (5, 4), (5, 2)),
])
def test_attention_shape_errors(shapes):
    q, k, v = (Tensor(np.zeros(shape)) for shape in shapes)
    with pytest.raises(ShapeError) as excinfo:
        ops.attention(q, k, v)
    assert 'attention' in str(excinfo.value)


def test_attention_error_names_both_shapes():
    with pytest.raises(ShapeError) as excinfo:
        ops.attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 3))), Tensor(np.zeros((5, 2))))
    assert '(3, 4)' in str(excinfo.value) and '(5, 3)' in str(excinfo.value)


def test_conv1d_of_zero_input_is_zero():
    rng = np.random.default_rng(13)
    weight = Tensor(rng.normal(size=(3, 1, 4)))
    out = ops.conv1d(Tensor(np.zeros((6, 1))), weight, Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((6, 4)))


def test_conv1d_width_one_is_a_linear_map():
    rng = np.random.default_rng(14)
    x, weight, bias = rng.normal(size=(7, 2)), rng.normal(size=(1, 2, 3)), rng.normal(size=3)
    out = ops.conv1d(Tensor(x), Tensor(weight), Tensor(bias)).data
    assert np.array_equal(out, bias + x @ weight[0])


def test_conv1d_on_a_ramp_matches_sliding_window():
    scores = np.arange(1.0, 7.0).reshape(-1, 1)
    rng = np.random.default_rng(15)
    weight, bias = rng.normal(size=(3, 1, 2)), rng.normal(size=2)
    out = ops.conv1d(Tensor(scores), Tensor(weight), Tensor(bias)).data

    padded = np.concatenate([[0.0], scores[:, 0], [0.0]])
    expected = np.zeros((6, 2))
    for row in range(6):
        for offset in range(3):
            expected[row] += padded[row + offset] * weight[offset, 0]
        expected[row] += bias
    assert np.abs(out - expected).max() < 1e-12


def test_conv1d_gradients_and_errors():
    rng = np.random.default_rng(16)
    x, weight, bias = random_tensor(rng, 6, 2), random_tensor(rng, 3, 2, 4), random_tensor(rng, 4)
    w = rng.normal(size=(6, 4))
    assert check(lambda: weighted(ops.conv1d(x, weight, bias), w), [x, weight, bias]) < TOLERANCE

    with pytest.raises(InvalidArgument):
        ops.conv1d(x, Tensor(np.zeros((2, 2, 4))), bias)
    with pytest.raises(ShapeError):
        ops.conv1d(x, Tensor(np.zeros((3, 3, 4))), bias)


def naive_conv3d(grid, weight, bias, g):
    out = np.tile(bias, (g ** 3, 1)).astype(float)
    for x in range(g):
        for y in range(g):
            for z in range(g):
                offset = 0
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        for dz in (-1, 0, 1):
                            nx, ny, nz = x + dx, y + dy, z + dz
                            if 0 <= nx < g and 0 <= ny < g and 0 <= nz < g:
                                out[x * g * g + y * g + z] += grid[nx * g * g + ny * g + nz] @ weight[offset]
                            offset += 1
    return out


def test_grid_neighbours():
    table = ops.grid_neighbours(2)
    assert table.shape == (27, 8)
    assert np.array_equal(table[13], np.arange(8))
    # offset (+1, +1, +1) from cell 0 is cell 7, and falls off the grid elsewhere
    assert table[26, 0] == 7
    assert np.all(table[26, 1:] == 8)


def test_conv3d_matches_naive_loops():
    rng = np.random.default_rng(17)
    grid, weight, bias = rng.normal(size=(27, 2)), rng.normal(size=(27, 2, 3)), rng.normal(size=3)
    out = ops.conv3d(Tensor(grid), Tensor(weight), Tensor(bias), 3).data
    assert np.abs(out - naive_conv3d(grid, weight, bias, 3)).max() < 1e-12


def test_conv3d_gradients_and_errors():
    rng = np.random.default_rng(18)
    grid, weight, bias = random_tensor(rng, 8, 2), random_tensor(rng, 27, 2, 2), random_tensor(rng, 2)
    w = rng.normal(size=(8, 2))
    assert check(lambda: weighted(ops.conv3d(grid, weight, bias, 2), w), [grid, weight, bias]) < TOLERANCE
    with pytest.raises(ShapeError):
        ops.conv3d(grid, weight, bias, 3)


def test_conv3d_gradients_reach_interior_cells():
    rng = np.random.default_rng(20)
    grid, weight, bias = random_tensor(rng, 27, 2), random_tensor(rng, 27, 2, 3), random_tensor(rng, 3)
    w = rng.normal(size=(27, 3))
    assert check(lambda: weighted(ops.conv3d(grid, weight, bias, 3), w), [grid, weight]) < TOLERANCE
    # the centre cell is read by every stencil offset
    assert np.all(grid.grad[13] != 0.0)


def test_scatter_mean():
    features = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), requires_grad=True)
    out = ops.scatter_mean(features, [0, 0, 2], 3)
    assert np.array_equal(out.data, [[2.0, 3.0], [0.0, 0.0], [5.0, 6.0]])

    rng = np.random.default_rng(19)
    w = rng.normal(size=(3, 2))
    assert check(lambda: weighted(ops.scatter_mean(features, [0, 0, 2], 3), w), [features]) < TOLERANCE


def naive_trilinear(grid, coords, g):
    out = np.zeros((coords.shape[0], grid.shape[1]))
    for row, point in enumerate(coords):
        u = np.clip(point, 0.0, g - 1.0)
        base = [min(int(math.floor(c)), g - 2) for c in u]
        frac = [c - b for c, b in zip(u, base)]
        for cx in (0, 1):
            for cy in (0, 1):
                for cz in (0, 1):
                    weight = ((frac[0] if cx else 1 - frac[0]) * (frac[1] if cy else 1 - frac[1])
                              * (frac[2] if cz else 1 - frac[2]))
                    cell = (base[0] + cx) * g * g + (base[1] + cy) * g + base[2] + cz
                    out[row] += weight * grid[cell]
    return out


def test_trilinear_sample_matches_naive_loops():
    rng = np.random.default_rng(20)
    grid = rng.normal(size=(27, 4))
    coords = np.vstack([rng.uniform(-0.5, 2.5, size=(10, 3)), [[0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [1.0, 2.0, 0.0]]])
    out = ops.trilinear_sample(Tensor(grid), Tensor(coords), 3).data
    assert np.abs(out - naive_trilinear(grid, coords, 3)).max() < 1e-12
    # grid nodes return their own values
    assert np.allclose(out[-3:], grid[[0, 26, 15]], atol=1e-15)


def test_trilinear_sample_gradients():
    rng = np.random.default_rng(21)
    grid = random_tensor(rng, 8, 3)
    coords = Tensor(rng.uniform(0.1, 0.9, size=(5, 3)), requires_grad=True)
    w = rng.normal(size=(5, 3))
    assert check(lambda: weighted(ops.trilinear_sample(grid, coords, 2), w), [grid, coords]) < TOLERANCE


def test_trilinear_sample_clamps_outside_points():
    grid = Tensor(np.arange(8.0).reshape(8, 1))
    coords = Tensor(np.array([[-1.0, 0.0, 0.0]]), requires_grad=True)
    out = ops.trilinear_sample(grid, coords, 2)
    assert out.data[0, 0] == 0.0
    ops.sum(out).backward()
    assert np.array_equal(coords.grad, np.zeros((1, 3)))


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteError) as excinfo:
        Tensor(np.array([np.inf]), name='votes')
    assert 'votes' in str(excinfo.value)
    with np.errstate(over='ignore'):
        with pytest.raises(NonFiniteError):
            ops.scale(Tensor(np.array([1e308])), 10.0)


def test_matmul_shape_error():
    with pytest.raises(ShapeError) as excinfo:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert '(2, 3)' in str(excinfo.value) and '(4, 2)' in str(excinfo.value)
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_backward_accumulates_on_leaves_until_zero_grad():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ops.sum(ops.mul(x, x)).backward()
    ops.sum(ops.mul(x, x)).backward()
    assert np.array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    ops.sum(x).backward()
    assert np.array_equal(x.grad, [1.0, 1.0])


def test_shared_node_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ops.mul(x, x)
    ops.sum(ops.add(y, y)).backward()
    assert np.array_equal(x.grad, [12.0])


def test_knn_indices():
    # colinear points at 0, 1 and 3
    coords = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    assert layers.knn_indices(coords, 1)[:, 0].tolist() == [1, 0, 1]
    # the middle point is equally far from both ends, ties go to the lower index
    equal = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert layers.knn_indices(equal, 1)[:, 0].tolist() == [1, 0, 1]
    assert layers.knn_indices(equal, 2).tolist() == [[1, 2], [0, 2], [1, 0]]


def test_knn_matches_brute_force():
    rng = np.random.default_rng(22)
    coords = rng.normal(size=(15, 3))
    result = layers.knn_indices(coords, 4)
    for i in range(15):
        order = sorted((j for j in range(15) if j != i), key=lambda j: (np.sum((coords[i] - coords[j]) ** 2), j))
        assert result[i].tolist() == order[:4]


@pytest.mark.parametrize("k", [0, 3, 4])
def test_knn_rejects_bad_k(k):
    with pytest.raises(InvalidArgument):
        layers.knn_indices(np.zeros((3, 3)), k)


def naive_edge_conv(state, name, features, coords, k, widths):
    out = np.zeros((features.shape[0], widths[-1]))
    for i in range(features.shape[0]):
        order = sorted((j for j in range(len(coords)) if j != i),
                       key=lambda j: (np.sum((coords[i] - coords[j]) ** 2), j))[:k]
        best = None
        for j in order:
            h = np.concatenate([features[i], features[j] - features[i]])
            for layer in range(len(widths)):
                prefix = '%s.%d' % (name, layer)
                h = np.maximum(h @ state[prefix + '.weight'] + state[prefix + '.bias'], 0.0)
            best = h if best is None else np.maximum(best, h)
        out[i] = best
    return out


def test_edge_conv_matches_naive_loops():
    rng = np.random.default_rng(23)
    features, coords = rng.normal(size=(9, 3)), rng.normal(size=(9, 3))
    params = Parameters(seed=4)
    out = layers.edge_conv(params, 'edge', Tensor(features), coords, 3, [5, 4]).data
    expected = naive_edge_conv(params.state(), 'edge', features, coords, 3, [5, 4])
    assert np.abs(out - expected).max() < 1e-12


def test_edge_conv_with_identical_features():
    rng = np.random.default_rng(24)
    features = np.tile(rng.normal(size=(1, 3)), (6, 1))
    params = Parameters(seed=0)
    first = layers.edge_conv(params, 'edge', Tensor(features), rng.normal(size=(6, 3)), 2, [4]).data
    second = layers.edge_conv(params, 'edge', Tensor(features), rng.normal(size=(6, 3)), 2, [4]).data
    assert np.array_equal(first, second)
    assert np.all(first == first[0])


def test_edge_conv_gradients():
    rng = np.random.default_rng(25)
    features = random_tensor(rng, 7, 3)
    coords = rng.normal(size=(7, 3))
    params = Parameters(seed=1)
    w = rng.normal(size=(7, 4))
    fn = lambda: weighted(layers.edge_conv(params, 'edge', features, coords, 3, [4]), w)  # noqa: E731
    fn()
    assert check(fn, [features, params['edge.0.weight'], params['edge.0.bias']]) < TOLERANCE


def test_edge_conv_errors():
    params = Parameters()
    with pytest.raises(InvalidArgument):
        layers.edge_conv(params, 'edge', Tensor(np.zeros((3, 2))), np.zeros((3, 3)), 3, [4])
    with pytest.raises(ShapeError):
        layers.edge_conv(params, 'edge', Tensor(np.zeros((4, 2))), np.zeros((3, 3)), 1, [4])
