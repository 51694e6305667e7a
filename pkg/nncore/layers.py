import math
import zlib
from collections import OrderedDict

import numpy as np

from nncore import ops
from nncore.exceptions import InvalidArgument, ShapeError
from nncore.tensor import Tensor


class Parameters:
    """
    Named trainable tensors, created on first use.

    Each tensor is initialised from its own stream seeded by (seed, name), so
    values do not depend on the order in which layers ask for them.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._tensors = OrderedDict()

    def __contains__(self, name):
        return name in self._tensors

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return sorted(self._tensors)

    def items(self):
        return [(name, self._tensors[name]) for name in self.names()]

    def get(self, name, shape, fan_in=None, init='uniform'):
        shape = tuple(int(s) for s in shape)
        if name in self._tensors:
            tensor = self._tensors[name]
            if tensor.shape != shape:
                raise ShapeError('parameter %s exists with shape %r, requested %r' % (name, tensor.shape, shape))
            return tensor
        if init == 'zeros':
            data = np.zeros(shape)
        elif init == 'ones':
            data = np.ones(shape)
        elif init == 'uniform':
            bound = math.sqrt(1.0 / (fan_in or shape[0]))
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode('utf8'))])
            data = rng.uniform(-bound, bound, size=shape)
        else:
            raise InvalidArgument('unknown initialisation %r' % (init,))
        tensor = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def add(self, name, data):
        self._tensors[name] = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        return self._tensors[name]

    def zero_grad(self):
        for tensor in self._tensors.values():
            tensor.grad = None

    def frozen(self):
        """A copy whose tensors record no tape, for inference."""
        copy = Parameters(seed=self.seed)
        for name in self.names():
            copy._tensors[name] = Tensor(self._tensors[name].data.copy(), name=name)
        return copy

    def num_values(self):
        return int(sum(t.size for t in self._tensors.values()))

    def state(self):
        return OrderedDict((name, self._tensors[name].data.copy()) for name in self.names())


def linear(params, name, x, out_features, bias=True, init='uniform'):
    in_features = x.shape[1]
    weight = params.get(name + '.weight', (in_features, out_features), fan_in=in_features, init=init)
    out = ops.matmul(x, weight)
    if bias:
        out = ops.add(out, params.get(name + '.bias', (out_features,), fan_in=in_features, init=init))
    return out


def mlp(params, name, x, widths, final_activation=False):
    """Shared MLP over rows: linear layers with ReLU between them."""
    for layer, width in enumerate(widths):
        x = linear(params, '%s.%d' % (name, layer), x, width)
        if layer < len(widths) - 1 or final_activation:
            x = ops.relu(x)
    return x


def layer_norm(params, name, x):
    width = x.shape[1]
    gamma = params.get(name + '.gamma', (width,), init='ones')
    beta = params.get(name + '.beta', (width,), init='zeros')
    return ops.layer_norm(x, gamma, beta)


def knn_indices(coords, k):
    """
    The k nearest other points of every point by Euclidean distance, ties to
    the lower index. coords is an (n, 3) array.
    """
    coords = np.asarray(coords, dtype=np.float64)
    count = coords.shape[0]
    if not 1 <= k < count:
        raise InvalidArgument('kNN needs 1 <= k < number of points, got k=%d for %d points' % (k, count))
    distance = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(distance, np.inf)
    return np.argsort(distance, axis=1, kind='stable')[:, :k]


def edge_conv(params, name, features, coords, k, widths):
    """
    EdgeConv: for every point, edge features concat(f_i, f_j - f_i) over its k
    nearest neighbours in coordinate space go through a shared MLP and are
    max-pooled over the neighbours.
    """
    if hasattr(coords, 'points'):
        coords = coords.points
    if features.shape[0] != np.asarray(coords).shape[0]:
        raise ShapeError('edge_conv: %d feature rows for %d points' % (features.shape[0], len(coords)))
    neighbours = knn_indices(coords, k)
    count = features.shape[0]
    centre = ops.gather_rows(features, np.repeat(np.arange(count), k))
    other = ops.gather_rows(features, neighbours.reshape(-1))
    edges = ops.concat([centre, ops.sub(other, centre)], axis=1)
    return ops.group_max(mlp(params, name, edges, widths, final_activation=True), k)


def conv1d(params, name, x, out_features, width=1):
    in_features = x.shape[1]
    weight = params.get(name + '.weight', (width, in_features, out_features), fan_in=width * in_features)
    bias = params.get(name + '.bias', (out_features,), fan_in=width * in_features)
    return ops.conv1d(x, weight, bias)


def conv3d(params, name, grid, grid_size, out_features, init='uniform'):
    in_features = grid.shape[1]
    weight = params.get(name + '.weight', (27, in_features, out_features), fan_in=27 * in_features, init=init)
    bias = params.get(name + '.bias', (out_features,), fan_in=27 * in_features, init=init)
    return ops.conv3d(grid, weight, bias, grid_size)
