"""
Differentiable primitives. Each op computes its value with numpy and, when
any input requires a gradient, records a closure that pushes the output
gradient back into its inputs.
"""
import functools
import math

import numpy as np

from nncore.exceptions import InvalidArgument, ShapeError
from nncore.tensor import Tensor, constant


def _result(data, inputs, backward, name=None):
    requires_grad = any(t.requires_grad for t in inputs)
    if not requires_grad:
        return Tensor(data, name=name)
    return Tensor(data, requires_grad=True, parents=tuple(inputs), backward=backward, name=name)


def _accumulate(tensor, grad):
    if tensor.requires_grad:
        tensor.grad += grad


def _scatter_rows(target, indices, values):
    """target[indices] += values, rows with a repeated index summed."""
    if indices.size == 0:
        return
    order = np.argsort(indices, kind='stable')
    ordered = indices[order]
    starts = np.flatnonzero(np.concatenate([[True], ordered[1:] != ordered[:-1]]))
    target[ordered[starts]] += np.add.reduceat(values[order], starts, axis=0)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError('%s: shapes %r and %r do not broadcast' % (op, a.shape, b.shape))


def add(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, 'add')

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))
    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, 'sub')

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, -_unbroadcast(grad, b.shape))
    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, 'mul')

    def backward(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.shape))
    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, 'div')
    if np.any(b.data == 0):
        raise InvalidArgument('div: division by zero')

    def backward(grad):
        _accumulate(a, _unbroadcast(grad / b.data, a.shape))
        _accumulate(b, _unbroadcast(-grad * a.data / b.data ** 2, b.shape))
    return _result(a.data / b.data, (a, b), backward)


def scale(a, factor):
    factor = float(factor)

    def backward(grad):
        _accumulate(a, grad * factor)
    return _result(a.data * factor, (a,), backward)


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul: shapes %r and %r are not aligned' % (a.shape, b.shape))

    def backward(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)
    return _result(a.data @ b.data, (a, b), backward)


def transpose(a):
    def backward(grad):
        _accumulate(a, grad.T)
    return _result(a.data.T, (a,), backward)


def relu(a):
    def backward(grad):
        _accumulate(a, grad * (a.data > 0))
    return _result(np.maximum(a.data, 0.0), (a,), backward)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def sigmoid(a):
    value = _sigmoid(a.data)

    def backward(grad):
        _accumulate(a, grad * value * (1.0 - value))
    return _result(value, (a,), backward)


def softmax(a):
    """Row-wise softmax of a 2D tensor."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=1, keepdims=True)

    def backward(grad):
        _accumulate(a, value * (grad - np.sum(grad * value, axis=1, keepdims=True)))
    return _result(value, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalise every row to zero mean and unit variance, then scale and shift."""
    mean = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    normed = centered * inv_std
    width = a.shape[1]

    def backward(grad):
        _accumulate(gamma, _unbroadcast(grad * normed, gamma.shape))
        _accumulate(beta, _unbroadcast(grad, beta.shape))
        if a.requires_grad:
            g = grad * gamma.data
            a.grad += inv_std / width * (width * g - g.sum(axis=1, keepdims=True)
                                         - normed * np.sum(g * normed, axis=1, keepdims=True))
    return _result(normed * gamma.data + beta.data, (a, gamma, beta), backward)


def concat(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat: shapes %s do not line up on axis %d' % ([t.shape for t in tensors], axis))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(grad):
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, np.take(grad, np.arange(start, stop), axis=axis))
    return _result(value, tensors, backward)


def gather_rows(a, indices):
    indices = np.asarray(indices, dtype=np.int64)

    def backward(grad):
        if a.requires_grad:
            _scatter_rows(a.grad, indices, grad)
    return _result(a.data[indices], (a,), backward)


def columns(a, start, stop):
    """Columns start:stop of a 2D tensor."""
    def backward(grad):
        if a.requires_grad:
            a.grad[:, start:stop] += grad
    return _result(a.data[:, start:stop], (a,), backward)


def group_max(a, group_size):
    """
    Max over consecutive groups of rows: (n * g, F) -> (n, F). The gradient
    goes to the first maximal row of every group.
    """
    rows, width = a.shape
    if group_size < 1 or rows % group_size:
        raise ShapeError('group_max: %d rows do not split into groups of %d' % (rows, group_size))
    grouped = a.data.reshape(rows // group_size, group_size, width)
    winner = grouped.argmax(axis=1)
    value = np.take_along_axis(grouped, winner[:, None, :], axis=1)[:, 0, :]

    def backward(grad):
        if a.requires_grad:
            full = np.zeros_like(grouped)
            np.put_along_axis(full, winner[:, None, :], grad[:, None, :], axis=1)
            a.grad += full.reshape(rows, width)
    return _result(value, (a,), backward)


def sum(a, axis=None):
    """Sum of all elements, or of every row (axis=1) / column (axis=0) keeping two dimensions."""
    if axis is None:
        value = np.array(a.data.sum())
    else:
        value = a.data.sum(axis=axis, keepdims=True)

    def backward(grad):
        _accumulate(a, np.broadcast_to(grad, a.shape))
    return _result(value, (a,), backward)


def mean(a):
    count = a.size

    def backward(grad):
        _accumulate(a, np.broadcast_to(grad / count, a.shape))
    return _result(np.array(a.data.mean()), (a,), backward)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy between logits and 0/1 targets."""
    targets = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    x = logits.data
    value = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    count = x.size

    def backward(grad):
        _accumulate(logits, grad * (_sigmoid(x) - targets) / count)
    return _result(np.array(value.mean()), (logits,), backward)


def mse(pred, target):
    target = np.asarray(target, dtype=np.float64)
    diff = pred.data - target
    count = diff.size

    def backward(grad):
        _accumulate(pred, grad * 2.0 * diff / count)
    return _result(np.array(np.mean(diff ** 2)), (pred,), backward)


def smooth_l1(pred, target, beta=1.0):
    target = np.asarray(target, dtype=np.float64)
    diff = pred.data - target
    small = np.abs(diff) < beta
    value = np.where(small, 0.5 * diff ** 2 / beta, np.abs(diff) - 0.5 * beta)
    count = diff.size

    def backward(grad):
        _accumulate(pred, grad * np.where(small, diff / beta, np.sign(diff)) / count)
    return _result(np.array(value.mean()), (pred,), backward)


def attention(q, k, v):
    """softmax(q kᵀ / sqrt(d)) v, built from primitives."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError('attention: expected 2D inputs, got %r, %r, %r' % (q.shape, k.shape, v.shape))
    if q.shape[1] != k.shape[1]:
        raise ShapeError('attention: query width %r does not match key width %r' % (q.shape, k.shape))
    if k.shape[0] != v.shape[0]:
        raise ShapeError('attention: %r keys but %r values' % (k.shape, v.shape))
    weights = softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1])))
    return matmul(weights, v)


def conv1d(x, weight, bias):
    """
    Zero-padded 'same' convolution along the row axis.
    x: (D, C_in), weight: (width, C_in, C_out) with odd width, bias: (C_out,).
    """
    width, c_in, c_out = weight.shape
    if width % 2 == 0:
        raise InvalidArgument('conv1d kernel width must be odd, got %d' % width)
    if x.shape[1] != c_in:
        raise ShapeError('conv1d: input %r does not match kernel %r' % (x.shape, weight.shape))
    rows = x.shape[0]
    half = width // 2
    padded = np.zeros((rows + 2 * half, c_in))
    padded[half:half + rows] = x.data
    value = bias.data + np.sum([padded[o:o + rows] @ weight.data[o] for o in range(width)], axis=0)

    def backward(grad):
        _accumulate(bias, grad.sum(axis=0))
        if weight.requires_grad:
            for o in range(width):
                weight.grad[o] += padded[o:o + rows].T @ grad
        if x.requires_grad:
            padded_grad = np.zeros_like(padded)
            for o in range(width):
                padded_grad[o:o + rows] += grad @ weight.data[o].T
            x.grad += padded_grad[half:half + rows]
    return _result(value, (x, weight, bias), backward)


@functools.lru_cache(maxsize=8)
def grid_neighbours(grid_size):
    """
    For every cell of a grid_size³ grid (x slowest) and each of the 27 offsets
    of a 3x3x3 stencil, the flat index of the neighbour cell or grid_size³
    when it falls off the grid.
    """
    g = grid_size
    cells = np.arange(g ** 3)
    ix, iy, iz = cells // (g * g), (cells // g) % g, cells % g
    table = np.empty((27, g ** 3), dtype=np.int64)
    offset = 0
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                nx, ny, nz = ix + dx, iy + dy, iz + dz
                inside = (nx >= 0) & (nx < g) & (ny >= 0) & (ny < g) & (nz >= 0) & (nz < g)
                table[offset] = np.where(inside, nx * g * g + ny * g + nz, g ** 3)
                offset += 1
    table.flags.writeable = False
    return table


def conv3d(grid, weight, bias, grid_size):
    """
    One zero-padded 3x3x3 convolution over a flattened grid.
    grid: (G³, C_in), weight: (27, C_in, C_out), bias: (C_out,).
    """
    cells = grid_size ** 3
    if grid.shape[0] != cells or weight.shape[:2] != (27, grid.shape[1]):
        raise ShapeError('conv3d: grid %r does not match kernel %r for G=%d' % (grid.shape, weight.shape, grid_size))
    table = grid_neighbours(grid_size)
    extended = np.vstack([grid.data, np.zeros((1, grid.shape[1]))])
    value = bias.data + np.sum([extended[table[o]] @ weight.data[o] for o in range(27)], axis=0)

    def backward(grad):
        _accumulate(bias, grad.sum(axis=0))
        if weight.requires_grad:
            for o in range(27):
                weight.grad[o] += extended[table[o]].T @ grad
        if grid.requires_grad:
            # the cell reading c through offset o is c's neighbour at the mirrored offset 26 - o
            extended_grad = np.vstack([grad, np.zeros((1, grad.shape[1]))])
            grid.grad += np.sum([extended_grad[table[26 - o]] @ weight.data[o].T for o in range(27)], axis=0)
    return _result(value, (grid, weight, bias), backward)


def scatter_mean(features, cells, cell_count):
    """Average the rows of `features` falling into each cell; empty cells are zero."""
    cells = np.asarray(cells, dtype=np.int64)
    counts = np.bincount(cells, minlength=cell_count).astype(np.float64)
    value = np.zeros((cell_count, features.shape[1]))
    _scatter_rows(value, cells, features.data)
    occupied = counts > 0
    value[occupied] /= counts[occupied, None]

    def backward(grad):
        if features.requires_grad:
            features.grad += grad[cells] / counts[cells, None]
    return _result(value, (features,), backward)


def trilinear_sample(grid, coords, grid_size):
    """
    Trilinear interpolation of a flattened (G³, C) grid at continuous cell
    coordinates (D, 3), clamped to [0, G-1]. Differentiable in both the grid
    values and the coordinates inside the grid.
    """
    g = grid_size
    raw = coords.data
    u = np.clip(raw, 0.0, g - 1.0)
    inside = (raw >= 0.0) & (raw <= g - 1.0)
    base = np.minimum(np.floor(u), max(g - 2, 0)).astype(np.int64)
    frac = u - base

    corners = []
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                corner = np.array([cx, cy, cz])
                idx = base + corner if g > 1 else base
                flat = idx[:, 0] * g * g + idx[:, 1] * g + idx[:, 2]
                factors = np.where(corner == 1, frac, 1.0 - frac)
                corners.append((corner, flat, factors))

    value = np.zeros((raw.shape[0], grid.shape[1]))
    for corner, flat, factors in corners:
        value += grid.data[flat] * factors.prod(axis=1, keepdims=True)

    def backward(grad):
        if grid.requires_grad:
            for corner, flat, factors in corners:
                _scatter_rows(grid.grad, flat, grad * factors.prod(axis=1, keepdims=True))
        if coords.requires_grad:
            dcoords = np.zeros_like(raw)
            for corner, flat, factors in corners:
                projected = np.sum(grad * grid.data[flat], axis=1)
                for axis in range(3):
                    others = np.prod(np.delete(factors, axis, axis=1), axis=1)
                    sign = 1.0 if corner[axis] == 1 else -1.0
                    dcoords[:, axis] += projected * others * sign
            coords.grad += dcoords * inside
    return _result(value, (grid, coords), backward)
