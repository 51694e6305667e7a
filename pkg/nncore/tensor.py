import numpy as np

from nncore.exceptions import NonFiniteError


class Tensor:
    """
    A dense float64 array with an optional gradient and the tape links that
    produced it. Every tensor is checked for non-finite values on creation.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError('non-finite value in %s' % (name or 'tensor of shape %r' % (data.shape,)))
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return 'Tensor(%s%r%s)' % ('%s, ' % self.name if self.name else '', self.shape,
                                   ', requires_grad' if self.requires_grad else '')

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        from nncore import ops
        return ops.transpose(self)

    def __add__(self, other):
        from nncore import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from nncore import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from nncore import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from nncore import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from nncore import ops
        return ops.matmul(self, other)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """
        Reverse pass from this tensor. Interior gradients are recomputed from
        scratch; leaf gradients accumulate until zero_grad.
        """
        order = _topological_order(self)
        for node in order:
            if node._backward is not None or node.grad is None:
                node.grad = np.zeros_like(node.data)
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        self.grad = self.grad + seed
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def constant(data):
    return data if isinstance(data, Tensor) else Tensor(data)
