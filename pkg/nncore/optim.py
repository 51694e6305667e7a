import numpy as np


class Adam:
    """Adaptive moment estimation over a Parameters collection."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self._first = {}
        self._second = {}

    def step(self):
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            grad = tensor.grad
            m = self._first.get(name, np.zeros_like(grad))
            v = self._second.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self._first[name], self._second[name] = m, v
            tensor.data = tensor.data - self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def zero_grad(self):
        self.params.zero_grad()
