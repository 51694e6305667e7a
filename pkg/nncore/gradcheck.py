import numpy as np

from nncore.exceptions import InvalidArgument


def grad_check(fn, inputs, epsilon=1e-6, max_checks=None, seed=0, floor=1e-8):
    """
    Compare tape gradients of the scalar fn() with respect to `inputs`
    against central finite differences and return the largest relative
    error, |a - n| / max(|a|, |n|, floor).

    With max_checks only a seeded random subset of that many elements is
    perturbed.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise InvalidArgument('epsilon must lie in [1e-7, 1e-3], got %r' % (epsilon,))
    for tensor in inputs:
        tensor.data = np.ascontiguousarray(tensor.data)
        tensor.requires_grad = True
        tensor.grad = None
    fn().backward()
    analytic = [tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data) for tensor in inputs]

    elements = [(i, flat) for i, tensor in enumerate(inputs) for flat in range(tensor.size)]
    if max_checks is not None and max_checks < len(elements):
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(elements), size=max_checks, replace=False))
        elements = [elements[c] for c in chosen]

    worst = 0.0
    for i, flat in elements:
        data = inputs[i].data.reshape(-1)
        original = data[flat]
        data[flat] = original + epsilon
        upper = fn().item()
        data[flat] = original - epsilon
        lower = fn().item()
        data[flat] = original
        numeric = (upper - lower) / (2.0 * epsilon)
        a = analytic[i].reshape(-1)[flat]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
