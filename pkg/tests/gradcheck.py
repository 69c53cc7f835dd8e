"""Central finite-difference gradient checking shared by the nn tests and
the acceptance suite."""

import numpy as np


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def finite_diff_arrays(arrays, grads, loss_fn, h=1e-5) -> float:
    """Max relative error between central differences and analytic grads.

    `arrays` are perturbed in place entry by entry; `grads` hold the
    analytic gradients (same shapes); `loss_fn()` recomputes the scalar
    loss from current array contents.
    """
    worst = 0.0
    for value, grad in zip(arrays, grads):
        flat_v = value.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_v.size):
            old = flat_v[i]
            flat_v[i] = old + h
            loss_plus = loss_fn()
            flat_v[i] = old - h
            loss_minus = loss_fn()
            flat_v[i] = old
            fd = (loss_plus - loss_minus) / (2.0 * h)
            worst = max(worst, rel_err(fd, flat_g[i]))
    return worst


def finite_diff_params(params, loss_fn, h=1e-5) -> float:
    """finite_diff_arrays over nn.Parameter objects (grads pre-populated)."""
    return finite_diff_arrays(
        [p.value for p in params], [p.grad.copy() for p in params], loss_fn, h
    )


def random_projection_loss(rng: np.random.Generator, shape):
    """A fixed random linear functional, so every output entry matters."""
    r = rng.normal(size=shape)
    return r, lambda out: float(np.sum(out * r))
