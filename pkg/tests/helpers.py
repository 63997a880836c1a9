import numpy as np

from nclp.autodiff import ParamSet, Tape, Tensor, gradient_relative_error, numerical_gradient


def param(rng, shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def grad_error(build, params: ParamSet, step=1e-4) -> float:
    """Relative error between tape gradients and central differences.

    ``build(tape)`` must return a scalar Tensor computed from ``params``.
    """
    params.zero_grad()
    tape = Tape()
    tape.backward(build(tape))
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    numeric = numerical_gradient(lambda: build(Tape(enabled=False)).item(), params, step)
    return gradient_relative_error(analytic, numeric)


def weighted_sum(tape: Tape, t: Tensor, rng) -> Tensor:
    """Scalar ``sum(R * t)`` with a fixed random R, so every entry matters."""
    return tape.sum(tape.mul_const(t, rng.normal(size=t.shape)))
