"""Plain SGD parameter update."""

import numpy as np


def sgd_step(params, grads, learning_rate, velocity=None, momentum=0.0):
    """In-place p <- p - lr*g for every named parameter; returns params.

    With momentum > 0 a velocity dict (same keys) carries the running update;
    momentum 0 is ordinary gradient descent.
    """
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if momentum > 0.0:
            v = velocity[name]
            np.multiply(v, momentum, out=v)
            v -= learning_rate * g
            p += v
        else:
            p -= learning_rate * g
    return params
