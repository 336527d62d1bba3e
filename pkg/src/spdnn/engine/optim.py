"""Nesterov momentum update.

The stored parameters are the lookahead point, so the gradient computed by
the caller is already the lookahead gradient.  The frozen update is

    v   <-  mu * v - lr * g
    p   <-  p + mu * v - lr * g     (with the updated v)

which reduces to plain gradient descent for mu = 0.
"""

from __future__ import annotations

import numpy as np

from .network import NumericError


def nesterov_step(params, velocities, grads, learning_rate, momentum):
    """Apply one update in place to every parameter tensor."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key}")
        v = velocities[key]
        v *= momentum
        v -= learning_rate * g
        p += momentum * v - learning_rate * g
