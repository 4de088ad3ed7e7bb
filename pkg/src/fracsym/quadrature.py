"""Log-spaced quadrature for semigroup-time integrals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QuadratureSpec", "TruncationError"]


class TruncationError(RuntimeError):
    """The declared t-grid cannot reach the requested tolerance.

    Carries the estimated relative truncation error in ``estimate``.
    """

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = float(estimate)


@dataclass(frozen=True)
class QuadratureSpec:
    """Log-trapezoid rule on [t_min, t_max] with ``nodes`` points."""

    t_min: float
    t_max: float
    nodes: int
    rtol: float = 1e-3

    def __post_init__(self):
        if not (0 < self.t_min < self.t_max):
            raise ValueError("need 0 < t_min < t_max")
        if self.nodes < 2:
            raise ValueError("need at least 2 nodes")

    def nodes_weights(self):
        """Nodes t_k and weights w_k with sum_k w_k f(t_k) ~ int f dt."""
        tau = np.linspace(np.log(self.t_min), np.log(self.t_max), self.nodes)
        t = np.exp(tau)
        w = t * (tau[1] - tau[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return t, w
