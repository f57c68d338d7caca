"""Variance-preserving forward diffusion with a linear noise rate.

The forward SDE ``dX = -0.5 * beta(t) * X dt + sqrt(beta(t)) dW`` on
``t in [0, 1]`` has the closed-form marginal

    X_t | X_0 ~ N(alpha(t) * X_0, lambda_var(t) * I)

with ``alpha(t) = exp(-0.5 * B(t))``, ``lambda_var(t) = 1 - exp(-B(t))`` and
``B(t)`` the integral of ``beta`` over ``[0, t]``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_points, check_time, time_column
from .exceptions import ShapeError, SingularityError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear rate ``beta(t) = beta0 + (beta1 - beta0) * t`` on ``[0, horizon]``.

    Every method accepts a scalar time or an array of times and returns a
    result of matching shape.
    """

    beta0: float = 0.05
    beta1: float = 20.0
    horizon: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.beta0) and self.beta0 > 0):
            raise ValidationError(f"beta0 must be positive, got {self.beta0}")
        if not (np.isfinite(self.beta1) and self.beta1 >= self.beta0):
            raise ValidationError(
                f"beta1 must be >= beta0, got beta0={self.beta0}, beta1={self.beta1}"
            )
        if self.horizon != 1.0:
            raise ValidationError("the continuous horizon is fixed at T = 1")

    def beta_at(self, t):
        t = check_time(t, self.horizon)
        return self.beta0 + (self.beta1 - self.beta0) * t

    def beta_integral(self, t):
        t = check_time(t, self.horizon)
        return self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t

    def alpha(self, t):
        """Signal scale ``exp(-0.5 * integral of beta)``."""
        return np.exp(-0.5 * self.beta_integral(t))

    def lambda_var(self, t):
        """Marginal noise variance ``1 - exp(-integral of beta)``."""
        # expm1 keeps precision near t = 0, where the variance is tiny
        return -np.expm1(-self.beta_integral(t))

    def forward_sample(self, x0, t, eps):
        """Draw ``X_t`` given ``X_0`` using a caller-supplied standard normal ``eps``."""
        x0 = as_points(x0, name="x0")
        eps = as_points(eps, name="eps")
        if x0.shape != eps.shape:
            raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
        t = time_column(t, x0)
        return self.alpha(t) * x0 + np.sqrt(self.lambda_var(t)) * eps

    def score_target(self, eps, t):
        """Conditional score ``-eps / lambda_var(t)`` of ``X_t`` given ``X_0``."""
        eps = as_points(eps, name="eps")
        t = time_column(t, eps)
        lam = self.lambda_var(t)
        if np.any(lam <= 0.0):
            raise SingularityError("score target is undefined where lambda_var(t) = 0")
        return -eps / lam
