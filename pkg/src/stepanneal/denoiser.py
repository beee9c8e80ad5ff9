"""Denoiser interface and conversions between its three parameterizations.

A denoiser exposes noise prediction (eps), score, and velocity for a given
conditional context.  The three are interchangeable:

* diffusion level ``a`` (alpha-bar):  ``eps = -sqrt(1 - a) * score``
* flow time ``t``:                    ``eps = -t * score``
* flow velocity:                      ``v * (1 - t) = -(x + t * score)``

The velocity relation follows from the linear interpolation
``x_t = (1-t) x0 + t eps`` and the two posterior means satisfying
``(1-t) E[x0|x] + t E[eps|x] = x``: with ``E[eps|x] = -t * score`` one gets
``E[x0|x] = x - t v`` and ``E[eps|x] = x + (1-t) v``.

Samplers call an oracle with the conditional context passed through, so the
exact-process oracle below stays stateless; call counting lives in the
sampler's trajectory record.
"""

from __future__ import annotations

import numpy as np

from .process import (
    ConditionalGaussian,
    exact_eps,
    exact_score,
    exact_velocity,
    exact_x0_diffusion,
    flow_score,
)

_LIMIT_EPS = 1e-12


# -- conversions (diffusion domain, level = alpha-bar) ----------------------


def eps_from_score(score: np.ndarray, alpha_bar: float) -> np.ndarray:
    return -np.sqrt(1.0 - alpha_bar) * np.asarray(score)


def score_from_eps(eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    if 1.0 - alpha_bar < _LIMIT_EPS:
        raise ValueError("alpha_bar: score conversion undefined at alpha_bar = 1")
    return -np.asarray(eps) / np.sqrt(1.0 - alpha_bar)


# -- conversions (flow domain, time t in [0, 1]) ----------------------------


def velocity_from_flow_score(
    score: np.ndarray, x_t: np.ndarray, t: float
) -> np.ndarray:
    if 1.0 - t < _LIMIT_EPS:
        raise ValueError("t: velocity conversion undefined at t = 1")
    return -(np.asarray(x_t) + t * np.asarray(score)) / (1.0 - t)


def flow_score_from_velocity(
    velocity: np.ndarray, x_t: np.ndarray, t: float
) -> np.ndarray:
    if t < _LIMIT_EPS:
        raise ValueError("t: score conversion undefined at t = 0")
    return -(np.asarray(x_t) + (1.0 - t) * np.asarray(velocity)) / t


def eps_from_velocity(velocity: np.ndarray, x_t: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(x_t) + (1.0 - t) * np.asarray(velocity)


def velocity_from_eps(eps: np.ndarray, x_t: np.ndarray, t: float) -> np.ndarray:
    if 1.0 - t < _LIMIT_EPS:
        raise ValueError("t: velocity conversion undefined at t = 1")
    return (np.asarray(eps) - np.asarray(x_t)) / (1.0 - t)


class ExactDenoiser:
    """Denoiser backed by the closed-form conditional Gaussian process.

    Every method takes the conditional context explicitly and accepts states
    of shape (m, d) or (batch, m, d).  ``native_parameterization`` is
    "score"; the other outputs are exact posterior means rather than chained
    conversions, so all conversion identities can be cross-checked against
    this class.
    """

    native_parameterization = "score"

    def epsilon(
        self, x: np.ndarray, alpha_bar: float, cond: ConditionalGaussian
    ) -> np.ndarray:
        return exact_eps(cond, x, alpha_bar)

    def score(
        self, x: np.ndarray, alpha_bar: float, cond: ConditionalGaussian
    ) -> np.ndarray:
        return exact_score(cond, x, alpha_bar)

    def x0(
        self, x: np.ndarray, alpha_bar: float, cond: ConditionalGaussian
    ) -> np.ndarray:
        return exact_x0_diffusion(cond, x, alpha_bar)

    def velocity(
        self, x: np.ndarray, t: float, cond: ConditionalGaussian
    ) -> np.ndarray:
        return exact_velocity(cond, x, t)

    def flow_score(
        self, x: np.ndarray, t: float, cond: ConditionalGaussian
    ) -> np.ndarray:
        return flow_score(cond, x, t)

    def velocity_and_flow_score(
        self, x: np.ndarray, t: float, cond: ConditionalGaussian
    ) -> tuple[np.ndarray, np.ndarray]:
        """Both flow quantities from one call (one denoiser evaluation)."""
        if t < _LIMIT_EPS or 1.0 - t < _LIMIT_EPS:
            return exact_velocity(cond, x, t), flow_score(cond, x, t)
        score = flow_score(cond, x, t)
        return velocity_from_flow_score(score, x, t), score


class BiasedDenoiser(ExactDenoiser):
    """Exact denoiser with a constant bias added to the score.

    Negative control for oracle validation: a corrupted score must fail the
    finite-difference check.
    """

    def __init__(self, score_bias: float):
        self.score_bias = float(score_bias)

    def score(self, x, alpha_bar, cond):
        return super().score(x, alpha_bar, cond) + self.score_bias

    def epsilon(self, x, alpha_bar, cond):
        return eps_from_score(self.score(x, alpha_bar, cond), alpha_bar)
