"""Tanh-squashed diagonal Gaussian with reparameterized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# tanh rounds to exactly +-1 for |u| > ~19 in float64
_ACTION_LIMIT = np.nextafter(1.0, 0.0)


@dataclass
class SquashedGaussian:
    """Distribution over ``(-1, 1)^d``; arrays may carry a leading batch axis.

    ``raw_log_std`` keeps the unclamped head output so gradients can be
    zeroed where the clamp is active.
    """

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.raw_log_std = np.asarray(self.log_std, dtype=np.float64)
        self.log_std = np.clip(self.raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape != self.log_std.shape:
            raise ValueError(f"mean shape {self.mean.shape} != log_std shape {self.log_std.shape}")

    @classmethod
    def from_head(cls, head: np.ndarray) -> "SquashedGaussian":
        """Split a network output ``mean || log_std`` along the last axis."""
        d = head.shape[-1] // 2
        return cls(head[..., :d], head[..., d:])

    @property
    def action_dim(self) -> int:
        return self.mean.shape[-1]


def sample_squashed(dist: SquashedGaussian, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(tanh(u), log_prob)`` with ``u = mean + exp(log_std) * noise``.

    ``log_prob`` sums over the action axis, so it has the batch shape.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != dist.mean.shape:
        raise ValueError(f"noise shape {noise.shape} != action shape {dist.mean.shape}")
    u = dist.mean + np.exp(dist.log_std) * noise
    action = np.clip(np.tanh(u), -_ACTION_LIMIT, _ACTION_LIMIT)
    gauss = -0.5 * noise**2 - dist.log_std - _HALF_LOG_2PI
    log_prob = np.sum(gauss - np.log(1.0 - action**2 + TANH_EPS), axis=-1)
    return action, log_prob


def sample_squashed_backward(
    dist: SquashedGaussian,
    noise: np.ndarray,
    grad_action: np.ndarray | None,
    grad_log_prob: np.ndarray | float | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull gradients on ``(action, log_prob)`` back to ``(mean, raw_log_std)``.

    Noise is held fixed (reparameterization).
    """
    noise = np.asarray(noise, dtype=np.float64)
    std = np.exp(dist.log_std)
    action = np.tanh(dist.mean + std * noise)
    one_minus = 1.0 - action**2
    du = np.zeros_like(dist.mean)
    dlog_std = np.zeros_like(dist.mean)
    if grad_action is not None:
        du += np.asarray(grad_action) * one_minus
    if grad_log_prob is not None:
        gl = np.asarray(grad_log_prob, dtype=np.float64)[..., None]
        du += gl * (2.0 * action * one_minus / (one_minus + TANH_EPS))
        dlog_std -= gl
    grad_mean = du
    grad_log_std = dlog_std + du * std * noise
    inside = (dist.raw_log_std >= LOG_STD_MIN) & (dist.raw_log_std <= LOG_STD_MAX)
    return grad_mean, grad_log_std * inside


def deterministic_action(dist: SquashedGaussian) -> np.ndarray:
    return np.clip(np.tanh(dist.mean), -_ACTION_LIMIT, _ACTION_LIMIT)
