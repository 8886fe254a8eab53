"""Coordinated-turn UE motion with a clock-bias random walk.

The deterministic part moves the planar position along a circular arc driven
by known speed and turn-rate controls, advances the heading by turn_rate*dt
and leaves the clock bias untouched; process noise is additive zero-mean
Gaussian on all four state components.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import UEState, wrap_angle

# Below this turn rate the arc is evaluated in its straight-line limit
# (the closed form divides by the turn rate).
TURN_RATE_EPS = 1e-9


@dataclass(frozen=True)
class ControlInput:
    """Known control: speed [m/s] and turn rate [rad/s]."""

    speed: float
    turn_rate: float

    def __post_init__(self):
        if not (math.isfinite(self.speed) and math.isfinite(self.turn_rate)):
            raise ValueError("control input must be finite")
        if self.speed < 0:
            raise ValueError(f"speed must be nonnegative, got {self.speed}")


class MotionNoise:
    """Process noise covariance Q (4x4 PSD) tied to a sampling interval."""

    def __init__(self, covariance, sampling_interval: float):
        Q = np.asarray(covariance, dtype=float).reshape(4, 4)
        scale = max(np.abs(Q).max(), 1.0)
        if np.abs(Q - Q.T).max() > 1e-12 * scale:
            raise ValueError("process noise covariance must be symmetric")
        eig = np.linalg.eigvalsh(Q)
        if eig.min() < -1e-15 * scale:
            raise ValueError("process noise covariance must be positive semidefinite")
        if sampling_interval <= 0:
            raise ValueError("sampling interval must be positive")
        self.covariance = Q
        self.sampling_interval = float(sampling_interval)
        # square root for sampling; PSD-safe via eigendecomposition
        w, V = np.linalg.eigh(Q)
        self._sqrt = V * np.sqrt(np.clip(w, 0.0, None))
        self._pd = eig.min() > 0
        if self._pd:
            self._inv = np.linalg.inv(Q)
            self._logdet = float(np.linalg.slogdet(Q)[1])

    @property
    def is_positive_definite(self) -> bool:
        return self._pd

    def sample(self, rng, n: int):
        """Draw n zero-mean noise vectors, shape (n, 4)."""
        return rng.standard_normal((n, 4)) @ self._sqrt.T


def propagate_mean_array(states, u: ControlInput, dt: float):
    """Deterministic coordinated-turn step for state vectors (..., 4)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(states, dtype=float)
    out = s.copy()
    v, phi = u.speed, u.turn_rate
    alpha = s[..., 2]
    if abs(phi) < TURN_RATE_EPS:
        out[..., 0] += v * dt * np.cos(alpha)
        out[..., 1] += v * dt * np.sin(alpha)
    else:
        chord = (2.0 * v / phi) * math.sin(phi * dt / 2.0)
        out[..., 0] += chord * np.cos(alpha + phi * dt / 2.0)
        out[..., 1] += chord * np.sin(alpha + phi * dt / 2.0)
    out[..., 2] = wrap_angle(alpha + phi * dt)
    return out


def propagate_mean(s: UEState, u: ControlInput, dt: float) -> UEState:
    return UEState.from_array(propagate_mean_array(s.as_array(), u, dt))


def sample_transition_array(states, u: ControlInput, noise: MotionNoise, rng):
    """Stochastic step for a batch of state vectors (N, 4)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    out = propagate_mean_array(s, u, noise.sampling_interval)
    out += noise.sample(rng, s.shape[0])
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def sample_transition(s: UEState, u: ControlInput, noise: MotionNoise, rng) -> UEState:
    return UEState.from_array(sample_transition_array(s.as_array()[None, :], u, noise, rng)[0])


def transition_logpdf(next_state: UEState, prev: UEState, u: ControlInput, noise: MotionNoise):
    """Gaussian log-density of the transition, heading residual wrapped."""
    if not noise.is_positive_definite:
        raise ValueError("transition density needs a strictly positive definite Q")
    mean = propagate_mean_array(prev.as_array(), u, noise.sampling_interval)
    r = next_state.as_array() - mean
    r[2] = wrap_angle(r[2])
    return float(-0.5 * (r @ noise._inv @ r + noise._logdet + 4 * math.log(2.0 * math.pi)))
