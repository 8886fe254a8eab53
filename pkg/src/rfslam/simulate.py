"""Seeded ground-truth generator.

Produces the UE trajectory (noisy by default, optionally the noiseless arc),
per-step measurement sets with misdetection, additive Gaussian measurement
noise and Poisson clutter, plus per-measurement origin labels kept for
diagnostics only (never handed to the filters).
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    Scenario,
    UEState,
    detection_probabilities,
    predict_measurements,
    wrap_angle,
)
from .motion import ControlInput, MotionNoise, propagate_mean, sample_transition

ORIGIN_BS = -2
ORIGIN_CLUTTER = -1


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    control: ControlInput
    motion_noise: MotionNoise
    n_steps: int
    seed: int
    initial_state: UEState
    noisy_trajectory: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")


@dataclass
class GroundTruth:
    """True states and measurement sets, one entry per step.

    origin_labels[k][i] identifies measurement i of step k: an index into
    scenario.landmarks, ORIGIN_BS for the line-of-sight path or
    ORIGIN_CLUTTER for a false alarm.
    """

    states: list = field(default_factory=list)
    measurement_sets: list = field(default_factory=list)
    origin_labels: list = field(default_factory=list)


def generate_trajectory(cfg: SimConfig, rng=None):
    """States [s_0, ..., s_{n_steps-1}] starting from the initial state."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    states = [cfg.initial_state]
    for _ in range(cfg.n_steps - 1):
        if cfg.noisy_trajectory:
            states.append(sample_transition(states[-1], cfg.control, cfg.motion_noise, rng))
        else:
            states.append(
                propagate_mean(states[-1], cfg.control, cfg.motion_noise.sampling_interval)
            )
    return states


def generate_measurements(state: UEState, sc: Scenario, rng):
    """One measurement set: detections plus clutter, randomly permuted.

    Returns (Z, labels) with Z of shape (m, 5).  Each landmark contributes at
    most one measurement (point-target model) with probability p_D; clutter
    count is Poisson with the scenario mean, each point uniform over the
    measurement space.
    """
    sv = state.as_array()
    pos = sc.landmark_positions()
    kinds = sc.landmark_kinds()
    pd = detection_probabilities(pos, kinds, sv, sc)

    detected = rng.random(len(pd)) < pd
    zs = []
    labels = []
    if detected.any():
        h, valid = predict_measurements(
            pos[detected], kinds[detected], sv, sc.ue_height, sc.bs.position
        )
        noise = rng.multivariate_normal(np.zeros(5), sc.meas_noise.covariance, size=len(h))
        z_det = (h + noise)[valid]
        z_det[:, 1] = wrap_angle(z_det[:, 1])
        z_det[:, 3] = wrap_angle(z_det[:, 3])
        zs.append(z_det)
        idx = np.flatnonzero(detected)[valid]
        labels.append(np.where(idx == 0, ORIGIN_BS, idx - 1))

    n_clutter = rng.poisson(sc.clutter_mean)
    if n_clutter > 0:
        c = np.empty((n_clutter, 5))
        c[:, 0] = rng.uniform(0.0, sc.max_range / SPEED_OF_LIGHT + sc.max_clock_bias, n_clutter)
        c[:, 1] = rng.uniform(-np.pi, np.pi, n_clutter)
        c[:, 2] = rng.uniform(-np.pi / 2, np.pi / 2, n_clutter)
        c[:, 3] = rng.uniform(-np.pi, np.pi, n_clutter)
        c[:, 4] = rng.uniform(-np.pi / 2, np.pi / 2, n_clutter)
        zs.append(c)
        labels.append(np.full(n_clutter, ORIGIN_CLUTTER))

    if not zs:
        return np.empty((0, 5)), np.empty(0, dtype=int)
    Z = np.concatenate(zs)
    lab = np.concatenate(labels).astype(int)
    perm = rng.permutation(len(Z))
    return Z[perm], lab[perm]


def generate_ground_truth(cfg: SimConfig) -> GroundTruth:
    """Trajectory plus measurements, deterministic in (cfg, seed)."""
    traj_ss, meas_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    states = generate_trajectory(cfg, np.random.default_rng(traj_ss))
    meas_rng = np.random.default_rng(meas_ss)
    gt = GroundTruth(states=states)
    for s in states:
        Z, labels = generate_measurements(s, cfg.scenario, meas_rng)
        gt.measurement_sets.append(Z)
        gt.origin_labels.append(labels)
    return gt
