"""Rao-Blackwellized SIR particle filter over the UE trajectory.

Each particle carries its own trajectory-conditioned map (PHD or PMBM) plus
the birth components spawned from its own past poses.  The importance
density is the motion model, so the weight multiplier is exactly the map
filter's measurement likelihood; systematic resampling runs every step by
default.  In known-pose (mapping) mode the true state is injected, weights
stay uniform and no resampling happens, which reduces the filter to the
standalone map filter.
"""

import logging
import math
from typing import NamedTuple

import numpy as np

from .gaussian import logsumexp
from .geometry import UEState, wrap_angle
from .motion import ControlInput, MotionNoise, sample_transition_array

log = logging.getLogger(__name__)


class ParticleSet:
    """States (N, 4), normalized log weights and per-particle maps/births."""

    __slots__ = ("states", "log_w", "maps", "births")

    def __init__(self, states, log_w, maps, births):
        self.states = np.asarray(states, dtype=float)
        self.log_w = np.asarray(log_w, dtype=float)
        self.maps = list(maps)
        self.births = list(births)

    def __len__(self):
        return len(self.log_w)

    @property
    def weights(self):
        return np.exp(self.log_w)


class StepStats(NamedTuple):
    ess: float           # pre-resampling effective sample size
    estimate: UEState    # weighted posterior state estimate
    cov: np.ndarray      # (4, 4) weighted covariance (heading wrapped)
    log_evidence: float  # log mean likelihood of the step
    map_estimate: list   # extracted map of the highest-weight particle


def _gaussian_draws(mean, cov, n, rng):
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    L = V * np.sqrt(np.clip(w, 0.0, None))
    return np.asarray(mean, dtype=float) + rng.standard_normal((n, len(mean))) @ L.T


def init_particles(prior_mean: UEState, prior_cov, n: int, rng, stepper) -> ParticleSet:
    """N i.i.d. Gaussian draws with uniform weights and empty maps."""
    if n < 1:
        raise ValueError("particle count must be at least 1")
    states = _gaussian_draws(prior_mean.as_array(), prior_cov, n, rng)
    states[:, 2] = wrap_angle(states[:, 2])
    maps = [stepper.init_map() for _ in range(n)]
    births = [stepper.empty_births() for _ in range(n)]
    return ParticleSet(states, np.full(n, -math.log(n)), maps, births)


def ess(ps: ParticleSet) -> float:
    """Effective sample size 1 / sum(w^2) of the normalized weights."""
    return float(1.0 / np.sum(ps.weights**2))


def estimate_state(ps: ParticleSet):
    """Weighted mean state (circular mean for heading) and covariance."""
    w = ps.weights
    s = ps.states
    mean = np.empty(4)
    mean[0] = w @ s[:, 0]
    mean[1] = w @ s[:, 1]
    mean[2] = math.atan2(w @ np.sin(s[:, 2]), w @ np.cos(s[:, 2]))
    mean[3] = w @ s[:, 3]
    dev = s - mean
    dev[:, 2] = wrap_angle(dev[:, 2])
    cov = np.einsum("n,ni,nj->ij", w, dev, dev)
    return UEState.from_array(mean), cov


def systematic_resample(weights, rng):
    """Systematic resampling indices for normalized weights."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions).clip(max=n - 1)


def _reindex(ps: ParticleSet, idx):
    """Select particles by index, copying duplicated maps so each child owns its map."""
    maps, births = [], []
    seen = set()
    for i in idx:
        i = int(i)
        if i in seen:
            maps.append(ps.maps[i].copy())
            births.append(ps.births[i].copy())
        else:
            seen.add(i)
            maps.append(ps.maps[i])
            births.append(ps.births[i])
    n = len(idx)
    return ParticleSet(ps.states[idx].copy(), np.full(n, -math.log(n)), maps, births)


def step(
    ps: ParticleSet,
    Z,
    u: ControlInput,
    noise: MotionNoise,
    stepper,
    rng,
    resample: bool = True,
    ess_trigger: float | None = None,
    known_state=None,
    propagate: bool = True,
):
    """One filter step: propagate, update maps and weights, resample.

    known_state switches to mapping mode: every particle is moved to the
    given state, weights are left untouched and resampling is skipped.
    propagate=False updates with the current particle states (used for the
    measurement set taken at the initial pose).  With the motion model as
    importance density the weight multiplier is exactly the map filter's
    likelihood factor.
    """
    n = len(ps)
    if known_state is not None:
        states = np.tile(np.asarray(known_state, dtype=float).reshape(1, 4), (n, 1))
    elif propagate:
        states = sample_transition_array(ps.states, u, noise, rng)
    else:
        states = ps.states.copy()

    if hasattr(stepper, "step_many"):
        maps, logliks, births = stepper.step_many(ps.maps, ps.births, Z, states)
    else:
        maps, births = [], []
        logliks = np.empty(n)
        for i in range(n):
            m, ll, b = stepper.step(ps.maps[i], ps.births[i], Z, states[i])
            maps.append(m)
            births.append(b)
            logliks[i] = ll

    log_w = ps.log_w + logliks
    total = logsumexp(log_w)
    if not np.isfinite(total):
        log.warning("all particle weights vanished; resetting to uniform (divergence)")
        log_w = np.full(n, -math.log(n))
        total = 0.0
        log_evidence = -np.inf
    else:
        log_w = log_w - total
        log_evidence = float(total)  # prior weights were normalized

    out = ParticleSet(states, log_w, maps, births)
    sample_size = ess(out)
    est, cov = estimate_state(out)
    best = int(np.argmax(log_w))
    stats = StepStats(sample_size, est, cov, log_evidence, stepper.extract(maps[best]))

    if known_state is None and resample:
        if ess_trigger is None or sample_size < ess_trigger * n:
            idx = systematic_resample(out.weights, rng)
            out = _reindex(out, idx)
    return out, stats
