"""Belief-propagation SLAM on the factor graph of sensor, landmarks and
association variables.

Landmarks are vector variables augmented with a Bernoulli existence bit;
two families of association variables (landmark-oriented c and
measurement-oriented d, coupled by a pairwise exclusion factor) carry the
data association.  The message schedule per step is: prediction of sensor
and landmark beliefs, association messages from the spatial beliefs,
loopy-BP iteration on the c-d subgraph, then the measurement update of the
landmark, new-landmark and sensor beliefs.

The sensor belief is a particle cloud (shared representation with the
Rao-Blackwellized filters); landmark beliefs are single Gaussians.  Because
BP marginalizes the hidden variables, the sensor-landmark correlation is not
tracked: there is one global landmark list, not one per particle.
Undetected landmarks are handled by a Poisson intensity outside the BP
framework, exactly as in the PMBM filter's birth process.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .gaussian import (
    MEAS_SCALE,
    logsumexp,
    moment_match,
    scale_measurements,
    scaled_clutter_intensity,
    scaled_noise_cov,
)
from .geometry import (
    Landmark,
    LandmarkKind,
    Scenario,
    detection_probabilities,
    measurement_jacobians,
    predict_measurements,
    wrap_angle,
)
from . import phd as _phd
from .motion import ControlInput, MotionNoise, sample_transition_array
from .rbpf import (
    ParticleSet,
    StepStats,
    estimate_state,
    ess as particle_ess,
    systematic_resample,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BpParams:
    max_iters: int = 20
    tol: float = 1e-6
    birth_weight: float = 1.5e-5
    birth_gate: float = 0.5
    existence_prune: float = 1e-3
    extract_threshold: float = 0.5
    max_landmarks: int = 30
    bs_cov: float = 1e-8


@dataclass
class AugmentedLandmark:
    """Landmark belief: Gaussian position density plus existence probability."""

    mean: np.ndarray
    cov: np.ndarray
    kind: LandmarkKind
    existence: float

    def copy(self) -> "AugmentedLandmark":
        return AugmentedLandmark(self.mean.copy(), self.cov.copy(), self.kind, self.existence)


def predict_messages(particles, u: ControlInput, noise: MotionNoise, rng, landmarks):
    """Prediction messages: sensor particles through the motion model,
    landmark beliefs passed through (static landmarks, identity transition)."""
    return sample_transition_array(particles, u, noise, rng), landmarks


def _spatial_caches(landmarks, particles, sc: Scenario, Z):
    """Per (landmark, measurement, particle) detection densities.

    Returns pd (I, N), dens (I, J, N) with dens the scaled-space Gaussian
    N(z_j; h(mean_i, s_p), S_i(s_p)); landmark covariances enter through the
    innovation covariance linearized at each particle.
    """
    I, N = len(landmarks), len(particles)
    J = len(Z)
    if I == 0:
        return np.zeros((0, N)), np.zeros((0, J, N))
    means = np.repeat(np.array([lm.mean for lm in landmarks]), N, axis=0)
    kinds = np.repeat(np.array([int(lm.kind) for lm in landmarks], dtype=np.int8), N)
    states = np.tile(particles, (I, 1))
    covs = np.repeat(np.array([lm.cov for lm in landmarks]), N, axis=0)

    zhat, ok1 = predict_measurements(means, kinds, states, sc.ue_height, sc.bs.position)
    H, ok2 = measurement_jacobians(means, kinds, states, sc.ue_height, sc.bs.position)
    valid = ok1 & ok2
    zhat = np.where(valid[:, None], zhat * MEAS_SCALE, 0.0)
    H = H * MEAS_SCALE[:, None]
    H[~valid] = 0.0
    Rs = scaled_noise_cov(sc)
    S = np.einsum("mij,mjk,mlk->mil", H, covs, H) + Rs
    s_inv = np.linalg.inv(S)
    _, s_logdet = np.linalg.slogdet(S)

    pd = (detection_probabilities(means, kinds, states, sc) * valid).reshape(I, N)
    if J == 0:
        return pd, np.zeros((I, J, N))
    resid = scale_measurements(Z)[None, :, :] - zhat[:, None, :]
    resid[..., 1:] = wrap_angle(resid[..., 1:])
    quad = np.einsum("mzi,mij,mzj->mz", resid, s_inv, resid)
    ll = -0.5 * (quad + s_logdet[:, None] + 5.0 * math.log(2.0 * math.pi))
    dens = np.exp(ll)
    dens[~valid] = 0.0
    return pd, dens.reshape(I, N, J).transpose(0, 2, 1)


def da_messages(particles, weights, landmarks, ppp, Z, sc: Scenario):
    """Association messages from the prediction beliefs.

    wupd[i, 0] is the misdetection/no-existence message for landmark i,
    wupd[i, j] the detection message with measurement j, and wnew[j] the
    clutter-or-new message for measurement j (clutter intensity plus the
    Poisson-intensity detection mass).  Expectations over the sensor are
    Monte-Carlo sums over the weighted particle cloud; landmark densities
    integrate analytically through the linearized model.
    """
    if len(particles) == 0:
        raise ValueError("empty particle support")
    I, J = len(landmarks), len(Z)
    pd, dens = _spatial_caches(landmarks, particles, sc, Z)
    e = np.array([lm.existence for lm in landmarks]).reshape(I, 1)
    pdbar = pd @ weights  # (I,)
    wupd = np.empty((I, J + 1))
    wupd[:, 0] = e[:, 0] * (1.0 - pdbar) + (1.0 - e[:, 0])
    D = np.einsum("ijn,n->ij", pd[:, None, :] * dens, weights) if J else np.zeros((I, 0))
    wupd[:, 1:] = e * D

    clutter = scaled_clutter_intensity(sc)
    if J:
        ppp_landmarks = [
            AugmentedLandmark(m, c, LandmarkKind(k), 1.0)
            for m, c, k in zip(ppp.mean, ppp.cov, ppp.kind)
        ]
        pd_p, dens_p = _spatial_caches(ppp_landmarks, particles, sc, Z)
        mass = np.einsum("q,qjn,n->j", ppp.w, pd_p[:, None, :] * dens_p, weights) if len(ppp) else np.zeros(J)
        wnew = clutter + mass
    else:
        mass = np.zeros(0)
        wnew = np.zeros(0)
    return wupd, wnew, (pd, dens, D, mass)


def loopy_da(wupd, wnew, max_iters: int = 20, tol: float = 1e-6):
    """Loopy BP on the c-d association subgraph (normalized message exchange).

    Returns marginal association beliefs (pupd (I, J+1), pnew (J,)) and the
    converged measurement-to-landmark messages mu (I, J) used downstream as
    the psi-product messages into the landmark factors.
    """
    I = wupd.shape[0]
    J = wupd.shape[1] - 1
    pupd = np.zeros_like(wupd)
    pnew = np.zeros(J)
    if I == 0 and J == 0:
        return pupd, pnew, np.zeros((0, 0))
    if J == 0:
        pupd[:, 0] = 1.0
        return pupd, pnew, np.zeros((I, 0))
    if I == 0:
        return pupd, np.ones(J), np.zeros((0, J))

    mu = np.ones((I, J))
    nu = np.zeros((I, J))
    for _ in range(max_iters):
        mu_old = mu
        prd = wupd[:, 1:] * mu
        s = wupd[:, 0] + prd.sum(axis=1)
        nu = wupd[:, 1:] / (s[:, None] - prd + 1e-300)
        s_new = wnew + nu.sum(axis=0)
        mu = 1.0 / (s_new[None, :] - nu + 1e-300)
        if np.abs(mu - mu_old).max() < tol:
            break

    s = wupd[:, 0] + (wupd[:, 1:] * mu).sum(axis=1)
    pupd[:, 0] = wupd[:, 0] / s
    pupd[:, 1:] = wupd[:, 1:] * mu / s[:, None]
    pnew = wnew / (wnew + nu.sum(axis=0))
    return pupd, pnew, mu


def measurement_update(particles, log_w, landmarks, ppp, Z, sc: Scenario, params: BpParams, caches):
    """Messages 5-7: updated sensor weights, landmark beliefs and new landmarks.

    Landmark posterior densities moment-match the misdetection branch with
    the per-measurement EKF branches weighted by the association marginals;
    sensor particles are reweighted by the product of landmark factors.
    """
    wupd, wnew, (pd, dens, D, mass), pupd, pnew, mu = caches
    I, J = len(landmarks), len(Z)
    N = len(particles)
    weights = np.exp(log_w)

    # sensor belief: product over detected-landmark factors per particle
    if I:
        e = np.array([lm.existence for lm in landmarks]).reshape(I, 1)
        factors = (1.0 - e) + e * (1.0 - pd)
        if J:
            factors = factors + e * np.einsum("ij,ijn->in", mu, dens * pd[:, None, :])
        with np.errstate(divide="ignore"):
            new_log_w = log_w + np.log(factors).sum(axis=0)
    else:
        new_log_w = log_w.copy()

    mean_state = estimate_state(ParticleSet(particles, log_w, [None] * N, [None] * N))[0].as_array()

    # landmark beliefs
    new_landmarks = []
    for i, lm in enumerate(landmarks):
        mis_mass = 1.0 - float(pd[i] @ weights)
        a = lm.existence * (mis_mass + float(mu[i] @ D[i])) if J else lm.existence * mis_mass
        b = 1.0 - lm.existence
        existence = a / (a + b) if (a + b) > 0 else 0.0
        if J and D[i].sum() > 0:
            comp_w = [mis_mass]
            comp_mean = [lm.mean]
            comp_cov = [lm.cov]
            cache_i = _single_landmark_cache(lm, mean_state, sc)
            for j in range(J):
                w_ij = mu[i, j] * D[i, j]
                if w_ij <= 0 or cache_i is None:
                    continue
                post_mean, post_cov = _ekf_single(lm, cache_i, Z[j])
                comp_w.append(w_ij)
                comp_mean.append(post_mean)
                comp_cov.append(post_cov)
            mean, cov = moment_match(np.array(comp_w), np.array(comp_mean), np.array(comp_cov))
        else:
            mean, cov = lm.mean, lm.cov
        new_landmarks.append(AugmentedLandmark(np.asarray(mean), np.asarray(cov), lm.kind, existence))

    # new landmarks from the Poisson intensity, weighted by the marginal
    # probability that the measurement is not from a detected landmark
    from .pmbm import _new_bernoullis

    born = []
    needs_birth = np.zeros(J, dtype=bool)
    if J:
        clutter = scaled_clutter_intensity(sc)
        ratio = mass / (clutter + mass)
        nb_r, nb_mean, nb_cov, nb_kind, _ = _new_bernoullis(Z, ppp, mean_state, sc)
        for j in range(J):
            e_new = float(pnew[j] * ratio[j])
            if ratio[j] < params.birth_gate and pnew[j] >= 0.5:
                needs_birth[j] = True
            if e_new > params.existence_prune and nb_r[j] > 0:
                born.append(
                    AugmentedLandmark(nb_mean[j], nb_cov[j], LandmarkKind(nb_kind[j]), e_new)
                )
    return new_log_w, new_landmarks, born, needs_birth


def _single_landmark_cache(lm: AugmentedLandmark, state, sc: Scenario):
    zhat, ok1 = predict_measurements(
        lm.mean[None, :], [int(lm.kind)], state, sc.ue_height, sc.bs.position
    )
    H, ok2 = measurement_jacobians(
        lm.mean[None, :], [int(lm.kind)], state, sc.ue_height, sc.bs.position
    )
    if not (ok1[0] and ok2[0]):
        return None
    zhat = zhat[0] * MEAS_SCALE
    H = H[0] * MEAS_SCALE[:, None]
    S = H @ lm.cov @ H.T + scaled_noise_cov(sc)
    K = lm.cov @ H.T @ np.linalg.inv(S)
    post_cov = lm.cov - K @ S @ K.T
    return zhat, K, 0.5 * (post_cov + post_cov.T)


def _ekf_single(lm: AugmentedLandmark, cache, z):
    zhat, K, post_cov = cache
    resid = np.asarray(z) * MEAS_SCALE - zhat
    resid[1:] = wrap_angle(resid[1:])
    return lm.mean + K @ resid, post_cov


class BpSlamFilter:
    """Full BP-SLAM recursion over a particle sensor belief.

    step() runs messages 1-7, prunes/caps the landmark list, maintains the
    Poisson birth intensity and resamples the sensor cloud every step.
    """

    def __init__(self, sc: Scenario, params: BpParams, n_particles: int, prior_mean, prior_cov, rng):
        from .rbpf import _gaussian_draws

        self.sc = sc
        self.params = params
        self.particles = _gaussian_draws(prior_mean.as_array(), prior_cov, n_particles, rng)
        self.particles[:, 2] = wrap_angle(self.particles[:, 2])
        self.log_w = np.full(n_particles, -math.log(n_particles))
        self.landmarks = [
            AugmentedLandmark(
                sc.bs.position.copy(), params.bs_cov * np.eye(3), LandmarkKind.BS, 1.0
            )
        ]
        self.ppp = _phd.PhdMap.empty()
        self._pending = _phd.PhdMap.empty()

    def step(self, Z, u: ControlInput, noise: MotionNoise, rng, known_state=None, propagate=True):
        params = self.params
        Z = np.asarray(Z, dtype=float).reshape(-1, 5)
        if known_state is not None:
            self.particles = np.tile(np.asarray(known_state, dtype=float).reshape(1, 4), (len(self.particles), 1))
        elif propagate:
            self.particles, _ = predict_messages(self.particles, u, noise, rng, self.landmarks)
        self.ppp = _phd.concat_maps([self.ppp, self._pending])

        weights = np.exp(self.log_w)
        wupd, wnew, spatial = da_messages(
            self.particles, weights, self.landmarks, self.ppp, Z, self.sc
        )
        pupd, pnew, mu = loopy_da(wupd, wnew, params.max_iters, params.tol)
        new_log_w, landmarks, born, needs_birth = measurement_update(
            self.particles, self.log_w, self.landmarks, self.ppp, Z, self.sc, params,
            (wupd, wnew, spatial, pupd, pnew, mu),
        )

        # normalize sensor weights
        total = logsumexp(new_log_w)
        if not np.isfinite(total):
            log.warning("BP-SLAM sensor weights vanished; resetting to uniform")
            new_log_w = np.full(len(self.particles), -math.log(len(self.particles)))
        else:
            new_log_w = new_log_w - total

        # landmark housekeeping: pin the BS, prune, cap
        kept = []
        for lm in landmarks:
            if lm.kind == LandmarkKind.BS:
                kept.append(
                    AugmentedLandmark(
                        self.sc.bs.position.copy(), params.bs_cov * np.eye(3), LandmarkKind.BS, 1.0
                    )
                )
            elif lm.existence >= params.existence_prune:
                kept.append(lm)
        kept.extend(born)
        if len(kept) > params.max_landmarks:
            kept.sort(key=lambda lm: (lm.kind != LandmarkKind.BS, -lm.existence))
            kept = kept[: params.max_landmarks]
        self.landmarks = kept

        # Poisson intensity: thin by the detection probability at the mean
        # state, then append births from unexplained measurements
        ps = ParticleSet(self.particles, new_log_w, [None] * len(self.particles), [None] * len(self.particles))
        mean_state = estimate_state(ps)[0].as_array()
        if len(self.ppp):
            pd_ppp = detection_probabilities(self.ppp.mean, self.ppp.kind, mean_state, self.sc)
            self.ppp = _phd.PhdMap(self.ppp.w * (1 - pd_ppp), self.ppp.mean, self.ppp.cov, self.ppp.kind)
        self.ppp = _phd.reduce(self.ppp, 1e-7, 50.0, 60)
        self._pending = _phd.make_birth_components(
            Z[needs_birth], mean_state, self.sc, _phd.PhdParams(birth_weight=params.birth_weight)
        )

        sample_size = particle_ess(ps)
        est, cov = estimate_state(ps)
        if known_state is None:
            idx = systematic_resample(np.exp(new_log_w), rng)
            self.particles = self.particles[idx].copy()
            self.log_w = np.full(len(idx), -math.log(len(idx)))
        else:
            self.log_w = new_log_w
        return StepStats(
            sample_size, est, cov, float(total) if np.isfinite(total) else -np.inf, self.extract()
        )

    def extract(self):
        out = []
        for lm in self.landmarks:
            if lm.kind != LandmarkKind.BS and lm.existence >= self.params.extract_threshold:
                out.append((Landmark(lm.mean.copy(), lm.kind), float(lm.existence)))
        return out
