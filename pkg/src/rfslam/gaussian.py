"""Shared Gaussian machinery for the map filters.

All filters evaluate measurement likelihoods in a scaled measurement space
where the TOA axis is expressed as range in meters (multiplied by the speed
of light).  That is a constant diagonal change of variables: likelihood
ratios, existence probabilities and association weights are unchanged, while
innovation covariances become well conditioned (second axis variance ~1e-2
instead of ~1e-19).  Particle log-likelihoods pick up a constant offset per
measurement that is common to all particles.
"""

from typing import NamedTuple

import numpy as np


def logsumexp(a):
    """log(sum(exp(a))) for small 1D arrays, -inf safe, low call overhead."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf
    hi = a.max()
    if not np.isfinite(hi):
        return float(hi) if hi > 0 else -np.inf
    return float(hi + np.log(np.exp(a - hi).sum()))

from .geometry import (
    SPEED_OF_LIGHT,
    Scenario,
    detection_probabilities,
    measurement_model,
    wrap_angle,
)

MEAS_SCALE = np.array([SPEED_OF_LIGHT, 1.0, 1.0, 1.0, 1.0])
LOG_2PI = float(np.log(2.0 * np.pi))


def scale_measurements(Z):
    """Measurements (m, 5) from SI units into the scaled space."""
    return np.asarray(Z, dtype=float).reshape(-1, 5) * MEAS_SCALE


def scaled_noise_cov(sc: Scenario):
    return sc.meas_noise.covariance * np.outer(MEAS_SCALE, MEAS_SCALE)


def scaled_clutter_intensity(sc: Scenario) -> float:
    """Clutter density per unit volume of the scaled measurement space."""
    return sc.clutter_intensity / SPEED_OF_LIGHT


class EkfCache(NamedTuple):
    """Per-component quantities for one UE state, in scaled measurement space."""

    zhat: np.ndarray      # (M, 5) predicted measurements
    gain: np.ndarray      # (M, 3, 5) Kalman gains
    s_inv: np.ndarray     # (M, 5, 5) innovation precision
    s_logdet: np.ndarray  # (M,)
    post_cov: np.ndarray  # (M, 3, 3) posterior covariance (z-independent)
    pd: np.ndarray        # (M,) detection probability, 0 for invalid geometry
    valid: np.ndarray     # (M,) bool


def ekf_precompute(means, covs, kinds, state, sc: Scenario, r_scaled=None) -> EkfCache:
    """Linearize the measurement model at each component mean."""
    means = np.atleast_2d(means)
    M = means.shape[0]
    if r_scaled is None:
        r_scaled = scaled_noise_cov(sc)
    if M == 0:
        empty = np.empty((0,))
        return EkfCache(
            np.empty((0, 5)), np.empty((0, 3, 5)), np.empty((0, 5, 5)),
            empty, np.empty((0, 3, 3)), empty, np.empty(0, dtype=bool),
        )

    zhat, H, valid = measurement_model(means, kinds, state, sc.ue_height, sc.bs.position)
    zhat = zhat * MEAS_SCALE
    H = H * MEAS_SCALE[:, None]
    zhat[~valid] = 0.0

    S = np.einsum("mij,mjk,mlk->mil", H, covs, H) + r_scaled
    sign, logdet = np.linalg.slogdet(S)
    bad = ~np.isfinite(logdet) | (sign <= 0)
    if bad.any():
        S = S.copy()
        S[bad] = np.eye(5)
        valid = valid & ~bad
    s_inv = np.linalg.inv(S)
    s_inv = 0.5 * (s_inv + np.swapaxes(s_inv, 1, 2))
    K = np.einsum("mij,mkj,mkl->mil", covs, H, s_inv)
    # Joseph form keeps the posterior covariance positive definite
    ImKH = np.eye(3) - np.einsum("mij,mjk->mik", K, H)
    post_cov = np.einsum("mij,mjk,mlk->mil", ImKH, covs, ImKH) + np.einsum(
        "mij,jk,mlk->mil", K, r_scaled, K
    )
    post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, 1, 2))

    pd = detection_probabilities(means, kinds, state, sc) * valid
    return EkfCache(zhat, K, s_inv, logdet, post_cov, pd, valid)


def wrapped_residuals(zhat, z_scaled):
    """Innovations (M, m, 5) with all angle components wrapped into (-pi, pi]."""
    resid = np.asarray(z_scaled)[None, :, :] - np.asarray(zhat)[:, None, :]
    resid[..., 1:] = wrap_angle(resid[..., 1:])
    return resid


def gauss_loglik(cache: EkfCache, resid):
    """Log N(z; zhat, S) per (component, measurement); -inf on invalid rows."""
    quad = np.einsum("mzi,mij,mzj->mz", resid, cache.s_inv, resid)
    ll = -0.5 * (quad + cache.s_logdet[:, None] + 5.0 * LOG_2PI)
    ll[~cache.valid] = -np.inf
    return ll, quad


def posterior_means(cache: EkfCache, means, resid):
    """EKF posterior means (M, m, 3)."""
    return np.asarray(means)[:, None, :] + np.einsum("mij,mzj->mzi", cache.gain, resid)


def moment_match(weights, means, covs):
    """Mean and covariance of a Gaussian mixture (weights need not be normalized)."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    w = w / total
    mean = w @ means
    diff = means - mean
    cov = np.einsum("n,nij->ij", w, covs) + np.einsum("n,ni,nj->ij", w, diff, diff)
    return mean, 0.5 * (cov + cov.T)
