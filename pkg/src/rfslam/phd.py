"""Trajectory-conditioned Gaussian-mixture PHD map filter.

The map intensity is a Gaussian mixture over landmark positions with a kind
tag per component.  Prediction appends measurement-driven birth components
(landmarks are static, existing components are untouched), the update forms
one misdetection copy per component plus one EKF-updated component per
(component, measurement) pair, and the particle-weight likelihood factor is
the product over measurements of (clutter + association mass).

The known BS is kept in the mixture as a pinned component (weight one, tiny
covariance at the true BS position) so line-of-sight measurements are
explained rather than treated as clutter; it is excluded from map extraction.
"""

from dataclasses import dataclass

import numpy as np

from .gaussian import (
    MEAS_SCALE,
    EkfCache,
    ekf_precompute,
    gauss_loglik,
    posterior_means,
    scale_measurements,
    scaled_clutter_intensity,
    scaled_noise_cov,
    wrapped_residuals,
)
from .geometry import Landmark, LandmarkKind, Scenario, measurement_jacobians


@dataclass(frozen=True)
class PhdParams:
    prune_threshold: float = 1e-4
    merge_threshold: float = 50.0
    cap: int = 100
    birth_weight: float = 1.5e-5
    birth_gate: float = 0.5  # spawn a birth when P(z explained by the map) is below this
    extract_threshold: float = 0.5
    bs_cov: float = 1e-8  # pinned BS component covariance [m^2]


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    kind: LandmarkKind


class PhdMap:
    """Gaussian-mixture intensity stored as packed arrays."""

    __slots__ = ("w", "mean", "cov", "kind")

    def __init__(self, w, mean, cov, kind):
        self.w = np.asarray(w, dtype=float).reshape(-1)
        n = len(self.w)
        self.mean = np.asarray(mean, dtype=float).reshape(n, 3)
        self.cov = np.asarray(cov, dtype=float).reshape(n, 3, 3)
        self.kind = np.asarray(kind, dtype=np.int8).reshape(n)

    @classmethod
    def empty(cls) -> "PhdMap":
        return cls(np.empty(0), np.empty((0, 3)), np.empty((0, 3, 3)), np.empty(0, dtype=np.int8))

    def copy(self) -> "PhdMap":
        return PhdMap(self.w.copy(), self.mean.copy(), self.cov.copy(), self.kind.copy())

    def __len__(self):
        return len(self.w)

    @property
    def expected_count(self) -> float:
        return float(self.w.sum())

    def components(self):
        return [
            GaussianComponent(float(w), m.copy(), c.copy(), LandmarkKind(k))
            for w, m, c, k in zip(self.w, self.mean, self.cov, self.kind)
        ]


def concat_maps(maps) -> PhdMap:
    maps = [m for m in maps if len(m)]
    if not maps:
        return PhdMap.empty()
    return PhdMap(
        np.concatenate([m.w for m in maps]),
        np.concatenate([m.mean for m in maps]),
        np.concatenate([m.cov for m in maps]),
        np.concatenate([m.kind for m in maps]),
    )


def predict(prior: PhdMap, birth: PhdMap) -> PhdMap:
    """Static landmarks: the predicted intensity appends the birth mixture."""
    return concat_maps([prior, birth])


def pin_bs(m: PhdMap, sc: Scenario, params: PhdParams) -> PhdMap:
    """Replace any BS components by the single known-BS component."""
    keep = m.kind != LandmarkKind.BS
    bs = PhdMap(
        np.array([1.0]),
        sc.bs.position[None, :],
        (params.bs_cov * np.eye(3))[None, :, :],
        np.array([LandmarkKind.BS], dtype=np.int8),
    )
    return concat_maps([PhdMap(m.w[keep], m.mean[keep], m.cov[keep], m.kind[keep]), bs])


def update(m: PhdMap, Z, state, sc: Scenario, r_scaled=None, pre=None):
    """PHD measurement update.

    Returns (posterior map, log-likelihood factor, per-measurement map
    association probability).  The posterior has len(m) * (len(Z) + 1)
    components: misdetection copies scaled by (1 - p_D) followed by one
    EKF-updated component per (measurement, prior component).  The
    log-likelihood is sum_z log(c(z) + sum_i Lambda_i(z)).  pre may carry
    (cache, residuals, log-densities) precomputed for this map's rows.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 5)
    clutter = scaled_clutter_intensity(sc)
    if len(m) == 0:
        ll = len(Z) * np.log(clutter) if len(Z) else 0.0
        return m.copy(), float(ll), np.zeros(len(Z))

    if pre is None:
        cache = ekf_precompute(m.mean, m.cov, m.kind, state, sc, r_scaled)
        resid = ll = None
    else:
        cache, resid, ll = pre
    mis = PhdMap(m.w * (1.0 - cache.pd), m.mean, m.cov, m.kind)
    if len(Z) == 0:
        return mis, 0.0, np.zeros(0)

    if resid is None:
        resid = wrapped_residuals(cache.zhat, scale_measurements(Z))
        ll, _ = gauss_loglik(cache, resid)
    lam = cache.pd[:, None] * m.w[:, None] * np.exp(ll)  # (M, m)
    mass = lam.sum(axis=0)
    denom = clutter + mass

    new_w = (lam / denom).T.reshape(-1)  # measurement-major blocks
    new_mean = posterior_means(cache, m.mean, resid).transpose(1, 0, 2).reshape(-1, 3)
    new_cov = np.tile(cache.post_cov, (len(Z), 1, 1))
    new_kind = np.tile(m.kind, len(Z))

    post = concat_maps([mis, PhdMap(new_w, new_mean, new_cov, new_kind)])
    loglik = float(np.log(denom).sum())
    return post, loglik, mass / denom


def reduce(m: PhdMap, prune_threshold: float, merge_threshold: float, cap: int) -> PhdMap:
    """Prune light components, merge close same-kind ones, cap the count.

    Merging is greedy around the dominant remaining component and preserves
    the total weight and the matched first/second moments of each group.
    """
    keep = m.w >= prune_threshold
    w, mean, cov, kind = m.w[keep], m.mean[keep], m.cov[keep], m.kind[keep]

    out_w, out_mean, out_cov, out_kind = [], [], [], []
    idx = np.argsort(-w)
    alive = np.ones(len(w), dtype=bool)
    inv = np.linalg.inv(cov) if len(w) else cov
    for i in idx:
        if not alive[i]:
            continue
        cand_idx = np.flatnonzero(alive & (kind == kind[i]))
        if len(cand_idx) == 1:
            out_w.append(w[i])
            out_mean.append(mean[i])
            out_cov.append(cov[i])
            out_kind.append(kind[i])
            alive[i] = False
            continue
        diff = mean[cand_idx] - mean[i]
        d2 = np.einsum("ni,ij,nj->n", diff, inv[i], diff)
        group = cand_idx[d2 <= merge_threshold]
        gw = w[group] / w[group].sum()
        gmean = gw @ mean[group]
        gdiff = mean[group] - gmean
        gcov = np.einsum("n,nij->ij", gw, cov[group]) + (gw * gdiff.T) @ gdiff
        out_w.append(w[group].sum())
        out_mean.append(gmean)
        out_cov.append(0.5 * (gcov + gcov.T))
        out_kind.append(kind[i])
        alive[group] = False

    if not out_w:
        return PhdMap.empty()
    out = PhdMap(out_w, out_mean, out_cov, out_kind)
    if len(out) > cap:
        top = np.argsort(-out.w)[:cap]
        out = PhdMap(out.w[top], out.mean[top], out.cov[top], out.kind[top])
    return out


def extract_map(m: PhdMap, weight_threshold: float = 0.5):
    """Landmark point estimates: components above threshold, the BS excluded."""
    out = []
    for i in np.flatnonzero((m.w >= weight_threshold) & (m.kind != LandmarkKind.BS)):
        out.append((Landmark(m.mean[i].copy(), LandmarkKind(m.kind[i])), float(m.w[i])))
    return out


def make_birth_components(Z_unused, state, sc: Scenario, params: PhdParams) -> PhdMap:
    """Birth mixture from measurements the map could not explain.

    Each measurement spawns one component per kind hypothesis (VA and SP) at
    the geometrically inverted position, weighted by the configured birth
    intensity, with covariance from the measurement Fisher information.
    Hypotheses whose inversion is infeasible are skipped.
    """
    state = np.asarray(state, dtype=float).reshape(1, 4)
    return make_birth_components_many([Z_unused], state, sc, params)[0]


def _birth_covariances(positions, kinds, state_rows, sc: Scenario):
    """Fisher-information covariances for birth candidates; returns (cov, ok)."""
    H, ok = measurement_jacobians(positions, kinds, state_rows, sc.ue_height, sc.bs.position)
    Hs = H * MEAS_SCALE[:, None]
    r_inv = np.linalg.inv(scaled_noise_cov(sc))
    fisher = np.einsum("mji,jk,mkl->mil", Hs, r_inv, Hs)
    eig = np.linalg.eigvalsh(fisher)
    ok = ok & (eig[:, 0] > 1e-12 * np.maximum(eig[:, -1], 1.0)) & (eig[:, 0] > 0)
    if not ok.any():
        return np.empty((0, 3, 3)), ok
    cov = np.linalg.inv(fisher[ok])
    return 0.5 * (cov + np.swapaxes(cov, 1, 2)), ok


def make_birth_components_many(Z_list, states, sc: Scenario, params: PhdParams):
    """Batched make_birth_components: one birth mixture per particle.

    Z_list holds each particle's unexplained measurements; states the
    matching particle poses.  All inversions, Jacobians and Fisher inverses
    run in single vectorized calls.
    """
    from .geometry import invert_measurements

    n = len(Z_list)
    rows_z, rows_kind, rows_pid = [], [], []
    for i, Z in enumerate(Z_list):
        for z in np.asarray(Z, dtype=float).reshape(-1, 5):
            for kind in (LandmarkKind.VA, LandmarkKind.SP):
                rows_z.append(z)
                rows_kind.append(int(kind))
                rows_pid.append(i)
    if not rows_z:
        return [PhdMap.empty() for _ in range(n)]

    rows_z = np.array(rows_z)
    rows_kind = np.array(rows_kind, dtype=np.int8)
    rows_pid = np.array(rows_pid)
    state_rows = np.asarray(states, dtype=float)[rows_pid]
    pos, ok = invert_measurements(rows_z, rows_kind, state_rows, sc.ue_height, sc.bs.position)
    pos, rows_kind, rows_pid, state_rows = pos[ok], rows_kind[ok], rows_pid[ok], state_rows[ok]
    if not len(pos):
        return [PhdMap.empty() for _ in range(n)]
    cov, ok2 = _birth_covariances(pos, rows_kind, state_rows, sc)
    pos, rows_kind, rows_pid = pos[ok2], rows_kind[ok2], rows_pid[ok2]

    out = []
    for i in range(n):
        sel = rows_pid == i
        if not sel.any():
            out.append(PhdMap.empty())
        else:
            out.append(
                PhdMap(
                    np.full(int(sel.sum()), params.birth_weight),
                    pos[sel], cov[sel], rows_kind[sel],
                )
            )
    return out


class PhdStepper:
    """Per-particle orchestration: pin BS, predict with births, update, reduce.

    Keeps the spec-level operations pure while giving the particle filter a
    single step() entry point.  Pending births travel with the particle and
    are the components spawned from the previous step's unexplained
    measurements, inverted at that particle's own past pose.
    """

    def __init__(self, sc: Scenario, params: PhdParams = PhdParams()):
        self.sc = sc
        self.params = params
        self._r_scaled = scaled_noise_cov(sc)

    def init_map(self) -> PhdMap:
        return pin_bs(PhdMap.empty(), self.sc, self.params)

    def empty_births(self) -> PhdMap:
        return PhdMap.empty()

    def step(self, m: PhdMap, births: PhdMap, Z, state):
        p = self.params
        m = predict(pin_bs(m, self.sc, p), births)
        m, loglik, assoc = update(m, Z, state, self.sc, self._r_scaled)
        m = reduce(m, p.prune_threshold, p.merge_threshold, p.cap)
        unused = np.asarray(Z, dtype=float).reshape(-1, 5)[assoc < p.birth_gate]
        new_births = make_birth_components(unused, state, self.sc, p)
        return m, loglik, new_births

    def step_many(self, maps, births, Z, states):
        """Ensemble step: geometry and EKF linearization batched over all
        particles' components, the per-map update math unchanged."""
        p = self.params
        Z = np.asarray(Z, dtype=float).reshape(-1, 5)
        states = np.asarray(states, dtype=float)
        preds = [predict(pin_bs(m, self.sc, p), b) for m, b in zip(maps, births)]
        counts = [len(m) for m in preds]
        offs = np.concatenate([[0], np.cumsum(counts)])
        cache = ekf_precompute(
            np.concatenate([m.mean for m in preds]),
            np.concatenate([m.cov for m in preds]),
            np.concatenate([m.kind for m in preds]),
            np.repeat(states, counts, axis=0),
            self.sc,
            self._r_scaled,
        )
        if len(Z):
            resid = wrapped_residuals(cache.zhat, scale_measurements(Z))
            ll, _ = gauss_loglik(cache, resid)

        out_maps, logliks, unused = [], np.empty(len(preds)), []
        for i, m in enumerate(preds):
            sl = slice(offs[i], offs[i + 1])
            sub = EkfCache(
                cache.zhat[sl], cache.gain[sl], cache.s_inv[sl], cache.s_logdet[sl],
                cache.post_cov[sl], cache.pd[sl], cache.valid[sl],
            )
            pre = (sub, resid[sl], ll[sl]) if len(Z) else (sub, None, None)
            mm, lg, assoc = update(m, Z, states[i], self.sc, self._r_scaled, pre=pre)
            out_maps.append(reduce(mm, p.prune_threshold, p.merge_threshold, p.cap))
            logliks[i] = lg
            unused.append(Z[assoc < p.birth_gate])
        new_births = make_birth_components_many(unused, states, self.sc, p)
        return out_maps, logliks, new_births

    def extract(self, m: PhdMap):
        return extract_map(m, self.params.extract_threshold)
