"""Trajectory-conditioned Poisson multi-Bernoulli mixture map filter.

Undetected landmarks live in a Poisson point process whose intensity is a
Gaussian mixture (fed by measurement-driven births); detected landmarks are
Bernoulli components shared across weighted global hypotheses.  The update
enumerates, per prior hypothesis, the gamma best data associations with
Murty's algorithm over the standard cost matrix

    [ -log(l_redetect / l_misdetect) | diag(-log l_new) ]

and the particle-weight likelihood factor follows the PMBM evidence
approximation including the Poisson and clutter normalizers.

All association weights are kept in the log domain.  The known BS enters the
pool as a certain Bernoulli (r = 1, pinned density) present in every
hypothesis, so line-of-sight measurements are explained without being part
of the estimated map.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assignment import InfeasibleCostError, murty_kbest
from .gaussian import (
    ekf_precompute,
    gauss_loglik,
    logsumexp,
    moment_match,
    posterior_means,
    scale_measurements,
    scaled_clutter_intensity,
    scaled_noise_cov,
    wrapped_residuals,
)
from .geometry import Landmark, LandmarkKind, Scenario
from . import phd as _phd

# floor for log association weights; keeps cost matrices feasible when both
# clutter and Poisson mass vanish for a measurement
LOG_FLOOR = -1e3


@dataclass(frozen=True)
class PmbmParams:
    gamma: int = 10
    hyp_prune: float = 1e-4
    max_hyps: int = 50
    r_prune: float = 1e-3
    recycle: bool = True
    gate2: float = 60.0  # squared-Mahalanobis redetection gate (5 dof)
    birth_weight: float = 1.5e-5
    birth_gate: float = 0.5
    extract_threshold: float = 0.5
    ppp_prune: float = 1e-7
    ppp_merge: float = 50.0
    ppp_cap: int = 60
    bs_cov: float = 1e-8


@dataclass(frozen=True)
class Bernoulli:
    """Potentially existing landmark: existence probability plus a Gaussian."""

    r: float
    mean: np.ndarray
    cov: np.ndarray
    kind: LandmarkKind


class PmbmMap:
    """PPP intensity + Bernoulli pool + global hypotheses.

    Hypotheses are (log_weight, tuple of pool indices); log-weights are
    normalized (logsumexp == 0) outside of intermediate update states.
    """

    __slots__ = ("poisson", "r", "mean", "cov", "kind", "hyps")

    def __init__(self, poisson, r, mean, cov, kind, hyps):
        self.poisson = poisson  # phd.PhdMap used as a plain Gaussian mixture
        self.r = np.asarray(r, dtype=float).reshape(-1)
        n = len(self.r)
        self.mean = np.asarray(mean, dtype=float).reshape(n, 3)
        self.cov = np.asarray(cov, dtype=float).reshape(n, 3, 3)
        self.kind = np.asarray(kind, dtype=np.int8).reshape(n)
        self.hyps = list(hyps)

    @classmethod
    def empty(cls) -> "PmbmMap":
        return cls(
            _phd.PhdMap.empty(),
            np.empty(0),
            np.empty((0, 3)),
            np.empty((0, 3, 3)),
            np.empty(0, dtype=np.int8),
            [(0.0, ())],
        )

    def copy(self) -> "PmbmMap":
        return PmbmMap(
            self.poisson.copy(),
            self.r.copy(),
            self.mean.copy(),
            self.cov.copy(),
            self.kind.copy(),
            list(self.hyps),
        )

    @property
    def n_bernoulli(self) -> int:
        return len(self.r)

    def best_hypothesis(self):
        return max(self.hyps, key=lambda h: h[0])

    def bernoulli(self, i: int) -> Bernoulli:
        return Bernoulli(
            float(self.r[i]), self.mean[i].copy(), self.cov[i].copy(), LandmarkKind(self.kind[i])
        )


def with_known_bs(m: PmbmMap, sc: Scenario, params: PmbmParams) -> PmbmMap:
    """Ensure the pool holds the pinned BS Bernoulli, shared by every hypothesis."""
    is_bs = m.kind == LandmarkKind.BS
    if is_bs.any():
        i = int(np.flatnonzero(is_bs)[0])
        m = m.copy()
        m.r[i] = 1.0
        m.mean[i] = sc.bs.position
        m.cov[i] = params.bs_cov * np.eye(3)
        return m
    out = PmbmMap(
        m.poisson.copy(),
        np.concatenate([m.r, [1.0]]),
        np.concatenate([m.mean, sc.bs.position[None, :]]),
        np.concatenate([m.cov, (params.bs_cov * np.eye(3))[None, :, :]]),
        np.concatenate([m.kind, np.array([LandmarkKind.BS], dtype=np.int8)]),
        [],
    )
    bs_idx = out.n_bernoulli - 1
    out.hyps = [(lw, idx + (bs_idx,)) for lw, idx in m.hyps]
    return out


def thin_undetected(poisson, state, sc: Scenario):
    """Case a: intensity weights scaled by (1 - p_D) at each component mean."""
    pd = _effective_pd(poisson.mean, poisson.kind, state, sc)
    return _phd.PhdMap(poisson.w * (1.0 - pd), poisson.mean, poisson.cov, poisson.kind)


def _effective_pd(means, kinds, state, sc):
    from .geometry import detection_probabilities, predict_measurements

    if len(means) == 0:
        return np.empty(0)
    pd = detection_probabilities(means, kinds, state, sc)
    _, valid = predict_measurements(means, kinds, state, sc.ue_height, sc.bs.position)
    return pd * valid


def misdetect_bernoulli(b: Bernoulli, state, sc: Scenario):
    """Case c: reduced existence, unchanged density; returns (Bernoulli, log weight)."""
    pd = float(_effective_pd(b.mean[None, :], [int(b.kind)], state, sc)[0])
    denom = 1.0 - b.r * pd
    return Bernoulli(b.r * (1.0 - pd) / denom, b.mean, b.cov, b.kind), math.log(denom)


def redetect_bernoulli(b: Bernoulli, z, state, sc: Scenario):
    """Case d: existence one, EKF posterior density; returns (Bernoulli, log weight)."""
    if b.r <= 0:
        raise ValueError("redetection requires positive prior existence")
    cache = ekf_precompute(b.mean[None, :], b.cov[None, :, :], [int(b.kind)], state, sc)
    resid = wrapped_residuals(cache.zhat, scale_measurements(np.asarray(z).reshape(1, 5)))
    ll, _ = gauss_loglik(cache, resid)
    if not np.isfinite(ll[0, 0]) or cache.pd[0] <= 0:
        return Bernoulli(1.0, b.mean, b.cov, b.kind), -np.inf
    post_mean = posterior_means(cache, b.mean[None, :], resid)[0, 0]
    ell = math.log(b.r) + math.log(cache.pd[0]) + float(ll[0, 0])
    return Bernoulli(1.0, post_mean, cache.post_cov[0], b.kind), ell


def new_bernoulli(z, poisson, state, sc: Scenario):
    """Case b: Bernoulli born from the Poisson intensity; returns (Bernoulli, log weight).

    The density moment-matches the EKF-updated intensity components of the
    dominant kind hypothesis; the log weight is log(c(z) + mass).  With no
    Poisson support the result has r = 0 and log weight log c(z).
    """
    r, mean, cov, kind, ell = _new_bernoullis(np.asarray(z).reshape(1, 5), poisson, state, sc)
    return Bernoulli(float(r[0]), mean[0], cov[0], LandmarkKind(kind[0])), float(ell[0])


def _new_bernoullis(Z, poisson, state, sc: Scenario, cache=None, ll=None):
    """Vectorized case b for every measurement."""
    m = len(Z)
    clutter = scaled_clutter_intensity(sc)
    log_c = math.log(clutter) if clutter > 0 else -np.inf
    r = np.zeros(m)
    mean = np.zeros((m, 3))
    cov = np.tile(np.eye(3) * 1e6, (m, 1, 1))
    kind = np.full(m, LandmarkKind.VA, dtype=np.int8)
    ell = np.full(m, max(log_c, LOG_FLOOR))
    if len(poisson) == 0 or m == 0:
        return r, mean, cov, kind, ell

    if cache is None:
        cache = ekf_precompute(poisson.mean, poisson.cov, poisson.kind, state, sc)
    resid = wrapped_residuals(cache.zhat, scale_measurements(Z))
    if ll is None:
        ll, _ = gauss_loglik(cache, resid)
    lam = cache.pd[:, None] * poisson.w[:, None] * np.exp(ll)  # (P, m)
    post_mean = posterior_means(cache, poisson.mean, resid)

    kind_masks = [poisson.kind == k for k in (LandmarkKind.VA, LandmarkKind.SP)]
    kind_mass = np.stack(
        [lam[msk].sum(axis=0) if msk.any() else np.zeros(m) for msk in kind_masks]
    )
    winner = np.argmax(kind_mass, axis=0)
    for p in range(m):
        mass = kind_mass[winner[p], p]
        if mass <= 0:
            continue
        ell[p] = np.logaddexp(log_c, math.log(mass)) if clutter > 0 else math.log(mass)
        r[p] = mass / (clutter + mass)
        sel = np.flatnonzero(kind_masks[winner[p]] & (lam[:, p] > 0))
        mean[p], cov[p] = moment_match(lam[sel, p], post_mean[sel, p], cache.post_cov[sel])
        kind[p] = LandmarkKind.VA if winner[p] == 0 else LandmarkKind.SP
    return r, mean, cov, kind, ell


def build_cost_matrix(hyp_indices, ell_mis, ell_red, ell_new):
    """Cost matrix [previously-detected block | diagonal new block].

    ell_red is (n_bernoulli_pool, m); hyp_indices selects this hypothesis's
    columns.  Entries are negative log weights; forbidden pairs are +inf.
    """
    m = len(ell_new)
    n = len(hyp_indices)
    cost = np.full((m, n + m), np.inf)
    if n:
        idx = np.asarray(hyp_indices, dtype=int)
        cost[:, :n] = -(ell_red[idx, :].T - ell_mis[idx][None, :])
    cost[np.arange(m), n + np.arange(m)] = -np.asarray(ell_new)
    return cost


def update(m: PmbmMap, Z, state, sc: Scenario, params: PmbmParams, pre=None):
    """PMBM measurement update.

    Returns (posterior map, log-likelihood factor, per-measurement flag that
    the measurement is unexplained and should drive a birth).  The posterior
    pool holds only nodes referenced by surviving hypotheses; the PPP is
    thinned by (1 - p_D).  pre may carry precomputed EKF caches and
    residual log-densities for the Bernoulli and Poisson rows.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 5)
    n_z = len(Z)
    ppp_mass = float(m.poisson.w.sum())

    if pre is None:
        cache = (
            ekf_precompute(m.mean, m.cov, m.kind, state, sc) if m.n_bernoulli else None
        )
        ll = quad = None
        ppp_cache = (
            ekf_precompute(m.poisson.mean, m.poisson.cov, m.poisson.kind, state, sc)
            if len(m.poisson)
            else None
        )
        ppp_ll = None
        if n_z and cache is not None:
            resid = wrapped_residuals(cache.zhat, scale_measurements(Z))
            ll, quad = gauss_loglik(cache, resid)
    else:
        cache, resid, ll, quad, ppp_cache, ppp_ll = pre

    # local hypotheses for existing Bernoullis
    if m.n_bernoulli:
        pd = cache.pd
        mis_denom = 1.0 - m.r * pd
        ell_mis = np.log(mis_denom)
        r_mis = m.r * (1.0 - pd) / mis_denom
        if n_z:
            with np.errstate(divide="ignore"):
                ell_red = np.log(m.r)[:, None] + np.log(pd)[:, None] + ll
            ell_red[quad > params.gate2] = -np.inf
            ell_red[~np.isfinite(ll)] = -np.inf
            red_mean = posterior_means(cache, m.mean, resid)
    else:
        ell_mis = np.empty(0)
        r_mis = np.empty(0)
        ell_red = np.empty((0, n_z))

    nb_r, nb_mean, nb_cov, nb_kind, ell_new = _new_bernoullis(
        Z, m.poisson, state, sc, cache=ppp_cache, ll=ppp_ll
    )

    # build the child pool lazily: nodes are shared across hypotheses
    pool_r, pool_mean, pool_cov, pool_kind = [], [], [], []
    node_cache = {}

    def node(key):
        if key in node_cache:
            return node_cache[key]
        tag = key[0]
        if tag == "mis":
            i = key[1]
            pool_r.append(r_mis[i])
            pool_mean.append(m.mean[i])
            pool_cov.append(m.cov[i])
            pool_kind.append(m.kind[i])
        elif tag == "red":
            i, p = key[1], key[2]
            pool_r.append(1.0)
            pool_mean.append(red_mean[i, p])
            pool_cov.append(cache.post_cov[i])
            pool_kind.append(m.kind[i])
        else:  # new
            p = key[1]
            pool_r.append(nb_r[p])
            pool_mean.append(nb_mean[p])
            pool_cov.append(nb_cov[p])
            pool_kind.append(nb_kind[p])
        node_cache[key] = len(pool_r) - 1
        return node_cache[key]

    children = []  # (raw log weight, indices)
    for lw, idx in m.hyps:
        base = lw + float(ell_mis[list(idx)].sum()) if idx else lw
        if n_z == 0:
            children.append((base, tuple(node(("mis", i)) for i in idx)))
            continue
        cost = build_cost_matrix(idx, ell_mis, ell_red, ell_new)
        try:
            assignments = murty_kbest(cost, params.gamma)
        except InfeasibleCostError:
            continue
        n_idx = len(idx)
        for a in assignments:
            child = []
            detected = set()
            for p, col in enumerate(a.row_to_col):
                if col < n_idx:
                    child.append(node(("red", idx[col], p)))
                    detected.add(col)
                else:
                    child.append(node(("new", p)))
            for local_i, i in enumerate(idx):
                if local_i not in detected:
                    child.append(node(("mis", i)))
            children.append((base - a.total_cost, tuple(sorted(child))))

    if not children:  # every association infeasible: keep misdetection children
        children = [
            (lw + float(ell_mis[list(idx)].sum()) if idx else lw, tuple(node(("mis", i)) for i in idx))
            for lw, idx in m.hyps
        ]

    raw = np.array([c[0] for c in children])
    evidence = float(logsumexp(raw))
    loglik = evidence - ppp_mass - sc.clutter_mean
    norm = raw - evidence
    hyps = [(float(w), c[1]) for w, c in zip(norm, children)]

    if ppp_cache is not None:  # case a, reusing the cached p_D
        poisson = _phd.PhdMap(
            m.poisson.w * (1.0 - ppp_cache.pd), m.poisson.mean, m.poisson.cov, m.poisson.kind
        )
    else:
        poisson = m.poisson.copy()
    out = PmbmMap(poisson, pool_r, pool_mean, pool_cov, pool_kind, hyps)

    # measurements unexplained under the best child feed the birth process
    needs_birth = np.zeros(n_z, dtype=bool)
    if n_z:
        best_lw, best_idx = out.best_hypothesis()
        best_set = set(best_idx)
        for p in range(n_z):
            key = ("new", p)
            i = node_cache.get(key)
            if i is not None and i in best_set and nb_r[p] < params.birth_gate:
                needs_birth[p] = True
    return out, float(loglik), needs_birth


def reduce(m: PmbmMap, params: PmbmParams) -> PmbmMap:
    """Hypothesis pruning/capping/merging, Bernoulli recycling, pool GC.

    Duplicate hypotheses (same Bernoulli set) merge by weight addition;
    Bernoullis below the existence threshold are dropped from all hypotheses
    and, when recycling is on, returned to the PPP with weight r.
    """
    # merge duplicates, prune by weight, cap
    merged = {}
    for lw, idx in m.hyps:
        merged[idx] = np.logaddexp(merged[idx], lw) if idx in merged else lw
    hyps = sorted(((lw, idx) for idx, lw in merged.items()), key=lambda h: (-h[0], h[1]))
    lws = np.array([h[0] for h in hyps])
    lws -= logsumexp(lws)
    keep = lws >= math.log(params.hyp_prune)
    keep[0] = True  # never empty
    hyps = [(float(lw), idx) for lw, (_, idx) in zip(lws, hyps) if True]
    hyps = [h for h, k in zip(hyps, keep) if k][: params.max_hyps]

    # existence pruning with optional recycling into the PPP
    low = (m.r < params.r_prune) & (m.kind != LandmarkKind.BS)
    recycled = None
    if params.recycle and low.any():
        used = sorted({i for _, idx in hyps for i in idx if low[i]})
        if used:
            recycled = _phd.PhdMap(m.r[used], m.mean[used], m.cov[used], m.kind[used])
    hyps = [(lw, tuple(i for i in idx if not low[i])) for lw, idx in hyps]

    # merge duplicates again (pruning can collapse hypotheses), renormalize
    merged = {}
    for lw, idx in hyps:
        merged[idx] = np.logaddexp(merged[idx], lw) if idx in merged else lw
    hyps = sorted(((lw, idx) for idx, lw in merged.items()), key=lambda h: (-h[0], h[1]))
    lws = np.array([h[0] for h in hyps])
    lws -= logsumexp(lws)
    hyps = [(float(lw), idx) for lw, (_, idx) in zip(lws, hyps)]

    # garbage-collect orphaned pool entries
    used = sorted({i for _, idx in hyps for i in idx})
    remap = {old: new for new, old in enumerate(used)}
    hyps = [(lw, tuple(sorted(remap[i] for i in idx))) for lw, idx in hyps]

    poisson = m.poisson
    if recycled is not None:
        poisson = _phd.concat_maps([poisson, recycled])
    poisson = _phd.reduce(poisson, params.ppp_prune, params.ppp_merge, params.ppp_cap)

    return PmbmMap(poisson, m.r[used], m.mean[used], m.cov[used], m.kind[used], hyps)


def extract_map(m: PmbmMap, threshold: float = 0.5):
    """Bernoullis of the highest-weight hypothesis with r above threshold."""
    _, idx = m.best_hypothesis()
    out = []
    for i in idx:
        if m.r[i] >= threshold and m.kind[i] != LandmarkKind.BS:
            out.append((Landmark(m.mean[i].copy(), LandmarkKind(m.kind[i])), float(m.r[i])))
    return out


class PmbmStepper:
    """Per-particle orchestration mirroring phd.PhdStepper.

    Births from the previous step's unexplained measurements are appended to
    the Poisson intensity before the update (the PMBM has no prediction
    step for static landmarks).
    """

    def __init__(self, sc: Scenario, params: PmbmParams = PmbmParams()):
        self.sc = sc
        self.params = params

    def init_map(self) -> PmbmMap:
        return with_known_bs(PmbmMap.empty(), self.sc, self.params)

    def empty_births(self):
        return _phd.PhdMap.empty()

    def step(self, m: PmbmMap, births, Z, state):
        p = self.params
        m = with_known_bs(m, self.sc, p)
        m.poisson = _phd.concat_maps([m.poisson, births])
        m, loglik, needs_birth = update(m, Z, state, self.sc, p)
        m = reduce(m, p)
        unused = np.asarray(Z, dtype=float).reshape(-1, 5)[needs_birth]
        new_births = _phd.make_birth_components(
            unused, state, self.sc,
            _phd.PhdParams(birth_weight=p.birth_weight),
        )
        return m, loglik, new_births

    def step_many(self, maps, births, Z, states):
        """Ensemble step: Bernoulli and Poisson EKF linearizations batched
        over all particles, the per-map hypothesis update unchanged."""
        from .gaussian import EkfCache

        p = self.params
        Z = np.asarray(Z, dtype=float).reshape(-1, 5)
        states = np.asarray(states, dtype=float)
        prepared = []
        for m, b in zip(maps, births):
            mm = with_known_bs(m, self.sc, p)
            mm.poisson = _phd.concat_maps([mm.poisson, b])
            prepared.append(mm)

        def batch(means, covs, kinds, counts):
            if sum(counts) == 0:
                return None, None, None, None
            cache = ekf_precompute(
                np.concatenate(means), np.concatenate(covs), np.concatenate(kinds),
                np.repeat(states, counts, axis=0), self.sc,
            )
            if len(Z):
                resid = wrapped_residuals(cache.zhat, scale_measurements(Z))
                ll, quad = gauss_loglik(cache, resid)
            else:
                resid = ll = quad = None
            return cache, resid, ll, quad

        def sub(cache, resid, ll, quad, sl):
            if cache is None:
                return None, None, None, None
            c = EkfCache(
                cache.zhat[sl], cache.gain[sl], cache.s_inv[sl], cache.s_logdet[sl],
                cache.post_cov[sl], cache.pd[sl], cache.valid[sl],
            )
            if resid is None:
                return c, None, None, None
            return c, resid[sl], ll[sl], quad[sl]

        b_counts = [mm.n_bernoulli for mm in prepared]
        b_offs = np.concatenate([[0], np.cumsum(b_counts)])
        b_all = batch(
            [mm.mean for mm in prepared], [mm.cov for mm in prepared],
            [mm.kind for mm in prepared], b_counts,
        )
        p_counts = [len(mm.poisson) for mm in prepared]
        p_offs = np.concatenate([[0], np.cumsum(p_counts)])
        p_all = batch(
            [mm.poisson.mean for mm in prepared], [mm.poisson.cov for mm in prepared],
            [mm.poisson.kind for mm in prepared], p_counts,
        )

        out_maps, logliks, unused = [], np.empty(len(prepared)), []
        for i, mm in enumerate(prepared):
            bc, bresid, bll, bquad = sub(*b_all, slice(b_offs[i], b_offs[i + 1]))
            pc, _, pll, _ = sub(*p_all, slice(p_offs[i], p_offs[i + 1]))
            pre = (bc, bresid, bll, bquad, pc, pll)
            m2, lg, needs_birth = update(mm, Z, states[i], self.sc, p, pre=pre)
            out_maps.append(reduce(m2, p))
            logliks[i] = lg
            unused.append(Z[needs_birth])
        new_births = _phd.make_birth_components_many(
            unused, states, self.sc, _phd.PhdParams(birth_weight=p.birth_weight)
        )
        return out_maps, logliks, new_births

    def extract(self, m: PmbmMap):
        return extract_map(m, self.params.extract_threshold)
