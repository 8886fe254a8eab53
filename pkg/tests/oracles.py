"""Independent brute-force oracles shared by unit and acceptance tests."""

import numpy as np


def enumerate_association_maps(n_bernoulli, n_meas):
    """All valid data associations of measurements to {bernoullis} U {new}.

    Yields per-measurement targets: index < n_bernoulli for a redetection,
    or n_bernoulli + p for "measurement p is new or clutter"; each Bernoulli
    is used at most once.
    """

    def rec(p, used, acc):
        if p == n_meas:
            yield tuple(acc)
            return
        for i in range(n_bernoulli):
            if i not in used:
                yield from rec(p + 1, used | {i}, acc + [i])
        yield from rec(p + 1, used, acc + [n_bernoulli + p])

    yield from rec(0, frozenset(), [])


def association_log_weight(assoc, ell_mis, ell_red, ell_new):
    """Log weight of one association map given the local log weights."""
    n = len(ell_mis)
    total = 0.0
    detected = set()
    for p, tgt in enumerate(assoc):
        if tgt < n:
            total += ell_red[tgt, p]
            detected.add(tgt)
        else:
            total += ell_new[p]
    for i in range(n):
        if i not in detected:
            total += ell_mis[i]
    return total


def gospa_brute_force(est, truth, cutoff, order, alpha):
    """GOSPA by exhaustive minimization over all partial matchings."""
    est = np.asarray(est, dtype=float).reshape(-1, est.shape[-1] if len(est) else 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, truth.shape[-1] if len(truth) else 3)
    n, m = len(est), len(truth)
    miss_cost = cutoff**order / alpha

    best = np.inf
    def rec(i, used, acc):
        nonlocal best
        if i == n:
            n_matched = len(used)
            total = acc + miss_cost * ((n - n_matched) + (m - n_matched))
            best = min(best, total)
            return
        # est i unmatched
        rec(i + 1, used, acc)
        for j in range(m):
            if j not in used:
                d = np.linalg.norm(est[i] - truth[j])
                rec(i + 1, used | {j}, acc + min(d, cutoff) ** order)

    rec(0, frozenset(), 0.0)
    return best ** (1.0 / order)
