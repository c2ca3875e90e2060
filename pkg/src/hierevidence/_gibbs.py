"""Compiled collapsed-Gibbs kernel for DP mixtures with a NIW base measure.

Clusters live in fixed slots ``0..n`` addressed by ``labels``; ``active``
holds the occupied slot ids (first ``nact[0]`` entries) and ``where`` maps
a slot to its position in ``active``. For every occupied slot the
posterior-predictive Student-t is cached as (location, lower Cholesky factor
of the shape matrix, log normalizer, dof). The last slot row ``n`` of the
cache arrays holds the prior predictive used for new clusters.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _chol(a, out):
    d = a.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, d):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _tconst(v, d):
    return math.lgamma(0.5 * (v + d)) - math.lgamma(0.5 * v) - 0.5 * d * math.log(v * math.pi)


@njit(cache=True)
def tconst_table(nu0, d, n):
    """Student-t normalizing constants for cluster sizes ``0..n``."""
    out = np.empty(n + 1)
    for c in range(n + 1):
        out[c] = _tconst(nu0 + c - d + 1.0, d)
    return out


@njit(cache=True)
def _refresh(slot, counts, sums, outers, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, work):
    """Recompute the predictive cache of ``slot`` from its statistics."""
    d = m0.shape[0]
    n = counts[slot]
    kn = k0 + n
    nun = nu0 + n
    for a in range(d):
        loc[slot, a] = (k0 * m0[a] + sums[slot, a]) / kn
    v = nun - d + 1.0
    fac = (kn + 1.0) / (kn * v)
    for a in range(d):
        for b in range(d):
            work[a, b] = fac * (
                psi0[a, b]
                + outers[slot, a, b]
                + k0 * m0[a] * m0[b]
                - kn * loc[slot, a] * loc[slot, b]
            )
    ok = _chol(work, chol[slot])
    if not ok:
        # statistics drifted out of the SPD cone: fall back to the prior shape
        for a in range(d):
            for b in range(d):
                work[a, b] = fac * psi0[a, b]
        _chol(work, chol[slot])
    half_logdet = 0.0
    for a in range(d):
        half_logdet += math.log(chol[slot, a, a])
    if n < tconst.shape[0]:
        logc[slot] = tconst[n] - half_logdet
    else:
        logc[slot] = _tconst(v, d) - half_logdet
    dof[slot] = v


@njit(cache=True)
def _t_logpdf(x, slot, loc, chol, logc, dof, z):
    d = x.shape[0]
    maha = 0.0
    for a in range(d):
        s = x[a] - loc[slot, a]
        for b in range(a):
            s -= chol[slot, a, b] * z[b]
        z[a] = s / chol[slot, a, a]
        maha += z[a] * z[a]
    v = dof[slot]
    return logc[slot] - 0.5 * (v + d) * math.log1p(maha / v)


@njit(cache=True)
def _add(i, slot, X, counts, sums, outers, sign):
    d = X.shape[1]
    counts[slot] += sign
    for a in range(d):
        sums[slot, a] += sign * X[i, a]
        for b in range(d):
            outers[slot, a, b] += sign * X[i, a] * X[i, b]


@njit(cache=True)
def init_cache(X, labels, counts, sums, outers, active, where, nact, free, nfree,
               loc, chol, logc, dof, m0, k0, nu0, psi0, tconst):
    """Rebuild all statistics, slot bookkeeping and caches from ``labels``."""
    n, d = X.shape
    work = np.empty((d, d))
    counts[:] = 0
    sums[:] = 0.0
    outers[:] = 0.0
    for i in range(n):
        _add(i, labels[i], X, counts, sums, outers, 1)
    nact[0] = 0
    nfree[0] = 0
    for s in range(n - 1, -1, -1):
        if counts[s] == 0:
            free[nfree[0]] = s
            nfree[0] += 1
            where[s] = -1
    for s in range(n):
        if counts[s] > 0:
            active[nact[0]] = s
            where[s] = nact[0]
            nact[0] += 1
            _refresh(s, counts, sums, outers, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, work)
    # prior predictive in the extra row
    counts[n] = 0
    sums[n] = 0.0
    outers[n] = 0.0
    _refresh(n, counts, sums, outers, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, work)


@njit(cache=True)
def _step(i, u, X, labels, counts, sums, outers, active, where, nact, free, nfree,
          loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, log_alpha, logp, work, z):
    n = X.shape[0]
    x = X[i]
    old = labels[i]
    _add(i, old, X, counts, sums, outers, -1)
    if counts[old] == 0:
        pos = where[old]
        last = active[nact[0] - 1]
        active[pos] = last
        where[last] = pos
        where[old] = -1
        nact[0] -= 1
        free[nfree[0]] = old
        nfree[0] += 1
    else:
        _refresh(old, counts, sums, outers, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, work)

    K = nact[0]
    mx = -np.inf
    for c in range(K):
        s = active[c]
        logp[c] = math.log(counts[s]) + _t_logpdf(x, s, loc, chol, logc, dof, z)
        if logp[c] > mx:
            mx = logp[c]
    logp[K] = log_alpha + _t_logpdf(x, n, loc, chol, logc, dof, z)
    if logp[K] > mx:
        mx = logp[K]
    total = 0.0
    for c in range(K + 1):
        logp[c] = math.exp(logp[c] - mx)
        total += logp[c]
    target = u * total
    pick = K
    acc = 0.0
    for c in range(K + 1):
        acc += logp[c]
        if target < acc:
            pick = c
            break

    if pick == K:
        nfree[0] -= 1
        slot = free[nfree[0]]
        active[K] = slot
        where[slot] = K
        nact[0] += 1
    else:
        slot = active[pick]
    labels[i] = slot
    _add(i, slot, X, counts, sums, outers, 1)
    _refresh(slot, counts, sums, outers, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, work)


@njit(cache=True)
def gibbs_step(i, u, X, labels, counts, sums, outers, active, where, nact, free, nfree,
               loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, log_alpha, logp):
    """Reassign point ``i`` using the uniform variate ``u``."""
    d = X.shape[1]
    _step(i, u, X, labels, counts, sums, outers, active, where, nact, free, nfree,
          loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, log_alpha, logp,
          np.empty((d, d)), np.empty(d))


@njit(cache=True)
def gibbs_sweeps(orders, uniforms, X, labels, counts, sums, outers, active, where, nact,
                 free, nfree, loc, chol, logc, dof, m0, k0, nu0, psi0, tconst, log_alpha, logp):
    """Run ``orders.shape[0]`` consecutive sweeps."""
    d = X.shape[1]
    work = np.empty((d, d))
    z = np.empty(d)
    for s in range(orders.shape[0]):
        for t in range(orders.shape[1]):
            _step(orders[s, t], uniforms[s, t], X, labels, counts, sums, outers,
                  active, where, nact, free, nfree, loc, chol, logc, dof, m0, k0,
                  nu0, psi0, tconst, log_alpha, logp, work, z)
