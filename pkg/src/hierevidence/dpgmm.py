"""Dirichlet-process Gaussian mixture density estimation.

A collapsed Gibbs sampler over partitions of the samples (Chinese restaurant
process prior, normal-inverse-Wishart base measure) is run for a number of
sweeps; every retained partition is turned into an explicit, normalized
finite Gaussian mixture by sampling the weights and the component
parameters from their conditional posteriors.

Internally the sampler works on whitened coordinates ``L^-1 (x - c)`` where
``c`` and ``L L^T`` are the sample mean and covariance. The NIW prior is
transformed along with the data so the partition posterior is unchanged.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln, multigammaln, ndtr

from . import _gibbs
from .probcore import LOG_2PI, as_spd, cholesky_jitter, log_sum_exp, make_rng

__all__ = [
    "NiwPrior",
    "DpgmmConfig",
    "GaussianComponent",
    "MixtureDraw",
    "DensityEstimate",
    "GibbsState",
    "default_niw_prior",
    "niw_log_marginal",
    "niw_predictive_logpdf",
    "sample_inv_wishart",
    "fit_dpgmm",
    "mixture_logpdf",
    "crp_step",
    "enumerate_partition_posterior",
    "predictive_logpdf",
    "canonical_partition",
]


def as_points(samples):
    """Coerce samples (array-like or an object with ``points``) to ``(n, d)``."""
    pts = getattr(samples, "points", samples)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"samples must be a 2-d array of points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("samples contain non-finite coordinates")
    return pts


def _fingerprint(obj):
    blob = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v)}")


@dataclass(frozen=True)
class NiwPrior:
    """Normal-inverse-Wishart base measure ``(mean, kappa, dof, scale)``."""

    mean: tuple
    kappa: float
    dof: float
    scale: tuple

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        d = mean.size
        scale = as_spd(self.scale, d)
        cholesky_jitter(scale)
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.dof > d - 1:
            raise ValueError(f"dof must exceed dim - 1 = {d - 1}, got {self.dof}")
        object.__setattr__(self, "mean", tuple(mean.tolist()))
        object.__setattr__(self, "scale", tuple(map(tuple, scale.tolist())))

    @property
    def dim(self):
        return len(self.mean)


def default_niw_prior(points, kappa=0.01):
    """Data-driven NIW prior: sample mean, ``kappa``, ``dof = d + 2``, sample covariance."""
    points = as_points(points)
    center, cov = _moments(points)
    d = points.shape[1]
    return NiwPrior(tuple(center), kappa, d + 2.0, tuple(map(tuple, cov)))


def _moments(points):
    center = points.mean(axis=0)
    d = points.shape[1]
    cov = np.atleast_2d(np.cov(points, rowvar=False)) if len(points) > 1 else np.zeros((d, d))
    # floor keeps constant data (zero spread) usable
    floor = max(1e-10 * np.trace(cov) / d, (1e-9 * max(1.0, np.max(np.abs(center)))) ** 2)
    return center, cov + floor * np.eye(d)


@dataclass(frozen=True)
class DpgmmConfig:
    """Settings of a DPGMM fit.

    ``prior=None`` selects :func:`default_niw_prior` from the fitted samples.
    The fit retains ``(sweeps - burn_in) // thinning`` mixture draws.
    """

    concentration: float = 1.0
    prior: NiwPrior = None
    sweeps: int = 1000
    burn_in: int = 500
    thinning: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if self.sweeps < 1 or self.burn_in < 1 or self.thinning < 1:
            raise ValueError("sweeps, burn_in and thinning must be positive")
        if self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        if self.n_draws < 1:
            raise ValueError("configuration retains no draws")

    @property
    def n_draws(self):
        return (self.sweeps - self.burn_in) // self.thinning

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("prior") is not None:
            d["prior"] = NiwPrior(**d["prior"])
        return cls(**d)

    def fingerprint(self):
        return _fingerprint(self.to_dict())


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class MixtureDraw:
    """One finite Gaussian mixture ``sum_k w_k N(x | mu_k, Sigma_k)``.

    Attributes
    ----------
    weights : ndarray, shape (K,)
    means : ndarray, shape (K, d)
    covs : ndarray, shape (K, d, d)
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _chols: np.ndarray = field(init=False, repr=False)
    _logc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(self.covs, dtype=float)
        K, d = means.shape
        covs = covs.reshape(K, d, d)
        if w.shape != (K,) or K == 0:
            raise ValueError("weights, means and covs must describe the same components")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must lie in (0, 1] and sum to 1 (sum={w.sum()!r})")
        try:
            chols = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            chols = np.stack([cholesky_jitter(c) for c in covs])
        logdet = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        for name, val in (("weights", w), ("means", means), ("covs", covs), ("_chols", chols)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_logc", np.log(w) - 0.5 * (d * LOG_2PI + logdet))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [GaussianComponent(float(w), m, c) for w, m, c in zip(self.weights, self.means, self.covs)]

    def logpdf(self, x):
        """Log density at ``x``.

        A scalar (1-d mixtures) or a ``(d,)`` vector (d > 1) is one point and
        gives a float; a ``(n,)`` vector of a 1-d mixture or an ``(n, d)``
        array gives an array of ``n`` values.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (x.ndim == 1 and self.dim > 1)
        if x.ndim == 1 and self.dim > 1 and x.size != self.dim:
            raise ValueError(f"point dim {x.size} does not match mixture dim {self.dim}")
        x = x.reshape(-1, self.dim) if x.ndim <= 1 else x
        if x.shape[1] != self.dim:
            raise ValueError(f"point dim {x.shape[1]} does not match mixture dim {self.dim}")
        # far-away points overflow to a log density of -inf, which is intended
        with np.errstate(over="ignore"):
            if self.dim == 1:
                sd = self._chols[:, 0, 0]
                z = (x[:, 0][:, None] - self.means[:, 0]) / sd
                terms = self._logc - 0.5 * z * z
            else:
                diff = x[:, None, :] - self.means[None, :, :]
                terms = np.empty((len(x), len(self.weights)))
                for k in range(len(self.weights)):
                    z = np.linalg.solve(self._chols[k], diff[:, k, :].T)
                    terms[:, k] = self._logc[k] - 0.5 * np.sum(z * z, axis=0)
        out = log_sum_exp(terms, axis=1)
        return float(out[0]) if single else out

    def cdf(self, x):
        """Mixture CDF, 1-d draws only."""
        if self.dim != 1:
            raise ValueError("cdf is only defined for 1-d mixtures")
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means[:, 0]) / self._chols[:, 0, 0]
        return np.sum(self.weights * ndtr(z), axis=-1)

    def sample(self, rng, size):
        """Draw ``size`` points, shape ``(size, d)``."""
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        eps = rng.standard_normal((size, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chols[comp], eps)

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["covs"]))


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """A set of mixture draws ``theta_j ~ p(theta | x)``."""

    draws: tuple
    n_samples: int = 0
    fingerprint: str = ""

    def __post_init__(self):
        draws = tuple(self.draws)
        if not draws:
            raise ValueError("a density estimate needs at least one draw")
        if len({dr.dim for dr in draws}) != 1:
            raise ValueError("all draws must share the same dimension")
        object.__setattr__(self, "draws", draws)

    @property
    def dim(self):
        return self.draws[0].dim

    def __len__(self):
        return len(self.draws)

    def logpdf_matrix(self, x):
        """``(n_draws, n_points)`` array of draw log densities."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.stack([dr.logpdf(x) for dr in self.draws])

    def to_json(self):
        return json.dumps(
            {
                "dim": self.dim,
                "draws": [dr.to_dict() for dr in self.draws],
                "n_samples": self.n_samples,
                "fingerprint": self.fingerprint,
            }
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        draws = [MixtureDraw.from_dict(d) for d in doc["draws"]]
        est = cls(tuple(draws), doc.get("n_samples", 0), doc.get("fingerprint", ""))
        if est.dim != doc["dim"]:
            raise ValueError("stored dim does not match the draws")
        return est


def sample_inv_wishart(rng, dof, scale, size=None):
    """Inverse-Wishart draws via the Bartlett decomposition.

    ``scale`` may be a single ``(d, d)`` matrix with ``dof`` a scalar, or a
    stack ``(K, d, d)`` with ``dof`` of shape ``(K,)``.
    """
    scale = np.asarray(scale, dtype=float)
    single = scale.ndim == 2
    if single:
        scale = scale[None]
        dof = np.atleast_1d(dof)
        if size is not None:
            scale = np.repeat(scale, size, axis=0)
            dof = np.repeat(dof, size)
    dof = np.asarray(dof, dtype=float)
    K, d, _ = scale.shape
    # W ~ Wishart(dof, scale^-1) = (C A)(C A)^T with C = chol(scale^-1)
    c = np.linalg.cholesky(np.linalg.inv(scale))
    a = np.zeros((K, d, d))
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(rng.chisquare(dof[:, None] - idx[None, :]))
    low = np.tril_indices(d, -1)
    if len(low[0]):
        a[:, low[0], low[1]] = rng.standard_normal((K, len(low[0])))
    ca = c @ a
    cov = np.linalg.inv(ca @ np.swapaxes(ca, 1, 2))
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    if single and size is None:
        return cov[0]
    return cov


def niw_log_marginal(points, prior):
    """Log marginal likelihood of ``points`` (``(n, d)``) under one NIW cluster."""
    x = as_points(points)
    n, d = x.shape
    m0 = np.asarray(prior.mean)
    psi0 = np.asarray(prior.scale)
    k0, nu0 = prior.kappa, prior.dof
    kn, nun = k0 + n, nu0 + n
    xbar = x.mean(axis=0)
    c = x - xbar
    psin = psi0 + c.T @ c + (k0 * n / kn) * np.outer(xbar - m0, xbar - m0)
    _, ld0 = np.linalg.slogdet(psi0)
    _, ldn = np.linalg.slogdet(psin)
    return float(
        -0.5 * n * d * np.log(np.pi)
        + multigammaln(0.5 * nun, d)
        - multigammaln(0.5 * nu0, d)
        + 0.5 * nu0 * ld0
        - 0.5 * nun * ldn
        + 0.5 * d * (np.log(k0) - np.log(kn))
    )


def niw_predictive_logpdf(x, members, prior):
    """Posterior-predictive (multivariate Student-t) log density of ``x``
    given the cluster ``members`` (possibly empty)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    m0 = np.asarray(prior.mean)
    psi = np.asarray(prior.scale, dtype=float)
    k, nu, m = prior.kappa, prior.dof, m0
    members = np.asarray(members, dtype=float).reshape(-1, d)
    n = len(members)
    if n:
        xbar = members.mean(axis=0)
        c = members - xbar
        psi = psi + c.T @ c + (k * n / (k + n)) * np.outer(xbar - m0, xbar - m0)
        m = (k * m0 + n * xbar) / (k + n)
        k, nu = k + n, nu + n
    v = nu - d + 1.0
    shape = psi * (k + 1.0) / (k * v)
    chol = np.linalg.cholesky(shape)
    z = np.linalg.solve(chol, x - m)
    return float(
        gammaln(0.5 * (v + d))
        - gammaln(0.5 * v)
        - 0.5 * d * np.log(v * np.pi)
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * (v + d) * np.log1p(z @ z / v)
    )


class GibbsState:
    """Partition state of the collapsed Gibbs sampler.

    Parameters
    ----------
    points : array_like, shape (n, d)
    config : DpgmmConfig
    labels : array_like of int, optional
        Initial cluster ids; defaults to a single cluster.
    frame : (center, cov), optional
        Whitening frame; defaults to the sample mean and covariance.
    prior : NiwPrior, optional
        Overrides ``config.prior``; when both are ``None`` the data-driven
        default is built from ``frame``.
    """

    def __init__(self, points, config, labels=None, frame=None, prior=None):
        x = as_points(points)
        n, d = x.shape
        self.points = x
        self.config = config
        if frame is None:
            frame = _moments(x)
        center, cov = frame
        if prior is None:
            prior = config.prior
        if prior is None:
            prior = NiwPrior(tuple(center), 0.01, d + 2.0, tuple(map(tuple, cov)))
        if prior.dim != d:
            raise ValueError(f"prior dim {prior.dim} does not match samples dim {d}")
        self.prior = prior
        self.center = np.asarray(center, dtype=float)
        self.transform = np.linalg.cholesky(cov)
        tinv = np.linalg.inv(self.transform)
        self.z = np.ascontiguousarray((x - self.center) @ tinv.T)
        self.m0 = tinv @ (np.asarray(prior.mean) - self.center)
        psi0 = tinv @ np.asarray(prior.scale) @ tinv.T
        self.psi0 = 0.5 * (psi0 + psi0.T)
        self.k0 = float(prior.kappa)
        self.nu0 = float(prior.dof)
        self.log_alpha = float(np.log(config.concentration))

        if labels is None:
            labels = np.zeros(n, dtype=np.int64)
        else:
            _, labels = np.unique(np.asarray(labels), return_inverse=True)
        self.labels = labels.astype(np.int64)
        self.counts = np.zeros(n + 1, dtype=np.int64)
        self.sums = np.zeros((n + 1, d))
        self.outers = np.zeros((n + 1, d, d))
        self.active = np.zeros(n + 1, dtype=np.int64)
        self.where = np.full(n + 1, -1, dtype=np.int64)
        self.nact = np.zeros(1, dtype=np.int64)
        self.free = np.zeros(n + 1, dtype=np.int64)
        self.nfree = np.zeros(1, dtype=np.int64)
        self.loc = np.zeros((n + 1, d))
        self.chol = np.zeros((n + 1, d, d))
        self.logc = np.zeros(n + 1)
        self.dof = np.zeros(n + 1)
        self._logp = np.zeros(n + 2)
        self.tconst = _gibbs.tconst_table(self.nu0, d, n)
        self.rebuild()

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def n_clusters(self):
        return int(self.nact[0])

    def _args(self):
        return (self.z, self.labels, self.counts, self.sums, self.outers, self.active,
                self.where, self.nact, self.free, self.nfree, self.loc, self.chol,
                self.logc, self.dof, self.m0, self.k0, self.nu0, self.psi0, self.tconst)

    def rebuild(self):
        """Recompute every sufficient statistic and cache from the labels."""
        _gibbs.init_cache(*self._args())

    def step(self, index, u):
        if not 0 <= index < self.n:
            raise IndexError(f"sample index {index} out of range")
        _gibbs.gibbs_step(index, u, *self._args(), self.log_alpha, self._logp)

    def sweep(self, rng, count=1):
        """Run ``count`` sweeps, each visiting the samples in a fresh random order."""
        orders = rng.permuted(np.broadcast_to(np.arange(self.n), (count, self.n)), axis=1)
        uniforms = rng.random((count, self.n))
        _gibbs.gibbs_sweeps(orders, uniforms, *self._args(), self.log_alpha, self._logp)

    def set_points(self, points):
        """Replace the data (same shape, same whitening) keeping the partition."""
        x = np.asarray(points, dtype=float).reshape(self.points.shape)
        self.points = x
        tinv = np.linalg.inv(self.transform)
        self.z = np.ascontiguousarray((x - self.center) @ tinv.T)
        self.rebuild()

    def partition(self):
        return canonical_partition(self.labels)

    def cluster_stats(self):
        """Occupied slots with their ``(count, sum, outer)`` statistics (whitened)."""
        slots = np.sort(self.active[: self.nact[0]])
        return slots, self.counts[slots], self.sums[slots], self.outers[slots]

    def mixture_draw(self, rng):
        """Sample an explicit mixture given the current partition."""
        slots, counts, sums, outers = self.cluster_stats()
        K = len(slots)
        d = self.z.shape[1]
        alpha = np.exp(self.log_alpha)
        weights = rng.dirichlet(counts + alpha / K)
        # tiny Dirichlet components can underflow to exactly zero
        weights = np.maximum(weights, 1e-300)
        weights = weights / weights.sum()
        kn = self.k0 + counts
        nun = self.nu0 + counts
        mn = (self.k0 * self.m0 + sums) / kn[:, None]
        psin = (self.psi0 + outers + self.k0 * np.outer(self.m0, self.m0)
                - kn[:, None, None] * np.einsum("ki,kj->kij", mn, mn))
        psin = 0.5 * (psin + np.swapaxes(psin, 1, 2))
        cov_w = sample_inv_wishart(rng, nun, psin)
        eps = rng.standard_normal((K, d))
        mean_w = mn + np.einsum("kij,kj->ki", np.linalg.cholesky(cov_w), eps) / np.sqrt(kn)[:, None]
        t = self.transform
        means = self.center + mean_w @ t.T
        covs = t @ cov_w @ t.T
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        return MixtureDraw(weights, means, covs)


def canonical_partition(labels):
    """Relabel cluster ids in order of first appearance (a hashable tuple)."""
    seen = {}
    return tuple(seen.setdefault(int(l), len(seen)) for l in labels)


def fit_dpgmm(samples, config=None, rng=None):
    """Fit a DPGMM to ``samples`` and return a :class:`DensityEstimate`.

    Parameters
    ----------
    samples : array_like, shape (n, d), or an object with a ``points`` attribute
    config : DpgmmConfig, optional
    rng : numpy.random.Generator, optional
        Defaults to ``make_rng(config.seed)``.
    """
    config = config or DpgmmConfig()
    x = as_points(samples)
    n, d = x.shape
    if n < 2 * d + 2:
        raise ValueError(f"need at least {2 * d + 2} samples in {d} dimensions, got {n}")
    if rng is None:
        rng = make_rng(config.seed)
    state = GibbsState(x, config)
    state.sweep(rng, config.burn_in)
    draws = []
    for _ in range(config.n_draws):
        state.sweep(rng, config.thinning)
        draws.append(state.mixture_draw(rng))
    return DensityEstimate(tuple(draws), n, config.fingerprint())


def mixture_logpdf(draw, x):
    """Log density of a :class:`MixtureDraw` at ``x``."""
    return draw.logpdf(x)


def crp_step(state, index, config=None, rng=None):
    """Reassign one sample of a :class:`GibbsState` in place and return it."""
    if config is not None and config.concentration != np.exp(state.log_alpha):
        state.log_alpha = float(np.log(config.concentration))
    rng = rng if rng is not None else np.random.default_rng()
    state.step(index, rng.random())
    return state


def _set_partitions(n):
    """Restricted-growth strings of length ``n``."""
    if n == 0:
        yield ()
        return

    def grow(prefix, m):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for k in range(m + 2):
            yield from grow(prefix + [k], max(m, k))

    yield from grow([0], 0)


def enumerate_partition_posterior(samples, config=None):
    """Exact posterior over all set partitions of ``samples`` (``n <= 8``).

    Returns a dict mapping canonical label tuples to probabilities.
    """
    config = config or DpgmmConfig()
    x = as_points(samples)
    n = len(x)
    if n > 8:
        raise ValueError(f"enumeration refused for n={n} > 8 (combinatorial explosion)")
    prior = config.prior if config.prior is not None else default_niw_prior(x)
    alpha = config.concentration
    cache = {}

    def block_logml(members):
        if members not in cache:
            cache[members] = niw_log_marginal(x[list(members)], prior)
        return cache[members]

    parts = list(_set_partitions(n))
    logp = np.empty(len(parts))
    for p_i, labels in enumerate(parts):
        blocks = {}
        for i, l in enumerate(labels):
            blocks.setdefault(l, []).append(i)
        lp = len(blocks) * np.log(alpha) + gammaln(alpha) - gammaln(alpha + n)
        for members in blocks.values():
            lp += gammaln(len(members)) + block_logml(tuple(members))
        logp[p_i] = lp
    prob = np.exp(logp - log_sum_exp(logp))
    prob /= prob.sum()
    return dict(zip(parts, prob.tolist()))


def predictive_logpdf(estimate, x, levels=(0.68, 0.9)):
    """Pointwise median and credible bands of the draw log densities.

    Parameters
    ----------
    estimate : DensityEstimate
    x : array_like
        Evaluation points, shape ``(n,)`` for 1-d estimates or ``(n, d)``.
    levels : sequence of float
        Central credible levels in (0, 1); level ``l`` gives the band between
        the ``(1 - l) / 2`` and ``(1 + l) / 2`` quantiles.

    Returns
    -------
    median : ndarray, shape (n,)
    bands : list of (lower, upper) ndarray pairs, one per level
    """
    if estimate is None or len(estimate.draws) == 0:
        raise ValueError("estimate has no draws")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any(levels <= 0) or np.any(levels >= 1):
        raise ValueError("levels must lie in (0, 1)")
    vals = estimate.logpdf_matrix(x)
    median = np.quantile(vals, 0.5, axis=0)
    bands = [
        (np.quantile(vals, 0.5 * (1 - lv), axis=0), np.quantile(vals, 0.5 * (1 + lv), axis=0))
        for lv in levels
    ]
    return median, bands
