"""Inference problems with known or oracle-computable evidence, samplers,
a nested-sampling oracle and the PP-plot calibration harness.

Likelihood and prior callables of a :class:`ProblemSpec` are vectorized:
they take an ``(n, d)`` array and return ``(n,)`` log values.
"""

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtri

from .dpgmm import DpgmmConfig, fit_dpgmm, predictive_logpdf
from .evidence import PipelineConfig, WeightedSampleSet, infer_log_evidence
from .probcore import (
    Nix2Params,
    gen_normal_logpdf,
    make_rng,
    mvn_logpdf,
    nix2_log_evidence,
    nix2_logpdf,
    nix2_posterior_update,
    student_t_logpdf,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec",
    "McmcConfig",
    "NsConfig",
    "PPResult",
    "neal_problem",
    "nix2_problem",
    "bivariate_params_problem",
    "model_pair_gaussian_gennormal",
    "generate_bivariate_dataset",
    "generate_gaussian_dataset",
    "load_fixture",
    "write_fixture",
    "weighted_samples",
    "metropolis_sample",
    "nested_sampling_log_evidence",
    "pp_band",
    "pp_quantile_check",
    "pp_realization",
    "pp_test",
    "student_t_tail_demo",
    "ns_gaussian_bayes_factor",
]

NEAL_DATUM = 2.0
NEAL_PRIOR_SD = 10.0
NIX2_DATA = (-3.0, 7.0)
NIX2_PRIOR = Nix2Params(0.0, 0.1, 1.0, 1.0)
BIVARIATE_BOUNDS = np.array([[-5.0, 5.0], [-5.0, 5.0], [0.0, 10.0], [0.0, 10.0], [-1.0, 1.0]])
GAUSSIAN_BOUNDS = np.array([[-5.0, 5.0], [0.0, 10.0]])
GENNORMAL_BOUNDS = np.array([[-5.0, 5.0], [0.0, 10.0], [0.5, 5.0]])

# fixture datasets shipped with the package
BIVARIATE_SEED = 3033
GAUSSIAN_SEED = 4044


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Likelihood, prior and reference information of an inference problem.

    ``log_params`` lists coordinates that are strictly positive; samplers
    and quadrature work on their logarithm. ``prior_transform`` maps the
    unit hypercube onto the prior; it is derived from ``bounds`` for uniform
    priors.
    """

    name: str
    dim: int
    log_likelihood: object
    log_prior: object
    prior_sampler: object = None
    bounds: np.ndarray = None
    log_evidence: float = None
    posterior_sampler: object = None
    prior_transform: object = None
    log_params: tuple = ()
    names: tuple = None
    check_prior: bool = True

    def __post_init__(self):
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(self.dim, 2)
            object.__setattr__(self, "bounds", b)
            if self.prior_transform is None:
                object.__setattr__(self, "prior_transform", lambda u: b[:, 0] + u * (b[:, 1] - b[:, 0]))
            if self.prior_sampler is None:
                object.__setattr__(
                    self, "prior_sampler", lambda rng, size: b[:, 0] + rng.random((size, self.dim)) * (b[:, 1] - b[:, 0])
                )
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{i}" for i in range(self.dim)))
        if self.check_prior and self.dim <= 2:
            mass = prior_mass(self)
            if abs(mass - 1.0) > 1e-2:
                raise ValueError(f"{self.name}: prior integrates to {mass:.4f}, not 1")

    def log_posterior(self, x):
        """Unnormalized log posterior, ``-inf`` outside the prior support."""
        x = np.atleast_2d(x)
        lp = np.asarray(self.log_prior(x), dtype=float)
        out = np.full(len(x), -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = lp[ok] + np.asarray(self.log_likelihood(x[ok]), dtype=float)
        out[np.isnan(out)] = -np.inf
        return out


def _quad_ranges(problem):
    """Integration variables: bounded dims as-is, positive dims on log scale."""
    ranges = []
    for k in range(problem.dim):
        if k in problem.log_params:
            lo = -np.inf
            hi = np.log(problem.bounds[k, 1]) if problem.bounds is not None else np.inf
        elif problem.bounds is not None:
            lo, hi = problem.bounds[k]
        else:
            lo, hi = -np.inf, np.inf
        ranges.append((lo, hi))
    return ranges


def _quad(problem, logf, shift=0.0, epsrel=1e-9):
    """Integrate ``exp(logf(x) - shift)`` over the problem domain (dim <= 2)."""
    ranges = _quad_ranges(problem)
    logs = np.array([k in problem.log_params for k in range(problem.dim)])

    def f(*y):
        y = np.array(y[::-1]) if problem.dim == 2 else np.array(y)
        with np.errstate(over="ignore"):
            x = np.where(logs, np.exp(y), y)
        jac = np.sum(y[logs])
        val = logf(x[None, :])[0] + jac - shift
        return float(np.exp(val)) if np.isfinite(val) else 0.0

    opts = dict(epsabs=0.0, epsrel=epsrel, limit=200)
    if problem.dim == 1:
        (lo, hi), = ranges
        return integrate.quad(f, lo, hi, **opts)[0]
    (lo0, hi0), (lo1, hi1) = ranges
    return integrate.nquad(lambda y1, y0: f(y1, y0), [(lo1, hi1), (lo0, hi0)],
                           opts=[opts, opts])[0]


def prior_mass(problem):
    return _quad(problem, problem.log_prior, epsrel=1e-4)


def quadrature_log_evidence(problem, shift=None):
    """Log evidence by adaptive quadrature (dim <= 2)."""
    if problem.dim > 2:
        raise ValueError("quadrature oracle limited to dim <= 2")
    if shift is None:
        shift = float(problem.log_evidence or 0.0)
    return float(np.log(_quad(problem, problem.log_posterior, shift)) + shift)


def neal_problem():
    """Mean of a unit-variance Gaussian from one datum ``s = 2`` with a
    ``N(0, 10)`` prior."""
    s, sd0 = NEAL_DATUM, NEAL_PRIOR_SD
    post_var = 1.0 / (1.0 + 1.0 / sd0**2)
    post_mean = s * post_var

    def log_l(x):
        return stats.norm.logpdf(s, np.asarray(x)[:, 0], 1.0)

    def log_pi(x):
        return stats.norm.logpdf(np.asarray(x)[:, 0], 0.0, sd0)

    return ProblemSpec(
        name="neal",
        dim=1,
        log_likelihood=log_l,
        log_prior=log_pi,
        prior_sampler=lambda rng, size: rng.normal(0.0, sd0, (size, 1)),
        log_evidence=mvn_logpdf([s], [0.0], [[1.0 + sd0**2]]),
        posterior_sampler=lambda rng, size: rng.normal(post_mean, np.sqrt(post_var), (size, 1)),
        prior_transform=lambda u: sd0 * ndtri(u),
        names=("t",),
    )


def _sample_nix2(params, rng, size):
    sigmasq = params.nu0 * params.sigma0sq / rng.chisquare(params.nu0, size)
    mu = rng.normal(params.mu0, np.sqrt(sigmasq / params.kappa0))
    return np.column_stack([mu, sigmasq])


def nix2_problem(data=NIX2_DATA, prior=NIX2_PRIOR):
    """Mean and variance of a Gaussian from ``data`` with a NIχ² prior."""
    data = np.asarray(data, dtype=float)
    post = nix2_posterior_update(prior, data)

    def log_l(x):
        x = np.asarray(x)
        mu, var = x[:, :1], x[:, 1:2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.sum(-0.5 * np.log(2 * np.pi * var) - 0.5 * (data - mu) ** 2 / var, axis=1)
        return np.where(x[:, 1] > 0, out, -np.inf)

    def log_pi(x):
        x = np.asarray(x)
        out = np.full(len(x), -np.inf)
        ok = x[:, 1] > 0
        out[ok] = nix2_logpdf(x[ok, 0], x[ok, 1], prior)
        return out

    def transform(u):
        sigmasq = prior.nu0 * prior.sigma0sq / stats.chi2.isf(u[..., 1], prior.nu0)
        mu = prior.mu0 + np.sqrt(sigmasq / prior.kappa0) * ndtri(u[..., 0])
        return np.stack([mu, sigmasq], axis=-1)

    return ProblemSpec(
        name="nix2",
        dim=2,
        log_likelihood=log_l,
        log_prior=log_pi,
        prior_sampler=lambda rng, size: _sample_nix2(prior, rng, size),
        log_evidence=nix2_log_evidence(prior, data),
        posterior_sampler=lambda rng, size: _sample_nix2(post, rng, size),
        prior_transform=transform,
        log_params=(1,),
        names=("mu", "sigmasq"),
    )


def generate_bivariate_dataset(seed=BIVARIATE_SEED, n=100, mean=(0.5, -1.0), sd=(1.5, 0.8), rho=0.6):
    """``n`` draws from a bivariate Gaussian with the given parameters."""
    cov = np.array([[sd[0] ** 2, rho * sd[0] * sd[1]], [rho * sd[0] * sd[1], sd[1] ** 2]])
    return make_rng(seed).multivariate_normal(mean, cov, size=n)


def generate_gaussian_dataset(seed=GAUSSIAN_SEED, n=100, mean=0.3, sd=1.2):
    return make_rng(seed).normal(mean, sd, size=n)


def write_fixture(path, data, seed):
    data = np.asarray(data, dtype=float)
    data = data[:, None] if data.ndim == 1 else data
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow([f"s{i + 1}" for i in range(data.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in data])


def load_fixture(name):
    """Load a packaged fixture (``"bivariate"`` or ``"gaussian"``) and its seed."""
    text = resources.files("hierevidence").joinpath("data", f"{name}.csv").read_text()
    return _parse_fixture(text.splitlines())


def _parse_fixture(lines):
    seed = None
    rows = []
    for line in lines:
        if line.startswith("#"):
            if "seed=" in line:
                seed = int(line.split("seed=")[1].strip())
            continue
        rows.append(line)
    body = list(csv.reader(rows))[1:]
    data = np.array([[float(v) for v in r] for r in body])
    return (data[:, 0] if data.shape[1] == 1 else data), seed


def _bivariate_loglike(data):
    s1, s2 = data[:, 0], data[:, 1]
    n = len(data)

    def log_l(x):
        x = np.atleast_2d(x)
        m1, m2, sd1, sd2, rho = (x[:, k : k + 1] for k in range(5))
        with np.errstate(divide="ignore", invalid="ignore"):
            one_m = 1.0 - rho**2
            z1 = (s1 - m1) / sd1
            z2 = (s2 - m2) / sd2
            q = (z1**2 - 2 * rho * z1 * z2 + z2**2) / one_m
            out = (
                -n * (np.log(2 * np.pi) + np.log(sd1[:, 0]) + np.log(sd2[:, 0]) + 0.5 * np.log(one_m[:, 0]))
                - 0.5 * np.sum(q, axis=1)
            )
        valid = (sd1[:, 0] > 0) & (sd2[:, 0] > 0) & (np.abs(rho[:, 0]) < 1)
        out = np.where(valid & np.isfinite(out), out, -np.inf)
        return out

    return log_l


def _uniform_log_prior(bounds):
    log_vol = -np.sum(np.log(bounds[:, 1] - bounds[:, 0]))

    def log_pi(x):
        x = np.atleast_2d(x)
        inside = np.all((x >= bounds[:, 0]) & (x <= bounds[:, 1]), axis=1)
        return np.where(inside, log_vol, -np.inf)

    return log_pi


def bivariate_params_problem(dataset=None):
    """Means, standard deviations and correlation of a bivariate Gaussian
    from 100 points, uniform prior on ``[-5,5]^2 x [0,10]^2 x [-1,1]``."""
    if dataset is None:
        dataset, _ = load_fixture("bivariate")
    data = np.asarray(dataset, dtype=float)
    if data.shape != (100, 2):
        raise ValueError(f"dataset must hold 100 points of dim 2, got shape {data.shape}")
    return ProblemSpec(
        name="bivariate",
        dim=5,
        log_likelihood=_bivariate_loglike(data),
        log_prior=_uniform_log_prior(BIVARIATE_BOUNDS),
        bounds=BIVARIATE_BOUNDS,
        log_params=(2, 3),
        names=("mu1", "mu2", "sigma1", "sigma2", "rho"),
    )


def model_pair_gaussian_gennormal(dataset=None):
    """Gaussian ``(mu, sigma)`` and generalised-normal ``(mu, alpha, beta)``
    models for the same scalar dataset, both with uniform priors."""
    if dataset is None:
        dataset, _ = load_fixture("gaussian")
    s = np.asarray(dataset, dtype=float).ravel()

    def log_l_n(x):
        x = np.atleast_2d(x)
        mu, sd = x[:, :1], x[:, 1:2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.sum(-0.5 * np.log(2 * np.pi) - np.log(sd) - 0.5 * ((s - mu) / sd) ** 2, axis=1)
        return np.where(x[:, 1] > 0, out, -np.inf)

    def log_l_gn(x):
        x = np.atleast_2d(x)
        mu, alpha, beta = x[:, :1], x[:, 1:2], x[:, 2:3]
        ok = (x[:, 1] > 0) & (x[:, 2] > 0)
        out = np.full(len(x), -np.inf)
        if np.any(ok):
            out[ok] = np.sum(gen_normal_logpdf(s, mu[ok], alpha[ok], beta[ok]), axis=1)
        return out

    h_n = ProblemSpec(
        name="gaussian",
        dim=2,
        log_likelihood=log_l_n,
        log_prior=_uniform_log_prior(GAUSSIAN_BOUNDS),
        bounds=GAUSSIAN_BOUNDS,
        log_params=(1,),
        names=("mu", "sigma"),
    )
    h_gn = ProblemSpec(
        name="gennormal",
        dim=3,
        log_likelihood=log_l_gn,
        log_prior=_uniform_log_prior(GENNORMAL_BOUNDS),
        bounds=GENNORMAL_BOUNDS,
        log_params=(1,),
        names=("mu", "alpha", "beta"),
    )
    return h_n, h_gn


def weighted_samples(problem, points):
    """Attach log-likelihood and log-prior values to ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return WeightedSampleSet(
        points, problem.log_likelihood(points), problem.log_prior(points), problem.names
    )


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    steps: int = 20000
    burn_in: int = 5000
    thin: int = 1
    target_acceptance: float = 0.234
    adaptation_window: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if self.chains < 1 or self.thin < 1 or self.adaptation_window < 1:
            raise ValueError("chains, thin and adaptation_window must be positive")


def metropolis_sample(problem, config=None, rng=None):
    """Adaptive random-walk Metropolis; returns post-burn-in samples.

    All chains advance in lockstep so that each step is one vectorized
    posterior evaluation. During burn-in the proposal covariance tracks the
    empirical chain covariance (refreshed every ``adaptation_window`` steps)
    and its scale follows a Robbins-Monro recursion towards the target
    acceptance; afterwards the proposal is frozen. Positive coordinates
    (``problem.log_params``) are sampled on log scale.

    Returns
    -------
    WeightedSampleSet
        Chains concatenated; the realized acceptance rate is available as
        the ``acceptance`` attribute of the returned object.
    """
    config = config or McmcConfig()
    rng = rng if rng is not None else make_rng(config.seed)
    d, C = problem.dim, config.chains
    logs = np.zeros(d, dtype=bool)
    logs[list(problem.log_params)] = True

    def to_x(y):
        return np.where(logs, np.exp(y), y)

    def target(y):
        return problem.log_posterior(to_x(y)) + np.sum(np.where(logs, y, 0.0), axis=1)

    y = np.empty((C, d))
    for c in range(C):
        for _ in range(100):
            x0 = problem.prior_sampler(rng, 1)[0]
            if problem.posterior_sampler is None and problem.bounds is not None:
                # start inside the prior but away from hard edges
                x0 = problem.bounds[:, 0] + (0.25 + 0.5 * rng.random(d)) * np.diff(problem.bounds, axis=1)[:, 0]
            if np.all(x0[logs] > 0):
                yc = np.where(logs, np.log(np.where(logs, x0, 1.0)), x0)
                if np.isfinite(target(yc[None])[0]):
                    y[c] = yc
                    break
        else:
            raise SamplerError(f"{problem.name}: no start point with positive posterior after 100 tries")

    logp = target(y)
    cov = np.eye(d) * 0.01
    scale = 2.38**2 / d
    hist = []
    kept = []
    accepted = 0
    n_post = 0
    for t in range(config.steps):
        chol = np.linalg.cholesky(scale * cov + 1e-12 * np.eye(d))
        prop = y + rng.standard_normal((C, d)) @ chol.T
        lp_prop = target(prop)
        acc = np.log(rng.random(C)) < lp_prop - logp
        y[acc] = prop[acc]
        logp[acc] = lp_prop[acc]
        if t < config.burn_in:
            rate = acc.mean()
            scale *= np.exp((rate - config.target_acceptance) / np.sqrt(t / config.adaptation_window + 1.0))
            hist.append(y.copy())
            if (t + 1) % config.adaptation_window == 0:
                h = np.concatenate(hist[len(hist) // 2 :])
                emp = np.atleast_2d(np.cov(h, rowvar=False))
                if np.all(np.isfinite(emp)) and np.linalg.eigvalsh(emp).min() > 0:
                    cov = emp
        else:
            accepted += acc.sum()
            n_post += C
            if (t - config.burn_in) % config.thin == 0:
                kept.append(y.copy())
    pts = to_x(np.concatenate([np.asarray(k)[None] for k in kept], axis=0).transpose(1, 0, 2).reshape(-1, d))
    out = weighted_samples(problem, pts)
    object.__setattr__(out, "acceptance", accepted / max(n_post, 1))
    return out


@dataclass(frozen=True)
class NsConfig:
    live_points: int = 1000
    dlogz: float = 0.01
    max_iterations: int = 1_000_000
    batch: int = 256
    max_tries: int = 2000
    enlarge: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.live_points < 50:
            raise ValueError("live_points must be at least 50")


def _slice_replace(fn, start, logl_min, rng, width=0.1, steps=20):
    """Coordinate-wise slice sampling with step-out inside the unit cube."""
    u = start.copy()
    d = len(u)
    evals = 0
    for _ in range(steps):
        for k in rng.permutation(d):
            lo = u[k] - width * rng.random()
            hi = lo + width
            while lo > 0:
                v = u.copy(); v[k] = lo; evals += 1
                if fn(v[None])[0] <= logl_min:
                    break
                lo -= width
            while hi < 1:
                v = u.copy(); v[k] = hi; evals += 1
                if fn(v[None])[0] <= logl_min:
                    break
                hi += width
            lo, hi = max(lo, 0.0), min(hi, 1.0)
            for _ in range(100):
                v = u.copy(); v[k] = lo + (hi - lo) * rng.random(); evals += 1
                if fn(v[None])[0] > logl_min:
                    u = v
                    break
                if v[k] < u[k]:
                    lo = v[k]
                else:
                    hi = v[k]
    return u, fn(u[None])[0], evals


def nested_sampling_log_evidence(problem, config=None, rng=None):
    """Log evidence by classic nested sampling.

    Live points live in the unit hypercube mapped through
    ``problem.prior_transform``. A replacement is drawn by rejection from the
    enlarged bounding box of the live points, falling back to slice sampling
    from a random live point. Prior-mass shells use the trapezoid rule.

    Returns
    -------
    log_z : float
    err : float
        ``sqrt(H / live_points)`` with ``H`` the information.
    """
    config = config or NsConfig()
    if problem.prior_transform is None:
        raise ValueError(f"{problem.name}: nested sampling needs bounds or a prior transform")
    if problem.dim > 8:
        raise ValueError("nested-sampling oracle limited to dim <= 8")
    rng = rng if rng is not None else make_rng(config.seed)
    d, nlive = problem.dim, config.live_points
    eps = 1e-12

    def loglike_u(u):
        x = problem.prior_transform(np.clip(u, eps, 1 - eps))
        out = np.asarray(problem.log_likelihood(np.atleast_2d(x)), dtype=float)
        return np.where(np.isnan(out), -np.inf, out)

    live_u = rng.random((nlive, d))
    live_l = loglike_u(live_u)
    log_z = -np.inf
    h = 0.0
    log_x_prev = 0.0
    done = 0
    for it in range(1, config.max_iterations + 1):
        if np.max(live_l) == np.min(live_l):
            # flat likelihood over the live set: the remaining mass is exact
            break
        worst = int(np.argmin(live_l))
        logl_min = live_l[worst]
        done = it
        log_x = -it / nlive
        # trapezoid: (X_{i-1} - X_{i+1}) / 2
        log_w = log_x_prev + np.log(0.5 * (1.0 - np.exp(-2.0 / nlive)))
        log_wl = log_w + logl_min
        log_z_new = np.logaddexp(log_z, log_wl)
        if np.isfinite(log_wl):
            h = (np.exp(log_wl - log_z_new) * logl_min
                 + (np.exp(log_z - log_z_new) * (h + log_z) if np.isfinite(log_z) else 0.0)
                 - log_z_new)
        log_z = log_z_new
        log_x_prev = log_x

        lo = live_u.min(axis=0)
        hi = live_u.max(axis=0)
        pad = config.enlarge * (hi - lo)
        lo, hi = np.maximum(lo - pad, 0.0), np.minimum(hi + pad, 1.0)
        new = None
        for _ in range(config.max_tries):
            cand = lo + rng.random((config.batch, d)) * (hi - lo)
            cl = loglike_u(cand)
            ok = np.flatnonzero(cl > logl_min)
            if ok.size:
                new = (cand[ok[0]], cl[ok[0]])
                break
            if _ >= 20:
                start = live_u[rng.choice(np.flatnonzero(live_l > logl_min))] if np.any(live_l > logl_min) else None
                if start is not None:
                    u_new, l_new, _n = _slice_replace(loglike_u, start, logl_min, rng)
                    if l_new > logl_min:
                        new = (u_new, l_new)
                        break
        if new is None:
            raise SamplerError(
                f"{problem.name}: cannot replace live point above log L = {logl_min:.6g} "
                "(likelihood plateau?)"
            )
        live_u[worst], live_l[worst] = new

        remaining = np.max(live_l) + log_x
        if np.logaddexp(log_z, remaining) - log_z < config.dlogz:
            break

    log_x_final = -done / nlive
    lmax = np.max(live_l)
    log_live = lmax + np.log(np.mean(np.exp(live_l - lmax))) + log_x_final
    log_z_new = np.logaddexp(log_z, log_live)
    # information contribution of the final live points
    w = np.exp(live_l - lmax)
    w /= w.sum()
    mean_l = float(np.sum(w * live_l))
    prior_part = np.exp(log_z - log_z_new) * (h + log_z) if np.isfinite(log_z) else 0.0
    h = np.exp(log_live - log_z_new) * mean_l + prior_part - log_z_new
    log_z = log_z_new
    return float(log_z), float(np.sqrt(max(h, 0.0) / nlive))


def ns_gaussian_bayes_factor(ns_a, ns_b, levels=(0.9,)):
    """Gaussian approximation of ``log B`` from two ``(log_z, err)`` pairs."""
    mean = ns_a[0] - ns_b[0]
    sd = float(np.hypot(ns_a[1], ns_b[1]))
    bands = [tuple(stats.norm.interval(lv, mean, sd)) for lv in levels]
    return mean, sd, bands


def pp_band(n, grid, level=0.9, simultaneous=False, rng=None, n_sim=4000):
    """Band for the empirical CDF of ``n`` calibrated quantiles at ``grid``.

    The count below ``p`` of ``n`` uniform quantiles is Binomial(n, p); its
    ``(1 -+ level) / 2`` quantiles (through the binomial-beta identity) give
    a pointwise band. With ``simultaneous=True`` the pointwise level is
    raised, by Monte Carlo, until the whole curve stays inside with
    probability ``level``.
    """
    grid = np.asarray(grid, dtype=float)
    if not simultaneous:
        a = 0.5 * (1 - level)
        return stats.binom.ppf(a, n, grid) / n, stats.binom.ppf(1 - a, n, grid) / n
    rng = rng if rng is not None else make_rng(0)
    sims = np.sort(rng.random((n_sim, n)), axis=1)
    cdfs = np.stack([np.searchsorted(s, grid, side="right") / n for s in sims])
    lo_lv, hi_lv = level, 1.0 - 1e-6
    for _ in range(40):
        mid = 0.5 * (lo_lv + hi_lv)
        lo, hi = pp_band(n, grid, mid)
        cover = np.mean(np.all((cdfs >= lo) & (cdfs <= hi), axis=1))
        lo_lv, hi_lv = (lo_lv, mid) if cover >= level else (mid, hi_lv)
    return pp_band(n, grid, hi_lv)


@dataclass(frozen=True, eq=False)
class PPResult:
    quantiles: np.ndarray
    band_check: bool
    ks_pvalue: float
    grid: np.ndarray
    ecdf: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    medians: np.ndarray = field(default=None)
    low_power: bool = False


def pp_quantile_check(quantiles, level=0.9, simultaneous=False, grid_points=101):
    q = np.sort(np.asarray(quantiles, dtype=float))
    grid = np.linspace(0.0, 1.0, grid_points)
    ecdf = np.searchsorted(q, grid, side="right") / len(q)
    lo, hi = pp_band(len(q), grid, level, simultaneous)
    inside = bool(np.all((ecdf >= lo - 1e-12) & (ecdf <= hi + 1e-12)))
    ks = float(stats.kstest(q, "uniform").pvalue)
    return PPResult(q, inside, ks, grid, ecdf, lo, hi, low_power=len(q) < 20)


def pp_realization(problem, seed, config=None, n_samples=3000):
    """One calibration realization: fresh analytic posterior samples, full
    inference, and the posterior CDF at the true ``log Z``.

    Returns ``(quantile, median)``.
    """
    sub = make_rng(int(seed))
    samples = weighted_samples(problem, problem.posterior_sampler(sub, n_samples))
    post = infer_log_evidence(samples, config or PipelineConfig(), sub)
    return post.cdf(problem.log_evidence), post.median


def pp_seeds(rng, realizations):
    return [int(v) for v in rng.integers(0, 2**63 - 1, size=realizations)]


def pp_test(problem, realizations=100, config=None, rng=None, n_samples=3000,
            level=0.9, simultaneous=False, progress=None):
    """Calibration of the evidence posterior over repeated realizations.

    Every realization draws fresh samples from the analytic posterior, runs
    the full inference and records the posterior CDF at the true ``log Z``.
    The empirical CDF of these quantiles is checked against a ``level`` band
    (pointwise unless ``simultaneous``) and a KS test against Uniform(0, 1).
    """
    if problem.log_evidence is None or problem.posterior_sampler is None:
        raise ValueError(f"{problem.name}: pp_test needs an analytic evidence and posterior sampler")
    rng = rng if rng is not None else make_rng(0)
    qs, meds = [], []
    for r, seed in enumerate(pp_seeds(rng, realizations)):
        q, med = pp_realization(problem, seed, config, n_samples)
        qs.append(q)
        meds.append(med)
        if progress is not None:
            progress(r, q, med)
    res = pp_quantile_check(qs, level, simultaneous)
    return PPResult(res.quantiles, res.band_check, res.ks_pvalue, res.grid, res.ecdf,
                    res.lower, res.upper, np.asarray(meds), res.low_power)


def student_t_tail_demo(sample_count=10_000, rng=None, dof=10.0, grid=None, config=None):
    """DPGMM reconstruction of a Student-t from samples, for a tail diagnostic.

    Returns a dict of plot-ready columns: ``x``, ``truth_logpdf``,
    ``median_logpdf``, ``lo68``, ``hi68``, ``lo90``, ``hi90``, plus the
    ``sample_max`` of ``|samples|``.
    """
    rng = rng if rng is not None else make_rng(0)
    samples = rng.standard_t(dof, size=sample_count)
    est = fit_dpgmm(samples[:, None], config or DpgmmConfig(), rng)
    if grid is None:
        grid = np.linspace(-10.0, 10.0, 401)
    median, ((lo68, hi68), (lo90, hi90)) = predictive_logpdf(est, grid, (0.68, 0.9))
    return {
        "x": grid,
        "truth_logpdf": student_t_logpdf(grid, dof),
        "median_logpdf": median,
        "lo68": lo68,
        "hi68": hi68,
        "lo90": lo90,
        "hi90": hi90,
        "sample_max": float(np.max(np.abs(samples))),
    }
