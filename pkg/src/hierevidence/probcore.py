"""Log-space probability primitives, standard densities and the
normal-inverse-chi-squared conjugate model.

Every density here returns natural-log values. Point arguments may be a
single point of shape ``(d,)`` or a stack of points of shape ``(n, d)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

LOG_2PI = np.log(2.0 * np.pi)

__all__ = [
    "NotPositiveDefiniteError",
    "Nix2Params",
    "make_rng",
    "log_sum_exp",
    "as_spd",
    "cholesky_jitter",
    "mvn_logpdf",
    "student_t_logpdf",
    "gen_normal_logpdf",
    "nix2_posterior_update",
    "nix2_logpdf",
    "nix2_log_evidence",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factorized even after jitter."""


def make_rng(seed, stream=0):
    """Return a :class:`numpy.random.Generator` for ``(seed, stream)``.

    Identical ``(seed, stream)`` pairs give identical draw sequences and
    distinct streams are statistically independent.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def log_sum_exp(values, axis=None):
    """Numerically stable ``log(sum(exp(values)))``.

    Entries equal to ``-inf`` are absorbed; if every entry is ``-inf`` the
    result is ``-inf``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty sequence is undefined")
    if np.any(np.isnan(values)) or np.any(values == np.inf):
        raise ValueError("log_sum_exp requires entries in [-inf, +inf)")
    with np.errstate(divide="ignore"):
        out = logsumexp(values, axis=axis)
    return out if np.ndim(out) else float(out)


def as_spd(cov, dim=None):
    """Validate ``cov`` as a symmetric matrix and return it as an array."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if dim is not None and cov.shape[0] != dim:
        raise ValueError(f"covariance has dim {cov.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(cov)):
        raise NotPositiveDefiniteError("covariance has non-finite entries")
    scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise NotPositiveDefiniteError("covariance is not symmetric")
    return cov


def cholesky_jitter(cov, jitter=1e-10, attempts=3):
    """Lower Cholesky factor of ``cov``, adding diagonal jitter if needed.

    The jitter starts at ``jitter * trace / dim`` and grows tenfold per
    attempt.
    """
    cov = as_spd(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    d = cov.shape[0]
    base = jitter * abs(np.trace(cov)) / d
    eye = np.eye(d)
    for k in range(attempts):
        try:
            return np.linalg.cholesky(cov + base * 10.0**k * eye)
        except np.linalg.LinAlgError:
            continue
    eig = np.linalg.eigvalsh(cov)
    raise NotPositiveDefiniteError(
        f"covariance is not positive definite (min eigenvalue {eig.min():.3g}, "
        f"{attempts} jitter attempts from {base:.3g})"
    )


def mvn_logpdf(x, mean, cov):
    """Log density of the multivariate normal ``N(x | mean, cov)``.

    Parameters
    ----------
    x : array_like, shape (d,) or (n, d)
    mean : array_like, shape (d,)
    cov : array_like, shape (d, d)

    Returns
    -------
    float or ndarray of shape (n,)
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.shape[0]
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = np.atleast_2d(x.reshape(-1, d) if x.ndim <= 1 else x)
    if x.shape[-1] != d:
        raise ValueError(f"point dim {x.shape[-1]} does not match mean dim {d}")
    chol = cholesky_jitter(as_spd(cov, d))
    z = np.linalg.solve(chol, (x - mean).T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * LOG_2PI + logdet + maha)
    return float(out[0]) if single else out


def student_t_logpdf(x, dof, loc=0.0, scale=1.0):
    """Log density of the location-scale Student-t distribution."""
    if not dof > 0 or not scale > 0:
        raise ValueError(f"dof and scale must be positive, got {dof}, {scale}")
    z = (np.asarray(x, dtype=float) - loc) / scale
    out = (
        gammaln(0.5 * (dof + 1.0))
        - gammaln(0.5 * dof)
        - 0.5 * np.log(dof * np.pi)
        - np.log(scale)
        - 0.5 * (dof + 1.0) * np.log1p(z * z / dof)
    )
    return out if np.ndim(out) else float(out)


def gen_normal_logpdf(s, mu, alpha, beta):
    """Log density of the generalised normal distribution.

    Uses the normalized form ``beta / (2 alpha Gamma(1/beta)) *
    exp(-(|s - mu| / alpha)**beta)``: ``beta=2, alpha=sqrt(2)*sigma`` is a
    Gaussian and ``beta=1`` a Laplace distribution.
    """
    if np.any(np.asarray(alpha) <= 0) or np.any(np.asarray(beta) <= 0):
        raise ValueError("alpha and beta must be positive")
    z = np.abs(np.asarray(s, dtype=float) - mu) / alpha
    out = np.log(beta) - np.log(2.0 * alpha) - gammaln(1.0 / beta) - z**beta
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class Nix2Params:
    """Normal-inverse-chi-squared parameters ``(mu0, kappa0, nu0, sigma0sq)``."""

    mu0: float
    kappa0: float
    nu0: float
    sigma0sq: float

    def __post_init__(self):
        if not (self.kappa0 > 0 and self.nu0 > 0 and self.sigma0sq > 0):
            raise ValueError(f"kappa0, nu0 and sigma0sq must be positive: {self}")


def _as_data(data):
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise ValueError("at least one datum is required")
    return data


def nix2_posterior_update(prior, data):
    """Conjugate update of a :class:`Nix2Params` prior with Gaussian data."""
    data = _as_data(data)
    n = data.size
    xbar = data.mean()
    kappa_n = prior.kappa0 + n
    nu_n = prior.nu0 + n
    mu_n = (prior.kappa0 * prior.mu0 + n * xbar) / kappa_n
    scatter = np.sum((data - xbar) ** 2)
    shrink = n * prior.kappa0 / kappa_n * (xbar - prior.mu0) ** 2
    sigmasq_n = (prior.nu0 * prior.sigma0sq + scatter + shrink) / nu_n
    return Nix2Params(float(mu_n), float(kappa_n), float(nu_n), float(sigmasq_n))


def nix2_logpdf(mu, sigmasq, params):
    """Log density of NIχ²(mu, sigmasq | params).

    This is ``N(mu | mu0, sigmasq / kappa0)`` times the scaled inverse
    chi-squared density of ``sigmasq`` with ``nu0`` degrees of freedom and
    scale ``sigma0sq``.
    """
    mu = np.asarray(mu, dtype=float)
    sigmasq = np.asarray(sigmasq, dtype=float)
    if np.any(~(sigmasq > 0)):
        raise ValueError("sigmasq must be positive")
    nu, s2, kappa = params.nu0, params.sigma0sq, params.kappa0
    log_chi = (
        0.5 * nu * np.log(0.5 * nu)
        - gammaln(0.5 * nu)
        + 0.5 * nu * np.log(s2)
        - (0.5 * nu + 1.0) * np.log(sigmasq)
        - 0.5 * nu * s2 / sigmasq
    )
    log_norm = (
        -0.5 * (LOG_2PI + np.log(sigmasq / kappa))
        - 0.5 * kappa * (mu - params.mu0) ** 2 / sigmasq
    )
    out = log_chi + log_norm
    return out if out.ndim else float(out)


def nix2_log_evidence(prior, data):
    """Analytic log marginal likelihood of Gaussian ``data`` under NIχ²."""
    data = _as_data(data)
    post = nix2_posterior_update(prior, data)
    n = data.size
    return float(
        gammaln(0.5 * post.nu0)
        - gammaln(0.5 * prior.nu0)
        + 0.5 * (np.log(prior.kappa0) - np.log(post.kappa0))
        + 0.5 * prior.nu0 * np.log(prior.nu0 * prior.sigma0sq)
        - 0.5 * post.nu0 * np.log(post.nu0 * post.sigma0sq)
        - 0.5 * n * np.log(np.pi)
    )
