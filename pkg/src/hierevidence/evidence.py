"""Evidence inference from posterior samples.

The hierarchical pipeline (:func:`infer_log_evidence`):

1. reconstruct the normalized posterior with a DPGMM (draws ``theta_j``);
2. pick random samples among the highest-posterior fraction and turn each
   one into a group ``log Z_ij = log L(x_i) + log pi(x_i) - log DPGMM(x_i | theta_j)``;
3. reconstruct the distribution of every group with a 1-d DPGMM;
4. combine the groups with a hierarchical DPGMM into a density for ``log Z``.

Harmonic-mean baselines and Bayes-factor posteriors live here as well.
"""

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .dpgmm import DensityEstimate, DpgmmConfig, _fingerprint, as_points, fit_dpgmm
from .hdpgmm import EventSampleSet, HdpgmmConfig, fit_hdpgmm, fit_inner
from .probcore import log_sum_exp, make_rng

logger = logging.getLogger(__name__)

__all__ = [
    "InputError",
    "PipelineError",
    "SupportError",
    "WeightedSampleSet",
    "ZhatGroup",
    "EvidencePosterior",
    "PipelineConfig",
    "select_bulk_subset",
    "zhat_group",
    "zhat_groups",
    "infer_log_evidence",
    "harmonic_mean_log_evidence",
    "retargeted_harmonic_mean_log_evidence",
    "bayes_factor_posterior",
    "read_samples_csv",
    "write_samples_csv",
]

LOG_L_COLUMN = "log_likelihood"
LOG_PI_COLUMN = "log_prior"
MIN_GROUP = 4


class InputError(ValueError):
    """Malformed user input (e.g. a sample file); carries a location hint."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SupportError(ValueError):
    """The stabilizing density violates the support condition."""


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Posterior samples with their log-likelihood and log-prior values."""

    points: np.ndarray
    log_l: np.ndarray
    log_pi: np.ndarray
    names: tuple = None

    def __post_init__(self):
        pts = as_points(self.points)
        log_l = np.asarray(self.log_l, dtype=float).ravel()
        log_pi = np.asarray(self.log_pi, dtype=float).ravel()
        if not (len(pts) == len(log_l) == len(log_pi)):
            raise ValueError("points, log_l and log_pi must have equal lengths")
        if len(pts) == 0:
            raise ValueError("empty sample set")
        if not (np.all(np.isfinite(log_l)) and np.all(np.isfinite(log_pi))):
            raise ValueError("log_l and log_pi must be finite for every sample")
        for name, val in (("points", pts), ("log_l", log_l), ("log_pi", log_pi)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{i}" for i in range(pts.shape[1])))

    def __len__(self):
        return len(self.log_l)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def log_post(self):
        """Unnormalized log posterior ``log L + log pi``."""
        return self.log_l + self.log_pi

    def subset(self, idx):
        return WeightedSampleSet(self.points[idx], self.log_l[idx], self.log_pi[idx], self.names)

    def shifted(self, log_c):
        """Same samples with the likelihood multiplied by ``exp(log_c)``."""
        return WeightedSampleSet(self.points, self.log_l + log_c, self.log_pi, self.names)


@dataclass(frozen=True, eq=False)
class ZhatGroup:
    """Evidence estimates of one posterior sample, one per mixture draw."""

    index: int
    log_zhat: np.ndarray
    n_dropped: int = 0

    def __post_init__(self):
        v = np.asarray(self.log_zhat, dtype=float)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("a group needs at least one finite value")
        v.setflags(write=False)
        object.__setattr__(self, "log_zhat", v)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of :func:`infer_log_evidence`.

    ``subset_size`` samples are drawn among the ``bulk_fraction`` of samples
    with the largest ``log L + log pi``. ``posterior_draws`` values of
    ``log Z`` are generated from the outer reconstruction for summaries.
    """

    bulk_fraction: float = 0.5
    subset_size: int = 200
    dpgmm: DpgmmConfig = field(default_factory=DpgmmConfig)
    hdpgmm: HdpgmmConfig = field(default_factory=HdpgmmConfig)
    log_space: bool = True
    posterior_draws: int = 10000

    def __post_init__(self):
        if not 0 < self.bulk_fraction <= 1:
            raise ValueError("bulk_fraction must lie in (0, 1]")
        if self.subset_size < 2:
            raise ValueError("subset_size must be at least 2")
        if self.posterior_draws < 1:
            raise ValueError("posterior_draws must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        """Inverse of :meth:`to_dict`; missing keys take their defaults."""
        d = dict(d)
        if "dpgmm" in d:
            d["dpgmm"] = DpgmmConfig.from_dict(d["dpgmm"])
        if "hdpgmm" in d:
            d["hdpgmm"] = HdpgmmConfig.from_dict(d["hdpgmm"])
        return cls(**d)

    def fingerprint(self):
        return _fingerprint(self.to_dict())


@dataclass(frozen=True, eq=False)
class EvidencePosterior:
    """Posterior for ``log Z``: draws, outer reconstruction and summaries.

    Summaries are the median and the central 68% and 90% intervals of the
    draws. ``approximant`` keeps the posterior reconstruction of step 1 for
    diagnostics; it is not serialized.
    """

    log_z: np.ndarray
    outer: DensityEstimate = None
    fingerprint: str = ""
    warnings: dict = field(default_factory=dict)
    approximant: DensityEstimate = field(default=None, repr=False)
    median: float = field(init=False)
    lower68: float = field(init=False)
    upper68: float = field(init=False)
    lower90: float = field(init=False)
    upper90: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.log_z, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("an evidence posterior needs draws")
        v.setflags(write=False)
        object.__setattr__(self, "log_z", v)
        q = np.quantile(v, [0.05, 0.16, 0.5, 0.84, 0.95])
        for name, val in zip(("lower90", "lower68", "median", "upper68", "upper90"), q):
            object.__setattr__(self, name, float(val))

    def quantile(self, q):
        return np.quantile(self.log_z, q)

    def cdf(self, value):
        """Posterior probability that ``log Z <= value``.

        Averages the analytic CDFs of the outer mixture draws when available,
        otherwise uses the empirical CDF of the draws.
        """
        if self.outer is not None:
            return float(np.mean([dr.cdf(value) for dr in self.outer.draws]))
        return float(np.mean(self.log_z <= value))

    def summary(self):
        return (f"log Z = {self.median:.3f} +{self.upper68 - self.median:.3f}"
                f" -{self.median - self.lower68:.3f}")

    def to_dict(self, include_draws=True):
        out = {
            "schema": 1,
            "median": self.median,
            "lower68": self.lower68,
            "upper68": self.upper68,
            "plus": self.upper68 - self.median,
            "minus": self.median - self.lower68,
            "lower90": self.lower90,
            "upper90": self.upper90,
            "config_fingerprint": self.fingerprint,
            "warnings": dict(self.warnings),
        }
        if include_draws:
            out["draws"] = self.log_z.tolist()
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2)


def select_bulk_subset(samples, config, rng):
    """Indices of ``config.subset_size`` samples drawn uniformly without
    replacement among the ``bulk_fraction`` with largest ``log L + log pi``."""
    n = len(samples)
    n_bulk = int(np.floor(config.bulk_fraction * n))
    if config.subset_size > n_bulk:
        raise ValueError(
            f"subset of {config.subset_size} exceeds the {n_bulk} samples in the "
            f"top {config.bulk_fraction:.0%}"
        )
    order = np.argsort(-samples.log_post, kind="stable")
    bulk = order[:n_bulk]
    return np.sort(rng.choice(bulk, size=config.subset_size, replace=False))


def zhat_groups(samples, indices, estimate, min_retained=0.5):
    """:class:`ZhatGroup` for each sample index (see :func:`zhat_group`)."""
    indices = np.atleast_1d(np.asarray(indices, dtype=int))
    if np.any(indices < 0) or np.any(indices >= len(samples)):
        raise IndexError("sample index out of range")
    if estimate.dim != samples.dim:
        raise ValueError(f"estimate dim {estimate.dim} does not match samples dim {samples.dim}")
    logdens = estimate.logpdf_matrix(samples.points[indices])
    vals = samples.log_post[indices][None, :] - logdens
    groups = []
    for c, i in enumerate(indices):
        col = vals[:, c]
        ok = np.isfinite(col)
        dropped = int(np.sum(~ok))
        if ok.sum() < min_retained * len(col):
            raise PipelineError(
                "zhat",
                f"sample {i}: approximant underflows for {dropped}/{len(col)} draws",
            )
        if dropped:
            warnings.warn(f"sample {i}: dropped {dropped} draws with zero approximant density")
        groups.append(ZhatGroup(int(i), col[ok], dropped))
    return groups


def zhat_group(samples, index, estimate):
    """Evidence estimates ``log L + log pi - log DPGMM(x_i | theta_j)`` for one sample.

    Draws whose density underflows at ``x_i`` are dropped and counted; fewer
    than half of the draws surviving is an error.
    """
    return zhat_groups(samples, [index], estimate)[0]


def _check_subset(samples, config):
    n_bulk = int(np.floor(config.bulk_fraction * len(samples)))
    if config.subset_size > n_bulk:
        raise PipelineError(
            "subset",
            f"subset of {config.subset_size} exceeds the {n_bulk} samples in the bulk",
        )


def infer_log_evidence(samples, config=None, rng=None, approximant=None):
    """Posterior for ``log Z`` from weighted posterior samples.

    Parameters
    ----------
    samples : WeightedSampleSet
    config : PipelineConfig, optional
    rng : numpy.random.Generator, optional
        Defaults to ``make_rng(config.dpgmm.seed)``.
    approximant : DensityEstimate, optional
        Replaces the posterior reconstruction of step 1 (used to inject an
        exact posterior).

    Returns
    -------
    EvidencePosterior
    """
    config = config or PipelineConfig()
    rng = rng if rng is not None else make_rng(config.dpgmm.seed)
    _check_subset(samples, config)

    if approximant is None:
        try:
            approximant = fit_dpgmm(samples.points, config.dpgmm, rng)
        except ValueError as err:
            raise PipelineError("posterior-dpgmm", str(err)) from err
    idx = select_bulk_subset(samples, config, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        groups = zhat_groups(samples, idx, approximant)
    dropped = int(sum(g.n_dropped for g in groups))
    # a 1-d inner fit needs MIN_GROUP values; approximants with fewer draws
    # (an injected exact posterior) have their groups repeated
    if len(approximant.draws) < MIN_GROUP:
        reps = -(-MIN_GROUP // len(approximant.draws))
        values = [np.tile(g.log_zhat, reps) for g in groups]
    else:
        values = [g.log_zhat for g in groups]
    values = [v for v in values if len(v) >= MIN_GROUP]
    if len(values) < 2:
        raise PipelineError("zhat", "fewer than 2 usable evidence groups")

    shift = 0.0
    if not config.log_space:
        shift = float(np.median(np.concatenate(values)))
        values = [np.exp(v - shift) for v in values]

    try:
        events = [fit_inner(EventSampleSet(v[:, None]), config.hdpgmm.inner, rng) for v in values]
    except ValueError as err:
        raise PipelineError("group-dpgmm", str(err)) from err
    try:
        outer = fit_hdpgmm(events, config.hdpgmm, rng)
    except ValueError as err:
        raise PipelineError("hdpgmm", str(err)) from err

    per = int(np.ceil(config.posterior_draws / len(outer.draws)))
    draws = np.concatenate([dr.sample(rng, per)[:, 0] for dr in outer.draws])
    if not config.log_space:
        draws = draws[draws > 0]
        if draws.size == 0:
            raise PipelineError("hdpgmm", "no positive evidence draws")
        draws = np.log(draws) + shift
        outer = None
    logger.debug("log Z draws: %d, groups: %d, dropped: %d", draws.size, len(groups), dropped)
    return EvidencePosterior(
        draws,
        outer,
        config.fingerprint(),
        {"underflow": dropped, "groups": len(values)},
        approximant,
    )


def harmonic_mean_log_evidence(samples):
    """Log of the harmonic-mean estimator ``(mean_i 1 / L(x_i))^-1``."""
    log_l = np.asarray(getattr(samples, "log_l", samples), dtype=float)
    if log_l.size == 0:
        raise ValueError("empty sample set")
    return float(-log_sum_exp(-log_l) + np.log(log_l.size))


def retargeted_harmonic_mean_log_evidence(samples, phi, log_target=None, phi_samples=None):
    """Log of the re-targeted harmonic-mean estimator.

    Parameters
    ----------
    samples : WeightedSampleSet
    phi : callable
        Normalized log density; called with the ``(n, d)`` point array (or,
        if that fails, point by point).
    log_target, phi_samples : optional
        When both are given, ``log_target`` (unnormalized log posterior) is
        evaluated on ``phi_samples`` drawn from ``phi``; any zero-posterior
        point means ``phi`` reaches outside the posterior support.
    """
    log_phi = _evaluate(phi, samples.points)
    terms = log_phi - samples.log_post
    if np.any(np.isnan(terms)) or np.any(terms == np.inf):
        raise SupportError("phi is positive where the posterior vanishes")
    if log_target is not None and phi_samples is not None:
        lt = _evaluate(log_target, as_points(phi_samples))
        outside = ~np.isfinite(lt) | np.isnan(lt)
        if np.any(outside):
            raise SupportError(
                f"{int(outside.sum())} of {lt.size} draws from phi fall outside the "
                "posterior support"
            )
    if np.all(terms == -np.inf):
        raise SupportError("phi vanishes on every posterior sample")
    return float(-log_sum_exp(terms) + np.log(len(terms)))


def _evaluate(fn, points):
    try:
        out = np.asarray(fn(points), dtype=float)
        if out.shape == (len(points),):
            return out
    except Exception:
        pass
    return np.array([fn(p) for p in points], dtype=float)


def bayes_factor_posterior(a, b, pair_count=10000, rng=None):
    """Posterior for ``log B = log Z_a - log Z_b``.

    The two evidences are independent inferences, so pairs are formed by
    resampling each posterior's draws uniformly with replacement. The result
    is an :class:`EvidencePosterior` whose ``log_z`` holds ``log B`` draws.
    """
    if pair_count < 1:
        raise ValueError("pair_count must be positive")
    rng = rng if rng is not None else make_rng(0)
    za = rng.choice(a.log_z, size=pair_count, replace=True)
    zb = rng.choice(b.log_z, size=pair_count, replace=True)
    fp = _fingerprint({"a": a.fingerprint, "b": b.fingerprint, "pairs": pair_count})
    return EvidencePosterior(za - zb, fingerprint=fp)


def read_samples_csv(path):
    """Read a sample file: header row, one column per parameter plus
    ``log_likelihood`` and ``log_prior``. Lines starting with ``#`` are skipped.

    Raises :class:`InputError` naming the offending row or column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            # keep physical line numbers for diagnostics
            rows = [(reader.line_num, r) for r in reader if r and not r[0].lstrip().startswith("#")]
    except (OSError, UnicodeDecodeError, csv.Error) as err:
        raise InputError(f"{path}: cannot read ({err})") from err
    if not rows:
        raise InputError(f"{path}: no header row")
    header = [h.strip() for h in rows[0][1]]
    for col in (LOG_L_COLUMN, LOG_PI_COLUMN):
        if col not in header:
            raise InputError(f"{path}: missing required column '{col}'")
    names = [h for h in header if h not in (LOG_L_COLUMN, LOG_PI_COLUMN)]
    if not names:
        raise InputError(f"{path}: no parameter columns")
    data = np.empty((len(rows) - 1, len(header)))
    lines = [ln for ln, _ in rows[1:]]
    for k, (ln, row) in enumerate(rows[1:]):
        if len(row) != len(header):
            raise InputError(f"{path}: line {ln} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                data[k, c] = float(cell)
            except ValueError:
                raise InputError(f"{path}: line {ln}, column '{header[c]}': cannot parse {cell!r}") from None
    if len(data) == 0:
        raise InputError(f"{path}: no sample rows")
    pcols = [header.index(nm) for nm in names]
    log_l = data[:, header.index(LOG_L_COLUMN)]
    log_pi = data[:, header.index(LOG_PI_COLUMN)]
    for col, vals in ((LOG_L_COLUMN, log_l), (LOG_PI_COLUMN, log_pi)):
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise InputError(f"{path}: line {lines[bad[0]]}, column '{col}': non-finite value")
    return WeightedSampleSet(data[:, pcols], log_l, log_pi, tuple(names))


def write_samples_csv(path, samples, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(list(samples.names) + [LOG_L_COLUMN, LOG_PI_COLUMN])
        for p, ll, lp in zip(samples.points, samples.log_l, samples.log_pi):
            w.writerow([repr(float(v)) for v in p] + [repr(float(ll)), repr(float(lp))])
