"""Hierarchical DPGMM: an outer DP mixture over latent values that are only
known through per-event posterior samples.

Each event is first given an *inner* DPGMM reconstruction. The outer collapsed
Gibbs chain then alternates two moves: for every event a fresh latent value is
drawn from its inner reconstruction (uniform choice of inner draw, then a
draw from that mixture), and one Gibbs sweep over the outer partition is run
on the refreshed latents.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .dpgmm import (
    DensityEstimate,
    DpgmmConfig,
    GibbsState,
    _fingerprint,
    _moments,
    as_points,
    fit_dpgmm,
)
from .probcore import make_rng

__all__ = ["EventSampleSet", "HdpgmmConfig", "fit_inner", "fit_hdpgmm", "PackedInner"]


@dataclass(frozen=True, eq=False)
class EventSampleSet:
    """Posterior samples of one event plus, optionally, their reconstruction."""

    samples: np.ndarray
    inner: DensityEstimate = None

    def __post_init__(self):
        pts = as_points(self.samples)
        if len(pts) == 0:
            raise ValueError("an event needs at least one sample")
        if self.inner is not None and self.inner.dim != pts.shape[1]:
            raise ValueError("inner estimate dim does not match the event samples")
        pts.setflags(write=False)
        object.__setattr__(self, "samples", pts)

    @property
    def dim(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class HdpgmmConfig:
    inner: DpgmmConfig = field(default_factory=lambda: DpgmmConfig(sweeps=300, burn_in=100, thinning=2))
    outer: DpgmmConfig = field(default_factory=DpgmmConfig)
    latent_draws: int = 1

    def __post_init__(self):
        if self.latent_draws < 1:
            raise ValueError("latent_draws must be a positive integer")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("inner", "outer"):
            if key in d:
                d[key] = DpgmmConfig.from_dict(d[key])
        return cls(**d)

    def fingerprint(self):
        return _fingerprint(self.to_dict())


def fit_inner(event, config=None, rng=None):
    """Return a copy of ``event`` carrying a DPGMM fitted to its samples."""
    config = config or DpgmmConfig()
    est = fit_dpgmm(event.samples, config, rng)
    return EventSampleSet(event.samples, est)


class PackedInner:
    """Inner reconstructions packed into padded arrays for vectorized sampling.

    Padding components carry zero weight, a zero mean and an identity factor.
    """

    def __init__(self, estimates):
        estimates = list(estimates)
        self.n_events = len(estimates)
        self.dim = estimates[0].dim
        self.n_draws = np.array([len(e.draws) for e in estimates])
        J = self.n_draws.max()
        K = max(len(dr.weights) for e in estimates for dr in e.draws)
        d = self.dim
        self.cumw = np.ones((self.n_events, J, K))
        self.means = np.zeros((self.n_events, J, K, d))
        self.chols = np.tile(np.eye(d), (self.n_events, J, K, 1, 1))
        for i, e in enumerate(estimates):
            for j, dr in enumerate(e.draws):
                k = len(dr.weights)
                cw = np.cumsum(dr.weights)
                self.cumw[i, j, :k] = cw / cw[-1]
                self.means[i, j, :k] = dr.means
                self.chols[i, j, :k] = dr._chols

    def sample(self, rng):
        """One latent value per event, shape ``(n_events, d)``."""
        E = self.n_events
        rows = np.arange(E)
        j = np.floor(rng.random(E) * self.n_draws).astype(np.int64)
        u = rng.random(E)
        k = np.sum(self.cumw[rows, j] <= u[:, None], axis=1)
        k = np.minimum(k, self.cumw.shape[2] - 1)
        eps = rng.standard_normal((E, self.dim))
        return self.means[rows, j, k] + np.einsum("eij,ej->ei", self.chols[rows, j, k], eps)


def fit_hdpgmm(events, config=None, rng=None):
    """Outer DPGMM draws given events with inner reconstructions.

    Parameters
    ----------
    events : sequence of EventSampleSet
        At least two events, each carrying an inner estimate.
    config : HdpgmmConfig, optional
    rng : numpy.random.Generator, optional

    Returns
    -------
    DensityEstimate
        Outer mixture draws over the latent space.
    """
    config = config or HdpgmmConfig()
    events = list(events)
    if len(events) < 2:
        raise ValueError("hierarchical fit needs at least two events")
    if any(ev.inner is None for ev in events):
        missing = [i for i, ev in enumerate(events) if ev.inner is None]
        raise ValueError(f"events {missing[:5]} have no inner estimate; run fit_inner first")
    if len({ev.dim for ev in events}) != 1:
        raise ValueError("all events must share the same dimension")
    outer = config.outer
    rng = rng if rng is not None else make_rng(outer.seed)

    packed = PackedInner([ev.inner for ev in events])
    reps = config.latent_draws
    latents = np.concatenate([packed.sample(rng) for _ in range(reps)])
    # whitening frame and data-driven prior come from the pooled event samples
    pooled = np.concatenate([ev.samples for ev in events])
    state = GibbsState(latents, outer, frame=_moments(pooled))

    draws = []
    for sweep in range(1, outer.sweeps + 1):
        latents = np.concatenate([packed.sample(rng) for _ in range(reps)])
        state.set_points(latents)
        state.sweep(rng)
        if sweep > outer.burn_in and (sweep - outer.burn_in) % outer.thinning == 0:
            draws.append(state.mixture_draw(rng))
    return DensityEstimate(tuple(draws[: outer.n_draws]), len(events), config.fingerprint())
