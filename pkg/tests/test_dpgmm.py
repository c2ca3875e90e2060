import json
from collections import Counter

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln

from hierevidence import _gibbs
from hierevidence.dpgmm import (
    DensityEstimate,
    DpgmmConfig,
    GibbsState,
    MixtureDraw,
    NiwPrior,
    _set_partitions,
    canonical_partition,
    crp_step,
    default_niw_prior,
    enumerate_partition_posterior,
    fit_dpgmm,
    mixture_logpdf,
    niw_log_marginal,
    niw_predictive_logpdf,
    predictive_logpdf,
    sample_inv_wishart,
)
from hierevidence.probcore import make_rng

SMALL = DpgmmConfig(sweeps=60, burn_in=20, thinning=4)


def _draw_1d():
    return MixtureDraw([0.3, 0.7], [[-1.0], [2.0]], [[[0.5]], [[2.0]]])


def test_mixture_draw_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        MixtureDraw([0.3, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(ValueError):
        MixtureDraw([1.0, 0.0], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(ValueError):
        MixtureDraw([1.0], [[0.0, 1.0]], [np.eye(3)])
    d = _draw_1d()
    with pytest.raises(ValueError):
        d.weights[0] = 0.5


def test_mixture_logpdf_oracle():
    d = _draw_1d()
    x = np.linspace(-3, 4, 8)
    ref = np.log(0.3 * stats.norm.pdf(x, -1, np.sqrt(0.5)) + 0.7 * stats.norm.pdf(x, 2, np.sqrt(2)))
    np.testing.assert_allclose(d.logpdf(x), ref, atol=1e-12)
    assert isinstance(d.logpdf(0.5), float)
    np.testing.assert_allclose(d.cdf(x), 0.3 * stats.norm.cdf(x, -1, np.sqrt(0.5))
                               + 0.7 * stats.norm.cdf(x, 2, np.sqrt(2)), atol=1e-14)


def test_mixture_2d_logpdf_and_dim_checks(rng):
    covs = np.array([[[1.0, 0.4], [0.4, 0.8]], [[0.3, 0.0], [0.0, 2.0]]])
    d = MixtureDraw([0.4, 0.6], [[0.0, 0.0], [1.0, -1.0]], covs)
    x = rng.normal(size=(5, 2))
    ref = np.log(0.4 * stats.multivariate_normal([0, 0], covs[0]).pdf(x)
                 + 0.6 * stats.multivariate_normal([1, -1], covs[1]).pdf(x))
    np.testing.assert_allclose(d.logpdf(x), ref, atol=1e-12)
    assert d.logpdf(x[0]) == pytest.approx(ref[0], abs=1e-12)
    with pytest.raises(ValueError):
        d.logpdf(np.zeros(3))
    with pytest.raises(ValueError):
        d.cdf(0.0)


def test_mixture_label_permutation():
    d = _draw_1d()
    p = MixtureDraw(d.weights[::-1], d.means[::-1], d.covs[::-1])
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(mixture_logpdf(d, x), mixture_logpdf(p, x), atol=1e-14)


def test_mixture_sample_moments(rng):
    d = _draw_1d()
    s = d.sample(rng, 200_000)[:, 0]
    mean = 0.3 * -1 + 0.7 * 2
    var = 0.3 * (0.5 + 1) + 0.7 * (2 + 4) - mean**2
    assert abs(s.mean() - mean) < 4 * np.sqrt(var / s.size)
    assert abs(s.var() - var) / var < 0.02


def test_niw_prior_validation():
    with pytest.raises(ValueError):
        NiwPrior((0.0, 0.0), -1.0, 4.0, np.eye(2).tolist())
    with pytest.raises(ValueError):
        NiwPrior((0.0, 0.0), 1.0, 0.5, np.eye(2).tolist())
    p = default_niw_prior(np.random.default_rng(0).normal(size=(50, 3)))
    assert p.dof == 5.0 and p.kappa == 0.01 and p.dim == 3


def test_niw_marginal_matches_quadrature():
    # one 1-d cluster: integrate the NIW prior against the likelihood
    prior = NiwPrior((0.5,), 0.7, 3.0, ((1.3,),))
    x = np.array([0.2, 1.1, -0.4])

    def f(logv, mu):
        v = np.exp(logv)
        # inverse-Wishart in 1-d is inverse-gamma(nu/2, psi/2)
        lp = stats.invgamma.logpdf(v, 1.5, scale=0.65) + stats.norm.logpdf(mu, 0.5, np.sqrt(v / 0.7))
        return np.exp(lp + np.sum(stats.norm.logpdf(x, mu, np.sqrt(v))) + logv)

    ref = np.log(integrate.dblquad(f, -np.inf, np.inf, -40, 40, epsabs=0, epsrel=1e-10)[0])
    assert niw_log_marginal(x[:, None], prior) == pytest.approx(ref, abs=1e-7)


def test_predictive_is_marginal_ratio(rng):
    prior = NiwPrior((0.1, -0.2), 0.5, 4.0, ((1.0, 0.2), (0.2, 0.7)))
    members = rng.normal(size=(4, 2))
    x = rng.normal(size=2)
    ratio = niw_log_marginal(np.vstack([members, x]), prior) - niw_log_marginal(members, prior)
    assert niw_predictive_logpdf(x, members, prior) == pytest.approx(ratio, abs=1e-10)
    empty = niw_log_marginal(x[None], prior)
    assert niw_predictive_logpdf(x, np.empty((0, 2)), prior) == pytest.approx(empty, abs=1e-10)


def test_kernel_cache_matches_oracle(rng):
    # identity frame: the compiled cache works directly in data coordinates
    x = rng.normal(size=(9, 2))
    prior = NiwPrior((0.0, 0.0), 0.3, 4.5, ((1.2, 0.1), (0.1, 0.9)))
    state = GibbsState(x, DpgmmConfig(), labels=[0, 0, 1, 1, 1, 2, 0, 2, 3],
                       frame=(np.zeros(2), np.eye(2)), prior=prior)
    z = np.empty(2)
    probe = rng.normal(size=2)
    for slot in state.active[: state.n_clusters]:
        members = x[state.labels == slot]
        got = _gibbs._t_logpdf(probe, slot, state.loc, state.chol, state.logc, state.dof, z)
        assert got == pytest.approx(niw_predictive_logpdf(probe, members, prior), abs=1e-8)
    got = _gibbs._t_logpdf(probe, state.n, state.loc, state.chol, state.logc, state.dof, z)
    assert got == pytest.approx(niw_predictive_logpdf(probe, np.empty((0, 2)), prior), abs=1e-8)


def test_incremental_stats_match_rebuild(rng):
    x = rng.normal(size=(40, 2)) * [1.0, 3.0]
    state = GibbsState(x, DpgmmConfig())
    state.sweep(rng, 25)
    snap = [a.copy() for a in (state.counts, state.sums, state.outers, state.loc, state.chol, state.logc)]
    slots = state.active[: state.n_clusters].copy()
    state.rebuild()
    for before, after in zip(snap, (state.counts, state.sums, state.outers, state.loc, state.chol, state.logc)):
        np.testing.assert_allclose(before[slots], after[slots], rtol=1e-9, atol=1e-9)
    assert state.counts[slots].sum() == 40
    assert sorted(set(state.labels.tolist())) == sorted(slots.tolist())


def test_set_partitions_bell_numbers():
    assert [sum(1 for _ in _set_partitions(n)) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]
    assert canonical_partition([5, 5, 2, 7, 2]) == (0, 0, 1, 2, 1)


def test_enumeration_crp_prior():
    # with a very wide prior scale the likelihood part is nearly flat in the
    # partition; check the CRP part on one partition directly instead
    x = np.array([[0.0], [0.1], [5.0]])
    cfg = DpgmmConfig(concentration=2.0)
    post = enumerate_partition_posterior(x, cfg)
    assert len(post) == 5
    assert sum(post.values()) == pytest.approx(1.0, abs=1e-12)
    prior = default_niw_prior(x)

    def logp(blocks):
        lp = len(blocks) * np.log(2.0) + gammaln(2.0) - gammaln(5.0)
        return lp + sum(gammaln(len(b)) + niw_log_marginal(x[b], prior) for b in blocks)

    a, b = logp([[0, 1], [2]]), logp([[0], [1], [2]])
    assert post[(0, 0, 1)] / post[(0, 1, 2)] == pytest.approx(np.exp(a - b), rel=1e-10)
    with pytest.raises(ValueError):
        enumerate_partition_posterior(np.zeros((9, 1)))


def test_gibbs_matches_enumeration_small(rng):
    x = np.array([[-1.2], [-1.0], [0.4], [1.5]])
    cfg = DpgmmConfig(concentration=1.0)
    exact = enumerate_partition_posterior(x, cfg)
    state = GibbsState(x, cfg)
    counts = Counter()
    state.sweep(rng, 200)
    for _ in range(6000):
        state.sweep(rng)
        counts[state.partition()] += 1
    tv = 0.5 * sum(abs(counts[p] / 6000 - q) for p, q in exact.items())
    assert tv < 0.05


def test_crp_step_uniform_extremes():
    x = np.array([[0.0], [0.1], [0.2], [5.0]])
    state = GibbsState(x, DpgmmConfig(), labels=[0, 0, 0, 1])

    class Fixed:
        def __init__(self, u):
            self.u = u

        def random(self):
            return self.u

    # u just below 1 always picks the last option: a new cluster
    crp_step(state, 0, rng=Fixed(1 - 1e-12))
    assert state.n_clusters == 3
    # u = 0 picks the first active cluster
    crp_step(state, 0, rng=Fixed(0.0))
    assert state.n_clusters == 2
    with pytest.raises(IndexError):
        state.step(4, 0.5)


def test_inverse_wishart_mean(rng):
    scale = np.array([[2.0, 0.5], [0.5, 1.0]])
    draws = sample_inv_wishart(rng, 7.0, scale, size=40_000)
    np.testing.assert_allclose(draws.mean(axis=0), scale / (7.0 - 3.0), rtol=0.03, atol=0.01)
    ref = stats.invwishart(7.0, scale).rvs(40_000, random_state=1).mean(axis=0)
    np.testing.assert_allclose(draws.mean(axis=0), ref, rtol=0.05, atol=0.01)


def test_fit_dpgmm_draws_normalized_and_reproducible():
    x = make_rng(1).normal(size=(120, 2))
    a = fit_dpgmm(x, SMALL, make_rng(5))
    b = fit_dpgmm(x, SMALL, make_rng(5))
    assert len(a) == SMALL.n_draws == 10
    for da, db in zip(a.draws, b.draws):
        assert abs(da.weights.sum() - 1) < 1e-10
        assert np.all(np.linalg.eigvalsh(da.covs) > 0)
        assert np.array_equal(da.weights, db.weights)
        assert np.array_equal(da.covs, db.covs)
    assert a.to_json() == b.to_json()
    assert a.fingerprint == SMALL.fingerprint()


def test_fit_dpgmm_recovers_bimodal_density():
    rng = make_rng(2)
    x = np.concatenate([rng.normal(-3, 0.5, 400), rng.normal(2, 1.0, 600)])
    est = fit_dpgmm(x[:, None], DpgmmConfig(sweeps=200, burn_in=100, thinning=10), rng)
    grid = np.linspace(-5, 5, 21)
    truth = np.log(0.4 * stats.norm.pdf(grid, -3, 0.5) + 0.6 * stats.norm.pdf(grid, 2, 1.0))
    med, ((lo, hi),) = predictive_logpdf(est, grid, (0.9,))
    bulk = truth > np.log(0.02)
    assert np.mean(np.abs(med[bulk] - truth[bulk]) < 0.3) > 0.9
    assert np.all(lo <= med) and np.all(med <= hi)


def test_fit_dpgmm_constant_data():
    est = fit_dpgmm(np.full((20, 1), 3.0), SMALL, make_rng(0))
    assert est.draws[0].logpdf(3.0) > 10


def test_fit_dpgmm_rejects_tiny_input():
    with pytest.raises(ValueError, match="at least"):
        fit_dpgmm(np.zeros((3, 2)))


def test_density_estimate_json_roundtrip():
    est = fit_dpgmm(make_rng(3).normal(size=(60, 2)), SMALL, make_rng(3))
    text = est.to_json()
    back = DensityEstimate.from_json(text)
    assert back.to_json() == text
    for a, b in zip(est.draws, back.draws):
        assert np.array_equal(a.means, b.means) and np.array_equal(a.covs, b.covs)
    doc = json.loads(text)
    assert set(doc) >= {"dim", "draws", "fingerprint"}
    assert set(doc["draws"][0]) == {"weights", "means", "covs"}


def test_predictive_levels_validation():
    est = DensityEstimate((_draw_1d(),))
    with pytest.raises(ValueError):
        predictive_logpdf(est, [0.0], levels=(1.2,))
    med, bands = predictive_logpdf(est, np.array([0.0, 1.0]), (0.5, 0.9))
    assert len(bands) == 2
    np.testing.assert_allclose(med, _draw_1d().logpdf(np.array([0.0, 1.0])))


def test_config_validation():
    with pytest.raises(ValueError):
        DpgmmConfig(burn_in=10, sweeps=10)
    with pytest.raises(ValueError):
        DpgmmConfig(concentration=0.0)
    with pytest.raises(ValueError):
        DpgmmConfig(sweeps=12, burn_in=10, thinning=5)
    cfg = DpgmmConfig(prior=NiwPrior((0.0,), 1.0, 3.0, ((1.0,),)))
    assert DpgmmConfig.from_dict(cfg.to_dict()) == cfg
