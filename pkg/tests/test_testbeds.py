import numpy as np
import pytest
from scipy import stats

from hierevidence import testbeds as tb
from hierevidence.dpgmm import DpgmmConfig
from hierevidence.probcore import make_rng


def test_neal_problem_values():
    p = tb.neal_problem()
    assert p.log_evidence == pytest.approx(-3.246, abs=5e-4)
    assert abs(tb.quadrature_log_evidence(p) - p.log_evidence) < 1e-6
    s = p.posterior_sampler(make_rng(0), 200_000)[:, 0]
    assert s.mean() == pytest.approx(1.9802, abs=0.01)
    assert s.var() == pytest.approx(0.9901, rel=0.01)


def test_nix2_problem_values():
    p = tb.nix2_problem()
    assert p.log_evidence == pytest.approx(-9.27, abs=5e-3)
    assert abs(tb.quadrature_log_evidence(p) - p.log_evidence) < 1e-3
    assert np.all(p.log_prior(np.array([[0.0, -1.0], [0.0, 0.0]])) == -np.inf)


def test_prior_normalization_enforced():
    with pytest.raises(ValueError, match="integrates"):
        tb.ProblemSpec("bad", 1, lambda x: np.zeros(len(x)), lambda x: np.full(len(x), np.log(0.5)),
                       bounds=[[0.0, 1.0]])


def test_bivariate_problem():
    p = tb.bivariate_params_problem()
    inside = np.array([[0.0, 0.0, 1.0, 1.0, 0.2]])
    assert p.log_prior(inside)[0] == pytest.approx(-np.log(20000), abs=1e-12)
    assert p.log_prior(np.array([[0.0, 0.0, 1.0, 11.0, 0.2]]))[0] == -np.inf
    edge = np.array([[0.0, 0.0, 1.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0, -1.0]])
    assert np.all(p.log_likelihood(edge) == -np.inf)
    data, seed = tb.load_fixture("bivariate")
    assert seed == tb.BIVARIATE_SEED and data.shape == (100, 2)
    x = np.array([0.3, -0.8, 1.4, 0.9, 0.5])
    cov = np.array([[x[2] ** 2, x[4] * x[2] * x[3]], [x[4] * x[2] * x[3], x[3] ** 2]])
    ref = stats.multivariate_normal(x[:2], cov).logpdf(data).sum()
    assert p.log_likelihood(x[None])[0] == pytest.approx(ref, abs=1e-9)
    with pytest.raises(ValueError):
        tb.bivariate_params_problem(np.zeros((50, 2)))


def test_fixture_matches_seeded_generator():
    data, seed = tb.load_fixture("gaussian")
    assert np.array_equal(data, tb.generate_gaussian_dataset(seed))


def test_fixture_roundtrip(tmp_path):
    x = make_rng(1).normal(size=(5, 2))
    tb.write_fixture(tmp_path / "f.csv", x, 17)
    back, seed = tb._parse_fixture((tmp_path / "f.csv").read_text().splitlines())
    assert seed == 17 and np.array_equal(back, x)


def test_model_pair_nesting():
    h_n, h_gn = tb.model_pair_gaussian_gennormal()
    mu, sigma = 0.2, 1.3
    ln = h_n.log_likelihood(np.array([[mu, sigma]]))[0]
    lgn = h_gn.log_likelihood(np.array([[mu, np.sqrt(2) * sigma, 2.0]]))[0]
    assert ln == pytest.approx(lgn, abs=1e-9)
    pts = h_gn.prior_sampler(make_rng(2), 500)
    assert np.all(np.isfinite(h_gn.log_likelihood(pts)))
    assert h_gn.log_prior(np.array([[0.0, 1.0, 0.4]]))[0] == -np.inf


def test_metropolis_neal_moments():
    p = tb.neal_problem()
    s = tb.metropolis_sample(p, tb.McmcConfig(chains=4, steps=6000, burn_in=1500, seed=1))
    assert 0.1 <= s.acceptance <= 0.5
    x = s.points[:, 0]
    # effective sample size is well below len(x); use batch means for the error
    batches = x.reshape(40, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(len(batches))
    assert abs(x.mean() - 2 / 1.01) < 3 * se
    np.testing.assert_allclose(s.log_l, p.log_likelihood(s.points))


def test_metropolis_nix2_moments():
    p = tb.nix2_problem()
    s = tb.metropolis_sample(p, tb.McmcConfig(chains=4, steps=8000, burn_in=2000, seed=2))
    mu = s.points[:, 0]
    batches = mu.reshape(40, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(len(batches))
    assert abs(mu.mean() - 1.90476) < 3 * se
    assert np.all(s.points[:, 1] > 0)


def test_metropolis_deterministic_and_symmetric():
    p = tb.neal_problem()
    cfg = tb.McmcConfig(chains=2, steps=3000, burn_in=500, seed=3)
    a = tb.metropolis_sample(p, cfg)
    b = tb.metropolis_sample(p, cfg)
    assert np.array_equal(a.points, b.points)
    skew = stats.skew(a.points[:, 0])
    assert abs(skew) < 0.25


def test_metropolis_bad_start():
    p = tb.ProblemSpec("nowhere", 1, lambda x: np.full(len(x), -np.inf), lambda x: np.zeros(len(x)),
                       prior_sampler=lambda rng, n: rng.normal(size=(n, 1)), check_prior=False)
    with pytest.raises(tb.SamplerError, match="100"):
        tb.metropolis_sample(p, tb.McmcConfig(steps=10, burn_in=5))
    with pytest.raises(ValueError):
        tb.McmcConfig(steps=10, burn_in=10)


@pytest.mark.parametrize("make", [tb.neal_problem, tb.nix2_problem])
def test_nested_sampling_analytic(make):
    p = make()
    log_z, err = tb.nested_sampling_log_evidence(p, tb.NsConfig(live_points=400, seed=5))
    assert abs(log_z - p.log_evidence) < 3 * err


def test_nested_sampling_flat_likelihood():
    p = tb.ProblemSpec("flat", 2, lambda x: np.full(len(x), np.log(3.0)),
                       lambda x: np.full(len(x), -np.log(4.0)), bounds=[[0, 2], [0, 2]])
    log_z, err = tb.nested_sampling_log_evidence(p, tb.NsConfig(live_points=100))
    assert log_z == pytest.approx(np.log(3.0), abs=1e-9)


def test_nested_sampling_limits():
    with pytest.raises(ValueError):
        tb.NsConfig(live_points=10)
    p = tb.ProblemSpec("big", 9, lambda x: np.zeros(len(x)), lambda x: np.zeros(len(x)),
                       bounds=[[0, 1]] * 9)
    with pytest.raises(ValueError, match="dim"):
        tb.nested_sampling_log_evidence(p)


def test_pp_band_construction():
    grid = np.linspace(0, 1, 11)
    lo, hi = tb.pp_band(100, grid, 0.9)
    assert np.all(lo <= grid + 1e-12) and np.all(grid <= hi + 1e-12)
    assert lo[0] == 0.0 and hi[-1] == 1.0
    # pointwise coverage of the band for calibrated quantiles
    rng = make_rng(0)
    ecdf = np.array([np.searchsorted(np.sort(rng.random(100)), 0.3, side="right") / 100 for _ in range(4000)])
    lo, hi = tb.pp_band(100, [0.3], 0.9)
    assert np.mean((ecdf >= lo[0]) & (ecdf <= hi[0])) >= 0.9


def test_pp_quantile_check_degenerate_and_uniform():
    bad = tb.pp_quantile_check(np.zeros(100))
    assert not bad.band_check and bad.ks_pvalue < 1e-10
    good = tb.pp_quantile_check((np.arange(100) + 0.5) / 100)
    assert good.band_check and good.ks_pvalue > 0.5
    assert tb.pp_quantile_check(np.linspace(0.1, 0.9, 5)).low_power


def test_pp_band_simultaneous_coverage():
    grid = np.linspace(0, 1, 101)
    lo, hi = tb.pp_band(50, grid, 0.9, simultaneous=True, rng=make_rng(1), n_sim=2000)
    rng = make_rng(2)
    inside = 0
    for _ in range(1000):
        e = np.searchsorted(np.sort(rng.random(50)), grid, side="right") / 50
        inside += np.all((e >= lo) & (e <= hi))
    assert inside / 1000 == pytest.approx(0.9, abs=0.04)


def test_pp_test_requires_analytic_problem():
    with pytest.raises(ValueError):
        tb.pp_test(tb.bivariate_params_problem(), 2)


def test_student_t_tail_demo_columns():
    out = tb.student_t_tail_demo(10_000, make_rng(3))
    x = out["x"]
    np.testing.assert_allclose(out["truth_logpdf"], stats.t(10).logpdf(x), atol=1e-12)
    core = np.abs(x) <= 2
    inside = (out["lo90"] <= out["truth_logpdf"]) & (out["truth_logpdf"] <= out["hi90"])
    assert inside[core].mean() >= 0.8
    # an isolated extreme sample can carry its own cluster, so the collapse
    # is checked from one unit past the largest sample
    far = np.abs(x) > out["sample_max"] + 1.0
    assert far.any()
    assert np.all(out["median_logpdf"][far] < out["truth_logpdf"][far])
