"""
Mean and variance of a Gaussian with a conjugate prior
======================================================

Two data points {-3, 7}, a normal-inverse-chi-squared prior on (mu, sigma^2).
The posterior has a heavy tail in sigma^2, which makes this a harder case for
the mixture reconstruction than the one-dimensional example.
"""

from hierevidence import testbeds as tb
from hierevidence.evidence import PipelineConfig, infer_log_evidence
from hierevidence.probcore import make_rng, nix2_posterior_update

problem = tb.nix2_problem()
post_params = nix2_posterior_update(tb.NIX2_PRIOR, tb.NIX2_DATA)
print("posterior parameters", post_params)
print(f"analytic log Z = {problem.log_evidence:.4f}")
print(f"quadrature     = {tb.quadrature_log_evidence(problem):.4f}")

rng = make_rng(3)
samples = tb.weighted_samples(problem, problem.posterior_sampler(rng, 14050))
# this takes about a minute: 1000 groups, one inner fit each
post = infer_log_evidence(samples, PipelineConfig(subset_size=1000), rng)
print(post.summary())
print(f"90% interval [{post.lower90:.3f}, {post.upper90:.3f}]")
