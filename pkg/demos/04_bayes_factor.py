"""
Gaussian or generalised normal?
===============================

The same 100 Gaussian draws are described by a Gaussian (mu, sigma) and by a
generalised normal (mu, alpha, beta). The latter contains the former, so the
data cannot prefer it much; the extra parameter costs prior volume and the
Bayes factor should lean towards the Gaussian.
"""

from hierevidence import testbeds as tb
from hierevidence.evidence import PipelineConfig, bayes_factor_posterior, infer_log_evidence
from hierevidence.probcore import make_rng

h_n, h_gn = tb.model_pair_gaussian_gennormal()
mcmc = tb.McmcConfig(chains=4, steps=6000, burn_in=2000, thin=4)

posts, ns = [], []
for k, model in enumerate((h_n, h_gn)):
    samples = tb.metropolis_sample(model, mcmc, make_rng(5, 2 * k))
    posts.append(infer_log_evidence(samples, PipelineConfig(), make_rng(5, 2 * k + 1)))
    ns.append(tb.nested_sampling_log_evidence(model, tb.NsConfig(seed=50 + k)))
    print(f"{model.name:10s} {posts[-1].summary()}   NS {ns[-1][0]:.3f} +- {ns[-1][1]:.3f}")

bf = bayes_factor_posterior(posts[0], posts[1], rng=make_rng(6))
mean, sd, ((lo, hi),) = tb.ns_gaussian_bayes_factor(*ns)
print(f"log B_N_GN: median {bf.median:.3f}, 90% [{bf.lower90:.3f}, {bf.upper90:.3f}]")
print(f"NS (Gaussian approx.): {mean:.3f} +- {sd:.3f}, 90% [{lo:.3f}, {hi:.3f}]")
