"""
Five parameters of a bivariate Gaussian
=======================================

No closed form here, so the reference comes from nested sampling. Posterior
samples are produced with the adaptive Metropolis sampler, as one would with
any external sampler, and handed to the evidence pipeline.
"""

import numpy as np

from hierevidence import testbeds as tb
from hierevidence.evidence import PipelineConfig, harmonic_mean_log_evidence, infer_log_evidence
from hierevidence.probcore import make_rng

data, seed = tb.load_fixture("bivariate")
print(f"fixture: {len(data)} points, generated with seed {seed}")
problem = tb.bivariate_params_problem(data)

samples = tb.metropolis_sample(problem, tb.McmcConfig(chains=4, steps=6000, burn_in=2000, thin=4),
                               make_rng(4))
print(f"{len(samples)} samples, acceptance {samples.acceptance:.2f}")
print("posterior means", dict(zip(problem.names, np.round(samples.points.mean(axis=0), 3).tolist())))

post = infer_log_evidence(samples, PipelineConfig(subset_size=200), make_rng(4, 1))
log_z, err = tb.nested_sampling_log_evidence(problem, tb.NsConfig(seed=4))
print(f"hierarchical  {post.summary()}")
print(f"nested        log Z = {log_z:.3f} +- {err:.3f}")
print(f"harmonic mean log Z = {harmonic_mean_log_evidence(samples):.3f}")
