"""Bayesian evidence from posterior samples via hierarchical DP Gaussian mixtures."""

from .dpgmm import (
    DensityEstimate,
    DpgmmConfig,
    GaussianComponent,
    MixtureDraw,
    NiwPrior,
    crp_step,
    enumerate_partition_posterior,
    fit_dpgmm,
    mixture_logpdf,
    predictive_logpdf,
)
from .evidence import (
    EvidencePosterior,
    InputError,
    PipelineConfig,
    PipelineError,
    SupportError,
    WeightedSampleSet,
    ZhatGroup,
    bayes_factor_posterior,
    harmonic_mean_log_evidence,
    infer_log_evidence,
    read_samples_csv,
    retargeted_harmonic_mean_log_evidence,
    select_bulk_subset,
    write_samples_csv,
    zhat_group,
)
from .hdpgmm import EventSampleSet, HdpgmmConfig, fit_hdpgmm, fit_inner
from .probcore import make_rng, log_sum_exp

__version__ = "0.1.0"
