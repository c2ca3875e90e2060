"""
Is the evidence posterior calibrated?
=====================================

Repeat the one-dimensional example with fresh posterior samples and record,
each time, the posterior CDF at the true log Z. For a calibrated method these
quantiles are uniform. Twenty realizations keep this quick (about five
minutes); the acceptance suite runs one hundred.
"""

import numpy as np

from hierevidence import testbeds as tb
from hierevidence.probcore import make_rng

res = tb.pp_test(tb.neal_problem(), realizations=20, rng=make_rng(7),
                 progress=lambda r, q, med: print(f"realization {r:2d}: q = {q:.3f}, median {med:.3f}"))
print("sorted quantiles", np.round(res.quantiles, 2))
print(f"inside pointwise 90% band: {res.band_check}; KS p-value {res.ks_pvalue:.3f}")
if res.low_power:
    print("few realizations: the test has little power")
