"""
Empirical VaR, ES and the joint score
=====================================

VaR and ES of a normal sample against their closed forms, then a look at
how the joint (VaR, ES) score ranks candidate pairs.
"""

import numpy as np
from scipy.stats import norm

from fegan.risk import batch_score, var_es

rng = np.random.default_rng(0)
x = rng.standard_normal(100_000)

# lower-tail convention: VaR is the alpha-quantile, ES the mean below it
for alpha in (0.01, 0.05, 0.1):
    r = var_es(x, alpha)
    q = norm.ppf(alpha)
    print(f"alpha={alpha:<5} VaR {r.var:+.4f} (exact {q:+.4f})  "
          f"ES {r.es:+.4f} (exact {-norm.pdf(q) / alpha:+.4f})")

# the score is lowest at the empirical pair and rises as we move away
sample = x[:500]
r = var_es(sample, 0.05)
print(f"\nscore at the empirical pair     {batch_score(r.var, r.es, sample, 0.05):.5f}")
for dv, de in ((0.2, 0.0), (-0.2, 0.0), (0.0, 0.2), (0.0, -0.2)):
    s = batch_score(r.var + dv, r.es + de, sample, 0.05)
    print(f"score at VaR{dv:+.1f}, ES{de:+.1f}         {s:.5f}")
