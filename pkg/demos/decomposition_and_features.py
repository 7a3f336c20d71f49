"""
Decomposition and the generator's feature inputs
================================================

A trend plus weekly pattern is split into trend, seasonal and residual
parts. The same context then feeds each of the feature methods the
generator can be conditioned on.
"""

import numpy as np

from fegan.ingest import CleanSeries, pair_at
from fegan.tsmodels import ArmaSpec, FeatureConfig, decompose, generate_feature

rng = np.random.default_rng(3)
t = np.arange(200)
x = 0.02 * t + np.sin(2 * np.pi * t / 5) + 0.3 * rng.standard_normal(200)

d = decompose(x, period=5)
print("seasonal pattern     ", np.round(d.seasonal[:5], 3))
print("pattern sums to      ", round(float(d.seasonal[:5].sum()), 12))
print("max reconstruction   ", np.abs(d.trend + d.seasonal + d.residual - x).max())

# features for one (context, target) pair of log-return-like data
series = CleanSeries.from_values(0.01 * rng.standard_normal(400))
pair = pair_at(series, 100, 250, 10)
cfg = FeatureConfig(T=10, arma_spec=ArmaSpec(2, 1), period=5)
for method in ("None", "Historical", "Gbm", "Arma", "Hybrid"):
    f = generate_feature(method, pair, cfg, np.random.default_rng(1))
    print(f"{method:<11}", np.round(f * 100, 3))
