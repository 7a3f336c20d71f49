"""
A WGAN learns a normal distribution
===================================

Without features the generator is a plain WGAN. Trained on i.i.d. N(3, 1)
data it should produce values with roughly that mean and spread.
"""

import numpy as np

from fegan.gan import FeGanConfig, generate, train
from fegan.ingest import CleanSeries

data = CleanSeries.from_values(np.random.default_rng(0).normal(3.0, 1.0, 2000))
cfg = FeGanConfig.desk(feature_method="None", steps=1000, seed=0)


def progress(step, c_loss, g_loss):
    if (step + 1) % 200 == 0:
        print(f"step {step + 1:5d}  critic {c_loss:+.5f}  generator {g_loss:+.5f}")


gen, critic, result = train(cfg, data, callback=progress)
fake = generate(gen, None, np.random.default_rng(1).standard_normal((500, cfg.noise_dim)))
print(f"generated mean {fake.mean():.3f}  std {fake.std():.3f}  ({fake.size} values)")
gap = result.diffs["0.05"]
print(f"held-out gaps at 5%: VaR {gap.var_diff:.4f}  ES {gap.es_diff:.4f}")
