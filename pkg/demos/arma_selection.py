"""
ARMA order selection by rolling AIC
===================================

Simulate an ARMA(2,1) series, sweep the ten candidate orders over rolling
500-point windows and rank them by mean AIC. Then forecast from the winner.
"""

import numpy as np

from fegan.tsmodels import arma_fit, arma_forecast, arma_simulate, select_arma

x = arma_simulate([0.5, -0.3], [0.4], 1050, np.random.default_rng(0))

table, winner = select_arma(x, window_len=500, step=50)
ranked = sorted(table.mean_aic().items(), key=lambda kv: kv[1])
print("mean AIC over", len({r["window_start"] for r in table.rows}), "windows")
for spec, aic in ranked:
    print(f"  {spec.name:<10} {aic:10.2f}")
print("winner:", winner.name)

# fit the winner on the last window and forecast ten steps
model = arma_fit(x[-500:], winner)
print("phi", np.round(model.phi, 3), "theta", np.round(model.theta, 3))
mean, half = arma_forecast(model, x[-500:], 10)
for h, (m, w) in enumerate(zip(mean, half), 1):
    print(f"  h={h:<2} {m:+.3f} +- {w:.3f}")
