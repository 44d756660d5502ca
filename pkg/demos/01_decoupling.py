"""Solve the decoupling Riccati system two ways and look at the equilibrium feedback.

Run:  python demos/01_decoupling.py
"""
import numpy as np

from mmfg import TimeGrid, solve
from mmfg.example6 import ExampleParams, scheme_difference
from mmfg.model import random_model
from mmfg.riccati import minor_drift_residual, riccati_residual

# %% a random model with every coupling switched on (one major state, two minor states)
model = random_model(np.random.default_rng(3), d0=1, d=2)
grid = TimeGrid(model.T, 1000)
sol = solve(model, grid)  # propagator, cross-checked against RK4

print("S shape per node:", sol.S.values.shape[1:])
print("propagator vs RK4 gap:      %.2e" % sol.cross_check_gap)
print("Riccati residual (max):     %.2e" % riccati_residual(sol.system, sol.S).max())
print("minor drift residual (max): %.2e" % minor_drift_residual(sol)[1:-1].max())
print("min singular value of Gamma22: %.3g" % sol.aprime.min_singular_value)

# %% the feedback on the major state decays to zero at the horizon
L0 = sol.block(1, 1)
for t in (0.0, 0.5, 0.9, 1.0):
    n = int(round(t * grid.n_steps))
    print(f"t={t:.1f}  S00 = {L0[n].ravel()}")

# %% the one-dimensional example: two decoupling schemes give different controls
diff = scheme_difference(ExampleParams(), grid)
print("\nexample, a=b=c=q=1: max feedback gap %.5f" % diff["max_coeff_gap"])
for kw in ({"q": 0.0}, {"c": 0.0}):
    g = scheme_difference(ExampleParams(**kw), grid)["max_coeff_gap"]
    print(f"example, {kw}: gap {g:.1e}")
