"""Unilateral deviations and the finite-aggregate example.

Run:  python demos/03_nash_and_schemes.py      (about half a minute)
"""
import numpy as np

from mmfg import NoiseSource, TimeGrid, solve
from mmfg.example6 import ExampleParams, verify_pnew
from mmfg.experiments import default_deviations, nash_gap_experiment
from mmfg.model import random_model

grid = TimeGrid(1.0, 100)

# %% cost gains of scaled and shifted feedback for the major and a minor player
sol = solve(random_model(np.random.default_rng(77), 1, 1), grid)
for N in (8, 64):
    rep = nash_gap_experiment(sol, N, default_deviations(), n_paths=200, seed=4)
    for who, best in rep.max_gain.items():
        print(f"N={N:3d} {who:5s} best deviation {best['label']:>14s}: "
              f"gain {best['value']:+.2e} +/- {best['stderr']:.1e}")

# %% finite aggregate equilibria converge to one scheme and not the other
rep = verify_pnew(ExampleParams(), [8, 32, 128, 512], TimeGrid(1.0, 200), NoiseSource(5), 200)
print("\n   N   state err    control err (new)  control err (old)")
for r in rep["rows"]:
    print(f"{r['N']:4d}   {r['err_state']:.2e}    {r['err_control_new']:.2e}"
          f"           {r['err_control_old']:.2e}")
print("state error slope %.2f; Gronwall bound e^(K T) = %.1f" % (rep["fit"].slope, rep["bound"]))
