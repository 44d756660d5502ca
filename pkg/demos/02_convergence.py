"""Finite games approach the limit: propagation of chaos, conditional LLN and W2.

Run:  python demos/02_convergence.py      (about half a minute)
"""
from mmfg import TimeGrid, solve
from mmfg.example6 import ExampleParams, embedded_model
from mmfg.experiments import chaos_experiment, empirical_measure_rate, lln_experiment

sol = solve(embedded_model(ExampleParams()), TimeGrid(1.0, 200))
Ns = [8, 16, 32, 64, 128, 256]

# %% coupled finite game vs limit particles on the same noise
rep = chaos_experiment(sol, Ns, n_paths=100, seed=1)
print("propagation of chaos, E sup_t |X^1,N - X^1|^2")
for N, v, se in zip(*rep.series("minor1")):
    print(f"  N={N:5d}  {v:.3e} +/- {se:.1e}")
print("  fitted slope %.2f" % rep.fits["minor1"].slope)

# %% empirical mean of limit particles vs the conditional mean
rep = lln_experiment(sol, [16, 64, 256, 1024], n_paths=100, seed=2)
print("conditional LLN slope %.2f (rate 1/M expected)" % rep.fits["sup_gap_sq"].slope)

# %% terminal empirical measure vs a large conditionally independent sample
rep = empirical_measure_rate(sol, Ns, n_paths=40, seed=3)
print("E W2^2 slope %.2f (reference of %d particles)" % (rep.fits["w2sq"].slope,
                                                         rep.extra["N_ref"]))
