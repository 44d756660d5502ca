"""Convergence-rate and approximate-Nash experiments on coupled simulations.

Every experiment steps the systems it compares in lockstep on the same noise
increments (common random numbers), so differences are pathwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import NoiseSource
from .riccati import RiccatiSolution
from .sim import (Deviation, FiniteGame, LimitSystem, UnsupportedError, chunk_size, drive,
                  map_paths, mc_estimate, trapezoid_weights, w2sq_batch, w2sq_quantile_1d)

DEFAULT_SCALES = (0.0, 0.5, 0.8, 1.2, 1.5, 2.0)
DEFAULT_SHIFTS = (-1.0, -0.5, 0.5, 1.0)


@dataclass(frozen=True)
class RateFit:
    sizes: tuple
    errors: tuple
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "errors": list(self.errors), "slope": self.slope,
                "intercept": self.intercept, "r_squared": self.r_squared}


def fit_rate(sizes, errors) -> RateFit:
    """Least squares of ``log(error)`` on ``log(N)``."""
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ValueError("need at least 3 (size, error) pairs")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("sizes and errors must be positive")
    lx, ly = np.log(x), np.log(y)
    xm, ym = lx.mean(), ly.mean()
    sxx = np.sum((lx - xm) ** 2)
    if sxx == 0:
        raise ValueError("sizes must not all be equal")
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    intercept = float(ym - slope * xm)
    sst = np.sum((ly - ym) ** 2)
    ssr = np.sum((ly - intercept - slope * lx) ** 2)
    r2 = 1.0 if sst == 0 else float(min(1.0, max(0.0, 1.0 - ssr / sst)))
    return RateFit(tuple(float(v) for v in x), tuple(float(v) for v in y), slope, intercept, r2)


def monotone_violations(values, stderrs, n_se: float = 2.0) -> list[int]:
    """Indices ``k`` where ``values[k+1]`` exceeds ``values[k]`` by more than ``n_se``
    combined standard errors."""
    out = []
    for k in range(len(values) - 1):
        se = math.hypot(stderrs[k], stderrs[k + 1])
        if values[k + 1] - values[k] > n_se * se:
            out.append(k)
    return out


@dataclass
class ExperimentReport:
    """Rows of ``(N, metric, value, stderr)`` plus fits and verdicts."""

    name: str
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add(self, N, metric, est):
        self.rows.append((int(N), metric, float(est.value), float(est.stderr)))

    def series(self, metric):
        rs = [r for r in self.rows if r[1] == metric]
        return [r[0] for r in rs], [r[2] for r in rs], [r[3] for r in rs]

    def table(self):
        return ["N", "metric", "value", "stderr"], [list(r) for r in self.rows]

    def to_dict(self) -> dict:
        return {"name": self.name, "fits": {k: v.to_dict() for k, v in self.fits.items()},
                "verdicts": self.verdicts, **self.extra}


def _check_sizes(N_list, minimum=1):
    N_list = [int(n) for n in N_list]
    if not N_list or any(n < minimum for n in N_list):
        raise ValueError(f"sizes must be >= {minimum}")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("sizes must be increasing")
    return N_list


def _lockstep(systems, sol, noise, paths, on_node):
    grid, m = sol.grid, sol.model
    n_minor = max(s.n_particles for s in systems)
    dW0 = noise.major(paths, grid, m.m0)
    dW = noise.minors(paths, n_minor, grid, m.m) if n_minor else None
    drive(systems, dW0, dW, grid, on_node)


def _run_chunks(job, n_paths, n_particles, sol):
    return map_paths(job, n_paths, chunk_size(n_particles, sol.grid, sol.model.m))


# -- propagation of chaos -------------------------------------------------------

def chaos_experiment(sol: RiccatiSolution, N_list, n_paths: int, seed: int,
                     wasserstein: bool | None = None) -> ExperimentReport:
    """Finite game with N minors against N limit particles on shared streams.

    Metrics per N: ``E sup_t |X0^N - X0|^2`` (``major``), ``E sup_t |X1^N - X1|^2``
    (``minor1``), the same averaged over all N minors (``minor_avg``) and, in
    dimension one, ``E sup_t W2^2(mu^N_t, nu^N_t)`` (``w2sq``).
    """
    N_list = _check_sizes(N_list, 2)
    d = sol.model.d
    if wasserstein is None:
        wasserstein = d == 1
    if wasserstein and d != 1:
        raise UnsupportedError("Wasserstein output needs d = 1")
    noise = NoiseSource(seed)
    rep = ExperimentReport("chaos")
    for N in N_list:
        def job(paths, N=N):
            P = len(paths)
            acc = {"major": np.zeros(P), "minor": np.zeros((P, N)), "w2sq": np.zeros(P)}

            def on_node(n, states, ctrls):
                fs, ls = states
                e0 = fs["X0"] - ls["X0"]
                acc["major"] = np.maximum(acc["major"], np.sum(e0 * e0, axis=1))
                e = fs["X"] - ls["X"]
                acc["minor"] = np.maximum(acc["minor"], np.sum(e * e, axis=1))
                if wasserstein:
                    acc["w2sq"] = np.maximum(acc["w2sq"], w2sq_batch(fs["X"][:, 0], ls["X"][:, 0]))

            _lockstep([FiniteGame(sol, N), LimitSystem(sol, N)], sol, noise, paths, on_node)
            return acc
        parts = _run_chunks(job, n_paths, N, sol)
        major = np.concatenate([p["major"] for p in parts])
        minor = np.concatenate([p["minor"] for p in parts])
        rep.add(N, "major", mc_estimate(major))
        rep.add(N, "minor1", mc_estimate(minor[:, 0]))
        rep.add(N, "minor_avg", mc_estimate(minor.mean(axis=1)))
        if wasserstein:
            rep.add(N, "w2sq", mc_estimate(np.concatenate([p["w2sq"] for p in parts])))
    metrics = ("major", "minor1", "minor_avg") + (("w2sq",) if wasserstein else ())
    for metric in metrics:
        Ns, vals, ses = rep.series(metric)
        rep.verdicts[f"{metric}_monotone_violations"] = monotone_violations(vals, ses)
        if all(v > 0 for v in vals) and len(vals) >= 3:
            rep.fits[metric] = fit_rate(Ns, vals)
    return rep


# -- conditional law of large numbers ------------------------------------------

def lln_experiment(sol: RiccatiSolution, M_list, n_paths: int, seed: int) -> ExperimentReport:
    """``E sup_t |(1/M) sum_i X^i_t - Xbar_t|^2`` for limit particles.

    One run with ``max(M_list)`` particles; each ``M`` uses the first ``M``.
    """
    M_list = _check_sizes(M_list, 1)
    Mmax = M_list[-1]
    noise = NoiseSource(seed)
    rep = ExperimentReport("lln")

    def job(paths):
        acc = np.zeros((len(paths), len(M_list)))

        def on_node(n, states, ctrls):
            st = states[0]
            for j, M in enumerate(M_list):
                gap = st["X"][:, :, :M].mean(axis=-1) - st["Xbar"]
                acc[:, j] = np.maximum(acc[:, j], np.sum(gap * gap, axis=1))

        _lockstep([LimitSystem(sol, Mmax)], sol, noise, paths, on_node)
        return acc
    acc = np.concatenate(_run_chunks(job, n_paths, Mmax, sol))
    for j, M in enumerate(M_list):
        rep.add(M, "sup_gap_sq", mc_estimate(acc[:, j]))
    Ms, vals, _ = rep.series("sup_gap_sq")
    if len(vals) >= 3 and all(v > 0 for v in vals):
        rep.fits["sup_gap_sq"] = fit_rate(Ms, vals)
    return rep


# -- empirical measure rate -----------------------------------------------------

def empirical_measure_rate(sol: RiccatiSolution, N_list, n_paths: int, seed: int,
                           ref_factor: int = 16, reference: str = "disjoint") -> ExperimentReport:
    """``E W2^2(mu^N_T, mu^ref_T)`` for limit particles at the horizon.

    The reference measure has ``ref_factor * max(N_list)`` particles sharing
    the major path. With ``reference="disjoint"`` it uses players after the
    measured ones, so the two samples are conditionally independent; with
    ``"shared"`` it uses players ``1..N_ref`` and contains every measured sample.
    """
    if sol.model.d != 1:
        raise UnsupportedError("the empirical-measure rate is computed for d = 1 only")
    if reference not in ("disjoint", "shared"):
        raise ValueError("reference must be 'disjoint' or 'shared'")
    N_list = _check_sizes(N_list, 1)
    Nmax = N_list[-1]
    N_ref = ref_factor * Nmax
    offset = Nmax if reference == "disjoint" else 0
    total = offset + N_ref
    noise = NoiseSource(seed)
    rep = ExperimentReport("measure_rate", extra={"N_ref": N_ref, "reference": reference})

    def job(paths):
        states = {}

        def on_node(n, sts, ctrls):
            if n == sol.grid.n_steps:
                states["X"] = sts[0]["X"][:, 0].copy()
        _lockstep([LimitSystem(sol, total)], sol, noise, paths, on_node)
        X = states["X"]
        out = np.empty((len(paths), len(N_list)))
        for p in range(len(paths)):
            ref = X[p, offset:offset + N_ref]
            for j, N in enumerate(N_list):
                out[p, j] = w2sq_quantile_1d(X[p, :N], ref)
        return out
    vals = np.concatenate(_run_chunks(job, n_paths, total, sol))
    rep.extra["samples"] = vals
    for j, N in enumerate(N_list):
        rep.add(N, "w2sq", mc_estimate(vals[:, j]))
    Ns, v, _ = rep.series("w2sq")
    if len(v) >= 3 and all(x > 0 for x in v):
        rep.fits["w2sq"] = fit_rate(Ns, v)
    return rep

# -- approximate Nash ---------------------------------------------------------------

def default_deviations(players=("major", "minor"), scales=DEFAULT_SCALES,
                       shifts=DEFAULT_SHIFTS) -> list[Deviation]:
    return [Deviation(p, "scale", s) for p in players for s in scales] + \
           [Deviation(p, "shift", s) for p in players for s in shifts]


def moment_exponent(sol: RiccatiSolution, player: str) -> float:
    """``d + 5`` for the major player, 2 for a minor."""
    return float(sol.model.d + 5) if player == "major" else 2.0


@dataclass
class NashReport:
    N: int
    kappa: dict
    equilibrium_cost: dict
    deviation_costs: list
    max_gain: dict
    excluded: list

    def to_dict(self) -> dict:
        return {"N": self.N, "kappa": self.kappa, "equilibrium_cost": self.equilibrium_cost,
                "deviation_costs": self.deviation_costs, "max_gain": self.max_gain,
                "excluded": self.excluded}


def nash_gap_experiment(sol: RiccatiSolution, N: int, deviations, n_paths: int, seed: int,
                        kappa: dict | float | None = None) -> NashReport:
    """Cost change of unilateral deviations from the equilibrium feedback.

    Baseline and every deviation run in lockstep on the same increments. The
    deviating player switches feedback; everybody else keeps the control
    process of the baseline run (the open-loop notion of equilibrium). The
    gain of a deviation is ``J(equilibrium) - J(deviation)`` for the deviating
    player (player 0 or player 1), estimated from paired per-path differences.
    A deviation whose control moment ``E int |u|^p dt`` exceeds ``kappa`` is
    excluded and flagged. Default ``kappa`` is 10 times the equilibrium moment
    (at least 10).
    """
    deviations = list(deviations)
    if not deviations:
        raise ValueError("the deviation family is empty")
    if N < 1:
        raise ValueError("N must be >= 1")
    noise = NoiseSource(seed)
    eq_game = FiniteGame(sol, N)
    systems = [eq_game] + [FiniteGame(sol, N, dv, baseline=eq_game) for dv in deviations]
    w = trapezoid_weights(sol.grid)
    p_major, p_minor = moment_exponent(sol, "major"), moment_exponent(sol, "minor")

    def job(paths):
        P, S = len(paths), len(systems)
        acc = {k: np.zeros((S, P)) for k in ("J0", "J1", "m0", "m1")}

        def on_node(n, states, ctrls):
            for j, (s, st, (u0, u)) in enumerate(zip(systems, states, ctrls)):
                f0, f = s.running_costs(st, u0, u)
                acc["J0"][j] += w[n] * f0
                acc["J1"][j] += w[n] * f[:, 0]
                acc["m0"][j] += w[n] * np.linalg.norm(u0, axis=1) ** p_major
                acc["m1"][j] += w[n] * np.linalg.norm(u[:, :, 0], axis=1) ** p_minor
        _lockstep(systems, sol, noise, paths, on_node)
        return acc
    chunk = max(1, chunk_size(N, sol.grid, sol.model.m) // max(1, len(systems) // 4))
    parts = map_paths(job, n_paths, chunk)
    acc = {k: np.concatenate([p[k] for p in parts], axis=1) for k in parts[0]}

    eq_m = {"major": float(acc["m0"][0].mean()), "minor": float(acc["m1"][0].mean())}
    if kappa is None:
        kappa = {k: 10.0 * max(v, 1.0) for k, v in eq_m.items()}
    elif not isinstance(kappa, dict):
        kappa = {"major": float(kappa), "minor": float(kappa)}
    base = {"major": acc["J0"][0], "minor": acc["J1"][0]}
    eq_cost = {"major": mc_estimate(base["major"]).to_dict(),
               "minor": mc_estimate(base["minor"]).to_dict()}
    rows, excluded = [], []
    max_gain = {"major": None, "minor": None}
    for j, dv in enumerate(deviations, start=1):
        J = acc["J0"][j] if dv.player == "major" else acc["J1"][j]
        mom = float((acc["m0"] if dv.player == "major" else acc["m1"])[j].mean())
        gain = mc_estimate(base[dv.player] - J)
        cost = mc_estimate(J)
        admissible = mom <= kappa[dv.player]
        rows.append({"label": dv.label, "player": dv.player, "cost": cost.value,
                     "cost_stderr": cost.stderr, "gain": gain.value,
                     "gain_stderr": gain.stderr, "moment": mom, "admissible": admissible})
        if not admissible:
            excluded.append(dv.label)
            continue
        best = max_gain[dv.player]
        if best is None or gain.value > best["value"]:
            max_gain[dv.player] = {"value": gain.value, "stderr": gain.stderr,
                                   "label": dv.label}
    return NashReport(N, kappa, eq_cost, rows, max_gain, excluded)


def nash_envelope(N_list, gains, stderrs, rate: float = 0.2) -> dict:
    """Fit ``c N^-rate`` to the positive parts of ``gains`` by least squares
    (``c >= 0``) and report which points exceed the envelope by > 2 stderr."""
    N = np.asarray(N_list, dtype=float)
    g = np.asarray(gains, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    x = N ** -rate
    c = max(0.0, float(np.sum(np.maximum(g, 0.0) * x) / np.sum(x * x)))
    env = c * x
    bad = [int(n) for n, gi, ei, si in zip(N, g, env, se) if gi > ei + 2 * si]
    return {"c": c, "rate": rate, "envelope": env.tolist(), "violations": bad,
            "ok": not bad}
