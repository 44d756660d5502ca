"""Euler-Maruyama simulation of the finite game and of its limit.

Three systems share one time-stepping driver and one noise layout:

* :class:`FiniteGame` -- the major player and ``N`` minors interacting through
  their empirical mean, every player using the equilibrium feedback (one
  player may deviate while the others keep their equilibrium controls).
* :class:`LimitSystem` -- the major player driven by the exact conditional
  mean ``Xbar`` (an ODE given ``X0``), plus ``M`` conditionally independent
  minor particles. With ``M = 0`` it is the conditional-mean system.

Particle arrays are laid out ``(paths, dim, particles)``. All small matrix
products go through :func:`_lin`, a fixed-order sum, so a path's trajectory
does not depend on how many other paths are batched with it.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import LqgModel
from .noise import NoiseSource
from .numerics import TimeGrid
from .riccati import RiccatiSolution

CHUNK_BYTES = 1 << 27


def threads() -> int:
    try:
        return max(1, int(os.environ.get("MMFG_THREADS", "1")))
    except ValueError:
        return 1


def _lin(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M`` applied along axis 1 of ``x``."""
    shape = (x.shape[0], M.shape[0]) + x.shape[2:]
    bshape = (1, M.shape[0]) + (1,) * (x.ndim - 2)
    out = np.zeros(shape)
    for j in range(M.shape[1]):
        out = out + M[:, j].reshape(bshape) * x[:, j:j + 1]
    return out


def _quad(M: np.ndarray, e: np.ndarray) -> np.ndarray:
    """``e' M e`` along axis 1."""
    Me = _lin(M, e)
    acc = np.zeros((e.shape[0],) + e.shape[2:])
    for i in range(e.shape[1]):
        acc = acc + e[:, i] * Me[:, i]
    return acc


@dataclass(frozen=True)
class Deviation:
    """A unilateral change of feedback: ``scale`` multiplies the equilibrium
    control, ``shift`` adds a constant to every component. ``player`` is
    ``"major"`` or ``"minor"`` (the minor deviation is applied to player 1)."""

    player: str
    kind: str
    value: float

    def __post_init__(self):
        if self.player not in ("major", "minor") or self.kind not in ("scale", "shift"):
            raise ValueError(f"bad deviation {self}")

    @property
    def label(self) -> str:
        return f"{self.player}:{self.kind}={self.value:g}"

    def apply(self, u: np.ndarray) -> np.ndarray:
        return u * self.value if self.kind == "scale" else u + self.value


class _System:
    """Shared coefficient tables; subclasses define the mean field."""

    kind = ""

    def __init__(self, sol: RiccatiSolution, n_particles: int):
        self.sol = sol
        self.model = sol.model
        self.n_particles = n_particles
        self.h = sol.grid.h
        self.G0x0, self.G0xb, self.g0 = sol.major_feedback()
        self.Gx, self.Gx0, self.Gxb, self.g = sol.minor_feedback()

    def _major_control(self, n, X0, Xb):
        return _lin(self.G0x0[n], X0) + _lin(self.G0xb[n], Xb) + self.g0[n]

    def _minor_controls(self, n, X, X0, Xb):
        common = _lin(self.Gx0[n], X0) + _lin(self.Gxb[n], Xb) + self.g[n]
        if X.ndim == 2:
            return _lin(self.Gx[n], X) + common
        return _lin(self.Gx[n], X) + common[:, :, None]

    def _advance_major(self, X0, Xb, u0, dW0):
        m = self.model
        return X0 + self.h * (_lin(m.A0, X0) + _lin(m.B0, u0) + _lin(m.F0, Xb)) + _lin(m.D0, dW0)

    def _advance_minors(self, X, X0, Xb, u, dW):
        m = self.model
        shared = (_lin(m.F, Xb) + _lin(m.G, X0))[:, :, None]
        return X + self.h * (_lin(m.A, X) + _lin(m.B, u) + shared) + _lin(m.D, dW)

    def running_costs(self, st, u0, u):
        """Major cost rate ``(P,)`` and minor cost rates ``(P, particles)``."""
        m = self.model
        X0, Xb = st["X0"], st["Xbar"]
        f0 = _quad(m.Q0, X0 - _lin(m.H0, Xb) - m.eta0) + _quad(m.R0, u0)
        if u is None:
            return f0, None
        target = (_lin(m.H, X0) + _lin(m.Hhat, Xb) + m.eta)[:, :, None]
        f = _quad(m.Q, st["X"] - target) + _quad(m.R, u)
        return f0, f

    def _init_common(self, P):
        m = self.model
        X0 = np.tile(m.x0_major, (P, 1))
        X = np.tile(m.x0_minor[None, :, None], (P, 1, self.n_particles))
        return X0, X


class FiniteGame(_System):
    """The (N+1)-player game. With a ``deviation``, one player replaces its
    feedback while every other player keeps its equilibrium control process,
    i.e. the controls it uses in the undeviated game on the same noise.

    Those frozen controls come from ``baseline``, an undeviated game driven
    earlier in the same lockstep run, or from a private shadow copy when no
    baseline is given.
    """
    kind = "finite"

    def __init__(self, sol: RiccatiSolution, N: int, deviation: Deviation | None = None,
                 baseline: "FiniteGame | None" = None):
        if N < 1:
            raise ValueError("the finite game needs N >= 1 minor players")
        super().__init__(sol, N)
        if baseline is not None and (baseline.deviation is not None or baseline.n_particles != N
                                     or baseline.sol is not sol):
            raise ValueError("the baseline must be the undeviated game with the same N")
        self.deviation = deviation
        self.shadow = deviation is not None and baseline is None
        self.baseline = FiniteGame(sol, N) if self.shadow else baseline

    def init(self, P):
        X0, X = self._init_common(P)
        st = {"X0": X0, "X": X, "Xbar": X.mean(axis=-1)}
        if self.shadow:
            st["base"] = self.baseline.init(P)
        return st

    def controls(self, n, st):
        dev = self.deviation
        if dev is None:
            u0 = self._major_control(n, st["X0"], st["Xbar"])
            u = self._minor_controls(n, st["X"], st["X0"], st["Xbar"])
            st["ctrl"] = (u0, u)
            return u0, u
        base = st["base"]
        bu0, bu = self.baseline.controls(n, base) if self.shadow else base["ctrl"]
        if dev.player == "major":
            return dev.apply(self._major_control(n, st["X0"], st["Xbar"])), bu
        own = self._minor_controls(n, st["X"][:, :, :1], st["X0"], st["Xbar"])
        u = bu.copy()
        u[:, :, 0] = dev.apply(own[:, :, 0])
        return bu0, u

    def advance(self, n, st, u0, u, dW0, dW):
        if self.shadow:
            self.baseline.advance(n, st["base"], *st["base"]["ctrl"], dW0, dW)
        X0, X, Xb = st["X0"], st["X"], st["Xbar"]
        st["X0"] = self._advance_major(X0, Xb, u0, dW0)
        st["X"] = self._advance_minors(X, X0, Xb, u, dW)
        st["Xbar"] = st["X"].mean(axis=-1)


class LimitSystem(_System):
    kind = "limit"

    def __init__(self, sol: RiccatiSolution, M: int = 0):
        if M < 0:
            raise ValueError("M must be nonnegative")
        super().__init__(sol, M)

    def init(self, P):
        X0, X = self._init_common(P)
        return {"X0": X0, "X": X, "Xbar": np.tile(self.model.x0_minor, (P, 1))}

    def controls(self, n, st):
        u0 = self._major_control(n, st["X0"], st["Xbar"])
        u = self._minor_controls(n, st["X"], st["X0"], st["Xbar"]) if self.n_particles else None
        return u0, u

    def mean_control(self, n, st):
        return self._minor_controls(n, st["Xbar"], st["X0"], st["Xbar"])

    def advance(self, n, st, u0, u, dW0, dW):
        m = self.model
        X0, Xb = st["X0"], st["Xbar"]
        ub = self.mean_control(n, st)
        st["X0"] = self._advance_major(X0, Xb, u0, dW0)
        st["Xbar"] = Xb + self.h * (_lin(m.A, Xb) + _lin(m.B, ub) + _lin(m.F, Xb) + _lin(m.G, X0))
        if self.n_particles:
            st["X"] = self._advance_minors(st["X"], X0, Xb, u, dW)


def drive(systems, dW0: np.ndarray, dW: np.ndarray | None, grid: TimeGrid, on_node=None):
    """Step every system on the same increments.

    ``dW0`` is ``(P, n_steps, m0)``; ``dW`` is ``(P, players, n_steps, m)`` and
    each system uses its first ``n_particles`` players. ``on_node(n, states,
    controls)`` is called at every node before stepping. A deviated game whose
    baseline is in ``systems`` reads the baseline's controls node by node.
    """
    P = dW0.shape[0]
    states = [s.init(P) for s in systems]
    for j, s in enumerate(systems):
        b = getattr(s, "baseline", None)
        if b is not None and not s.shadow:
            k = next((i for i, o in enumerate(systems) if o is b), None)
            if k is None or k >= j:
                raise ValueError("a deviated game must follow its baseline in the run")
            states[j]["base"] = states[k]
    for n in range(grid.n_steps + 1):
        ctrls = [s.controls(n, st) for s, st in zip(systems, states)]
        if on_node is not None:
            on_node(n, states, ctrls)
        if n == grid.n_steps:
            break
        for s, st, (u0, u) in zip(systems, states, ctrls):
            dWn = dW[:, :s.n_particles, n, :].transpose(0, 2, 1) if s.n_particles else None
            s.advance(n, st, u0, u, dW0[:, n], dWn)
    return states


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(len(grid), grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


def chunk_size(n_particles: int, grid: TimeGrid, dim: int, budget: int = CHUNK_BYTES) -> int:
    per_path = max(1, n_particles) * grid.n_steps * max(1, dim) * 8
    return max(1, budget // per_path)


def map_paths(fn, n_paths: int, chunk: int) -> list:
    """``fn(range)`` over consecutive path chunks; results in path order."""
    ranges = [range(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]
    workers = threads()
    if workers == 1 or len(ranges) == 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, ranges))


# -- path bundles -------------------------------------------------------------

@dataclass
class PathBundle:
    """Sampled trajectories, indexed ``[path, (particle,) node, component]``."""

    grid: TimeGrid
    kind: str
    n_particles: int
    major: np.ndarray
    cond_mean: np.ndarray
    minors: np.ndarray | None = None
    controls: dict = field(default_factory=dict)
    adjoints: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.major.shape[0]


def _concat(parts: list[dict]) -> dict:
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]
            if parts[0][k] is not None}


def _record_run(system, sol, noise, paths, keep, adjoints):
    grid = sol.grid
    m = sol.model
    P, n1, K = len(paths), len(grid), keep
    dW0 = noise.major(paths, grid, m.m0)
    dW = noise.minors(paths, system.n_particles, grid, m.m) if system.n_particles else None
    rec = {"major": np.empty((P, n1, m.d0)), "cond_mean": np.empty((P, n1, m.d)),
           "u0": np.empty((P, n1, m.k0)),
           "minors": np.empty((P, K, n1, m.d)) if K else None,
           "u": np.empty((P, K, n1, m.k)) if K else None,
           "J0": np.zeros(P), "J1": np.zeros(P), "J_minor_mean": np.zeros(P)}
    if adjoints:
        rec["Y"] = np.empty((P, n1, sol.system.ny))
    w = trapezoid_weights(grid)

    def on_node(n, states, ctrls):
        st, (u0, u) = states[0], ctrls[0]
        rec["major"][:, n] = st["X0"]
        rec["cond_mean"][:, n] = st["Xbar"]
        rec["u0"][:, n] = u0
        if K:
            rec["minors"][:, :, n] = st["X"][:, :, :K].transpose(0, 2, 1)
            rec["u"][:, :, n] = u[:, :, :K].transpose(0, 2, 1)
        f0, f = system.running_costs(st, u0, u)
        rec["J0"] += w[n] * f0
        if f is not None:
            rec["J1"] += w[n] * f[:, 0]
            rec["J_minor_mean"] += w[n] * f.mean(axis=-1)
        if adjoints:
            Xs = np.concatenate([st["X0"], st["Xbar"]], axis=1)
            rec["Y"][:, n] = _lin(sol.S.values[n], Xs) + sol.s.values[n]

    drive([system], dW0, dW, grid, on_node)
    return rec


def _bundle(system, sol, noise, n_paths, keep, adjoints):
    grid = sol.grid
    chunk = chunk_size(system.n_particles, grid, sol.model.m)
    parts = map_paths(lambda r: _record_run(system, sol, noise, r, keep, adjoints), n_paths, chunk)
    rec = _concat(parts)
    d0, d = sol.model.d0, sol.model.d
    b = PathBundle(grid, system.kind, system.n_particles, rec["major"], rec["cond_mean"],
                   rec.get("minors"))
    b.controls["u0"] = rec["u0"]
    if "u" in rec:
        b.controls["u"] = rec["u"]
    b.costs["J0"] = rec["J0"]
    if system.n_particles:
        b.costs["J1"] = rec["J1"]
        b.costs["J_minor_mean"] = rec["J_minor_mean"]
    if adjoints:
        Y = rec["Y"]
        b.adjoints = {"P0bar": Y[:, :, :d0], "Pbar": Y[:, :, d0:d0 + d],
                      "Ybar": Y[:, :, d0 + d:]}
    return b


def simulate_conditional_mean(sol: RiccatiSolution, noise: NoiseSource,
                              n_paths: int) -> PathBundle:
    """Paths of ``(X0, Xbar)`` driven by W0 alone, with reconstructed adjoints."""
    if sol is None or sol.S is None:
        raise ValueError("a Riccati solution is required")
    return _bundle(LimitSystem(sol, 0), sol, noise, n_paths, 0, adjoints=True)


def simulate_finite_game(sol: RiccatiSolution, N: int, noise: NoiseSource, n_paths: int,
                         deviation: Deviation | None = None,
                         keep_minors: int | None = None) -> PathBundle:
    """The (N+1)-player game under the equilibrium feedback profile.

    ``keep_minors`` caps how many minor trajectories are stored (players
    ``1..keep_minors``); costs always cover every player.
    """
    system = FiniteGame(sol, N, deviation)
    keep = N if keep_minors is None else min(keep_minors, N)
    return _bundle(system, sol, noise, n_paths, keep, adjoints=False)


def simulate_limit_particles(sol: RiccatiSolution, M: int, noise: NoiseSource, n_paths: int,
                             keep_minors: int | None = None) -> PathBundle:
    """Limit system: exact conditional mean plus ``M`` minor particles."""
    if M < 1:
        raise ValueError("need M >= 1 limit particles")
    keep = M if keep_minors is None else min(keep_minors, M)
    return _bundle(LimitSystem(sol, M), sol, noise, n_paths, keep, adjoints=True)


# -- estimates ----------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr}


def mc_estimate(samples: np.ndarray) -> Estimate:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return Estimate(float("nan"), float("nan"))
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return Estimate(float(x.mean()), se)


def path_costs(bundle: PathBundle, model: LqgModel) -> dict:
    """Per-path trapezoidal costs recomputed from the stored trajectories.

    The minor average runs over the stored minors; for a finite-game bundle
    the mean field is the stored ``cond_mean`` (the mean of *all* minors).
    """
    if "u0" not in bundle.controls:
        raise ValueError("bundle has no recorded controls")
    w = trapezoid_weights(bundle.grid)
    X0, Xb, u0 = bundle.major, bundle.cond_mean, bundle.controls["u0"]
    P, n1 = X0.shape[:2]
    flat = lambda a: a.reshape(P * n1, -1)
    e0 = flat(X0) - flat(Xb) @ model.H0.T - model.eta0
    f0 = (np.einsum("ni,ij,nj->n", e0, model.Q0, e0)
          + np.einsum("ni,ij,nj->n", flat(u0), model.R0, flat(u0))).reshape(P, n1)
    out = {"J0": f0 @ w}
    if bundle.minors is not None and bundle.minors.shape[1] > 0:
        X, u = bundle.minors, bundle.controls["u"]
        target = X0 @ model.H.T + Xb @ model.Hhat.T + model.eta
        e = X - target[:, None]
        f = (np.einsum("pknj,ij,pkni->pkn", e, model.Q, e)
             + np.einsum("pknj,ij,pkni->pkn", u, model.R, u))
        Ji = f @ w
        out["J1"] = Ji[:, 0]
        out["J_minor_mean"] = Ji.mean(axis=1)
    return out


def estimate_costs(bundle: PathBundle, model: LqgModel) -> dict:
    return {k: mc_estimate(v) for k, v in path_costs(bundle, model).items()
            if k in ("J0", "J_minor_mean", "J1")}


def control_moment(bundle: PathBundle, p: float, which: str = "u0") -> Estimate:
    """Monte Carlo estimate of ``E int |u|^p dt`` from recorded controls.

    For ``which="u"`` the first stored minor is used.
    """
    u = bundle.controls[which]
    if which == "u":
        u = u[:, 0]
    w = trapezoid_weights(bundle.grid)
    return mc_estimate((np.linalg.norm(u, axis=-1) ** p) @ w)


# -- Wasserstein distances in one dimension -------------------------------------

class UnsupportedError(ValueError):
    pass


@dataclass
class EmpiricalMeasure:
    atoms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one atom")
        self.atoms = a

    @property
    def count(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.count, 1.0 / self.count)


def _atoms_1d(m) -> np.ndarray:
    m = m if isinstance(m, EmpiricalMeasure) else EmpiricalMeasure(m)
    if m.dim != 1:
        raise UnsupportedError("only one-dimensional measures are supported")
    return m.atoms[:, 0]


def wasserstein2_sq_1d(a, b) -> float:
    x, y = _atoms_1d(a), _atoms_1d(b)
    if x.size != y.size:
        raise UnsupportedError(f"atom counts differ ({x.size} vs {y.size})")
    return float(np.mean((np.sort(x) - np.sort(y)) ** 2))


def wasserstein2_1d(a, b) -> float:
    """Exact W2 between equal-size empirical measures on the line (sorted coupling)."""
    return float(np.sqrt(wasserstein2_sq_1d(a, b)))


def w2sq_batch(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared W2 along the last axis for batches of equal-size atom sets."""
    if x.shape != y.shape:
        raise UnsupportedError("batches must have equal shapes")
    return np.mean((np.sort(x, axis=-1) - np.sort(y, axis=-1)) ** 2, axis=-1)


def w2sq_quantile_1d(x: np.ndarray, y: np.ndarray) -> float:
    """Squared W2 between empirical measures of any sizes, via quantile functions."""
    x, y = np.sort(np.ravel(x)), np.sort(np.ravel(y))
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise ValueError("empty measure")
    # breakpoints of both quantile functions on the common scale 1/(n m)
    cuts = np.union1d(np.arange(n + 1) * m, np.arange(m + 1) * n)
    left, length = cuts[:-1], np.diff(cuts)
    return float(np.sum(length * (x[left // m] - y[left // n]) ** 2) / (n * m))


def trajectory_table(bundle: PathBundle) -> tuple[list[str], list[list]]:
    """Long-format rows ``path,t,series,component,value``.

    Series: ``X0``, ``Xbar``, ``X_i`` and ``u_i`` for stored minors,
    ``P0bar``, ``Pbar``, ``Ybar`` when adjoints were reconstructed, ``u0``.
    Components are numbered from 0.
    """
    series = [("X0", bundle.major), ("Xbar", bundle.cond_mean)]
    if bundle.minors is not None:
        series += [(f"X_{i + 1}", bundle.minors[:, i]) for i in range(bundle.minors.shape[1])]
    series += [(k, bundle.adjoints[k]) for k in ("P0bar", "Pbar", "Ybar") if k in bundle.adjoints]
    if "u0" in bundle.controls:
        series.append(("u0", bundle.controls["u0"]))
    if "u" in bundle.controls:
        u = bundle.controls["u"]
        series += [(f"u_{i + 1}", u[:, i]) for i in range(u.shape[1])]
    t = bundle.grid.nodes
    rows = []
    for p in range(bundle.n_paths):
        for n in range(len(t)):
            for name, arr in series:
                for c in range(arr.shape[-1]):
                    rows.append([p, t[n], name, c, arr[p, n, c]])
    return ["path", "t", "series", "component", "value"], rows
