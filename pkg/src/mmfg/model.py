"""Coefficient data of the linear-quadratic major/minor game.

Dynamics, with ``Xbar`` the mean of the minor states::

    dX0 = (A0 X0 + B0 u0 + F0 Xbar) dt + D0 dW0
    dXi = (A Xi + B ui + F Xbar + G X0) dt + D dWi

Running costs (no terminal cost)::

    major: (X0 - H0 Xbar - eta0)' Q0 (X0 - H0 Xbar - eta0) + u0' R0 u0
    minor: (Xi - H X0 - Hhat Xbar - eta)' Q (...) + ui' R ui
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import as_matrix

_MATRIX_FIELDS = ("A0", "B0", "F0", "D0", "A", "B", "F", "G", "D",
                  "Q0", "R0", "H0", "Q", "R", "H", "Hhat")
_VECTOR_FIELDS = ("eta0", "eta", "x0_major", "x0_minor")
_DIM_FIELDS = ("d0", "d", "k0", "k", "m0", "m")


class ModelValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class LqgModel:
    A0: np.ndarray
    B0: np.ndarray
    F0: np.ndarray
    D0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    D: np.ndarray
    Q0: np.ndarray
    R0: np.ndarray
    H0: np.ndarray
    eta0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    H: np.ndarray
    Hhat: np.ndarray
    eta: np.ndarray
    x0_major: np.ndarray
    x0_minor: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        for name in _MATRIX_FIELDS:
            setattr(self, name, as_matrix(getattr(self, name), name))
        for name in _VECTOR_FIELDS:
            v = np.atleast_1d(np.array(getattr(self, name), dtype=float))
            if v.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            setattr(self, name, v)
        self.T = float(self.T)

    d0 = property(lambda self: self.A0.shape[0])
    d = property(lambda self: self.A.shape[0])
    k0 = property(lambda self: self.B0.shape[1])
    k = property(lambda self: self.B.shape[1])
    m0 = property(lambda self: self.D0.shape[1])
    m = property(lambda self: self.D.shape[1])

    @classmethod
    def from_dict(cls, data: dict) -> "LqgModel":
        """Build from JSON-style data; dimension keys, if present, are checked."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - set(_DIM_FIELDS)
        if unknown:
            raise ModelValidationError([f"unknown model field '{u}'" for u in sorted(unknown)])
        missing = known - set(data) - {"T"}
        if missing:
            raise ModelValidationError([f"missing model field '{m}'" for m in sorted(missing)])
        try:
            model = cls(**{k: v for k, v in data.items() if k in known})
        except ValueError as exc:
            raise ModelValidationError([str(exc)]) from exc
        bad = [f"{k}={data[k]} does not match the matrices ({getattr(model, k)})"
               for k in _DIM_FIELDS if k in data and int(data[k]) != getattr(model, k)]
        if bad:
            raise ModelValidationError(bad)
        return model

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        for k in _DIM_FIELDS:
            out[k] = getattr(self, k)
        return out


def validate(model: LqgModel, sym_tol: float = 1e-10) -> list[str]:
    """Every violation found; an empty list means the model is usable."""
    d0, d, k0, k, m0, m = (model.d0, model.d, model.k0, model.k, model.m0, model.m)
    expected = {
        "A0": (d0, d0), "B0": (d0, k0), "F0": (d0, d), "D0": (d0, m0),
        "A": (d, d), "B": (d, k), "F": (d, d), "G": (d, d0), "D": (d, m),
        "Q0": (d0, d0), "R0": (k0, k0), "H0": (d0, d), "Q": (d, d), "R": (k, k),
        "H": (d, d0), "Hhat": (d, d),
        "eta0": (d0,), "eta": (d,), "x0_major": (d0,), "x0_minor": (d,),
    }
    out = []
    for name, shape in expected.items():
        got = getattr(model, name).shape
        if got != shape:
            out.append(f"{name} has shape {got}, expected {shape}")
    if not model.T > 0:
        out.append("T must be positive")
    if out:
        return out  # definiteness checks need consistent shapes
    for name, pd in (("Q0", False), ("Q", False), ("R0", True), ("R", True)):
        mat = getattr(model, name)
        if not np.allclose(mat, mat.T, rtol=0.0, atol=sym_tol):
            out.append(f"{name} not symmetric")
            continue
        lo = np.linalg.eigvalsh(0.5 * (mat + mat.T)).min()
        if pd and not lo > 0:
            out.append(f"{name} not positive definite")
        elif not pd and lo < -sym_tol:
            out.append(f"{name} not positive semidefinite")
    return out


def check(model: LqgModel) -> LqgModel:
    problems = validate(model)
    if problems:
        raise ModelValidationError(problems)
    return model


@dataclass(frozen=True)
class AssembledSystem:
    """Block form of the conditioned equilibrium FBSDE.

    Forward state ``(X0, Xbar)`` and backward state ``(P0bar, Pbar, Ybar)``::

        dX = (Abb X + Bbb Y + Cbb) dt + Dbb dW0
        dY = -(Ahat X + Bhat Y + Chat) dt + Z dW0

    ``Bcal`` is the block matrix ``[[Abb, Bbb], [Ahat, Bhat]]`` with the
    displayed signs; ``hamiltonian`` is the generator of the linear flow
    ``d(X, Y)/dt`` solved by the decoupled system, whose lower block row
    carries the minus sign of the backward equation.
    """

    Abb: np.ndarray
    Bbb: np.ndarray
    Dbb: np.ndarray
    Ahat: np.ndarray
    Bhat: np.ndarray
    Cbb: np.ndarray
    Chat: np.ndarray
    d0: int
    d: int

    @property
    def nx(self) -> int:
        return self.Abb.shape[0]

    @property
    def ny(self) -> int:
        return self.Bhat.shape[0]

    @property
    def Bcal(self) -> np.ndarray:
        return np.block([[self.Abb, self.Bbb], [self.Ahat, self.Bhat]])

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.block([[self.Abb, self.Bbb], [-self.Ahat, -self.Bhat]])

    @classmethod
    def from_blocks(cls, Abb, Bbb, Ahat, Bhat, Cbb=None, Chat=None, Dbb=None):
        """Free-form system (used for scalar reductions and stress cases)."""
        Abb, Bbb, Ahat, Bhat = (as_matrix(x) for x in (Abb, Bbb, Ahat, Bhat))
        nx, ny = Abb.shape[0], Bhat.shape[0]
        if Bbb.shape != (nx, ny) or Ahat.shape != (ny, nx) or Abb.shape != (nx, nx) \
                or Bhat.shape != (ny, ny):
            raise ValueError("inconsistent block shapes")
        Cbb = np.zeros(nx) if Cbb is None else np.atleast_1d(np.asarray(Cbb, float))
        Chat = np.zeros(ny) if Chat is None else np.atleast_1d(np.asarray(Chat, float))
        Dbb = np.zeros((nx, 1)) if Dbb is None else as_matrix(Dbb)
        return cls(Abb, Bbb, Dbb, Ahat, Bhat, Cbb, Chat, d0=nx, d=0)


def control_weight(B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``B R^{-1} B'``."""
    return B @ np.linalg.solve(R, B.T)


def assemble_compact(model: LqgModel) -> AssembledSystem:
    check(model)
    d0, d = model.d0, model.d
    A0, F0, G, A, F = model.A0, model.F0, model.G, model.A, model.F
    Q0, H0, Q, H, Hh = model.Q0, model.H0, model.Q, model.H, model.Hhat
    z = np.zeros

    Abb = np.block([[A0, F0], [G, A + F]])
    Bbb = np.block([
        [-0.5 * control_weight(model.B0, model.R0), z((d0, d)), z((d0, d))],
        [z((d, d0)), z((d, d)), -0.5 * control_weight(model.B, model.R)],
    ])
    Dbb = np.vstack([model.D0, z((d, model.m0))])
    # Row 2 is the mean-field derivative of the major cost: moving Xbar by
    # dx changes it by -2 (X0 - H0 Xbar - eta0)' Q0 H0 dx.
    Ahat = np.block([
        [2 * Q0, -2 * Q0 @ H0],
        [-2 * H0.T @ Q0, 2 * H0.T @ Q0 @ H0],
        [-2 * Q @ H, 2 * Q - 2 * Q @ Hh],
    ])
    Bhat = np.block([
        [A0.T, G.T, z((d0, d))],
        [F0.T, A.T + F.T, z((d, d))],
        [z((d, d0)), z((d, d)), A.T],
    ])
    Cbb = z(d0 + d)
    Chat = np.concatenate([-2 * Q0 @ model.eta0,
                           2 * H0.T @ Q0 @ model.eta0,
                           -2 * Q @ model.eta])
    return AssembledSystem(Abb, Bbb, Dbb, Ahat, Bhat, Cbb, Chat, d0=d0, d=d)


def zero_model(d0: int = 1, d: int = 1, k0: int = 1, k: int = 1,
               m0: int = 1, m: int = 1, T: float = 1.0, **overrides) -> LqgModel:
    """All-zero coefficients except identity control costs; entries can be overridden."""
    z = np.zeros
    base = dict(
        A0=z((d0, d0)), B0=z((d0, k0)), F0=z((d0, d)), D0=z((d0, m0)),
        A=z((d, d)), B=z((d, k)), F=z((d, d)), G=z((d, d0)), D=z((d, m)),
        Q0=z((d0, d0)), R0=np.eye(k0), H0=z((d0, d)), eta0=z(d0),
        Q=z((d, d)), R=np.eye(k), H=z((d, d0)), Hhat=z((d, d)), eta=z(d),
        x0_major=z(d0), x0_minor=z(d), T=T,
    )
    base.update(overrides)
    return LqgModel(**base)


def random_model(rng: np.random.Generator, d0: int = 1, d: int = 1,
                 scale: float = 0.5, T: float = 1.0) -> LqgModel:
    """A random well-conditioned model with every coupling switched on."""
    def g(*shape):
        return scale * rng.standard_normal(shape)

    def psd(n):
        L = g(n, n)
        return L @ L.T + 0.5 * np.eye(n)

    k0, k, m0, m = d0, d, d0, d
    return LqgModel(
        A0=g(d0, d0), B0=np.eye(d0, k0) + g(d0, k0), F0=g(d0, d), D0=np.eye(d0, m0) + g(d0, m0),
        A=g(d, d), B=np.eye(d, k) + g(d, k), F=g(d, d), G=g(d, d0), D=np.eye(d, m) + g(d, m),
        Q0=psd(d0), R0=psd(k0), H0=g(d0, d), eta0=g(d0),
        Q=psd(d), R=psd(k), H=g(d, d0), Hhat=g(d, d), eta=g(d),
        x0_major=g(d0) + 1.0, x0_minor=g(d) + 0.5, T=T,
    )
