"""Model-based solution of the generalized algebraic Riccati equation.

The GARE of the stochastic H-infinity problem is

    P A + A^T P + A1^T P A1 - P B R^-1 B^T P + gamma^-2 P E E^T P + Q = 0

and the simultaneous policy update (SPU) iteration solves it by repeatedly
evaluating the pair ``u = -L x``, ``v = -F x`` through a generalized Lyapunov
equation and then updating both gains from the new value matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ModelError, NonConvergence, SingularOperator, StepUnstable
from .symlin import LyapPencil, as_symmat, ms_abscissa, solve_gle, sym

log = logging.getLogger(__name__)


def _mat(x, name, rows=None, cols=None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise DimensionError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionError(f"{name} has {a.shape[1]} columns, expected {cols}")
    return a


def _psd_factor(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(sym(M))
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ModelError("cost matrix must be positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0.0, None))).T


@dataclass(frozen=True)
class SystemModel:
    """``dx = (A x + B u + E v) dt + A1 x dW`` with output ``z = [C x; D u]``."""

    A: np.ndarray
    A1: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    gamma: float

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        A1 = _mat(self.A1, "A1", n, n)
        B = _mat(self.B, "B", n)
        E = _mat(self.E, "E", n)
        C = _mat(self.C, "C", cols=n)
        D = _mat(self.D, "D", cols=B.shape[1])
        if not self.gamma > 0:
            raise ModelError(f"gamma must be positive, got {self.gamma}")
        if np.linalg.matrix_rank(D) < D.shape[1]:
            raise ModelError("D must have full column rank so that R = D^T D is positive definite")
        for name, val in (("A", A), ("A1", A1), ("B", B), ("E", E), ("C", C), ("D", D)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def from_costs(cls, A, A1, B, E, Q, R, gamma) -> "SystemModel":
        """Build a model from Q and R directly; C and D are symmetric square-root factors."""
        Q = _mat(Q, "Q")
        R = _mat(R, "R")
        return cls(A, A1, B, E, _psd_factor(Q), _psd_factor(R), gamma)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.E.shape[1]

    @property
    def Q(self) -> np.ndarray:
        return sym(self.C.T @ self.C)

    @property
    def R(self) -> np.ndarray:
        return sym(self.D.T @ self.D)

    def costs(self) -> "Costs":
        return Costs(self.Q, self.R, self.gamma)


@dataclass(frozen=True)
class Costs:
    """The part of the model a model-free learner is allowed to see."""

    Q: np.ndarray
    R: np.ndarray
    gamma: float


@dataclass(frozen=True)
class PolicyPair:
    """Gains of the control ``u = -L x`` and the disturbance ``v = -F x``."""

    L: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", np.atleast_2d(np.asarray(self.L, dtype=float)))
        object.__setattr__(self, "F", np.atleast_2d(np.asarray(self.F, dtype=float)))

    def check(self, n: int, m: int, p: int) -> "PolicyPair":
        if self.L.shape != (m, n):
            raise DimensionError(f"L must be {m}x{n}, got {self.L.shape}")
        if self.F.shape != (p, n):
            raise DimensionError(f"F must be {p}x{n}, got {self.F.shape}")
        return self

    @classmethod
    def zeros(cls, n: int, m: int, p: int) -> "PolicyPair":
        return cls(np.zeros((m, n)), np.zeros((p, n)))


def _check_P(model: SystemModel, P) -> np.ndarray:
    P = as_symmat(P, "P")
    if P.shape[0] != model.n:
        raise DimensionError(f"P is {P.shape}, model has n={model.n}")
    return P


def gains_from_P(model: SystemModel, P) -> PolicyPair:
    P = _check_P(model, P)
    L = sla.solve(model.R, model.B.T @ P, assume_a="pos")
    F = -(model.E.T @ P) / model.gamma**2
    return PolicyPair(L, F)


def gare_residual(model: SystemModel, P) -> np.ndarray:
    P = _check_P(model, P)
    A, A1, B, E = model.A, model.A1, model.B, model.E
    try:
        BRB = B @ sla.solve(model.R, B.T, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise ModelError("R is not invertible") from exc
    res = P @ A + A.T @ P + A1.T @ P @ A1 - P @ BRB @ P + (P @ E @ E.T @ P) / model.gamma**2 + model.Q
    return sym(res)


def closed_loop(model: SystemModel, P) -> np.ndarray:
    P = _check_P(model, P)
    L = gains_from_P(model, P)
    return model.A - model.B @ L.L + (model.E @ model.E.T @ P) / model.gamma**2


def is_stabilizing(model: SystemModel, P) -> bool:
    return ms_abscissa(LyapPencil(closed_loop(model, P), model.A1)) < 0.0


def frechet_apply(model: SystemModel, P, dP) -> np.ndarray:
    dP = _check_P(model, dP)
    Acl = closed_loop(model, P)
    return sym(dP @ Acl + Acl.T @ dP + model.A1.T @ dP @ model.A1)


def policy_closed_loop(model: SystemModel, gains: PolicyPair) -> np.ndarray:
    return model.A - model.B @ gains.L - model.E @ gains.F


def policy_cost(model: SystemModel, gains: PolicyPair) -> np.ndarray:
    """``Q + L^T R L - gamma^2 F^T F``."""
    return sym(model.Q + gains.L.T @ model.R @ gains.L - model.gamma**2 * gains.F.T @ gains.F)


def evaluate_policy(model: SystemModel, gains: PolicyPair, iteration: int = 0) -> np.ndarray:
    """Value matrix of a gain pair: the symmetric solution of the policy GLE."""
    gains.check(model.n, model.m, model.p)
    pencil = LyapPencil(policy_closed_loop(model, gains), model.A1)
    abscissa = ms_abscissa(pencil)
    if not abscissa < 0.0:
        raise StepUnstable(iteration, abscissa)
    try:
        return solve_gle(pencil, -policy_cost(model, gains))
    except SingularOperator as exc:
        raise StepUnstable(iteration, abscissa) from exc


def spu_step(model: SystemModel, P_i, iteration: int = 0) -> np.ndarray:
    """One SPU iteration: evaluate the gains implied by ``P_i``."""
    return evaluate_policy(model, gains_from_P(model, P_i), iteration)


def newton_step(model: SystemModel, P) -> np.ndarray:
    """``P - F'(P)^-1 F(P)`` with the derivative inverted in reduced coordinates."""
    P = _check_P(model, P)
    pencil = LyapPencil(closed_loop(model, P), model.A1)
    return sym(P - solve_gle(pencil, gare_residual(model, P)))


@dataclass(frozen=True)
class SpuIterate:
    i: int
    P: np.ndarray
    gains: PolicyPair
    residual_norm: float
    error_to_ref: float | None = None


@dataclass
class SpuTrace:
    iterates: list[SpuIterate] = field(default_factory=list)
    converged: bool = False

    @property
    def final(self) -> SpuIterate:
        return self.iterates[-1]

    @property
    def P(self) -> np.ndarray:
        return self.final.P

    def Ps(self) -> list[np.ndarray]:
        return [it.P for it in self.iterates]

    def residuals(self) -> np.ndarray:
        return np.array([it.residual_norm for it in self.iterates])


def _record(model, i, P, P_ref) -> SpuIterate:
    err = None if P_ref is None else float(np.linalg.norm(P - P_ref))
    return SpuIterate(i, P, gains_from_P(model, P), float(np.linalg.norm(gare_residual(model, P))), err)


def run_alg1(
    model: SystemModel,
    P0=None,
    max_iter: int = 50,
    tol: float = 1e-12,
    P_ref=None,
    raise_on_nonconvergence: bool = True,
) -> SpuTrace:
    """Run the model-based SPU iteration from ``P0`` (zero by default).

    Stops as soon as the Frobenius norm of the GARE residual drops below
    ``tol`` or after ``max_iter`` updates.
    """
    P = np.zeros((model.n, model.n)) if P0 is None else _check_P(model, P0)
    if P_ref is not None:
        P_ref = _check_P(model, P_ref)
    trace = SpuTrace([_record(model, 0, P, P_ref)])
    for i in range(max_iter):
        if trace.final.residual_norm < tol:
            break
        P = spu_step(model, P, iteration=i)
        if not np.all(np.isfinite(P)):
            break
        trace.iterates.append(_record(model, i + 1, P, P_ref))
        log.debug("SPU iteration %d residual %.3e", i + 1, trace.final.residual_norm)
    trace.converged = trace.final.residual_norm < tol
    if not trace.converged and raise_on_nonconvergence:
        raise NonConvergence(
            len(trace.iterates) - 1,
            trace.final.residual_norm,
            "gamma may be below the critical attenuation level",
        )
    return trace


def find_initial_P(
    model: SystemModel,
    scales=(0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0),
    max_iter: int = 50,
    tol: float = 1e-12,
) -> tuple[np.ndarray, SpuTrace]:
    """Ramp ``P0 = c I`` over ``scales`` until the SPU iteration converges.

    Returns the first working ``P0`` together with its trace.
    """
    last: Exception | None = None
    for c in scales:
        P0 = c * np.eye(model.n)
        try:
            trace = run_alg1(model, P0, max_iter=max_iter, tol=tol)
        except (StepUnstable, NonConvergence) as exc:
            last = exc
            continue
        if is_stabilizing(model, trace.P):
            return P0, trace
    raise NonConvergence(max_iter, float("nan"), f"no c*I initialization in {tuple(scales)} converged ({last})")


def quadratic_rate_check(trace: SpuTrace | list, P_ref, floor: float = 1e-15) -> list[float]:
    """Ratios ``|P_{i+1} - P_ref| / |P_i - P_ref|^2`` over informative iterates.

    Iterates whose successor error is already at rounding level are skipped,
    as are those at ``P_ref`` itself.
    """
    Ps = trace.Ps() if isinstance(trace, SpuTrace) else list(trace)
    if len(Ps) < 3:
        raise ValueError("need at least 3 iterates")
    P_ref = np.asarray(P_ref, dtype=float)
    scale = max(1.0, float(np.linalg.norm(P_ref)))
    errs = [float(np.linalg.norm(P - P_ref)) for P in Ps]
    ratios = []
    for e0, e1 in zip(errs[:-1], errs[1:]):
        if e0 < floor or e1 < 1e3 * np.finfo(float).eps * scale:
            continue
        ratios.append(e1 / e0**2)
    return ratios
