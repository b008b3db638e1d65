"""Robust SPU: policy iteration with injected evaluation errors.

Each round evaluates the current gains exactly, forms the block matrix

    M(P) = [[Q + A^T P + P A + A1^T P A1, P B, P E],
            [B^T P,                       R,   0  ],
            [E^T P,                       0,  -gamma^2 I]]

adds a perturbation dM and reads the next gains off the perturbed blocks.
Sweeping the perturbation size shows how far the iterates settle from the
exact solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BlockSingular, DimensionError, SingularOperator, StepUnstable
from .gare import PolicyPair, SystemModel, evaluate_policy, gains_from_P
from .sde import _atomic_write
from .symlin import as_symmat, sym

BLOCK_COND_MAX = 1e12


@dataclass(frozen=True)
class BlockM:
    value: np.ndarray
    n: int
    m: int
    p: int

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        k = self.n + self.m + self.p
        if v.shape != (k, k):
            raise DimensionError(f"block matrix must be {k}x{k}, got {v.shape}")
        object.__setattr__(self, "value", v)

    def _slices(self):
        n, m = self.n, self.m
        return slice(0, n), slice(n, n + m), slice(n + m, None)

    def block(self, i: int, j: int) -> np.ndarray:
        s = self._slices()
        return self.value[s[i - 1], s[j - 1]]

    def __add__(self, other) -> "BlockM":
        other = other.value if isinstance(other, BlockM) else np.asarray(other, dtype=float)
        return BlockM(self.value + other, self.n, self.m, self.p)


def m_of_p(model: SystemModel, P) -> BlockM:
    P = as_symmat(P, "P")
    A, A1, B, E = model.A, model.A1, model.B, model.E
    n, m, p = model.n, model.m, model.p
    top = model.Q + A.T @ P + P @ A + A1.T @ P @ A1
    value = np.block(
        [
            [top, P @ B, P @ E],
            [B.T @ P, model.R, np.zeros((m, p))],
            [E.T @ P, np.zeros((p, m)), -(model.gamma**2) * np.eye(p)],
        ]
    )
    return BlockM(sym(value), n, m, p)


def r_op(Z: BlockM, gains: PolicyPair) -> np.ndarray:
    """Congruence ``[I, -L^T, -F^T] Z [I, -L^T, -F^T]^T``."""
    gains.check(Z.n, Z.m, Z.p)
    T = np.hstack([np.eye(Z.n), -gains.L.T, -gains.F.T])
    return sym(T @ Z.value @ T.T)


def random_direction(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random symmetric matrix with unit Frobenius norm."""
    X = sym(rng.standard_normal((size, size)))
    return X / np.linalg.norm(X)


@dataclass(frozen=True)
class ErrorSchedule:
    """Sizes of the injected errors: ``|dM_i|_F`` for i = 1, 2, ...

    ``constant``: magnitude at every step. ``decaying``: magnitude * rate**(i-1).
    ``custom``: explicit list (zero once exhausted).
    """

    kind: str = "constant"
    magnitude: float = 0.0
    seed: int = 0
    rate: float = 0.1
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "decaying", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.magnitude < 0 or any(v < 0 for v in self.values):
            raise ValueError("error magnitudes must be >= 0")

    def magnitude_at(self, i: int) -> float:
        if self.kind == "constant":
            return self.magnitude
        if self.kind == "decaying":
            return self.magnitude * self.rate ** (i - 1)
        return self.values[i - 1] if i - 1 < len(self.values) else 0.0

    def perturbations(self, size: int):
        rng = np.random.default_rng(self.seed)
        i = 1
        while True:
            yield self.magnitude_at(i) * random_direction(rng, size)
            i += 1


def _block_solve(block: np.ndarray, rhs: np.ndarray, name: str) -> np.ndarray:
    cond = np.linalg.cond(block)
    if not np.isfinite(cond) or cond > BLOCK_COND_MAX:
        raise BlockSingular(name, float(cond))
    return np.linalg.solve(block, rhs)


def robust_spu_step(model: SystemModel, gains_hat: PolicyPair, dM, iteration: int = 0):
    """Exact evaluation of ``gains_hat`` followed by an inexact improvement.

    Returns ``(P_next, gains_next)``.
    """
    P_next = evaluate_policy(model, gains_hat, iteration)
    M_hat = m_of_p(model, P_next) + dM
    L = _block_solve(M_hat.block(2, 2), M_hat.block(2, 1), "[M]22")
    F = _block_solve(M_hat.block(3, 3), M_hat.block(3, 1), "[M]33")
    return P_next, PolicyPair(L, F)


@dataclass
class RobustTrace:
    Ps: list[np.ndarray] = field(default_factory=list)
    gains: list[PolicyPair] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    dM_norms: list[float] = field(default_factory=list)

    @property
    def P(self) -> np.ndarray:
        return self.Ps[-1]

    def plateau(self, tail: int = 5) -> float:
        """Median error over the last ``tail`` iterates."""
        return float(np.median(self.errors[-tail:]))


def run_alg4(model: SystemModel, P0_hat, schedule: ErrorSchedule, N: int, P_ref=None) -> RobustTrace:
    """N rounds of robust SPU from ``P0_hat``; errors are measured against ``P_ref``."""
    P = as_symmat(P0_hat, "P0_hat")
    gains = gains_from_P(model, P)
    size = model.n + model.m + model.p
    ref = None if P_ref is None else as_symmat(P_ref, "P_ref")
    trace = RobustTrace([P], [gains], [np.nan if ref is None else float(np.linalg.norm(P - ref))], [0.0])
    perturb = schedule.perturbations(size)
    for i in range(N):
        dM = next(perturb)
        P, gains = robust_spu_step(model, gains, dM, iteration=i)
        trace.Ps.append(P)
        trace.gains.append(gains)
        trace.errors.append(np.nan if ref is None else float(np.linalg.norm(P - ref)))
        trace.dM_norms.append(float(np.linalg.norm(dM)))
    return trace


def perturbed_start(P_star, rho: float, seed: int) -> np.ndarray:
    """``P* + rho S`` with a seeded random symmetric direction ``|S|_F = 1``."""
    P_star = as_symmat(P_star)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    return P_star + rho * random_direction(rng, P_star.shape[0])


@dataclass(frozen=True)
class SweepRow:
    delta: float
    seed: int
    iteration: int
    error_norm: float


def iss_sweep(
    model: SystemModel,
    P_star,
    deltas,
    seeds,
    N: int = 30,
    rho: float | None = None,
    kind: str = "constant",
    rate: float = 0.1,
) -> dict[tuple[float, int], RobustTrace]:
    """Run robust SPU for every (delta, seed) from ``P* + rho S``.

    ``rho`` defaults to ``0.05 |P*|_F``. A run that breaks down (unstable
    pencil or singular block) is recorded with an infinite final error.
    """
    P_star = as_symmat(P_star)
    rho = 0.05 * float(np.linalg.norm(P_star)) if rho is None else rho
    out = {}
    for delta in deltas:
        for seed in seeds:
            schedule = ErrorSchedule(kind, float(delta), seed, rate)
            P0 = perturbed_start(P_star, rho, seed)
            try:
                out[(float(delta), seed)] = run_alg4(model, P0, schedule, N, P_star)
            except (StepUnstable, BlockSingular, SingularOperator):
                broken = RobustTrace([P0], [], [float(np.linalg.norm(P0 - P_star)), np.inf], [])
                out[(float(delta), seed)] = broken
    return out


def sweep_rows(results: dict) -> list[SweepRow]:
    rows = []
    for (delta, seed), trace in sorted(results.items()):
        for i, err in enumerate(trace.errors):
            rows.append(SweepRow(delta, seed, i, err))
    return rows


def write_sweep_csv(results: dict, path) -> None:
    rows = sweep_rows(results)
    body = np.array([(r.delta, r.seed, r.iteration, r.error_norm) for r in rows], dtype=float).reshape(-1, 4)
    lines = ["delta,seed,iteration,error_norm"]
    for d, s, i, e in body:
        lines.append(f"{format(d, '.17g')},{int(s)},{int(i)},{format(e, '.17g')}")
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def plateaus(results: dict, tail: int = 5) -> dict[float, float]:
    """Median over seeds of each run's terminal error plateau, per delta."""
    by_delta: dict[float, list[float]] = {}
    for (delta, _), trace in results.items():
        by_delta.setdefault(delta, []).append(trace.plateau(tail))
    return {d: float(np.median(v)) for d, v in sorted(by_delta.items())}


def fit_iss_envelope(errors, delta: float, grid=None) -> tuple[float, float]:
    """Fit ``(eps, C)`` so that ``e_i <= eps**i e_0 + C delta`` holds on ``errors``.

    For each candidate contraction ``eps`` the smallest admissible C is
    computed; the pair with the smallest C is returned.
    """
    e = np.asarray(errors, dtype=float)
    grid = np.linspace(0.05, 0.95, 19) if grid is None else np.asarray(grid)
    i = np.arange(e.size)
    best = None
    for eps in grid:
        C = max(0.0, float(np.max((e - eps**i * e[0]) / delta))) if delta > 0 else 0.0
        if best is None or C < best[1]:
            best = (float(eps), C)
    return best


def iss_bound_holds(errors, eps: float, C: float, delta: float, rtol: float = 1e-12) -> bool:
    e = np.asarray(errors, dtype=float)
    i = np.arange(e.size)
    bound = eps**i * e[0] + C * delta
    return bool(np.all(e <= bound * (1 + rtol) + rtol))
