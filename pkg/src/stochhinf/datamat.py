"""Interval statistics, regression matrices and least-squares policy evaluation.

For interval ``[t_j, t_j + dt]`` the learner needs expectations of

    xtilde(t_j + dt) - xtilde(t_j),  and the integrals of
    xtilde(x),  x (x) x,  x (x) u,  x (x) v

over the interval. They are estimated from sample paths by ensemble
averages and Riemann sums, or computed exactly from the moment ODEs of the
linear system. With the value matrix ``P`` and the regression vector
``xi = [vecs(P); vec(B^T P); vec(E^T P)]`` they satisfy ``Phi @ xi = Upsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import AlignmentError, ConfigError, DimensionError, NumericalError, RankDeficient
from .gare import Costs, PolicyPair, SystemModel
from .sde import Exploration, ExplorationSpec, TrajectoryBatch, _atomic_write, _table
from .symlin import sym, vecs, vecs_inv, xtilde_batch

RANK_RTOL = 1e-10


def n_unknowns(n: int, m: int, p: int) -> int:
    return n * (n + 1) // 2 + n * m + n * p


@dataclass(frozen=True)
class IntervalSpec:
    starts: tuple[float, ...]
    width: float

    def __post_init__(self):
        starts = tuple(float(t) for t in self.starts)
        object.__setattr__(self, "starts", starts)
        if not self.width > 0:
            raise ConfigError("learn.dt", "interval width must be positive")
        if not starts:
            raise ConfigError("learn.s", "need at least one interval")
        if starts[0] < 0:
            raise ConfigError("learn.intervals", "interval starts must be >= 0")
        for a, b in zip(starts[:-1], starts[1:]):
            if b < a + self.width - 1e-12:
                raise ConfigError("learn.intervals", f"intervals starting at {a} and {b} overlap")

    @classmethod
    def contiguous(cls, s: int, width: float, t0: float = 0.0) -> "IntervalSpec":
        return cls(tuple(t0 + j * width for j in range(s)), width)

    @property
    def s(self) -> int:
        return len(self.starts)

    @property
    def t_end(self) -> float:
        return self.starts[-1] + self.width

    def validate(self, n: int, m: int, p: int) -> "IntervalSpec":
        d = n_unknowns(n, m, p)
        if self.s < d:
            raise RankDeficient(self.s, d, f"only {self.s} intervals for {d} unknowns")
        return self


@dataclass(frozen=True)
class DataMatrices:
    delta_xt: np.ndarray  # s x n(n+1)/2
    i_xt: np.ndarray  # s x n(n+1)/2
    i_xx: np.ndarray  # s x n^2
    i_xu: np.ndarray  # s x nm
    i_xv: np.ndarray  # s x np

    def __post_init__(self):
        s = self.delta_xt.shape[0]
        for name in ("i_xt", "i_xx", "i_xu", "i_xv"):
            if getattr(self, name).shape[0] != s:
                raise DimensionError(f"{name} has {getattr(self, name).shape[0]} rows, expected {s}")
        for name in ("delta_xt", "i_xt", "i_xx", "i_xu", "i_xv"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"data matrix {name} contains non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        n = int(round(np.sqrt(self.i_xx.shape[1])))
        return n, self.i_xu.shape[1] // n, self.i_xv.shape[1] // n

    @property
    def s(self) -> int:
        return self.delta_xt.shape[0]

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("delta_xt", "i_xt", "i_xx", "i_xu", "i_xv"):
            arr = getattr(self, name)
            body = np.column_stack([np.arange(arr.shape[0]), arr])
            header = ["row"] + [f"c{k}" for k in range(arr.shape[1])]
            _atomic_write(directory / f"{name}.csv", _table(header, body))

    @classmethod
    def from_csv(cls, directory) -> "DataMatrices":
        directory = Path(directory)
        arrays = {}
        for name in ("delta_xt", "i_xt", "i_xx", "i_xu", "i_xv"):
            arrays[name] = np.loadtxt(directory / f"{name}.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
        return cls(**arrays)


@dataclass(frozen=True)
class RankReport:
    ok: bool
    rank: int
    required: int
    singular_values: np.ndarray

    @property
    def gap(self) -> float:
        """Ratio of the smallest to the largest singular value."""
        sv = self.singular_values
        return float(sv[-1] / sv[0]) if sv.size and sv[0] > 0 else 0.0

    def summary(self) -> str:
        status = "ok" if self.ok else "DEFICIENT"
        return f"rank condition {status}: rank {self.rank} of {self.required} required, sigma_min/sigma_max = {self.gap:.3e}"


@dataclass(frozen=True)
class RegressionResult:
    P_next: np.ndarray
    Theta2: np.ndarray
    Theta3: np.ndarray
    residual_norm: float
    condition_estimate: float
    sym_correction: float = 0.0


def _window_weights(K: int, h: float, rule: str) -> np.ndarray:
    w = np.full(K + 1, h)
    if rule == "left":
        w[-1] = 0.0
    elif rule == "right":
        w[0] = 0.0
    elif rule == "trapezoid":
        w[0] = w[-1] = h / 2
    else:
        raise ValueError(f"unknown Riemann rule {rule!r}")
    return w


def _grid_index(times: np.ndarray, t: float) -> int:
    h = times[1] - times[0]
    k = int(round((t - times[0]) / h))
    if k < 0 or k >= times.size or abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise AlignmentError(f"time {t} is not on the trajectory grid")
    return k


def _interval_stats(batch: TrajectoryBatch, start: float, width: float, rule: str):
    times = batch.times
    h = times[1] - times[0]
    k0 = _grid_index(times, start)
    K = int(round(width / h))
    if abs(K * h - width) > 1e-9 * max(1.0, width):
        raise AlignmentError(f"interval width {width} is not a multiple of the grid step {h}")
    if k0 + K >= times.size:
        raise AlignmentError(f"interval [{start}, {start + width}] extends past the trajectory")
    k1 = k0 + K
    w = _window_weights(K, h, rule)
    X = batch.states[:, k0 : k1 + 1]
    U = batch.controls[:, k0 : k1 + 1]
    V = batch.disturbances[:, k0 : k1 + 1]
    xt = xtilde_batch(X)
    L = X.shape[0]
    delta = (xt[:, -1] - xt[:, 0]).sum(axis=0) / L
    i_xt = np.einsum("k,lkc->c", w, xt) / L
    i_xx = np.einsum("k,lki,lkj->ij", w, X, X).ravel() / L
    i_xu = np.einsum("k,lki,lka->ia", w, X, U).ravel() / L
    i_xv = np.einsum("k,lki,lka->ia", w, X, V).ravel() / L
    return delta, i_xt, i_xx, i_xu, i_xv


def estimate_stats(batch, spec: IntervalSpec, rule: str = "left") -> DataMatrices:
    """Monte-Carlo interval statistics.

    ``batch`` is either one TrajectoryBatch covering every interval, or a
    list of per-interval segment batches (one per entry of ``spec.starts``).
    """
    if isinstance(batch, TrajectoryBatch):
        rows = [_interval_stats(batch, t, spec.width, rule) for t in spec.starts]
    else:
        if len(batch) != spec.s:
            raise AlignmentError(f"{len(batch)} segments for {spec.s} intervals")
        rows = [_interval_stats(seg, t, spec.width, rule) for seg, t in zip(batch, spec.starts)]
    cols = list(zip(*rows))
    return DataMatrices(*(np.array(c) for c in cols))


def exact_stats(
    model: SystemModel,
    behavior: PolicyPair,
    spec: IntervalSpec,
    x0,
    exploration: ExplorationSpec | None = None,
    seed: int = 0,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> DataMatrices:
    """Interval statistics from the exact first/second moment ODEs (no sampling error).

    The probing signal must be deterministic (sinusoids or zero).
    """
    exploration = exploration or ExplorationSpec(amplitude=0.0)
    if not exploration.deterministic:
        raise ConfigError("sim.exploration.kind", "exact statistics need a deterministic exploration signal")
    n, m, p = model.n, model.m, model.p
    behavior.check(n, m, p)
    probe = Exploration(exploration, seed, m + p)
    Ab = model.A - model.B @ behavior.L - model.E @ behavior.F
    G = np.hstack([model.B, model.E])
    A1 = model.A1
    nn = n * n

    def rhs(t, y):
        mu = y[:n]
        M = y[n : n + nn].reshape(n, n)
        e = probe(t)
        ge = G @ e
        dmu = Ab @ mu + ge
        dM = Ab @ M + M @ Ab.T + A1 @ M @ A1.T + np.outer(ge, mu) + np.outer(mu, ge)
        return np.concatenate([dmu, dM.ravel(), M.ravel(), np.kron(mu, e)])

    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != n:
        raise DimensionError(f"x0 has length {x0.size}, model has n={n}")
    mu, M = x0.copy(), np.outer(x0, x0)
    t = 0.0
    zeros = np.zeros(nn + n * (m + p))
    rows = []

    def advance(t0, t1, mu, M):
        y0 = np.concatenate([mu, M.ravel(), zeros])
        if t1 <= t0:
            return y0
        sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
            raise NumericalError(f"moment ODE failed on [{t0}, {t1}]: {sol.message}")
        return sol.y[:, -1]

    for start in spec.starts:
        y = advance(t, start, mu, M)
        mu, M = y[:n], sym(y[n : n + nn].reshape(n, n))
        y = advance(start, start + spec.width, mu, M)
        mu1, M1 = y[:n], sym(y[n : n + nn].reshape(n, n))
        intM = sym(y[n + nn : n + 2 * nn].reshape(n, n))
        int_mu_e = y[n + 2 * nn :].reshape(n, m + p)
        i_xx = intM.ravel()
        i_xu = -(intM @ behavior.L.T).ravel() + int_mu_e[:, :m].ravel()
        i_xv = -(intM @ behavior.F.T).ravel() + int_mu_e[:, m:].ravel()
        rows.append((vecs(M1) - vecs(M), vecs(intM), i_xx, i_xu, i_xv))
        mu, M, t = mu1, M1, start + spec.width
    cols = list(zip(*rows))
    return DataMatrices(*(np.array(c) for c in cols))


def rank_check(dm: DataMatrices, rtol: float = RANK_RTOL) -> RankReport:
    n, m, p = dm.dims
    required = n_unknowns(n, m, p)
    sv = np.linalg.svd(np.hstack([dm.i_xt, dm.i_xu, dm.i_xv]), compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    return RankReport(rank == required, rank, required, sv)


def assemble(dm: DataMatrices, gains: PolicyPair, costs: Costs) -> tuple[np.ndarray, np.ndarray]:
    n, m, p = dm.dims
    gains.check(n, m, p)
    eye = np.eye(n)
    Phi = np.hstack(
        [
            dm.delta_xt,
            -2 * dm.i_xx @ np.kron(eye, gains.L.T) - 2 * dm.i_xu,
            -2 * dm.i_xx @ np.kron(eye, gains.F.T) - 2 * dm.i_xv,
        ]
    )
    weight = costs.gamma**2 * gains.F.T @ gains.F - costs.Q - gains.L.T @ costs.R @ gains.L
    Upsilon = dm.i_xt @ vecs(weight)
    return Phi, Upsilon


def pack_xi(P, Theta2, Theta3) -> np.ndarray:
    return np.concatenate([vecs(P), np.asarray(Theta2).ravel(order="F"), np.asarray(Theta3).ravel(order="F")])


def unpack_xi(xi, n: int, m: int, p: int):
    d1 = n * (n + 1) // 2
    P = vecs_inv(xi[:d1])
    Theta2 = np.asarray(xi[d1 : d1 + n * m]).reshape((m, n), order="F")
    Theta3 = np.asarray(xi[d1 + n * m :]).reshape((p, n), order="F")
    return P, Theta2, Theta3


def solve_ls(Phi, Upsilon, dims: tuple[int, int, int], rtol: float = RANK_RTOL) -> RegressionResult:
    """Least-squares solution of ``Phi xi = Upsilon`` through a QR factorization."""
    n, m, p = dims
    Phi = np.asarray(Phi, dtype=float)
    Upsilon = np.asarray(Upsilon, dtype=float).ravel()
    d = n_unknowns(n, m, p)
    if Phi.shape[1] != d:
        raise DimensionError(f"Phi has {Phi.shape[1]} columns, expected {d}")
    sv = np.linalg.svd(Phi, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    if rank < d:
        raise RankDeficient(rank, d, "regression matrix Phi")
    Qf, Rf = sla.qr(Phi, mode="economic")
    xi = sla.solve_triangular(Rf, Qf.T @ Upsilon)
    P, Theta2, Theta3 = unpack_xi(xi, n, m, p)
    resid = float(np.linalg.norm(Phi @ xi - Upsilon))
    # vecs_inv returns an exactly symmetric matrix, so no correction is needed
    return RegressionResult(P, Theta2, Theta3, resid, float(sv[0] / sv[-1]), float(np.linalg.norm(P - P.T)))
