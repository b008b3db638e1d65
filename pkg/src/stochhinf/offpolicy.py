"""Off-policy learning of the GARE solution from trajectory data.

Data are collected once under a fixed behavior policy with exploration.
Every iteration then re-weights the same interval statistics with the
current target gains, solves one least-squares problem and updates

    L <- R^-1 Theta2,    F <- -gamma^-2 Theta3.

The learning phase reads only the data and the costs Q, R, gamma.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .datamat import (
    DataMatrices,
    IntervalSpec,
    RankReport,
    assemble,
    estimate_stats,
    exact_stats,
    rank_check,
    solve_ls,
)
from .errors import NonFiniteIterate, RankDeficient, StochHinfError
from .gare import Costs, PolicyPair, SystemModel
from .sde import ExplorationSpec, SimConfig, TrajectoryBatch, _atomic_write, _table, simulate_batch, simulate_branching

log = logging.getLogger(__name__)

MODES = ("exact", "montecarlo")
SAMPLINGS = ("ensemble", "branching")


@dataclass(frozen=True)
class LearnConfig:
    gains0: PolicyPair
    N: int
    intervals: IntervalSpec
    sim: SimConfig
    mode: str = "montecarlo"
    sampling: str = "ensemble"
    rule: str = "left"
    stop_tol: float | None = None
    behavior: PolicyPair | None = None
    P0_hat: np.ndarray | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")

    @property
    def behavior_gains(self) -> PolicyPair:
        return self.gains0 if self.behavior is None else self.behavior


@dataclass(frozen=True)
class LearnIterate:
    i: int
    P: np.ndarray | None
    L: np.ndarray
    F: np.ndarray
    ls_residual: float
    rank_ok: bool
    condition: float = float("nan")


@dataclass
class LearnTrace:
    iterates: list[LearnIterate] = field(default_factory=list)
    rank: RankReport | None = None
    data: DataMatrices | None = None
    batch: TrajectoryBatch | list | None = None

    @property
    def P(self) -> np.ndarray:
        return self.iterates[-1].P

    @property
    def L(self) -> np.ndarray:
        return self.iterates[-1].L

    @property
    def F(self) -> np.ndarray:
        return self.iterates[-1].F

    def errors(self, P_ref, L_ref, F_ref) -> np.ndarray:
        """Rows ``(i, |P-P_ref|, |L-L_ref|, |F-F_ref|, ls_residual)``."""
        rows = []
        for it in self.iterates:
            p_err = np.nan if it.P is None else np.linalg.norm(it.P - P_ref)
            rows.append((it.i, p_err, np.linalg.norm(it.L - L_ref), np.linalg.norm(it.F - F_ref), it.ls_residual))
        return np.array(rows, dtype=float)

    def to_csv(self, path, P_ref, L_ref, F_ref) -> None:
        header = ["i", "p_error", "l_error", "f_error", "ls_residual"]
        _atomic_write(Path(path), _table(header, self.errors(P_ref, L_ref, F_ref)))


class ModelAccessError(StochHinfError):
    pass


class _CostOnlyView:
    """Exposes Q, R and gamma of a model and refuses the dynamics."""

    _forbidden = frozenset({"A", "A1", "B", "E"})

    def __init__(self, model: SystemModel):
        self._model = model

    def __getattr__(self, name):
        if name in self._forbidden:
            raise ModelAccessError(f"learning phase attempted to read model.{name}")
        return getattr(self._model, name)


def collect_data(model: SystemModel, cfg: LearnConfig):
    """Data-collection phase. Returns (DataMatrices, batch or None)."""
    behavior = cfg.behavior_gains
    sim = replace(cfg.sim, t_end=cfg.intervals.t_end)
    if cfg.mode == "exact":
        dm = exact_stats(model, behavior, cfg.intervals, sim.x0, sim.exploration, sim.seed)
        return dm, None
    if cfg.sampling == "branching":
        batch = simulate_branching(model, behavior, sim, cfg.intervals)
    else:
        batch = simulate_batch(model, behavior, sim)
    return estimate_stats(batch, cfg.intervals, cfg.rule), batch


def learn_from_data(
    dm: DataMatrices,
    costs: Costs,
    gains0: PolicyPair,
    N: int,
    stop_tol: float | None = None,
    P0_hat=None,
) -> LearnTrace:
    """Learning phase: N policy-evaluation/improvement rounds on fixed data."""
    n, m, p = dm.dims
    report = rank_check(dm)
    if not report.ok:
        raise RankDeficient(report.rank, report.required, report.summary())
    gains = gains0.check(n, m, p)
    trace = LearnTrace([LearnIterate(0, None if P0_hat is None else np.asarray(P0_hat, float), gains.L, gains.F, float("nan"), True)], report, dm)
    prev = trace.iterates[0].P
    for i in range(N):
        Phi, Upsilon = assemble(dm, gains, costs)
        res = solve_ls(Phi, Upsilon, (n, m, p))
        L = sla.solve(costs.R, res.Theta2, assume_a="pos")
        F = -res.Theta3 / costs.gamma**2
        trace.iterates.append(LearnIterate(i + 1, res.P_next, L, F, res.residual_norm, True, res.condition_estimate))
        if not (np.all(np.isfinite(res.P_next)) and np.all(np.isfinite(L)) and np.all(np.isfinite(F))):
            raise NonFiniteIterate(i + 1, trace)
        log.debug("iteration %d: ls residual %.3e", i + 1, res.residual_norm)
        gains = PolicyPair(L, F)
        if stop_tol is not None and prev is not None and np.linalg.norm(res.P_next - prev) < stop_tol:
            break
        prev = res.P_next
    return trace


def run_learning(model: SystemModel, cfg: LearnConfig, audit: bool = False) -> LearnTrace:
    """Collect data under the behavior policy, then learn from it.

    With ``audit`` the learning phase runs against a view of the model that
    raises ModelAccessError on any read of A, A1, B or E.
    """
    cfg.intervals.validate(model.n, model.m, model.p)
    dm, batch = collect_data(model, cfg)
    view = _CostOnlyView(model) if audit else model
    costs = Costs(view.Q, view.R, view.gamma)
    trace = learn_from_data(dm, costs, cfg.gains0, cfg.N, cfg.stop_tol, cfg.P0_hat)
    trace.batch = batch
    return trace


def behavior_probe(model: SystemModel, gains: PolicyPair, sim: SimConfig, factor: float = 0.5) -> bool:
    """Observe whether ``u = -L x``, ``v = -F x`` drive the mean square state down.

    Simulates without exploration and compares ``mean |x(t_end)|^2`` with
    ``factor * |x0|^2``.
    """
    quiet = replace(sim, exploration=ExplorationSpec(amplitude=0.0))
    batch = simulate_batch(model, gains, quiet)
    ms = np.mean(np.sum(batch.states[:, -1] ** 2, axis=1))
    x0 = np.asarray(sim.x0)
    return bool(ms < factor * float(x0 @ x0))
