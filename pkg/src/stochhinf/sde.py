"""Euler-Maruyama simulation of the controlled Ito system with multiplicative noise.

Each sample path owns an independent random stream derived from
``(seed, path index)``, so a path is bit-identical no matter how many other
paths are simulated alongside it.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, PathDiverged
from .gare import PolicyPair, SystemModel

# spawn-key prefixes of the independent random streams
_PATH_STREAM = 0
_EXPLORATION_STREAM = 1
_BRANCH_BASE_STREAM = 2
_BRANCH_STREAM = 3


@dataclass(frozen=True)
class ExplorationSpec:
    """Probing signal added to both the control and the disturbance channel.

    ``sinusoids``: each channel receives ``amplitude * sum_k sin(w_k t + phi_k)``
    with ``n_terms`` seed-derived frequencies in ``freq_range`` (or the given
    ``frequencies``) and seed-derived phases. ``white``: i.i.d. Gaussian values
    with standard deviation ``amplitude``, held constant over one step.
    """

    kind: str = "sinusoids"
    amplitude: float = 0.1
    frequencies: tuple[float, ...] | None = None
    n_terms: int = 10
    freq_range: tuple[float, float] = (0.1, 5.0)

    def __post_init__(self):
        if self.kind not in ("sinusoids", "white"):
            raise ConfigError("sim.exploration.kind", f"unknown kind {self.kind!r}")
        if self.amplitude < 0:
            raise ConfigError("sim.exploration.amplitude", "must be >= 0")
        if self.frequencies is not None:
            object.__setattr__(self, "frequencies", tuple(float(w) for w in self.frequencies))
        object.__setattr__(self, "freq_range", tuple(float(w) for w in self.freq_range))

    @property
    def deterministic(self) -> bool:
        return self.kind == "sinusoids" or self.amplitude == 0.0


@dataclass(frozen=True)
class SimConfig:
    x0: tuple[float, ...]
    t_end: float
    dt_fine: float
    n_paths: int = 50
    seed: int = 0
    exploration: ExplorationSpec = field(default_factory=ExplorationSpec)
    antithetic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if not self.dt_fine > 0:
            raise ConfigError("sim.dt_fine", "must be positive")
        if not self.t_end >= self.dt_fine:
            raise ConfigError("sim.t_end", "must be at least dt_fine")
        if self.n_paths < 1:
            raise ConfigError("sim.n_paths", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("sim.seed", "must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt_fine))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exploration"] = asdict(self.exploration)
        return d


class Exploration:
    """Evaluates the deterministic part of an ExplorationSpec for given channel counts."""

    def __init__(self, spec: ExplorationSpec, seed: int, channels: int):
        self.spec = spec
        self.channels = channels
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_EXPLORATION_STREAM,)))
        if spec.frequencies is not None:
            freqs = np.tile(np.asarray(spec.frequencies), (channels, 1))
        else:
            lo, hi = spec.freq_range
            freqs = rng.uniform(lo, hi, size=(channels, spec.n_terms))
        self.freqs = freqs
        self.phases = rng.uniform(0.0, 2 * np.pi, size=freqs.shape)

    def __call__(self, t) -> np.ndarray:
        """Signal values with shape ``t.shape + (channels,)``."""
        t = np.asarray(t, dtype=float)
        if self.spec.kind != "sinusoids" or self.spec.amplitude == 0.0:
            return np.zeros(t.shape + (self.channels,))
        arg = t[..., None, None] * self.freqs + self.phases
        return self.spec.amplitude * np.sin(arg).sum(axis=-1)


@dataclass(frozen=True)
class TrajectoryBatch:
    times: np.ndarray  # (K+1,)
    states: np.ndarray  # (paths, K+1, n)
    controls: np.ndarray  # (paths, K+1, m)
    disturbances: np.ndarray  # (paths, K+1, p)
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _atomic_write(directory / "times.csv", _table(["step", "t"], np.column_stack([np.arange(self.times.size), self.times])))
        for name, arr, sym in (
            ("states", self.states, "x"),
            ("controls", self.controls, "u"),
            ("disturbances", self.disturbances, "v"),
        ):
            L, K1, c = arr.shape
            path = np.repeat(np.arange(L), K1)
            step = np.tile(np.arange(K1), L)
            body = np.column_stack([path, step, arr.reshape(L * K1, c)])
            _atomic_write(directory / f"{name}.csv", _table(["path", "step"] + [f"{sym}{k}" for k in range(c)], body, int_cols=2))
        meta = {"seed": self.seed, "config": self.config, "shape": list(self.states.shape),
                "m": self.controls.shape[2], "p": self.disturbances.shape[2]}
        _atomic_write(directory / "batch.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, directory) -> "TrajectoryBatch":
        directory = Path(directory)
        meta = json.loads((directory / "batch.json").read_text())
        L, K1, n = meta["shape"]
        times = np.loadtxt(directory / "times.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
        arrays = {}
        for name, c in (("states", n), ("controls", meta["m"]), ("disturbances", meta["p"])):
            raw = np.loadtxt(directory / f"{name}.csv", delimiter=",", skiprows=1, ndmin=2)
            arrays[name] = raw[:, 2:].reshape(L, K1, c)
        return cls(times, arrays["states"], arrays["controls"], arrays["disturbances"], meta["seed"], meta["config"])


def _table(header, body, int_cols: int = 1) -> str:
    body = np.asarray(body, dtype=float)
    body = body.reshape(-1, len(header))
    buf = io.StringIO()
    fmt = ["%d"] * int_cols + ["%.17g"] * (len(header) - int_cols)
    np.savetxt(buf, body, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _path_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _draws(rngs, n_steps: int, h: float, spec: ExplorationSpec, channels: int, antithetic: bool = False):
    """Brownian increments and (for white exploration) per-step probing values.

    With ``antithetic`` every odd path reuses the negated increments of its
    even neighbour.
    """
    dW = np.empty((len(rngs), n_steps))
    white = np.zeros((len(rngs), n_steps + 1, channels))
    for l, rng in enumerate(rngs):
        if antithetic and l % 2 == 1:
            dW[l] = -dW[l - 1]
        else:
            dW[l] = rng.standard_normal(n_steps) * np.sqrt(h)
        if spec.kind == "white" and spec.amplitude > 0:
            white[l] = spec.amplitude * rng.standard_normal((n_steps + 1, channels))
    return dW, white


def euler_maruyama(model: SystemModel, gains: PolicyPair, x_start, times, dW, probe, path_ids=None):
    """Integrate all paths on ``times`` given increments ``dW`` (paths, K).

    ``probe`` has shape (paths or 1, K+1, m+p) and is added to ``-L x`` and
    ``-F x``. Returns (states, controls, disturbances).
    """
    m = model.m
    x_start = np.atleast_2d(np.asarray(x_start, dtype=float))
    Lp, K = dW.shape
    h = np.diff(times)
    X = np.empty((Lp, K + 1, model.n))
    U = np.empty((Lp, K + 1, m))
    V = np.empty((Lp, K + 1, model.p))
    x = np.broadcast_to(x_start, (Lp, model.n)).copy()
    probe = np.broadcast_to(probe, (Lp, K + 1, probe.shape[-1]))
    At, A1t, Bt, Et = model.A.T, model.A1.T, model.B.T, model.E.T
    Lt, Ft = gains.L.T, gains.F.T
    for k in range(K + 1):
        X[:, k] = x
        u = -x @ Lt + probe[:, k, :m]
        v = -x @ Ft + probe[:, k, m:]
        U[:, k] = u
        V[:, k] = v
        if k == K:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + (x @ At + u @ Bt + v @ Et) * h[k] + (x @ A1t) * dW[:, k : k + 1]
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise PathDiverged(int(path_ids[bad]) if path_ids is not None else bad, k + 1)
    return X, U, V


def _check_dims(model: SystemModel, gains: PolicyPair, cfg: SimConfig):
    if len(cfg.x0) != model.n:
        raise DimensionError(f"x0 has length {len(cfg.x0)}, model has n={model.n}")
    gains.check(model.n, model.m, model.p)


def simulate_batch(model: SystemModel, gains: PolicyPair, cfg: SimConfig) -> TrajectoryBatch:
    """Simulate ``cfg.n_paths`` independent paths under ``u = -L x + e_u``, ``v = -F x + e_v``."""
    _check_dims(model, gains, cfg)
    K = cfg.n_steps
    times = np.arange(K + 1) * cfg.dt_fine
    channels = model.m + model.p
    explore = Exploration(cfg.exploration, cfg.seed, channels)
    rngs = [_path_rng(cfg.seed, _PATH_STREAM, l) for l in range(cfg.n_paths)]
    dW, white = _draws(rngs, K, cfg.dt_fine, cfg.exploration, channels, cfg.antithetic)
    probe = explore(times)[None] + white
    X, U, V = euler_maruyama(model, gains, np.asarray(cfg.x0), times, dW, probe)
    return TrajectoryBatch(times, X, U, V, cfg.seed, cfg.to_dict())


def simulate_branching(model: SystemModel, gains: PolicyPair, cfg: SimConfig, intervals) -> list[TrajectoryBatch]:
    """Respawn ``n_paths`` Brownian continuations from a common recorded state per interval.

    A single base path supplies the state at every interval start; segment ``j``
    holds the continuations over ``[t_j, t_j + width]``.
    """
    _check_dims(model, gains, cfg)
    h = cfg.dt_fine
    K = cfg.n_steps
    times = np.arange(K + 1) * h
    channels = model.m + model.p
    explore = Exploration(cfg.exploration, cfg.seed, channels)
    dW, white = _draws([_path_rng(cfg.seed, _BRANCH_BASE_STREAM)], K, h, cfg.exploration, channels)
    base, _, _ = euler_maruyama(model, gains, np.asarray(cfg.x0), times, dW, explore(times)[None] + white)
    seg_steps = _steps(intervals.width, h, "interval width")
    segments = []
    for j, start in enumerate(intervals.starts):
        k0 = _steps(start, h, f"interval start {start}")
        if k0 + seg_steps > K:
            raise ConfigError("learn.intervals", f"interval {j} ends beyond t_end")
        t_seg = times[k0 : k0 + seg_steps + 1]
        rngs = [_path_rng(cfg.seed, _BRANCH_STREAM, j, l) for l in range(cfg.n_paths)]
        dW, white = _draws(rngs, seg_steps, h, cfg.exploration, channels, cfg.antithetic)
        X, U, V = euler_maruyama(model, gains, base[0, k0], t_seg, dW, explore(t_seg)[None] + white)
        segments.append(TrajectoryBatch(t_seg, X, U, V, cfg.seed, cfg.to_dict()))
    return segments


def _steps(t: float, h: float, what: str) -> int:
    k = int(round(t / h))
    if abs(k * h - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigError("learn.intervals", f"{what} is not a multiple of dt_fine")
    return k


def ms_decay_probe(batch: TrajectoryBatch) -> np.ndarray:
    """Ensemble second moment: rows of ``(t, mean |x(t)|^2)``."""
    if batch.n_paths == 0:
        raise ValueError("empty batch")
    return np.column_stack([batch.times, np.mean(np.sum(batch.states**2, axis=2), axis=0)])
