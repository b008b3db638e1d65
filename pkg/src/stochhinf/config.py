"""JSON experiment configuration: parsing and validation with field paths."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamat import IntervalSpec, n_unknowns
from .errors import ConfigError, StochHinfError
from .gare import PolicyPair, SystemModel
from .sde import ExplorationSpec, SimConfig

CONFIG_SCHEMA = {
    "model": {
        "n": "int, state dimension",
        "m": "int, control dimension",
        "p": "int, disturbance dimension",
        "A": "n x n matrix (row-major nested list)",
        "A1": "n x n matrix",
        "B": "n x m matrix",
        "E": "n x p matrix",
        "Q": "n x n PSD matrix (or C: q1 x n)",
        "R": "m x m PD matrix (or D: q2 x m)",
        "gamma": "positive float",
    },
    "solve": {"P0": "optional n x n matrix", "init": "'given' | 'ramp'", "max_iter": "int", "tol": "float"},
    "sim": {
        "x0": "length-n list",
        "dt_fine": "float (replaced by learn.dt / learn.K when a learn block exists)",
        "t_end": "float (replaced by the interval horizon when learning)",
        "n_paths": "int",
        "seed": "unsigned 64-bit int",
        "antithetic": "bool",
        "exploration": {"kind": "'sinusoids' | 'white'", "amplitude": "float", "n_terms": "int",
                        "freq_range": "[lo, hi]", "frequencies": "optional list"},
    },
    "learn": {
        "mode": "'exact' | 'montecarlo'",
        "sampling": "'ensemble' | 'branching'",
        "N": "int",
        "dt": "interval width",
        "K": "sub-steps per interval",
        "s": "number of intervals (default 2 x unknowns)",
        "rule": "'left' | 'right' | 'trapezoid'",
        "stop_tol": "optional float",
        "L0": "m x n initial control gain",
        "F0": "p x n initial disturbance gain",
        "P0": "optional n x n matrix; gains derived from it when L0/F0 are absent",
    },
    "robust": {"deltas": "list of floats", "seeds": "list of ints", "N": "int", "rho": "optional float",
               "kind": "'constant' | 'decaying'", "rate": "float"},
    "reference": {"P": "optional n x n benchmark matrix"},
    "output": "output directory",
}


def _get(block: dict, key: str, path: str, default=..., kind=None):
    if key not in block or block[key] is None:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    val = block[key]
    if kind is not None:
        try:
            val = kind(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.{key}", f"expected {kind.__name__}, got {val!r}") from exc
    return val


def _matrix(block: dict, key: str, path: str, shape, default=...) -> np.ndarray | None:
    if key not in block or block[key] is None:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    try:
        arr = np.array(block[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key}", "not a numeric matrix") from exc
    if arr.ndim == 1 and shape[0] == 1:
        arr = arr[None, :]
    if arr.shape != tuple(shape):
        raise ConfigError(f"{path}.{key}", f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{path}.{key}", "contains non-finite values")
    return arr


@dataclass
class ExperimentConfig:
    model: SystemModel
    raw: dict
    output: Path
    solve: dict
    sim: SimConfig | None = None
    learn: dict | None = None
    robust: dict | None = None
    P_ref: np.ndarray | None = None

    @property
    def dims(self):
        return self.model.n, self.model.m, self.model.p


def parse_model(block: dict) -> SystemModel:
    if not isinstance(block, dict):
        raise ConfigError("model", "missing or not an object")
    n = _get(block, "n", "model", kind=int)
    m = _get(block, "m", "model", kind=int)
    p = _get(block, "p", "model", kind=int)
    for key, val in (("n", n), ("m", m), ("p", p)):
        if val < 1:
            raise ConfigError(f"model.{key}", "must be >= 1")
    A = _matrix(block, "A", "model", (n, n))
    A1 = _matrix(block, "A1", "model", (n, n))
    B = _matrix(block, "B", "model", (n, m))
    E = _matrix(block, "E", "model", (n, p))
    gamma = _get(block, "gamma", "model", kind=float)
    if not gamma > 0:
        raise ConfigError("model.gamma", "must be positive")
    try:
        if "C" in block and block["C"] is not None:
            C = np.atleast_2d(np.array(block["C"], dtype=float))
            if C.shape[1] != n:
                raise ConfigError("model.C", f"must have {n} columns, got {C.shape}")
            D = np.atleast_2d(np.array(_get(block, "D", "model"), dtype=float))
            if D.shape[1] != m:
                raise ConfigError("model.D", f"must have {m} columns, got {D.shape}")
            return SystemModel(A, A1, B, E, C, D, gamma)
        Q = _matrix(block, "Q", "model", (n, n))
        R = _matrix(block, "R", "model", (m, m))
        return SystemModel.from_costs(A, A1, B, E, Q, R, gamma)
    except ConfigError:
        raise
    except StochHinfError as exc:
        raise ConfigError("model", str(exc)) from exc


def parse_exploration(block: dict | None) -> ExplorationSpec:
    block = block or {}
    path = "sim.exploration"
    freqs = block.get("frequencies")
    return ExplorationSpec(
        kind=_get(block, "kind", path, "sinusoids", str),
        amplitude=_get(block, "amplitude", path, 0.1, float),
        frequencies=None if freqs is None else tuple(float(w) for w in freqs),
        n_terms=_get(block, "n_terms", path, 10, int),
        freq_range=tuple(block.get("freq_range", (0.1, 5.0))),
    )


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    model = parse_model(raw.get("model"))
    n, m, p = model.n, model.m, model.p
    solve = dict(raw.get("solve") or {})
    solve["P0"] = _matrix(solve, "P0", "solve", (n, n), None)
    solve["init"] = _get(solve, "init", "solve", "given" if solve["P0"] is not None else "ramp", str)
    if solve["init"] not in ("given", "ramp"):
        raise ConfigError("solve.init", "must be 'given' or 'ramp'")
    solve["max_iter"] = _get(solve, "max_iter", "solve", 50, int)
    solve["tol"] = _get(solve, "tol", "solve", 1e-12, float)

    ref = raw.get("reference") or {}
    P_ref = _matrix(ref, "P", "reference", (n, n), None)

    learn = None
    if raw.get("learn") is not None:
        lb = raw["learn"]
        learn = {
            "mode": _get(lb, "mode", "learn", "montecarlo", str),
            "sampling": _get(lb, "sampling", "learn", "ensemble", str),
            "N": _get(lb, "N", "learn", 20, int),
            "dt": _get(lb, "dt", "learn", 0.5, float),
            "K": _get(lb, "K", "learn", 100, int),
            "s": _get(lb, "s", "learn", 2 * n_unknowns(n, m, p), int),
            "rule": _get(lb, "rule", "learn", "left", str),
            "stop_tol": _get(lb, "stop_tol", "learn", None, float),
            "P0": _matrix(lb, "P0", "learn", (n, n), None),
            "L0": _matrix(lb, "L0", "learn", (m, n), None),
            "F0": _matrix(lb, "F0", "learn", (p, n), None),
        }
        if learn["mode"] not in ("exact", "montecarlo"):
            raise ConfigError("learn.mode", "must be 'exact' or 'montecarlo'")
        if learn["sampling"] not in ("ensemble", "branching"):
            raise ConfigError("learn.sampling", "must be 'ensemble' or 'branching'")
        if learn["rule"] not in ("left", "right", "trapezoid"):
            raise ConfigError("learn.rule", "must be 'left', 'right' or 'trapezoid'")
        if learn["N"] < 1:
            raise ConfigError("learn.N", "must be >= 1")
        if learn["K"] < 1:
            raise ConfigError("learn.K", "must be >= 1")
        if not learn["dt"] > 0:
            raise ConfigError("learn.dt", "must be positive")
        if learn["s"] < 1:
            raise ConfigError("learn.s", "must be >= 1")
        if (learn["L0"] is None) != (learn["F0"] is None):
            raise ConfigError("learn.L0" if learn["L0"] is None else "learn.F0", "L0 and F0 must be given together")

    sim = None
    if raw.get("sim") is not None:
        sb = raw["sim"]
        x0 = np.array(_get(sb, "x0", "sim"), dtype=float).ravel()
        if x0.size != n:
            raise ConfigError("sim.x0", f"expected length {n}, got {x0.size}")
        if learn is not None:
            dt_fine = learn["dt"] / learn["K"]
            t_end = learn["s"] * learn["dt"]
        else:
            dt_fine = _get(sb, "dt_fine", "sim", kind=float)
            t_end = _get(sb, "t_end", "sim", kind=float)
        sim = SimConfig(
            x0=tuple(x0),
            t_end=t_end,
            dt_fine=dt_fine,
            n_paths=_get(sb, "n_paths", "sim", 50, int),
            seed=_get(sb, "seed", "sim", 0, int),
            exploration=parse_exploration(sb.get("exploration")),
            antithetic=bool(sb.get("antithetic", False)),
        )
    elif learn is not None:
        raise ConfigError("sim", "a sim block is required for learning")

    robust = None
    if raw.get("robust") is not None:
        rb = raw["robust"]
        deltas = _get(rb, "deltas", "robust")
        if not isinstance(deltas, list) or not deltas or any(float(d) < 0 for d in deltas):
            raise ConfigError("robust.deltas", "must be a non-empty list of non-negative numbers")
        robust = {
            "deltas": [float(d) for d in deltas],
            "seeds": [int(s) for s in _get(rb, "seeds", "robust", [0, 1, 2, 3, 4])],
            "N": _get(rb, "N", "robust", 30, int),
            "rho": _get(rb, "rho", "robust", None, float),
            "kind": _get(rb, "kind", "robust", "constant", str),
            "rate": _get(rb, "rate", "robust", 0.1, float),
        }
        if robust["kind"] not in ("constant", "decaying"):
            raise ConfigError("robust.kind", "must be 'constant' or 'decaying'")

    out = Path(raw.get("output") or "out")
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    return ExperimentConfig(model, raw, out, solve, sim, learn, robust, P_ref)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError("--config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    return parse_config(raw)


def learn_intervals(cfg: ExperimentConfig) -> IntervalSpec:
    return IntervalSpec.contiguous(cfg.learn["s"], cfg.learn["dt"])


def initial_gains(cfg: ExperimentConfig) -> PolicyPair:
    from .gare import gains_from_P

    lb = cfg.learn
    if lb["L0"] is not None:
        return PolicyPair(lb["L0"], lb["F0"])
    if lb["P0"] is not None:
        return gains_from_P(cfg.model, lb["P0"])
    return PolicyPair.zeros(*cfg.dims)


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float written to 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, np.ndarray):
            return enc(o.tolist(), level)
        if isinstance(o, (list, tuple)):
            if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            v = float(o)
            if not np.isfinite(v):
                return "null"
            return format(v, ".17g")
        if o is None:
            return "null"
        return json.dumps(o)

    return enc(obj, 0) + "\n"
