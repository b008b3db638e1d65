import numpy as np
import pytest

from stochhinf.errors import ConfigError, DimensionError, PathDiverged
from stochhinf.gare import PolicyPair, SystemModel
from stochhinf.sde import (
    Exploration,
    ExplorationSpec,
    SimConfig,
    TrajectoryBatch,
    ms_decay_probe,
    simulate_batch,
    simulate_branching,
)
from stochhinf.datamat import IntervalSpec
from stochhinf.symlin import LyapPencil, is_ms_stable

QUIET = ExplorationSpec(amplitude=0.0)


def model_of(A, A1, B=None, E=None):
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    B = np.zeros((n, 1)) if B is None else B
    E = np.zeros((n, 1)) if E is None else E
    return SystemModel.from_costs(A, np.atleast_2d(np.asarray(A1, float)), B, E, np.eye(n), np.eye(1), 1.0)


def zero_gains(model):
    return PolicyPair.zeros(model.n, model.m, model.p)


def test_zero_dynamics_constant():
    model = model_of(np.zeros((2, 2)), np.zeros((2, 2)))
    cfg = SimConfig((1.0, -2.0), 1.0, 0.01, n_paths=3, exploration=QUIET)
    batch = simulate_batch(model, zero_gains(model), cfg)
    assert np.all(batch.states == np.array([1.0, -2.0]))
    assert np.all(batch.controls == 0) and np.all(batch.disturbances == 0)


def test_deterministic_decay():
    model = model_of(-np.eye(2), np.zeros((2, 2)))
    h = 1e-3
    cfg = SimConfig((1.0, 1.0), 1.0, h, n_paths=2, exploration=QUIET)
    batch = simulate_batch(model, zero_gains(model), cfg)
    mean = batch.states.mean(axis=0)
    exact = np.exp(-batch.times)[:, None] * np.ones(2)
    assert np.max(np.abs(mean - exact)) < h


def test_second_moment_matches_moment_ode():
    model = model_of([[-1.0]], [[1.0]])
    cfg = SimConfig((1.0,), 1.0, 0.01, n_paths=10_000, seed=3, exploration=QUIET)
    batch = simulate_batch(model, zero_gains(model), cfg)
    x2 = batch.states[:, -1, 0] ** 2
    se = x2.std(ddof=1) / np.sqrt(x2.size)
    assert abs(x2.mean() - np.exp(-1.0)) < 3 * se


@pytest.mark.parametrize(
    "A,A1",
    [
        ([[-1.0]], [[1.0]]),
        ([[0.1]], [[0.3]]),
        ([[0.5]], [[0.0]]),
        ([[-1.0, 0.5], [0.0, -0.8]], [[0.3, 0.0], [0.2, 0.3]]),
        ([[-0.2, 1.0], [-1.0, -0.2]], [[1.0, 0.0], [0.0, 1.0]]),
    ],
)
def test_stability_agrees_with_monte_carlo(A, A1):
    model = model_of(A, A1)
    n = model.n
    cfg = SimConfig(tuple(np.ones(n)), 8.0, 0.01, n_paths=4000, seed=1, exploration=QUIET)
    curve = ms_decay_probe(simulate_batch(model, zero_gains(model), cfg))
    # compare the mean square level late in the run with the start
    decays = curve[-1, 1] < 0.5 * curve[0, 1]
    assert decays == is_ms_stable(LyapPencil(model.A, model.A1))


def test_ms_decay_shapes():
    stable = model_of([[-1.0]], [[1.0]])
    unstable = model_of([[1.0]], [[0.0]])
    frozen = model_of([[0.0]], [[0.0]])
    cfg = SimConfig((1.0,), 3.0, 0.01, n_paths=2000, seed=5, exploration=QUIET)
    c = ms_decay_probe(simulate_batch(stable, zero_gains(stable), cfg))[:, 1]
    assert c[-1] < c[len(c) // 2] < c[0]
    c = ms_decay_probe(simulate_batch(unstable, zero_gains(unstable), cfg))[:, 1]
    assert np.all(np.diff(c) > 0)
    c = ms_decay_probe(simulate_batch(frozen, zero_gains(frozen), cfg))[:, 1]
    assert np.all(c == 1.0)


def test_feedback_and_exploration_enter_inputs():
    model = model_of([[-1.0]], [[0.5]], B=np.ones((1, 1)), E=np.ones((1, 1)))
    gains = PolicyPair([[0.3]], [[-0.2]])
    cfg = SimConfig((1.0,), 1.0, 0.01, n_paths=4, seed=2, exploration=ExplorationSpec(amplitude=0.2))
    batch = simulate_batch(model, gains, cfg)
    probe = Exploration(cfg.exploration, cfg.seed, 2)(batch.times)
    np.testing.assert_allclose(batch.controls[..., 0], -0.3 * batch.states[..., 0] + probe[:, 0], atol=1e-14)
    np.testing.assert_allclose(batch.disturbances[..., 0], 0.2 * batch.states[..., 0] + probe[:, 1], atol=1e-14)


def test_determinism_and_seed_sensitivity():
    model = model_of([[-1.0]], [[1.0]], B=np.ones((1, 1)))
    cfg = SimConfig((1.0,), 1.0, 0.01, n_paths=5, seed=11)
    a = simulate_batch(model, zero_gains(model), cfg)
    b = simulate_batch(model, zero_gains(model), cfg)
    assert np.array_equal(a.states, b.states)
    c = simulate_batch(model, zero_gains(model), SimConfig((1.0,), 1.0, 0.01, n_paths=5, seed=12))
    assert not np.array_equal(a.states, c.states)


def test_paths_are_prefix_stable():
    # adding paths does not change the existing ones
    model = model_of([[-1.0]], [[1.0]])
    small = simulate_batch(model, zero_gains(model), SimConfig((1.0,), 1.0, 0.01, n_paths=3, seed=4))
    big = simulate_batch(model, zero_gains(model), SimConfig((1.0,), 1.0, 0.01, n_paths=8, seed=4))
    assert np.array_equal(small.states, big.states[:3])


def test_antithetic_pairs():
    model = model_of([[0.0]], [[1.0]])
    cfg = SimConfig((1.0,), 0.5, 0.01, n_paths=4, seed=0, exploration=QUIET, antithetic=True)
    X = simulate_batch(model, zero_gains(model), cfg).states[:, :, 0]
    # with a = 0 the EM log-increments of a pair are log(1 + dW) and log(1 - dW)
    assert np.allclose(X[0, 1] - 1.0, -(X[1, 1] - 1.0))


def test_white_exploration_is_seeded():
    model = model_of([[-1.0]], [[0.0]], B=np.ones((1, 1)))
    spec = ExplorationSpec(kind="white", amplitude=0.1)
    cfg = SimConfig((0.0,), 0.2, 0.01, n_paths=2, seed=9, exploration=spec)
    a = simulate_batch(model, zero_gains(model), cfg)
    b = simulate_batch(model, zero_gains(model), cfg)
    assert np.array_equal(a.controls, b.controls)
    assert np.std(a.controls) > 0.05


def test_divergence_reported():
    model = model_of([[1e6]], [[0.0]])
    cfg = SimConfig((1.0,), 1.0, 0.01, n_paths=2, exploration=QUIET)
    with pytest.raises(PathDiverged):
        simulate_batch(model, zero_gains(model), cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig((1.0,), 1.0, 0.0)
    with pytest.raises(ConfigError):
        SimConfig((1.0,), 1.0, 0.1, n_paths=0)
    with pytest.raises(ConfigError):
        SimConfig((1.0,), 1.0, 0.1, seed=-1)
    with pytest.raises(ConfigError) as info:
        ExplorationSpec(kind="chirp")
    assert info.value.field == "sim.exploration.kind"
    with pytest.raises(DimensionError):
        model = model_of([[-1.0]], [[0.0]])
        simulate_batch(model, zero_gains(model), SimConfig((1.0, 2.0), 1.0, 0.1))


def test_csv_round_trip(tmp_path):
    model = model_of([[-1.0, 0.2], [0.0, -1.0]], [[0.1, 0.0], [0.0, 0.1]], B=np.ones((2, 1)))
    cfg = SimConfig((1.0, 0.5), 0.3, 0.01, n_paths=3, seed=1)
    batch = simulate_batch(model, zero_gains(model), cfg)
    batch.to_csv(tmp_path)
    header = (tmp_path / "states.csv").read_text().splitlines()[0]
    assert header == "path,step,x0,x1"
    back = TrajectoryBatch.from_csv(tmp_path)
    for name in ("times", "states", "controls", "disturbances"):
        assert np.array_equal(getattr(back, name), getattr(batch, name))
    assert not list(tmp_path.glob("*.tmp"))


def test_branching_segments():
    model = model_of([[-1.0]], [[1.0]], B=np.ones((1, 1)))
    spec = IntervalSpec.contiguous(3, 0.1)
    cfg = SimConfig((1.0,), spec.t_end, 0.01, n_paths=4, seed=2)
    segs = simulate_branching(model, zero_gains(model), cfg, spec)
    assert len(segs) == 3
    for j, seg in enumerate(segs):
        assert seg.states.shape == (4, 11, 1)
        assert seg.times[0] == pytest.approx(0.1 * j)
        # all continuations start at the same recorded state
        assert np.all(seg.states[:, 0] == seg.states[0, 0])
    assert np.all(segs[0].states[:, 0, 0] == 1.0)
