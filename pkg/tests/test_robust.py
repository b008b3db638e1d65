import numpy as np
import pytest

from conftest import scalar_stoch, synthetic3
from stochhinf.errors import BlockSingular, StepUnstable
from stochhinf.gare import PolicyPair, gains_from_P, gare_residual, run_alg1, spu_step
from stochhinf.robust import (
    BlockM,
    ErrorSchedule,
    fit_iss_envelope,
    iss_bound_holds,
    iss_sweep,
    m_of_p,
    perturbed_start,
    plateaus,
    r_op,
    random_direction,
    robust_spu_step,
    run_alg4,
    write_sweep_csv,
)


@pytest.fixture(scope="module")
def syn():
    model = synthetic3()
    return model, run_alg1(model, np.zeros((3, 3))).P


def test_m_of_p_at_zero():
    model = synthetic3()
    M = m_of_p(model, np.zeros((3, 3)))
    np.testing.assert_array_equal(M.block(1, 1), model.Q)
    assert np.all(M.block(2, 1) == 0) and np.all(M.block(3, 1) == 0)
    np.testing.assert_array_equal(M.block(2, 2), model.R)
    np.testing.assert_array_equal(M.block(3, 3), -(model.gamma**2) * np.eye(1))


def test_m_of_p_scalar_hand_assembled():
    model = scalar_stoch()
    P = 0.4
    top = 1 + 2 * (-1) * P + P
    expected = np.array([[top, P, P], [P, 1, 0], [P, 0, -4]])
    np.testing.assert_allclose(m_of_p(model, [[P]]).value, expected, atol=1e-15)


def test_r_op_identity():
    Z = BlockM(np.eye(5), 3, 1, 1)
    np.testing.assert_array_equal(r_op(Z, PolicyPair.zeros(3, 1, 1)), np.eye(3))


def test_r_op_expansion(rng):
    model = synthetic3()
    for _ in range(5):
        X = rng.standard_normal((3, 3))
        P = X + X.T
        g = PolicyPair(rng.standard_normal((1, 3)), rng.standard_normal((1, 3)))
        K = model.A - model.B @ g.L - model.E @ g.F
        expected = (
            model.Q + g.L.T @ model.R @ g.L - model.gamma**2 * g.F.T @ g.F
            + P @ K + K.T @ P + model.A1.T @ P @ model.A1
        )
        np.testing.assert_allclose(r_op(m_of_p(model, P), g), expected, atol=1e-12)


def test_r_op_vanishes_at_solution(syn):
    model, P_star = syn
    g = gains_from_P(model, P_star)
    assert np.linalg.norm(r_op(m_of_p(model, P_star), g)) < 1e-10
    np.testing.assert_allclose(r_op(m_of_p(model, P_star), g), gare_residual(model, P_star), atol=1e-10)


def test_random_direction(rng):
    S = random_direction(rng, 4)
    assert np.linalg.norm(S) == pytest.approx(1.0)
    np.testing.assert_array_equal(S, S.T)


def test_schedule_kinds():
    assert ErrorSchedule("constant", 0.1).magnitude_at(7) == 0.1
    assert ErrorSchedule("decaying", 1.0, rate=0.5).magnitude_at(3) == 0.25
    s = ErrorSchedule("custom", values=(0.3, 0.2))
    assert [s.magnitude_at(i) for i in (1, 2, 3)] == [0.3, 0.2, 0.0]
    gen = ErrorSchedule("constant", 0.2, seed=3).perturbations(5)
    assert np.linalg.norm(next(gen)) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        ErrorSchedule("weird")


def test_zero_perturbation_is_spu(syn):
    model, _ = syn
    P = np.zeros((3, 3))
    g = gains_from_P(model, P)
    for i in range(4):
        P_next, g = robust_spu_step(model, g, np.zeros((5, 5)), i)
        P = spu_step(model, P, i)
        np.testing.assert_allclose(P_next, P, atol=1e-13)


def test_zero_schedule_matches_alg1(syn):
    model, P_star = syn
    trace = run_alg4(model, np.zeros((3, 3)), ErrorSchedule("constant", 0.0), 6, P_star)
    ref = run_alg1(model, np.zeros((3, 3)), tol=0.0, max_iter=6, raise_on_nonconvergence=False)
    for a, b in zip(trace.Ps, ref.Ps()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_continuity_in_perturbation():
    model = scalar_stoch()
    g = gains_from_P(model, [[0.5]])
    exact, _ = robust_spu_step(model, g, np.zeros((3, 3)))
    # the next gains move continuously, and so does the following evaluation
    diffs = []
    for size in (1e-2, 1e-4, 1e-6):
        dM = size * random_direction(np.random.default_rng(0), 3)
        _, g_hat = robust_spu_step(model, g, dM)
        _, g_exact = robust_spu_step(model, g, np.zeros((3, 3)))
        P_hat, _ = robust_spu_step(model, g_hat, np.zeros((3, 3)))
        P_ex, _ = robust_spu_step(model, g_exact, np.zeros((3, 3)))
        diffs.append(abs(P_hat - P_ex)[0, 0])
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-5


def test_huge_perturbation_breaks_down():
    model = scalar_stoch()
    g = gains_from_P(model, [[0.5]])
    dM = np.zeros((3, 3))
    dM[1, 1] = -1.0  # cancels R exactly
    with pytest.raises(BlockSingular):
        robust_spu_step(model, g, dM)
    bad = 1e3 * random_direction(np.random.default_rng(1), 3)
    with pytest.raises((BlockSingular, StepUnstable)):
        trace_gains = g
        for i in range(5):
            _, trace_gains = robust_spu_step(model, trace_gains, bad, i)


def test_decaying_schedule_converges(syn):
    model, P_star = syn
    P0 = perturbed_start(P_star, 0.05 * np.linalg.norm(P_star), 0)
    trace = run_alg4(model, P0, ErrorSchedule("decaying", 1e-2, seed=0, rate=0.1), 15, P_star)
    assert trace.errors[-1] < 1e-8


def test_sweep_plateaus_ordered(syn, tmp_path):
    model, P_star = syn
    res = iss_sweep(model, P_star, [0.0, 1e-4, 1e-3, 1e-2], range(3), N=20)
    plat = plateaus(res)
    vals = list(plat.values())
    assert vals[0] < 1e-12
    assert all(a <= b for a, b in zip(vals[:-1], vals[1:]))
    assert np.all(np.isfinite(vals))
    write_sweep_csv(res, tmp_path / "iss.csv")
    lines = (tmp_path / "iss.csv").read_text().splitlines()
    assert lines[0] == "delta,seed,iteration,error_norm"
    assert len(lines) == 1 + 4 * 3 * 21


def test_sweep_records_breakdown():
    model = scalar_stoch()
    res = iss_sweep(model, [[2 / 3]], [5.0], [0, 1, 2, 3], N=10)
    # huge errors either break the iteration (inf) or leave a large plateau
    assert any(np.isinf(t.errors[-1]) or t.errors[-1] > 1e-3 for t in res.values())


def test_iss_envelope_fits(syn):
    model, P_star = syn
    delta = 1e-3
    P0 = perturbed_start(P_star, 0.05 * np.linalg.norm(P_star), 2)
    errors = run_alg4(model, P0, ErrorSchedule("constant", delta, seed=2), 25, P_star).errors
    eps, C = fit_iss_envelope(errors, delta)
    assert 0 < eps < 1 and np.isfinite(C)
    assert iss_bound_holds(errors, eps, C, delta)
    assert not iss_bound_holds(errors, eps, 0.0, delta) or C == 0.0


def test_perturbed_start_reproducible():
    P = np.eye(3)
    a = perturbed_start(P, 0.1, 4)
    np.testing.assert_array_equal(a, perturbed_start(P, 0.1, 4))
    assert np.linalg.norm(a - P) == pytest.approx(0.1)
