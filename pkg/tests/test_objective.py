import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_problem
from epical.errors import ValidationError
from epical.models import ModelSpec
from epical.objective import (PENALTY, CalibrationProblem, FunctionProblem,
                              finite_difference_gradient, finite_difference_jacobian, loss, mae,
                              residuals)
from epical.simulate import add_noise, integrate


def test_self_consistency(sir_problem):
    assert loss(sir_problem, [0.3, 0.1]).ssr <= 1e-8
    assert np.all(np.abs(residuals(sir_problem, [0.3, 0.1])) <= 1e-5)
    assert mae(sir_problem, [0.3, 0.1]) <= 1e-4


def test_loss_increases_with_gamma_offset(sir_problem):
    ssr = [loss(sir_problem, [0.3, 0.1 + d]).ssr for d in (0.01, 0.02, 0.03, 0.04, 0.05)]
    assert all(a < b for a, b in zip(ssr, ssr[1:]))


def test_empty_fit_compartments_rejected():
    p = make_problem("sir")
    with pytest.raises(ValidationError):
        CalibrationProblem(p.spec, p.dataset, fit_compartments=[])


def test_unobserved_fit_compartment_rejected():
    spec = ModelSpec.default("sir")
    data = add_noise(integrate(spec, [0.3, 0.1]), 0.0, 0, observed=["I"])
    with pytest.raises(ValidationError):
        CalibrationProblem(spec, data, fit_compartments=["R"])
    p = CalibrationProblem(spec, data, train_days=40)
    assert p.n_residuals == 40


def test_residual_length_and_order():
    p = make_problem("sird", fit_compartments=["I", "D"])
    r = residuals(p, [0.31, 0.1, 0.02])
    assert len(r) == p.train_days * 2
    pred = integrate(p.spec, [0.31, 0.1, 0.02]).values
    obs = p.dataset.values
    # day-major, then slot in fit order
    assert r[0] == pytest.approx(pred[0, 1] - obs[0, 1], abs=1e-12)
    assert r[1] == pytest.approx(pred[0, 3] - obs[0, 3], abs=1e-12)
    assert r[2] == pytest.approx(pred[1, 1] - obs[1, 1], abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_ssr_is_squared_residual_norm(sir_problem, seed):
    x = np.random.default_rng(seed).random(2)
    r = residuals(sir_problem, x)
    assert loss(sir_problem, x).ssr == pytest.approx(float(r @ r), rel=1e-12)


@given(beta=st.floats(0, 1), gamma=st.floats(0, 1))
def test_loss_nonnegative(sir_problem, beta, gamma):
    v = loss(sir_problem, [beta, gamma])
    assert v.ssr >= 0 and np.isfinite(v.ssr)


def test_clamped_flag(sir_problem):
    v = loss(sir_problem, [1.5, 0.1])
    assert v.clamped
    assert v.ssr == loss(sir_problem, [1.0, 0.1]).ssr


def test_penalty_on_blowup():
    spec = ModelSpec.default("sir", mass_action=True).with_bounds(beta=(0.0, 1e7))
    data = add_noise(integrate(ModelSpec.default("sir"), [0.3, 0.1]), 0.0, 0)
    p = CalibrationProblem(spec, data, train_days=60, method="euler", steps_per_day=1)
    v = loss(p, [1e6, 0.0])
    assert v.penalized and v.ssr == pytest.approx(PENALTY)
    assert mae(p, [1e6, 0.0]) == PENALTY


def test_counter_increments_once_per_simulation(sir_problem):
    p = make_problem("sir")
    n0 = p.evaluations
    loss(p, [0.3, 0.1])
    mae(p, [0.3, 0.1])
    residuals(p, [0.3, 0.1])
    assert p.evaluations == n0 + 3


def test_mae_translation():
    p = make_problem("sir")
    shifted = p.dataset.values.copy()
    shifted[:, 1] -= 7.5
    data = type(p.dataset)(p.dataset.observed, shifted, train_cutoff_day=p.train_days)
    q = CalibrationProblem(p.spec, data)
    assert mae(q, [0.3, 0.1]) == pytest.approx(7.5, abs=1e-6)


def test_mae_on_noisy_data_is_folded_normal_mean():
    spec = ModelSpec.default("sir")
    traj = integrate(spec, [0.3, 0.1])
    clean = traj.column("I")
    # unclamped: the noise is exactly N(0, 50) on every day
    p = CalibrationProblem(spec, add_noise(traj, 50.0, 11, clamp=False).with_cutoff(50))
    assert mae(p, [0.3, 0.1]) == pytest.approx(50 * np.sqrt(2 / np.pi), rel=0.15)
    # clamped: the metric equals the mean absolute emitted perturbation
    q = CalibrationProblem(spec, add_noise(traj, 50.0, 11).with_cutoff(50))
    assert mae(q, [0.3, 0.1]) == pytest.approx(np.mean(np.abs(q.eval_observed - clean)), rel=1e-6)


def test_mae_and_loss_agree_on_ordering():
    spec = ModelSpec.default("sir")
    data = add_noise(integrate(spec, [0.3, 0.1]), 0.0, 0, observed=["I"]).with_cutoff(50)
    p = CalibrationProblem(spec, data)
    deltas = [0.0, 0.002, 0.005, 0.01, 0.02]
    l = [loss(p, [0.3, 0.1 + d]).ssr for d in deltas]
    m = [mae(p, [0.3, 0.1 + d]) for d in deltas]
    assert np.argsort(l).tolist() == np.argsort(m).tolist() == list(range(5))


def test_gradient_of_quadratic():
    a = np.array([0.2, -0.4, 0.7])
    f = FunctionProblem(lambda x: float(np.sum((x - a) ** 2)), [-2] * 3, [2] * 3)
    x = np.array([0.5, 0.1, -0.3])
    g = finite_difference_gradient(f, x)
    np.testing.assert_allclose(g.value, 2 * (x - a), atol=1e-6)
    assert not g.one_sided.any()


def test_gradient_at_bound_is_one_sided():
    f = FunctionProblem(lambda x: float(np.sum(x ** 2)), [0, 0], [1, 1])
    g = finite_difference_gradient(f, [0.0, 0.5])
    assert g.one_sided.tolist() == [True, False]
    assert g.value[0] == pytest.approx(0.0, abs=1e-5)
    with pytest.raises(ValidationError):
        finite_difference_gradient(f, [0.5, 0.5], h=0)


@pytest.mark.parametrize("seed", range(5))
def test_chain_rule_identity(sir_problem, seed):
    x = 0.2 + 0.6 * np.random.default_rng(seed).random(2)
    J = finite_difference_jacobian(sir_problem, x).value
    r = residuals(sir_problem, x)
    assert J.shape == (len(r), 2)
    g = finite_difference_gradient(sir_problem, x).value
    assert np.linalg.norm(2 * J.T @ r - g) <= 1e-4 * (1 + np.linalg.norm(g))


def test_central_difference_order():
    f = FunctionProblem(lambda x: float(np.sin(3 * x[0]) * np.exp(x[1])), [-1, -1], [1, 1])
    x = np.array([0.3, 0.2])
    exact = np.array([3 * np.cos(0.9) * np.exp(0.2), np.sin(0.9) * np.exp(0.2)])
    e1 = np.linalg.norm(finite_difference_gradient(f, x, h=1e-3).value - exact)
    e2 = np.linalg.norm(finite_difference_gradient(f, x, h=5e-4).value - exact)
    assert e2 < e1
    assert 3 < e1 / e2 < 5
