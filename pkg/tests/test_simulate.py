import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from epical import kernels
from epical.errors import DegenerateSeriesError, IntegrationError, ValidationError
from epical.models import ModelSpec
from epical.simulate import (Dataset, Trajectory, add_noise, find_peak, integrate,
                             read_series_csv)


def _reference_sir(beta, gamma, n=10000.0, i0=1.0, days=175):
    """Tight-tolerance adaptive solution, independent of the package kernels."""
    def f(t, y):
        s, i, r = y
        inf = beta * s * i / n
        return [-inf, inf - gamma * i, gamma * i]
    sol = solve_ivp(f, (0, days), [n - i0, i0, 0.0], t_eval=np.arange(days + 1),
                    method="DOP853", rtol=1e-12, atol=1e-10)
    return sol.y.T


def test_linear_decay_closed_form():
    traj = integrate(ModelSpec.default("sir"), [0.0, 0.1])
    t = np.arange(176)
    np.testing.assert_allclose(traj.column("I"), np.exp(-0.1 * t), rtol=0, atol=1e-6)


def test_peak_day_and_height_match_reference():
    ref = _reference_sir(0.3, 0.1)
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    i = traj.column("I")
    assert int(np.argmax(i)) == int(np.argmax(ref[:, 1]))
    assert abs(i.max() - ref[:, 1].max()) <= 1e-3 * ref[:, 1].max()
    fine = integrate(ModelSpec.default("sir"), [0.3, 0.1], steps_per_day=1000).column("I")
    assert int(np.argmax(fine)) == int(np.argmax(i))


def test_find_peak_on_reference_run():
    ref = _reference_sir(0.3, 0.1)
    split = find_peak(integrate(ModelSpec.default("sir"), [0.3, 0.1]), "I")
    assert split.peak_day == int(np.argmax(ref[:, 1]))
    assert split.low_cutoff == split.peak_day
    assert split.high_cutoff == min(175, split.peak_day + 40)


def _traj(series):
    v = np.column_stack([np.zeros(len(series)), np.asarray(series, float)])
    return Trajectory(("S", "I"), v, 1.0)


def test_find_peak_rules():
    decay = integrate(ModelSpec.default("sir"), [0.0, 0.1])
    assert find_peak(decay, "I").peak_day == 0
    s = np.zeros(30)
    s[5:10] = 1.0
    s[10] = s[11] = 5.0
    assert find_peak(_traj(s), "I").peak_day == 10
    with pytest.raises(DegenerateSeriesError):
        find_peak(_traj(np.zeros(30)), "I")
    with pytest.raises(DegenerateSeriesError):
        find_peak(_traj(np.arange(30.0)), "I")


@pytest.mark.parametrize("kind,params", [("sir", [0.3, 0.1]), ("sird", [0.3, 0.1, 0.02]),
                                         ("sirvd", [0.3, 0.1, 0.02, 0.05]),
                                         ("sir-subgroups", [0.3, 0.1])])
def test_shape_conservation_and_determinism(kind, params):
    spec = ModelSpec.default(kind)
    a = integrate(spec, params)
    b = integrate(spec, params)
    assert a.values.shape == (176, len(spec.slots))
    np.testing.assert_array_equal(a.values, b.values)
    assert np.all(np.abs(a.values.sum(axis=1) - 10000) <= 1e-6 * 10000)
    assert np.all(a.values >= 0)


@given(beta=st.floats(0, 1), gamma=st.floats(0, 1), mu=st.floats(0, 1))
def test_susceptibles_never_increase_without_vaccination(beta, gamma, mu):
    s = integrate(ModelSpec.default("sird"), [beta, gamma, mu]).column("S")
    assert np.all(np.diff(s) <= 1e-9)


def test_richardson_trend():
    spec = ModelSpec.default("sir")
    runs = [integrate(spec, [0.3, 0.1], steps_per_day=k).values for k in (2, 4, 8)]
    d1 = np.abs(runs[1] - runs[0]).max()
    d2 = np.abs(runs[2] - runs[1]).max()
    assert d2 < d1
    assert d1 / d2 > 8  # fourth order would give 16


def test_euler_one_step_matches_literal_update():
    spec = ModelSpec.default("sir")
    out = integrate(spec, [0.3, 0.1], horizon_days=5, steps_per_day=1, method="euler").values
    s, i, r = 9999.0, 1.0, 0.0
    for day in range(1, 6):
        inf = 0.3 * s * i / 10000
        s, i, r = s - inf, i + inf - 0.1 * i, r + 0.1 * i
        np.testing.assert_allclose(out[day], [s, i, r], rtol=1e-14)


def test_integration_errors():
    spec = ModelSpec.default("sir", mass_action=True)
    with pytest.raises(IntegrationError) as exc:
        integrate(spec, [1e6, 0.0], steps_per_day=1, method="euler")
    assert exc.value.day >= 1
    with pytest.raises(ValidationError):
        integrate(ModelSpec.default("sir"), [0.3, 0.1], horizon_days=0)
    with pytest.raises(ValidationError):
        integrate(ModelSpec.default("sir"), [0.3, 0.1], method="midpoint")


@pytest.mark.parametrize("case", ["flat", "grouped"])
def test_backends_agree(case):
    found = kernels.backends()
    if len(found) < 2:
        pytest.skip("compiled kernel not built")
    if case == "flat":
        args = (0.3, 0.1, 0.02, 0.05, 10000.0, np.array([9999.0, 1, 0, 0, 0]), 175, 10, False)
    else:
        spec = ModelSpec.default("sir-subgroups")
        args = (0.3, 0.1, spec.mixing, np.ascontiguousarray(spec.group_sizes),
                np.asarray(spec.initial_conditions), 175, 10, False)
    outs = [getattr(mod, case)(*args) for mod in found.values()]
    np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=1e-12, atol=1e-12)
    assert outs[0][1] == outs[1][1]


def test_pure_python_switch():
    env = dict(os.environ, EPICAL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from epical import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_noise_zero_is_identity():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    d = add_noise(traj, 0.0, 1)
    np.testing.assert_array_equal(d.values, traj.values)
    d = add_noise(traj, 0.0, 1, observed=["I"])
    np.testing.assert_array_equal(d.values[:, 0], traj.column("I"))


def test_noise_mean_within_clt_bound():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    d = add_noise(traj, 50.0, 3, observed=["I"], clamp=False)
    diff = d.values[:, 0] - traj.column("I")
    assert abs(diff.mean()) <= 3 * 50 / np.sqrt(176)


def test_noise_seed_determinism():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    a = add_noise(traj, 50.0, 7)
    b = add_noise(traj, 50.0, 7)
    c = add_noise(traj, 50.0, 8)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.mean(a.values != c.values) >= 0.9


def test_noise_clamps_and_counts():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    raw = add_noise(traj, 200.0, 5, clamp=False)
    d = add_noise(traj, 200.0, 5)
    assert np.all(d.values >= 0)
    assert d.clamped == int((raw.values < 0).sum()) > 0
    with pytest.raises(ValidationError):
        add_noise(traj, -1.0, 0)


def test_averaging_noisy_copies_converges():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    clean = traj.column("I")
    k, sigma = 100, 50.0
    mean = np.mean([add_noise(traj, sigma, s, observed=["I"], clamp=False).values[:, 0]
                    for s in range(k)], axis=0)
    rms = np.sqrt(np.mean((mean - clean) ** 2))
    expect = sigma / np.sqrt(k)
    assert expect / 2 <= rms <= 2 * expect


def test_dataset_cutoff_bounds():
    traj = integrate(ModelSpec.default("sir"), [0.3, 0.1])
    d = add_noise(traj, 0.0, 0)
    assert d.with_cutoff(3).train_cutoff_day == 3
    with pytest.raises(ValidationError):
        d.with_cutoff(2)
    with pytest.raises(ValidationError):
        d.with_cutoff(176)


def test_csv_round_trip(tmp_path):
    traj = integrate(ModelSpec.default("sir-subgroups"), [0.3, 0.1])
    traj.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header.startswith("day,S_children,")
    back = Dataset.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.values, traj.values)
    (tmp_path / "bad.csv").write_text("day,S\n0,1\n2,1\n")
    with pytest.raises(ValidationError):
        read_series_csv(tmp_path / "bad.csv")
