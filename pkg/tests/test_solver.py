import csv

import numpy as np
import pytest

from rectlab.oracle import ConstantEps, GMMOracle, mixture_preset
from rectlab.schedule import KINDS, forward_diffuse, make_schedule
from rectlab.solver import (
    TimeGrid,
    UsageError,
    exact_step_quadrature,
    first_order_step,
    make_grid,
    sample,
    write_trajectory_csv,
)

X0 = np.array([0.0, 1.0])
EPS = np.array([1.0, 1.0])


def test_fm_constant_eps_step_lands_on_path():
    fm = make_schedule("fm")
    x_s = forward_diffuse(fm, X0, EPS, 0.9)
    got = first_order_step(ConstantEps(EPS), x_s, 0.9, 0.1, fm)
    assert np.max(np.abs(got - [0.1, 1.0])) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_zero_length_step_is_identity(kind):
    sch = make_schedule(kind)
    x = np.array([0.7, -0.2])
    s = 0.5 * (sch.t_min + sch.t_max)
    assert np.array_equal(first_order_step(ConstantEps(EPS), x, s, s, sch), x)


def test_vp_semigroup_under_constant_eps():
    vp = make_schedule("vp")
    m = ConstantEps([0.3, -0.8])
    x = np.array([1.5, 2.0])
    big = first_order_step(m, x, 0.9, 0.2, vp)
    half = first_order_step(m, first_order_step(m, x, 0.9, 0.55, vp), 0.55, 0.2, vp)
    assert np.max(np.abs(big - half)) <= 1e-12


@pytest.mark.parametrize("steps", [1, 64])
def test_fm_sampling_constant_eps_endpoint(steps):
    # start sigma_T * eps with eps = [1,1] puts the path at x0 = 0, so the
    # endpoint is sigma_{t_min} * [1, 1]
    fm = make_schedule("fm")
    out = sample(ConstantEps(EPS), EPS, make_grid(fm, steps), fm, record=False).final
    assert np.allclose(out, fm.t_min * EPS, rtol=0, atol=1e-12)


def test_single_gaussian_sampling_matches_marginal():
    sch = make_schedule("vp")
    orc = GMMOracle(mixture_preset("single"), sch)
    noise = np.random.default_rng(0).standard_normal((4096, 2))
    x = sample(orc, noise, make_grid(sch, 256, "lambda"), sch, record=False).final
    n = len(x)
    a, s = sch.alpha_sigma(sch.t_min)
    var = a * a + s * s
    assert np.all(np.abs(x.mean(0)) < 3 * np.sqrt(var / n))
    c = np.cov(x.T)
    assert np.all(np.abs(np.diag(c) - var) < 3 * var * np.sqrt(2 / n))
    assert abs(c[0, 1]) < 3 * var / np.sqrt(n)


def test_trajectory_records_states_and_predictions():
    sch = make_schedule("edm")
    orc = GMMOracle(mixture_preset("ring8"), sch)
    noise = np.random.default_rng(1).standard_normal((3, 2))
    traj = sample(orc, noise, make_grid(sch, 5), sch)
    assert traj.states.shape == (6, 3, 2) and traj.eps_preds.shape == (6, 3, 2)
    assert np.allclose(traj.eps_preds[2], orc(traj.states[2], traj.times[2]))
    one = traj.select(1)
    assert one.states.shape == (6, 2)


def test_quadrature_reduces_to_step_for_constant_eps():
    vp = make_schedule("vp")
    m = ConstantEps([0.5, 1.5])
    x = np.array([0.1, 0.2])
    want = first_order_step(m, x, 0.8, 0.1, vp)
    for n in (4, 16, 512):
        assert np.max(np.abs(exact_step_quadrature(m, x, 0.8, 0.1, vp, n) - want)) <= 1e-12
    assert np.max(np.abs(exact_step_quadrature(m, x, 0.8, 0.1, vp, 2, extrapolate=False) - want)) <= 1e-12
    with pytest.raises(UsageError):
        exact_step_quadrature(m, x, 0.8, 0.1, vp, 6)


def test_quadrature_self_converges():
    vp = make_schedule("vp")
    mix = mixture_preset("ring8")
    orc = GMMOracle(mix, vp)
    rng = np.random.default_rng(2)
    x = forward_diffuse(vp, mix.sample(10, rng), rng.standard_normal((10, 2)), 0.8)
    a = exact_step_quadrature(orc, x, 0.8, 0.3, vp, 512)
    b = exact_step_quadrature(orc, x, 0.8, 0.3, vp, 1024)
    assert np.max(np.abs(a - b)) < 1e-6


def test_grid_validation():
    sch = make_schedule("fm")
    with pytest.raises(UsageError):
        make_grid(sch, 0)
    with pytest.raises(UsageError):
        TimeGrid([0.5])
    with pytest.raises(UsageError):
        TimeGrid([0.1, 0.5])
    with pytest.raises(UsageError):
        sample(ConstantEps(EPS), EPS, None, sch)
    with pytest.raises(ValueError):
        make_grid(sch, 4, "cosine")


@pytest.mark.parametrize("kind", KINDS)
def test_lambda_grid_is_uniform_in_log_snr(kind):
    sch = make_schedule(kind)
    g = make_grid(sch, 10, "lambda")
    assert g.times[0] == sch.t_max and g.times[-1] == sch.t_min
    d = np.diff(sch.lam(g.times))
    assert np.allclose(d, d[0], rtol=1e-8)


def test_per_sample_grids():
    sch = make_schedule("vp")
    g = make_grid(sch, 4, "lambda", t_start=np.array([0.9, 0.5]), t_end=np.array([0.5, 0.1]))
    assert g.times.shape == (5, 2)
    assert np.allclose(g.times[0], [0.9, 0.5]) and np.allclose(g.times[-1], [0.5, 0.1])


def test_trajectory_csv(tmp_path):
    sch = make_schedule("fm")
    traj = sample(ConstantEps(EPS), EPS, make_grid(sch, 3, "t"), sch)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x0", "x1", "eps_pred0", "eps_pred1"]
    assert len(rows) == 5
    assert float(rows[1][0]) == sch.t_max
    with pytest.raises(UsageError):
        write_trajectory_csv(sample(ConstantEps(EPS), np.ones((2, 2)), make_grid(sch, 2), sch), path)
