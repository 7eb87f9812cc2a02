import numpy as np
import pytest

from rectlab.distill import CDConfig, consistency_distill, x0_of
from rectlab.net import NetConfig, NetEps, init_params
from rectlab.oracle import ConstantEps, mixture_preset
from rectlab.schedule import forward_diffuse, make_schedule
from rectlab.solver import make_grid, sample

SMALL = NetConfig(hidden_width=16, hidden_layers=2, time_embed_dim=4)


def test_zero_student_agrees_with_zero_teacher():
    """eps = 0 everywhere: x/alpha is constant along teacher steps, so the loss is 0 at init.

    Only the first update is checked: Adam rescales the roundoff-level
    gradient to a full-size step, after which the student is no longer zero.
    """
    vp = make_schedule("vp")
    data = mixture_preset("ring8").sample(200, np.random.default_rng(0))
    init = init_params(SMALL, seed=0, zero_head=True)
    res = consistency_distill(init, ConstantEps([0.0, 0.0]),
                              CDConfig(vp, iterations=1, batch_size=32, precondition=False), data)
    assert res.losses[0] <= 1e-24


def test_ema_target_after_one_update():
    vp = make_schedule("vp")
    data = mixture_preset("ring8").sample(200, np.random.default_rng(1))
    init = init_params(SMALL, seed=1)
    cfg = CDConfig(vp, iterations=1, batch_size=16, ema_decay=0.9, lr=1e-2)
    res = consistency_distill(init, ConstantEps([0.2, -0.1]), cfg, data)
    want = 0.9 * init.flat + 0.1 * res.params.flat
    assert np.allclose(res.extra["target"].flat, want, rtol=1e-14, atol=1e-16)
    assert not np.array_equal(res.params.flat, init.flat)


def test_x0_of_inverts_forward_diffusion():
    vp = make_schedule("vp")
    eps = np.array([[0.3, -1.0]])
    x0 = np.array([[2.0, 0.5]])
    x_t = forward_diffuse(vp, x0, eps, 0.6)
    assert np.allclose(x0_of(ConstantEps(eps[0]), x_t, 0.6, vp), x0, rtol=1e-12)


def test_runs_repeat_exactly():
    vp = make_schedule("fm")
    data = mixture_preset("ring8").sample(100, np.random.default_rng(2))
    cfg = CDConfig(vp, iterations=4, batch_size=8, seed=3)
    a = consistency_distill(init_params(SMALL, seed=2), ConstantEps([0.1, 0.1]), cfg, data)
    b = consistency_distill(init_params(SMALL, seed=2), ConstantEps([0.1, 0.1]), cfg, data)
    assert np.array_equal(a.params.flat, b.params.flat) and np.array_equal(a.losses, b.losses)


@pytest.mark.parametrize("kw", [{"n_grid": 1}, {"ema_decay": 1.0}, {"ema_decay": 0.0},
                                {"iterations": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CDConfig(make_schedule("vp"), **kw)


@pytest.mark.slow
def test_one_step_student_moves_toward_teacher_endpoints(toylab):
    run = toylab.distilled(0)
    vp = toylab.vp
    noise = np.random.default_rng([0, 5]).standard_normal((2048, 2))
    teacher = NetEps(run.rect, vp)
    target = sample(teacher, noise, make_grid(vp, 64), vp, record=False).final

    def rms_one_step(model):
        one = sample(model, noise, make_grid(vp, 1), vp, record=False).final
        return np.sqrt(np.mean(np.sum((one - target) ** 2, axis=1)))

    assert rms_one_step(NetEps(run.cd_rect, vp)) < rms_one_step(teacher)
