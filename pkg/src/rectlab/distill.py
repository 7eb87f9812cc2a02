"""Consistency distillation on top of a (rectified) epsilon model.

The student is read as an x0-predictor through the usual re-parameterization.
For adjacent grid times ``t_n < t_{n+1}``, data is noised to ``t_{n+1}``,
the teacher takes one first-order step down to ``t_n``, and the student's x0
at ``(x_{t_{n+1}}, t_{n+1})`` is regressed onto an EMA copy's x0 at the
teacher-stepped point.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .net import NetEps, Params
from .schedule import _col, forward_diffuse
from .solver import first_order_step, make_grid
from .training import TrainResult, Trainer, rng_streams


@dataclass
class CDConfig:
    schedule: object
    iterations: int = 5000
    batch_size: int = 256
    n_grid: int = 64
    ema_decay: float = 0.99
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    spacing: str = "lambda"
    seed: int = 0
    precondition: bool = True

    def __post_init__(self):
        if self.n_grid < 2:
            raise ValueError("n_grid must be >= 2")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def x0_of(model, x, t, schedule):
    a, s = schedule.alpha_sigma(t)
    return (x - _col(s, x) * model(x, t)) / _col(a, x)


def consistency_distill(student_init, teacher, config, data, hook=None):
    """Returns a TrainResult with the student params; ``extra['target']`` holds the EMA params.

    ``hook(iteration, loss, trainer)`` runs after each update.
    """
    sched = config.schedule
    times = make_grid(sched, config.n_grid - 1, config.spacing).times[::-1].copy()  # increasing
    rng_t, rng_idx, rng_noise = rng_streams(config.seed)
    trainer = Trainer(student_init, sched, "eps", config.precondition, config.lr, config.betas)
    target_flat = student_init.flat.copy()
    target = NetEps(Params(target_flat, student_init.config), sched, "eps", config.precondition)
    losses = np.empty(config.iterations)
    for it in range(config.iterations):
        idx = rng_idx.integers(0, len(data), size=config.batch_size)
        x0 = data[idx]
        eps = rng_noise.standard_normal(x0.shape)
        n = rng_t.integers(0, config.n_grid - 1, size=config.batch_size)
        t_lo, t_hi = times[n], times[n + 1]
        x_hi = forward_diffuse(sched, x0, eps, t_hi)
        x_lo = first_order_step(teacher, x_hi, t_hi, t_lo, sched)
        tgt_x0 = x0_of(target, x_lo, t_lo, sched)
        # ||x0_student - tgt||^2 == (s/a)^2 ||eps_student - eps_tgt||^2 at (x_hi, t_hi)
        a, s = sched.alpha_sigma(t_hi)
        eps_tgt = (x_hi - _col(a, x_hi) * tgt_x0) / _col(s, x_hi)
        losses[it] = trainer.step(x_hi, t_hi, eps_tgt, weights=(s / a) ** 2)
        _kernels.ema(target_flat, trainer.params.flat, config.ema_decay)
        if hook is not None:
            hook(it, losses[it], trainer)
    return TrainResult(trainer.params, losses,
                       {"target": Params(target_flat.copy(), student_init.config)})
