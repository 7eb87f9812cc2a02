"""Probability-flow ODE sampling with the first-order exponential-integrator step.

For ``x_t = alpha_t x0 + sigma_t eps`` the exact solution from ``s`` to ``t`` is
the scaled state plus an exponentially weighted integral of epsilon over the
log-SNR. Freezing epsilon at its value at ``s`` gives the first-order step::

    x_t = (alpha_t / alpha_s) x_s + alpha_t eps(x_s, s) (sigma_t/alpha_t - sigma_s/alpha_s)

which is exact for every step size iff epsilon is constant along the path.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .schedule import _col


class UsageError(ValueError):
    """Invalid call pattern (empty grid, missing input, ...)."""


@dataclass
class TimeGrid:
    times: np.ndarray
    spacing: str = "lambda"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.shape[0] < 2:
            raise UsageError("a time grid needs at least two points")
        d = np.diff(self.times, axis=0)
        if not np.all(d < 0):
            raise UsageError("grid times must be strictly decreasing")

    @property
    def steps(self):
        return self.times.shape[0] - 1


def make_grid(schedule, steps, spacing="lambda", t_start=None, t_end=None):
    """``steps + 1`` decreasing times from ``t_start`` (default t_max) to ``t_end`` (default t_min).

    ``t_start``/``t_end`` may be ``(n,)`` arrays, giving one grid per sample
    (result shape ``(steps + 1, n)``).
    """
    if steps < 1:
        raise UsageError("steps must be >= 1")
    t0 = schedule.t_max if t_start is None else np.asarray(t_start, dtype=np.float64)
    t1 = schedule.t_min if t_end is None else np.asarray(t_end, dtype=np.float64)
    u = np.linspace(0.0, 1.0, steps + 1)
    u = u.reshape((-1,) + (1,) * np.ndim(t0 + t1 * 0))
    if spacing in ("lambda", "uniform_lambda"):
        l0, l1 = schedule.lam(t0), schedule.lam(t1)
        times = schedule.t_of_lambda(l0 + u * (l1 - l0))
        spacing = "lambda"
    elif spacing in ("t", "uniform_t"):
        times = t0 + u * (t1 - t0)
        spacing = "t"
    else:
        raise UsageError(f"unknown grid spacing {spacing!r}")
    times = np.array(times, dtype=np.float64)
    # pin endpoints exactly
    times[0] = t0
    times[-1] = t1
    return TimeGrid(times, spacing)


@dataclass
class Trajectory:
    """States along a solve. ``states``/``eps_preds`` are (K+1, d) or (K+1, n, d)."""

    times: np.ndarray
    states: np.ndarray
    eps_preds: np.ndarray

    @property
    def final(self):
        return self.states[-1]

    def __len__(self):
        return self.states.shape[0]

    def select(self, i):
        """Single trajectory ``i`` out of a batched one."""
        times = self.times if self.times.ndim == 1 else self.times[:, i]
        return Trajectory(times, self.states[:, i], self.eps_preds[:, i])


def first_order_step(model, x_s, s, t, schedule, eps=None):
    """One first-order step from time ``s`` to ``t`` (either direction).

    ``x_t = (a_t/a_s) x_s + a_t (sig_t/a_t - sig_s/a_s) eps``. A variant with
    the factor ``(a_s/sig_s - a_t/sig_t)`` also circulates; it does not
    reduce to the straight flow-matching path, so it is not used here.
    """
    x_s = np.asarray(x_s, dtype=np.float64)
    if eps is None:
        eps = model(x_s, s)
    a_s, sig_s = schedule.alpha_sigma(s)
    a_t, sig_t = schedule.alpha_sigma(t)
    ratio = _col(np.asarray(a_t) / a_s, x_s)
    coef = _col(np.asarray(a_t) * (np.asarray(sig_t) / a_t - np.asarray(sig_s) / a_s), x_s)
    return ratio * x_s + coef * eps


def solve(model, x, times, schedule):
    """Endpoint of consecutive first-order steps through ``times``."""
    times = np.asarray(times, dtype=np.float64)
    for k in range(times.shape[0] - 1):
        x = first_order_step(model, x, times[k], times[k + 1], schedule)
    return x


def initial_state(schedule, eps_init, t_start):
    """Pure-noise start: ``alpha * 0 + sigma * eps``."""
    _, s = schedule.alpha_sigma(t_start)
    eps_init = np.asarray(eps_init, dtype=np.float64)
    return _col(s, eps_init) * eps_init


def sample(model, eps_init, grid, schedule, x_init=None, record=True):
    """Run the first-order sampler along ``grid``.

    The start state is ``sigma_{t_start} * eps_init`` unless ``x_init`` is
    given. With ``record=False`` only the final state is kept (its epsilon
    prediction is not evaluated).
    """
    if grid is None or np.asarray(grid.times).shape[0] < 2:
        raise UsageError("empty time grid")
    times = grid.times
    x = initial_state(schedule, eps_init, times[0]) if x_init is None else np.array(x_init, float)
    if not record:
        x = solve(model, x, times, schedule)
        return Trajectory(times, x[None], np.full((1,) + x.shape, np.nan))
    states = [x]
    preds = []
    for k in range(times.shape[0] - 1):
        e = model(x, times[k])
        preds.append(e)
        x = first_order_step(model, x, times[k], times[k + 1], schedule, eps=e)
        states.append(x)
    preds.append(model(x, times[-1]))
    return Trajectory(times, np.stack(states), np.stack(preds))


def exact_step_quadrature(model, x_s, s, t, schedule, n_nodes=512, extrapolate=True):
    """Reference solution of the ODE from ``s`` to ``t``.

    Composes ``n_nodes`` first-order sub-steps uniform in log-SNR. With
    ``extrapolate`` the composites at ``n``, ``n/2`` and ``n/4`` sub-steps
    are combined by two rounds of Richardson extrapolation (the composite's
    error expands in powers of the step), which cancels the first- and
    second-order terms and leaves a third-order reference. For a
    constant-epsilon model every variant reduces to the single first-order
    step.
    """
    if n_nodes < 2 or (extrapolate and (n_nodes < 4 or n_nodes % 4)):
        raise UsageError("n_nodes must be >= 2, and a multiple of 4 when extrapolating")

    def composite(n):
        l0, l1 = schedule.lam(s), schedule.lam(t)
        u = np.linspace(0.0, 1.0, n + 1).reshape((-1,) + (1,) * np.ndim(l0))
        times = np.array(schedule.t_of_lambda(l0 + u * (np.asarray(l1) - l0)))
        times[0], times[-1] = s, t
        return solve(model, np.asarray(x_s, dtype=np.float64), times, schedule)

    fine = composite(n_nodes)
    if not extrapolate:
        return fine
    mid = composite(n_nodes // 2)
    coarse = composite(n_nodes // 4)
    r_fine = 2.0 * fine - mid
    r_coarse = 2.0 * mid - coarse
    return (4.0 * r_fine - r_coarse) / 3.0


def write_trajectory_csv(traj, path):
    """Columns ``t, x0..x{d-1}, eps0..eps{d-1}`` for a single (unbatched) trajectory."""
    if traj.states.ndim != 2:
        raise UsageError("write_trajectory_csv takes a single trajectory; use Trajectory.select")
    d = traj.states.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t"] + [f"x{j}" for j in range(d)] + [f"eps_pred{j}" for j in range(d)])
        for t, x, e in zip(traj.times, traj.states, traj.eps_preds):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in e])
