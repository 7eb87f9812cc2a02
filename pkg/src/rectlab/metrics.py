"""Scale-free measures of first-order behaviour and sample quality.

All trajectory metrics accept single trajectories (states ``(K+1, d)``) and
batched ones (``(K+1, n, d)``); batched inputs return one value per path.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .schedule import DomainError, _col
from .solver import make_grid, sample


def eps_constancy(model, trajectory, schedule=None):
    """``max_k ||eps_k - mean eps|| / (1 + ||mean eps||)`` along the path.

    With ``model=None`` the predictions recorded in the trajectory are used;
    otherwise the model is re-evaluated at every state (needs ``schedule``
    only for models that care, which none of ours do beyond construction).
    """
    if len(trajectory) < 2:
        raise ValueError("eps_constancy needs at least two states")
    if model is None:
        preds = trajectory.eps_preds
    else:
        preds = np.stack([model(x, t) for x, t in zip(trajectory.states, trajectory.times)])
    mean = preds.mean(axis=0)
    dev = np.linalg.norm(preds - mean, axis=-1).max(axis=0)
    return dev / (1.0 + np.linalg.norm(mean, axis=-1))


def chord_deviation(points):
    """Max distance of points from the line through the first and last, over chord length."""
    p = np.asarray(points, dtype=np.float64)
    a, b = p[0], p[-1]
    chord = b - a
    length = np.linalg.norm(chord, axis=-1)
    if np.any(length < 1e-12):
        raise DomainError("degenerate chord (endpoints coincide)")
    u = chord / length[..., None]
    rel = p - a
    along = np.sum(rel * u, axis=-1)
    perp = rel - along[..., None] * u
    return np.linalg.norm(perp, axis=-1).max(axis=0) / length


def straightness(trajectory, transformed, schedule):
    """Chord deviation of raw states, or of ``y_t = x_t / sigma_t`` when ``transformed``."""
    if len(trajectory) < 3:
        raise ValueError("straightness needs at least three states")
    pts = trajectory.states
    if transformed:
        _, s = schedule.alpha_sigma(trajectory.times)
        pts = pts / _col(s, pts)
    return chord_deviation(pts)


def consistency_gap(model, schedule, n_noise=1024, steps_hi=64, seed=0, spacing="lambda", dim=2,
                    noise=None):
    """RMS distance between 1-step and ``steps_hi``-step samples from the same noise."""
    if noise is None:
        if n_noise < 1:
            raise ValueError("n_noise must be >= 1")
        noise = np.random.default_rng(seed).standard_normal((n_noise, dim))
    one = sample(model, noise, make_grid(schedule, 1, spacing), schedule, record=False).final
    many = sample(model, noise, make_grid(schedule, steps_hi, spacing), schedule, record=False).final
    return float(np.sqrt(np.mean(np.sum((one - many) ** 2, axis=-1))))


def _quantiles(v, m):
    v = np.sort(v, axis=0)
    n = v.shape[0]
    if n == m:
        return v
    q = (np.arange(m) + 0.5) / m * n - 0.5
    return np.stack([np.interp(q, np.arange(n), v[:, j]) for j in range(v.shape[1])], axis=1)


def sliced_w2(samples_a, samples_b, n_projections=128, seed=0):
    """Sliced 2-Wasserstein distance with random unit projections."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("point sets must be (n, d) with equal d")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    dirs = np.random.default_rng(seed).standard_normal((a.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0)
    m = max(len(a), len(b))
    pa = _quantiles(a @ dirs, m)
    pb = _quantiles(b @ dirs, m)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


@dataclass
class MetricReport:
    values: dict
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"metric {k}={v} must be finite and >= 0")

    def row(self):
        out = dict(self.info)
        out.update({k: repr(float(v)) for k, v in self.values.items()})
        return out

    def table(self):
        width = max(len(k) for k in list(self.values) + list(self.info))
        lines = [f"{k:<{width}}  {v}" for k, v in self.info.items()]
        lines += [f"{k:<{width}}  {float(v):.6g}" for k, v in self.values.items()]
        return "\n".join(lines)


def write_reports_csv(reports, path):
    rows = [r.row() for r in reports]
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def evaluate_model(model, schedule, reference, n=4096, steps=(1, 2, 4, 64), n_paths=256, seed=0,
                   spacing="lambda", n_projections=128):
    """Desk-scale quality/first-order summary of one model.

    ``reference`` holds data samples for sliced-W2. Returns a dict of scalars:
    ``sw2_<k>`` per step count, plus ``eps_constancy`` and ``straightness``
    medians over ``n_paths`` 64-step paths and ``consistency_gap``.
    """
    dim = reference.shape[1]
    noise = np.random.default_rng([seed, 11]).standard_normal((n, dim))
    out = {}
    finals = {}
    for k in steps:
        x = sample(model, noise, make_grid(schedule, k, spacing), schedule, record=False).final
        finals[k] = x
        out[f"sw2_{k}"] = sliced_w2(x, reference, n_projections, seed)
    hi = max(steps)
    traj = sample(model, noise[:n_paths], make_grid(schedule, hi, spacing), schedule)
    out["eps_constancy"] = float(np.median(eps_constancy(None, traj)))
    out["straightness_raw"] = float(np.median(straightness(traj, False, schedule)))
    out["straightness_transformed"] = float(np.median(straightness(traj, True, schedule)))
    if 1 in finals:
        gap = np.sqrt(np.mean(np.sum((finals[1] - finals[hi]) ** 2, axis=-1)))
        out["consistency_gap"] = float(gap)
    return out


def segment_eps_constancy(model, schedule, plan, noise, inner_steps=16):
    """Per-path mean over segments of eps constancy inside each segment.

    Paths start from ``sigma_{t_max} * noise`` and are solved segment by
    segment with ``inner_steps`` first-order steps. A segment ``(s_{m-1}, s_m]``
    owns the predictions made at its states above ``s_{m-1}``; the one at the
    lower boundary belongs to the next segment down.
    """
    _, s = schedule.alpha_sigma(schedule.t_max)
    x = s * np.asarray(noise, dtype=np.float64)
    vals = []
    for m in range(plan.M, 0, -1):
        grid = make_grid(schedule, inner_steps, "lambda", t_start=plan.boundaries[m],
                         t_end=plan.boundaries[m - 1])
        traj = sample(model, None, grid, schedule, x_init=x)
        own = type(traj)(traj.times[:-1], traj.states[:-1], traj.eps_preds[:-1])
        vals.append(eps_constancy(None, own))
        x = traj.final
    return np.mean(vals, axis=0)
