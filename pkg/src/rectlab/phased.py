"""Phased rectification: first-order behaviour enforced per time segment.

A plan splits ``[t_min, t_max]`` into ``M`` segments with boundaries
``s_0 = t_min < s_1 < ... < s_M = t_max``. Inside segment ``m`` the teacher
carries a noised data point from ``s_m`` down to ``s_{m-1}``; the noise that
makes that pair of points lie on one first-order path is

    eps = (x_low/a_low - x_high/a_high) / (s_low/a_low - s_high/a_high)

(change in ``x/alpha`` over change in noise-to-signal ratio), and any
intermediate point follows from one first-order step with that noise.
"""

from dataclasses import dataclass

import numpy as np

from .net import with_condition_inputs
from .schedule import DomainError, _col, forward_diffuse
from .solver import first_order_step, make_grid, solve
from .training import TrainConfig, TrainResult, Trainer, rng_streams


@dataclass(frozen=True)
class PhasePlan:
    boundaries: np.ndarray
    spacing: str = "lambda"

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 2 or not np.all(np.diff(b) > 0):
            raise ValueError("phase boundaries must be a strictly increasing list of >= 2 times")
        object.__setattr__(self, "boundaries", b)

    @property
    def M(self):
        """Number of segments."""
        return self.boundaries.size - 1

    def check(self, schedule):
        b = self.boundaries
        if not (np.isclose(b[0], schedule.t_min, rtol=0, atol=1e-12)
                and np.isclose(b[-1], schedule.t_max, rtol=0, atol=1e-12)):
            raise ValueError(
                f"plan endpoints {b[0]}, {b[-1]} must equal the schedule range "
                f"{schedule.t_min}, {schedule.t_max}"
            )
        return self

    def segment_of(self, t):
        """Segment index in 1..M containing t (boundaries belong to the lower segment)."""
        m = np.searchsorted(self.boundaries, np.asarray(t), side="left")
        return np.clip(m, 1, self.M)


def make_phase_plan(schedule, M, spacing="lambda"):
    if M < 1:
        raise ValueError("need at least one phase")
    if spacing == "lambda":
        lo, hi = schedule.lambda_range()
        b = schedule.t_of_lambda(np.linspace(hi, lo, M + 1))
    elif spacing == "t":
        b = np.linspace(schedule.t_min, schedule.t_max, M + 1)
    else:
        raise ValueError(f"unknown phase spacing {spacing!r}")
    b = np.array(b, dtype=np.float64)
    b[0], b[-1] = schedule.t_min, schedule.t_max
    return PhasePlan(b, spacing)


def parse_phase_plan(text, schedule):
    """``"M=4,spacing=lambda"`` or an explicit comma-separated boundary list."""
    text = text.strip()
    if "=" in text:
        kv = dict(part.split("=", 1) for part in text.split(",") if part.strip())
        kv = {k.strip(): v.strip() for k, v in kv.items()}
        unknown = set(kv) - {"M", "spacing"}
        if unknown or "M" not in kv:
            raise ValueError(f"bad phase spec {text!r}: expected 'M=<n>[,spacing=lambda|t]'")
        return make_phase_plan(schedule, int(kv["M"]), kv.get("spacing", "lambda"))
    b = [float(v) for v in text.split(",") if v.strip()]
    return PhasePlan(np.array(b), "explicit").check(schedule)


def implied_eps(x_low, s_low, x_high, s_high, schedule):
    """Noise of the first-order path through ``(s_high, x_high)`` and ``(s_low, x_low)``."""
    a_lo, sig_lo = schedule.alpha_sigma(s_low)
    a_hi, sig_hi = schedule.alpha_sigma(s_high)
    if np.any(np.asarray(s_low) >= np.asarray(s_high)):
        raise DomainError("implied_eps needs s_low < s_high")
    d_nsr = np.asarray(sig_lo) / a_lo - np.asarray(sig_hi) / a_hi
    if np.any(np.abs(d_nsr) < 1e-14):
        raise DomainError("noise-to-signal ratio barely changes across the segment")
    x_low = np.asarray(x_low, dtype=np.float64)
    x_high = np.asarray(x_high, dtype=np.float64)
    dz = x_low / _col(a_lo, x_low) - x_high / _col(a_hi, x_high)
    return dz / _col(d_nsr, dz)


@dataclass
class SegmentSample:
    x_high: np.ndarray
    x_low: np.ndarray
    implied_eps: np.ndarray
    m: np.ndarray
    s_high: np.ndarray
    s_low: np.ndarray


def make_segment_sample(teacher, x0, m, plan, schedule, inner_steps=16, rng=None, eps=None):
    """Noise data to ``s_m``, let the teacher solve down to ``s_{m-1}``, infer the noise.

    ``x0`` is ``(n, d)`` (or ``(d,)``) and ``m`` an int or ``(n,)`` array of
    segment indices in ``1..M``. Fresh noise comes from ``rng`` unless
    ``eps`` is passed.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    n = x0.shape[0]
    m = np.broadcast_to(np.asarray(m, dtype=np.int64), (n,)).copy()
    if np.any(m < 1) or np.any(m > plan.M):
        raise ValueError(f"segment index must be in 1..{plan.M}")
    if eps is None:
        eps = (rng or np.random.default_rng()).standard_normal(x0.shape)
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    s_high = plan.boundaries[m]
    s_low = plan.boundaries[m - 1]
    x_high = forward_diffuse(schedule, x0, eps, s_high)
    grid = make_grid(schedule, inner_steps, "lambda", t_start=s_high, t_end=s_low)
    x_low = solve(teacher, x_high, grid.times, schedule)
    e = implied_eps(x_low, s_low, x_high, s_high, schedule)
    out = SegmentSample(x_high, x_low, e, m, s_high, s_low)
    if single:
        out = SegmentSample(x_high[0], x_low[0], e[0], m[0], s_high[0], s_low[0])
    return out


def interpolate_within_segment(sample, t, schedule):
    """Point at time ``t`` on the segment's first-order path."""
    t = np.asarray(t, dtype=np.float64)
    tol = 1e-12 * max(1.0, schedule.t_max)
    if np.any(t < np.asarray(sample.s_low) - tol) or np.any(t > np.asarray(sample.s_high) + tol):
        raise DomainError("t lies outside the segment")
    t = np.clip(t, sample.s_low, sample.s_high)
    return first_order_step(None, sample.x_high, sample.s_high, t, schedule, eps=sample.implied_eps)


def build_segment_pool(teacher, plan, data, schedule, size, inner_steps=16, seed=0, chunk=8192):
    """Pre-solve ``size`` segment samples (data rows, segments and noise drawn from ``seed``)."""
    rng = np.random.default_rng([seed, 3])
    x0 = data[rng.integers(0, len(data), size=size)]
    m = rng.integers(1, plan.M + 1, size=size)
    eps = rng.standard_normal(x0.shape)
    parts = [
        make_segment_sample(teacher, x0[i : i + chunk], m[i : i + chunk], plan, schedule,
                            inner_steps, eps=eps[i : i + chunk])
        for i in range(0, size, chunk)
    ]
    return SegmentSample(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("x_high", "x_low", "implied_eps", "m", "s_high", "s_low")))


def train_phased(teacher, plan, data, config, init, inner_steps=16, pool_size=50_000, hook=None):
    """Fit epsilon-prediction to implied noises on segment-local first-order paths.

    Each iteration draws pool entries with replacement, a time uniform in
    each entry's segment ``(s_{m-1}, s_m]``, the interpolated state there, and
    regresses the model's epsilon onto the entry's implied noise.

    The student reads a one-hot segment index next to its time features (the
    target jumps across boundaries, which smooth time features cannot
    follow); ``init`` without those inputs is widened with zero weights. Use
    ``result.model(schedule, plan=plan)`` to sample from it.
    """
    sched = config.schedule
    plan.check(sched)
    pool = build_segment_pool(teacher, plan, data, sched, pool_size, inner_steps, config.seed)
    rng_t, rng_idx, _ = rng_streams(config.seed)
    init = with_condition_inputs(init, plan.M)
    trainer = Trainer(init, sched, "eps", config.precondition, config.lr, config.betas, plan)
    losses = np.empty(config.iterations)
    for it in range(config.iterations):
        idx = rng_idx.integers(0, pool_size, size=config.batch_size)
        batch = SegmentSample(*(getattr(pool, f)[idx] for f in
                                ("x_high", "x_low", "implied_eps", "m", "s_high", "s_low")))
        t = batch.s_high - rng_t.uniform(size=config.batch_size) * (batch.s_high - batch.s_low)
        x_t = interpolate_within_segment(batch, t, sched)
        if hook is not None:
            hook(it, x_t, t, batch.implied_eps)
        losses[it] = trainer.step(x_t, t, batch.implied_eps)
    return TrainResult(trainer.params, losses, {"pool": pool})


__all__ = [
    "PhasePlan",
    "SegmentSample",
    "TrainConfig",
    "build_segment_pool",
    "implied_eps",
    "interpolate_within_segment",
    "make_phase_plan",
    "make_segment_sample",
    "parse_phase_plan",
    "train_phased",
]
