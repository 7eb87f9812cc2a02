"""One trainer for standard diffusion training and rectification.

The two differ only in the coupling that supplies ``(x0, eps)``: a random
coupling draws data and fresh Gaussian noise independently, a paired
coupling replays stored ``(eps, x0_hat)`` pairs produced by a teacher.
Everything downstream (time sampling, ``x_t = a x0 + s eps``, targets, loss)
is shared.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import NetConfig, NetEps, NumericalError, OptimState, init_params, loss_and_grad, opt_step
from .net import save_checkpoint
from .oracle import mixture_preset
from .schedule import canonical_prediction, forward_diffuse
from .solver import UsageError


@dataclass
class Coupling:
    """Source of ``(x0, eps)`` training pairs.

    ``kind == "random"``: ``x0`` rows are drawn from ``data`` and ``eps`` is
    fresh noise. ``kind == "paired"``: whole stored pairs are drawn (with
    replacement) and returned unmodified.
    """

    kind: str
    x0: np.ndarray
    eps: np.ndarray = None

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=np.float64))
        if self.kind not in ("random", "paired"):
            raise ValueError("coupling kind must be 'random' or 'paired'")
        if self.kind == "paired":
            self.eps = np.atleast_2d(np.asarray(self.eps, dtype=np.float64))
            if self.eps.shape != self.x0.shape:
                raise ValueError("paired coupling needs eps and x0 of the same shape")

    @classmethod
    def random(cls, data):
        return cls("random", data)

    @classmethod
    def paired(cls, dataset):
        return cls("paired", dataset.x0_hat, dataset.eps)

    def __len__(self):
        return self.x0.shape[0]

    @property
    def dim(self):
        return self.x0.shape[1]

    def draw(self, batch, rng_index, rng_noise):
        idx = rng_index.integers(0, len(self), size=batch)
        if self.kind == "paired":
            return self.x0[idx], self.eps[idx]
        return self.x0[idx], rng_noise.standard_normal((batch, self.dim))


@dataclass
class TrainConfig:
    schedule: object
    prediction_kind: str = "eps"
    iterations: int = 20000
    batch_size: int = 256
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    precondition: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: str = None

    def __post_init__(self):
        self.prediction_kind = canonical_prediction(self.prediction_kind)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    params: object
    losses: np.ndarray
    extra: dict = field(default_factory=dict)

    def model(self, schedule, prediction_kind="eps", precondition=True, plan=None):
        return NetEps(self.params, schedule, prediction_kind, precondition, plan)


def rng_streams(seed):
    """Independent generators for (times, indices, noise)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def targets_for(kind, x0, eps):
    if kind == "eps":
        return eps
    if kind == "x0":
        return x0
    return x0 - eps


class Trainer:
    """Holds parameters and Adam state; ``step`` regresses one batch."""

    def __init__(self, init, schedule, prediction_kind="eps", precondition=True, lr=2e-4,
                 betas=(0.9, 0.999), plan=None):
        self.params = init.copy()
        self.state = OptimState.for_params(self.params, lr=lr, betas=betas)
        self.wrapper = NetEps(self.params, schedule, prediction_kind, precondition, plan)

    def step(self, x_t, t, target, weights=None):
        w = self.wrapper
        x_in, tau, skip, c_out = w.inputs(x_t, t)
        # ||skip + c F - y||^2 == c^2 ||F - (y - skip)/c||^2
        net_target = (target - skip) / c_out[:, None]
        scale = c_out * c_out if weights is None else c_out * c_out * weights
        loss, grad = loss_and_grad(self.params, self.params.config, x_in, tau, net_target, scale)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite loss at optimizer step {self.state.step + 1} "
                f"(t range [{np.min(t):.4g}, {np.max(t):.4g}], |x_t| max {np.abs(x_t).max():.4g})"
            )
        self.params = opt_step(self.params, self.state, grad)
        self.wrapper = w.with_params(self.params)
        return loss


def train(config, coupling, init, hook=None):
    """Regress the network on ``x_t = a x0 + s eps`` built from ``coupling``.

    ``hook(iteration, x_t, t, target)`` is called before each update and lets
    callers observe the exact batch stream.
    """
    if coupling is None or len(coupling) == 0:
        raise UsageError("empty coupling")
    if init.config.input_dim != coupling.dim:
        raise ValueError(f"network input_dim={init.config.input_dim} but data has dim {coupling.dim}")
    sched = config.schedule
    rng_t, rng_idx, rng_noise = rng_streams(config.seed)
    trainer = Trainer(init, sched, config.prediction_kind, config.precondition, config.lr,
                      config.betas)
    losses = np.empty(config.iterations)
    for it in range(config.iterations):
        x0, eps = coupling.draw(config.batch_size, rng_idx, rng_noise)
        t = rng_t.uniform(sched.t_min, sched.t_max, size=config.batch_size)
        x_t = forward_diffuse(sched, x0, eps, t)
        target = targets_for(config.prediction_kind, x0, eps)
        if hook is not None:
            hook(it, x_t, t, target)
        losses[it] = trainer.step(x_t, t, target)
        _maybe_checkpoint(config, trainer.params, it + 1)
    return TrainResult(trainer.params, losses)


def _maybe_checkpoint(config, params, it):
    if config.checkpoint_every and config.checkpoint_dir and it % config.checkpoint_every == 0:
        d = Path(config.checkpoint_dir)
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(d / f"ckpt_{it:07d}.rdnet", params, {"schedule": config.schedule.id})


def pretrain_base(preset, schedule, config=None, net_config=None, n_data=100_000, init=None):
    """Standard (random-coupling) training on samples from a mixture preset."""
    mixture = mixture_preset(preset) if isinstance(preset, str) else preset
    config = config or TrainConfig(schedule)
    net_config = net_config or NetConfig(input_dim=mixture.dim)
    data = mixture.sample(n_data, np.random.default_rng([config.seed, 7]))
    init = init or init_params(net_config, seed=config.seed)
    return train(config, Coupling.random(data), init)


def write_loss_csv(losses, path, start=1):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses, start=start):
            w.writerow([i, repr(float(v))])


__all__ = [
    "Coupling",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "pretrain_base",
    "rng_streams",
    "targets_for",
    "train",
    "write_loss_csv",
]
