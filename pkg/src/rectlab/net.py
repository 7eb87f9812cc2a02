"""A small MLP epsilon-predictor with hand-written reverse mode and Adam.

Input is the state concatenated with Fourier features of the (normalized)
time. Parameters live in one flat float64 vector; ``layer_views`` slices it
into per-layer weight and bias views so the optimizer works on one array.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .oracle import EpsModel
from .schedule import Prediction, _col, canonical_prediction, convert_prediction

CHECKPOINT_MAGIC = b"RDNET1\n"


class NumericalError(FloatingPointError):
    """Non-finite parameters, losses or predictions."""


class FormatError(ValueError):
    """Malformed checkpoint or pair file."""


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 2
    hidden_width: int = 128
    hidden_layers: int = 3
    time_embed_dim: int = 16
    activation: str = "silu"
    cond_dim: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_width", "hidden_layers", "time_embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation not in ("silu", "relu"):
            raise ValueError("activation must be 'silu' or 'relu'")
        if self.cond_dim < 0:
            raise ValueError("cond_dim must be >= 0")

    def layer_shapes(self):
        dims = [self.input_dim + self.cond_dim + 2 * self.time_embed_dim]
        dims += [self.hidden_width] * self.hidden_layers + [self.input_dim]
        return [(a, b) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def n_params(self):
        return sum(a * b + b for a, b in self.layer_shapes())

    def frequencies(self):
        return np.pi * np.geomspace(0.5, 64.0, self.time_embed_dim)


@dataclass
class Params:
    flat: np.ndarray
    config: NetConfig
    step: int = 0

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.config.n_params,):
            raise ValueError(
                f"parameter vector has {self.flat.size} entries, config needs {self.config.n_params}"
            )

    def copy(self):
        return Params(self.flat.copy(), self.config, self.step)


def layer_views(flat, config):
    out = []
    off = 0
    for a, b in config.layer_shapes():
        W = flat[off : off + a * b].reshape(a, b)
        off += a * b
        out.append((W, flat[off : off + b]))
        off += b
    return out


def init_params(config, seed=0, zero_head=False):
    """He-style uniform init for hidden layers, small uniform head, zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(config.n_params)
    views = layer_views(flat, config)
    for i, (W, _) in enumerate(views):
        fan_in = W.shape[0]
        last = i == len(views) - 1
        if last and zero_head:
            continue
        bound = np.sqrt((1.0 if last else 6.0) / fan_in)
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return Params(flat, config)


def with_condition_inputs(params, cond_dim):
    """Copy of ``params`` whose network also reads ``cond_dim`` extra inputs.

    The new first-layer rows are zero, so outputs are unchanged until training
    moves them.
    """
    old = params.config
    if old.cond_dim == cond_dim:
        return params.copy()
    if old.cond_dim != 0:
        raise ValueError("can only add conditioning inputs to an unconditioned network")
    cfg = NetConfig(old.input_dim, old.hidden_width, old.hidden_layers, old.time_embed_dim,
                    old.activation, cond_dim)
    new = Params(np.zeros(cfg.n_params), cfg, params.step)
    src = layer_views(params.flat, old)
    dst = layer_views(new.flat, cfg)
    d = old.input_dim
    dst[0][0][:d] = src[0][0][:d]
    dst[0][0][d + cond_dim :] = src[0][0][d:]
    dst[0][1][...] = src[0][1]
    for (W, b), (W2, b2) in zip(src[1:], dst[1:]):
        W2[...] = W
        b2[...] = b
    return new


def embed_time(tau, config):
    f = config.frequencies()
    arg = np.asarray(tau, dtype=np.float64)[:, None] * f[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _act(h, config):
    if config.activation == "silu":
        return _kernels.silu_fwd(h)
    return np.maximum(h, 0.0), None


def _act_bwd(h, aux, da, config):
    if config.activation == "silu":
        return _kernels.silu_bwd(h, aux, da)
    return da * (h > 0)


def _prepare(x, tau):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (x.shape[0],))
    return x, tau


def forward(params, config, x, tau, return_cache=False):
    """Network output at inputs ``x`` and network times ``tau``.

    ``x`` is ``(n, input_dim + cond_dim)``: the state followed by any
    conditioning features.
    """
    x, tau = _prepare(x, tau)
    h = np.concatenate([x, embed_time(tau, config)], axis=1)
    views = layer_views(params.flat, config)
    cache = [h]
    for W, b in views[:-1]:
        pre = h @ W + b
        h, aux = _act(pre, config)
        cache.append((pre, aux, h))
    W, b = views[-1]
    out = h @ W + b
    if return_cache:
        return out, cache
    return out


def backward(params, config, cache, dout):
    """Gradient of ``sum(dout * out)`` w.r.t. the flat parameter vector."""
    grad = np.zeros_like(params.flat)
    gviews = layer_views(grad, config)
    views = layer_views(params.flat, config)
    hidden = cache[1:]
    n_hidden = len(hidden)
    h_prev = hidden[-1][2] if n_hidden else cache[0]
    gW, gb = gviews[-1]
    gW[...] = h_prev.T @ dout
    gb[...] = dout.sum(axis=0)
    delta = dout @ views[-1][0].T
    for i in range(n_hidden - 1, -1, -1):
        pre, aux, _ = hidden[i]
        dpre = _act_bwd(pre, aux, delta, config)
        inp = hidden[i - 1][2] if i > 0 else cache[0]
        gW, gb = gviews[i]
        gW[...] = inp.T @ dpre
        gb[...] = dpre.sum(axis=0)
        if i > 0:
            delta = dpre @ views[i][0].T
    return grad


def loss_and_grad(params, config, x, tau, target, weights=None):
    """Mean over the batch of ``w_i * ||out_i - target_i||^2`` and its gradient."""
    x, tau = _prepare(x, tau)
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    out, cache = forward(params, config, x, tau, return_cache=True)
    resid = out - target
    per = np.sum(resid * resid, axis=1)
    if weights is not None:
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (n,))
        per = per * w
        dout = (2.0 / n) * w[:, None] * resid
    else:
        dout = (2.0 / n) * resid
    loss = float(np.mean(per))
    return loss, backward(params, config, cache, dout)


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8):
        n = params.flat.size
        return cls(np.zeros(n), np.zeros(n), 0, lr, tuple(betas), eps)


def opt_step(params, state, grad):
    """Adam update. Returns new Params; ``state`` is advanced in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if state.m.shape != params.flat.shape:
        raise ValueError("optimizer state does not match parameters")
    state.step += 1
    new = params.flat.copy()
    _kernels.adam(new, grad, state.m, state.v, state.lr, state.betas[0], state.betas[1],
                  state.eps, float(state.step))
    return Params(new, params.config, params.step + 1)


# ---------------------------------------------------------------------------
# Wrapping the network as an epsilon model
# ---------------------------------------------------------------------------


@dataclass
class NetEps(EpsModel):
    """Trained network exposed as ``model(x, t) -> eps``.

    The raw network output is read as a prediction of ``prediction_kind``.
    With ``precondition`` the state is fed scaled by ``1/sqrt(a^2 + s^2)`` and,
    for epsilon-prediction, the prediction is
    ``s x / (a^2 + s^2) + a / sqrt(a^2 + s^2) * F(x, t)``: the first term is
    the exact predictor for unit-Gaussian data and the output scale shrinks
    where ``a`` is small, so errors in ``F`` are not blown up by ``1/a``
    when converting to ``x0``.
    """

    params: Params
    schedule: object
    prediction_kind: str = "eps"
    precondition: bool = True
    plan: object = None
    config: NetConfig = field(init=False)

    def __post_init__(self):
        self.prediction_kind = canonical_prediction(self.prediction_kind)
        self.config = self.params.config
        want = 0 if self.plan is None else self.plan.M
        if self.config.cond_dim != want:
            raise ValueError(f"network expects cond_dim={self.config.cond_dim}, phase plan gives {want}")

    def _with_cond(self, x_in, t):
        if self.plan is None:
            return x_in
        onehot = np.zeros((x_in.shape[0], self.plan.M))
        onehot[np.arange(x_in.shape[0]), self.plan.segment_of(t) - 1] = 1.0
        return np.concatenate([x_in, onehot], axis=1)

    def inputs(self, x, t):
        """``(net_input, tau, skip, c_out)`` with prediction ``skip + c_out * net``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        tau = self.schedule.net_time(t)
        ones = np.ones(x.shape[0])
        if not self.precondition:
            return self._with_cond(x, t), tau, np.zeros_like(x), ones
        a, s = self.schedule.alpha_sigma(t)
        norm = np.sqrt(a * a + s * s)
        x_in = self._with_cond(_col(1.0 / norm, x) * x, t)
        if self.prediction_kind != "eps":
            return x_in, tau, np.zeros_like(x), ones
        skip = _col(s / (norm * norm), x) * x
        return x_in, tau, skip, a / norm

    def raw_prediction(self, x, t):
        x_in, tau, skip, c_out = self.inputs(x, t)
        return skip + _col(c_out, skip) * forward(self.params, self.config, x_in, tau)

    def __call__(self, x, t):
        single = np.ndim(x) == 1
        xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
        tb = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
        pred = self.raw_prediction(xb, tb)
        if self.prediction_kind != "eps":
            pred = convert_prediction(Prediction(self.prediction_kind, pred), "eps", xb, tb,
                                      self.schedule).value
        if not np.all(np.isfinite(pred)):
            raise NumericalError("network produced non-finite predictions")
        return pred[0] if single else pred

    def with_params(self, params):
        return NetEps(params, self.schedule, self.prediction_kind, self.precondition, self.plan)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params, meta=None):
    """Text header of ``key=value`` lines, blank line, little-endian float64 payload."""
    cfg = params.config
    header = {
        "input_dim": cfg.input_dim,
        "hidden_width": cfg.hidden_width,
        "hidden_layers": cfg.hidden_layers,
        "time_embed_dim": cfg.time_embed_dim,
        "activation": cfg.activation,
        "cond_dim": cfg.cond_dim,
        "param_count": cfg.n_params,
        "step": params.step,
    }
    for k, v in (meta or {}).items():
        if k in header:
            raise ValueError(f"meta key {k!r} collides with config")
        header[k] = v
    lines = "".join(f"{k}={v}\n" for k, v in header.items())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(lines.encode("utf-8"))
        f.write(b"\n")
        f.write(params.flat.astype("<f8").tobytes())


def _read_header(data, magic):
    if not data.startswith(magic):
        raise FormatError(f"bad magic at offset 0: expected {magic!r}")
    end = data.find(b"\n\n", len(magic) - 1)
    if end < 0:
        raise FormatError("header not terminated by a blank line")
    header = {}
    for line in data[len(magic) : end].decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}")
        k, v = line.split("=", 1)
        header[k] = v
    return header, end + 2


def load_checkpoint(path):
    """Returns ``(params, meta)``; meta holds the non-config header entries."""
    with open(path, "rb") as f:
        data = f.read()
    header, off = _read_header(data, CHECKPOINT_MAGIC)
    try:
        cfg = NetConfig(
            input_dim=int(header.pop("input_dim")),
            hidden_width=int(header.pop("hidden_width")),
            hidden_layers=int(header.pop("hidden_layers")),
            time_embed_dim=int(header.pop("time_embed_dim")),
            activation=header.pop("activation"),
            cond_dim=int(header.pop("cond_dim", 0)),
        )
        count = int(header.pop("param_count"))
        step = int(header.pop("step"))
    except KeyError as e:
        raise FormatError(f"checkpoint header missing {e.args[0]!r}") from None
    if count != cfg.n_params:
        raise FormatError(f"param_count={count} but config implies {cfg.n_params}")
    payload = data[off:]
    if len(payload) != 8 * count:
        raise FormatError(
            f"payload at offset {off} holds {len(payload) // 8} floats, expected {count}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Params(flat, cfg, step), header
