"""Diffusion forms ``x_t = alpha_t * x0 + sigma_t * eps`` and prediction algebra.

Four forms are supported:

========  =========================================  ======================
kind      alpha_t                                    sigma_t
========  =========================================  ======================
fm        1 - t                                      t
vp        exp(-t^2 (bmax - bmin)/4 - t bmin/2)       sqrt(1 - alpha_t^2)
subvp     same as vp                                 1 - alpha_t^2
edm       1                                          t
========  =========================================  ======================

Time is clipped to ``[t_min, t_max]`` so that the log-SNR
``lambda_t = log(alpha_t / sigma_t)`` stays finite.
"""

from dataclasses import dataclass, replace

import numpy as np

KINDS = ("fm", "vp", "subvp", "edm")
_ALIASES = {
    "fm": "fm",
    "flow-matching": "fm",
    "flowmatching": "fm",
    "rf": "fm",
    "vp": "vp",
    "ddpm": "vp",
    "subvp": "subvp",
    "sub-vp": "subvp",
    "edm": "edm",
}
_DEFAULT_RANGE = {
    "fm": (1e-4, 1 - 1e-4),
    "vp": (1e-4, 1 - 1e-4),
    "subvp": (1e-4, 1 - 1e-4),
    "edm": (0.002, 80.0),
}

PREDICTION_KINDS = ("eps", "x0", "v")
_PRED_ALIASES = {"eps": "eps", "epsilon": "eps", "x0": "x0", "v": "v"}


class DomainError(ValueError):
    """A time, log-SNR or other argument lies outside its valid domain."""


def canonical_kind(name):
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown schedule kind {name!r}; expected one of {KINDS}") from None


def canonical_prediction(name):
    try:
        return _PRED_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown prediction kind {name!r}; expected eps, x0 or v") from None


@dataclass(frozen=True)
class Schedule:
    kind: str
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-4
    t_max: float = 1 - 1e-4

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if not self.t_min < self.t_max:
            raise ValueError(f"t_min={self.t_min} must be < t_max={self.t_max}")
        if self.kind in ("fm", "vp", "subvp") and not (0 < self.t_min and self.t_max < 1):
            raise ValueError(f"{self.kind} needs 0 < t_min < t_max < 1")
        if self.kind == "edm" and self.t_min <= 0:
            raise ValueError("edm needs t_min > 0")
        if self.kind in ("vp", "subvp") and not (0 <= self.beta_min < self.beta_max):
            raise ValueError("need 0 <= beta_min < beta_max")

    # -- identification -----------------------------------------------------

    @property
    def id(self):
        if self.kind in ("vp", "subvp"):
            return (
                f"{self.kind}(beta_min={self.beta_min!r},beta_max={self.beta_max!r},"
                f"t_min={self.t_min!r},t_max={self.t_max!r})"
            )
        return f"{self.kind}(t_min={self.t_min!r},t_max={self.t_max!r})"

    def to_config(self):
        lines = [f"kind={self.kind}"]
        if self.kind in ("vp", "subvp"):
            lines += [f"beta_min={self.beta_min!r}", f"beta_max={self.beta_max!r}"]
        lines += [f"t_min={self.t_min!r}", f"t_max={self.t_max!r}"]
        return "\n".join(lines) + "\n"

    # -- core maps ----------------------------------------------------------

    def check_time(self, t):
        t = np.asarray(t, dtype=np.float64)
        tol = 1e-12 * max(1.0, self.t_max)
        if np.any(~np.isfinite(t)) or np.any(t < self.t_min - tol) or np.any(t > self.t_max + tol):
            bad = t[(t < self.t_min - tol) | (t > self.t_max + tol) | ~np.isfinite(t)]
            raise DomainError(
                f"time {bad.ravel()[0]!r} outside [{self.t_min}, {self.t_max}] for {self.kind}"
            )
        return t

    def _log_alpha(self, t):
        return -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min

    def alpha_sigma(self, t):
        t = self.check_time(t)
        if self.kind == "fm":
            a, s = 1.0 - t, t.copy()
        elif self.kind == "edm":
            a, s = np.ones_like(t), t.copy()
        else:
            la = self._log_alpha(t)
            a = np.exp(la)
            if self.kind == "vp":
                s = np.sqrt(-np.expm1(2.0 * la))
            else:
                s = -np.expm1(2.0 * la)
        if a.ndim == 0:
            return float(a), float(s)
        return a, s

    def lam(self, t):
        t = self.check_time(t)
        if self.kind == "fm":
            out = np.log1p(-t) - np.log(t)
        elif self.kind == "edm":
            out = -np.log(t)
        else:
            la = self._log_alpha(t)
            if self.kind == "vp":
                out = la - 0.5 * np.log(-np.expm1(2.0 * la))
            else:
                out = la - np.log(-np.expm1(2.0 * la))
        return float(out) if out.ndim == 0 else out

    def lambda_range(self):
        """(lambda(t_max), lambda(t_min)), i.e. (low, high)."""
        return self.lam(self.t_max), self.lam(self.t_min)

    def t_of_lambda(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        lo_l, hi_l = self.lambda_range()
        tol = 1e-10 * max(1.0, abs(lo_l), abs(hi_l))
        if np.any(~np.isfinite(lam)) or np.any(lam < lo_l - tol) or np.any(lam > hi_l + tol):
            raise DomainError(f"log-SNR outside attainable range [{lo_l}, {hi_l}]")
        if self.kind == "fm":
            # lambda = log((1-t)/t)  =>  t = 1 / (1 + e^lambda)
            t = 0.5 * (1.0 - np.tanh(0.5 * lam))
        elif self.kind == "edm":
            t = np.exp(-lam)
        else:
            t = self._bisect(lam)
        t = np.clip(t, self.t_min, self.t_max)
        return float(t) if t.ndim == 0 else t

    def _bisect(self, lam, iters=80):
        lo = np.full(lam.shape, self.t_min)
        hi = np.full(lam.shape, self.t_max)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            above = self.lam(mid) > lam  # lambda decreasing: target lies later
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def net_time(self, t):
        """Map t into [0, 1] for the network's time embedding."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "edm":
            return np.log(t / self.t_min) / np.log(self.t_max / self.t_min)
        return t

    def with_range(self, t_min=None, t_max=None):
        return replace(
            self,
            t_min=self.t_min if t_min is None else t_min,
            t_max=self.t_max if t_max is None else t_max,
        )


def make_schedule(kind, beta_min=0.1, beta_max=20.0, t_min=None, t_max=None):
    kind = canonical_kind(kind)
    d_min, d_max = _DEFAULT_RANGE[kind]
    return Schedule(
        kind,
        beta_min=float(beta_min),
        beta_max=float(beta_max),
        t_min=d_min if t_min is None else float(t_min),
        t_max=d_max if t_max is None else float(t_max),
    )


def parse_schedule_config(text):
    """Build a schedule from ``key=value`` lines (kind, beta_min, beta_max, t_min, t_max)."""
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad schedule config line: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    unknown = set(kv) - {"kind", "beta_min", "beta_max", "t_min", "t_max"}
    if unknown:
        raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
    if "kind" not in kv:
        raise ValueError("schedule config needs a 'kind' line")
    return make_schedule(kv.pop("kind"), **{k: float(v) for k, v in kv.items()})


def parse_schedule_id(text):
    """Inverse of :attr:`Schedule.id`."""
    text = text.strip()
    if "(" not in text:
        return make_schedule(text)
    kind, rest = text.split("(", 1)
    body = rest.rstrip(")")
    lines = [f"kind={kind}"] + [p for p in body.split(",") if p]
    return parse_schedule_config("\n".join(lines))


def alpha_sigma(schedule, t):
    return schedule.alpha_sigma(t)


def lam(schedule, t):
    return schedule.lam(t)


def t_of_lambda(schedule, lam_value):
    return schedule.t_of_lambda(lam_value)


def _col(c, x):
    """Broadcast per-sample coefficients (n,) against a batch x (n, d)."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1 and np.ndim(x) >= 2:
        return c.reshape((-1,) + (1,) * (np.ndim(x) - 1))
    return c


def forward_diffuse(schedule, x0, eps, t):
    a, s = schedule.alpha_sigma(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return _col(a, x0) * x0 + _col(s, eps) * eps


@dataclass(frozen=True)
class Prediction:
    kind: str
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_prediction(self.kind))
        object.__setattr__(self, "value", np.asarray(self.value, dtype=np.float64))


def convert_prediction(pred, target_kind, x_t, t, schedule):
    """Re-express a prediction at ``(x_t, t)`` as another kind.

    Uses the direct pairwise formulas, with ``v = x0 - eps``.
    """
    target_kind = canonical_prediction(target_kind)
    val = pred.value
    if not np.all(np.isfinite(val)):
        raise DomainError("prediction contains non-finite values")
    if pred.kind == target_kind:
        return Prediction(target_kind, val.copy())
    a, s = schedule.alpha_sigma(t)
    x = np.asarray(x_t, dtype=np.float64)
    a, s = _col(a, x), _col(s, x)
    src = pred.kind
    if src == "eps":
        out = (x - s * val) / a if target_kind == "x0" else (x - (a + s) * val) / a
    elif src == "x0":
        out = (x - a * val) / s if target_kind == "eps" else ((a + s) * val - x) / s
    else:  # v
        out = (x - a * val) / (a + s) if target_kind == "eps" else (x + s * val) / (a + s)
    return Prediction(target_kind, out)
