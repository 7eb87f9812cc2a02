"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``RECTLAB_JIT=0`` to force the
numpy implementations (useful for debugging or when numba is unavailable);
the default is to use numba when it imports cleanly. ``RECTLAB_THREADS`` caps
numba's thread pool.

Both backends are always importable as :data:`numpy_impl` and
:data:`numba_impl` (the latter is ``None`` without numba) so tests and the
benchmark can compare them directly.
"""

import math
import os
from types import SimpleNamespace

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------


def _gmm_score_np(x, alpha, sigma, log_w, means, evecs, evals):
    # x (n, d); alpha, sigma (n,); evecs (K, d, d) columns are eigenvectors.
    d = x.shape[1]
    diff = x[:, None, :] - alpha[:, None, None] * means[None, :, :]  # (n, K, d)
    z = np.einsum("nkd,kde->nke", diff, evecs)
    var = (alpha**2)[:, None, None] * evals[None, :, :] + (sigma**2)[:, None, None]
    ll = (
        log_w[None, :]
        - 0.5 * np.sum(z * z / var, axis=2)
        - 0.5 * np.sum(np.log(var), axis=2)
        - 0.5 * d * LOG_2PI
    )
    top = ll.max(axis=1, keepdims=True)
    r = np.exp(ll - top)
    norm = r.sum(axis=1, keepdims=True)
    logp = (top + np.log(norm))[:, 0]
    r /= norm
    g = -np.einsum("kde,nke->nkd", evecs, z / var)
    score = np.einsum("nk,nkd->nd", r, g)
    return score, logp


def _silu_fwd_np(h):
    sig = 0.5 * (1.0 + np.tanh(0.5 * h))
    return h * sig, sig


def _silu_bwd_np(h, sig, da):
    return da * (sig + h * sig * (1.0 - sig))


def _adam_np(p, g, m, v, lr, b1, b2, eps, step):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _ema_np(target, source, decay):
    target *= decay
    target += (1.0 - decay) * source


numpy_impl = SimpleNamespace(
    name="numpy",
    gmm_score=_gmm_score_np,
    silu_fwd=_silu_fwd_np,
    silu_bwd=_silu_bwd_np,
    adam=_adam_np,
    ema=_ema_np,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------


def _build_numba():
    import numba
    from numba import njit

    threads = os.environ.get("RECTLAB_THREADS")
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))

    @njit(cache=True)
    def gmm_score(x, alpha, sigma, log_w, means, evecs, evals):
        n, d = x.shape
        K = means.shape[0]
        score = np.zeros((n, d))
        logp = np.empty(n)
        ll = np.empty(K)
        g = np.empty((K, d))
        diff = np.empty(d)
        zv = np.empty(d)
        for i in range(n):
            a = alpha[i]
            s2 = sigma[i] * sigma[i]
            for k in range(K):
                for j in range(d):
                    diff[j] = x[i, j] - a * means[k, j]
                quad = 0.0
                logdet = 0.0
                for e in range(d):
                    z = 0.0
                    for j in range(d):
                        z += diff[j] * evecs[k, j, e]
                    var = a * a * evals[k, e] + s2
                    zv[e] = z / var
                    quad += z * z / var
                    logdet += math.log(var)
                ll[k] = log_w[k] - 0.5 * quad - 0.5 * logdet - 0.5 * d * LOG_2PI
                for j in range(d):
                    acc = 0.0
                    for e in range(d):
                        acc += evecs[k, j, e] * zv[e]
                    g[k, j] = -acc
            top = ll[0]
            for k in range(1, K):
                if ll[k] > top:
                    top = ll[k]
            norm = 0.0
            for k in range(K):
                ll[k] = math.exp(ll[k] - top)
                norm += ll[k]
            logp[i] = top + math.log(norm)
            for k in range(K):
                r = ll[k] / norm
                for j in range(d):
                    score[i, j] += r * g[k, j]
        return score, logp

    @njit(cache=True)
    def adam(p, g, m, v, lr, b1, b2, eps, step):
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        for i in range(p.size):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)

    @njit(cache=True)
    def ema(target, source, decay):
        for i in range(target.size):
            target[i] = decay * target[i] + (1.0 - decay) * source[i]

    return SimpleNamespace(
        name="numba",
        gmm_score=gmm_score,
        # numba lowers exp/tanh to scalar libm calls, which lose to numpy's
        # SIMD ufuncs on activation-sized arrays; keep the numpy version.
        silu_fwd=_silu_fwd_np,
        silu_bwd=_silu_bwd_np,
        adam=adam,
        ema=ema,
    )


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_want_jit = os.environ.get("RECTLAB_JIT", "1").strip().lower() not in ("0", "false", "no", "off")
active = numba_impl if (_want_jit and numba_impl is not None) else numpy_impl

gmm_score = active.gmm_score
silu_fwd = active.silu_fwd
silu_bwd = active.silu_bwd
adam = active.adam
ema = active.ema
BACKEND = active.name
