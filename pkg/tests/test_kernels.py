import numpy as np
import pytest

from rectlab import _kernels

numba_only = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not installed")


def test_default_backend_is_one_of_the_two():
    assert _kernels.active.name in ("numpy", "numba")


def test_numpy_adam_first_step_is_signed_lr():
    """Bias-corrected Adam moves each coordinate by ~lr * sign(g) on step 1."""
    p = np.zeros(3)
    g = np.array([2.0, -0.5, 1e-3])
    _kernels.numpy_impl.adam(p, g, np.zeros(3), np.zeros(3), 0.1, 0.9, 0.999, 1e-12, 1)
    assert np.allclose(p, -0.1 * np.sign(g), rtol=1e-8)


def test_numpy_silu_derivative():
    h = np.linspace(-6, 6, 101)
    a, sig = _kernels.numpy_impl.silu_fwd(h)
    assert np.allclose(a, h / (1 + np.exp(-h)), rtol=1e-14)
    d = 1e-6
    fd = (_kernels.numpy_impl.silu_fwd(h + d)[0] - _kernels.numpy_impl.silu_fwd(h - d)[0]) / (2 * d)
    assert np.allclose(_kernels.numpy_impl.silu_bwd(h, sig, np.ones_like(h)), fd, atol=1e-9)


@numba_only
def test_adam_backends_agree():
    rng = np.random.default_rng(0)
    state = [rng.standard_normal(500) for _ in range(2)] + [np.abs(rng.standard_normal(500))]
    grads = rng.standard_normal((3, 500))
    outs = []
    for impl in (_kernels.numpy_impl, _kernels.numba_impl):
        p, m, v = (a.copy() for a in state)
        for step, g in enumerate(grads, start=1):
            impl.adam(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
        outs.append(p)
    assert np.allclose(outs[0], outs[1], rtol=1e-13, atol=1e-15)


@numba_only
def test_ema_backends_agree():
    rng = np.random.default_rng(1)
    t0, s = rng.standard_normal(300), rng.standard_normal(300)
    a, b = t0.copy(), t0.copy()
    _kernels.numpy_impl.ema(a, s, 0.99)
    _kernels.numba_impl.ema(b, s, 0.99)
    assert np.allclose(a, b, rtol=1e-15, atol=1e-16)


@numba_only
def test_silu_backends_agree():
    h = np.random.default_rng(2).standard_normal((40, 16)) * 4
    a, sa = _kernels.numpy_impl.silu_fwd(h)
    b, sb = _kernels.numba_impl.silu_fwd(h)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15) and np.allclose(sa, sb, rtol=1e-14)
    da = np.ones_like(h)
    assert np.allclose(_kernels.numpy_impl.silu_bwd(h, sa, da), _kernels.numba_impl.silu_bwd(h, sb, da),
                       rtol=1e-13, atol=1e-15)


def test_env_flag_forces_numpy_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, RECTLAB_JIT="0")
    out = subprocess.run([sys.executable, "-c", "from rectlab import _kernels; print(_kernels.active.name)"],
                         env=env, capture_output=True, text=True, check=True).stdout
    assert out.strip() == "numpy"
