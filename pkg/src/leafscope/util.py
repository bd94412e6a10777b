"""Shared numerics: smooth shape functions, quadrature, seeded RNG streams."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


# ---------------------------------------------------------------------------
# smooth shape functions (C-infinity, used by boundary profiles)

def expstep(u):
    """exp(-1/u) for u > 0, 0 otherwise; the classic smooth step ingredient."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 1e-12
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep_inf(u):
    """Monotone C-infinity transition: 0 for u <= 0, 1 for u >= 1."""
    a = expstep(u)
    b = expstep(1.0 - np.asarray(u, dtype=float))
    return a / (a + b + 1e-300)


def smoothstep_inf_d(u, h=1e-6):
    """Derivative of smoothstep_inf by high-order central differences."""
    u = np.asarray(u, dtype=float)
    return (8.0 * (smoothstep_inf(u + h) - smoothstep_inf(u - h))
            - (smoothstep_inf(u + 2 * h) - smoothstep_inf(u - 2 * h))) / (12.0 * h)


def bump_inf(u):
    """C-infinity bump on (-1, 1): exp(1 - 1/(1-u^2)), peak value 1 at 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0 - 1e-12
    t = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t * t))
    return out


def smoothstep_c1(u):
    """Cubic smoothstep: C1 ramp 0 -> 1 on [0, 1]."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def quintic_cutoff(u):
    """C2 even cutoff: 1 at |u|<=0, 0 at |u|>=1, quintic ramp between."""
    v = np.clip(np.abs(np.asarray(u, dtype=float)), 0.0, 1.0)
    return 1.0 - v ** 3 * (10.0 - 15.0 * v + 6.0 * v * v)


def smooth_max(values, p=8.0, shift=0.1):
    """p-norm softmax of signed values along the first axis.

    Exact near a single active constraint; rounds corners where several
    values are comparable.  relu(x + shift)^p terms keep the combination
    C^(p-1), so the result is smooth on the boundary band for shift > 0.
    """
    a = np.asarray(values, dtype=float)
    r = np.maximum(a + shift, 0.0)
    return (r ** p).sum(axis=0) ** (1.0 / p) - shift


def smooth_max_grad(values, grads, p=8.0, shift=0.1):
    """Gradient of smooth_max; `grads` has shape (m, n, ...) matching values."""
    a = np.asarray(values, dtype=float)
    g = np.asarray(grads, dtype=float)
    r = np.maximum(a + shift, 0.0)
    s = (r ** p).sum(axis=0)
    s = np.maximum(s, 1e-300)
    w = r ** (p - 1.0) * s ** (1.0 / p - 1.0)   # (m, ...)
    return (w[:, None] * g).sum(axis=0)


# ---------------------------------------------------------------------------
# quadrature

def simpson_uniform(y, h):
    """Composite Simpson on uniformly spaced samples (odd count required)."""
    y = np.asarray(y)
    n = y.shape[-1]
    if n < 3 or n % 2 == 0:
        raise ValueError("simpson_uniform needs an odd number >= 3 of samples")
    return (h / 3.0) * (y[..., 0] + y[..., -1]
                        + 4.0 * y[..., 1:-1:2].sum(axis=-1)
                        + 2.0 * y[..., 2:-1:2].sum(axis=-1))


def simpson_refine(fn, a, b, tol=1e-6, max_depth=12, min_depth=2):
    """Adaptive-by-doubling composite Simpson of a vectorized callable.

    Returns (value, est_error, n_nodes).  Doubles the node count until two
    successive levels agree within tol or max_depth is reached.
    """
    if b <= a:
        return 0.0 * np.asarray(fn(np.array([a]))).sum(), 0.0, 1
    prev = None
    for depth in range(min_depth, max_depth + 1):
        n = 2 ** depth + 1
        t = np.linspace(a, b, n)
        val = simpson_uniform(fn(t), (b - a) / (n - 1))
        if prev is not None:
            err = abs(val - prev)
            if err < tol:
                return val, err, n
        prev = val
    return prev, abs(val - prev) if prev is not val else np.inf, n


def simpson_2d(fn, a1, b1, a2, b2, tol=1e-6, max_depth=10, min_depth=3):
    """Tensor Simpson for fn(T, S) on [a1,b1] x [a2,b2], refined by doubling."""
    prev = None
    for depth in range(min_depth, max_depth + 1):
        n = 2 ** depth + 1
        t = np.linspace(a1, b1, n)
        s = np.linspace(a2, b2, n)
        T, S = np.meshgrid(t, s, indexing="ij")
        vals = fn(T, S)
        inner = simpson_uniform(vals, (b2 - a2) / (n - 1))
        val = simpson_uniform(inner, (b1 - a1) / (n - 1))
        if prev is not None and abs(val - prev) < tol:
            return val, abs(val - prev), n
        prev = val
    return prev, np.inf if prev is None else abs(val - prev), n


def simpson_weights(n, h):
    """Weight vector of composite Simpson on n uniformly spaced nodes (n odd)."""
    if n < 3 or n % 2 == 0:
        raise ValueError("n must be odd and >= 3")
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


# ---------------------------------------------------------------------------
# deterministic seeded streams (counter-based, worker-count independent)

def substream(seed, index):
    """Independent Generator for one Monte-Carlo sample index.

    Philox is counter-based: the (seed, index) key fully determines the
    stream, so fan-out across any number of workers stays reproducible.
    """
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ (np.uint64(index) << np.uint64(20))))


def thread_count():
    """Worker cap from LEAFSCOPE_THREADS (default 1 = serial)."""
    try:
        return max(1, int(os.environ.get("LEAFSCOPE_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Index-ordered map, fanned out over threads when LEAFSCOPE_THREADS > 1.

    Results are assembled by index, so the output is independent of the
    worker count.
    """
    workers = thread_count()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def format_float(x):
    """Canonical %.17g rendering used by all CSV exports."""
    return "%.17g" % x
