"""Packed scene programs: the metric/boundary representation both
integrator kernels (compiled and pure-Python) interpret.

A program describes a block-diagonal metric built from closed-form
families, an optional constant conformal factor, a chart box, and a
boundary function assembled from closed-form primitives combined by a
smooth max.  Scenes outside these families (expression metrics, grid
conformal factors) carry no program and use the generic Python path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .util import expstep, smoothstep_inf, smooth_max, smooth_max_grad

# metric block families
FAM_FLAT = 0
FAM_SPHERE2 = 1          # unit 2-sphere chart, coordinates (theta, phi)

# boundary primitives
PRIM_BALL = 0            # params [R, c_1..c_d]
PRIM_SLAB = 1            # params [center, halfwidth]
PRIM_RADIAL2D = 2        # params [m, R0, cx, cy, a_1, b_1, .., a_m, b_m]
PRIM_SPHERECAP = 3       # params [ax, ay, az, r_cap, orient]
PRIM_TRAPPED = 4         # params [eps]; coords (x1, theta, phi)

# moving-cap boundary shape constants (PRIM_TRAPPED)
TRAP_END_WIDTH = 0.5     # ramp width of the closing end caps
TRAP_END_DEPTH = 2.2     # cap depth; > 2 so each end pinches shut
SMAX_P = 8.0
SMAX_SHIFT = 0.1


@dataclass
class SceneProgram:
    n: int
    block_meta: np.ndarray          # (nblocks, 3) int64: family, dim, offset
    prim_meta: np.ndarray           # (nprims, 4) int64: kind, offset, ncoords, p0
    params: np.ndarray              # float64 primitive parameters
    chart_lo: np.ndarray
    chart_hi: np.ndarray
    conf: float = 1.0
    smax_p: float = SMAX_P
    smax_shift: float = SMAX_SHIFT

    def finite_box(self, big=1e9):
        lo = np.where(np.isfinite(self.chart_lo), self.chart_lo, -big)
        hi = np.where(np.isfinite(self.chart_hi), self.chart_hi, big)
        return lo, hi


def make_program(blocks, prims, chart_lo, chart_hi, conf=1.0,
                 smax_shift=SMAX_SHIFT):
    """Assemble a SceneProgram.

    blocks: list of (family, dim); prims: list of (kind, coord_offset,
    ncoords, param_list).
    """
    bm = []
    off = 0
    for fam, dim in blocks:
        bm.append((fam, dim, off))
        off += dim
    n = off
    pm, params = [], []
    for kind, c0, nc, plist in prims:
        pm.append((kind, c0, nc, len(params)))
        params.extend(float(v) for v in plist)
    return SceneProgram(
        n=n,
        block_meta=np.asarray(bm, dtype=np.int64).reshape(-1, 3),
        prim_meta=np.asarray(pm, dtype=np.int64).reshape(-1, 4),
        params=np.asarray(params, dtype=np.float64),
        chart_lo=np.asarray(chart_lo, dtype=float),
        chart_hi=np.asarray(chart_hi, dtype=float),
        conf=float(conf),
        smax_shift=float(smax_shift),
    )


# ---------------------------------------------------------------------------
# moving-cap profile for PRIM_TRAPPED scenes
#
# The boundary at slice x1 excludes a spherical cap of height eps around a
# unit vector f(x1) that starts at e3, swings through e1 at x1 = 1/2 and e2
# at x1 = 3/4, and returns to e3.  Outside [0, 1] the slices shrink and
# pinch shut, making the region compact with smooth boundary.

def trapped_axis(t, eps):
    """Cap axis f(t) on the unit sphere, with velocity via the angles."""
    t = np.asarray(t, dtype=float)
    up = smoothstep_inf((t - eps) / (0.5 - eps))
    down = smoothstep_inf(((1.0 - eps) - t) / ((1.0 - eps) - 0.75))
    pol = 0.5 * np.pi * up * down
    azi = 0.5 * np.pi * smoothstep_inf((t - 0.5) / 0.25)
    sa, ca = np.sin(pol), np.cos(pol)
    sb, cb = np.sin(azi), np.cos(azi)
    return np.stack([sa * cb, sa * sb, ca], axis=-1)


def trapped_axis_d(t, eps, h=1e-6):
    return (8.0 * (trapped_axis(t + h, eps) - trapped_axis(t - h, eps))
            - (trapped_axis(t + 2 * h, eps) - trapped_axis(t - 2 * h, eps))) / (12.0 * h)


def trapped_endcap(t):
    """End-cap depth c(t): 0 on [0, 1], ramps to TRAP_END_DEPTH outside."""
    t = np.asarray(t, dtype=float)
    w = TRAP_END_WIDTH
    return TRAP_END_DEPTH * (smoothstep_inf(-t / w) + smoothstep_inf((t - 1.0) / w))


def trapped_endcap_d(t, h=1e-6):
    return (8.0 * (trapped_endcap(t + h) - trapped_endcap(t - h))
            - (trapped_endcap(t + 2 * h) - trapped_endcap(t - 2 * h))) / (12.0 * h)


def trapped_t_extent(eps):
    """x1 interval on which slices are nonempty (cap depth < 2 - eps)."""
    from scipy.optimize import brentq
    w = TRAP_END_WIDTH

    def lo_eq(t):
        return trapped_endcap(t) - (2.0 - eps)

    t_lo = brentq(lo_eq, -w, 0.0 - 1e-12)
    t_hi = 1.0 - t_lo
    return t_lo, t_hi


def sphere_point(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def sphere_point_dtheta(theta, phi):
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), -np.sin(theta)], axis=-1)


def sphere_point_dphi(theta, phi):
    st = np.sin(theta)
    return np.stack([-st * np.sin(phi), st * np.cos(phi), np.zeros_like(st)], axis=-1)


# ---------------------------------------------------------------------------
# boundary evaluation (vectorized; X shape (..., n))

def _prim_rho(prog, kind, c0, nc, p0, X):
    p = prog.params
    if kind == PRIM_BALL:
        R = p[p0]
        c = p[p0 + 1:p0 + 1 + nc]
        return np.linalg.norm(X[..., c0:c0 + nc] - c, axis=-1) - R
    if kind == PRIM_SLAB:
        return np.abs(X[..., c0] - p[p0]) - p[p0 + 1]
    if kind == PRIM_RADIAL2D:
        m = int(p[p0])
        R0, cx, cy = p[p0 + 1], p[p0 + 2], p[p0 + 3]
        dx = X[..., c0] - cx
        dy = X[..., c0 + 1] - cy
        r = np.hypot(dx, dy)
        ang = np.arctan2(dy, dx)
        Rb = np.full_like(r, R0)
        for k in range(1, m + 1):
            Rb = Rb + R0 * (p[p0 + 2 + 2 * k] * np.cos(k * ang)
                            + p[p0 + 3 + 2 * k] * np.sin(k * ang))
        return r - Rb
    if kind == PRIM_SPHERECAP:
        a = p[p0:p0 + 3]
        rcap, orient = p[p0 + 3], p[p0 + 4]
        y = sphere_point(X[..., c0], X[..., c0 + 1])
        d = np.arccos(np.clip(y @ a, -1.0, 1.0))
        return orient * (d - rcap)
    if kind == PRIM_TRAPPED:
        eps = p[p0]
        t = X[..., c0]
        y = sphere_point(X[..., c0 + 1], X[..., c0 + 2])
        f = trapped_axis(t, eps)
        return (y * f).sum(axis=-1) - (1.0 - eps) + trapped_endcap(t)
    raise ValueError(f"unknown boundary primitive kind {kind}")


def _prim_grad(prog, kind, c0, nc, p0, X):
    p = prog.params
    G = np.zeros(X.shape, dtype=float)
    if kind == PRIM_BALL:
        c = p[p0 + 1:p0 + 1 + nc]
        d = X[..., c0:c0 + nc] - c
        r = np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)
        G[..., c0:c0 + nc] = d / r
        return G
    if kind == PRIM_SLAB:
        G[..., c0] = np.sign(X[..., c0] - p[p0])
        return G
    if kind == PRIM_RADIAL2D:
        m = int(p[p0])
        R0, cx, cy = p[p0 + 1], p[p0 + 2], p[p0 + 3]
        dx = X[..., c0] - cx
        dy = X[..., c0 + 1] - cy
        r = np.maximum(np.hypot(dx, dy), 1e-300)
        ang = np.arctan2(dy, dx)
        dR = np.zeros_like(r)
        for k in range(1, m + 1):
            dR = dR + R0 * k * (-p[p0 + 2 + 2 * k] * np.sin(k * ang)
                                + p[p0 + 3 + 2 * k] * np.cos(k * ang))
        # drho = d(r) - R'(ang) d(ang); d(ang) = (-dy, dx)/r^2
        G[..., c0] = dx / r + dR * dy / (r * r)
        G[..., c0 + 1] = dy / r - dR * dx / (r * r)
        return G
    if kind == PRIM_SPHERECAP:
        a = p[p0:p0 + 3]
        orient = p[p0 + 4]
        th, ph = X[..., c0], X[..., c0 + 1]
        y = sphere_point(th, ph)
        u = np.clip(y @ a, -1.0, 1.0)
        denom = np.sqrt(np.maximum(1.0 - u * u, 1e-24))
        G[..., c0] = -orient * (sphere_point_dtheta(th, ph) @ a) / denom
        G[..., c0 + 1] = -orient * (sphere_point_dphi(th, ph) @ a) / denom
        return G
    if kind == PRIM_TRAPPED:
        eps = p[p0]
        t, th, ph = X[..., c0], X[..., c0 + 1], X[..., c0 + 2]
        y = sphere_point(th, ph)
        f = trapped_axis(t, eps)
        G[..., c0] = (y * trapped_axis_d(t, eps)).sum(axis=-1) + trapped_endcap_d(t)
        G[..., c0 + 1] = (sphere_point_dtheta(th, ph) * f).sum(axis=-1)
        G[..., c0 + 2] = (sphere_point_dphi(th, ph) * f).sum(axis=-1)
        return G
    raise ValueError(f"unknown boundary primitive kind {kind}")


def rho(prog, X):
    """Boundary function on a batch of chart points; negative inside."""
    X = np.asarray(X, dtype=float)
    vals = [
        _prim_rho(prog, *meta, X) for meta in prog.prim_meta
    ]
    if len(vals) == 1:
        return vals[0]
    return smooth_max(np.stack(vals), p=prog.smax_p, shift=prog.smax_shift)


def grad_rho(prog, X):
    X = np.asarray(X, dtype=float)
    vals = [_prim_rho(prog, *meta, X) for meta in prog.prim_meta]
    grads = [_prim_grad(prog, *meta, X) for meta in prog.prim_meta]
    if len(vals) == 1:
        return grads[0]
    return smooth_max_grad(np.stack(vals), np.stack(grads),
                           p=prog.smax_p, shift=prog.smax_shift)


# ---------------------------------------------------------------------------
# metric evaluation

def metric(prog, X):
    """Full metric matrices g(x), shape (..., n, n)."""
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[:-1] + (prog.n, prog.n), dtype=float)
    for fam, dim, off in prog.block_meta:
        if fam == FAM_FLAT:
            for i in range(dim):
                out[..., off + i, off + i] = 1.0
        elif fam == FAM_SPHERE2:
            st = np.sin(X[..., off])
            out[..., off, off] = 1.0
            out[..., off + 1, off + 1] = st * st
        else:
            raise ValueError(f"unknown metric family {fam}")
    return prog.conf * out


def metric_diag(prog, X):
    """Diagonal of g (all program metrics are diagonal)."""
    X = np.asarray(X, dtype=float)
    out = np.ones(X.shape, dtype=float)
    for fam, dim, off in prog.block_meta:
        if fam == FAM_SPHERE2:
            st = np.sin(X[..., off])
            out[..., off + 1] = st * st
    return prog.conf * out


def dmetric(prog, X):
    """Coordinate derivatives of g: shape (..., n, n, n), [k, i, j] = d_k g_ij."""
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[:-1] + (prog.n, prog.n, prog.n), dtype=float)
    for fam, dim, off in prog.block_meta:
        if fam == FAM_SPHERE2:
            th = X[..., off]
            out[..., off, off + 1, off + 1] = prog.conf * 2.0 * np.sin(th) * np.cos(th)
    return out


def energy(prog, X, XI):
    """|xi|^2_g on a batch of phase points."""
    gd = metric_diag(prog, X)
    return (np.asarray(XI, dtype=float) ** 2 / gd).sum(axis=-1)


def cosqrt_diag(prog, X):
    """Diagonal of g^(1/2); maps round-sphere directions to unit covectors."""
    return np.sqrt(metric_diag(prog, X))


def cogeodesic_rhs(prog, x, xi):
    """RHS of the cogeodesic system for H = |xi|^2_g / 2 at one phase point."""
    n = prog.n
    dx = np.empty(n)
    dxi = np.zeros(n)
    c = prog.conf
    for fam, dim, off in prog.block_meta:
        if fam == FAM_FLAT:
            dx[off:off + dim] = xi[off:off + dim] / c
        else:  # FAM_SPHERE2
            st = np.sin(x[off])
            ct = np.cos(x[off])
            s2 = max(st * st, 1e-300)
            vphi = xi[off + 1] / (c * s2)
            dx[off] = xi[off] / c
            dx[off + 1] = vphi
            dxi[off] = c * st * ct * vphi * vphi
    return dx, dxi


def christoffel(prog, x):
    """Closed-form Christoffel symbols Gamma^k_ij at one chart point."""
    n = prog.n
    out = np.zeros((n, n, n))
    for fam, dim, off in prog.block_meta:
        if fam == FAM_SPHERE2:
            th = float(x[off])
            st, ct = np.sin(th), np.cos(th)
            out[off, off + 1, off + 1] = -st * ct
            cot = ct / st if abs(st) > 1e-300 else 0.0
            out[off + 1, off, off + 1] = cot
            out[off + 1, off + 1, off] = cot
    # constant conformal factors leave Christoffel symbols unchanged
    return out
