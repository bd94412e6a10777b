"""Pure-Python integrator kernel for packed scene programs.

Reference implementation of the cogeodesic RK4 stepper; the compiled
Cython kernel mirrors this logic step for step.  Fixed base step with
local power-of-two substepping where the right-hand side is stiff (e.g.
near sphere-chart pole margins), boundary-crossing detection with
bisection refinement, chart-box guarding, and energy-drift tracking.
"""

from __future__ import annotations

import math

import numpy as np

from .. import program as prg

STATUS_OK = 0
STATUS_CHART_EXIT = 1
STATUS_UNDERFLOW = 2

MAX_HALVINGS = 20
BISECT_ITERS = 60


def _make_ctx(prog):
    blocks = [(int(f), int(d), int(o)) for f, d, o in prog.block_meta]
    prims = [(int(k), int(c0), int(nc), int(p0)) for k, c0, nc, p0 in prog.prim_meta]
    lo, hi = prog.finite_box()
    return blocks, prims, prog.params, lo, hi, float(prog.conf), \
        float(prog.smax_p), float(prog.smax_shift)


def _rhs(blocks, conf, x, xi, dx, dxi):
    for fam, dim, off in blocks:
        if fam == prg.FAM_FLAT:
            for i in range(off, off + dim):
                dx[i] = xi[i] / conf
                dxi[i] = 0.0
        else:  # FAM_SPHERE2
            st = math.sin(x[off])
            s2 = st * st
            if s2 < 1e-300:
                s2 = 1e-300
            vphi = xi[off + 1] / (conf * s2)
            dx[off] = xi[off] / conf
            dx[off + 1] = vphi
            dxi[off] = conf * st * math.cos(x[off]) * vphi * vphi
            dxi[off + 1] = 0.0


def _energy(blocks, conf, x, xi):
    e = 0.0
    for fam, dim, off in blocks:
        if fam == prg.FAM_FLAT:
            for i in range(off, off + dim):
                e += xi[i] * xi[i]
        else:
            st = math.sin(x[off])
            s2 = max(st * st, 1e-300)
            e += xi[off] * xi[off] + xi[off + 1] * xi[off + 1] / s2
    return e / conf


def _rho_scalar(prims, params, x, smax_p, smax_shift):
    vals = []
    for kind, c0, nc, p0 in prims:
        if kind == prg.PRIM_BALL:
            R = params[p0]
            s = 0.0
            for i in range(nc):
                d = x[c0 + i] - params[p0 + 1 + i]
                s += d * d
            vals.append(math.sqrt(s) - R)
        elif kind == prg.PRIM_SLAB:
            vals.append(abs(x[c0] - params[p0]) - params[p0 + 1])
        elif kind == prg.PRIM_RADIAL2D:
            m = int(params[p0])
            R0 = params[p0 + 1]
            dx = x[c0] - params[p0 + 2]
            dy = x[c0 + 1] - params[p0 + 3]
            r = math.hypot(dx, dy)
            ang = math.atan2(dy, dx)
            Rb = R0
            for k in range(1, m + 1):
                Rb += R0 * (params[p0 + 2 + 2 * k] * math.cos(k * ang)
                            + params[p0 + 3 + 2 * k] * math.sin(k * ang))
            vals.append(r - Rb)
        elif kind == prg.PRIM_SPHERECAP:
            st = math.sin(x[c0])
            y0 = st * math.cos(x[c0 + 1])
            y1 = st * math.sin(x[c0 + 1])
            y2 = math.cos(x[c0])
            u = y0 * params[p0] + y1 * params[p0 + 1] + y2 * params[p0 + 2]
            u = min(1.0, max(-1.0, u))
            vals.append(params[p0 + 4] * (math.acos(u) - params[p0 + 3]))
        elif kind == prg.PRIM_TRAPPED:
            eps = params[p0]
            t = x[c0]
            st = math.sin(x[c0 + 1])
            y0 = st * math.cos(x[c0 + 2])
            y1 = st * math.sin(x[c0 + 2])
            y2 = math.cos(x[c0 + 1])
            f0, f1, f2 = _trap_axis(t, eps)
            vals.append(y0 * f0 + y1 * f1 + y2 * f2 - (1.0 - eps) + _trap_endcap(t))
        else:
            raise ValueError(f"unknown primitive {kind}")
    if len(vals) == 1:
        return vals[0]
    s = 0.0
    for v in vals:
        r = v + smax_shift
        if r > 0.0:
            s += r ** smax_p
    return s ** (1.0 / smax_p) - smax_shift


def _expstep(u):
    return math.exp(-1.0 / u) if u > 1e-12 else 0.0


def _sstep(u):
    a = _expstep(u)
    b = _expstep(1.0 - u)
    return a / (a + b + 1e-300)


def _trap_axis(t, eps):
    up = _sstep((t - eps) / (0.5 - eps))
    down = _sstep(((1.0 - eps) - t) / ((1.0 - eps) - 0.75))
    pol = 0.5 * math.pi * up * down
    azi = 0.5 * math.pi * _sstep((t - 0.5) / 0.25)
    sa, ca = math.sin(pol), math.cos(pol)
    return sa * math.cos(azi), sa * math.sin(azi), ca


def _trap_endcap(t):
    w = prg.TRAP_END_WIDTH
    return prg.TRAP_END_DEPTH * (_sstep(-t / w) + _sstep((t - 1.0) / w))


def _advance(blocks, conf, x, xi, h, kappa):
    """One adaptive base step; returns (x', xi', nsub) or None on underflow."""
    n = len(x)
    k1x = [0.0] * n
    k1xi = [0.0] * n
    _rhs(blocks, conf, x, xi, k1x, k1xi)
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(k1x[i]), abs(k1xi[i]))
    nsub = 1
    while h / nsub * scale > kappa:
        nsub *= 2
        if nsub > (1 << MAX_HALVINGS):
            return None
    hs = h / nsub
    cx = list(x)
    cxi = list(xi)
    ax = [0.0] * n
    axi = [0.0] * n
    bx = [0.0] * n
    bxi = [0.0] * n
    dxs = [0.0] * n
    dxis = [0.0] * n
    for _ in range(nsub):
        _rhs(blocks, conf, cx, cxi, k1x, k1xi)
        for i in range(n):
            ax[i] = cx[i] + 0.5 * hs * k1x[i]
            axi[i] = cxi[i] + 0.5 * hs * k1xi[i]
        k2x = [0.0] * n
        k2xi = [0.0] * n
        _rhs(blocks, conf, ax, axi, k2x, k2xi)
        for i in range(n):
            bx[i] = cx[i] + 0.5 * hs * k2x[i]
            bxi[i] = cxi[i] + 0.5 * hs * k2xi[i]
        k3x = [0.0] * n
        k3xi = [0.0] * n
        _rhs(blocks, conf, bx, bxi, k3x, k3xi)
        for i in range(n):
            dxs[i] = cx[i] + hs * k3x[i]
            dxis[i] = cxi[i] + hs * k3xi[i]
        k4x = [0.0] * n
        k4xi = [0.0] * n
        _rhs(blocks, conf, dxs, dxis, k4x, k4xi)
        for i in range(n):
            cx[i] += hs / 6.0 * (k1x[i] + 2 * k2x[i] + 2 * k3x[i] + k4x[i])
            cxi[i] += hs / 6.0 * (k1xi[i] + 2 * k2xi[i] + 2 * k3xi[i] + k4xi[i])
    return cx, cxi, nsub


def _in_box(x, lo, hi):
    for i in range(len(x)):
        if not (lo[i] <= x[i] <= hi[i]):
            return False
        if not math.isfinite(x[i]):
            return False
    return True


def integrate(prog, x0, xi0, t_cap, base_step=1e-3, stride=1, kappa=0.05,
              stop_after_exit=False, max_store=1 << 18):
    """Integrate the cogeodesic flow forward over [0, t_cap].

    Returns a dict with sample arrays, boundary crossings, drift and final
    status.  Crossing times are refined by bisection re-advances from the
    pre-step state.
    """
    blocks, prims, params, lo, hi, conf, smax_p, smax_shift = _make_ctx(prog)
    n = prog.n
    x = [float(v) for v in x0]
    xi = [float(v) for v in xi0]
    if not _in_box(x, lo, hi):
        raise ValueError("start point outside chart")

    n_steps = max(1, int(math.ceil(t_cap / base_step - 1e-12)))
    e0 = _energy(blocks, conf, x, xi)
    drift = 0.0
    rho_prev = _rho_scalar(prims, params, x, smax_p, smax_shift)

    ts, xs, xis, rhos = [0.0], [list(x)], [list(xi)], [rho_prev]
    crossings = []  # (t, sign, x, xi)
    status = STATUS_OK
    t = 0.0
    t_inside_last = 0.0 if rho_prev <= 0.0 else None

    for k in range(1, n_steps + 1):
        t_new = min(k * base_step, t_cap)
        h = t_new - t
        res = _advance(blocks, conf, x, xi, h, kappa)
        if res is None:
            status = STATUS_UNDERFLOW
            break
        x_new, xi_new, _ = res

        if not _in_box(x_new, lo, hi):
            status = STATUS_CHART_EXIT
            # refine the chart-exit time so the stored endpoint is on-chart
            e_lo, e_hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (e_lo + e_hi)
                xm, xim, _ = _advance(blocks, conf, x, xi, h * mid, kappa)
                if _in_box(xm, lo, hi):
                    e_lo = mid
                else:
                    e_hi = mid
            x_new, xi_new, _ = _advance(blocks, conf, x, xi, h * e_lo, kappa)
            t_new = t + h * e_lo

        rho_new = _rho_scalar(prims, params, x_new, smax_p, smax_shift)
        if (rho_prev <= 0.0) != (rho_new <= 0.0):
            sign = 1.0 if rho_new > 0.0 else -1.0
            e_lo, e_hi = 0.0, 1.0
            for _ in range(BISECT_ITERS):
                mid = 0.5 * (e_lo + e_hi)
                xm, xim, _ = _advance(blocks, conf, x, xi, (t_new - t) * mid, kappa)
                rm = _rho_scalar(prims, params, xm, smax_p, smax_shift)
                if (rm <= 0.0) == (rho_prev <= 0.0):
                    e_lo = mid
                else:
                    e_hi = mid
                if (e_hi - e_lo) * (t_new - t) < 1e-12:
                    break
            xm, xim, _ = _advance(blocks, conf, x, xi, (t_new - t) * 0.5 * (e_lo + e_hi), kappa)
            crossings.append((t + (t_new - t) * 0.5 * (e_lo + e_hi), sign,
                              list(xm), list(xim)))

        x, xi, t, rho_prev = x_new, xi_new, t_new, rho_new
        if rho_prev <= 0.0:
            t_inside_last = t
        e = _energy(blocks, conf, x, xi)
        drift = max(drift, abs(e - e0))
        if k % stride == 0 and len(ts) < max_store:
            ts.append(t)
            xs.append(list(x))
            xis.append(list(xi))
            rhos.append(rho_prev)
        if status != STATUS_OK:
            break
        if stop_after_exit and crossings and rho_prev > 0.0:
            break

    if ts[-1] != t:
        ts.append(t)
        xs.append(list(x))
        xis.append(list(xi))
        rhos.append(rho_prev)

    return {
        "status": status,
        "t": np.asarray(ts),
        "x": np.asarray(xs),
        "xi": np.asarray(xis),
        "rho": np.asarray(rhos),
        "crossings": [
            {"t": c[0], "sign": c[1], "x": np.asarray(c[2]), "xi": np.asarray(c[3])}
            for c in crossings
        ],
        "energy_drift": drift,
        "inside_at_end": rho_prev <= 0.0,
        "t_inside_last": t_inside_last,
        "t_end": t,
    }
