"""Generic-path integrator for scenes without a packed program
(expression metrics, non-constant conformal factors).

Same step semantics as the packed kernels: adaptive-substep RK4,
crossing bisection, chart guard.  The right-hand side is assembled from
the scene's metric derivative evaluators.
"""

from __future__ import annotations

import math

import numpy as np

from .geodesic_py import STATUS_CHART_EXIT, STATUS_OK, STATUS_UNDERFLOW, MAX_HALVINGS, BISECT_ITERS


def _make_rhs(scene):
    def rhs(x, xi):
        gi = scene.ginv(x)
        v = gi @ xi
        dgm = scene.dg(x)  # (k, i, j)
        dxi = 0.5 * np.einsum("kij,i,j->k", dgm, v, v)
        return v, dxi
    return rhs


def integrate(scene, x0, xi0, t_cap, base_step=1e-3, stride=1, kappa=0.05,
              stop_after_exit=False, max_store=1 << 18):
    rhs = _make_rhs(scene)
    lo = np.where(np.isfinite(scene.chart_lo), scene.chart_lo, -1e9)
    hi = np.where(np.isfinite(scene.chart_hi), scene.chart_hi, 1e9)

    def in_box(x):
        return bool(np.isfinite(x).all() and (x >= lo).all() and (x <= hi).all())

    def advance(x, xi, h):
        k1x, k1xi = rhs(x, xi)
        scale = max(np.abs(k1x).max(), np.abs(k1xi).max())
        nsub = 1
        while h / nsub * scale > kappa:
            nsub *= 2
            if nsub > (1 << MAX_HALVINGS):
                return None
        hs = h / nsub
        cx, cxi = x.copy(), xi.copy()
        for _ in range(nsub):
            k1x, k1xi = rhs(cx, cxi)
            k2x, k2xi = rhs(cx + 0.5 * hs * k1x, cxi + 0.5 * hs * k1xi)
            k3x, k3xi = rhs(cx + 0.5 * hs * k2x, cxi + 0.5 * hs * k2xi)
            k4x, k4xi = rhs(cx + hs * k3x, cxi + hs * k3xi)
            cx = cx + hs / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            cxi = cxi + hs / 6.0 * (k1xi + 2 * k2xi + 2 * k3xi + k4xi)
        return cx, cxi

    x = np.asarray(x0, dtype=float).copy()
    xi = np.asarray(xi0, dtype=float).copy()
    if not in_box(x):
        raise ValueError("start point outside chart")
    n_steps = max(1, int(math.ceil(t_cap / base_step - 1e-12)))
    e0 = float(scene.energy(x, xi))
    drift = 0.0
    rho_prev = float(scene.rho(x))
    ts, xs, xis, rhos = [0.0], [x.copy()], [xi.copy()], [rho_prev]
    crossings = []
    status = STATUS_OK
    t = 0.0
    t_inside_last = 0.0 if rho_prev <= 0.0 else None

    for k in range(1, n_steps + 1):
        t_new = min(k * base_step, t_cap)
        h = t_new - t
        res = advance(x, xi, h)
        if res is None:
            status = STATUS_UNDERFLOW
            break
        x_new, xi_new = res
        if not in_box(x_new):
            status = STATUS_CHART_EXIT
            e_lo, e_hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (e_lo + e_hi)
                xm, _ = advance(x, xi, h * mid)
                if in_box(xm):
                    e_lo = mid
                else:
                    e_hi = mid
            x_new, xi_new = advance(x, xi, h * e_lo)
            t_new = t + h * e_lo
        rho_new = float(scene.rho(x_new))
        if (rho_prev <= 0.0) != (rho_new <= 0.0):
            sign = 1.0 if rho_new > 0.0 else -1.0
            e_lo, e_hi = 0.0, 1.0
            for _ in range(BISECT_ITERS):
                mid = 0.5 * (e_lo + e_hi)
                xm, xim = advance(x, xi, (t_new - t) * mid)
                if (float(scene.rho(xm)) <= 0.0) == (rho_prev <= 0.0):
                    e_lo = mid
                else:
                    e_hi = mid
                if (e_hi - e_lo) * (t_new - t) < 1e-12:
                    break
            xm, xim = advance(x, xi, (t_new - t) * 0.5 * (e_lo + e_hi))
            crossings.append({"t": t + (t_new - t) * 0.5 * (e_lo + e_hi),
                              "sign": sign, "x": xm, "xi": xim})
        x, xi, t, rho_prev = x_new, xi_new, t_new, rho_new
        if rho_prev <= 0.0:
            t_inside_last = t
        drift = max(drift, abs(float(scene.energy(x, xi)) - e0))
        if k % stride == 0 and len(ts) < max_store:
            ts.append(t)
            xs.append(x.copy())
            xis.append(xi.copy())
            rhos.append(rho_prev)
        if status != STATUS_OK:
            break
        if stop_after_exit and crossings and rho_prev > 0.0:
            break

    if ts[-1] != t:
        ts.append(t)
        xs.append(x.copy())
        xis.append(xi.copy())
        rhos.append(rho_prev)
    return {
        "status": status,
        "t": np.asarray(ts),
        "x": np.asarray(xs),
        "xi": np.asarray(xis),
        "rho": np.asarray(rhos),
        "crossings": crossings,
        "energy_drift": drift,
        "inside_at_end": rho_prev <= 0.0,
        "t_inside_last": t_inside_last,
        "t_end": t,
    }
