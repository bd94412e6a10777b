# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integrator kernel; mirrors geodesic_py step for step."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, hypot, atan2, acos, exp, ceil, isfinite, pow

DEF MAXN = 8
DEF MAXCROSS = 256
DEF MAX_HALVINGS = 20
DEF BISECT_ITERS = 60

DEF FAM_FLAT = 0
DEF FAM_SPHERE2 = 1
DEF PRIM_BALL = 0
DEF PRIM_SLAB = 1
DEF PRIM_RADIAL2D = 2
DEF PRIM_SPHERECAP = 3
DEF PRIM_TRAPPED = 4

STATUS_OK = 0
STATUS_CHART_EXIT = 1
STATUS_UNDERFLOW = 2

cdef double TRAP_END_WIDTH = 0.5
cdef double TRAP_END_DEPTH = 2.2


cdef inline void rhs(cnp.int64_t[:, :] blocks, double conf,
                     double* x, double* xi, double* dx, double* dxi) nogil:
    cdef Py_ssize_t b, i, off, dim
    cdef double st, s2, vphi
    for b in range(blocks.shape[0]):
        off = blocks[b, 2]
        dim = blocks[b, 1]
        if blocks[b, 0] == FAM_FLAT:
            for i in range(off, off + dim):
                dx[i] = xi[i] / conf
                dxi[i] = 0.0
        else:
            st = sin(x[off])
            s2 = st * st
            if s2 < 1e-300:
                s2 = 1e-300
            vphi = xi[off + 1] / (conf * s2)
            dx[off] = xi[off] / conf
            dx[off + 1] = vphi
            dxi[off] = conf * st * cos(x[off]) * vphi * vphi
            dxi[off + 1] = 0.0


cdef inline double energy(cnp.int64_t[:, :] blocks, double conf,
                          double* x, double* xi) nogil:
    cdef Py_ssize_t b, i, off, dim
    cdef double e = 0.0, st, s2
    for b in range(blocks.shape[0]):
        off = blocks[b, 2]
        dim = blocks[b, 1]
        if blocks[b, 0] == FAM_FLAT:
            for i in range(off, off + dim):
                e += xi[i] * xi[i]
        else:
            st = sin(x[off])
            s2 = st * st
            if s2 < 1e-300:
                s2 = 1e-300
            e += xi[off] * xi[off] + xi[off + 1] * xi[off + 1] / s2
    return e / conf


cdef inline double expstep(double u) nogil:
    if u > 1e-12:
        return exp(-1.0 / u)
    return 0.0


cdef inline double sstep(double u) nogil:
    cdef double a = expstep(u)
    cdef double b = expstep(1.0 - u)
    return a / (a + b + 1e-300)


cdef inline void trap_axis(double t, double eps, double* f) nogil:
    cdef double up = sstep((t - eps) / (0.5 - eps))
    cdef double down = sstep(((1.0 - eps) - t) / ((1.0 - eps) - 0.75))
    cdef double pol = 0.5 * 3.14159265358979323846 * up * down
    cdef double azi = 0.5 * 3.14159265358979323846 * sstep((t - 0.5) / 0.25)
    cdef double sa = sin(pol), ca = cos(pol)
    f[0] = sa * cos(azi)
    f[1] = sa * sin(azi)
    f[2] = ca


cdef inline double trap_endcap(double t) nogil:
    return TRAP_END_DEPTH * (sstep(-t / TRAP_END_WIDTH)
                             + sstep((t - 1.0) / TRAP_END_WIDTH))


cdef double rho_scalar(cnp.int64_t[:, :] prims, double[:] params, double* x,
                       double smax_p, double smax_shift) nogil:
    cdef Py_ssize_t q, i, k, kind, c0, nc, p0, m
    cdef double val, s, d, R0, dx, dy, r, ang, Rb, st, y0, y1, y2, u, t, eps
    cdef double f[3]
    cdef double acc = 0.0
    cdef double single = 0.0
    cdef Py_ssize_t nprims = prims.shape[0]
    for q in range(nprims):
        kind = prims[q, 0]
        c0 = prims[q, 1]
        nc = prims[q, 2]
        p0 = prims[q, 3]
        if kind == PRIM_BALL:
            s = 0.0
            for i in range(nc):
                d = x[c0 + i] - params[p0 + 1 + i]
                s += d * d
            val = sqrt(s) - params[p0]
        elif kind == PRIM_SLAB:
            val = fabs(x[c0] - params[p0]) - params[p0 + 1]
        elif kind == PRIM_RADIAL2D:
            m = <Py_ssize_t> params[p0]
            R0 = params[p0 + 1]
            dx = x[c0] - params[p0 + 2]
            dy = x[c0 + 1] - params[p0 + 3]
            r = hypot(dx, dy)
            ang = atan2(dy, dx)
            Rb = R0
            for k in range(1, m + 1):
                Rb += R0 * (params[p0 + 2 + 2 * k] * cos(k * ang)
                            + params[p0 + 3 + 2 * k] * sin(k * ang))
            val = r - Rb
        elif kind == PRIM_SPHERECAP:
            st = sin(x[c0])
            y0 = st * cos(x[c0 + 1])
            y1 = st * sin(x[c0 + 1])
            y2 = cos(x[c0])
            u = y0 * params[p0] + y1 * params[p0 + 1] + y2 * params[p0 + 2]
            if u > 1.0:
                u = 1.0
            elif u < -1.0:
                u = -1.0
            val = params[p0 + 4] * (acos(u) - params[p0 + 3])
        else:  # PRIM_TRAPPED
            eps = params[p0]
            t = x[c0]
            st = sin(x[c0 + 1])
            y0 = st * cos(x[c0 + 2])
            y1 = st * sin(x[c0 + 2])
            y2 = cos(x[c0 + 1])
            trap_axis(t, eps, f)
            val = y0 * f[0] + y1 * f[1] + y2 * f[2] - (1.0 - eps) + trap_endcap(t)
        if nprims == 1:
            return val
        r = val + smax_shift
        if r > 0.0:
            acc += pow(r, smax_p)
    return pow(acc, 1.0 / smax_p) - smax_shift


cdef int advance(cnp.int64_t[:, :] blocks, double conf, double* x, double* xi,
                 Py_ssize_t n, double h, double kappa,
                 double* ox, double* oxi) nogil:
    """One adaptive base step from (x, xi) into (ox, oxi); -1 on underflow."""
    cdef double k1x[MAXN]
    cdef double k1xi[MAXN]
    cdef double k2x[MAXN]
    cdef double k2xi[MAXN]
    cdef double k3x[MAXN]
    cdef double k3xi[MAXN]
    cdef double k4x[MAXN]
    cdef double k4xi[MAXN]
    cdef double ax[MAXN]
    cdef double axi[MAXN]
    cdef double scale = 0.0
    cdef Py_ssize_t i, sub
    cdef long nsub = 1
    cdef double hs
    rhs(blocks, conf, x, xi, k1x, k1xi)
    for i in range(n):
        if fabs(k1x[i]) > scale:
            scale = fabs(k1x[i])
        if fabs(k1xi[i]) > scale:
            scale = fabs(k1xi[i])
    while h / nsub * scale > kappa:
        nsub *= 2
        if nsub > (1 << MAX_HALVINGS):
            return -1
    hs = h / nsub
    for i in range(n):
        ox[i] = x[i]
        oxi[i] = xi[i]
    for sub in range(nsub):
        rhs(blocks, conf, ox, oxi, k1x, k1xi)
        for i in range(n):
            ax[i] = ox[i] + 0.5 * hs * k1x[i]
            axi[i] = oxi[i] + 0.5 * hs * k1xi[i]
        rhs(blocks, conf, ax, axi, k2x, k2xi)
        for i in range(n):
            ax[i] = ox[i] + 0.5 * hs * k2x[i]
            axi[i] = oxi[i] + 0.5 * hs * k2xi[i]
        rhs(blocks, conf, ax, axi, k3x, k3xi)
        for i in range(n):
            ax[i] = ox[i] + hs * k3x[i]
            axi[i] = oxi[i] + hs * k3xi[i]
        rhs(blocks, conf, ax, axi, k4x, k4xi)
        for i in range(n):
            ox[i] += hs / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
            oxi[i] += hs / 6.0 * (k1xi[i] + 2.0 * k2xi[i] + 2.0 * k3xi[i] + k4xi[i])
    return <int> nsub


cdef inline bint in_box(double* x, double[:] lo, double[:] hi, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    for i in range(n):
        if not (lo[i] <= x[i] <= hi[i]):
            return False
        if not isfinite(x[i]):
            return False
    return True


def integrate(prog, x0, xi0, double t_cap, double base_step=1e-3,
              long stride=1, double kappa=0.05, bint stop_after_exit=False,
              long max_store=262144):
    """Compiled counterpart of geodesic_py.integrate (same contract)."""
    cdef cnp.int64_t[:, :] blocks = np.ascontiguousarray(prog.block_meta, dtype=np.int64)
    cdef cnp.int64_t[:, :] prims = np.ascontiguousarray(prog.prim_meta, dtype=np.int64)
    cdef double[:] params = np.ascontiguousarray(prog.params, dtype=np.float64)
    lo_np, hi_np = prog.finite_box()
    cdef double[:] lo = np.ascontiguousarray(lo_np, dtype=np.float64)
    cdef double[:] hi = np.ascontiguousarray(hi_np, dtype=np.float64)
    cdef double conf = prog.conf
    cdef double smax_p = prog.smax_p
    cdef double smax_shift = prog.smax_shift
    cdef Py_ssize_t n = prog.n
    if n > MAXN:
        raise ValueError("compiled kernel supports dimension <= %d" % MAXN)

    cdef double x[MAXN]
    cdef double xi[MAXN]
    cdef double xn[MAXN]
    cdef double xin[MAXN]
    cdef double xm[MAXN]
    cdef double xim[MAXN]
    cdef Py_ssize_t i
    x0a = np.ascontiguousarray(x0, dtype=np.float64)
    xi0a = np.ascontiguousarray(xi0, dtype=np.float64)
    for i in range(n):
        x[i] = x0a[i]
        xi[i] = xi0a[i]
    if not in_box(x, lo, hi, n):
        raise ValueError("start point outside chart")

    cdef long n_steps = <long> ceil(t_cap / base_step - 1e-12)
    if n_steps < 1:
        n_steps = 1
    cdef long alloc = n_steps // stride + 4
    if alloc > max_store + 2:
        alloc = max_store + 2
    ts_np = np.empty(alloc, dtype=np.float64)
    xs_np = np.empty((alloc, n), dtype=np.float64)
    xis_np = np.empty((alloc, n), dtype=np.float64)
    rhos_np = np.empty(alloc, dtype=np.float64)
    cdef double[:] ts = ts_np
    cdef double[:, :] xs = xs_np
    cdef double[:, :] xis = xis_np
    cdef double[:] rhos = rhos_np
    cross_t_np = np.empty(MAXCROSS, dtype=np.float64)
    cross_sign_np = np.empty(MAXCROSS, dtype=np.float64)
    cross_x_np = np.empty((MAXCROSS, n), dtype=np.float64)
    cross_xi_np = np.empty((MAXCROSS, n), dtype=np.float64)
    cdef double[:] cross_t = cross_t_np
    cdef double[:] cross_sign = cross_sign_np
    cdef double[:, :] cross_x = cross_x_np
    cdef double[:, :] cross_xi = cross_xi_np

    cdef double e0 = energy(blocks, conf, x, xi)
    cdef double drift = 0.0
    cdef double rho_prev = rho_scalar(prims, params, x, smax_p, smax_shift)
    cdef double rho_new, t, t_new, h, e_lo, e_hi, mid, rm, e, t_inside_last
    cdef bint have_inside = rho_prev <= 0.0
    cdef long ns = 0, ncross = 0, k, it
    cdef int status = 0
    cdef int adv

    ts[0] = 0.0
    rhos[0] = rho_prev
    for i in range(n):
        xs[0, i] = x[i]
        xis[0, i] = xi[i]
    ns = 1
    t = 0.0
    t_inside_last = 0.0

    with nogil:
        for k in range(1, n_steps + 1):
            t_new = k * base_step
            if t_new > t_cap:
                t_new = t_cap
            h = t_new - t
            adv = advance(blocks, conf, x, xi, n, h, kappa, xn, xin)
            if adv < 0:
                status = 2
                break
            if not in_box(xn, lo, hi, n):
                status = 1
                e_lo = 0.0
                e_hi = 1.0
                for it in range(40):
                    mid = 0.5 * (e_lo + e_hi)
                    advance(blocks, conf, x, xi, n, h * mid, kappa, xm, xim)
                    if in_box(xm, lo, hi, n):
                        e_lo = mid
                    else:
                        e_hi = mid
                advance(blocks, conf, x, xi, n, h * e_lo, kappa, xn, xin)
                t_new = t + h * e_lo

            rho_new = rho_scalar(prims, params, xn, smax_p, smax_shift)
            if (rho_prev <= 0.0) != (rho_new <= 0.0):
                e_lo = 0.0
                e_hi = 1.0
                for it in range(BISECT_ITERS):
                    mid = 0.5 * (e_lo + e_hi)
                    advance(blocks, conf, x, xi, n, (t_new - t) * mid, kappa, xm, xim)
                    rm = rho_scalar(prims, params, xm, smax_p, smax_shift)
                    if (rm <= 0.0) == (rho_prev <= 0.0):
                        e_lo = mid
                    else:
                        e_hi = mid
                    if (e_hi - e_lo) * (t_new - t) < 1e-12:
                        break
                mid = 0.5 * (e_lo + e_hi)
                advance(blocks, conf, x, xi, n, (t_new - t) * mid, kappa, xm, xim)
                if ncross < MAXCROSS:
                    cross_t[ncross] = t + (t_new - t) * mid
                    cross_sign[ncross] = 1.0 if rho_new > 0.0 else -1.0
                    for i in range(n):
                        cross_x[ncross, i] = xm[i]
                        cross_xi[ncross, i] = xim[i]
                    ncross += 1

            for i in range(n):
                x[i] = xn[i]
                xi[i] = xin[i]
            t = t_new
            rho_prev = rho_new
            if rho_prev <= 0.0:
                t_inside_last = t
                have_inside = True
            e = energy(blocks, conf, x, xi)
            if fabs(e - e0) > drift:
                drift = fabs(e - e0)
            if k % stride == 0 and ns < alloc - 1:
                ts[ns] = t
                rhos[ns] = rho_prev
                for i in range(n):
                    xs[ns, i] = x[i]
                    xis[ns, i] = xi[i]
                ns += 1
            if status != 0:
                break
            if stop_after_exit and ncross > 0 and rho_prev > 0.0:
                break

    if ts[ns - 1] != t:
        ts[ns] = t
        rhos[ns] = rho_prev
        for i in range(n):
            xs[ns, i] = x[i]
            xis[ns, i] = xi[i]
        ns += 1

    crossings = [
        {"t": cross_t_np[j], "sign": cross_sign_np[j],
         "x": cross_x_np[j].copy(), "xi": cross_xi_np[j].copy()}
        for j in range(ncross)
    ]
    return {
        "status": status,
        "t": ts_np[:ns].copy(),
        "x": xs_np[:ns].copy(),
        "xi": xis_np[:ns].copy(),
        "rho": rhos_np[:ns].copy(),
        "crossings": crossings,
        "energy_drift": drift,
        "inside_at_end": rho_prev <= 0.0,
        "t_inside_last": t_inside_last if have_inside else None,
        "t_end": t,
    }
