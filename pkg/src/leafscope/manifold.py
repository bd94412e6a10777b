"""Chart-based Riemannian scenes: metric, boundary and curvature data.

A scene is a single global chart (a box in R^n, possibly unbounded in
periodic-like directions) carrying a metric evaluator and a signed
boundary function rho with M = {rho <= 0}.  Built-in structure tags cover
Euclidean boxes/balls, 2-sphere charts, products, constant and
expression conformal rescalings, and the moving-cap example with fully
trapped leaves.  Sphere charts exclude the poles by a fixed margin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from . import program as prg
from .util import smooth_max, smooth_max_grad

POLE_MARGIN = 1e-3
FD_STEP = 1e-5
CONVEXITY_TOL = 1e-6
BIG = 1e9

# ChartPoint: plain coordinate arrays of shape (n,) (batches: (..., n)).
ChartPoint = np.ndarray


class SceneError(ValueError):
    """Malformed scene configuration or degenerate scene data."""


@dataclass
class MetricScene:
    """Immutable Riemannian scene on a single chart.

    All evaluators are pure functions of their arguments, so a scene can
    be shared freely across workers.
    """

    dimension: int
    structure: str
    chart_lo: np.ndarray
    chart_hi: np.ndarray
    margin: float
    program: Optional[prg.SceneProgram] = None
    factors: tuple = ()
    factor_offsets: tuple = ()
    conformal_const: float = 1.0
    meta: dict = field(default_factory=dict)
    # generic-path callables (set when there is no packed program)
    _g: Optional[Callable] = None
    _dg: Optional[Callable] = None
    _rho: Optional[Callable] = None
    _grad_rho: Optional[Callable] = None

    # -- metric ------------------------------------------------------------
    def g(self, x):
        x = np.asarray(x, dtype=float)
        if self.program is not None:
            return prg.metric(self.program, x)
        return self._g(x)

    def dg(self, x):
        """d_k g_ij, shape (..., n, n, n) with the derivative index first."""
        x = np.asarray(x, dtype=float)
        if self.program is not None:
            return prg.dmetric(self.program, x)
        return self._dg(x)

    def ginv(self, x):
        return np.linalg.inv(self.g(x))

    def sqrtdet(self, x):
        return np.sqrt(np.linalg.det(self.g(x)))

    def energy(self, x, xi):
        """|xi|^2_g for batches of phase points."""
        if self.program is not None:
            return prg.energy(self.program, x, xi)
        gi = self.ginv(x)
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...ij,...i,...j->...", gi, xi, xi)

    def unit_covector(self, x, direction):
        """Rescale a covector to unit g-length at x."""
        xi = np.asarray(direction, dtype=float)
        e = np.asarray(self.energy(x, direction), dtype=float)
        return xi / np.sqrt(e)[..., None] if e.ndim else xi / np.sqrt(e)

    @property
    def transversal(self):
        """Second factor of a product-with-line scene."""
        if not self.has_flat_line_factor or len(self.factors) < 2:
            raise SceneError("scene has no transversal factor")
        return self.factors[1]

    # -- boundary ----------------------------------------------------------
    def rho(self, x):
        x = np.asarray(x, dtype=float)
        if self.program is not None:
            return prg.rho(self.program, x)
        return self._rho(x)

    def grad_rho(self, x):
        x = np.asarray(x, dtype=float)
        if self.program is not None:
            return prg.grad_rho(self.program, x)
        return self._grad_rho(x)

    def inside(self, x, tol=0.0):
        return self.rho(x) <= tol

    def in_chart(self, x):
        x = np.asarray(x, dtype=float)
        return np.logical_and(
            (x >= self.chart_lo - 1e-12).all(axis=-1),
            (x <= self.chart_hi + 1e-12).all(axis=-1),
        )

    def chart_diameter(self):
        lo = np.where(np.isfinite(self.chart_lo), self.chart_lo, -2.0)
        hi = np.where(np.isfinite(self.chart_hi), self.chart_hi, 2.0)
        return float(np.linalg.norm(hi - lo))

    def step_hint(self):
        """Base integrator step: min(1e-3, 1e-3 * chart scale)."""
        lo = np.where(np.isfinite(self.chart_lo), self.chart_lo, -2.0)
        hi = np.where(np.isfinite(self.chart_hi), self.chart_hi, 2.0)
        scale = float(np.min(hi - lo))
        return min(1e-3, 1e-3 * scale)

    def x1_extent(self):
        """x1-range of M, from the chart minus the ambient margin."""
        lo = float(self.chart_lo[0]) + self.margin
        hi = float(self.chart_hi[0]) - self.margin
        if "x1_extent" in self.meta:
            lo, hi = self.meta["x1_extent"]
        return lo, hi

    @property
    def has_flat_line_factor(self):
        """True when the scene is a product with a Euclidean first factor."""
        return self.structure in ("product", "trapped_example") and bool(self.factors)


# ---------------------------------------------------------------------------
# expression metrics (sympy-backed)

def _coord_symbols(n):
    return sp.symbols(f"x1:{n + 1}")


def _lambdify_metric(entries, n):
    syms = _coord_symbols(n)
    G = sp.Matrix([[sp.sympify(entries[i][j]) for j in range(n)] for i in range(n)])
    if not G.is_symmetric():
        raise SceneError("metric expression matrix must be symmetric")
    dG = [G.diff(s) for s in syms]
    g_fn = sp.lambdify(syms, G, modules="numpy")
    dg_fns = [sp.lambdify(syms, M, modules="numpy") for M in dG]

    def g(x):
        x = np.asarray(x, dtype=float)
        coords = [x[..., i] for i in range(n)]
        raw = np.asarray(g_fn(*coords), dtype=float)
        return np.broadcast_to(np.moveaxis(raw, (0, 1), (-2, -1)),
                               x.shape[:-1] + (n, n)).copy() \
            if raw.ndim > 2 else np.broadcast_to(raw, x.shape[:-1] + (n, n)).copy()

    def dg(x):
        x = np.asarray(x, dtype=float)
        coords = [x[..., i] for i in range(n)]
        outs = []
        for fn in dg_fns:
            raw = np.asarray(fn(*coords), dtype=float)
            if raw.ndim > 2:
                raw = np.moveaxis(raw, (0, 1), (-2, -1))
            outs.append(np.broadcast_to(raw, x.shape[:-1] + (n, n)))
        return np.stack(outs, axis=-3)

    return g, dg


def _lambdify_scalar(expr, n):
    syms = _coord_symbols(n)
    e = sp.sympify(expr)
    de = [e.diff(s) for s in syms]
    f = sp.lambdify(syms, e, modules="numpy")
    df = [sp.lambdify(syms, d, modules="numpy") for d in de]

    def val(x):
        x = np.asarray(x, dtype=float)
        coords = [x[..., i] for i in range(n)]
        return np.broadcast_to(np.asarray(f(*coords), dtype=float), x.shape[:-1]).copy()

    def grad(x):
        x = np.asarray(x, dtype=float)
        coords = [x[..., i] for i in range(n)]
        cols = [np.broadcast_to(np.asarray(d(*coords), dtype=float), x.shape[:-1])
                for d in df]
        return np.stack(cols, axis=-1)

    return val, grad


# ---------------------------------------------------------------------------
# scene construction

def _program_scene(structure, blocks, prims, chart_lo, chart_hi, margin,
                   conf=1.0, factors=(), factor_offsets=(), meta=None,
                   smax_shift=prg.SMAX_SHIFT):
    prog = prg.make_program(blocks, prims, chart_lo, chart_hi, conf=conf,
                            smax_shift=smax_shift)
    scene = MetricScene(
        dimension=prog.n, structure=structure,
        chart_lo=np.asarray(chart_lo, dtype=float),
        chart_hi=np.asarray(chart_hi, dtype=float),
        margin=margin, program=prog, factors=tuple(factors),
        factor_offsets=tuple(factor_offsets), conformal_const=conf,
        meta=meta or {},
    )
    _validate(scene)
    return scene


def _interval_scene(center=0.0, halfwidth=1.0, margin=0.3):
    lo = [center - halfwidth - margin]
    hi = [center + halfwidth + margin]
    return _program_scene(
        "euclidean", [(prg.FAM_FLAT, 1)],
        [(prg.PRIM_SLAB, 0, 1, [center, halfwidth])], lo, hi, margin,
        meta={"x1_extent": (center - halfwidth, center + halfwidth)})


def _disk_scene(radius=1.0, margin=None, dim=2, center=None):
    margin = margin if margin is not None else 0.25 * radius
    center = list(center) if center is not None else [0.0] * dim
    lo = [c - radius - margin for c in center]
    hi = [c + radius + margin for c in center]
    return _program_scene(
        "euclidean", [(prg.FAM_FLAT, dim)],
        [(prg.PRIM_BALL, 0, dim, [radius] + center)], lo, hi, margin)


def _perturbed_disk_scene(radius=1.0, amp=0.03, k=3, margin=None):
    margin = margin if margin is not None else 0.3 * radius
    ext = radius * (1 + abs(amp)) + margin
    harmonics = [0.0, 0.0] * k
    harmonics[2 * (k - 1)] = amp
    return _program_scene(
        "euclidean", [(prg.FAM_FLAT, 2)],
        [(prg.PRIM_RADIAL2D, 0, 2, [k, radius, 0.0, 0.0] + harmonics)],
        [-ext, -ext], [ext, ext], margin)


def _square_scene(half=1.0, margin=0.3, shift=prg.SMAX_SHIFT):
    ext = half + margin
    return _program_scene(
        "euclidean", [(prg.FAM_FLAT, 2)],
        [(prg.PRIM_SLAB, 0, 1, [0.0, half]),
         (prg.PRIM_SLAB, 1, 1, [0.0, half])],
        [-ext, -ext], [ext, ext], margin, smax_shift=shift)


def _sphere_cap_scene(cap_radius=1.0, center_theta=0.5 * np.pi, center_phi=0.0,
                      margin=0.25):
    axis = prg.sphere_point(np.array(center_theta), np.array(center_phi))
    lo = [POLE_MARGIN, -BIG]
    hi = [np.pi - POLE_MARGIN, BIG]
    return _program_scene(
        "sphere", [(prg.FAM_SPHERE2, 2)],
        [(prg.PRIM_SPHERECAP, 0, 2, list(axis) + [cap_radius, 1.0])],
        lo, hi, margin)


def _sphere_band_scene(cap_radius=0.12, margin=0.05):
    lo = [POLE_MARGIN, -BIG]
    hi = [np.pi - POLE_MARGIN, BIG]
    return _program_scene(
        "sphere", [(prg.FAM_SPHERE2, 2)],
        [(prg.PRIM_SPHERECAP, 0, 2, [0.0, 0.0, 1.0, cap_radius, -1.0]),
         (prg.PRIM_SPHERECAP, 0, 2, [0.0, 0.0, -1.0, cap_radius, -1.0])],
        lo, hi, margin)


def _product_scene(factor_cfgs, margin=None, shift=prg.SMAX_SHIFT, structure="product"):
    factors = [build_scene(cfg) for cfg in factor_cfgs]
    if any(f.program is None for f in factors):
        raise SceneError("product factors must be program-backed scenes")
    blocks, prims = [], []
    chart_lo, chart_hi = [], []
    offsets = []
    off = 0
    for f in factors:
        offsets.append(off)
        p = f.program
        for fam, dim, _ in p.block_meta:
            blocks.append((int(fam), int(dim)))
        for kind, c0, nc, p0 in p.prim_meta:
            plist = list(p.params[p0:_prim_param_len(p, kind, nc, p0)])
            prims.append((int(kind), off + int(c0), int(nc), plist))
        chart_lo.extend(f.chart_lo)
        chart_hi.extend(f.chart_hi)
        off += f.dimension
    margin = margin if margin is not None else min(f.margin for f in factors)
    meta = {}
    if factors and factors[0].structure == "euclidean" and factors[0].dimension == 1:
        meta["x1_extent"] = factors[0].meta.get(
            "x1_extent", (factors[0].chart_lo[0] + factors[0].margin,
                          factors[0].chart_hi[0] - factors[0].margin))
    return _program_scene(structure, blocks, prims, chart_lo, chart_hi, margin,
                          factors=factors, factor_offsets=offsets, meta=meta,
                          smax_shift=shift)


def _prim_param_len(p, kind, nc, p0):
    if kind == prg.PRIM_BALL:
        return p0 + 1 + nc
    if kind == prg.PRIM_SLAB:
        return p0 + 2
    if kind == prg.PRIM_RADIAL2D:
        return p0 + 4 + 2 * int(p.params[p0])
    if kind == prg.PRIM_SPHERECAP:
        return p0 + 5
    if kind == prg.PRIM_TRAPPED:
        return p0 + 1
    raise SceneError(f"unknown primitive {kind}")


def build_trapped_example(n=3, eps=0.05):
    """Scene on R x S^(n-1) whose slices exclude a moving cap of height eps.

    The cap axis traverses e3 -> e1 -> e2 -> e3 as x1 runs over [0, 1], and
    the region pinches shut smoothly outside.  For eps below ~0.18 every
    leaf of the natural weight carries trapped flow lines; the construction
    flags `hypothesis_ok` accordingly.  Only n = 3 (transversal S^2) is
    implemented.
    """
    if n != 3:
        raise SceneError("trapped example is implemented for n = 3 only")
    if not (0.0 < eps < 0.25):
        raise SceneError("eps must lie in (0, 0.25)")
    t_lo, t_hi = prg.trapped_t_extent(eps)
    margin = 0.25
    lo = [t_lo - margin, POLE_MARGIN, -BIG]
    hi = [t_hi + margin, np.pi - POLE_MARGIN, BIG]
    line = _interval_scene(center=0.5 * (t_lo + t_hi),
                           halfwidth=0.5 * (t_hi - t_lo), margin=margin)
    sphere = _sphere_cap_scene(cap_radius=np.pi - POLE_MARGIN)
    scene = _program_scene(
        "trapped_example",
        [(prg.FAM_FLAT, 1), (prg.FAM_SPHERE2, 2)],
        [(prg.PRIM_TRAPPED, 0, 3, [eps])],
        lo, hi, margin, factors=(line, sphere), factor_offsets=(0, 1),
        meta={"eps": eps, "x1_extent": (t_lo, t_hi),
              "hypothesis_ok": eps <= 0.1})
    return scene


def _conformal_scene(factor, base_cfg):
    base = build_scene(base_cfg)
    if isinstance(factor, (int, float)):
        c = float(factor)
        if c <= 0:
            raise SceneError("conformal factor must be positive")
        if base.program is not None:
            prog = prg.SceneProgram(
                n=base.program.n, block_meta=base.program.block_meta,
                prim_meta=base.program.prim_meta, params=base.program.params,
                chart_lo=base.program.chart_lo, chart_hi=base.program.chart_hi,
                conf=base.program.conf * c, smax_p=base.program.smax_p,
                smax_shift=base.program.smax_shift)
            scene = MetricScene(
                dimension=base.dimension, structure="conformal",
                chart_lo=base.chart_lo, chart_hi=base.chart_hi,
                margin=base.margin, program=prog, factors=(base,),
                conformal_const=base.conformal_const * c,
                meta=dict(base.meta))
            _validate(scene)
            return scene
        raise SceneError("constant conformal rescaling needs a program base")

    n = base.dimension
    if isinstance(factor, dict) and "grid" in factor:
        cval, cgrad = _grid_scalar(factor["grid"], n)
    else:
        expr = factor["expression"] if isinstance(factor, dict) else factor
        cval, cgrad = _lambdify_scalar(expr, n)

    def g(x):
        return cval(x)[..., None, None] * base.g(x)

    def dg(x):
        gc = cgrad(x)  # (..., n)
        return (gc[..., :, None, None] * base.g(x)[..., None, :, :]
                + cval(x)[..., None, None, None] * base.dg(x))

    scene = MetricScene(
        dimension=n, structure="conformal",
        chart_lo=base.chart_lo, chart_hi=base.chart_hi, margin=base.margin,
        program=None, factors=(base,), conformal_const=1.0,
        meta=dict(base.meta),
        _g=g, _dg=dg, _rho=base.rho, _grad_rho=base.grad_rho)
    _validate(scene)
    return scene


def _grid_scalar(gridcfg, n):
    from scipy.interpolate import RegularGridInterpolator
    axes = [np.asarray(a, dtype=float) for a in gridcfg["axes"]]
    values = np.asarray(gridcfg["values"], dtype=float)
    interp = RegularGridInterpolator(tuple(axes), values, method="cubic",
                                     bounds_error=False, fill_value=None)

    def val(x):
        return interp(np.asarray(x, dtype=float))

    def grad(x):
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(n):
            hp = np.zeros(n)
            hp[i] = FD_STEP
            cols.append((val(x + hp) - val(x - hp)) / (2 * FD_STEP))
        return np.stack(cols, axis=-1)

    return val, grad


def _expression_scene(cfg):
    n = int(cfg["dimension"])
    g, dg = _lambdify_metric(cfg["metric"], n)
    chart_lo = np.asarray(cfg["chart"]["lo"], dtype=float)
    chart_hi = np.asarray(cfg["chart"]["hi"], dtype=float)
    margin = float(cfg.get("margin", 0.2))
    b = cfg["boundary"]
    if b["type"] == "slab":
        center, half = float(b.get("center", 0.0)), float(b["halfwidth"])
        axis = int(b.get("axis", 0))

        def rho(x):
            return np.abs(np.asarray(x, dtype=float)[..., axis] - center) - half

        def grad_rho(x):
            x = np.asarray(x, dtype=float)
            G = np.zeros_like(x)
            G[..., axis] = np.sign(x[..., axis] - center)
            return G
    elif b["type"] == "expression":
        rho, grad_rho = _lambdify_scalar(b["rho"], n)
    else:
        raise SceneError(f"boundary type {b['type']!r} not supported "
                         "for expression metrics")
    scene = MetricScene(
        dimension=n, structure="expression",
        chart_lo=chart_lo, chart_hi=chart_hi, margin=margin,
        program=None, _g=g, _dg=dg, _rho=rho, _grad_rho=grad_rho,
        meta={"metric": cfg["metric"]})
    _validate(scene)
    return scene


BUILTIN_SCENES = {
    "unit_disk": lambda **kw: _disk_scene(radius=1.0, **kw),
    "disk": _disk_scene,
    "perturbed_disk": _perturbed_disk_scene,
    "square_rounded": _square_scene,
    "ball3": lambda **kw: _disk_scene(dim=3, **{"radius": 1.0, **kw}),
    "interval": _interval_scene,
    "sphere_cap": _sphere_cap_scene,
    "sphere_band": _sphere_band_scene,
    "slab_disk": lambda **kw: _product_scene(
        [{"builtin": "interval", "params": {"halfwidth": kw.pop("slab_halfwidth", 1.0)}},
         {"builtin": "disk", "params": {"radius": kw.pop("radius", 1.0)}}], **kw),
    "slab_square": lambda **kw: _product_scene(
        [{"builtin": "interval", "params": {"halfwidth": kw.pop("slab_halfwidth", 1.0)}},
         {"builtin": "interval_product",
          "params": {"h1": kw.pop("h1", 1.0), "h2": kw.pop("h2", 1.0)}}], **kw),
    "slab_cap": lambda **kw: _product_scene(
        [{"builtin": "interval", "params": {"halfwidth": kw.pop("slab_halfwidth", 1.0)}},
         {"builtin": "sphere_cap", "params": {"cap_radius": kw.pop("cap_radius", 1.0)}}], **kw),
    "interval_product": lambda **kw: _product_scene(
        [{"builtin": "interval", "params": {"halfwidth": kw.pop("h1", 1.0)}},
         {"builtin": "interval", "params": {"halfwidth": kw.pop("h2", 1.0)}}], **kw),
    "trapped_example": build_trapped_example,
    "funnel": lambda **kw: _expression_scene({
        "dimension": 2,
        "metric": [["1", "0"], ["0", "cosh(x1)**2"]],
        "chart": {"lo": [-1.4, -BIG], "hi": [1.4, BIG]},
        "margin": 0.3,
        "boundary": {"type": "slab", "axis": 0, "halfwidth": kw.pop("halfwidth", 1.0)},
    }),
}


def product_disk_scene(radius=0.9, halfwidth=1.0):
    """Disk-shaped region inside a flat product of two intervals."""
    base = _product_scene(
        [{"builtin": "interval", "params": {"halfwidth": halfwidth}},
         {"builtin": "interval", "params": {"halfwidth": halfwidth}}])
    prog = prg.make_program(
        [(prg.FAM_FLAT, 1), (prg.FAM_FLAT, 1)],
        [(prg.PRIM_BALL, 0, 2, [radius, 0.0, 0.0])],
        base.chart_lo, base.chart_hi)
    scene = MetricScene(
        dimension=2, structure="product", chart_lo=base.chart_lo,
        chart_hi=base.chart_hi, margin=base.margin, program=prog,
        factors=base.factors, factor_offsets=base.factor_offsets,
        meta={"x1_extent": (-radius, radius)})
    _validate(scene)
    return scene


BUILTIN_SCENES["product_disk"] = product_disk_scene


def build_scene(config):
    """Build a MetricScene from a config dict, JSON path, or builtin name.

    Construction is deterministic; all invariants (positive definite
    metric, regular boundary band) are checked on a sample grid.
    """
    if isinstance(config, MetricScene):
        return config
    if isinstance(config, str):
        if config in BUILTIN_SCENES:
            return BUILTIN_SCENES[config]()
        with open(config) as fh:
            config = json.load(fh)
    if not isinstance(config, dict):
        raise SceneError("scene config must be a dict, path, or builtin name")
    if "builtin" in config:
        name = config["builtin"]
        if name not in BUILTIN_SCENES:
            raise SceneError(f"unknown builtin scene {name!r}")
        return BUILTIN_SCENES[name](**config.get("params", {}))
    structure = config.get("structure")
    if structure == "product":
        return _product_scene(config["factors"],
                              margin=config.get("margin"),
                              shift=config.get("corner_shift", prg.SMAX_SHIFT))
    if structure == "conformal":
        return _conformal_scene(config["factor"], config["base"])
    if structure == "trapped_example":
        return build_trapped_example(int(config.get("n", 3)),
                                     float(config.get("eps", 0.05)))
    if structure == "euclidean" and "metric" not in config:
        b = config.get("boundary", {"type": "ball", "radius": 1.0})
        dim = int(config.get("dimension", 2))
        if b["type"] == "ball":
            return _disk_scene(radius=float(b.get("radius", 1.0)), dim=dim,
                               center=b.get("center"))
        if b["type"] == "box":
            return _square_scene(half=float(b.get("halfwidth", 1.0)))
        if b["type"] == "radial":
            return _perturbed_disk_scene(radius=float(b.get("radius", 1.0)),
                                         amp=float(b.get("amp", 0.03)),
                                         k=int(b.get("k", 3)))
        raise SceneError(f"unsupported euclidean boundary {b['type']!r}")
    if structure == "sphere":
        return _sphere_cap_scene(cap_radius=float(config.get("cap_radius", 1.0)))
    if "metric" in config:
        return _expression_scene(config)
    raise SceneError("unrecognized scene config")


def _validate(scene, samples=64, seed=7):
    """Positive-definiteness and boundary regularity spot checks."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    lo = np.where(np.isfinite(scene.chart_lo), scene.chart_lo, -2.0)
    hi = np.where(np.isfinite(scene.chart_hi), scene.chart_hi, 2.0)
    X = rng.uniform(lo, hi, size=(samples, scene.dimension))
    G = scene.g(X)
    eig = np.linalg.eigvalsh(G)
    if not (eig > 0).all():
        raise SceneError("metric is not positive definite on chart samples")
    r = scene.rho(X)
    band = np.abs(r) < scene.margin
    if band.any():
        gr = scene.grad_rho(X[band])
        if (np.linalg.norm(gr, axis=-1) < 1e-8).any():
            raise SceneError("degenerate boundary: vanishing gradient on band")


# ---------------------------------------------------------------------------
# operations

def christoffel(scene, x):
    """Christoffel symbols Gamma^k_ij at a chart point (closed form when
    available, metric-derivative assembly otherwise)."""
    x = np.asarray(x, dtype=float)
    if not scene.in_chart(x):
        raise SceneError("point outside chart")
    if scene.program is not None:
        return prg.christoffel(scene.program, x)
    gi = scene.ginv(x)
    dgm = scene.dg(x)  # (n, n, n): [k, i, j] = d_k g_ij
    return _christoffel_from_dg(gi, dgm)


def _christoffel_from_dg(gi, dgm):
    # Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    t1 = np.einsum("kl,ijl->kij", gi, dgm)
    t2 = np.einsum("kl,jil->kij", gi, dgm)
    t3 = np.einsum("kl,lij->kij", gi, dgm)
    return 0.5 * (t1 + t2 - t3)


def christoffel_fd(scene, x, step=FD_STEP):
    """Finite-difference Christoffel symbols (independent cross-check)."""
    x = np.asarray(x, dtype=float)
    n = scene.dimension
    dgm = np.zeros((n, n, n))
    for k in range(n):
        h = np.zeros(n)
        h[k] = step
        dgm[k] = (scene.g(x + h) - scene.g(x - h)) / (2 * step)
    return _christoffel_from_dg(scene.ginv(x), dgm)


def boundary_eval(scene, x, normalize=False):
    """(rho(x), grad rho(x)); with normalize=True the gradient is replaced
    by the outward unit conormal (g-unit covector)."""
    x = np.asarray(x, dtype=float)
    r = scene.rho(x)
    grad = scene.grad_rho(x)
    if normalize:
        gi = scene.ginv(x)
        nrm = np.sqrt(np.einsum("...ij,...i,...j->...", gi, grad, grad))
        grad = grad / np.maximum(nrm, 1e-300)[..., None]
    return r, grad


def second_fundamental_form(scene, x, tol_boundary=1e-6, convexity_tol=CONVEXITY_TOL):
    """Shape operator of the boundary at x in a g-orthonormal tangent frame.

    Returns (matrix, strictly_convex flag).  Positive eigenvalues with the
    outward conormal convention mean a convex boundary.
    """
    x = np.asarray(x, dtype=float)
    r = float(scene.rho(x))
    if abs(r) > max(tol_boundary, 1e-6):
        raise SceneError(f"point not on boundary band (rho={r:.3g})")
    n = scene.dimension
    grad = scene.grad_rho(x)
    gi = scene.ginv(x)
    gmat = scene.g(x)
    norm_g = float(np.sqrt(grad @ gi @ grad))
    nu_vec = gi @ grad / norm_g

    # coordinate Hessian of rho from the analytic gradient
    H = np.zeros((n, n))
    for k in range(n):
        h = np.zeros(n)
        h[k] = FD_STEP
        H[k] = (scene.grad_rho(x + h) - scene.grad_rho(x - h)) / (2 * FD_STEP)
    H = 0.5 * (H + H.T)
    H -= np.einsum("kij,k->ij", christoffel(scene, x), grad)

    # g-orthonormal tangent frame
    basis = []
    for e in np.eye(n):
        v = e - (e @ gmat @ nu_vec) * nu_vec
        for b in basis:
            v = v - (v @ gmat @ b) * b
        nv = np.sqrt(max(v @ gmat @ v, 0.0))
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == n - 1:
            break
    frame = np.asarray(basis)
    II = frame @ H @ frame.T / norm_g
    II = 0.5 * (II + II.T)
    strictly_convex = bool(np.linalg.eigvalsh(II).min() > convexity_tol)
    return II, strictly_convex
