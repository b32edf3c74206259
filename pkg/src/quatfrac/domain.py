"""Domains, uniform grids, grid functions and coefficient/weight fields.

Domains are either an axis-aligned box or a truncated unbounded domain
(exterior of a ball, or a half space) masked onto a box grid.  Grid functions
take values in the 8-component algebra and are extended by zero outside the
interior mask; that zero extension is how the discrete m-th order boundary
conditions are realized throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy import ndimage

__all__ = [
    "DomainSpec",
    "Grid",
    "GridFunction",
    "CoefficientField",
    "WeightFunction",
    "DomainError",
    "build_grid",
    "sample_coefficients",
    "weighted_poincare_check",
    "random_bump_suite",
    "constant_coefficient",
    "hill_coefficient",
    "ridge_coefficient",
    "trig_coefficient",
    "weight_domination_ratio",
]

_XYZ = sp.symbols("x y z")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the computational domain.

    kind 'box': the domain is the open box itself.
    kind 'exterior_ball': {|x - center| > radius} truncated to the box.
    kind 'half_space': {<x - point, normal> > 0} truncated to the box.
    """

    kind: str
    box_lo: tuple[float, float, float]
    box_hi: tuple[float, float, float]
    center: tuple[float, float, float] | None = None
    radius: float | None = None
    point: tuple[float, float, float] | None = None
    normal: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("box", "exterior_ball", "half_space"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if any(hi <= lo for lo, hi in zip(self.box_lo, self.box_hi)):
            raise DomainError("box must have positive extent on every axis")
        if self.kind == "exterior_ball":
            if self.center is None or self.radius is None or self.radius <= 0:
                raise DomainError("exterior_ball needs a center and a positive radius")
        if self.kind == "half_space":
            if self.point is None or self.normal is None:
                raise DomainError("half_space needs a point and a direction")
            if np.linalg.norm(self.normal) == 0.0:
                raise DomainError("half_space direction must be nonzero")

    @staticmethod
    def box(lengths: Sequence[float], lo: Sequence[float] = (0.0, 0.0, 0.0)) -> "DomainSpec":
        lo = tuple(float(v) for v in lo)
        hi = tuple(lo[k] + float(lengths[k]) for k in range(3))
        return DomainSpec("box", lo, hi)

    @property
    def lengths(self) -> np.ndarray:
        return np.array(self.box_hi) - np.array(self.box_lo)

    @property
    def bounded(self) -> bool:
        return self.kind == "box"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Strict membership test for an (..., 3) array of points."""
        pts = np.asarray(pts, dtype=float)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for k in range(3):
            inside &= (pts[..., k] > self.box_lo[k]) & (pts[..., k] < self.box_hi[k])
        if self.kind == "exterior_ball":
            d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
            inside &= d2 > self.radius**2
        elif self.kind == "half_space":
            v = np.asarray(self.normal, dtype=float)
            v = v / np.linalg.norm(v)
            inside &= (pts - np.asarray(self.point)) @ v > 0.0
        return inside


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over the truncation box with an interior mask."""

    domain: DomainSpec
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    h: np.ndarray                      # spacings, shape (3,)
    mask: np.ndarray                   # bool, (n1, n2, n3), True = interior
    idx: np.ndarray                    # int, -1 on exterior else 0..N-1
    n_interior: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mask.shape

    @property
    def cell_volume(self) -> float:
        return float(self.h[0] * self.h[1] * self.h[2])

    def points(self) -> np.ndarray:
        """All node coordinates, shape (n1, n2, n3, 3)."""
        X, Y, Z = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def interior_points(self) -> np.ndarray:
        return self.points()[self.mask]

    def interior_distance(self) -> np.ndarray:
        """Distance from each interior node to the nearest exterior node."""
        return ndimage.distance_transform_edt(self.mask, sampling=self.h)


def build_grid(domain: DomainSpec, n: Sequence[int]) -> Grid:
    """Mask a uniform n1 x n2 x n3 node grid with the domain membership test."""
    n = tuple(int(v) for v in n)
    if any(v < 3 for v in n):
        raise DomainError("need at least 3 nodes per axis")
    axes = tuple(np.linspace(domain.box_lo[k], domain.box_hi[k], n[k]) for k in range(3))
    h = np.array([(domain.box_hi[k] - domain.box_lo[k]) / (n[k] - 1) for k in range(3)])
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    mask = domain.contains(pts)
    n_int = int(mask.sum())
    if n_int == 0:
        raise DomainError("degenerate grid: no interior nodes")
    idx = np.full(mask.shape, -1, dtype=np.int64)
    idx[mask] = np.arange(n_int)
    return Grid(domain, axes, h, mask, idx, n_int)


class GridFunction:
    """A map from grid nodes to the 8-component algebra, zero outside the interior."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray | None = None):
        self.grid = grid
        if values is None:
            values = np.zeros(grid.shape + (8,))
        else:
            values = np.asarray(values, dtype=float)
            if values.shape != grid.shape + (8,):
                raise ValueError(f"values must have shape {grid.shape + (8,)}")
            values = values.copy()
        values[~grid.mask] = 0.0
        self.values = values

    @staticmethod
    def from_interior_vector(grid: Grid, vec: np.ndarray) -> "GridFunction":
        vec = np.asarray(vec, dtype=float).reshape(grid.n_interior, 8)
        out = GridFunction(grid)
        out.values[grid.mask] = vec
        return out

    def interior_vector(self) -> np.ndarray:
        """Flat length-8N vector of interior values (component-major per node)."""
        return self.values[self.grid.mask].ravel()

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def right_mul(self, q) -> "GridFunction":
        """Pointwise right multiplication by a constant Quaternion/CQuaternion."""
        from .qalgebra import CQuaternion, Quaternion, right_mult_matrix8

        if isinstance(q, Quaternion):
            q = CQuaternion.from_quaternion(q)
        R = right_mult_matrix8(q)
        return GridFunction(self.grid, self.values @ R.T)

    def modulus(self) -> np.ndarray:
        """Pointwise |u|, shape (n1, n2, n3)."""
        return np.sqrt(np.sum(self.values**2, axis=-1))

    def l2_norm(self) -> float:
        return math.sqrt(np.sum(self.values**2) * self.grid.cell_volume)

    def l2_inner_re(self, other: "GridFunction") -> float:
        return float(np.sum(self.values * other.values) * self.grid.cell_volume)

    def l2_inner(self, other: "GridFunction"):
        """Quaternion-valued discrete L2 scalar product."""
        from .qalgebra import Quaternion

        a, b = self.values, other.values
        comps = np.zeros(4)
        # conj(q1)w1 + conj(q2)w2 summed over nodes; q-parts sit in slots
        # 0:4 and 4:8 of the flat component layout.
        for off in (0, 4):
            p = a[..., off:off + 4]
            w = b[..., off:off + 4]
            comps[0] += np.sum(p[..., 0] * w[..., 0] + p[..., 1] * w[..., 1]
                               + p[..., 2] * w[..., 2] + p[..., 3] * w[..., 3])
            comps[1] += np.sum(p[..., 0] * w[..., 1] - p[..., 1] * w[..., 0]
                               - p[..., 2] * w[..., 3] + p[..., 3] * w[..., 2])
            comps[2] += np.sum(p[..., 0] * w[..., 2] + p[..., 1] * w[..., 3]
                               - p[..., 2] * w[..., 0] - p[..., 3] * w[..., 1])
            comps[3] += np.sum(p[..., 0] * w[..., 3] - p[..., 1] * w[..., 2]
                               + p[..., 2] * w[..., 1] - p[..., 3] * w[..., 0])
        comps *= self.grid.cell_volume
        return Quaternion(*comps)


# ---------------------------------------------------------------------------
# Coefficients


class SymbolicCoefficient:
    """Real coefficient defined by a sympy expression in x, y, z.

    Directional derivatives of any order come from symbolic differentiation,
    so hypothesis constants are not polluted by finite-difference error.
    """

    def __init__(self, expr):
        self.expr = sp.sympify(expr)
        self._fns: dict[tuple[int, int], Callable] = {}

    def fn(self, d: int = 0, t: int = 0) -> Callable:
        key = (d, t)
        if key not in self._fns:
            e = sp.diff(self.expr, _XYZ[d], t) if t > 0 else self.expr
            self._fns[key] = sp.lambdify(_XYZ, e, "numpy")
        return self._fns[key]

    def sample(self, pts: np.ndarray, d: int = 0, t: int = 0) -> np.ndarray:
        f = self.fn(d, t)
        out = f(pts[..., 0], pts[..., 1], pts[..., 2])
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()


def constant_coefficient(c: float) -> SymbolicCoefficient:
    return SymbolicCoefficient(sp.Float(c))


def hill_coefficient(K: float, lam: float, P: Sequence[float],
                     amp: float = 1.0, center: Sequence[float] | None = None,
                     width: float = 1.0) -> SymbolicCoefficient:
    """K + amp * exp(-lam*|x-P|) * gaussian(x; center, width).

    The rapidly decaying factor keeps every derivative dominated by the hill
    weight of the matching exterior-ball domain.
    """
    x, y, z = _XYZ
    r = sp.sqrt((x - P[0]) ** 2 + (y - P[1]) ** 2 + (z - P[2]) ** 2)
    expr = sp.Float(K) + amp * sp.exp(-lam * r)
    if center is not None:
        g = ((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2)
        expr = sp.Float(K) + amp * sp.exp(-lam * r) * sp.exp(-g / width**2)
    return SymbolicCoefficient(expr)


def ridge_coefficient(K: float, lam: float, P: Sequence[float],
                      v: Sequence[float], amp: float = 1.0) -> SymbolicCoefficient:
    """K + amp * exp(-lam * <x - P, v/|v|>)."""
    x, y, z = _XYZ
    vv = np.asarray(v, dtype=float)
    vv = vv / np.linalg.norm(vv)
    d = vv[0] * (x - P[0]) + vv[1] * (y - P[1]) + vv[2] * (z - P[2])
    return SymbolicCoefficient(sp.Float(K) + amp * sp.exp(-lam * d))


def trig_coefficient(base: float, amp: float, freq: Sequence[float],
                     phase: Sequence[float]) -> SymbolicCoefficient:
    """base + amp * prod_l sin(pi*freq_l*x_l + phase_l); generic smooth test field."""
    x, y, z = _XYZ
    prod = sp.Integer(1)
    for sym, f, p in zip((x, y, z), freq, phase):
        prod *= sp.sin(sp.pi * f * sym + p)
    return SymbolicCoefficient(sp.Float(base) + amp * prod)


@dataclass
class CoefficientField:
    """Nodal coefficient values and one-directional derivatives up to order m.

    values[l] is the full-grid array of a_l (zero on exterior nodes); deriv
    maps (l, d, t) -> array of the t-th derivative of a_l along axis d.
    Cached bounds are taken over interior nodes only.
    """

    grid: Grid
    m: int
    provenance: str
    values: list[np.ndarray]
    deriv: dict[tuple[int, int, int], np.ndarray]
    inf_a2: np.ndarray = field(init=False)        # per l
    sup_abs_deriv: np.ndarray = field(init=False)  # (l, d, t-1) for t = 1..m
    sup_abs_a: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = self.grid.mask
        self.inf_a2 = np.array([float(np.min(v[mask] ** 2)) for v in self.values])
        self.sup_abs_a = np.array([float(np.max(np.abs(v[mask]))) for v in self.values])
        sup = np.zeros((3, 3, self.m))
        for (l, d, t), arr in self.deriv.items():
            sup[l, d, t - 1] = float(np.max(np.abs(arr[mask])))
        self.sup_abs_deriv = sup

    def a(self, l: int) -> np.ndarray:
        return self.values[l]

    def da(self, l: int, d: int, t: int) -> np.ndarray:
        if t == 0:
            return self.values[l]
        return self.deriv[(l, d, t)]

    def da2(self, l: int, d: int, t: int) -> np.ndarray:
        """t-th derivative of a_l^2 along axis d via the Leibniz rule."""
        if t == 0:
            return self.values[l] ** 2
        out = np.zeros(self.grid.shape)
        for k in range(t + 1):
            out += math.comb(t, k) * self.da(l, d, k) * self.da(l, d, t - k)
        return out

    def scaled(self, factor: float) -> "CoefficientField":
        """Coefficient field with every a_l (and derivative) multiplied by factor."""
        return CoefficientField(
            self.grid, self.m, self.provenance,
            [v * factor for v in self.values],
            {k: arr * factor for k, arr in self.deriv.items()})

    def diag_deriv_sup(self) -> float:
        """sup over t=1..m, l, x of |d^t a_l / d x_l^t| (derivative along own axis)."""
        return float(max(self.sup_abs_deriv[l, l, :].max() for l in range(3)))

    def full_deriv_sup(self) -> float:
        """sup over all axes, coefficients and orders 1..m."""
        return float(self.sup_abs_deriv.max())

    def min_a2(self) -> float:
        return float(self.inf_a2.min())


def _as_symbolic(spec) -> SymbolicCoefficient:
    if isinstance(spec, SymbolicCoefficient):
        return spec
    if isinstance(spec, (int, float)):
        return constant_coefficient(float(spec))
    raise TypeError(f"cannot interpret coefficient spec {spec!r}")


def sample_coefficients(domain: DomainSpec, grid: Grid, specs, m: int,
                        provenance: str = "analytic") -> CoefficientField:
    """Sample a_1, a_2, a_3 and their one-directional derivatives up to order m.

    specs is a sequence of three entries, each a number or a
    SymbolicCoefficient.  provenance 'analytic' differentiates symbolically;
    'finite_difference' applies second-order centered differences to the nodal
    values (one-sided at the truncation-box faces).
    """
    if provenance not in ("analytic", "finite_difference"):
        raise ValueError(f"unknown provenance {provenance!r}")
    coeffs = [_as_symbolic(s) for s in specs]
    pts = grid.points()
    values, deriv = [], {}
    for l, c in enumerate(coeffs):
        v = c.sample(pts)
        _check_finite(v, grid, f"a{l + 1}")
        values.append(v)
        for d in range(3):
            if provenance == "analytic":
                for t in range(1, m + 1):
                    arr = c.sample(pts, d, t)
                    _check_finite(arr, grid, f"d^{t} a{l + 1}/dx{d + 1}^{t}")
                    deriv[(l, d, t)] = arr
            else:
                prev = v
                for t in range(1, m + 1):
                    prev = _centered_derivative(prev, grid.h[d], d)
                    deriv[(l, d, t)] = prev
    return CoefficientField(grid, m, provenance, values, deriv)


def _check_finite(arr: np.ndarray, grid: Grid, label: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        i, j, k = (int(v[0]) for v in np.where(bad))
        x = (grid.axes[0][i], grid.axes[1][j], grid.axes[2][k])
        raise DomainError(f"non-finite sample of {label} at node ({i},{j},{k}), x = {x}")


def _centered_derivative(arr: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order first derivative on the full grid, one-sided at the faces."""
    out = np.gradient(arr, h, axis=axis, edge_order=2)
    return out


# ---------------------------------------------------------------------------
# Weights


@dataclass(frozen=True)
class WeightFunction:
    """Exponentially decaying weight for truncated unbounded domains.

    hill:  exp(-lam*|x-P|)/|x-P|^2 on exterior-ball domains.
    ridge: exp(-lam*<x-P, v/|v|>)  on half-space domains.
    """

    family: str
    lam: float
    P: tuple[float, float, float]
    v: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.family not in ("hill", "ridge"):
            raise DomainError(f"unknown weight family {self.family!r}")
        if self.lam <= 0:
            raise DomainError("weight rate lambda must be positive")
        if self.family == "ridge" and (self.v is None or np.linalg.norm(self.v) == 0):
            raise DomainError("ridge weight needs a nonzero direction")

    def compatible_with(self, domain: DomainSpec) -> bool:
        return (self.family == "hill" and domain.kind == "exterior_ball") or \
               (self.family == "ridge" and domain.kind == "half_space")

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.family == "hill":
            r = np.linalg.norm(pts - np.asarray(self.P), axis=-1)
            return np.exp(-self.lam * r) / r**2
        vv = np.asarray(self.v, dtype=float)
        vv = vv / np.linalg.norm(vv)
        d = (pts - np.asarray(self.P)) @ vv
        return np.exp(-self.lam * d)

    def radial_condition_margin(self, rs: np.ndarray, omegas: np.ndarray,
                                dr: float = 1e-4) -> np.ndarray:
        """Centered-difference check of d/dr[r^2 w(P + r*omega)] <= -lam*r^2*w.

        Returns the pointwise margin -lam*r^2*w - d/dr[r^2*w]; the decay
        condition holds where the margin is >= 0 (up to O(dr^2)).
        """
        if self.family != "hill":
            raise DomainError("radial condition applies to the hill family")
        P = np.asarray(self.P)
        out = np.empty((len(omegas), len(rs)))
        for i, om in enumerate(omegas):
            om = om / np.linalg.norm(om)
            f = lambda r: r**2 * self.evaluate(P + np.outer(r, om))
            d = (f(rs + dr) - f(rs - dr)) / (2 * dr)
            out[i] = -self.lam * f(rs) - d
        return out

    def directional_margin(self, grid: Grid, dr: float = 1e-4) -> np.ndarray:
        """Pointwise margin -lam*w - dw/dv at interior nodes (ridge family)."""
        if self.family != "ridge":
            raise DomainError("directional condition applies to the ridge family")
        vv = np.asarray(self.v, dtype=float)
        vv = vv / np.linalg.norm(vv)
        pts = grid.interior_points()
        d = (self.evaluate(pts + dr * vv) - self.evaluate(pts - dr * vv)) / (2 * dr)
        return -self.lam * self.evaluate(pts) - d


def weighted_poincare_check(grid: Grid, weight: WeightFunction, p: float,
                            u: GridFunction, tol: float | None = None) -> dict:
    """Compare sum |u|^p w h^3 against (p/lam)^p sum |grad_h u|^p w h^3.

    The discrete gradient is the forward difference with zero extension.
    Returns lhs, rhs and a pass flag lhs <= rhs*(1+tol); the default tol is
    1e-9 plus an O(h) allowance for the one-sided differencing.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if not weight.compatible_with(grid.domain):
        raise DomainError(
            f"weight family {weight.family!r} incompatible with domain kind "
            f"{grid.domain.kind!r}")
    if tol is None:
        tol = 1e-9 + p * weight.lam * float(grid.h.max())
    w = np.zeros(grid.shape)
    w[grid.mask] = weight.evaluate(grid.interior_points())
    vol = grid.cell_volume
    mod = u.modulus()
    lhs = float(np.sum(mod[grid.mask] ** p * w[grid.mask]) * vol)
    grad2 = np.zeros(grid.shape)
    for d in range(3):
        fwd = np.zeros_like(u.values)
        sl_to = [slice(None)] * 3
        sl_from = [slice(None)] * 3
        sl_to[d] = slice(0, -1)
        sl_from[d] = slice(1, None)
        fwd[tuple(sl_to)] = u.values[tuple(sl_from)]
        diff = (fwd - u.values) / grid.h[d]
        grad2 += np.sum(diff**2, axis=-1)
    rhs = float((p / weight.lam) ** p
                * np.sum(grad2[grid.mask] ** (p / 2.0) * w[grid.mask]) * vol)
    return {"lhs": lhs, "rhs": rhs, "pass": lhs <= rhs * (1.0 + tol), "tol": tol}


def weight_domination_ratio(c: CoefficientField, weight: WeightFunction) -> float:
    """max over interior nodes, axes, coefficients and orders of |d^t a_l|^2 / w."""
    grid = c.grid
    w = weight.evaluate(grid.interior_points())
    worst = 0.0
    for (l, d, t), arr in c.deriv.items():
        ratio = arr[grid.mask] ** 2 / w
        worst = max(worst, float(np.max(ratio)))
    return worst


# ---------------------------------------------------------------------------
# Test-function factory


def random_bump_suite(grid: Grid, count: int, seed: int,
                      modulate: bool = True,
                      min_radius_cells: float = 2.9) -> list[GridFunction]:
    """Deterministic suite of compactly supported smooth bumps.

    Each bump is amplitude * eta(|x - x0|/R) with the standard C-infinity
    mollifier eta, centered at a random interior node with R chosen inside the
    local distance to the exterior, times a random constant algebra value and
    an optional low-frequency modulation.
    """
    rng = np.random.default_rng(seed)
    dist = grid.interior_distance()
    pts = grid.points()
    cand = np.argwhere(grid.mask & (dist >= min_radius_cells * grid.h.min()))
    if len(cand) == 0:
        raise DomainError("grid too coarse for compactly supported bumps")
    out = []
    for _ in range(count):
        i, j, k = cand[rng.integers(len(cand))]
        x0 = pts[i, j, k]
        R = 0.95 * dist[i, j, k]
        rho2 = np.sum((pts - x0) ** 2, axis=-1) / R**2
        shape = np.zeros(grid.shape)
        inside = rho2 < 1.0
        shape[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
        if modulate:
            kvec = rng.uniform(-2.0, 2.0, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            shape = shape * (1.0 + 0.4 * np.cos(pts @ kvec * np.pi + phase))
        amp = rng.normal(size=8)
        amp /= np.linalg.norm(amp)
        vals = shape[..., None] * amp
        out.append(GridFunction(grid, vals))
    return out
