"""Weak-form evaluation and the derived constants of the coercivity theory.

The bilinear form is evaluated term by term from coefficient derivatives and
discrete directional derivatives of the arguments, never through the
assembled pencil matrix; agreement of the two routes at the stencil accuracy
is one of the package's main cross checks.

Sign note: the cross (e_l e_j) block is implemented with the sign obtained by
expanding T(T(u)) and integrating by parts, which is opposite to one printed
source form; the operator-composition cross check pins the correct one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .domain import CoefficientField, DomainSpec, Grid, GridFunction, WeightFunction
from .operator import derivative_array
from .qalgebra import (CQuaternion, Quaternion, cqmul, left_mult_matrix8,
                       qmul, SlicePoint)

__all__ = [
    "ConstantsReport",
    "bilinear_form",
    "coercivity_probe",
    "compute_constants",
    "hypothesis_check",
    "apply_T_pointwise",
    "dm_norm_sq",
    "fourier_symbol_constant",
    "poincare_repetition_count",
]

TOL_REL = 1e-6
TOL_ABS = 1e-9

_E = (Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0), Quaternion(0, 0, 0, 1))


def _s_data(s) -> tuple[float, float]:
    """(Re s, |s|^2) for a SlicePoint or Quaternion."""
    if isinstance(s, SlicePoint):
        return 0.0, float(s.t) ** 2
    if isinstance(s, Quaternion):
        return s.s0, s.norm() ** 2
    raise TypeError("s must be a SlicePoint or Quaternion")


def _weighted_inner(U: np.ndarray, V: np.ndarray, w: np.ndarray,
                    mask: np.ndarray, vol: float) -> np.ndarray:
    """4-vector of sum_x w(x) <U(x), V(x)> h^3 over interior nodes."""
    comps = np.zeros(4)
    Ui, Vi, wi = U[mask], V[mask], w[mask]
    for off in (0, 4):
        p = Ui[:, off:off + 4]
        q = Vi[:, off:off + 4]
        comps[0] += np.sum(wi * (p[:, 0] * q[:, 0] + p[:, 1] * q[:, 1]
                                 + p[:, 2] * q[:, 2] + p[:, 3] * q[:, 3]))
        comps[1] += np.sum(wi * (p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
                                 - p[:, 2] * q[:, 3] + p[:, 3] * q[:, 2]))
        comps[2] += np.sum(wi * (p[:, 0] * q[:, 2] + p[:, 1] * q[:, 3]
                                 - p[:, 2] * q[:, 0] - p[:, 3] * q[:, 1]))
        comps[3] += np.sum(wi * (p[:, 0] * q[:, 3] - p[:, 1] * q[:, 2]
                                 + p[:, 2] * q[:, 1] - p[:, 3] * q[:, 0]))
    return comps * vol


def _ipow_unit(m: int, l: int) -> CQuaternion:
    """i^(m-1) e_{l+1} as an algebra constant."""
    out = CQuaternion.from_quaternion(_E[l])
    i = CQuaternion(Quaternion(), Quaternion(1.0))
    for _ in range((m - 1) % 4):
        out = cqmul(i, out)
    return out


def apply_T_pointwise(c: CoefficientField, u: GridFunction, m: int,
                      stencil_order: int = 2) -> GridFunction:
    """T u evaluated from coefficient arrays and stencils, bypassing assembly."""
    grid = u.grid
    out = np.zeros_like(u.values)
    for l in range(3):
        du = derivative_array(u.values, grid, l, m, stencil_order)
        L = left_mult_matrix8(_ipow_unit(m, l))
        out += (c.a(l)[..., None] * du) @ L.T
    return GridFunction(grid, out)


def dm_norm_sq(u: GridFunction, m: int, stencil_order: int = 2) -> float:
    """sum_l ||D_l^m u||_{L2}^2, the discrete seminorm entering the estimates."""
    grid = u.grid
    total = 0.0
    for l in range(3):
        du = derivative_array(u.values, grid, l, m, stencil_order)
        total += float(np.sum(du[grid.mask] ** 2)) * grid.cell_volume
    return total


def bilinear_form(c: CoefficientField, grid: Grid, s, u: GridFunction,
                  v: GridFunction, m: int, stencil_order: int = 2) -> CQuaternion:
    """The weak form of the pencil, summed term by term.

    Includes the principal a_l^2 block, the |s|^2 mass term, both families of
    coefficient-derivative couplings, the antisymmetric cross block and the
    -2 Re(s) <T u, v> term.  Quaternion-valued; returned embedded in the
    8-component algebra.
    """
    if c.m < m:
        raise ValueError(f"coefficient field carries derivatives to order {c.m} < m = {m}")
    s0, abs2 = _s_data(s)
    mask, vol = grid.mask, grid.cell_volume
    ones = np.ones(grid.shape)

    du_m = [derivative_array(u.values, grid, l, m, stencil_order) for l in range(3)]
    dv_cache: dict[tuple[int, int], np.ndarray] = {}

    def dv(l: int, t: int) -> np.ndarray:
        if t == 0:
            return v.values
        key = (l, t)
        if key not in dv_cache:
            dv_cache[key] = derivative_array(v.values, grid, l, t, stencil_order)
        return dv_cache[key]

    total = np.zeros(4)
    # principal block and mass term
    for l in range(3):
        total += _weighted_inner(du_m[l], dv(l, m), c.a(l) ** 2, mask, vol)
    total += abs2 * _weighted_inner(u.values, v.values, ones, mask, vol)

    # d^t(a_l^2) couplings, t = 1..m
    for l in range(3):
        for t1 in range(1, m + 1):
            w = math.comb(m, t1) * c.da2(l, l, t1)
            total += _weighted_inner(du_m[l], dv(l, m - t1), w, mask, vol)

    # second coefficient-derivative family
    for l in range(3):
        for k in range(1, m + 1):
            for t in _multi_indices(m - k):
                coeff = ((-1) ** k * math.comb(m, k)
                         * _multinomial(m - k, t))
                w = coeff * c.da(l, l, t[0]) * c.da(l, l, t[1] + k)
                total += _weighted_inner(du_m[l], dv(l, t[2]), w, mask, vol)

    # cross block; sign from expanding T(T(u)) (see module docstring)
    for l, j in ((0, 1), (0, 2), (1, 2)):
        Lej = left_mult_matrix8(CQuaternion.from_quaternion(qmul(_E[l], _E[j])))
        for k in range(1, m + 1):
            for t in _multi_indices(m - k):
                coeff = ((-1) ** (k + 1) * math.comb(m, k)
                         * _multinomial(m - k, t))
                # first integral: d^{t1} a_l * d^{t2+k} a_j, argument d_j^m u
                w1 = coeff * c.da(l, l, t[0]) * c.da(j, l, t[1] + k)
                total += _weighted_inner(du_m[j] @ Lej.T, dv(l, t[2]), w1, mask, vol)
                # second integral: d^{t1} a_j * d^{t2+k} a_l, argument d_l^m u
                w2 = coeff * c.da(j, j, t[0]) * c.da(l, j, t[1] + k)
                total -= _weighted_inner(du_m[l] @ Lej.T, dv(j, t[2]), w2, mask, vol)

    if s0 != 0.0:
        Tu = apply_T_pointwise(c, u, m, stencil_order)
        total += -2.0 * s0 * _weighted_inner(Tu.values, v.values, ones, mask, vol)

    return CQuaternion.from_quaternion(Quaternion(*total))


def _multi_indices(total: int):
    """All (t1, t2, t3) in N^3 with t1 + t2 + t3 = total."""
    for t1 in range(total + 1):
        for t2 in range(total - t1 + 1):
            yield (t1, t2, total - t1 - t2)


def _multinomial(n: int, t) -> int:
    return math.factorial(n) // math.prod(math.factorial(x) for x in t)


# ---------------------------------------------------------------------------
# Constants


@dataclass
class ConstantsReport:
    """Everything the coercivity and resolvent estimates need, plus flags."""

    m: int
    bounded_case: bool
    C_T: float
    M: float
    C1: float
    Theta: float
    C_Omega: float
    K_Omega: float
    K_m: float
    K_count: int
    K_m_Omega: float
    K_m_phi_lambda: float
    C_T_positive: bool
    gap_positive: bool
    cont_C1: float
    cont_C2: float
    cont_C3: float
    cont_C4_base: float
    cont_C4_s_slope: float
    c_omega_discrete: float
    c_omega_mismatch: float
    c_omega_warning: bool

    def continuity_bound(self, s0: float = 0.0) -> float:
        """C(s) with |b_s(u,v)| <= C(s) ||u||_Dm ||v||_Dm (plus the mass term)."""
        return (self.cont_C1 + self.cont_C2 + self.cont_C3
                + self.cont_C4_base + abs(s0) * self.cont_C4_s_slope)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, (bool, np.bool_)):
                out[k] = bool(v)
            elif isinstance(v, (int, np.integer)):
                out[k] = int(v)
            else:
                out[k] = float(v)
        return out


@lru_cache(maxsize=None)
def fourier_symbol_constant(m: int, n_samples: int = 4000) -> float:
    """max over the unit sphere of sum_{|b|=m} xi^(2b) / sum_l xi_l^(2m).

    Dense sphere sampling followed by local refinement; the value multiplies
    the norm-equivalence chain on the zero-extended Sobolev space.
    """
    bs = [b for b in itertools.product(range(m + 1), repeat=3) if sum(b) == m]

    def ratio(xi: np.ndarray) -> np.ndarray:
        xi2 = xi**2
        num = sum(np.prod(xi2 ** np.array(b), axis=-1) for b in bs)
        den = np.sum(xi2**m, axis=-1)
        return num / den

    k = np.arange(n_samples)
    ga = math.pi * (3.0 - math.sqrt(5.0))
    zc = 1.0 - 2.0 * (k + 0.5) / n_samples
    rc = np.sqrt(1.0 - zc**2)
    pts = np.column_stack([rc * np.cos(ga * k), rc * np.sin(ga * k), zc])
    extra = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0],
                      [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=float)
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    pts = np.vstack([pts, extra])
    vals = ratio(pts)
    best = pts[np.argmax(vals)]

    def neg(angles):
        th, ph = angles
        xi = np.array([math.sin(th) * math.cos(ph),
                       math.sin(th) * math.sin(ph), math.cos(th)])
        return -ratio(xi)

    th0 = math.acos(np.clip(best[2], -1, 1))
    ph0 = math.atan2(best[1], best[0])
    res = optimize.minimize(neg, [th0, ph0], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14})
    return float(max(vals.max(), -res.fun))


@lru_cache(maxsize=None)
def poincare_repetition_count(m: int) -> int:
    """Repetition count of the iterated lifting of low-order derivative norms.

    Every multi-index b with |b| <= m is lifted to order m by repeatedly
    incrementing the first axis; the count is the maximum number of sources
    mapping to one order-m target.
    """
    targets: dict[tuple[int, int, int], int] = {}
    for total in range(m + 1):
        for b in _multi_indices(total):
            tgt = (b[0] + (m - total), b[1], b[2])
            targets[tgt] = targets.get(tgt, 0) + 1
    return max(targets.values())


def _directional_poincare(grid: Grid, domain: DomainSpec) -> tuple[float, float, float]:
    """(analytic, discrete, relative mismatch) directional constants, maxed over axes.

    The discrete value uses the known spectrum of the 1D Dirichlet second
    difference; the reported constant is the smaller of the two per axis.
    """
    best_used, best_ana, best_disc = 0.0, 0.0, 0.0
    worst_mismatch = 0.0
    for l in range(3):
        L = float(domain.lengths[l])
        analytic = L / math.pi
        n_int = grid.shape[l] - 2
        h = float(grid.h[l])
        lam_min = (2.0 - 2.0 * math.cos(math.pi / (n_int + 1))) / h**2
        disc = 1.0 / math.sqrt(lam_min)
        used = min(analytic, disc)
        best_used = max(best_used, used)
        best_ana = max(best_ana, analytic)
        best_disc = max(best_disc, disc)
        worst_mismatch = max(worst_mismatch, abs(disc - analytic) / analytic)
    return best_used, best_disc, worst_mismatch


def compute_constants(c: CoefficientField, domain: DomainSpec, m: int,
                      weight: WeightFunction | None = None) -> ConstantsReport:
    """Fill every derived constant and hypothesis flag for the given data."""
    grid = c.grid
    bounded = domain.bounded
    C_T = c.min_a2()
    K_m = fourier_symbol_constant(m)
    K_count = poincare_repetition_count(m)

    if bounded:
        C_Omega, c_disc, mismatch = _directional_poincare(grid, domain)
        K_Omega = max(C_Omega, C_Omega**m)
        K_m_Omega = K_m * K_count * K_Omega
        M = K_m_Omega**2 * c.diag_deriv_sup() ** 2
        K_m_phi_lambda = float("nan")
    else:
        if weight is None:
            raise ValueError("unbounded domain: a weight function is required")
        if not weight.compatible_with(domain):
            raise ValueError("weight family incompatible with domain kind")
        lam = weight.lam
        K_m_phi_lambda = max((2.0 / lam) ** (2 * m), (2.0 / lam) ** 2) * K_count
        M = K_count * c.diag_deriv_sup() ** 2 + K_m_phi_lambda
        C_Omega = float("nan")
        K_Omega = float("nan")
        K_m_Omega = float("nan")
        c_disc, mismatch = float("nan"), 0.0

    C_T_positive = C_T > 0.0
    gap_positive = 0.5 * C_T - M > 0.0
    if gap_positive:
        C1 = (C_T - 2.0 * M) / (2.0 * C_T)
        Theta = 2.0 * max(1.0, 1.0 / math.sqrt(C1))
    else:
        C1, Theta = float("nan"), float("nan")

    # continuity bounds; the prefactor is the total coefficient mass of each
    # summation (every integral is bounded by the same product of norms)
    KmO = K_m_Omega if bounded else K_m * K_count
    n2 = 3 * (2**m - 1)
    n34 = 3 * (4**m - 3**m)
    sup_da2 = 0.0
    for l in range(3):
        for t in range(1, m + 1):
            sup_da2 = max(sup_da2, float(np.max(np.abs(c.da2(l, l, t)[grid.mask]))))
    all_max = max(c.full_deriv_sup(), float(c.sup_abs_a.max()))
    cont_C1 = float(np.max(c.sup_abs_a) ** 2)
    cont_C2 = n2 * KmO * sup_da2
    cont_C3 = n34 * KmO * all_max**2
    cont_C4_base = 2 * n34 * KmO * all_max**2
    cont_C4_s_slope = 2.0 * float(c.sup_abs_a.max())

    return ConstantsReport(
        m=m, bounded_case=bounded, C_T=C_T, M=M, C1=C1, Theta=Theta,
        C_Omega=C_Omega, K_Omega=K_Omega, K_m=K_m, K_count=K_count,
        K_m_Omega=K_m_Omega, K_m_phi_lambda=K_m_phi_lambda,
        C_T_positive=C_T_positive, gap_positive=gap_positive,
        cont_C1=cont_C1, cont_C2=cont_C2, cont_C3=cont_C3,
        cont_C4_base=cont_C4_base, cont_C4_s_slope=cont_C4_s_slope,
        c_omega_discrete=c_disc, c_omega_mismatch=mismatch,
        c_omega_warning=bool(mismatch > 0.05))


def hypothesis_check(report: ConstantsReport) -> tuple[bool, str]:
    """Both conditions of the coercivity hypotheses, with a concrete explanation."""
    gap = 0.5 * report.C_T - report.M
    if not report.C_T_positive:
        return False, f"C_T = {report.C_T:.17g} is not > 0"
    if gap <= 0.0:
        return False, (f"C_T/2 - M = {gap:.17g} is not > 0 "
                       f"(C_T/2 = {0.5 * report.C_T:.17g}, M = {report.M:.17g})")
    return True, (f"C_T = {report.C_T:.17g} > 0 and C_T/2 - M = {gap:.17g} > 0")


def coercivity_probe(c: CoefficientField, grid: Grid, s: SlicePoint,
                     suite, m: int, report: ConstantsReport | None = None,
                     weight: WeightFunction | None = None,
                     stencil_order: int = 2) -> dict:
    """Empirical coercivity ratios over a test suite.

    Returns the minimum of Re b_s(u,u)/||u||^2 and of
    Re b_s(u,u)/||u||_Dm^2, together with pass flags against t^2 and
    C_T/2 - M at the shared slack (1e-6 relative, 1e-9 absolute).
    """
    if report is None:
        report = compute_constants(c, grid.domain, m, weight=weight)
    t2 = float(s.t) ** 2
    thr_dm = 0.5 * report.C_T - report.M
    min_l2, min_dm = math.inf, math.inf
    for u in suite:
        re_b = bilinear_form(c, grid, s, u, u, m, stencil_order).q1.s0
        n2 = u.l2_norm() ** 2
        d2 = dm_norm_sq(u, m, stencil_order)
        if n2 > 0:
            min_l2 = min(min_l2, re_b / n2)
        if d2 > 0:
            min_dm = min(min_dm, re_b / d2)
    pass_l2 = min_l2 >= t2 * (1.0 - TOL_REL) - TOL_ABS
    pass_dm = min_dm >= thr_dm * (1.0 - TOL_REL) - TOL_ABS
    return {
        "min_ratio_l2": min_l2, "threshold_l2": t2, "pass_l2": bool(pass_l2),
        "min_ratio_dm": min_dm, "threshold_dm": thr_dm, "pass_dm": bool(pass_dm),
    }
