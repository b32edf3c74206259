"""Solving the pencil, S-resolvent actions and operator-norm scans.

The main linear solver is conjugate gradients on the real symmetric
positive-definite structure of the pencil at purely imaginary s; a
nonsymmetric Krylov method takes over when the sampled symmetry check fails
(variable coefficients break exact symmetry).  A dense LU route exists purely
as an oracle.  Contour quadrature reuses one Krylov recurrence for the whole
family of shifts t^2 through the multishift variant below.

Scalar convention: a quaternion scalar c acts on grid functions by pointwise
left multiplication, so the resolvent actions are
    S_L^-1(s,T) w = Q_s^-1(sbar * w) - T Q_s^-1 w
    S_R^-1(s,T) w = sbar * (Q_s^-1 w) - T Q_s^-1 w
which satisfy S_L^-1(s,T)(s v) - T S_L^-1(s,T) v = v and
S_R^-1(s,T) T v = s * (S_R^-1(s,T) v) - v exactly at the matrix level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .domain import Grid, GridFunction
from .operator import QOperator, assemble_Qs
from .qalgebra import Quaternion, SlicePoint, left_mult_matrix8, qmul

__all__ = [
    "SolveError",
    "SolveReport",
    "NormScan",
    "solve_Qs",
    "apply_SL_inv",
    "apply_SR_inv",
    "norm_scan",
    "multishift_cg",
    "power_iteration",
    "QsSolver",
]

CG_DEFAULT_TOL = 1e-10
CG_DEFAULT_MAXITER = 5000
NORM_TOL = 1e-3
NORM_MAXITER = 500


class SolveError(RuntimeError):
    def __init__(self, msg: str, best_residual: float = math.nan):
        super().__init__(msg)
        self.best_residual = best_residual


@dataclass
class SolveReport:
    residual: float
    iterations: int
    method: str
    tol: float


@dataclass
class NormScanRow:
    t: float
    q_inv_norm: float
    sl_norm: float
    sr_norm: float
    bound_q: float
    bound_s: float
    pass_q: bool
    pass_s: bool
    tq_norm: float = math.nan
    error: str = ""


@dataclass
class NormScan:
    j: Quaternion
    rows: list[NormScanRow] = field(default_factory=list)

    def all_pass(self) -> bool:
        return all(r.pass_q and r.pass_s and not r.error for r in self.rows)

    def any_error(self) -> bool:
        return any(r.error for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("t,q_inv_norm,sl_norm,sr_norm,bound_q,bound_s,pass_q,pass_s\n")
            for r in self.rows:
                f.write(",".join([
                    format(r.t, ".17g"), format(r.q_inv_norm, ".17g"),
                    format(r.sl_norm, ".17g"), format(r.sr_norm, ".17g"),
                    format(r.bound_q, ".17g"), format(r.bound_s, ".17g"),
                    str(r.pass_q).lower(), str(r.pass_s).lower()]) + "\n")


def _is_symmetric(mat: sps.csr_matrix, rng=None, samples: int = 10,
                  rtol: float = 1e-12) -> bool:
    """Sampled symmetry test: |x'Ay - y'Ax| against the natural scale."""
    rng = rng or np.random.default_rng(12345)
    n = mat.shape[0]
    for _ in range(samples):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        ax, ay = mat @ x, mat @ y
        gap = abs(x @ ay - y @ ax)
        scale = np.linalg.norm(ax) * np.linalg.norm(y) + 1e-300
        if gap > rtol * scale:
            return False
    return True


def _cg(mat: sps.csr_matrix, b: np.ndarray, tol: float, maxiter: int):
    """Plain CG; returns (x, iterations, relative residual)."""
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    best = math.sqrt(rr) / nb
    for k in range(1, maxiter + 1):
        Ap = mat @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            break  # matrix not SPD on this subspace; caller falls back
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        rel = math.sqrt(rr_new) / nb
        best = min(best, rel)
        if rel <= tol:
            return x, k, rel
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, maxiter, best


def solve_Qs(Qs: QOperator, F: GridFunction, tol: float = CG_DEFAULT_TOL,
             method: str = "auto", maxiter: int = CG_DEFAULT_MAXITER,
             dense_cap: int | None = None) -> tuple[GridFunction, SolveReport]:
    """Solve Q_s u = F to a relative residual <= tol.

    method 'auto' picks CG when the sampled symmetry check passes and the
    nonsymmetric Krylov fallback otherwise; 'dense_lu_oracle' densifies and
    factorizes (size-capped when dense_cap is given).  Boundary conditions
    hold by the zero-extension representation.
    """
    if Qs.label != "Qs":
        raise SolveError("solve_Qs needs an assembled pencil (label 'Qs')")
    if Qs.s_abs2 == 0.0:
        raise SolveError("t = 0 rejected: the pencil is only inverted for s != 0")
    if Qs.s0 != 0.0:
        raise SolveError("solve_Qs is restricted to purely imaginary s (Re s = 0)")
    b = F.interior_vector()
    if not np.all(np.isfinite(b)):
        raise SolveError("right-hand side contains non-finite values")
    nb = np.linalg.norm(b)

    if method == "dense_lu_oracle":
        if dense_cap is not None and Qs.n > dense_cap:
            raise SolveError(f"dense oracle refused: size {Qs.n} exceeds cap {dense_cap}")
        import scipy.linalg as sla
        lu = sla.lu_factor(Qs.mat.toarray())
        x = sla.lu_solve(lu, b)
        res = np.linalg.norm(Qs.mat @ x - b) / nb if nb > 0 else 0.0
        return (GridFunction.from_interior_vector(Qs.grid, x),
                SolveReport(res, 1, "dense_lu_oracle", tol))

    if method not in ("auto", "cg", "nonsymmetric"):
        raise SolveError(f"unknown solve method {method!r}")
    use_cg = method == "cg" or (method == "auto" and _is_symmetric(Qs.mat))
    if use_cg:
        x, it, res = _cg(Qs.mat, b, tol, maxiter)
        if res <= tol:
            return (GridFunction.from_interior_vector(Qs.grid, x),
                    SolveReport(res, it, "iterative_cg_on_normal_structure", tol))
        if method == "cg":
            raise SolveError(f"CG did not reach tol {tol:g}", best_residual=res)
    # nonsymmetric fallback
    x, info = spla.lgmres(Qs.mat, b, rtol=tol, atol=0.0, maxiter=maxiter)
    res = np.linalg.norm(Qs.mat @ x - b) / nb if nb > 0 else 0.0
    if res > tol:
        raise SolveError(f"iterative solve stalled at residual {res:g}",
                         best_residual=res)
    return (GridFunction.from_interior_vector(Qs.grid, x),
            SolveReport(res, maxiter if info else -1, "iterative_nonsymmetric_fallback", tol))


class QsSolver:
    """Reusable solver for one pencil; factorizes once when asked.

    The factorized route exists for the norm scans and oracle paths where many
    solves against one matrix amortize an LU; the CG route is the contract
    default.  Both are residual-checked to the same tolerance.
    """

    def __init__(self, Top: QOperator, s: SlicePoint, tol: float = CG_DEFAULT_TOL,
                 factorize: bool = False, maxiter: int = CG_DEFAULT_MAXITER):
        self.Top = Top
        self.s = s
        self.Qs = assemble_Qs(Top, s)
        self.tol = tol
        self.maxiter = maxiter
        self._lu = spla.splu(self.Qs.mat.tocsc()) if factorize else None
        self._matT = self.Qs.mat.T.tocsr()
        self._symmetric = None if factorize else _is_symmetric(self.Qs.mat)

    def _check(self, mat, x, b):
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return
        res = np.linalg.norm(mat @ x - b) / nb
        if res > max(self.tol, 1e-9):
            raise SolveError(f"solve residual {res:g} above tolerance", best_residual=res)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            x = self._lu.solve(b)
            self._check(self.Qs.mat, x, b)
            return x
        if self._symmetric:
            x, _, res = _cg(self.Qs.mat, b, self.tol, self.maxiter)
            if res > self.tol:
                raise SolveError(f"CG stalled at {res:g}", best_residual=res)
            return x
        x, _ = spla.lgmres(self.Qs.mat, b, rtol=self.tol, atol=0.0, maxiter=self.maxiter)
        self._check(self.Qs.mat, x, b)
        return x

    def solve_t(self, b: np.ndarray) -> np.ndarray:
        """Solve against the transposed pencil (for power iteration on A A^T)."""
        if self._lu is not None:
            x = self._lu.solve(b, trans="T")
            self._check(self._matT, x, b)
            return x
        if self._symmetric:
            return self.solve(b)
        x, _ = spla.lgmres(self._matT, b, rtol=self.tol, atol=0.0, maxiter=self.maxiter)
        self._check(self._matT, x, b)
        return x


def _left_mult_vec(grid: Grid, q: Quaternion, vec: np.ndarray) -> np.ndarray:
    """Pointwise left multiplication of a flat interior vector by a quaternion."""
    from .qalgebra import CQuaternion
    L = left_mult_matrix8(CQuaternion.from_quaternion(q))
    return (vec.reshape(-1, 8) @ L.T).ravel()


def apply_SL_inv(Top: QOperator, s: SlicePoint, w: GridFunction,
                 solver: QsSolver | None = None) -> GridFunction:
    """Left S-resolvent action Q_s^-1(sbar w) - T Q_s^-1 w (two solves)."""
    solver = solver or QsSolver(Top, s)
    b = w.interior_vector()
    sbar = s.conj_value()
    u1 = solver.solve(_left_mult_vec(Top.grid, sbar, b))
    u2 = solver.solve(b)
    return GridFunction.from_interior_vector(Top.grid, u1 - Top.mat @ u2)


def apply_SR_inv(Top: QOperator, s: SlicePoint, w: GridFunction,
                 solver: QsSolver | None = None) -> GridFunction:
    """Right S-resolvent action sbar (Q_s^-1 w) - T Q_s^-1 w (one solve)."""
    solver = solver or QsSolver(Top, s)
    y = solver.solve(w.interior_vector())
    out = _left_mult_vec(Top.grid, s.conj_value(), y) - Top.mat @ y
    return GridFunction.from_interior_vector(Top.grid, out)


def power_iteration(apply_A, apply_At, n: int, rng,
                    tol: float = NORM_TOL, maxiter: int = NORM_MAXITER
                    ) -> tuple[float, int, bool]:
    """Largest singular value of A by power iteration on A^T A.

    Returns (estimate, iterations, converged); the estimate ||A x_k|| with
    ||x_k|| = 1 is always a lower bound on ||A||.
    """
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est_old = 0.0
    for k in range(1, maxiter + 1):
        y = apply_A(x)
        est = np.linalg.norm(y)
        z = apply_At(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0, k, True
        x = z / nz
        if abs(est - est_old) <= tol * max(est, 1e-300):
            return est, k, True
        est_old = est
    return est_old, maxiter, False


def norm_scan(Top: QOperator, constants, j: Quaternion, t_values,
              tol: float = NORM_TOL, maxiter: int = NORM_MAXITER,
              seed: int = 7, include_tq: bool = False,
              threads: int = 1, solver_tol: float = 1e-10) -> NormScan:
    """Measured pseudo-resolvent and S-resolvent norms against their bounds.

    Per scan point the pencil is factorized once and the three operator norms
    are estimated by power iteration; flags compare against 1/t^2 and
    Theta/|t| with a 1e-3 slack.  Solver failures mark the row instead of
    aborting the scan.
    """
    theta = constants.Theta if constants is not None else 2.0 * math.sqrt(2.0)
    scan = NormScan(j=j)
    grid = Top.grid
    L = left_mult_matrix8
    from .qalgebra import CQuaternion

    def one_point(idx_t):
        i, t = idx_t
        rng = np.random.default_rng(seed + 1000 * i)
        row = NormScanRow(t=float(t), q_inv_norm=math.nan, sl_norm=math.nan,
                          sr_norm=math.nan, bound_q=1.0 / t**2,
                          bound_s=theta / abs(t), pass_q=False, pass_s=False)
        try:
            s = SlicePoint(j, float(t))
            solver = QsSolver(Top, s, tol=solver_tol, factorize=True)
            n = Top.n
            Lsb = L(CQuaternion.from_quaternion(s.conj_value()))

            def lmul(vec, Lm=Lsb):
                return (vec.reshape(-1, 8) @ Lm.T).ravel()

            q_est, _, _ = power_iteration(solver.solve, solver.solve_t, n, rng,
                                          tol, maxiter)

            def sl(vec):
                return solver.solve(lmul(vec)) - Top.mat @ solver.solve(vec)

            def sl_t(vec):
                return lmul(solver.solve_t(vec), Lsb.T) - solver.solve_t(Top.mat.T @ vec)

            def sr(vec):
                y = solver.solve(vec)
                return lmul(y) - Top.mat @ y

            def sr_t(vec):
                return solver.solve_t(lmul(vec, Lsb.T) - Top.mat.T @ vec)

            sl_est, _, _ = power_iteration(sl, sl_t, n, rng, tol, maxiter)
            sr_est, _, _ = power_iteration(sr, sr_t, n, rng, tol, maxiter)
            row.q_inv_norm, row.sl_norm, row.sr_norm = q_est, sl_est, sr_est
            row.pass_q = q_est <= row.bound_q * (1.0 + 1e-3)
            row.pass_s = (sl_est <= row.bound_s * (1.0 + 1e-3)
                          and sr_est <= row.bound_s * (1.0 + 1e-3))
            if include_tq:
                def tq(vec):
                    return Top.mat @ solver.solve(vec)

                def tq_t(vec):
                    return solver.solve_t(Top.mat.T @ vec)

                row.tq_norm, _, _ = power_iteration(tq, tq_t, n, rng, tol, maxiter)
        except SolveError as e:
            row.error = str(e)
        return i, row

    items = list(enumerate(t_values))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one_point, items))
    else:
        results = [one_point(it) for it in items]
    results.sort(key=lambda r: r[0])
    scan.rows = [row for _, row in results]
    return scan


# ---------------------------------------------------------------------------
# Multishift CG


def multishift_cg(A: sps.csr_matrix, b: np.ndarray, shifts: np.ndarray,
                  rtol: float = 1e-10, maxiter: int = CG_DEFAULT_MAXITER
                  ) -> np.ndarray:
    """Solve (A + sigma_i I) x_i = b for all shifts from one CG recurrence.

    A must be symmetric positive semidefinite and every shift positive.  The
    seed system is the smallest shift; shifted iterates follow the standard
    zeta recurrences, and each shifted residual is zeta_i times the seed
    residual, which is what the stopping test uses.  Returns an array of
    shape (len(shifts), len(b)).
    """
    shifts = np.asarray(shifts, dtype=float)
    if np.any(shifts <= 0.0):
        raise SolveError("multishift_cg requires strictly positive shifts")
    ns, n = len(shifts), len(b)
    nb = np.linalg.norm(b)
    out = np.zeros((ns, n))
    if nb == 0.0:
        return out
    sigma0 = float(shifts.min())
    delta = shifts - sigma0

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    P = np.tile(b, (ns, 1))
    zeta, zeta_old = np.ones(ns), np.ones(ns)
    alpha_old, beta_old = 1.0, 0.0
    active = np.ones(ns, dtype=bool)

    matvec = lambda v: A @ v + sigma0 * v
    for k in range(1, maxiter + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            raise SolveError("multishift seed lost positive definiteness",
                             best_residual=math.sqrt(rr) / nb)
        alpha = rr / pAp
        denom = (alpha * beta_old * (zeta_old[active] - zeta[active])
                 + zeta_old[active] * alpha_old * (1.0 + delta[active] * alpha))
        zeta_new = (zeta[active] * zeta_old[active] * alpha_old) / denom
        alpha_sh = alpha * zeta_new / zeta[active]
        out[active] += alpha_sh[:, None] * P[active]
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        beta = rr_new / rr
        p = r + beta * p
        beta_sh = beta * (zeta_new / zeta[active]) ** 2
        P[active] = zeta_new[:, None] * r[None, :] + beta_sh[:, None] * P[active]
        zeta_old[active] = zeta[active]
        zeta[active] = zeta_new
        alpha_old, beta_old, rr = alpha, beta, rr_new
        res_seed = math.sqrt(rr) / nb
        res_sh = np.abs(zeta) * res_seed
        newly_done = active & (res_sh <= rtol)
        active &= ~newly_done
        if not active.any():
            break
    else:
        worst = float(np.max(np.abs(zeta[active])) * math.sqrt(rr) / nb)
        raise SolveError(f"multishift CG not converged within {maxiter} iterations",
                         best_residual=worst)

    # spot verification with true residuals on the extreme and middle shifts
    for i in {0, ns // 2, ns - 1, int(np.argmin(shifts)), int(np.argmax(shifts))}:
        res = np.linalg.norm(A @ out[i] + shifts[i] * out[i] - b) / nb
        if res > 50.0 * rtol:
            raise SolveError(f"multishift solution check failed at shift "
                             f"{shifts[i]:g}: residual {res:g}", best_residual=res)
    return out
