"""Sparse assembly of the vector differential operator and its second-order pencil.

The operator acts on grid functions as

    T u = i^(m-1) * sum_l a_l(x) e_l D_l^m u

with D_l^m the centered m-th derivative along axis l and zero extension
outside the interior mask.  Left multiplication by i^(m-1) a_l(x) e_l is a
constant 8x8 real block scaled by the nodal coefficient, so T assembles as
sum_l kron(diag(a_l) @ D_l, C8_l) over interior nodes.  The pencil
Q_s = T^2 - 2 Re(s) T + |s|^2 I is formed by explicit sparse composition,
which makes the operator identity hold by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .domain import Grid, GridFunction
from .qalgebra import (CQuaternion, Quaternion, SlicePoint, cqmul,
                       left_mult_matrix8)

__all__ = [
    "QOperator",
    "OperatorError",
    "stencil_weights",
    "derivative_array",
    "assemble_T",
    "assemble_Qs",
    "identity_operator",
    "apply",
]


class OperatorError(ValueError):
    pass


def stencil_weights(m: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered finite-difference weights for the m-th derivative.

    Returns (offsets, weights) with weights for unit spacing; accuracy is
    `order` (2 or 4).  The half width is ceil(m/2) + order/2 - 1.
    """
    if m < 1:
        raise OperatorError("derivative order m must be >= 1")
    if order not in (2, 4):
        raise OperatorError("stencil_order must be 2 or 4")
    r = (m + 1) // 2 + order // 2 - 1
    offsets = np.arange(-r, r + 1)
    n = len(offsets)
    A = np.vander(offsets, n, increasing=True).T.astype(float)
    b = np.zeros(n)
    b[m] = math.factorial(m)
    w = np.linalg.solve(A, b)
    w[np.abs(w) < 1e-14 * np.max(np.abs(w))] = 0.0
    return offsets, w


def derivative_array(values: np.ndarray, grid: Grid, axis: int, m: int,
                     order: int = 2) -> np.ndarray:
    """Apply the centered D^m stencil along one axis with zero beyond the grid.

    `values` is a full-grid array (interior-supported); taps falling outside
    the array contribute zero, matching the zero-extension convention.
    """
    offsets, w = stencil_weights(m, order)
    out = np.zeros_like(values)
    n = values.shape[axis]
    for k, wk in zip(offsets, w):
        if wk == 0.0:
            continue
        src_lo, src_hi = max(0, k), min(n, n + k)
        dst_lo, dst_hi = max(0, -k), min(n, n - k)
        if src_lo >= src_hi:
            continue
        sl_src = [slice(None)] * values.ndim
        sl_dst = [slice(None)] * values.ndim
        sl_src[axis] = slice(src_lo, src_hi)
        sl_dst[axis] = slice(dst_lo, dst_hi)
        out[tuple(sl_dst)] += wk * values[tuple(sl_src)]
    out /= grid.h[axis] ** m
    return out


def _interior_stencil_matrix(grid: Grid, axis: int, m: int, order: int) -> sps.csr_matrix:
    """N x N matrix of D^m restricted to interior nodes (zero extension)."""
    offsets, w = stencil_weights(m, order)
    idx = grid.idx
    shape = grid.shape
    rows, cols, vals = [], [], []
    rows_idx = np.argwhere(grid.mask)
    base = idx[grid.mask]
    for k, wk in zip(offsets, w):
        if wk == 0.0:
            continue
        shifted = rows_idx.copy()
        shifted[:, axis] += k
        ok = (shifted[:, axis] >= 0) & (shifted[:, axis] < shape[axis])
        tgt = idx[shifted[ok, 0], shifted[ok, 1], shifted[ok, 2]]
        live = tgt >= 0
        rows.append(base[ok][live])
        cols.append(tgt[live])
        vals.append(np.full(live.sum(), wk / grid.h[axis] ** m))
    n = grid.n_interior
    return sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))


def _ipow(m: int) -> CQuaternion:
    """i^(m-1) as an algebra value."""
    one = CQuaternion.from_quaternion(Quaternion(1.0))
    i = CQuaternion(Quaternion(), Quaternion(1.0))
    out = one
    for _ in range((m - 1) % 4):
        out = cqmul(out, i)
    return out


@dataclass
class QOperator:
    """Right-linear operator as a sparse 8N x 8N real matrix over interior nodes."""

    mat: sps.csr_matrix
    grid: Grid
    m: int
    label: str            # 'T', 'Qs' or 'other'
    stencil_order: int = 2
    s0: float = 0.0       # pencil data, meaningful when label == 'Qs'
    s_abs2: float = 0.0

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    def apply_vec(self, vec: np.ndarray) -> np.ndarray:
        return self.mat @ vec

    def export_coo(self, path) -> None:
        """Write the matrix as text triples: block row, block col, 64 block values."""
        bsr = sps.bsr_matrix(self.mat, blocksize=(8, 8))
        with open(path, "w") as f:
            f.write("# block_row block_col b00 ... b77 (row-major 8x8 block)\n")
            indptr, indices, data = bsr.indptr, bsr.indices, bsr.data
            for i in range(len(indptr) - 1):
                for p in range(indptr[i], indptr[i + 1]):
                    flat = " ".join(format(v, ".17g") for v in data[p].ravel())
                    f.write(f"{i} {indices[p]} {flat}\n")


def assemble_T(grid: Grid, coeffs, m: int, stencil_order: int = 2) -> QOperator:
    """Assemble T = i^(m-1) sum_l a_l e_l D_l^m over the interior nodes."""
    offsets, _ = stencil_weights(m, stencil_order)
    r = int(offsets.max())
    for ax in range(3):
        if grid.shape[ax] < 2 * r + 1:
            raise OperatorError(
                f"grid too small for stencil: axis {ax + 1} has {grid.shape[ax]} "
                f"nodes, stencil needs {2 * r + 1}")
    ip = _ipow(m)
    units = (Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0), Quaternion(0, 0, 0, 1))
    mat = None
    for l in range(3):
        C8 = left_mult_matrix8(cqmul(ip, CQuaternion.from_quaternion(units[l])))
        D = _interior_stencil_matrix(grid, l, m, stencil_order)
        a_diag = sps.diags(coeffs.a(l)[grid.mask])
        term = sps.kron(a_diag @ D, sps.csr_matrix(C8), format="csr")
        mat = term if mat is None else mat + term
    mat.eliminate_zeros()
    return QOperator(mat, grid, m, "T", stencil_order)


def identity_operator(grid: Grid, scale: float = 1.0, m: int = 1) -> QOperator:
    """scale * identity; the scalar stand-in used by the quadrature oracles."""
    n = 8 * grid.n_interior
    return QOperator(sps.identity(n, format="csr") * scale, grid, m, "other")


def assemble_Qs(Top: QOperator, s) -> QOperator:
    """Q_s = T^2 - 2 Re(s) T + |s|^2 I by explicit sparse composition."""
    if Top.label == "Qs":
        raise OperatorError("assemble_Qs expects the base operator, not a pencil")
    if isinstance(s, SlicePoint):
        s0, abs2 = 0.0, float(s.t) ** 2
    elif isinstance(s, Quaternion):
        s0, abs2 = s.s0, s.norm() ** 2
    else:
        raise OperatorError("s must be a SlicePoint or Quaternion")
    mat = (Top.mat @ Top.mat).tocsr()
    if s0 != 0.0:
        mat = mat - 2.0 * s0 * Top.mat
    mat = mat + abs2 * sps.identity(Top.n, format="csr")
    return QOperator(mat.tocsr(), Top.grid, Top.m, "Qs", Top.stencil_order,
                     s0=s0, s_abs2=abs2)


def apply(op: QOperator, u: GridFunction) -> GridFunction:
    """Sparse matrix-vector product; the result is zero on exterior nodes."""
    if u.grid is not op.grid and u.grid.shape != op.grid.shape:
        raise OperatorError("operator and grid function shapes do not match")
    vec = op.mat @ u.interior_vector()
    return GridFunction.from_interior_vector(op.grid, vec)
