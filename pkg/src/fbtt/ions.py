"""
Ion phase-space transport and BGK relaxation.

The distribution ``f(x, y, v, w)`` lives on an ``n x n x n_v x n_v`` grid,
periodic in all four directions.  Dense arrays are indexed
``[ix, iy, iv, iw]``.  The TT form has three cores: a fused spatial mode of
size ``n^2`` with flat index ``ix + n * iy`` (x fastest), then ``v``, then
``w``.

Each of the four convections moves along one axis with a velocity that
does not depend on that axis, so a step is a 5-point Lagrange interpolation
at the departure point ("cross" scheme).  Shift ``S_k`` reads the value
``k`` cells ahead, ``(S_k f)_i = f_{i+k}``, and the update is
``sum_k alpha_k(c) S_k f`` with ``c = tau v / h``.  A positive velocity
pulls values from smaller indices.
"""

from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .config import GridSpec
from .errors import CourantError
from .fields import gradient
from .tt import (TTOperator, TTVector, amen_apply, mpo_apply_exact, tt_axpy,
                 tt_from_dense, tt_norm, tt_to_dense)

log = logging.getLogger(__name__)

SHIFTS = (-2, -1, 0, 1, 2)


def cross_coeffs(c, check: bool = True) -> np.ndarray:
    """Weights ``(alpha_-2, ..., alpha_2)`` stacked on a new leading axis."""
    c = np.asarray(c, dtype=float)
    if check and c.size and np.max(np.abs(c)) >= 1:
        raise CourantError(f"Courant number {np.max(np.abs(c)):.4g} must be < 1")
    return np.stack([
        c * (c + 1) * (c - 1) * (c + 2) / 24.0,
        -c * (c + 1) * (c + 2) * (c - 2) / 6.0,
        (c + 1) * (c - 1) * (c + 2) * (c - 2) / 4.0,
        -c * (c - 1) * (c + 2) * (c - 2) / 6.0,
        c * (c + 1) * (c - 1) * (c - 2) / 24.0,
    ])


def _courant(c: np.ndarray, what: str) -> None:
    cmax = float(np.max(np.abs(c))) if np.size(c) else 0.0
    if cmax >= 1:
        raise CourantError(f"{what}: Courant number {cmax:.4g} must be < 1")


def shift_matrix(n: int, k: int) -> sp.csr_matrix:
    """Periodic shift with ``(S_k f)_i = f_{(i+k) mod n}``."""
    i = np.arange(n)
    return sp.csr_matrix((np.ones(n), (i, (i + k) % n)), shape=(n, n))


def fused_shift(n: int, k: int, axis: int) -> sp.csr_matrix:
    """Shift along x (axis 0) or y (axis 1) acting on the fused spatial index."""
    s, eye = shift_matrix(n, k), sp.identity(n, format="csr")
    return sp.kron(eye, s, format="csr") if axis == 0 else sp.kron(s, eye, format="csr")


def fuse(field: np.ndarray) -> np.ndarray:
    return np.asarray(field).ravel(order="F")


def unfuse(vec: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(vec).reshape(n, n, order="F")


def dense_to_tt(F: np.ndarray, eps: float = 0.0) -> TTVector:
    n, _, nv, _ = F.shape
    return tt_from_dense(F.transpose(1, 0, 2, 3).reshape(n * n, nv, nv), eps)


def tt_to_dense4(f: TTVector) -> np.ndarray:
    N, nv, _ = f.mode_sizes
    n = int(round(math.sqrt(N)))
    return tt_to_dense(f).reshape(n, n, nv, nv).transpose(1, 0, 2, 3)


def gaussian(grid: GridSpec) -> np.ndarray:
    """Sampled ``exp(-v^2/2)``."""
    return np.exp(-grid.v ** 2 / 2.0)


def quadrature_mass(grid: GridSpec) -> float:
    """Rectangle-rule mass of the 1D normalized Gaussian (ideally 1)."""
    return float(np.sum(gaussian(grid)) * grid.h_v / math.sqrt(2.0 * math.pi))


def potential_drift(phi: np.ndarray, grid: GridSpec, drive: float) -> tuple:
    """Velocity-space drift ``(V_v, V_w) = (-dphi/dx, drive - dphi/dy)``."""
    gx, gy = gradient(phi, grid.h)
    return -gx, drive - gy


# ----------------------------------------------------------------------------
# propagators in MPO form


def build_Mx(grid: GridSpec, tau_sub: float) -> TTOperator:
    c = tau_sub * grid.v / grid.h
    _courant(c, "x convection (largest |v| on the grid)")
    alpha = cross_coeffs(c, check=False)
    n, nv = grid.n_x, grid.n_v
    return TTOperator([
        [[fused_shift(n, k, 0) for k in SHIFTS]],
        [[sp.diags(a)] for a in alpha],
        [[sp.identity(nv, format="csr")]],
    ])


def build_My(grid: GridSpec, tau_sub: float) -> TTOperator:
    c = tau_sub * grid.v / grid.h
    _courant(c, "y convection (largest |w| on the grid)")
    alpha = cross_coeffs(c, check=False)
    n, nv = grid.n_x, grid.n_v
    eye = sp.identity(nv, format="csr")
    return TTOperator([
        [[fused_shift(n, k, 1) for k in SHIFTS]],
        [[eye if a == b else None for b in range(5)] for a in range(5)],
        [[sp.diags(a)] for a in alpha],
    ])


def build_Mv(phi: np.ndarray, grid: GridSpec, tau_sub: float) -> TTOperator:
    Vv, _ = potential_drift(phi, grid, 0.0)
    c = tau_sub * Vv / grid.h_v
    _courant(c, "v convection (-dphi/dx)")
    alpha = cross_coeffs(c, check=False)
    nv = grid.n_v
    return TTOperator([
        [[sp.diags(fuse(a)) for a in alpha]],
        [[shift_matrix(nv, k)] for k in SHIFTS],
        [[sp.identity(nv, format="csr")]],
    ])


def build_Mw(phi: np.ndarray, grid: GridSpec, tau_sub: float, drive: float) -> TTOperator:
    _, Vw = potential_drift(phi, grid, drive)
    c = tau_sub * Vw / grid.h_v
    _courant(c, "w convection (drive - dphi/dy)")
    alpha = cross_coeffs(c, check=False)
    nv = grid.n_v
    eye = sp.identity(nv, format="csr")
    return TTOperator([
        [[sp.diags(fuse(a)) for a in alpha]],
        [[eye if a == b else None for b in range(5)] for a in range(5)],
        [[shift_matrix(nv, k)] for k in SHIFTS],
    ])


def relaxation_matrix(grid: GridSpec) -> np.ndarray:
    """``(h_v / sqrt(2 pi)) e 1^T``: the 1D factor of the Maxwellian projector."""
    e = gaussian(grid)
    return np.outer(grid.h_v / math.sqrt(2.0 * math.pi) * e, np.ones(grid.n_v))


def build_Mr(grid: GridSpec, tau_half: float) -> TTOperator:
    """Exact BGK propagator ``e^-t I + (1 - e^-t) E`` as a rank-2 MPO."""
    if tau_half < 0:
        raise ValueError("relaxation time must be non-negative")
    a = math.exp(-tau_half)
    N = grid.n_x ** 2
    B = relaxation_matrix(grid)
    eye = sp.identity(grid.n_v, format="csr")
    return TTOperator([
        [[sp.identity(N, format="csr"), sp.identity(N, format="csr")]],
        [[a * eye, None], [None, (1.0 - a) * B]],
        [[eye], [B]],
    ])


# ----------------------------------------------------------------------------
# dense stencils (same coefficients as the MPOs)


def cross_apply(F: np.ndarray, alpha: np.ndarray, axis: int) -> np.ndarray:
    """``sum_k alpha_k * roll(F, -k, axis)``; ``alpha[j]`` broadcasts against F."""
    out = np.zeros_like(F)
    for a, k in zip(alpha, SHIFTS):
        out += a * np.roll(F, -k, axis=axis)
    return out


def dense_convect_x(F, grid, tau_sub):
    c = tau_sub * grid.v / grid.h
    _courant(c, "x convection (largest |v| on the grid)")
    return cross_apply(F, cross_coeffs(c, False)[:, None, None, :, None], 0)


def dense_convect_y(F, grid, tau_sub):
    c = tau_sub * grid.v / grid.h
    _courant(c, "y convection (largest |w| on the grid)")
    return cross_apply(F, cross_coeffs(c, False)[:, None, None, None, :], 1)


def dense_convect_v(F, phi, grid, tau_sub):
    Vv, _ = potential_drift(phi, grid, 0.0)
    c = tau_sub * Vv / grid.h_v
    _courant(c, "v convection (-dphi/dx)")
    return cross_apply(F, cross_coeffs(c, False)[:, :, :, None, None], 2)


def dense_convect_w(F, phi, grid, tau_sub, drive):
    _, Vw = potential_drift(phi, grid, drive)
    c = tau_sub * Vw / grid.h_v
    _courant(c, "w convection (drive - dphi/dy)")
    return cross_apply(F, cross_coeffs(c, False)[:, :, :, None, None], 3)


def dense_relax(F, grid, tau_half):
    a = math.exp(-tau_half)
    e = gaussian(grid)
    ni = compute_ni(F, grid)
    f0 = ni[:, :, None, None] * (e[:, None] * e[None, :])[None, None] / (2.0 * math.pi)
    return a * F + (1.0 - a) * f0


def compute_ni(f, grid: GridSpec) -> np.ndarray:
    """Rectangle-rule density ``sum_{v,w} f h_v^2`` as an ``(n, n)`` field."""
    hv2 = grid.h_v ** 2
    if isinstance(f, TTVector):
        c0, c1, c2 = f.cores
        vel = c1.sum(axis=1) @ c2.sum(axis=1)  # (r1, 1)
        return unfuse(c0[0] @ vel[:, 0], grid.n_x) * hv2
    return np.asarray(f).sum(axis=(2, 3)) * hv2


def maxwellian_dense(n_i: np.ndarray, grid: GridSpec) -> np.ndarray:
    g = gaussian(grid) / math.sqrt(2.0 * math.pi)
    return n_i[:, :, None, None] * (g[:, None] * g[None, :])[None, None]


def maxwellian_tt(n_i: np.ndarray, grid: GridSpec) -> TTVector:
    g = gaussian(grid) / math.sqrt(2.0 * math.pi)
    return TTVector([fuse(n_i).reshape(1, -1, 1), g.reshape(1, -1, 1), g.reshape(1, -1, 1)])


# ----------------------------------------------------------------------------
# solver backends


class DenseIons:
    """Full-array ion solver; the reference for the TT path."""

    name = "dense"

    def __init__(self, grid: GridSpec, drive: float):
        self.grid = grid
        self.drive = drive

    def maxwellian(self, n_i):
        return maxwellian_dense(n_i, self.grid)

    def convection_block(self, f, phi, tau_sub, eps=None, reverse=False):
        g = self.grid
        steps = [
            lambda F: dense_convect_x(F, g, tau_sub),
            lambda F: dense_convect_y(F, g, tau_sub),
            lambda F: dense_convect_v(F, phi, g, tau_sub),
            lambda F: dense_convect_w(F, phi, g, tau_sub, self.drive),
        ]
        if reverse:
            steps = steps[::-1]
        for step in steps:
            f = step(f)
        return f

    def reaction(self, f, tau_sub, eps=None):
        return dense_relax(f, self.grid, tau_sub)

    def density(self, f):
        return compute_ni(f, self.grid)

    def relative_change(self, new, old) -> float:
        return float(np.linalg.norm(new - old) / np.linalg.norm(old))

    def norm(self, f) -> float:
        return float(np.linalg.norm(f))

    def ranks(self, f):
        return None

    def cells(self, f) -> int:
        return int(f.size)

    def to_dense(self, f):
        return f


class TTIons:
    """Ion solver on the three-core TT layout with AMEn rounding after every operator.

    ``check_norms`` also forms the exact product norm for each rounding and
    stores ``(before, after)`` pairs in ``norm_log``; it is meant for small
    grids.
    """

    name = "tt"

    def __init__(self, grid: GridSpec, drive: float, kickrank: int = 4, max_sweeps: int = 4,
                 check_norms: bool = False):
        self.grid = grid
        self.drive = drive
        self.kickrank = kickrank
        self.max_sweeps = max_sweeps
        self.check_norms = check_norms
        self.reports = []
        self.norm_log = []
        self._static = {}

    def maxwellian(self, n_i):
        return maxwellian_tt(n_i, self.grid)

    def _static_op(self, key, build):
        # x/y convection and relaxation depend only on the step size
        if key not in self._static:
            self._static[key] = build()
        return self._static[key]

    def _round_apply(self, A: TTOperator, f: TTVector, eps: float, label: str) -> TTVector:
        out, rep = amen_apply(A, f, guess=f, eps=eps, max_sweeps=self.max_sweeps,
                              kickrank=self.kickrank)
        if self.check_norms:
            rep.norm_before = tt_norm(mpo_apply_exact(A, f))
            self.norm_log.append((rep.norm_before, tt_norm(out)))
        if not rep.converged:
            log.warning("%s: rounding not converged, estimated error %.3e (target %.3e)",
                        label, rep.achieved_relative_error, eps)
        self.reports.append((label, rep))
        return out

    def convection_block(self, f, phi, tau_sub, eps, reverse=False):
        g = self.grid
        ops = [
            ("Mx", self._static_op(("Mx", tau_sub), lambda: build_Mx(g, tau_sub))),
            ("My", self._static_op(("My", tau_sub), lambda: build_My(g, tau_sub))),
            ("Mv", build_Mv(phi, g, tau_sub)),
            ("Mw", build_Mw(phi, g, tau_sub, self.drive)),
        ]
        if reverse:
            ops = ops[::-1]
        for label, A in ops:
            f = self._round_apply(A, f, eps, label)
        return f

    def reaction(self, f, tau_sub, eps):
        A = self._static_op(("Mr", tau_sub), lambda: build_Mr(self.grid, tau_sub))
        return self._round_apply(A, f, eps, "Mr")

    def density(self, f):
        return compute_ni(f, self.grid)

    def relative_change(self, new, old) -> float:
        return tt_norm(tt_axpy(-1.0, old, new)) / tt_norm(old)

    def norm(self, f) -> float:
        return tt_norm(f)

    def ranks(self, f):
        return f.ranks[1], f.ranks[2]

    def cells(self, f) -> int:
        return f.size

    def to_dense(self, f):
        return tt_to_dense4(f)


def make_backend(name: str, grid: GridSpec, drive: float, kickrank: int = 4,
                 max_sweeps: int = 4, check_norms: bool = False):
    if name == "dense":
        return DenseIons(grid, drive)
    if name == "tt":
        return TTIons(grid, drive, kickrank, max_sweeps, check_norms)
    raise ValueError(f"unknown backend {name!r}")
