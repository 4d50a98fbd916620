"""
Tensor-Train vectors and matrix-product operators.

A TT vector of order ``d`` is a list of cores ``G_k`` of shape
``(r_{k-1}, n_k, r_k)`` with ``r_0 = r_d = 1``; the entry at
``(i_1, ..., i_d)`` is the product of the slices ``G_1[:, i_1, :] ...
G_d[:, i_d, :]``.  Dense conversions use C ordering, so the first mode is
the slowest one.

An MPO stores each core as an ``r_{k-1} x r_k`` grid of ``n_k x m_k``
blocks.  A block may be a dense array, a scipy sparse matrix, or ``None``
(zero).  This keeps shift and diagonal operators on large fused modes
cheap while still allowing the dense 4-way core to be materialized for
testing.

All tolerances are relative to the Frobenius norm of the tensor being
approximated.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "TTVector",
    "TTOperator",
    "RoundingReport",
    "tt_from_dense",
    "tt_to_dense",
    "tt_axpy",
    "tt_scale",
    "tt_dot",
    "tt_norm",
    "tt_round",
    "tt_random",
    "orthogonalize_left",
    "orthogonalize_right",
    "mpo_apply_exact",
    "amen_apply",
    "tt_approximate",
    "save_tt",
    "load_tt",
]


class TTShapeError(ValueError):
    pass


@dataclass
class TTVector:
    cores: list

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=float) for c in self.cores]
        if not self.cores:
            raise TTShapeError("a TT vector needs at least one core")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise TTShapeError("boundary TT ranks must be 1")
        for a, b in zip(self.cores[:-1], self.cores[1:]):
            if a.ndim != 3 or b.ndim != 3 or a.shape[2] != b.shape[0]:
                raise TTShapeError(
                    f"adjacent core ranks do not match: {a.shape} vs {b.shape}")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def size(self) -> int:
        """Number of stored floats."""
        return int(sum(c.size for c in self.cores))

    def copy(self) -> "TTVector":
        return TTVector([c.copy() for c in self.cores])

    def __neg__(self):
        return tt_scale(-1.0, self)

    def element(self, index: Sequence[int]) -> float:
        v = np.ones((1, 1))
        for c, i in zip(self.cores, index):
            v = v @ c[:, i, :]
        return float(v[0, 0])


@dataclass
class TTOperator:
    """Matrix product operator; ``blocks[k][a][b]`` is an ``n_k x m_k`` matrix or None."""

    blocks: list
    row_sizes: tuple = field(default=())
    col_sizes: tuple = field(default=())

    def __post_init__(self):
        if not self.row_sizes or not self.col_sizes:
            rows, cols = [], []
            for grid in self.blocks:
                shape = next(b.shape for row in grid for b in row if b is not None)
                rows.append(shape[0])
                cols.append(shape[1])
            self.row_sizes = tuple(rows)
            self.col_sizes = tuple(cols)
        if len(self.blocks[0]) != 1 or len(self.blocks[-1][0]) != 1:
            raise TTShapeError("boundary MPO ranks must be 1")
        for k in range(len(self.blocks) - 1):
            if len(self.blocks[k][0]) != len(self.blocks[k + 1]):
                raise TTShapeError(f"MPO rank mismatch between cores {k} and {k + 1}")

    @classmethod
    def from_cores(cls, cores: Sequence[np.ndarray]) -> "TTOperator":
        """Build from dense cores shaped ``(r0, n, m, r1)``."""
        blocks = []
        for c in cores:
            c = np.asarray(c, dtype=float)
            blocks.append([[c[a, :, :, b] for b in range(c.shape[3])]
                           for a in range(c.shape[0])])
        return cls(blocks)

    @classmethod
    def identity(cls, sizes: Sequence[int]) -> "TTOperator":
        return cls([[[sp.identity(n, format="csr")]] for n in sizes])

    @property
    def d(self) -> int:
        return len(self.blocks)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(len(grid[0]) for grid in self.blocks)

    def core(self, k: int) -> np.ndarray:
        grid = self.blocks[k]
        out = np.zeros((len(grid), self.row_sizes[k], self.col_sizes[k], len(grid[0])))
        for a, row in enumerate(grid):
            for b, blk in enumerate(row):
                if blk is not None:
                    out[a, :, :, b] = blk.toarray() if sp.issparse(blk) else blk
        return out

    def to_dense(self) -> np.ndarray:
        """Materialize as a ``prod(n) x prod(m)`` matrix (tests only)."""
        mat = np.ones((1, 1, 1))
        for k in range(self.d):
            c = self.core(k)
            # mat[(I), (J), a] x c[a, i, j, b] -> [(I i), (J j), b]
            t = np.einsum("IJa,aijb->IiJjb", mat, c)
            s = t.shape
            mat = t.reshape(s[0] * s[1], s[2] * s[3], s[4])
        return mat[:, :, 0]


@dataclass
class RoundingReport:
    achieved_relative_error: float
    final_ranks: tuple
    sweeps_used: int
    converged: bool = True
    norm_before: float = float("nan")
    norm_after: float = float("nan")


# ----------------------------------------------------------------------------
# low level helpers


def _svd(mat: np.ndarray):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        log.warning("SVD of a %s unfolding failed; using Gram eigendecomposition", mat.shape)
    # fallback: eigendecomposition of the smaller Gram matrix
    transpose = mat.shape[0] < mat.shape[1]
    a = mat.T if transpose else mat
    w, v = np.linalg.eigh(a.T @ a)
    order = np.argsort(w)[::-1]
    w, v = np.clip(w[order], 0.0, None), v[:, order]
    s = np.sqrt(w)
    nz = s > s[0] * 1e-15 if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    u = np.zeros((a.shape[0], s.size))
    u[:, nz] = (a @ v[:, nz]) / s[nz]
    vt = v.T
    if transpose:
        return vt.T, s, u.T
    return u, s, vt


def _chop(s: np.ndarray, delta: float) -> int:
    """Smallest rank r with ||s[r:]|| <= delta (at least 1)."""
    if s.size == 0:
        return 1
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]  # tail[r] = ||s[r:]||
    if delta <= 0:
        # numerical rank, same cut-off as numpy's matrix_rank
        r = int(np.count_nonzero(s > s[0] * max(s.size, 1) * np.finfo(float).eps))
    else:
        ok = np.nonzero(tail <= delta)[0]
        r = int(ok[0]) if ok.size else s.size
    return max(r, 1)


def _check_same_modes(x: TTVector, y: TTVector):
    if x.mode_sizes != y.mode_sizes:
        raise TTShapeError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")


def _zero_tt(sizes: Sequence[int]) -> TTVector:
    return TTVector([np.zeros((1, n, 1)) for n in sizes])


def orthogonalize_right(cores: Sequence[np.ndarray]) -> list:
    """QR sweep from the right; cores 1..d-1 become right-orthonormal."""
    cores = [c.copy() for c in cores]
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(-1, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return cores


def orthogonalize_left(cores: Sequence[np.ndarray]) -> list:
    """QR sweep from the left; cores 0..d-2 become left-orthonormal."""
    cores = [c.copy() for c in cores]
    for k in range(len(cores) - 1):
        r0, n, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0 * n, r1))
        cores[k] = q.reshape(r0, n, -1)
        cores[k + 1] = np.tensordot(r, cores[k + 1], axes=(1, 0))
    return cores


def _left_contract(L, a, b):
    # sum L[p, q] a[p, i, p'] b[q, i, q'] -> (p', q')
    tmp = np.tensordot(L, b, axes=(1, 0))
    return np.tensordot(a, tmp, axes=([0, 1], [0, 1]))


def _right_contract(R, a, b):
    # sum a[p, i, p'] b[q, i, q'] R[p', q'] -> (p, q)
    tmp = np.tensordot(b, R, axes=(2, 1))
    return np.tensordot(a, tmp, axes=([1, 2], [1, 2]))


def _project(L, core, R):
    # L (p, a), core (a, n, b), R (q, b) -> (p, n, q)
    tmp = np.tensordot(L, core, axes=(1, 0))
    return np.tensordot(tmp, R, axes=(2, 1))


# ----------------------------------------------------------------------------
# public operations


def tt_from_dense(X: np.ndarray, eps: float = 1e-14) -> TTVector:
    """TT-SVD of a dense array with relative Frobenius accuracy ``eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("input tensor has non-finite entries")
    sizes = X.shape
    d = len(sizes)
    nrm = np.linalg.norm(X)
    if nrm == 0:
        return _zero_tt(sizes)
    if d == 1:
        return TTVector([X.reshape(1, -1, 1).copy()])
    delta = eps / np.sqrt(d - 1) * nrm
    cores = []
    rest = X
    r = 1
    for k in range(d - 1):
        mat = rest.reshape(r * sizes[k], -1)
        u, s, vt = _svd(mat)
        rnew = _chop(s, delta)
        cores.append(u[:, :rnew].reshape(r, sizes[k], rnew))
        rest = s[:rnew, None] * vt[:rnew]
        r = rnew
    cores.append(rest.reshape(r, sizes[-1], 1))
    return TTVector(cores)


def tt_to_dense(x: TTVector) -> np.ndarray:
    out = np.ones((1, 1))
    for c in x.cores:
        out = np.tensordot(out, c, axes=(out.ndim - 1, 0))
    return out.reshape(x.mode_sizes)


def tt_scale(a: float, x: TTVector) -> TTVector:
    cores = [c.copy() for c in x.cores]
    cores[0] *= a
    return TTVector(cores)


def tt_axpy(a: float, x: TTVector, y: TTVector) -> TTVector:
    """Exact ``a*x + y``; interior ranks add up."""
    _check_same_modes(x, y)
    d = x.d
    if d == 1:
        return TTVector([a * x.cores[0] + y.cores[0]])
    cores = []
    for k, (cx, cy) in enumerate(zip(x.cores, y.cores)):
        if k == 0:
            cores.append(np.concatenate([a * cx, cy], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([cx, cy], axis=0))
        else:
            rx0, n, rx1 = cx.shape
            ry0, _, ry1 = cy.shape
            c = np.zeros((rx0 + ry0, n, rx1 + ry1))
            c[:rx0, :, :rx1] = cx
            c[rx0:, :, rx1:] = cy
            cores.append(c)
    return TTVector(cores)


def tt_dot(x: TTVector, y: TTVector) -> float:
    _check_same_modes(x, y)
    L = np.ones((1, 1))
    for cx, cy in zip(x.cores, y.cores):
        L = _left_contract(L, cx, cy)
    return float(L[0, 0])


def tt_norm(x: TTVector) -> float:
    # orthogonalization keeps the result accurate for differences of close tensors
    return float(np.linalg.norm(orthogonalize_right(x.cores)[0]))


def tt_round(x: TTVector, eps: float) -> tuple:
    """Truncate ranks so that ``||x - out|| <= eps ||x||``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = x.d
    cores = orthogonalize_right(x.cores)
    nrm = float(np.linalg.norm(cores[0]))
    if nrm == 0:
        z = _zero_tt(x.mode_sizes)
        return z, RoundingReport(0.0, z.ranks, 1, True, 0.0, 0.0)
    if d == 1:
        out = TTVector(cores)
        return out, RoundingReport(0.0, out.ranks, 1, True, nrm, nrm)
    delta = eps / np.sqrt(d - 1) * nrm
    discarded = 0.0
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0 * n, r1))
        r = _chop(s, delta)
        discarded += float(np.sum(s[r:] ** 2))
        cores[k] = u[:, :r].reshape(r0, n, r)
        cores[k + 1] = np.tensordot(s[:r, None] * vt[:r], cores[k + 1], axes=(1, 0))
    out = TTVector(cores)
    after = float(np.linalg.norm(cores[-1]))
    report = RoundingReport(np.sqrt(discarded) / nrm, out.ranks, 1, True, nrm, after)
    return out, report


def tt_random(sizes: Sequence[int], ranks: Sequence[int], rng=None) -> TTVector:
    """Gaussian random cores; ``ranks`` lists the d-1 interior ranks."""
    rng = np.random.default_rng(rng)
    full = [1, *ranks, 1]
    return TTVector([rng.standard_normal((full[k], n, full[k + 1]))
                     for k, n in enumerate(sizes)])


def _apply_core(grid, core: np.ndarray) -> np.ndarray:
    """Exact MPO-core times TT-core product, shape ``(ra*rx, n, rb*rx')``."""
    rx0, m, rx1 = core.shape
    ra, rb = len(grid), len(grid[0])
    n = next(b.shape[0] for row in grid for b in row if b is not None)
    if next(b.shape[1] for row in grid for b in row if b is not None) != m:
        raise TTShapeError("MPO column size does not match the vector mode size")
    xm = core.transpose(1, 0, 2).reshape(m, rx0 * rx1)
    out = np.zeros((ra, rx0, n, rb, rx1))
    for a, row in enumerate(grid):
        for b, blk in enumerate(row):
            if blk is None:
                continue
            y = blk @ xm
            out[a, :, :, b, :] = np.asarray(y).reshape(n, rx0, rx1).transpose(1, 0, 2)
    return out.reshape(ra * rx0, n, rb * rx1)


def mpo_apply_exact(A: TTOperator, x: TTVector) -> TTVector:
    """Exact product ``A x``; ranks multiply."""
    if A.d != x.d or tuple(A.col_sizes) != x.mode_sizes:
        raise TTShapeError(
            f"operator columns {A.col_sizes} do not match vector modes {x.mode_sizes}")
    return TTVector([_apply_core(g, c) for g, c in zip(A.blocks, x.cores)])


def tt_approximate(target: TTVector, guess: Optional[TTVector], eps: float,
                   max_sweeps: int = 4, kickrank: int = 4, seed: int = 0) -> tuple:
    """Approximate ``target`` at smaller ranks by alternating projections.

    Each sweep goes left to right.  The active core is the orthogonal
    projection of ``target`` onto the current interface bases, truncated by
    SVD at ``eps / sqrt(d-1)``.
    The new left basis is then enriched with ``kickrank`` directions of the
    projected residual, which is tracked as a separate low-rank TT.  Sweeps
    stop once every core changes by less than ``eps`` and the residual seen
    by the last core is below ``eps`` as well.

    When enrichment is on, one more sweep without it trims the added
    directions; ``sweeps_used`` counts the optimization sweeps only.

    The last core of the final sweep is an exact projection, so the result
    never has a larger norm than ``target``.
    """
    d = target.d
    sizes = target.mode_sizes
    if guess is None:
        guess = tt_random(sizes, [1] * (d - 1), seed)
    _check_same_modes(target, guess)
    W = target.cores
    scale = 0.0

    if d == 1:
        out = TTVector([W[0].copy()])
        return out, RoundingReport(0.0, out.ranks, 1, True)

    y = orthogonalize_right(guess.cores)
    # residual ranks cannot exceed the smaller unfolding size
    left_prod = np.cumprod(sizes)[:-1]
    right_prod = np.cumprod(sizes[::-1])[::-1][1:]
    kick = [min(kickrank, int(a), int(b)) for a, b in zip(left_prod, right_prod)]
    use_z = kickrank > 0
    if use_z:
        z = orthogonalize_right(tt_random(sizes, kick, seed).cores)

    delta_rel = eps / np.sqrt(d - 1)
    sweeps = 0
    max_dx = np.inf
    trunc_err2 = 0.0
    converged = False
    # after the last enriching sweep one plain sweep trims the added directions
    cleaning = False
    while True:
        sweeps += 1
        enrich = use_z and not cleaning
        if sweeps > 1:
            y = orthogonalize_right(y)
            if enrich:
                z = orthogonalize_right(z)
        # right interfaces
        Ryw = [None] * (d + 1)
        Ryw[d] = np.ones((1, 1))
        if enrich:
            Rzw = [None] * (d + 1)
            Rzy = [None] * (d + 1)
            Rzw[d] = np.ones((1, 1))
            Rzy[d] = np.ones((1, 1))
        for k in range(d - 1, 0, -1):
            Ryw[k] = _right_contract(Ryw[k + 1], y[k], W[k])
            if enrich:
                Rzw[k] = _right_contract(Rzw[k + 1], z[k], W[k])
                Rzy[k] = _right_contract(Rzy[k + 1], z[k], y[k])
        Lyw = np.ones((1, 1))
        Lzw = np.ones((1, 1))
        Lzy = np.ones((1, 1))
        max_dx = 0.0
        trunc_err2 = 0.0
        for k in range(d):
            cr = _project(Lyw, W[k], Ryw[k + 1])
            nrm = float(np.linalg.norm(cr))
            if k == d - 1:
                scale = nrm
            if nrm > 0:
                dx = float(np.linalg.norm(cr - y[k])) / nrm
            else:
                dx = 0.0 if np.linalg.norm(y[k]) == 0 else 1.0
            max_dx = max(max_dx, dx)
            if k == d - 1:
                y[k] = cr
                if enrich:
                    # residual seen through the left bases of z
                    crz = _project(Lzw, W[k], Rzw[k + 1]) - _project(Lzy, cr, Rzy[k + 1])
                    if nrm > 0:
                        max_dx = max(max_dx, float(np.linalg.norm(crz)) / nrm)
                break
            r0, n, r1 = cr.shape
            u, s, vt = _svd(cr.reshape(r0 * n, r1))
            r = _chop(s, delta_rel * nrm)
            trunc_err2 += float(np.sum(s[r:] ** 2))
            u = u[:, :r]
            v = (s[:r, None] * vt[:r]).T  # cr ~ u @ v.T
            ytr = (u @ v.T).reshape(r0, n, r1)
            if enrich:
                res = (_project(Lyw, W[k], Rzw[k + 1])
                       - np.tensordot(ytr, Rzy[k + 1], axes=(2, 1)))
                uk = np.concatenate([u, res.reshape(r0 * n, -1)], axis=1)
                u, R = np.linalg.qr(uk)
                v = np.concatenate([v, np.zeros((r1, res.shape[2]))], axis=1) @ R.T
                crz = (_project(Lzw, W[k], Rzw[k + 1])
                       - _project(Lzy, ytr, Rzy[k + 1]))
                rz0, _, rz1 = crz.shape
                qz, _ = np.linalg.qr(crz.reshape(rz0 * n, rz1))
                z[k] = qz.reshape(rz0, n, rz1)
            y[k] = u.reshape(r0, n, -1)
            y[k + 1] = np.tensordot(v.T, y[k + 1], axes=(1, 0))
            Lyw = _left_contract(Lyw, y[k], W[k])
            if enrich:
                Lzw = _left_contract(Lzw, z[k], W[k])
                Lzy = _left_contract(Lzy, z[k], y[k])
        if cleaning:
            break
        converged = bool(max_dx < eps)
        if converged or sweeps >= max_sweeps:
            opt_sweeps = sweeps
            if not enrich:
                break
            cleaning = True
    out = TTVector(y)
    after = float(np.linalg.norm(y[-1]))
    est = float(np.sqrt(trunc_err2) / scale) if scale > 0 else 0.0
    # the sweep change bounds the distance to the fixed point
    est = max(est, max_dx if not converged else 0.0)
    report = RoundingReport(est, out.ranks, opt_sweeps, converged, float("nan"), after)
    if not converged:
        log.warning("AMEn approximation did not converge in %d sweeps (change %.3e > %.3e)",
                    opt_sweeps, max_dx, eps)
    return out, report


def amen_apply(A: TTOperator, x: TTVector, guess: Optional[TTVector] = None,
               eps: float = 1e-10, max_sweeps: int = 4, kickrank: int = 4,
               seed: int = 0) -> tuple:
    """Approximate ``A x`` directly at near-optimal ranks.

    The local factors of ``A x`` are formed once; the sweeps only ever
    contract them against the low-rank iterate, so the full-rank product is
    never orthogonalized or decomposed.
    """
    target = mpo_apply_exact(A, x)
    if guess is None:
        guess = x
    if guess.mode_sizes != target.mode_sizes:
        raise TTShapeError("guess must have the mode sizes of the product")
    return tt_approximate(target, guess, eps, max_sweeps, kickrank, seed)


# ----------------------------------------------------------------------------
# binary snapshot
#
# header: b"FBTT" | uint32 version | uint32 d | uint64 n_1..n_d | uint64 r_0..r_d
# then the cores in order as little-endian float64, C order within each core.

_MAGIC = b"FBTT"
_VERSION = 1


def save_tt(x: TTVector, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, x.d))
        fh.write(struct.pack(f"<{x.d}Q", *x.mode_sizes))
        fh.write(struct.pack(f"<{x.d + 1}Q", *x.ranks))
        for c in x.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def load_tt(path) -> TTVector:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a TT snapshot")
    version, d = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = 12
    sizes = struct.unpack_from(f"<{d}Q", data, off)
    off += 8 * d
    ranks = struct.unpack_from(f"<{d + 1}Q", data, off)
    off += 8 * (d + 1)
    cores = []
    for k in range(d):
        shape = (ranks[k], sizes[k], ranks[k + 1])
        count = int(np.prod(shape))
        cores.append(np.frombuffer(data, dtype="<f8", count=count, offset=off)
                     .reshape(shape).astype(float))
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in TT snapshot")
    return TTVector(cores)
