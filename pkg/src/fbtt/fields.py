"""
Periodic 2D grid fields: 5-point Laplacian spectrum, exact diffusion
propagator, Poisson solve, central-difference gradients and spectral
intensities.

Fields are ``(n, n)`` arrays indexed ``[ix, iy]``.  Transforms use numpy's
convention: unnormalized forward ``fft2``, ``1/n^2`` in ``ifft2``.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

_IMAG_TOL = 1e-10


def laplacian_spectrum(n: int, h: float) -> np.ndarray:
    """Eigenvalues of the periodic 5-point Laplacian, ``lam[kx, ky]``."""
    k = np.arange(n)
    lam1 = (2.0 * np.cos(2.0 * np.pi * k / n) - 2.0) / h ** 2
    return lam1[:, None] + lam1[None, :]


def apply_laplacian(field: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(field, 1, 0) + np.roll(field, -1, 0)
            + np.roll(field, 1, 1) + np.roll(field, -1, 1) - 4.0 * field) / h ** 2


def _real_part(z: np.ndarray, ref: np.ndarray) -> np.ndarray:
    scale = np.linalg.norm(ref)
    resid = np.linalg.norm(z.imag)
    if resid > _IMAG_TOL * max(scale, np.finfo(float).tiny):
        raise NumericalError(
            f"imaginary residue {resid:.3e} exceeds {_IMAG_TOL:g} * ||field|| = "
            f"{_IMAG_TOL * scale:.3e}")
    return z.real.copy()


def diffusion_exp(field: np.ndarray, t_eff: float, h: float) -> np.ndarray:
    """``exp(t_eff * Laplacian) field`` computed exactly in Fourier space."""
    if t_eff < 0:
        raise ValueError("diffusion time must be non-negative")
    if t_eff == 0:
        return np.array(field, dtype=float, copy=True)
    lam = laplacian_spectrum(field.shape[0], h)
    return _real_part(np.fft.ifft2(np.exp(t_eff * lam) * np.fft.fft2(field)), field)


def solve_poisson(rhs: np.ndarray, h: float) -> np.ndarray:
    """Zero-mean ``phi`` with ``Laplacian(phi) = rhs - mean(rhs)``."""
    lam = laplacian_spectrum(rhs.shape[0], h)
    rhat = np.fft.fft2(rhs)
    lam[0, 0] = 1.0
    phat = rhat / lam
    phat[0, 0] = 0.0
    return _real_part(np.fft.ifft2(phat), rhs)


def gradient(field: np.ndarray, h: float) -> tuple:
    """Central differences ``(f[i+1] - f[i-1]) / 2h`` along x and y."""
    gx = (np.roll(field, -1, 0) - np.roll(field, 1, 0)) / (2.0 * h)
    gy = (np.roll(field, -1, 1) - np.roll(field, 1, 1)) / (2.0 * h)
    return gx, gy


def spectral_intensity(ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    """``|fft2(Ex)|^2 + |fft2(Ey)|^2`` (unnormalized transform)."""
    return np.abs(np.fft.fft2(ex)) ** 2 + np.abs(np.fft.fft2(ey)) ** 2


def wavenumbers(n: int, h: float) -> np.ndarray:
    """Angular wavenumbers matching the fft2 bin order."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=h)
