"""
Electron density transport.

The electron continuity equation, in dimensionless form, is

    dn/dt / (psi sqrt(T_e)) = T_e Lap(n) + d/dx (a_x n) + d/dy (a_y n)

with

    a_x = V_0 / (v_Ti psi sqrt(T_e)) - g dphi/dy - dphi/dx
    a_y = e E_0 v_Ti / (T_i nu_in)  + g dphi/dx - dphi/dy,   g = 1 / (theta sqrt(T_e psi)).

The factor ``psi sqrt(T_e)`` is folded into the time step, so diffusion
runs for ``tau * psi sqrt(T_e) * T_e`` and advection is the conservative
transport ``dn/dt + div(u n) = 0`` with ``u = -psi sqrt(T_e) (a_x, a_y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DerivedScales, PhysicalParams
from .errors import CourantError
from .fields import diffusion_exp, gradient


@dataclass
class ElectronVelocityField:
    a_x: np.ndarray
    a_y: np.ndarray


def time_factor(p: PhysicalParams) -> float:
    return p.psi * math.sqrt(p.T_e)


def drift_terms(p: PhysicalParams, s: DerivedScales) -> tuple:
    """Constant parts of ``(a_x, a_y)``."""
    ax0 = s.V_0 / (s.v_Ti * p.psi * math.sqrt(p.T_e))
    ay0 = p.e_charge * p.E_0 * s.v_Ti / (p.T_i * p.nu_in)
    return ax0, ay0


def build_velocity_field(phi: np.ndarray, p: PhysicalParams, s: DerivedScales,
                         h: float) -> ElectronVelocityField:
    gx, gy = gradient(phi, h)
    g = 1.0 / (p.theta * math.sqrt(p.T_e * p.psi))
    ax0, ay0 = drift_terms(p, s)
    return ElectronVelocityField(ax0 - g * gy - gx, ay0 + g * gx - gy)


def electron_diffusion_step(n_e: np.ndarray, tau_e: float, p: PhysicalParams,
                            h: float) -> np.ndarray:
    return diffusion_exp(n_e, tau_e * time_factor(p) * p.T_e, h)


def courant_numbers(vel: ElectronVelocityField, tau_e: float, p: PhysicalParams,
                    h: float) -> tuple:
    k = time_factor(p) * tau_e / h
    return k * float(np.max(np.abs(vel.a_x))), k * float(np.max(np.abs(vel.a_y)))


def electron_advection_step(n_e: np.ndarray, vel: ElectronVelocityField, tau_e: float,
                            p: PhysicalParams, h: float) -> np.ndarray:
    """One Mac-Cormack predictor-corrector step of the flux form, periodic in x and y."""
    cx, cy = courant_numbers(vel, tau_e, p, h)
    if cx >= 1 or cy >= 1:
        raise CourantError(
            f"electron advection Courant numbers ({cx:.3g}, {cy:.3g}) must be < 1")
    tf = time_factor(p)
    ux = -tf * vel.a_x
    uy = -tf * vel.a_y
    lam = tau_e / h
    fx = ux * n_e
    fy = uy * n_e
    # forward differences in the predictor, backward in the corrector
    pred = n_e - lam * (np.roll(fx, -1, 0) - fx + np.roll(fy, -1, 1) - fy)
    fx = ux * pred
    fy = uy * pred
    return 0.5 * (n_e + pred - lam * (fx - np.roll(fx, 1, 0) + fy - np.roll(fy, 1, 1)))


def electron_substep_block(n_e: np.ndarray, vel: ElectronVelocityField, tau_half: float,
                           N_ext: int, p: PhysicalParams, h: float,
                           reverse: bool = False) -> np.ndarray:
    """``N_ext`` diffusion+advection pairs of size ``tau_half / N_ext``.

    With ``reverse`` each pair runs advection first, which mirrors the
    block so that forward and reversed halves compose symmetrically.
    """
    dt = tau_half / N_ext
    out = n_e
    for _ in range(N_ext):
        if reverse:
            out = electron_advection_step(out, vel, dt, p, h)
            out = electron_diffusion_step(out, dt, p, h)
        else:
            out = electron_diffusion_step(out, dt, p, h)
            out = electron_advection_step(out, vel, dt, p, h)
    return out
