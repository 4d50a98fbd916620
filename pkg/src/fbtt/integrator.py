"""
Time stepping for the coupled electron fluid / ion kinetic system.

One macro step of size ``tau``:

1. predictor: advance ions (four convections, then relaxation) and
   electrons by ``tau/2`` with the potential of the current state, and
   solve Poisson there.  The resulting potential is frozen for the rest
   of the step.
2. corrector, each stage of length ``tau/2``: ion convections, ion
   relaxation, electron diffusion/advection sub-steps, the mirrored
   electron sub-steps, ion relaxation, ion convections in reverse order.

The corrector is a palindrome, which is what makes the split scheme
second order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .config import SimConfig, config_hash, derive_scales, dump_config, physical_time
from .diagnostics import (DiagnosticsRecord, compute_E_add, field_unit, load_array,
                          save_array, tt_cell_count)
from .electrons import build_velocity_field, electron_substep_block
from .errors import NumericalError
from .fields import solve_poisson
from .ions import make_backend, quadrature_mass
from .tt import TTVector, load_tt, save_tt

log = logging.getLogger(__name__)


@dataclass
class SystemState:
    n_e: np.ndarray
    f: Any
    phi: np.ndarray
    t_index: int
    eps_current: float


def draw_noise(seed: int, n: int) -> tuple:
    """Unit Gaussian noise for ``n_e`` then ``n_i``, each drawn row-major."""
    rng = np.random.Generator(np.random.PCG64(seed))
    xi_e = rng.standard_normal((n, n))
    xi_i = rng.standard_normal((n, n))
    return xi_e, xi_i, rng


class Simulator:
    """Advance one backend (``"tt"`` or ``"dense"``) under a fixed config."""

    def __init__(self, cfg: SimConfig, backend: str = "tt", check_norms: bool = False):
        self.cfg = cfg
        self.scales = derive_scales(cfg.physics)
        self.backend = backend
        self.ions = make_backend(backend, cfg.grid, self.scales.drive, cfg.tol.kickrank,
                                 cfg.tol.max_sweeps, check_norms)
        self.e_unit = field_unit(cfg.physics, self.scales)
        self.rng_state = None

    # -- building blocks -----------------------------------------------------

    @property
    def h(self) -> float:
        return self.cfg.grid.h

    def potential(self, n_e: np.ndarray, n_i: np.ndarray) -> np.ndarray:
        coeff = self.scales.poisson_coeff * self.cfg.poisson_coeff_scale
        return solve_poisson(coeff * (n_e - n_i), self.h)

    def E_add(self, phi: np.ndarray) -> float:
        return compute_E_add(phi, self.h, self.e_unit)

    def _electrons(self, n_e, phi, tau_half, mirrored):
        p = self.cfg.physics
        vel = build_velocity_field(phi, p, self.scales, self.h)
        out = electron_substep_block(n_e, vel, tau_half, self.cfg.time.N_ext, p, self.h)
        if mirrored:
            out = electron_substep_block(out, vel, tau_half, self.cfg.time.N_ext, p, self.h,
                                         reverse=True)
        return out

    # -- public API ----------------------------------------------------------

    def initialize(self, seed: Optional[int] = None, target_ratio: Optional[float] = None
                   ) -> SystemState:
        """Noisy uniform plasma calibrated to a prescribed mean field."""
        cfg = self.cfg
        seed = cfg.init.seed if seed is None else seed
        ratio = cfg.init.target_ratio if target_ratio is None else target_ratio
        n, n0 = cfg.grid.n_x, cfg.physics.n_0
        xi_e, xi_i, rng = draw_noise(seed, n)
        if np.ptp(xi_e) == 0 or np.ptp(xi_i) == 0:
            raise NumericalError(f"degenerate noise for seed {seed}; choose another seed")
        self.rng_state = rng.bit_generator.state
        mass = quadrature_mass(cfg.grid) ** 2
        unit_field = self.E_add(self.potential(xi_e, mass * xi_i))
        if unit_field == 0:
            raise NumericalError(f"noise for seed {seed} produces no field; choose another seed")
        amp = ratio * cfg.physics.E_0 / unit_field
        n_e = n0 + amp * xi_e
        f = self.ions.maxwellian(n0 + amp * xi_i)
        phi = self.potential(n_e, self.ions.density(f))
        return SystemState(n_e, f, phi, 0, cfg.tol.eps_initial)

    def state_from_densities(self, n_e: np.ndarray, n_i: np.ndarray) -> SystemState:
        """Local-equilibrium state with the given densities (no noise, no calibration)."""
        f = self.ions.maxwellian(np.asarray(n_i, dtype=float))
        n_e = np.array(n_e, dtype=float)
        return SystemState(n_e, f, self.potential(n_e, self.ions.density(f)), 0,
                           self.cfg.tol.eps_initial)

    def predictor(self, state: SystemState, tau: Optional[float] = None) -> tuple:
        """Half-step state and the potential frozen for the corrector."""
        tau = self.cfg.time.tau if tau is None else tau
        half, eps = tau / 2.0, state.eps_current
        f = self.ions.convection_block(state.f, state.phi, half, eps)
        f = self.ions.reaction(f, half, eps)
        n_e = self._electrons(state.n_e, state.phi, half, mirrored=False)
        phi = self.potential(n_e, self.ions.density(f))
        return SystemState(n_e, f, phi, state.t_index, eps), phi

    def macro_step(self, state: SystemState, tau: Optional[float] = None) -> SystemState:
        tau = self.cfg.time.tau if tau is None else tau
        half, eps = tau / 2.0, state.eps_current
        _, phi = self.predictor(state, tau)
        f = self.ions.convection_block(state.f, phi, half, eps)
        f = self.ions.reaction(f, half, eps)
        n_e = self._electrons(state.n_e, phi, half, mirrored=True)
        f = self.ions.reaction(f, half, eps)
        f = self.ions.convection_block(f, phi, half, eps, reverse=True)
        if not np.all(np.isfinite(n_e)):
            raise NumericalError(f"non-finite electron density at step {state.t_index + 1}")
        n_i = self.ions.density(f)
        if not np.all(np.isfinite(n_i)):
            raise NumericalError(f"non-finite ion density at step {state.t_index + 1}")
        change = self.ions.relative_change(f, state.f)
        return SystemState(n_e, f, self.potential(n_e, n_i), state.t_index + 1,
                           self.cfg.tol.next_eps(change))

    def record(self, state: SystemState, elapsed: float,
               eps_used: Optional[float] = None) -> DiagnosticsRecord:
        """Diagnostics of ``state``; ``eps_used`` is the tolerance of the step that made it."""
        g = self.cfg.grid
        ranks = self.ions.ranks(state.f)
        cells = self.ions.cells(state.f)
        if ranks is not None and cells != tt_cell_count(g.n_x, g.n_v, *ranks):
            raise NumericalError(f"TT cell count {cells} disagrees with ranks {ranks}")
        r1, r2 = ranks if ranks is not None else (None, None)
        return DiagnosticsRecord(
            step=state.t_index,
            t_phys_s=physical_time(state.t_index, self.cfg.time.tau, self.cfg.physics.nu_in),
            E_add_V_per_m=self.E_add(state.phi),
            mean_ni=float(np.mean(self.ions.density(state.f))),
            rank1=r1, rank2=r2, tt_cells=cells, cpu_s=elapsed,
            eps=state.eps_current if eps_used is None else eps_used)

    def run(self, state: Optional[SystemState] = None, n_steps: Optional[int] = None,
            sink: Optional[Callable[[DiagnosticsRecord], None]] = None,
            checkpoint_dir=None, checkpoint_every: Optional[int] = None,
            elapsed0: float = 0.0) -> tuple:
        """Step until ``n_steps`` (absolute index); returns ``(state, records)``.

        One record is emitted per completed macro step, so a zero-step run
        emits none.  Checkpoints are written to ``checkpoint_dir`` every
        ``checkpoint_every`` steps and after the last one.
        """
        n_steps = self.cfg.time.n_steps if n_steps is None else n_steps
        every = self.cfg.checkpoint_every if checkpoint_every is None else checkpoint_every
        records = []

        def emit(rec):
            records.append(rec)
            if sink is not None:
                sink(rec)

        start = time.perf_counter() - elapsed0
        if state is None:
            state = self.initialize()
        while state.t_index < n_steps:
            eps_used = state.eps_current
            state = self.macro_step(state)
            elapsed = time.perf_counter() - start
            emit(self.record(state, elapsed, eps_used))
            if checkpoint_dir is not None and every and state.t_index % every == 0:
                save_checkpoint(self, state, checkpoint_dir, elapsed)
                if hasattr(sink, "flush"):
                    sink.flush()
        if checkpoint_dir is not None:
            save_checkpoint(self, state, checkpoint_dir, time.perf_counter() - start)
        return state, records


# ----------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is a directory with meta.json, config.toml, raw n_e and phi
# arrays, and f either as a TT snapshot (f.fbtt) or a raw 4D array (f.bin).


def save_checkpoint(sim: Simulator, state: SystemState, directory, elapsed: float = 0.0) -> Path:
    d = Path(directory)
    tmp = d.with_name(d.name + ".partial")
    tmp.mkdir(parents=True, exist_ok=True)
    chash = config_hash(sim.cfg)
    save_array(state.n_e, tmp / "n_e.bin", chash, "[ix, iy]")
    save_array(state.phi, tmp / "phi.bin", chash, "[ix, iy]")
    if isinstance(state.f, TTVector):
        save_tt(state.f, tmp / "f.fbtt")
    else:
        save_array(state.f, tmp / "f.bin", chash, "[ix, iy, iv, iw]")
    (tmp / "config.toml").write_text(dump_config(sim.cfg))
    meta = {"config_hash": chash, "backend": sim.backend, "step": state.t_index,
            "eps_current": state.eps_current, "elapsed_s": elapsed,
            "rng_state": sim.rng_state}
    (tmp / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    # swap in only once complete, so a crash leaves the previous checkpoint
    if d.exists():
        old = d.with_name(d.name + ".old")
        d.rename(old)
        tmp.rename(d)
        for p in old.iterdir():
            p.unlink()
        old.rmdir()
    else:
        tmp.rename(d)
    return d


def load_checkpoint(directory) -> tuple:
    """Return ``(state, meta)``; the config lives in ``directory/config.toml``."""
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    n_e, _ = load_array(d / "n_e.bin")
    phi, _ = load_array(d / "phi.bin")
    f = load_tt(d / "f.fbtt") if (d / "f.fbtt").exists() else load_array(d / "f.bin")[0]
    return SystemState(n_e, f, phi, int(meta["step"]), float(meta["eps_current"])), meta
