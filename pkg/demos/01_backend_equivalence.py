"""
Run the scaled-down preset with both ion backends and compare them.

The dense backend stores the full 4D distribution; the tensor-train
backend stores three cores.  With the rounding tolerance pinned at 1e-10
the two traces should agree to about seven digits, while the TT state
occupies a small fraction of the memory.

    python demos/01_backend_equivalence.py
"""

import time

import numpy as np

from fbtt import Simulator, load_preset
from fbtt.diagnostics import comparison_table, summarize

cfg = load_preset("small_oracle")
g = cfg.grid
print(f"grid {g.n_x}^2 x {g.n_v}^2 = {g.n_x**2 * g.n_v**2} cells, {cfg.time.n_steps} steps")

results = {}
for backend in ("dense", "tt"):
    sim = Simulator(cfg, backend)
    t0 = time.perf_counter()
    state, records = sim.run()
    results[backend] = (sim, state, records)
    print(f"{backend:>5s}: {time.perf_counter() - t0:5.1f} s, final E_add "
          f"{records[-1].E_add_V_per_m:.6e} V/m, stored cells {records[-1].tt_cells}")

(dsim, dstate, drec), (tsim, tstate, trec) = results["dense"], results["tt"]
F = dsim.ions.to_dense(dstate.f)
err = np.linalg.norm(tsim.ions.to_dense(tstate.f) - F) / np.linalg.norm(F)
print(f"relative distance between final distributions: {err:.2e}")
print(f"final TT ranks: {tsim.ions.ranks(tstate.f)}")

# the E_add trace: a short transient followed by slow decay
for r in trec[:: max(1, len(trec) // 10)]:
    print(f"  t = {r.t_phys_s:.3e} s   E_add = {r.E_add_V_per_m:.5e} V/m   ranks = ({r.rank1}, {r.rank2})")

print()
print(comparison_table(summarize(drec, cfg.stats), summarize(trec, cfg.stats)))
