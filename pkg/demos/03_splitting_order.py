"""
Temporal convergence of the split scheme on the dense backend.

Start from a smooth local-equilibrium state, integrate to a fixed time with
steps tau0, tau0/2, tau0/4, tau0/8, and measure the distance to a tau0/16
reference.  The fitted slope of log(error) against log(tau) is the
observed order, which should be close to two.

    python demos/03_splitting_order.py
"""

import numpy as np

from fbtt import Simulator, load_preset
from fbtt.config import TimeSpec

cfg = load_preset("small_oracle")
g, n0 = cfg.grid, cfg.physics.n_0
X, Y = np.meshgrid(g.x, g.x, indexing="ij")
k = 2 * np.pi / g.L
n_e = n0 * (1 + 1e-3 * np.sin(k * X) * np.cos(k * Y))
n_i = n0 * (1 + 1e-3 * np.cos(k * X + 0.3))

tau0, T = 0.04, 0.16
finals = {}
for m in (1, 2, 4, 8, 16):
    tau = tau0 / m
    steps = int(round(T / tau))
    sim = Simulator(cfg.replace(time=TimeSpec(tau, steps, cfg.time.N_ext)), "dense")
    st = sim.state_from_densities(n_e, n_i)
    for _ in range(steps):
        st = sim.macro_step(st)
    finals[m] = st

ref = finals[16]
taus, errs = [], []
print(f"{'tau':>8s} {'f error':>10s} {'n_e error':>10s}")
for m in (1, 2, 4, 8):
    ef = np.linalg.norm(finals[m].f - ref.f) / np.linalg.norm(ref.f)
    ee = np.linalg.norm(finals[m].n_e - ref.n_e) / np.linalg.norm(ref.n_e)
    taus.append(tau0 / m)
    errs.append((ef, ee))
    print(f"{tau0 / m:8.4f} {ef:10.3e} {ee:10.3e}")

errs = np.array(errs)
for j, name in enumerate(("f", "n_e")):
    slope = np.polyfit(np.log(taus), np.log(errs[:, j]), 1)[0]
    print(f"observed order ({name}): {slope:.2f}")
