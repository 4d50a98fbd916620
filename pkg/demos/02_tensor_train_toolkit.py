"""
Tour of the tensor-train layer used by the ion backend.

1. Compress a smooth 4D function and watch the ranks follow the tolerance.
2. Build the x-convection operator and apply it two ways: exactly (ranks
   multiply, then round) and with the alternating AMEn solver, which never
   forms the large intermediate.

    python demos/02_tensor_train_toolkit.py
"""

import numpy as np

from fbtt import ions
from fbtt.config import GridSpec
from fbtt.tt import amen_apply, mpo_apply_exact, tt_round, tt_to_dense

g = GridSpec(n_x=16, n_v=15, L=8.0, v_max=6.0)
X, Y = np.meshgrid(g.x, g.x, indexing="ij")
k = 2 * np.pi / g.L

# a drifting, slightly anisotropic Maxwellian: not separable, but low rank
V, W = np.meshgrid(g.v, g.v, indexing="ij")
n = 1 + 0.3 * np.sin(k * X) * np.cos(k * Y)
drift = 0.2 * np.cos(k * X)
F = n[:, :, None, None] * np.exp(-((V - drift[:, :, None, None]) ** 2 + W ** 2) / 2) / (2 * np.pi)

print("compression of a 16^2 x 15^2 distribution")
for eps in (1e-2, 1e-4, 1e-8, 1e-12):
    f = ions.dense_to_tt(F, eps)
    back = ions.tt_to_dense4(f)
    err = np.linalg.norm(back - F) / np.linalg.norm(F)
    print(f"  eps {eps:7.0e}: ranks {f.ranks[1:3]}, {f.size:6d} numbers "
          f"(dense {F.size}), error {err:.1e}")

f = ions.dense_to_tt(F, 1e-10)
Mx = ions.build_Mx(g, tau_sub=0.05)
print(f"\nx-convection operator ranks {Mx.ranks}")

exact = mpo_apply_exact(Mx, f)
rounded, _ = tt_round(exact, 1e-10)
fast, report = amen_apply(Mx, f, guess=f, eps=1e-10)
ref = tt_to_dense(exact)
print(f"exact product ranks {exact.ranks}, after rounding {rounded.ranks}")
print(f"AMEn result ranks {fast.ranks} in {report.sweeps_used} sweep(s)")
print(f"AMEn vs exact: {np.linalg.norm(tt_to_dense(fast) - ref) / np.linalg.norm(ref):.1e}")

# the same update on the dense array, for reference
dense = ions.dense_convect_x(F, g, 0.05)
print(f"TT vs dense update: "
      f"{np.linalg.norm(ions.tt_to_dense4(fast) - dense) / np.linalg.norm(dense):.1e}")
