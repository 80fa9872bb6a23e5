"""Two entangled qutrits from 29 conditional scans.

Arm B parks its detector at x_B; arm A sweeps.  Each fixed x_B gives a
different (unnormalised) conditional state in arm A, and one joint least
squares fit over all sweeps returns the 9x9 density matrix.
"""
# %%
import numpy as np

from scantomo import (
    DetectorSpec, Geometry, conditional_state, default_xb_positions, fidelity, max_entangled_state,
    measurement_operator, reconstruct_joint, simulate_conditional_set, werner_state,
)
from scantomo.forward import expected_scan
from scantomo.patterns import pattern_table

g = Geometry.multislit()
det = DetectorSpec(20.0)
grid = np.arange(-400.0, 400.0 + 1e-9, 5.0)
xb = default_xb_positions()
psi = max_entangled_state(3)

# %% pick the exposure that puts about 1e7 counts into an average scan
pat = pattern_table(g, det, grid)
for p in (0.0, 0.2, 0.5):
    rho = werner_state(psi, p)
    per_scan = np.mean([expected_scan(conditional_state(rho, measurement_operator(g, det, x)),
                                      pat, 1.0).sum() for x in xb])
    ss = simulate_conditional_set(rho, g, det, det, xb, grid, 1e7 / per_scan, seed=11)
    rep = reconstruct_joint(ss)
    print(f"p = {p:.1f}: F = {fidelity(rep.rho, psi):.4f} (expected {1 - p + p / 9:.4f}),"
          f" rank {rep.rank}, condition {rep.condition:.3g}")
