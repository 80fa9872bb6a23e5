"""One detector sweep, nine numbers: qutrit tomography from a single scan.

Simulate a Poisson scan of a random qutrit, then reconstruct it twice, once
with the finite-slit operators and once pretending the detector is a point.
"""
# %%
import warnings

import numpy as np

from scantomo import (
    DetectorSpec, Geometry, pattern_table, reconstruct_single, simulate_scan, state_fidelity,
)

rng = np.random.default_rng(7)
g = Geometry.multislit()
det = DetectorSpec(40.0)
grid = np.arange(-500.0, 500.0 + 1e-9, 5.0)
pat = pattern_table(g, det, grid)

a = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
rho = a @ a.conj().T
rho /= np.trace(rho).real

# %%
for exposure in (1e6, 1e7, 1e8):
    scan = simulate_scan(rho, pat, exposure, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        real = reconstruct_single(scan, g, det, "realistic")
        ideal = reconstruct_single(scan, g, det, "ideal")
    print(f"{scan.total:12.0f} counts | realistic F = {state_fidelity(real.rho, rho):.5f}"
          f" rss {real.rss_post:10.4g} | ideal F = {state_fidelity(ideal.rho, rho):.5f}"
          f" rss {ideal.rss_post:10.4g}")

# %% The ideal-detector fit stops improving: its error is bias, not noise.
np.set_printoptions(precision=3, suppress=True)
print("true rho:\n", rho)
print("realistic fit:\n", real.rho)
