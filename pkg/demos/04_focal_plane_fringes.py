"""Moving the arm-B detector in the focal plane slides arm A's fringes.

For the entangled state the arm-A fringe phase is a straight line in x_B;
for the maximally mixed state the fringes vanish.
"""
# %%
import warnings

import numpy as np

from scantomo import Geometry, max_entangled_state, werner_state
from scantomo.bipartite import fringe_frequency, phase_line, positions_for_phase, verification_scans

g = Geometry.multislit()
g = g.with_z(g.focal_length)
xb = positions_for_phase(g, np.linspace(-np.pi / 2, np.pi / 2, 5))

summaries = verification_scans(werner_state(max_entangled_state(), 0.0), g, xb)
for s in summaries:
    print(f"x_B = {s.x_b:7.2f} um  phase = {s.phase:+.3f} rad  visibility = {s.visibility:.3f}")
slope, _, r2 = phase_line(summaries)
print(f"slope {slope:.5f} rad/um (fringe frequency {fringe_frequency(g):.5f}), R^2 = {r2:.6f}")

# %%
with warnings.catch_warnings(record=True):
    warnings.simplefilter("always")
    flat = verification_scans(np.eye(9) / 9, g, [0.0])[0]
print(f"maximally mixed: visibility {flat.visibility:.3f}, phase defined: {flat.defined}")
