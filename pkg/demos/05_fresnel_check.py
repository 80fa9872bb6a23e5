"""How far toward the image plane does the sinc model hold?

Compare the closed-form amplitude against direct Fresnel propagation of a
top-hat slit while the detector moves from the focal plane toward 2f.
"""
# %%
import numpy as np

from scantomo import Geometry, fresnel_oracle, slit_wavefunction, validity_check

base = Geometry.multislit()
x = np.arange(-1500.0, 1500.0 + 1e-9, 2.0)
print(" z/f   a/sqrt(R lam)  status   L2 error (left slit)")
for r in (1.2, 1.5, 1.81, 1.9, 1.95, 1.98):
    g = base.with_z(r * base.focal_length)
    rep = validity_check(g)
    exact = np.abs(fresnel_oracle(g, 0, x)) ** 2
    model = np.abs(slit_wavefunction(g, 0, x)) ** 2
    err = np.linalg.norm(exact - model) / np.linalg.norm(model)
    print(f"{r:5.2f}   {rep.ratio:10.3f}    {rep.status:5s}   {err:.4f}")
