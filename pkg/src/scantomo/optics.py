"""Multi-slit geometry and the transverse wavefunctions behind it.

All lengths are micrometres.  A photon leaving slit ``i`` (centre ``r_i``,
width ``a``) passes a lens of focal length ``f`` placed ``L`` behind the
slit plane and is detected a distance ``z`` behind the lens.  Between the
focal plane (``z = f``) and the image plane (``Lf + zf - Lz = 0``) each slit
contributes a shifted, phase-tilted sinc amplitude; :func:`fresnel_oracle`
evaluates the same propagation numerically without that approximation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import ConvergenceError


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    wavelength: float
    slit_width: float
    slit_offsets: tuple[float, ...]
    focal_length: float
    slit_to_lens: float
    lens_to_detector: float

    def __post_init__(self):
        object.__setattr__(self, "slit_offsets", tuple(float(r) for r in self.slit_offsets))
        for name in ("wavelength", "slit_width", "focal_length", "slit_to_lens"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive, got {getattr(self, name)}")
        if not np.isfinite(self.lens_to_detector):
            raise GeometryError("lens_to_detector must be finite")
        if len(self.slit_offsets) < 1:
            raise GeometryError("at least one slit is required")
        gaps = np.diff(self.slit_offsets)
        if np.any(gaps <= self.slit_width):
            raise GeometryError(
                "slit offsets must be strictly increasing with gaps wider than the slit width")

    @property
    def dim(self) -> int:
        return len(self.slit_offsets)

    @classmethod
    def multislit(cls, n_slits=3, pitch=135.0, slit_width=45.0, wavelength=0.81,
                  focal_length=50e3, slit_to_lens=None, z_over_f=1.81):
        """Equally spaced slits centred on the axis (defaults: the 810 nm triple-slit setup)."""
        offsets = pitch * (np.arange(n_slits) - 0.5 * (n_slits - 1))
        if slit_to_lens is None:
            slit_to_lens = 2.0 * focal_length
        return cls(wavelength=wavelength, slit_width=slit_width, slit_offsets=tuple(offsets),
                   focal_length=focal_length, slit_to_lens=slit_to_lens,
                   lens_to_detector=z_over_f * focal_length)

    def with_z(self, lens_to_detector: float) -> "Geometry":
        return Geometry(self.wavelength, self.slit_width, self.slit_offsets, self.focal_length,
                        self.slit_to_lens, lens_to_detector)

    def digest(self) -> str:
        fields = (self.wavelength, self.slit_width, *self.slit_offsets, self.focal_length,
                  self.slit_to_lens, self.lens_to_detector)
        return hashlib.sha1(np.asarray(fields, dtype=float).tobytes()).hexdigest()[:16]

    @property
    def image_plane_z(self) -> float:
        """Lens-to-detector distance of the slit image (infinite when ``L == f``)."""
        if self.slit_to_lens == self.focal_length:
            return np.inf
        return self.slit_to_lens * self.focal_length / (self.slit_to_lens - self.focal_length)


def _propagation_b(g: Geometry) -> float:
    # B element of the slit -> lens -> detector ray matrix, times f
    f, L, z = g.focal_length, g.slit_to_lens, g.lens_to_detector
    return L * f + z * f - L * z


def effective_distance(g: Geometry) -> float:
    """``R = (Lf + zf - Lz) / (z - f)``; undefined in the focal plane."""
    dz = g.lens_to_detector - g.focal_length
    if dz == 0:
        raise GeometryError("effective distance diverges in the focal plane (z == f)")
    return _propagation_b(g) / dz


def sinc_scale(g: Geometry) -> float:
    """``K = pi a f / (lambda R (z - f))`` in inverse micrometres."""
    prod = _propagation_b(g)
    if prod <= 0:
        raise GeometryError(
            f"detector at or beyond the image plane (Lf + zf - Lz = {prod:.6g} um^2)")
    return np.pi * g.slit_width * g.focal_length / (g.wavelength * prod)


@dataclass(frozen=True)
class DerivedScales:
    effective_distance: float
    sinc_scale: float
    envelope_shift_factor: float


def derived_scales(g: Geometry) -> DerivedScales:
    dz = g.lens_to_detector - g.focal_length
    R = _propagation_b(g) / dz if dz != 0 else np.inf
    return DerivedScales(R, sinc_scale(g), dz / g.focal_length)


def sinc(u):
    """``sin(u)/u`` with a Taylor branch near zero so that ``sinc(0) == 1`` exactly."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-4
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 - u * u / 6.0, np.sin(safe) / safe)


def slit_wavefunction(g: Geometry, slit_index: int, x):
    """Complex amplitude (um^-1/2) at detector position(s) ``x`` from slit ``slit_index``."""
    if not 0 <= slit_index < g.dim:
        raise IndexError(f"slit index {slit_index} outside [0, {g.dim})")
    return all_wavefunctions(g, x)[..., slit_index]


def all_wavefunctions(g: Geometry, x) -> np.ndarray:
    """Amplitudes of every slit at ``x``; the slit index is the last axis."""
    K = sinc_scale(g)
    shift = (g.lens_to_detector - g.focal_length) / g.focal_length
    r = np.asarray(g.slit_offsets)
    x = np.asarray(x, dtype=float)[..., None]
    phase = np.exp(-2j * (r / g.slit_width) * K * x)
    return np.sqrt(K / np.pi) * phase * sinc(K * (x + shift * r))


@dataclass(frozen=True)
class ValidityReport:
    status: str  # "pass" | "warn" | "fail"
    ratio: float
    reason: str = ""
    thresholds: tuple[float, float] = field(default=(0.5, 1.0))

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def validity_check(g: Geometry, pass_ratio: float = 0.5, warn_ratio: float = 1.0) -> ValidityReport:
    """Compare the slit width with the Fresnel length ``sqrt(R lambda)``.

    The sinc model needs ``a`` well below ``sqrt(R lambda)``.  In the focal
    plane ``R`` is infinite and the ratio is zero.
    """
    th = (pass_ratio, warn_ratio)
    prod = _propagation_b(g)
    if prod <= 0:
        return ValidityReport("fail", np.inf, "detector at or beyond the image plane (R <= 0)", th)
    dz = g.lens_to_detector - g.focal_length
    if dz == 0:
        return ValidityReport("pass", 0.0, "focal plane: R is infinite", th)
    R = prod / dz
    if R <= 0:
        return ValidityReport("fail", np.inf, f"effective distance R = {R:.6g} um is not positive", th)
    ratio = g.slit_width / np.sqrt(R * g.wavelength)
    if ratio <= pass_ratio:
        return ValidityReport("pass", ratio, "", th)
    if ratio <= warn_ratio:
        return ValidityReport("warn", ratio, f"a/sqrt(R lambda) = {ratio:.3f} exceeds {pass_ratio}", th)
    return ValidityReport("fail", ratio, f"a/sqrt(R lambda) = {ratio:.3f} exceeds {warn_ratio}", th)


@lru_cache(maxsize=32)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


_PANEL_NODES = 16


def _fresnel_field(g: Geometry, slit_index: int, x: np.ndarray, panels: int) -> np.ndarray:
    f, L, z, lam = g.focal_length, g.slit_to_lens, g.lens_to_detector, g.wavelength
    A = 1.0 - z / f
    B = _propagation_b(g) / f
    D = 1.0 - L / f
    a = g.slit_width
    r = g.slit_offsets[slit_index]
    nodes, weights = _gauss_legendre(_PANEL_NODES)
    edges = np.linspace(r - a / 2, r + a / 2, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x0 = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w0 = (half[:, None] * weights[None, :]).ravel()
    amp0 = 1.0 / np.sqrt(a)
    out = np.empty(x.shape, dtype=complex)
    # chunk over detector points to bound memory
    step = max(1, 2_000_000 // x0.size)
    for s in range(0, x.size, step):
        xs = x[s:s + step]
        ph = np.pi / (lam * B) * (A * x0[None, :] ** 2 - 2.0 * x0[None, :] * xs[:, None])
        out[s:s + step] = (np.exp(1j * ph) @ w0) * amp0
    prefac = np.exp(1j * np.pi * D * x ** 2 / (lam * B)) / np.sqrt(1j * lam * B)
    return prefac * out


def fresnel_oracle(g: Geometry, slit_index: int, x, n_quad: int = 64,
                   rtol: float = 1e-6, max_doublings: int = 12) -> np.ndarray:
    """Fresnel (Collins) propagation of a uniform slit field to the detector plane.

    The field is a normalised top-hat over slit ``slit_index``; the
    propagation includes the full quadratic phase across the aperture and
    the thin-lens phase, so it holds arbitrarily close to the image plane.
    Composite Gauss-Legendre quadrature over the aperture is refined by
    doubling the node count until successive results agree to ``rtol``
    (relative to the peak magnitude); otherwise :class:`ConvergenceError`.
    """
    if n_quad < 64:
        raise ValueError("n_quad must be at least 64")
    if not 0 <= slit_index < g.dim:
        raise IndexError(f"slit index {slit_index} outside [0, {g.dim})")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f, L, z = g.focal_length, g.slit_to_lens, g.lens_to_detector
    A = 1.0 - z / f
    B = _propagation_b(g) / f
    if B < 0:
        raise GeometryError("detector beyond the image plane")
    if abs(B) < 1e-9 * max(L, z):
        # imaging limit: inverted, magnified copy of the aperture
        a, r = g.slit_width, g.slit_offsets[slit_index]
        C = -1.0 / f
        x_obj = x / A
        inside = np.abs(x_obj - r) <= a / 2
        phase = np.exp(1j * np.pi * C * x ** 2 / (g.wavelength * A))
        return np.where(inside, phase / np.sqrt(a * abs(A)), 0.0)

    panels = max(1, n_quad // _PANEL_NODES)
    prev = _fresnel_field(g, slit_index, x, panels)
    for _ in range(max_doublings):
        panels *= 2
        cur = _fresnel_field(g, slit_index, x, panels)
        scale = np.max(np.abs(cur))
        if scale == 0 or np.max(np.abs(cur - prev)) <= rtol * scale:
            return cur
        prev = cur
    raise ConvergenceError(
        f"Fresnel quadrature not converged to {rtol:g} after {max_doublings} doublings")
