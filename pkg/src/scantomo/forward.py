"""Detection probabilities and Poisson counting scans.

A scan bin at ``x_k`` collects on average ``exposure * dx_k * P(x_k)``
counts, with ``P(x) = Tr[M(x) rho]`` and ``dx_k`` the local grid spacing.
Random numbers come from numpy's counter-based Philox generator keyed by
the user seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import hermitian_eig
from .patterns import PatternSet, pattern_table


class ModelError(ValueError):
    """The forward model produced a negative probability (unphysical state)."""


class StateError(ValueError):
    pass


def validate_density_matrix(rho, herm_tol=1e-12, trace_tol=1e-12, eig_tol=1e-10) -> np.ndarray:
    """Return ``rho`` as a complex array after checking it is a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateError(f"density matrix must be square, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise StateError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise StateError(f"density matrix trace is {tr:.15g}, not 1")
    w, _ = hermitian_eig(rho)
    if w[0] < -eig_tol:
        raise StateError(f"density matrix has negative eigenvalue {w[0]:.3g}")
    return rho


def grid_spacing(grid) -> np.ndarray:
    """Local bin width: half the distance between neighbours, one-sided at the ends."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        return np.ones(1)
    return np.gradient(grid)


def detection_probability(rho, m) -> np.ndarray | float:
    """``Tr[M rho]`` for one operator ``(d, d)`` or a stack ``(N, d, d)``."""
    rho = np.asarray(rho)
    m = np.asarray(m)
    if m.shape[-2:] != rho.shape:
        raise ValueError(f"operator shape {m.shape[-2:]} does not match state shape {rho.shape}")
    p = np.einsum("...ij,ji->...", m, rho)
    scale = np.max(np.abs(p)) if np.size(p) else 0.0
    if np.any(np.abs(p.imag) > 1e-10 * max(scale, 1e-300)):
        raise ValueError("Tr[M rho] has a non-negligible imaginary part; inputs are not Hermitian")
    return p.real if np.ndim(p) else float(p.real)


@dataclass(frozen=True)
class ArmBContext:
    x_b: float
    b_b: float


@dataclass(frozen=True)
class ScanRecord:
    grid: np.ndarray
    counts: np.ndarray
    exposure: float = 1.0
    center_offset: float = 0.0
    context: ArmBContext | None = None
    seed: int | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        counts = np.asarray(self.counts)
        if grid.ndim != 1 or counts.shape != grid.shape:
            raise ValueError("counts and grid must be 1-D arrays of equal length")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not self.exposure > 0:
            raise ValueError("exposure must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))


def _means(rho, pat: PatternSet, exposure: float) -> np.ndarray:
    if not exposure > 0:
        raise ValueError("exposure must be positive")
    p = detection_probability(rho, pat.matrices)
    peak = np.max(np.abs(p)) if p.size else 0.0
    if np.any(p < -1e-10 * max(peak, 1.0)):
        raise ModelError(f"negative detection probability {p.min():.3g}; state is unphysical")
    return exposure * grid_spacing(pat.grid) * np.clip(p, 0.0, None)


def expected_scan(rho, pat: PatternSet, exposure: float) -> np.ndarray:
    """Noise-free mean counts per grid point."""
    return _means(rho, pat, exposure)


def simulate_scan(rho, pat: PatternSet, exposure: float, seed: int,
                  center_offset: float = 0.0, context: ArmBContext | None = None) -> ScanRecord:
    """Draw Poisson counts for every bin of ``pat.grid``.

    With a nonzero ``center_offset`` the pattern is evaluated at
    ``grid - center_offset``, i.e. the physical pattern centre sits at
    ``center_offset`` in the recorded coordinates.
    """
    if center_offset:
        shifted = pattern_table(pat.geometry, pat.detector, pat.grid - center_offset, check=False)
        lam = _means(rho, shifted, exposure)
    else:
        lam = _means(rho, pat, exposure)
    rng = np.random.Generator(np.random.Philox(seed))
    counts = rng.poisson(lam).astype(np.int64)
    return ScanRecord(np.array(pat.grid), counts, float(exposure), float(center_offset),
                      context, seed)
