"""Pattern functions: matrix elements of the position-measurement operator.

For detection through a slit of width ``b`` centred at ``x`` the operator
element between slit states ``i`` and ``j`` is the window average

    M_ij(x) = (1/b) * integral_{-b/2}^{b/2} conj(phi_i(x+s)) phi_j(x+s) ds,

which tends to ``conj(phi_i(x)) phi_j(x)`` as ``b -> 0``.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .optics import Geometry, all_wavefunctions, _gauss_legendre, sinc_scale

SLIT_LABELS = ("l", "c", "r")
CHANNEL_NAMES = ("Mll", "Mcc", "Mrr", "ReMlc", "ImMlc", "ReMlr", "ImMlr", "ReMcr", "ImMcr")


class QuadratureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DetectorSpec:
    slit_width_b: float = 0.0
    quad_points: int = 32

    def __post_init__(self):
        if self.slit_width_b < 0:
            raise ValueError(f"detector slit width must be >= 0, got {self.slit_width_b}")
        if self.slit_width_b > 0 and self.quad_points < 8:
            raise ValueError("at least 8 quadrature points are needed for a finite detector slit")

    @property
    def ideal(self) -> bool:
        return self.slit_width_b == 0


def pair_indices(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def hermitian_channels(m: np.ndarray) -> np.ndarray:
    """Split Hermitian matrices (``..., d, d``) into ``d*d`` real channels.

    Order: the ``d`` diagonal entries, then ``Re``, ``Im`` of each upper
    off-diagonal entry ``(i, j)``, ``i < j``, in row-major order.  For a
    qutrit this is ``(ll, cc, rr, Re lc, Im lc, Re lr, Im lr, Re cr, Im cr)``.
    """
    m = np.asarray(m)
    d = m.shape[-1]
    diag = np.real(np.diagonal(m, axis1=-2, axis2=-1))
    iu, ju = zip(*pair_indices(d)) if d > 1 else ((), ())
    off = m[..., list(iu), list(ju)]
    inter = np.stack([off.real, off.imag], axis=-1).reshape(*m.shape[:-2], -1)
    return np.concatenate([diag, inter], axis=-1)


def channels_to_hermitian(theta: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`hermitian_channels` for a single parameter vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d * d,):
        raise ValueError(f"expected {d * d} channel values, got shape {theta.shape}")
    h = np.diag(theta[:d]).astype(complex)
    for k, (i, j) in enumerate(pair_indices(d)):
        h[i, j] = theta[d + 2 * k] + 1j * theta[d + 2 * k + 1]
        h[j, i] = np.conj(h[i, j])
    return h


def ideal_pattern(g: Geometry, i: int, j: int, x):
    phi = all_wavefunctions(g, x)
    return np.conj(phi[..., i]) * phi[..., j]


def _window_average(g: Geometry, x: np.ndarray, b: float, n: int) -> np.ndarray:
    t, w = _gauss_legendre(n)
    phi = all_wavefunctions(g, x[:, None] + 0.5 * b * t[None, :])  # (N, n, d)
    return 0.5 * np.einsum("q,nqi,nqj->nij", w, phi.conj(), phi)


def _operators(g: Geometry, det: DetectorSpec, x: np.ndarray, check: bool) -> np.ndarray:
    if det.ideal:
        phi = all_wavefunctions(g, x)
        m = phi.conj()[:, :, None] * phi[:, None, :]
    else:
        m = _window_average(g, x, det.slit_width_b, det.quad_points)
        if check:
            m2 = _window_average(g, x, det.slit_width_b, 2 * det.quad_points)
            scale = sinc_scale(g) / np.pi
            err = np.max(np.abs(m2 - m)) / scale if m.size else 0.0
            if err > 1e-9:
                warnings.warn(f"window quadrature with {det.quad_points} nodes changes by "
                              f"{err:.2e} (relative) when doubled", QuadratureWarning, stacklevel=3)
    # enforce exact Hermitian symmetry from the upper triangle
    strict = np.triu(m, 1)
    d = m.shape[-1]
    diag = np.real(np.diagonal(m, axis1=-2, axis2=-1))[..., None] * np.eye(d)
    return strict + diag + np.conj(np.swapaxes(strict, -1, -2))


def realistic_pattern(g: Geometry, det: DetectorSpec, i: int, j: int, x):
    if det.ideal:
        raise ValueError("realistic_pattern needs a finite detector slit (slit_width_b > 0)")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = _operators(g, det, xa, check=True)[:, i, j]
    return out if np.ndim(x) else out[0]


def measurement_operator(g: Geometry, det: DetectorSpec, x: float) -> np.ndarray:
    return _operators(g, det, np.array([float(x)]), check=False)[0]


@dataclass(frozen=True)
class PatternSet:
    grid: np.ndarray
    matrices: np.ndarray  # (N, d, d)
    detector: DetectorSpec
    geometry: Geometry
    geometry_digest: str = field(default="")

    def __len__(self):
        return len(self.grid)

    @property
    def dim(self) -> int:
        return self.matrices.shape[-1]

    def channels(self) -> np.ndarray:
        """``(N, d*d)`` real channels in canonical order (undoubled)."""
        return hermitian_channels(self.matrices)

    def to_csv(self) -> str:
        if self.dim != 3:
            raise ValueError("the CSV channel layout is defined for qutrits only")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_um", *CHANNEL_NAMES])
        for x, row in zip(self.grid, self.channels()):
            w.writerow([f"{x:.12g}", *(f"{v:.12g}" for v in row)])
        return buf.getvalue()


def pattern_table(g: Geometry, det: DetectorSpec, grid, check: bool = True) -> PatternSet:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-D sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    m = _operators(g, det, grid, check=check)
    m.setflags(write=False)
    grid = grid.copy()
    grid.setflags(write=False)
    return PatternSet(grid, m, det, g, g.digest())


def read_pattern_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse pattern CSV text into ``(grid, channels)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["x_um", *CHANNEL_NAMES]:
        raise ValueError("unexpected pattern CSV header")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return data[:, 0], data[:, 1:]
