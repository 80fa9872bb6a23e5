"""Single-scan inversion: least squares over the real pattern channels.

A scan of ``N`` bins is modelled as ``counts ~ A @ theta`` where row ``k``
of ``A`` holds the pattern channels at ``x_k`` (off-diagonal channels
doubled) times the bin width, and ``theta`` collects the real parameters
of ``T * rho`` for an unknown flux factor ``T``.  The trace of the fitted
matrix gives ``T``; the normalised matrix is then mapped onto the nearest
physical state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forward import ScanRecord, grid_spacing
from .numerics import RankDeficientError, hermitian_eig, hermitize, lsq_solve, psd_sqrt
from .optics import Geometry, GeometryError, validity_check
from .patterns import (
    SLIT_LABELS, DetectorSpec, PatternSet, channels_to_hermitian, hermitian_channels,
    pair_indices, pattern_table,
)

MODES = ("ideal", "realistic")


class IdentifiabilityError(ValueError):
    def __init__(self, message: str, rank: int | None = None, null_combination: str = ""):
        super().__init__(message)
        self.rank = rank
        self.null_combination = null_combination


class DegenerateFitError(ValueError):
    pass


class ProjectionWarning(UserWarning):
    pass


class BoundaryWarning(UserWarning):
    pass


def parameter_names(d: int, labels=None) -> list[str]:
    if labels is None:
        labels = SLIT_LABELS if d == 3 else [str(i) for i in range(d)]
    sep = "," if any(len(str(lab)) > 1 for lab in labels) else ""
    names = [f"rho_{labels[i]}{sep}{labels[i]}" for i in range(d)]
    for i, j in pair_indices(d):
        names += [f"Re rho_{labels[i]}{sep}{labels[j]}", f"Im rho_{labels[i]}{sep}{labels[j]}"]
    return names


def describe_null(null: np.ndarray, names: list[str], cutoff: float = 0.05) -> str:
    order = np.argsort(-np.abs(null))
    terms = [f"{null[k]:+.3f}*{names[k]}" for k in order if abs(null[k]) >= cutoff]
    return " ".join(terms) if terms else "(diffuse)"


def design_coefficients(matrices: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` with ``Tr[M rho] == c @ theta(rho)``, one row per operator."""
    ch = hermitian_channels(matrices)
    d = matrices.shape[-1]
    ch[..., d:] *= 2.0
    return ch


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray
    grid: np.ndarray
    mode: str
    dim: int
    condition: float
    rank: int
    background: bool = False


def build_design(pat: PatternSet, mode: str | None = None, background: bool = False) -> DesignMatrix:
    """Stack ``dx_k * c(x_k)`` over the scan grid and check identifiability.

    With ``background=True`` a constant column is appended to absorb a flat
    count floor (accidentals).
    """
    if len(pat) == 0:
        raise ValueError("empty pattern set")
    if mode is None:
        mode = "ideal" if pat.detector.ideal else "realistic"
    rows = design_coefficients(pat.matrices) * grid_spacing(pat.grid)[:, None]
    names = parameter_names(pat.dim)
    if background:
        rows = np.hstack([rows, np.ones((rows.shape[0], 1))])
        names = names + ["background"]
    if rows.shape[0] < rows.shape[1]:
        raise IdentifiabilityError(
            f"{rows.shape[0]} grid points cannot determine {rows.shape[1]} parameters "
            f"(design rank at most {rows.shape[0]})",
            rank=rows.shape[0])
    sv = np.linalg.svd(rows, compute_uv=False)
    tol = max(rows.shape) * np.finfo(float).eps * sv[0]
    rank = int(np.sum(sv > tol))
    if rank < rows.shape[1]:
        _, _, vh = np.linalg.svd(rows)
        combo = describe_null(vh[-1], names)
        raise IdentifiabilityError(
            f"design rank {rank} < {rows.shape[1]}; unresolved combination: {combo}",
            rank=rank, null_combination=combo)
    rows.setflags(write=False)
    return DesignMatrix(rows, np.array(pat.grid), mode, pat.dim, float(sv[0] / sv[-1]), rank,
                        background)


@dataclass(frozen=True)
class LinearFit:
    theta: np.ndarray  # trace-normalised parameters
    scale: float
    rss: float
    condition: float
    background: float = 0.0


def _weights(counts: np.ndarray, weighted: bool) -> np.ndarray:
    if not weighted:
        return np.ones(counts.shape)
    return 1.0 / np.sqrt(np.maximum(counts, 1.0))


def solve_linear(design: DesignMatrix, scan: ScanRecord, weighted: bool = False,
                 atol: float = 1e-6) -> LinearFit:
    """Unconstrained least-squares fit of the scan counts.

    The returned ``rss`` is the (weighted, if requested) residual sum of
    squares of the unconstrained fit.
    """
    expected = scan.grid - scan.center_offset
    if design.grid.shape != expected.shape or np.max(np.abs(design.grid - expected)) > atol:
        raise ValueError("design grid does not match the scan grid shifted by its center offset")
    y = np.asarray(scan.counts, dtype=float)
    sw = _weights(y, weighted)
    try:
        res = lsq_solve(design.rows * sw[:, None], y * sw)
    except RankDeficientError as exc:
        names = parameter_names(design.dim) + (["background"] if design.background else [])
        combo = describe_null(exc.null_vector, names)
        raise IdentifiabilityError(f"design rank {exc.rank} < {exc.n}: {combo}",
                                   rank=exc.rank, null_combination=combo) from exc
    d = design.dim
    theta = res.x[: d * d]
    bg = float(res.x[d * d]) if design.background else 0.0
    scale = float(np.sum(theta[:d]))
    if not scale > 0:
        raise DegenerateFitError(f"fitted total intensity {scale:.3g} is not positive (no signal)")
    return LinearFit(theta / scale, scale, res.rss, res.condition, bg)


def project_physical(h) -> np.ndarray:
    """Nearest (Frobenius) unit-trace positive semidefinite matrix.

    ``h`` is Hermitised and trace-normalised first.  Eigenvalues are then
    clipped from the most negative upward, each removed deficit being
    shared equally by the eigenvalues still in play.
    """
    h = hermitize(h)
    d = h.shape[0]
    tr = np.trace(h).real
    if not tr > 0:
        warnings.warn("matrix has non-positive trace; returning the maximally mixed state",
                      ProjectionWarning, stacklevel=2)
        return np.eye(d, dtype=complex) / d
    h = h / tr
    w, v = hermitian_eig(h)
    mu = w[::-1].copy()  # descending
    lam = mu.copy()
    deficit = 0.0
    i = d
    while i > 0 and mu[i - 1] + deficit / i < 0:
        deficit += mu[i - 1]
        lam[i - 1] = 0.0
        i -= 1
    if i == 0:
        warnings.warn("no eigenvalue survives projection; returning the maximally mixed state",
                      ProjectionWarning, stacklevel=2)
        return np.eye(d, dtype=complex) / d
    lam[:i] = mu[:i] + deficit / i
    vd = v[:, ::-1]
    rho = (vd * lam) @ vd.conj().T
    rho = hermitize(rho)
    return rho / np.trace(rho).real


def _rss_for_state(design: DesignMatrix, y: np.ndarray, sw: np.ndarray, rho: np.ndarray):
    """Refit only the flux (and background) for a fixed state; returns rss and the fitted curve."""
    d = design.dim
    theta = hermitian_channels(rho)
    model = design.rows[:, : d * d] @ theta
    cols = [model] + ([np.ones_like(model)] if design.background else [])
    a = np.stack(cols, axis=1) * sw[:, None]
    coef, *_ = np.linalg.lstsq(a, y * sw, rcond=None)
    fitted = np.stack(cols, axis=1) @ coef
    r = (fitted - y) * sw
    return float(r @ r), fitted, float(coef[0])


def fit_offset(design_builder: Callable[[float], DesignMatrix], scan: ScanRecord,
               search_halfwidth: float, center: float = 0.0, step: float = 0.5,
               tol: float = 0.01, weighted: bool = False) -> float:
    """Centre offset (um) minimising the unconstrained-fit RSS.

    ``design_builder(offset)`` must return the design evaluated at
    ``scan.grid - offset``.  Offsets in ``center +- search_halfwidth`` are
    scanned with ``step`` and the best bracket is refined by golden-section
    search down to ``tol``.
    """
    if not search_halfwidth > 0:
        raise ValueError("search_halfwidth must be positive")
    y = np.asarray(scan.counts, dtype=float)
    sw = _weights(y, weighted)

    def rss(off: float) -> float:
        dm = design_builder(off)
        return lsq_solve(dm.rows * sw[:, None], y * sw).rss

    n = max(1, int(math.floor(search_halfwidth / step + 1e-9)))
    coarse = center + np.linspace(-n * step, n * step, 2 * n + 1)
    vals = np.array([rss(o) for o in coarse])
    k = int(np.argmin(vals))
    lo = coarse[max(k - 1, 0)]
    hi = coarse[min(k + 1, len(coarse) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = rss(c), rss(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = rss(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = rss(d)
    best = 0.5 * (lo + hi)
    if k in (0, len(coarse) - 1):
        warnings.warn(f"offset minimum {best:.3f} um lies at the search boundary",
                      BoundaryWarning, stacklevel=2)
    return float(best)


@dataclass
class FitReport:
    rho: np.ndarray
    scale: float
    rss_pre: float
    rss_post: float
    condition: float
    offset_um: float
    mode: str
    theta_raw: np.ndarray = field(repr=False, default=None)
    projection_distance: float = 0.0
    background: float = 0.0
    fitted: np.ndarray | None = field(repr=False, default=None)
    rank: int | None = None

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def rss(self) -> float:
        return self.rss_post


def _detector_for(mode: str, det: DetectorSpec) -> DetectorSpec:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return DetectorSpec(0.0, det.quad_points) if mode == "ideal" else det


def reconstruct_single(scan: ScanRecord, g: Geometry, det: DetectorSpec, mode: str = "realistic",
                       offset_search: float | None = None, weighted: bool = False,
                       background: bool = False) -> FitReport:
    """Pattern table, design, optional offset search, linear fit, projection."""
    report = validity_check(g)
    if report.status == "fail":
        raise GeometryError(f"geometry outside the sinc-model regime: {report.reason}")
    det_m = _detector_for(mode, det)

    def builder(off: float) -> DesignMatrix:
        return build_design(pattern_table(g, det_m, scan.grid - off, check=False), mode, background)

    offset = scan.center_offset
    if offset_search:
        offset = fit_offset(builder, scan, offset_search, center=scan.center_offset,
                            weighted=weighted)
    if offset != scan.center_offset:
        scan = ScanRecord(scan.grid, scan.counts, scan.exposure, offset, scan.context, scan.seed)
    # the quadrature self-check runs once on the final grid
    design = build_design(pattern_table(g, det_m, scan.grid - offset), mode, background)
    lin = solve_linear(design, scan, weighted=weighted)
    h = channels_to_hermitian(lin.theta, design.dim)
    rho = project_physical(h)
    dist = float(np.linalg.norm(rho - h))
    if dist > 0.2:
        warnings.warn(f"fitted matrix is far from physical (Frobenius distance {dist:.3f})",
                      ProjectionWarning, stacklevel=2)
    y = np.asarray(scan.counts, dtype=float)
    rss_post, fitted, scale_post = _rss_for_state(design, y, _weights(y, weighted), rho)
    return FitReport(rho=rho, scale=lin.scale, rss_pre=lin.rss, rss_post=rss_post,
                     condition=design.condition, offset_um=float(offset), mode=mode,
                     theta_raw=lin.theta * lin.scale, projection_distance=dist,
                     background=lin.background, fitted=fitted, rank=design.rank)


def fidelity(rho, psi) -> float:
    """``<psi|rho|psi>`` for a normalised state vector ``psi``."""
    rho = np.asarray(rho)
    psi = np.asarray(psi, dtype=complex).ravel()
    if rho.shape != (psi.size, psi.size):
        raise ValueError(f"state vector of length {psi.size} does not match matrix {rho.shape}")
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"reference state is not normalised (norm^2 = {norm:.12g})")
    return float(np.vdot(psi, rho @ psi).real)


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` between two density matrices."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch {rho.shape} vs {sigma.shape}")
    s = psd_sqrt(rho)
    w, _ = hermitian_eig(s @ sigma @ s)
    # rounding noise in null directions would otherwise add sqrt(eps)-sized terms
    w = np.where(w > 1e-13 * max(w[-1], 0.0), w, 0.0)
    return float(np.sum(np.sqrt(w)) ** 2)


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.einsum("ij,ji->", rho, rho)))


def trace_distance(rho1, rho2) -> float:
    rho1, rho2 = np.asarray(rho1), np.asarray(rho2)
    if rho1.shape != rho2.shape:
        raise ValueError(f"dimension mismatch {rho1.shape} vs {rho2.shape}")
    w, _ = hermitian_eig(rho1 - rho2)
    return float(0.5 * np.sum(np.abs(w)))
