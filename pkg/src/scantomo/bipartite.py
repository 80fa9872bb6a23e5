"""Two-qutrit coincidence model and joint reconstruction from conditional scans.

Arm B holds a detector at a fixed position ``x_B`` while arm A is scanned.
The fixed detection prepares the (unnormalised) conditional state
``Tr_B[(I (x) M_B) rho_AB]`` in arm A, and every arm-A bin is linear in the
81 real parameters of ``rho_AB``.  Stacking enough conditional scans makes
the full 9x9 matrix identifiable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .forward import ArmBContext, ScanRecord, grid_spacing, simulate_scan
from .numerics import RankDeficientError, hermitize, lsq_solve, partial_trace_b
from .optics import Geometry, GeometryError, sinc, sinc_scale
from .patterns import DetectorSpec, channels_to_hermitian, hermitian_channels, measurement_operator, \
    pattern_table
from .reconstruct import (
    DegenerateFitError, FitReport, IdentifiabilityError, ProjectionWarning, _detector_for,
    describe_null, design_coefficients, parameter_names, project_physical,
)


class PhaseWarning(UserWarning):
    pass


def max_entangled_state(d: int = 3) -> np.ndarray:
    """``sum_i |i>_A |d-1-i>_B / sqrt(d)`` (left pairs with right, centre with centre)."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    psi = np.zeros(d * d, dtype=complex)
    for i in range(d):
        psi[i * d + (d - 1 - i)] = 1.0
    return psi / np.sqrt(d)


def werner_state(psi, p: float) -> np.ndarray:
    """``(1 - p) |psi><psi| + p I / D``."""
    psi = np.asarray(psi, dtype=complex)
    n = psi.size
    return (1.0 - p) * np.outer(psi, psi.conj()) + p * np.eye(n) / n


def _split_dims(rho_ab: np.ndarray, m_a: np.ndarray, m_b: np.ndarray) -> tuple[int, int]:
    da, db = m_a.shape[-1], m_b.shape[-1]
    if rho_ab.shape != (da * db, da * db):
        raise ValueError(f"state of shape {rho_ab.shape} does not match operators {da}x{db}")
    return da, db


def coincidence_probability(rho_ab, m_a, m_b) -> float:
    """``Tr[(M_a (x) M_b) rho_AB]``."""
    rho_ab, m_a, m_b = np.asarray(rho_ab), np.asarray(m_a), np.asarray(m_b)
    da, db = _split_dims(rho_ab, m_a, m_b)
    r4 = rho_ab.reshape(da, db, da, db)
    p = np.einsum("ac,bd,cdab->", m_a, m_b, r4)
    if abs(p.imag) > 1e-10 * max(abs(p.real), 1e-300):
        raise ValueError("coincidence probability has a non-negligible imaginary part")
    return float(p.real)


def conditional_state(rho_ab, m_b) -> np.ndarray:
    """Unnormalised arm-A state ``Tr_B[(I (x) M_b) rho_AB]``."""
    rho_ab, m_b = np.asarray(rho_ab), np.asarray(m_b)
    db = m_b.shape[-1]
    if rho_ab.shape[0] % db:
        raise ValueError("state dimension is not a multiple of the arm-B dimension")
    da = rho_ab.shape[0] // db
    _split_dims(rho_ab, np.eye(da), m_b)
    return hermitize(partial_trace_b(np.kron(np.eye(da), m_b) @ rho_ab, da, db))


@dataclass
class ConditionalScanSet:
    scans: list[ScanRecord]
    geometry: Geometry
    detector_a: DetectorSpec
    exposure: float
    geometry_b: Geometry | None = None

    def __post_init__(self):
        for s in self.scans:
            if s.context is None:
                raise ValueError("every conditional scan needs an arm-B context (x_B, b_B)")

    @property
    def x_b(self) -> np.ndarray:
        return np.array([s.context.x_b for s in self.scans])

    @property
    def arm_b(self) -> Geometry:
        return self.geometry_b or self.geometry


def default_xb_positions(n: int = 29, span: float = 140.0) -> np.ndarray:
    """``n`` evenly spaced arm-B positions on ``[-span, span]`` um.

    For the standard triple slit at z = 1.81 f this covers the region where
    the three sinc envelopes overlap.
    """
    return np.linspace(-span, span, n)


def _scan_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def simulate_conditional_set(rho_ab, g: Geometry, det_a: DetectorSpec, det_b: DetectorSpec,
                             xb_list, grid, exposure: float, seed: int,
                             center_offset: float = 0.0) -> ConditionalScanSet:
    """One Poisson arm-A scan per arm-B position, all with the same exposure.

    Mean counts are ``exposure * dx * Tr[(M_a(x) (x) M_b(x_B)) rho_AB]``;
    since ``M_b`` is a density in ``x_B`` the exposure carries a length unit.
    """
    xb_list = np.atleast_1d(np.asarray(xb_list, dtype=float))
    if xb_list.size == 0:
        raise ValueError("xb_list must not be empty")
    pat_a = pattern_table(g, det_a, grid)
    scans = []
    for s, xb in enumerate(xb_list):
        sigma = conditional_state(rho_ab, measurement_operator(g, det_b, xb))
        ctx = ArmBContext(float(xb), det_b.slit_width_b)
        scans.append(simulate_scan(sigma, pat_a, exposure, _scan_seed(seed, s),
                                   center_offset=center_offset, context=ctx))
    return ConditionalScanSet(scans, g, det_a, float(exposure))


def joint_design(scan_set: ConditionalScanSet, mode: str = "realistic",
                 det_b: DetectorSpec | None = None) -> list[np.ndarray]:
    """Per-scan design blocks (``N_s x 81``) for the joint fit."""
    det_a = _detector_for(mode, scan_set.detector_a)
    g_a, g_b = scan_set.geometry, scan_set.arm_b
    blocks = []
    for s in scan_set.scans:
        if det_b is None:
            db = DetectorSpec(s.context.b_b, scan_set.detector_a.quad_points)
        else:
            db = det_b
        db = _detector_for(mode, db)
        m_b = measurement_operator(g_b, db, s.context.x_b)
        m_a = pattern_table(g_a, det_a, s.grid - s.center_offset, check=False).matrices
        da, dbm = m_a.shape[-1], m_b.shape[-1]
        g_ab = np.einsum("nac,bd->nabcd", m_a, m_b).reshape(-1, da * dbm, da * dbm)
        blocks.append(design_coefficients(g_ab) * grid_spacing(s.grid)[:, None])
    return blocks


def _suggest_xb(xb: np.ndarray) -> float:
    u = np.unique(xb)
    if u.size < 2:
        return float(u[0] + 10.0) if u.size else 0.0
    gaps = np.diff(u)
    k = int(np.argmax(gaps))
    return float(0.5 * (u[k] + u[k + 1]))


def _fit_scan_fluxes(blocks, ys, sws, theta, max_iter: int) -> np.ndarray:
    """Per-scan flux factors for the bilinear model ``t_s * B_s @ theta``.

    Gauss-Newton on ``(theta, t)`` jointly.  The model has gauge freedoms
    (at least a common scale), so each step is the minimum-norm least-squares step.  Returns ``t``
    normalised to unit mean.
    """
    sizes = [len(y) for y in ys]
    offsets = np.cumsum([0] + sizes)
    y = np.concatenate(ys)
    sw = np.concatenate(sws)
    n_s, n_par = len(blocks), blocks[0].shape[1]
    t = np.ones(n_s)
    floor = 1e-28 * float((y * sw) @ (y * sw))

    def residual(th, tt):
        preds = [b @ th for b in blocks]
        r = np.concatenate([t_s * p for t_s, p in zip(tt, preds)]) - y
        return r, preds, float((r * sw) @ (r * sw))

    r, preds, cost = residual(theta, t)
    for _ in range(max_iter):
        if cost <= floor:
            break
        jac = np.zeros((len(y), n_par + n_s))
        for k, (t_s, b, p) in enumerate(zip(t, blocks, preds)):
            jac[offsets[k]:offsets[k + 1], :n_par] = t_s * b
            jac[offsets[k]:offsets[k + 1], n_par + k] = p
        jac *= sw[:, None]
        colnorm = np.linalg.norm(jac, axis=0)
        colnorm[colnorm == 0] = 1.0
        step, *_ = np.linalg.lstsq(jac / colnorm, -r * sw, rcond=1e-10)
        step /= colnorm
        lam = 1.0
        while lam > 1e-6:
            th_new, t_new = theta + lam * step[:n_par], t + lam * step[n_par:]
            r_new, preds_new, cost_new = residual(th_new, t_new)
            if cost_new < cost:
                break
            lam *= 0.5
        else:
            break
        done = cost - cost_new <= 1e-12 * cost
        theta, t, r, preds, cost = th_new, t_new, r_new, preds_new, cost_new
        if done:
            break
    if np.any(t <= 0):
        raise DegenerateFitError("a per-scan flux factor came out non-positive")
    return t / np.mean(t)


def reconstruct_joint(scan_set: ConditionalScanSet, mode: str = "realistic",
                      per_scan_scale: bool = False, weighted: bool = False,
                      max_iter: int = 50) -> FitReport:
    """Single least-squares fit of the 9x9 density matrix to all conditional scans.

    With ``per_scan_scale`` each scan gets its own flux factor.  The fluxes
    are found by a joint Gauss-Newton fit, then the state is refitted
    linearly with the fluxes held fixed.  Free fluxes can trade off against
    the arm-B marginal, so this fit is less constrained than the default.
    """
    blocks = joint_design(scan_set, mode)
    ys = [np.asarray(s.counts, dtype=float) for s in scan_set.scans]
    sws = [np.ones_like(y) if not weighted else 1.0 / np.sqrt(np.maximum(y, 1.0)) for y in ys]
    a = np.vstack(blocks)
    y = np.concatenate(ys)
    sw = np.concatenate(sws)
    n_par = a.shape[1]
    d = int(round(np.sqrt(n_par)))
    names = parameter_names(d, labels=[f"{i}{j}" for i in "lcr" for j in "lcr"] if d == 9 else None)

    def solve(t):
        rows = np.vstack([t_s * b for t_s, b in zip(t, blocks)])
        try:
            return lsq_solve(rows * sw[:, None], y * sw)
        except RankDeficientError as exc:
            xb = _suggest_xb(scan_set.x_b)
            raise IdentifiabilityError(
                f"stacked design rank {exc.rank} < {exc.n}; add a scan near x_B = {xb:.1f} um "
                f"(weakest combination: {describe_null(exc.null_vector, names)})",
                rank=exc.rank) from exc

    t = np.ones(len(blocks))
    res = solve(t)
    if per_scan_scale:
        t = _fit_scan_fluxes(blocks, ys, sws, res.x, max_iter)
        res = solve(t)
    theta = res.x
    scale = float(np.sum(theta[:d]))
    if not scale > 0:
        raise DegenerateFitError(f"fitted total intensity {scale:.3g} is not positive (no signal)")
    h = channels_to_hermitian(theta / scale, d)
    rho = project_physical(h)
    dist = float(np.linalg.norm(rho - h))
    if dist > 0.2:
        warnings.warn(f"joint fit is far from physical (Frobenius distance {dist:.3f})",
                      ProjectionWarning, stacklevel=2)
    # post-projection residual with refitted flux factors
    model = np.concatenate([b @ hermitian_channels(rho) for b in blocks])
    if per_scan_scale:
        model = np.concatenate([t_s * b @ hermitian_channels(rho) for t_s, b in zip(t, blocks)])
    k = ((model * sw) @ (y * sw)) / ((model * sw) @ (model * sw))
    r = (k * model - y) * sw
    return FitReport(rho=rho, scale=scale, rss_pre=res.rss, rss_post=float(r @ r),
                     condition=res.condition, offset_um=0.0, mode=mode,
                     theta_raw=theta, projection_distance=dist, fitted=k * model,
                     rank=res.rank)


@dataclass(frozen=True)
class FringeSummary:
    x_b: float
    phase: float
    visibility: float
    defined: bool = True
    coefficients: np.ndarray = field(default=None, repr=False)


def fringe_frequency(g: Geometry) -> float:
    """Angular frequency (rad/um) of the nearest-neighbour slit interference at the detector."""
    gaps = np.diff(g.slit_offsets)
    return 2.0 * sinc_scale(g) * float(np.min(gaps)) / g.slit_width


def positions_for_phase(g: Geometry, phases) -> np.ndarray:
    """Arm-B positions whose neighbouring-slit phase difference equals ``phases`` (focal plane)."""
    return np.asarray(phases, dtype=float) / fringe_frequency(g)


def fit_fringe(x, p, g: Geometry, harmonics: int = 2):
    """Least-squares fit ``P(x) = env(x) * (c0 + sum_h a_h cos(h w x) + b_h sin(h w x))``.

    Returns ``(phase, visibility, coefficients)``; the phase is the position
    of the first-harmonic maximum in units of ``w x``.
    """
    K = sinc_scale(g)
    w = fringe_frequency(g)
    x = np.asarray(x, dtype=float)
    env = sinc(K * x) ** 2
    cols = [env]
    for h in range(1, harmonics + 1):
        cols += [env * np.cos(h * w * x), env * np.sin(h * w * x)]
    a = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(a, np.asarray(p, dtype=float), rcond=None)
    phase = float(np.arctan2(coef[2], coef[1]))
    u = np.linspace(0, 2 * np.pi, 721)
    trig = coef[0] + sum(coef[2 * h - 1] * np.cos(h * u) + coef[2 * h] * np.sin(h * u)
                         for h in range(1, harmonics + 1))
    vis = float((trig.max() - trig.min()) / (trig.max() + trig.min())) if trig.max() + trig.min() > 0 \
        else 0.0
    return phase, vis, coef


def verification_scans(rho_ab, g: Geometry, xb_list, det_a: DetectorSpec | None = None,
                       det_b: DetectorSpec | None = None, grid=None) -> list[FringeSummary]:
    """Arm-A fringe phase and visibility for each fixed arm-B position (focal plane only)."""
    if not np.isclose(g.lens_to_detector, g.focal_length, rtol=1e-9, atol=0.0):
        raise GeometryError("interference verification requires the focal plane (z == f)")
    det_a = det_a or DetectorSpec(40.0)
    det_b = det_b or DetectorSpec(40.0)
    K = sinc_scale(g)
    if grid is None:
        half = 0.9 * np.pi / K
        grid = np.arange(-half, half + 1e-9, 2.0)
    pat_a = pattern_table(g, det_a, grid)
    out = []
    for xb in np.atleast_1d(np.asarray(xb_list, dtype=float)):
        sigma = conditional_state(rho_ab, measurement_operator(g, det_b, xb))
        p = np.einsum("nij,ji->n", pat_a.matrices, sigma).real
        phase, vis, coef = fit_fringe(pat_a.grid, p, g)
        defined = vis >= 0.05
        if not defined:
            warnings.warn(f"fringe visibility {vis:.3f} at x_B = {xb:g} um; phase undefined",
                          PhaseWarning, stacklevel=2)
        out.append(FringeSummary(float(xb), phase, vis, defined, coef))
    return out


def phase_line(summaries: list[FringeSummary]):
    """Straight-line fit of unwrapped fringe phase versus ``x_B``: ``(slope, intercept, r2)``."""
    xb = np.array([s.x_b for s in summaries])
    order = np.argsort(xb)
    xb = xb[order]
    ph = np.unwrap(np.array([s.phase for s in summaries])[order])
    slope, intercept = np.polyfit(xb, ph, 1)
    resid = ph - (slope * xb + intercept)
    ss_tot = np.sum((ph - ph.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)
