import itertools
import warnings

import numpy as np
import pytest

from scantomo.bipartite import (
    ConditionalScanSet, PhaseWarning, coincidence_probability, conditional_state,
    default_xb_positions, fit_fringe, fringe_frequency, joint_design, max_entangled_state,
    phase_line, positions_for_phase, reconstruct_joint, simulate_conditional_set,
    verification_scans, werner_state,
)
from scantomo.forward import ArmBContext, ScanRecord, expected_scan
from scantomo.optics import GeometryError, sinc_scale
from scantomo.patterns import DetectorSpec, hermitian_channels, measurement_operator, pattern_table
from scantomo.reconstruct import IdentifiabilityError, fidelity, state_fidelity

from conftest import random_density

GRID = np.arange(-400.0, 400.0 + 1e-9, 8.0)


def test_max_entangled_state():
    psi = max_entangled_state(3)
    assert np.vdot(psi, psi).real == pytest.approx(1.0)
    nz = np.flatnonzero(psi)
    assert list(nz) == [0 * 3 + 2, 1 * 3 + 1, 2 * 3 + 0]
    with pytest.raises(ValueError):
        max_entangled_state(1)


def test_werner_fidelity_formula():
    psi = max_entangled_state(3)
    for p in (0.0, 0.2, 1.0):
        assert fidelity(werner_state(psi, p), psi) == pytest.approx(1 - p + p / 9)


def test_conditional_state_81_term_loop(geom, rng):
    rho = random_density(rng, 9)
    m_b = measurement_operator(geom, DetectorSpec(20.0), 37.0)
    expect = np.zeros((3, 3), dtype=complex)
    for a, a2, b, b2 in itertools.product(range(3), repeat=4):
        expect[a, a2] += m_b[b2, b] * rho[a * 3 + b, a2 * 3 + b2]
    np.testing.assert_allclose(conditional_state(rho, m_b), expect, atol=1e-16)


def test_coincidence_matches_kron_trace(geom, rng):
    rho = random_density(rng, 9)
    det = DetectorSpec(20.0)
    m_a = measurement_operator(geom, det, -12.0)
    m_b = measurement_operator(geom, det, 55.0)
    direct = np.trace(np.kron(m_a, m_b) @ rho).real
    assert coincidence_probability(rho, m_a, m_b) == pytest.approx(direct, rel=1e-12)
    # marginal consistency: Tr[M_a sigma(x_B)] is the same number
    assert np.trace(m_a @ conditional_state(rho, m_b)).real == pytest.approx(direct, rel=1e-12)


def test_product_state_conditional(rng):
    ra, rb = random_density(rng), random_density(rng)
    m = np.diag([0.2, 0.5, 0.3]).astype(complex)
    np.testing.assert_allclose(conditional_state(np.kron(ra, rb), m), ra * np.trace(m @ rb),
                               atol=1e-15)


def test_shape_errors(rng):
    with pytest.raises(ValueError):
        coincidence_probability(np.eye(8) / 8, np.eye(3), np.eye(3))
    with pytest.raises(ValueError):
        conditional_state(np.eye(8) / 8, np.eye(3))


def test_scan_set_requires_context(geom):
    with pytest.raises(ValueError):
        ConditionalScanSet([ScanRecord(GRID, np.ones(GRID.size))], geom, DetectorSpec(20.0), 1.0)


def test_simulated_set_is_deterministic(geom):
    rho = werner_state(max_entangled_state(), 0.2)
    det = DetectorSpec(20.0)
    xb = [-50.0, 0.0, 50.0]
    a = simulate_conditional_set(rho, geom, det, det, xb, GRID, 1e9, seed=5)
    b = simulate_conditional_set(rho, geom, det, det, xb, GRID, 1e9, seed=5)
    assert all(np.array_equal(s.counts, t.counts) for s, t in zip(a.scans, b.scans))
    assert not np.array_equal(a.scans[0].counts, a.scans[1].counts)
    np.testing.assert_array_equal(a.x_b, xb)


def _noiseless_set(rho, geom, det, xb):
    pat = pattern_table(geom, det, GRID)
    scans = []
    for x in xb:
        sigma = conditional_state(rho, measurement_operator(geom, det, x))
        scans.append(ScanRecord(GRID, expected_scan(sigma, pat, 1e9), 1e9,
                                context=ArmBContext(float(x), det.slit_width_b)))
    return ConditionalScanSet(scans, geom, det, 1e9)


def test_joint_design_matches_coincidences(geom, rng):
    det = DetectorSpec(20.0)
    rho = random_density(rng, 9)
    ss = _noiseless_set(rho, geom, det, [-40.0, 25.0])
    blocks = joint_design(ss)
    theta = hermitian_channels(rho)
    for s, block in zip(ss.scans, blocks):
        np.testing.assert_allclose(block @ theta, s.counts / 1e9, rtol=1e-10, atol=1e-20)


def test_joint_noiseless_recovers_random_state(geom, rng):
    det = DetectorSpec(20.0)
    rho = random_density(rng, 9)
    ss = _noiseless_set(rho, geom, det, default_xb_positions())
    rep = reconstruct_joint(ss)
    assert rep.rank == 81
    assert state_fidelity(rep.rho, rho) > 1 - 1e-8


def test_joint_too_few_positions(geom):
    det = DetectorSpec(20.0)
    ss = _noiseless_set(werner_state(max_entangled_state(), 0.1), geom, det, [0.0, 30.0])
    with pytest.raises(IdentifiabilityError) as exc:
        reconstruct_joint(ss)
    assert exc.value.rank < 81 and "x_B" in str(exc.value)


def test_per_scan_scale(geom, rng):
    det = DetectorSpec(20.0)
    rho = random_density(rng, 9)
    ss = _noiseless_set(rho, geom, det, default_xb_positions())
    factors = 1 + 0.3 * np.sin(np.arange(len(ss.scans)))
    scaled = ConditionalScanSet([ScanRecord(s.grid, s.counts * f, s.exposure, context=s.context)
                                 for s, f in zip(ss.scans, factors)], geom, det, 1e9)
    plain = reconstruct_joint(scaled)
    fitted = reconstruct_joint(scaled, per_scan_scale=True)
    y2 = sum(float(s.counts @ s.counts) for s in scaled.scans)
    assert fitted.rss_pre < 1e-10 * y2 < plain.rss_pre
    # normalised conditional states are fixed by the data whatever the flux gauge
    for x in (-100.0, 0.0, 70.0):
        m_b = measurement_operator(geom, det, x)
        s_true, s_fit = conditional_state(rho, m_b), conditional_state(fitted.rho, m_b)
        np.testing.assert_allclose(s_fit / np.trace(s_fit), s_true / np.trace(s_true), atol=1e-4)


def test_fringe_frequency_and_positions(geom):
    g = geom.with_z(geom.focal_length)
    w = fringe_frequency(g)
    assert w == pytest.approx(2 * np.pi * 135.0 / (0.81 * 50e3), rel=1e-12)
    np.testing.assert_allclose(positions_for_phase(g, [0.0, np.pi]), [0.0, np.pi / w])


def test_fit_fringe_synthetic(geom):
    g = geom.with_z(geom.focal_length)
    K, w = sinc_scale(g), fringe_frequency(g)
    x = np.linspace(-2000, 2000, 801)
    p = np.sinc(K * x / np.pi) ** 2 * (1 + 0.6 * np.cos(w * x - 0.7))
    phase, vis, _ = fit_fringe(x, p, g)
    assert phase == pytest.approx(0.7, abs=1e-9)
    assert vis == pytest.approx(0.6, abs=1e-5)


def test_verification_requires_focal_plane(geom):
    with pytest.raises(GeometryError):
        verification_scans(werner_state(max_entangled_state(), 0.0), geom, [0.0])


def test_verification_phase_is_linear(geom):
    g = geom.with_z(geom.focal_length)
    xb = positions_for_phase(g, np.linspace(-np.pi / 2, np.pi / 2, 5))
    summaries = verification_scans(werner_state(max_entangled_state(), 0.0), g, xb)
    slope, _, r2 = phase_line(summaries)
    assert r2 >= 0.999
    assert abs(slope) == pytest.approx(fringe_frequency(g), rel=0.05)
    assert all(s.defined for s in summaries)


def test_verification_flags_missing_fringes(geom):
    g = geom.with_z(geom.focal_length)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        out = verification_scans(np.eye(9) / 9, g, [0.0])
    assert not out[0].defined
    assert any(issubclass(w.category, PhaseWarning) for w in rec)
