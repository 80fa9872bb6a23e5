"""Single-scan tomography for multi-slit spatial qudits.

Lengths are in micrometres throughout.
"""

from .bipartite import (
    ConditionalScanSet, coincidence_probability, conditional_state, default_xb_positions,
    max_entangled_state, positions_for_phase, reconstruct_joint, simulate_conditional_set,
    verification_scans, werner_state,
)
from .forward import ArmBContext, ScanRecord, detection_probability, expected_scan, simulate_scan
from .optics import (
    Geometry, GeometryError, effective_distance, fresnel_oracle, sinc_scale, slit_wavefunction,
    validity_check,
)
from .patterns import (
    DetectorSpec, PatternSet, ideal_pattern, measurement_operator, pattern_table, realistic_pattern,
)
from .reconstruct import (
    FitReport, build_design, fidelity, fit_offset, project_physical, purity, reconstruct_single,
    solve_linear, state_fidelity, trace_distance,
)

__version__ = "0.1.0"

__all__ = [
    "ArmBContext", "ConditionalScanSet", "DetectorSpec", "FitReport", "Geometry", "GeometryError",
    "PatternSet", "ScanRecord", "build_design", "coincidence_probability", "conditional_state",
    "default_xb_positions", "detection_probability", "effective_distance", "expected_scan",
    "fidelity", "fit_offset", "fresnel_oracle", "ideal_pattern", "max_entangled_state",
    "measurement_operator", "pattern_table", "positions_for_phase", "project_physical", "purity",
    "realistic_pattern", "reconstruct_joint", "reconstruct_single", "simulate_conditional_set",
    "simulate_scan", "sinc_scale", "slit_wavefunction", "solve_linear", "state_fidelity",
    "trace_distance", "validity_check", "verification_scans", "werner_state",
]
