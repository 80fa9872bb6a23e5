"""Command-line entry point: ``scantomo <command> ...``.

Exit codes: 0 success, 2 input/config error, 3 geometry outside the model's
validity, 4 unphysical state, 5 identifiability failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bipartite, forward, reconstruct
from .formats import (
    FormatError, format_fit_report, format_scan, load_run_config, read_density, read_manifest,
    read_scan, relpath, write_manifest, write_text,
)
from .numerics import hermitian_eig
from .optics import GeometryError, validity_check
from .patterns import pattern_table

EXIT_OK, EXIT_INPUT, EXIT_GEOMETRY, EXIT_UNPHYSICAL, EXIT_IDENTIFIABILITY = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _config(args):
    if not args.config:
        raise CliError("--config is required", EXIT_INPUT)
    try:
        return load_run_config(args.config)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    except GeometryError as exc:
        raise CliError(f"invalid geometry: {exc}", EXIT_INPUT) from exc


def _check_geometry(cfg) -> None:
    rep = validity_check(cfg.geometry)
    if rep.status == "fail":
        raise CliError(f"geometry fails the validity check: {rep.reason}", EXIT_GEOMETRY)
    if rep.status == "warn":
        print(f"warning: {rep.reason}", file=sys.stderr)


def _load_state(path) -> np.ndarray:
    try:
        rho, _ = read_density(path)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    try:
        return forward.validate_density_matrix(rho, herm_tol=1e-9, trace_tol=1e-9, eig_tol=1e-9)
    except forward.StateError as exc:
        raise CliError(f"unphysical input state: {exc}", EXIT_UNPHYSICAL) from exc


def _reference(spec: str | None, dim: int):
    """Reference as a state vector (pure) or a density matrix."""
    if spec is None:
        if dim == 9:
            return bipartite.max_entangled_state(3)
        return None
    if spec == "entangled":
        d = int(round(np.sqrt(dim)))
        if d * d != dim:
            raise CliError(f"'entangled' reference needs a square dimension, got {dim}", EXIT_INPUT)
        return bipartite.max_entangled_state(d)
    try:
        ref, _ = read_density(spec)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    if ref.shape != (dim, dim):
        raise CliError(f"reference has dimension {ref.shape[0]}, matrix has {dim}", EXIT_INPUT)
    ref = ref / np.trace(ref).real
    w, v = hermitian_eig(ref)
    if dim == 1 or w[-2] < 1e-9 * w[-1]:
        return v[:, -1]
    return ref


def _fidelity_to(rho, ref) -> float:
    if ref.ndim == 1:
        return reconstruct.fidelity(rho, ref)
    return reconstruct.state_fidelity(rho, ref)


def cmd_patterns(args) -> int:
    cfg = _config(args)
    _check_geometry(cfg)
    pat = pattern_table(cfg.geometry, cfg.detector, cfg.grid)
    _emit(pat.to_csv(), args.out or cfg.outputs.get("patterns_out") or cfg.outputs.get("out"))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    _check_geometry(cfg)
    rho = _load_state(args.state)
    if rho.shape[0] != cfg.geometry.dim:
        raise CliError(f"state dimension {rho.shape[0]} does not match {cfg.geometry.dim} slits",
                       EXIT_INPUT)
    seed = cfg.seed if args.seed is None else args.seed
    pat = pattern_table(cfg.geometry, cfg.detector, cfg.grid)
    try:
        scan = forward.simulate_scan(rho, pat, cfg.exposure, seed, center_offset=cfg.center_offset_um)
    except forward.ModelError as exc:
        raise CliError(str(exc), EXIT_UNPHYSICAL) from exc
    _emit(format_scan(scan), args.out or cfg.outputs.get("scan_out") or cfg.outputs.get("out"))
    return EXIT_OK


def _print_metrics(rho, ref, stream=None) -> None:
    stream = stream or sys.stdout
    w, _ = hermitian_eig(rho)
    if ref is not None:
        print(f"fidelity = {_fidelity_to(rho, ref):.6f}", file=stream)
    print(f"purity = {reconstruct.purity(rho):.6f}", file=stream)
    print(f"trace = {np.trace(rho).real:.6f}", file=stream)
    print(f"min_eigenvalue = {w[0]:.6g}", file=stream)


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    _check_geometry(cfg)
    try:
        scan = read_scan(args.scan)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    mode = args.mode or cfg.mode
    search = args.offset_search if args.offset_search is not None else cfg.offset_search_um
    try:
        rep = reconstruct.reconstruct_single(scan, cfg.geometry, cfg.detector, mode,
                                             offset_search=search, weighted=cfg.weighted,
                                             background=cfg.background)
    except reconstruct.IdentifiabilityError as exc:
        raise CliError(str(exc), EXIT_IDENTIFIABILITY) from exc
    except reconstruct.DegenerateFitError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    out = args.out or cfg.outputs.get("report_out") or cfg.outputs.get("out")
    _emit(format_fit_report(rep), out)
    stream = sys.stdout if out else sys.stderr
    print(f"mode = {rep.mode}", file=stream)
    print(f"rss_pre = {rep.rss_pre:.6g}", file=stream)
    print(f"rss_post = {rep.rss_post:.6g}", file=stream)
    print(f"condition = {rep.condition:.6g}", file=stream)
    print(f"offset_um = {rep.offset_um:.3f}", file=stream)
    _print_metrics(rep.rho, _reference(args.reference, rep.dim), stream)
    return EXIT_OK


def cmd_simulate_joint(args) -> int:
    cfg = _config(args)
    _check_geometry(cfg)
    rho = _load_state(args.state)
    d = cfg.geometry.dim
    if rho.shape[0] != d * d:
        raise CliError(f"pair state must have dimension {d * d}, got {rho.shape[0]}", EXIT_INPUT)
    xb = cfg.xB_list_um or list(bipartite.default_xb_positions())
    seed = cfg.seed if args.seed is None else args.seed
    try:
        ss = bipartite.simulate_conditional_set(rho, cfg.geometry, cfg.detector, cfg.detector_b, xb,
                                                cfg.grid, cfg.exposure, seed,
                                                center_offset=cfg.center_offset_um)
    except forward.ModelError as exc:
        raise CliError(str(exc), EXIT_UNPHYSICAL) from exc
    out_dir = Path(args.out_dir or cfg.outputs.get("manifest_out") or cfg.outputs.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_manifest(ss, out_dir, geometry_config=relpath(args.config, out_dir))
    print(f"wrote {len(ss.scans)} scans and {path}")
    return EXIT_OK


def cmd_reconstruct_joint(args) -> int:
    geometry = None
    if args.config:
        cfg = _config(args)
        _check_geometry(cfg)
        geometry = cfg.geometry
        mode_default = cfg.mode
    else:
        mode_default = "realistic"
    try:
        ss = read_manifest(args.manifest, geometry)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    except GeometryError as exc:
        raise CliError(f"invalid geometry: {exc}", EXIT_INPUT) from exc
    if validity_check(ss.geometry).status == "fail":
        raise CliError("geometry fails the validity check", EXIT_GEOMETRY)
    try:
        rep = bipartite.reconstruct_joint(ss, args.mode or mode_default,
                                          per_scan_scale=args.per_scan_scale)
    except reconstruct.IdentifiabilityError as exc:
        raise CliError(str(exc), EXIT_IDENTIFIABILITY) from exc
    except reconstruct.DegenerateFitError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    _emit(format_fit_report(rep), args.out)
    stream = sys.stdout if args.out else sys.stderr
    print(f"rank = {rep.rank}", file=stream)
    print(f"condition = {rep.condition:.6g}", file=stream)
    _print_metrics(rep.rho, _reference(args.reference, rep.dim), stream)
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        rho, _ = read_density(args.matrix)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    _print_metrics(rho, _reference(args.reference, rho.shape[0]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scantomo",
                                description="Single-scan tomography of multi-slit spatial qudits.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run configuration file")
        sp.add_argument("--out", help="output path (default: stdout)")

    sp = sub.add_parser("patterns", help="tabulate the nine pattern functions as CSV")
    common(sp)
    sp.set_defaults(func=cmd_patterns)

    sp = sub.add_parser("simulate", help="simulate a Poisson counting scan")
    common(sp)
    sp.add_argument("--state", required=True, help="density-matrix file")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reconstruct", help="reconstruct a qutrit from one scan CSV")
    common(sp)
    sp.add_argument("scan")
    sp.add_argument("--mode", choices=reconstruct.MODES)
    sp.add_argument("--reference", help="reference state file or 'entangled'")
    sp.add_argument("--offset-search", type=float, metavar="UM",
                    help="fit the pattern centre within +-UM micrometres")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("simulate-joint", help="simulate conditional scans for a qutrit pair")
    sp.add_argument("--config", required=True)
    sp.add_argument("--state", required=True, help="9x9 density-matrix file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", help="directory for scan CSVs and manifest.json")
    sp.set_defaults(func=cmd_simulate_joint)

    sp = sub.add_parser("reconstruct-joint", help="reconstruct the 9x9 pair state from a manifest")
    common(sp, config_required=False)
    sp.add_argument("manifest")
    sp.add_argument("--mode", choices=reconstruct.MODES)
    sp.add_argument("--reference", help="reference state file or 'entangled' (default)")
    sp.add_argument("--per-scan-scale", action="store_true",
                    help="fit an independent flux factor for every scan")
    sp.set_defaults(func=cmd_reconstruct_joint)

    sp = sub.add_parser("metrics", help="fidelity, purity, trace and minimum eigenvalue")
    sp.add_argument("matrix")
    sp.add_argument("--reference", help="reference state file or 'entangled'")
    sp.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
