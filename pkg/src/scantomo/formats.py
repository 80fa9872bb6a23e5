"""Text formats: run configuration, density matrices, fit reports, scans, manifests.

Run configuration is a flat ``key = value`` file (``#`` comments, lists as
comma-separated values).  Density matrices and fit reports share one block
layout::

    dim = 3
    re = <dim*dim values, row-major>
    im = <dim*dim values, row-major>

followed, for fit reports, by ``scale``, ``rss_pre``, ``rss_post``,
``condition``, ``offset_um`` and ``mode``.
"""

from __future__ import annotations

import configparser
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import ArmBContext, ScanRecord
from .optics import Geometry
from .patterns import DetectorSpec
from .reconstruct import FitReport


class FormatError(ValueError):
    pass


GEOMETRY_KEYS = {"lambda_nm", "slit_width_um", "slit_pitch_um", "slit_offsets_um", "slit_count",
                 "f_mm", "L_mm", "z_mm"}
RUN_KEYS = {"detector_slit_um", "detector_slit_B_um", "quad_points", "grid_min_um", "grid_max_um",
            "grid_step_um", "exposure", "seed", "mode", "xB_list_um", "center_offset_um",
            "offset_search_um", "weighted", "background", "out", "patterns_out", "scan_out",
            "report_out", "manifest_out"}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def parse_config(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` text; unknown keys raise :class:`FormatError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise FormatError(f"malformed config: {exc}") from exc
    values = dict(cp["run"])
    unknown = sorted(set(values) - GEOMETRY_KEYS - RUN_KEYS)
    if unknown:
        raise FormatError(f"unknown config key(s): {', '.join(unknown)}")
    return values


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


def geometry_from_config(cfg: dict[str, str]) -> Geometry:
    try:
        if "slit_offsets_um" in cfg:
            if "slit_pitch_um" in cfg:
                raise FormatError("give either slit_offsets_um or slit_pitch_um, not both")
            offsets = _floats(cfg["slit_offsets_um"])
        else:
            n = int(cfg.get("slit_count", 3))
            pitch = float(cfg["slit_pitch_um"])
            offsets = list(pitch * (np.arange(n) - 0.5 * (n - 1)))
        return Geometry(wavelength=float(cfg["lambda_nm"]) * 1e-3,
                        slit_width=float(cfg["slit_width_um"]),
                        slit_offsets=tuple(offsets),
                        focal_length=float(cfg["f_mm"]) * 1e3,
                        slit_to_lens=float(cfg["L_mm"]) * 1e3,
                        lens_to_detector=float(cfg["z_mm"]) * 1e3)
    except KeyError as exc:
        raise FormatError(f"missing geometry key {exc.args[0]}") from exc
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"bad geometry value: {exc}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    geometry: Geometry
    detector_slit_um: float = 20.0
    detector_slit_B_um: float | None = None
    quad_points: int = 32
    grid_min_um: float = -500.0
    grid_max_um: float = 500.0
    grid_step_um: float = 5.0
    exposure: float = 1e7
    seed: int = 0
    mode: str = "realistic"
    xB_list_um: list[float] = field(default_factory=list)
    center_offset_um: float = 0.0
    offset_search_um: float | None = None
    weighted: bool = False
    background: bool = False
    outputs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid_min_um < self.grid_max_um:
            raise FormatError("grid_min_um must be below grid_max_um")
        if not self.grid_step_um > 0:
            raise FormatError("grid_step_um must be positive")
        if self.mode not in ("ideal", "realistic"):
            raise FormatError(f"mode must be 'ideal' or 'realistic', got {self.mode!r}")
        if not self.exposure > 0:
            raise FormatError("exposure must be positive")

    @property
    def grid(self) -> np.ndarray:
        n = int(np.floor((self.grid_max_um - self.grid_min_um) / self.grid_step_um + 1e-9))
        return self.grid_min_um + self.grid_step_um * np.arange(n + 1)

    @property
    def detector(self) -> DetectorSpec:
        return DetectorSpec(self.detector_slit_um, self.quad_points)

    @property
    def detector_b(self) -> DetectorSpec:
        b = self.detector_slit_um if self.detector_slit_B_um is None else self.detector_slit_B_um
        return DetectorSpec(b, self.quad_points)

    @classmethod
    def from_mapping(cls, cfg: dict[str, str]) -> "RunConfig":
        g = geometry_from_config(cfg)
        kw = {}
        try:
            for key in ("detector_slit_um", "grid_min_um", "grid_max_um", "grid_step_um",
                        "exposure", "center_offset_um"):
                if key in cfg:
                    kw[key] = float(cfg[key])
            for key in ("detector_slit_B_um", "offset_search_um"):
                if key in cfg:
                    kw[key] = float(cfg[key])
            for key in ("quad_points", "seed"):
                if key in cfg:
                    kw[key] = int(cfg[key])
            for key in ("weighted", "background"):
                if key in cfg:
                    kw[key] = _bool(cfg[key])
            if "mode" in cfg:
                kw["mode"] = cfg["mode"].strip()
            if "xB_list_um" in cfg:
                kw["xB_list_um"] = _floats(cfg["xB_list_um"])
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"bad config value: {exc}") from exc
        kw["outputs"] = {k: v for k, v in cfg.items() if k == "out" or k.endswith("_out")}
        return cls(geometry=g, **kw)


def load_run_config(path) -> RunConfig:
    return RunConfig.from_mapping(read_config(path))


# -- density matrices and fit reports ---------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.12g}"


def format_density(rho, **extra) -> str:
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    lines = [f"dim = {d}",
             "re = " + " ".join(_fmt(v) for v in rho.real.ravel()),
             "im = " + " ".join(_fmt(v) for v in rho.imag.ravel())]
    for k, v in extra.items():
        lines.append(f"{k} = {_fmt(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def parse_density(text: str) -> tuple[np.ndarray, dict[str, str]]:
    """Parse a density-matrix block; returns the matrix and the remaining fields."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        fields[k.strip()] = v.strip()
    try:
        d = int(fields.pop("dim"))
        re = np.array(_floats(fields.pop("re")))
        im = np.array(_floats(fields.pop("im", "0 " * d * d)))
    except KeyError as exc:
        raise FormatError(f"missing field {exc.args[0]}") from exc
    except ValueError as exc:
        raise FormatError(f"bad numeric value: {exc}") from exc
    if re.size != d * d or im.size != d * d:
        raise FormatError(f"expected {d * d} entries for dim = {d}")
    return (re + 1j * im).reshape(d, d), fields


def read_density(path) -> tuple[np.ndarray, dict[str, str]]:
    try:
        return parse_density(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read matrix file {path}: {exc.strerror}") from exc


def format_fit_report(rep: FitReport) -> str:
    return format_density(rep.rho, scale=float(rep.scale), rss_pre=float(rep.rss_pre),
                          rss_post=float(rep.rss_post), condition=float(rep.condition),
                          offset_um=float(rep.offset_um), mode=rep.mode)


def parse_fit_report(text: str) -> FitReport:
    rho, f = parse_density(text)
    try:
        return FitReport(rho=rho, scale=float(f["scale"]), rss_pre=float(f["rss_pre"]),
                         rss_post=float(f["rss_post"]), condition=float(f["condition"]),
                         offset_um=float(f["offset_um"]), mode=f["mode"])
    except KeyError as exc:
        raise FormatError(f"missing fit-report field {exc.args[0]}") from exc


# -- scans --------------------------------------------------------------------------------------

def format_scan(scan: ScanRecord) -> str:
    buf = io.StringIO()
    buf.write(f"# exposure={_fmt(scan.exposure)}\n")
    if scan.seed is not None:
        buf.write(f"# seed={scan.seed}\n")
    if scan.context is not None:
        buf.write(f"# xB_um={_fmt(scan.context.x_b)}\n# bB_um={_fmt(scan.context.b_b)}\n")
    buf.write(f"# offset_um={_fmt(scan.center_offset)}\n")
    buf.write("x_um,counts\n")
    integral = np.issubdtype(np.asarray(scan.counts).dtype, np.integer)
    for x, c in zip(scan.grid, scan.counts):
        buf.write(f"{_fmt(x)},{int(c) if integral else _fmt(float(c))}\n")
    return buf.getvalue()


def parse_scan(text: str) -> ScanRecord:
    meta: dict[str, str] = {}
    xs, cs = [], []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if not header_seen:
            if [c.strip() for c in line.split(",")] != ["x_um", "counts"]:
                raise FormatError(f"line {lineno}: expected header 'x_um,counts'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            x = float(parts[0])
            c = float(parts[1])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric value") from None
        if c < 0 or not np.isfinite(c) or not np.isfinite(x):
            raise FormatError(f"line {lineno}: counts must be finite and non-negative")
        xs.append(x)
        cs.append(c)
    if not header_seen or not xs:
        raise FormatError("scan file has no data rows")
    counts = np.array(cs)
    if np.all(counts == np.round(counts)):
        counts = counts.astype(np.int64)
    ctx = None
    try:
        if "xB_um" in meta:
            ctx = ArmBContext(float(meta["xB_um"]), float(meta.get("bB_um", 0.0)))
        return ScanRecord(np.array(xs), counts, float(meta.get("exposure", 1.0)),
                          float(meta.get("offset_um", 0.0)), ctx,
                          int(meta["seed"]) if "seed" in meta else None)
    except ValueError as exc:
        raise FormatError(f"bad scan metadata: {exc}") from exc


def read_scan(path) -> ScanRecord:
    try:
        return parse_scan(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read scan file {path}: {exc.strerror}") from exc


def write_text(path, text: str) -> None:
    Path(path).write_text(text)


# -- conditional scan manifests -----------------------------------------------------------------

def write_manifest(scan_set, directory, geometry_config: str | None = None,
                   stem: str = "scan") -> Path:
    """Write one scan CSV per arm-B position plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(scan_set.scans):
        name = f"{stem}_{k:03d}.csv"
        (directory / name).write_text(format_scan(s))
        entries.append({"file": name, "xB_um": s.context.x_b, "bB_um": s.context.b_b})
    manifest = {"geometry_config": geometry_config, "exposure": scan_set.exposure,
                "detector_slit_A_um": scan_set.detector_a.slit_width_b,
                "quad_points": scan_set.detector_a.quad_points, "scans": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_manifest(path, geometry: Geometry | None = None):
    """Load a :class:`~scantomo.bipartite.ConditionalScanSet` from a manifest file.

    Without an explicit ``geometry`` the manifest's ``geometry_config``
    (relative to the manifest) is loaded.
    """
    from .bipartite import ConditionalScanSet

    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if geometry is None:
        ref = man.get("geometry_config")
        if not ref:
            raise FormatError("manifest has no geometry_config and no geometry was given")
        geometry = geometry_from_config(read_config(path.parent / ref))
    scans = []
    for entry in man.get("scans", []):
        s = read_scan(path.parent / entry["file"])
        ctx = ArmBContext(float(entry["xB_um"]), float(entry.get("bB_um", 0.0)))
        scans.append(ScanRecord(s.grid, s.counts, s.exposure, s.center_offset, ctx, s.seed))
    if not scans:
        raise FormatError("manifest lists no scans")
    det = DetectorSpec(float(man.get("detector_slit_A_um", 0.0)), int(man.get("quad_points", 32)))
    return ConditionalScanSet(scans, geometry, det, float(man.get("exposure", 1.0)))


def relpath(target, start) -> str:
    return os.path.relpath(Path(target).resolve(), Path(start).resolve())
