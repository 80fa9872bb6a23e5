import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scantomo.bipartite import conditional_state, default_xb_positions, max_entangled_state, werner_state
from scantomo.cli import main
from scantomo.formats import format_density, load_run_config, parse_fit_report, read_scan
from scantomo.optics import sinc_scale
from scantomo.patterns import measurement_operator, read_pattern_csv

from conftest import random_density

DATA = Path(__file__).parent / "data"
CFG = (DATA / "triple_slit.cfg").read_text()


def value(text, key):
    m = re.search(rf"^{key} = (\S+)$", text, re.M)
    assert m, f"{key} not printed in:\n{text}"
    return float(m.group(1))


@pytest.fixture
def work(tmp_path):
    (tmp_path / "run.cfg").write_text(CFG)
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_state(path, rho):
    path.write_text(format_density(rho))
    return path


def test_patterns_csv(work, capsys):
    code, out, _ = run(capsys, "patterns", "--config", work / "run.cfg")
    assert code == 0
    assert out.splitlines()[0].split(",") == ["x_um", "Mll", "Mcc", "Mrr", "ReMlc", "ImMlc",
                                              "ReMlr", "ImMlr", "ReMcr", "ImMcr"]
    assert all(len(line.split(",")) == 10 for line in out.splitlines())


def test_patterns_detector_width_changes_imlr_most(work, capsys):
    (work / "ideal.cfg").write_text(CFG.replace("detector_slit_um = 20", "detector_slit_um = 0"))
    run(capsys, "patterns", "--config", work / "run.cfg", "--out", work / "b20.csv")
    run(capsys, "patterns", "--config", work / "ideal.cfg", "--out", work / "b0.csv")
    _, c20 = read_pattern_csv((work / "b20.csv").read_text())
    _, c0 = read_pattern_csv((work / "b0.csv").read_text())
    rms = np.sqrt(np.mean((c20 - c0) ** 2, axis=0))
    # the l-r pair carries the fastest fringe, so slit averaging hits it hardest;
    # its Re and Im columns are equal to within the window's phase asymmetry
    others = np.delete(rms, [5, 6])
    assert rms[6] > 1.3 * others.max()
    assert rms[6] == pytest.approx(rms.max(), rel=1e-3)


def test_invalid_key_exit_2(work, capsys):
    (work / "bad.cfg").write_text(CFG + "focal_length_mm = 50\n")
    code, _, err = run(capsys, "patterns", "--config", work / "bad.cfg")
    assert code == 2 and "focal_length_mm" in err


def test_missing_config_exit_2(work, capsys):
    code, _, _ = run(capsys, "patterns", "--config", work / "nope.cfg")
    assert code == 2


def test_geometry_fail_exit_3(work, capsys):
    (work / "img.cfg").write_text(CFG.replace("z_mm = 90.5", "z_mm = 99.5"))
    code, _, err = run(capsys, "patterns", "--config", work / "img.cfg")
    assert code == 3 and "validity" in err


def test_simulate_is_byte_identical(work, capsys, rng):
    state = write_state(work / "rho.txt", random_density(rng))
    for name in ("a.csv", "b.csv"):
        assert run(capsys, "simulate", "--config", work / "run.cfg", "--state", state,
                   "--seed", 5, "--out", work / name)[0] == 0
    assert (work / "a.csv").read_bytes() == (work / "b.csv").read_bytes()
    run(capsys, "simulate", "--config", work / "run.cfg", "--state", state, "--seed", 6,
        "--out", work / "c.csv")
    assert (work / "a.csv").read_bytes() != (work / "c.csv").read_bytes()


def test_simulate_errors(work, capsys):
    code, _, _ = run(capsys, "simulate", "--config", work / "run.cfg", "--state", work / "none.txt")
    assert code == 2
    bad = write_state(work / "bad.txt", np.diag([1.2, -0.2, 0.0]))
    code, _, err = run(capsys, "simulate", "--config", work / "run.cfg", "--state", bad)
    assert code == 4 and "unphysical" in err
    two = write_state(work / "two.txt", np.eye(2) / 2)
    assert run(capsys, "simulate", "--config", work / "run.cfg", "--state", two)[0] == 2


def test_mixed_state_scan_has_no_lr_fringe(work, capsys):
    state = write_state(work / "mixed.txt", np.eye(3) / 3)
    run(capsys, "simulate", "--config", work / "run.cfg", "--state", state, "--out", work / "s.csv")
    scan = read_scan(work / "s.csv")
    cfg = load_run_config(work / "run.cfg")
    # l-r fringes oscillate at 2K * 270 / a rad/um; project counts onto that frequency
    w = 2 * sinc_scale(cfg.geometry) * 270.0 / 45.0
    resid = scan.counts - np.convolve(scan.counts, np.ones(9) / 9, mode="same")
    inner = slice(10, -10)
    amp = abs(np.sum(resid[inner] * np.exp(-1j * w * scan.grid[inner])))
    noise = np.sqrt(np.sum(scan.counts[inner]))
    assert amp < 5 * noise
    # a coherent l-r superposition in contrast shows the fringe strongly
    psi = np.array([1, 0, 1]) / np.sqrt(2)
    state = write_state(work / "lr.txt", np.outer(psi, psi))
    run(capsys, "simulate", "--config", work / "run.cfg", "--state", state, "--out", work / "c.csv")
    coh = read_scan(work / "c.csv")
    resid = coh.counts - np.convolve(coh.counts, np.ones(9) / 9, mode="same")
    assert abs(np.sum(resid[inner] * np.exp(-1j * w * coh.grid[inner]))) > 20 * noise


def test_simulate_reconstruct_round_trip(work, capsys, rng):
    rho = random_density(rng)
    state = write_state(work / "rho.txt", rho)
    run(capsys, "simulate", "--config", work / "run.cfg", "--state", state, "--out", work / "s.csv")
    code, out, _ = run(capsys, "reconstruct", "--config", work / "run.cfg", work / "s.csv",
                       "--reference", state, "--out", work / "fit.txt")
    assert code == 0
    assert value(out, "fidelity") >= 0.99
    assert value(out, "trace") == pytest.approx(1.0)
    rep = parse_fit_report((work / "fit.txt").read_text())
    assert rep.mode == "realistic"

    code, out_ideal, _ = run(capsys, "reconstruct", "--config", work / "run.cfg", work / "s.csv",
                             "--mode", "ideal", "--out", work / "fit_ideal.txt")
    assert code == 0
    assert value(out_ideal, "rss_post") > value(out, "rss_post")


def test_reconstruct_with_offset_search(work, capsys, rng):
    (work / "off.cfg").write_text(CFG + "center_offset_um = 6\n")
    state = write_state(work / "rho.txt", random_density(rng))
    run(capsys, "simulate", "--config", work / "off.cfg", "--state", state, "--out", work / "s.csv")
    text = (work / "s.csv").read_text().replace("# offset_um=6\n", "")
    (work / "blind.csv").write_text(text)
    code, out, _ = run(capsys, "reconstruct", "--config", work / "run.cfg", work / "blind.csv",
                       "--offset-search", 15, "--reference", state, "--out", work / "f.txt")
    assert code == 0
    assert value(out, "offset_um") == pytest.approx(6.0, abs=0.3)


def test_reconstruct_malformed_csv(work, capsys):
    (work / "bad.csv").write_text("x_um,counts\n0,5\n5,seven\n")
    code, _, err = run(capsys, "reconstruct", "--config", work / "run.cfg", work / "bad.csv")
    assert code == 2 and "line 3" in err


def test_reconstruct_identifiability_exit_5(work, capsys):
    (work / "s.csv").write_text("x_um,counts\n" + "".join(f"{x},{100 + x}\n" for x in range(5)))
    code, _, err = run(capsys, "reconstruct", "--config", work / "run.cfg", work / "s.csv")
    assert code == 5 and "rank" in err


def _joint_config(work, exposure, xb=None):
    text = CFG.replace("exposure = 1e7", f"exposure = {exposure:.6g}")
    text = text.replace("grid_step_um = 5", "grid_step_um = 8")
    if xb is not None:
        text += "xB_list_um = " + ", ".join(f"{v:g}" for v in xb) + "\n"
    (work / "joint.cfg").write_text(text)
    return work / "joint.cfg"


def _exposure_for(counts_per_scan, rho, cfg_path):
    """Exposure giving the requested mean total counts per conditional scan."""
    cfg = load_run_config(cfg_path)
    xb = default_xb_positions()
    tot = [np.trace(conditional_state(rho, measurement_operator(cfg.geometry, cfg.detector_b, x))).real
           for x in xb]
    return counts_per_scan / np.mean(tot)


def test_joint_pipeline_werner(work, capsys):
    rho = werner_state(max_entangled_state(), 0.2)
    exposure = _exposure_for(1e7, rho, work / "run.cfg")
    cfg = _joint_config(work, exposure)
    state = write_state(work / "w.txt", rho)
    code, out, _ = run(capsys, "simulate-joint", "--config", cfg, "--state", state,
                       "--seed", 3, "--out-dir", work / "scans")
    assert code == 0 and (work / "scans" / "manifest.json").exists()
    code, out, _ = run(capsys, "reconstruct-joint", work / "scans" / "manifest.json",
                       "--out", work / "fit9.txt")
    assert code == 0
    assert value(out, "rank") == 81
    assert abs(value(out, "fidelity") - (0.8 + 0.2 / 9)) <= 0.02


def test_joint_pipeline_entangled(work, capsys):
    rho = werner_state(max_entangled_state(), 0.0)
    cfg = _joint_config(work, _exposure_for(1e7, rho, work / "run.cfg"))
    state = write_state(work / "e.txt", rho)
    run(capsys, "simulate-joint", "--config", cfg, "--state", state, "--out-dir", work / "scans")
    code, out, _ = run(capsys, "reconstruct-joint", work / "scans" / "manifest.json",
                       "--config", cfg, "--out", work / "fit9.txt")
    assert code == 0 and value(out, "fidelity") >= 0.98


def test_joint_too_few_positions_exit_5(work, capsys):
    cfg = _joint_config(work, 1e9, xb=[-20, 0, 20])
    state = write_state(work / "e.txt", werner_state(max_entangled_state(), 0.1))
    run(capsys, "simulate-joint", "--config", cfg, "--state", state, "--out-dir", work / "scans")
    code, _, err = run(capsys, "reconstruct-joint", work / "scans" / "manifest.json")
    assert code == 5 and "81" in err


def test_joint_missing_scan_file_exit_2(work, capsys):
    cfg = _joint_config(work, 1e9, xb=[-20, 0, 20])
    state = write_state(work / "e.txt", werner_state(max_entangled_state(), 0.1))
    run(capsys, "simulate-joint", "--config", cfg, "--state", state, "--out-dir", work / "scans")
    (work / "scans" / "scan_001.csv").unlink()
    code, _, _ = run(capsys, "reconstruct-joint", work / "scans" / "manifest.json")
    assert code == 2


def test_simulate_joint_is_byte_identical(work, capsys):
    cfg = _joint_config(work, 1e9, xb=[-20, 0, 20])
    state = write_state(work / "e.txt", werner_state(max_entangled_state(), 0.1))
    for d in ("a", "b"):
        run(capsys, "simulate-joint", "--config", cfg, "--state", state, "--out-dir", work / d)
    for f in sorted((work / "a").iterdir()):
        assert f.read_bytes() == (work / "b" / f.name).read_bytes()


def test_metrics_published_matrix(capsys):
    code, out, _ = run(capsys, "metrics", DATA / "published_pair_state.txt",
                       "--reference", "entangled")
    assert code == 0
    assert value(out, "fidelity") == pytest.approx(0.819, abs=0.002)


def test_metrics_simple_cases(work, capsys):
    write_state(work / "mix.txt", np.eye(9) / 9)
    code, out, _ = run(capsys, "metrics", work / "mix.txt", "--reference", "entangled")
    assert code == 0 and value(out, "fidelity") == pytest.approx(1 / 9, abs=1e-6)
    assert value(out, "purity") == pytest.approx(1 / 9, abs=1e-6)
    psi = np.array([1, 1j, 0]) / np.sqrt(2)
    write_state(work / "pure.txt", np.outer(psi, psi.conj()))
    code, out, _ = run(capsys, "metrics", work / "pure.txt", "--reference", work / "pure.txt")
    assert value(out, "fidelity") == pytest.approx(1.0, abs=1e-6)
    assert value(out, "min_eigenvalue") == pytest.approx(0.0, abs=1e-9)


def test_metrics_dimension_mismatch(work, capsys):
    write_state(work / "q.txt", np.eye(3) / 3)
    code, _, _ = run(capsys, "metrics", work / "q.txt", "--reference", DATA / "published_pair_state.txt")
    assert code == 2
    assert run(capsys, "metrics", work / "missing.txt")[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "scantomo", "metrics",
                          str(DATA / "published_pair_state.txt")],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "fidelity" in res.stdout
