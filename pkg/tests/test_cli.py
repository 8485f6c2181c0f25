import json
import subprocess
import sys

import numpy as np
import pytest

from qdcascade import io
from qdcascade.cli import LOCK_NAME, main
from qdcascade.config import load_preset


def small_config(tmp_path, **tomo):
    doc = load_preset("apd")
    doc["params"].update(window_start=-800.0, window_end=2400.0)
    doc["tomography"].update(window_width=400.0, window_step=400.0, repetitions=3, **tomo)
    doc["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def outputs(root):
    """Every CSV/JSON output except the manifests (which record wall-clock time)."""
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in (".csv", ".json") and not p.name.startswith("manifest_")
    }


def test_simulate_writes_histograms(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    out = tmp_path / "out" / "histograms"
    hist = io.read_histograms(out / "sampled.csv", out / "sampled.json")
    assert hist.counts.shape == (200, 36)
    assert hist.kind == "sampled"
    assert (out / "expected.csv").exists()
    assert (tmp_path / "out" / "manifest_simulate.json").exists()


def test_expected_only_skips_sampling(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--expected-only"]) == 0
    assert not (tmp_path / "out" / "histograms" / "sampled.csv").exists()


def test_pipeline_outputs_and_manifest_digests(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["pipeline", "--config", str(cfg)]) == 0
    root = tmp_path / "out"
    summary = json.loads((root / "analysis" / "summary.json").read_text())
    assert 0 < summary["peak_concurrence"]["value"] < 1
    assert summary["lifetime_ps"]["value"] == pytest.approx(847.0, rel=1e-3)
    for cmd in ("simulate", "reconstruct", "analyze"):
        man = json.loads((root / f"manifest_{cmd}.json").read_text())
        assert man["config_hash"]
        for entry in man["outputs"]:
            assert io.file_digest(root / entry["path"]) == entry["sha256"]
    notes = json.loads((root / "manifest_reconstruct.json").read_text())["notes"]
    # window centered at -400 ps holds the bins whose centers lie in [-600, -200)
    assert notes["window_edges_ps"][0] == [-608.0, -208.0]
    assert not (root / LOCK_NAME).exists()


def test_sampled_source_pipeline(tmp_path):
    cfg = small_config(tmp_path, histogram_source="sampled")
    assert main(["pipeline", "--config", str(cfg)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o2"), "--expected-only"]) == 2


def test_end_to_end_byte_determinism(tmp_path):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--out", str(b)]) == 0
    oa, ob = outputs(a), outputs(b)
    assert oa.keys() == ob.keys() and len(oa) > 5
    assert oa == ob


def test_seed_override_changes_sampled_output(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9"]) == 0
    sa = (tmp_path / "a" / "histograms" / "sampled.csv").read_bytes()
    sb = (tmp_path / "b" / "histograms" / "sampled.csv").read_bytes()
    assert sa != sb


def test_windows_flag(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["reconstruct", "--config", str(cfg), "--windows", "800,800"]) == 0
    lines = (tmp_path / "out" / "tomography" / "series.csv").read_text().splitlines()
    assert [float(r.split(",")[0]) for r in lines[1:]] == [0.0, 800.0, 1600.0]
    assert main(["reconstruct", "--config", str(cfg), "--windows", "800"]) == 2
    assert main(["reconstruct", "--config", str(cfg), "--windows=-5,10"]) == 2


def test_missing_basis_pair_is_user_error(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    src = tmp_path / "out" / "histograms" / "expected.csv"
    bad = tmp_path / "bad.csv"
    bad.write_text("".join(line for line in src.open() if not line.startswith("R,L,")))
    assert main(["reconstruct", "--config", str(cfg), "--histograms", str(bad)]) == 2
    assert "(R,L)" in capsys.readouterr().err


def test_all_empty_windows_is_numerical_failure(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    src = tmp_path / "out" / "histograms" / "expected.csv"
    lines = src.read_text().splitlines()
    zero = [lines[0]] + [",".join(line.split(",")[:3] + ["0"]) for line in lines[1:]]
    path = tmp_path / "zero.csv"
    path.write_text("\n".join(zero) + "\n")
    assert main(["reconstruct", "--config", str(cfg), "--histograms", str(path)]) == 4


def test_config_errors_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 2
    doc = load_preset("apd")
    del doc["seed"]
    bad.write_text(json.dumps(doc))
    assert main(["simulate", "--config", str(bad)]) == 2


def test_io_errors_exit_3(tmp_path):
    cfg = small_config(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--config", str(cfg), "--out", str(blocker / "sub")]) == 3


def test_lock_file_detects_concurrent_run(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    (out / LOCK_NAME).write_text("123")
    assert main(["simulate", "--config", str(cfg)]) == 3
    (out / LOCK_NAME).unlink()
    assert main(["simulate", "--config", str(cfg)]) == 0


def test_sweep_errors(tmp_path):
    cfg = small_config(tmp_path)
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({"variants": []}))
    assert main(["sweep", "--config", str(cfg), "--sweep", str(sweep)]) == 2
    sweep.write_text(json.dumps({"variants": [{"name": "x", "overrides": {"warp": 9}}]}))
    assert main(["sweep", "--config", str(cfg), "--sweep", str(sweep)]) == 2


def test_g2_sweep_is_monotone(tmp_path):
    cfg = small_config(tmp_path)
    sweep = tmp_path / "sweep.json"
    variants = [
        {"name": f"g{g}", "overrides": {"g2_xx": g, "irf_fwhm": 0.0, "dark_rate_x": 0.0, "dark_rate_xx": 0.0}}
        for g in (0.0, 0.05, 0.1, 0.2)
    ]
    sweep.write_text(json.dumps({"variants": variants}))
    assert main(["sweep", "--config", str(cfg), "--sweep", str(sweep), "--expected-only"]) == 0
    rows = (tmp_path / "out" / "sweep_summary.csv").read_text().splitlines()[1:]
    peaks = [float(r.split(",")[1]) for r in rows]
    assert len(peaks) == 4
    assert all(a >= b for a, b in zip(peaks, peaks[1:]))
    for v in variants:
        assert (tmp_path / "out" / v["name"] / "analysis" / "summary.json").exists()
    head = (tmp_path / "out" / "scenarios_long.csv").read_text().splitlines()[0]
    assert head.startswith("scenario,")


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qdcascade.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "pipeline" in res.stdout
