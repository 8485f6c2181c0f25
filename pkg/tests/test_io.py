import json

import numpy as np
import pytest

from qdcascade import io
from qdcascade.cascade import CascadeParams, expected_histograms, sample_histograms
from qdcascade.config import ConfigError, RunConfig, config_hash, load_preset, preset_names
from qdcascade.errors import ValidationError
from qdcascade.tomography import windowed_tomography

SMALL = CascadeParams(window_start=-800.0, window_end=2400.0)


@pytest.fixture(scope="module")
def small_hist():
    return expected_histograms(SMALL)


@pytest.mark.parametrize("kind", ["expected", "sampled"])
def test_histogram_round_trip_is_byte_identical(tmp_path, small_hist, kind):
    hist = small_hist if kind == "expected" else sample_histograms(small_hist, 2)
    a_csv, a_json = tmp_path / "a.csv", tmp_path / "a.json"
    io.write_histograms(hist, a_csv, a_json)
    back = io.read_histograms(a_csv, a_json)
    assert back.params == hist.params
    assert back.kind == hist.kind
    assert np.array_equal(back.counts, hist.counts)
    b_csv, b_json = tmp_path / "b.csv", tmp_path / "b.json"
    io.write_histograms(back, b_csv, b_json)
    assert a_csv.read_bytes() == b_csv.read_bytes()
    assert a_json.read_bytes() == b_json.read_bytes()


def test_histogram_csv_layout(tmp_path, small_hist):
    path = tmp_path / "h.csv"
    io.write_histograms(small_hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "basis_x,basis_xx,bin_start_ps,counts"
    assert len(lines) == 1 + 36 * small_hist.grid.n_bins
    assert lines[1].startswith("H,H,-800.0,")


def test_metadata_mirrors_params(tmp_path, small_hist):
    path = tmp_path / "h.json"
    io.write_histograms(small_hist, tmp_path / "h.csv", path)
    meta = json.loads(path.read_text())
    for key, value in SMALL.to_dict().items():
        assert meta[key] == value
    assert meta["derived"]["pair_count"] == pytest.approx(2758.0, abs=0.5)


def _write_rows(path, rows, header="basis_x,basis_xx,bin_start_ps,counts"):
    path.write_text("\n".join([header] + rows) + "\n")


def _full_rows(skip=None, nbins=3):
    from qdcascade.polarization import BASIS_PAIRS

    rows = []
    for i, j in BASIS_PAIRS:
        if (i, j) == skip:
            continue
        rows += [f"{i},{j},{16.0 * k},{k + 1}" for k in range(nbins)]
    return rows


def test_read_reports_missing_pair(tmp_path):
    p = tmp_path / "h.csv"
    _write_rows(p, _full_rows(skip=("R", "L")))
    with pytest.raises(ValidationError, match=r"\(R,L\)"):
        io.read_histograms(p)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda r: r[:5] + ["H,H,80.0"] + r[5:], "expected 4 fields"),
        (lambda r: r + ["H,Q,0.0,1"], "unknown polarization"),
        (lambda r: [r[0].replace(",1", ",-1")] + r[1:], "negative"),
        (lambda r: [r[0].replace(",1", ",abc")] + r[1:], "not a number"),
        (lambda r: r + [r[0]], "duplicate"),
        (lambda r: r + ["H,H,48.0,1"], "do not match"),
    ],
)
def test_read_rejects_malformed(tmp_path, mutate, match):
    p = tmp_path / "h.csv"
    _write_rows(p, mutate(_full_rows()))
    with pytest.raises(ValidationError, match=match):
        io.read_histograms(p)


def test_read_rejects_bad_header_and_spacing(tmp_path):
    p = tmp_path / "h.csv"
    _write_rows(p, _full_rows(), header="a,b,c,d")
    with pytest.raises(ValidationError, match="header"):
        io.read_histograms(p)
    rows = [r.replace(",32.0,", ",40.0,") for r in _full_rows()]
    _write_rows(p, rows)
    with pytest.raises(ValidationError, match="uniformly"):
        io.read_histograms(p)


def test_tomography_round_trip(tmp_path, small_hist):
    series = windowed_tomography(small_hist, 400.0, 400.0, 0.1, repetitions=4, seed=1)
    io.write_tomography(series, tmp_path / "t")
    back = io.read_tomography(tmp_path / "t")
    assert len(back) == len(series)
    for a, b in zip(series, back):
        assert a.concurrence == b.concurrence
        assert np.array_equal(a.rho_dc, b.rho_dc)
        assert np.array_equal(a.mc_concurrence, b.mc_concurrence, equal_nan=True)
    head = (tmp_path / "t" / "series.csv").read_text().splitlines()[0]
    assert head == "window_center_ps,concurrence,c_low,c_high,total_counts"
    doc = json.loads((tmp_path / "t" / "windows" / "window_0000.json").read_text())
    assert {"real", "imag", "rho_dc_real", "c_low", "bin_edges_ps"} <= set(doc)


def test_curve_layout(tmp_path, small_hist):
    series = windowed_tomography(small_hist, 400.0, 400.0, 0.1, repetitions=0)
    path = io.write_curve(series, tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t_ps,concurrence,c_low,c_high"
    assert len(lines) == len(series) + 1


def test_file_digest(tmp_path):
    p = tmp_path / "x.txt"
    p.write_bytes(b"abc")
    assert io.file_digest(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_json_nan_written_as_null(tmp_path):
    p = io.dump_json({"a": float("nan"), "b": [1.0, float("inf")]}, tmp_path / "x.json")
    assert json.loads(p.read_text()) == {"a": None, "b": [1.0, None]}


# --- config ----------------------------------------------------------------------------


def test_config_hash_independent_of_key_order():
    a = {"seed": 1, "params": {"tau_x": 847.0, "g2_xx": 0.1}}
    b = {"params": {"g2_xx": 0.1, "tau_x": 847.0}, "seed": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})


def test_presets_load():
    assert {"apd", "snspd", "snspd_g2_0"} <= set(preset_names())
    cfg = RunConfig.from_dict(load_preset("apd"))
    assert cfg.params == CascadeParams()
    assert cfg.tomography.repetitions == 1000
    assert RunConfig.from_dict(load_preset("snspd")).params.irf_fwhm == 30.0


def test_config_round_trip():
    cfg = RunConfig.from_dict(load_preset("apd"))
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).config_hash() == cfg.config_hash()


@pytest.mark.parametrize(
    "edit, match",
    [
        (lambda d: d.pop("seed"), "seed"),
        (lambda d: d["params"].update(tau_x=-1.0), "tau_x"),
        (lambda d: d["params"].update(colour=1), "colour"),
        (lambda d: d["tomography"].update(window_width=0.0), "window_width"),
        (lambda d: d["tomography"].update(background_model="magic"), "background_model"),
        (lambda d: d.update(extra=1), "extra"),
    ],
)
def test_config_errors_name_the_field(edit, match):
    doc = load_preset("apd")
    edit(doc)
    with pytest.raises((ConfigError, ValidationError), match=match):
        RunConfig.from_dict(doc)


def test_unknown_override_rejected():
    cfg = RunConfig.from_dict(load_preset("apd"))
    with pytest.raises(ConfigError, match="nope"):
        cfg.with_params(nope=1.0)
    assert cfg.with_params(g2_xx=0.0).params.g2_xx == 0.0
