import csv
import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from obmlab.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
KERNEL = str(CONFIGS / "two_state_quarter.json")
F = str(CONFIGS / "indicator_state1.json")


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_subcommand(capsys):
    code, _, err = _run(["frobnicate"], capsys)
    assert code == 1
    assert len(err.strip().splitlines()) == 1


def test_missing_subcommand(capsys):
    assert _run([], capsys)[0] == 1


def test_bad_row_names_the_row(capsys):
    code, _, err = _run(["kernel", "--kernel", str(CONFIGS / "bad_row.json")], capsys)
    assert code == 2
    assert "row 0" in err and "0.9" in err
    assert len(err.strip().splitlines()) == 1


def test_missing_file_is_input_error(capsys, tmp_path):
    assert _run(["kernel", "--kernel", str(tmp_path / "nope.json")], capsys)[0] == 2


def test_kernel_summary(capsys):
    code, out, _ = _run(["kernel", "--kernel", KERNEL], capsys)
    info = json.loads(out)
    assert code == 0 and info["t_mix"] == 2 and info["pi"] == [0.5, 0.5]


def test_kernel_library_to_file(capsys, tmp_path):
    out = tmp_path / "lc.json"
    code, _, _ = _run(["kernel", "--name", "lazy_cycle", "--param", "m=5", "--out", str(out)], capsys)
    assert code == 0
    assert json.loads(out.read_text())["n_states"] == 5
    manifest = json.loads((tmp_path / "lc.json.manifest.json").read_text())
    assert manifest["subcommand"] == "kernel" and "version" in manifest


def test_poisson_report(capsys):
    code, out, _ = _run(["poisson", "--kernel", KERNEL, "--f", F], capsys)
    info = json.loads(out)
    assert code == 0
    assert info["sigma2_inf"]["conditional_variance"] == pytest.approx(0.75, abs=1e-14)
    assert info["g_sup"] <= info["g_sup_bound"]


def test_weights_band_dump(capsys, tmp_path):
    out = tmp_path / "band.csv"
    code, stdout, _ = _run(["weights", "--n", "5", "--bn", "2", "--exact", "--dump-band", str(out)], capsys)
    assert code == 0 and json.loads(stdout)["trace"] == "1"
    rows = list(csv.DictReader(out.open()))
    assert rows[0] == {"l": "1", "j": "1", "w": "1/8", "d10": "1/8", "d01": "1/8", "d11": "1/8"}
    assert {(r["l"], r["j"]): r["w"] for r in rows}[("3", "2")] == "1/4"


def test_exact_limit_is_usage_error(capsys):
    assert _run(["weights", "--n", "65", "--bn", "2", "--exact"], capsys)[0] == 1


def test_decompose_exact(capsys, tmp_path):
    out = tmp_path / "led.json"
    code, _, _ = _run(["decompose", "--kernel", KERNEL, "--f", F, "--n", "30", "--bn", "5", "--seed", "3",
                       "--exact", "--out", str(out)], capsys)
    assert code == 0
    res = json.loads(out.read_text())["residuals"]
    for key in ("quadratic_form", "remainder", "representation"):
        assert res[key]["exact"] == "0/1"


def test_decompose_float_has_theorem_terms(capsys):
    code, out, _ = _run(["decompose", "--kernel", KERNEL, "--f", F, "--n", "400", "--seed", "1"], capsys)
    led = json.loads(out)
    assert code == 0 and led["b_n"] == 20
    assert abs(led["theorem_terms"]["split_residual"]) <= 1e-12


def test_estimate_both(capsys):
    code, out, _ = _run(["estimate", "--kernel", KERNEL, "--f", F, "--n", "1000", "--method", "both"], capsys)
    est = json.loads(out)
    assert code == 0 and est["relative_gap"] <= 1e-10


def test_sweep_outputs_and_manifest_regeneration(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kernel": {"name": "lazy_cycle", "params": {"m": 5}},
                                "f": [1.0, -0.5, 0.25, 0.0, -1.0],
                                "grid": {"n": [128, 256, 512, 1024], "bn": "sqrt"},
                                "p_list": [2], "replications": 40, "base_seed": 9}))
    out = tmp_path / "m.csv"
    code, _, _ = _run(["sweep", "--spec", str(spec), "--out", str(out)], capsys)
    assert code == 0
    assert out.exists() and (tmp_path / "m_slopes.csv").exists() and (tmp_path / "m.png").exists()
    manifest = json.loads((tmp_path / "m.csv.manifest.json").read_text())
    assert manifest["inputs"]["spec"]["sha256"] == hashlib.sha256(spec.read_bytes()).hexdigest()
    first = out.read_bytes()
    out.unlink()
    assert main(manifest["argv"]) == 0
    assert out.read_bytes() == first
    assert hashlib.sha256(first).hexdigest() == manifest["outputs"][str(out)]


def test_sweep_from_flags_no_plot(capsys, tmp_path):
    out = tmp_path / "flags.csv"
    code, _, _ = _run(["sweep", "--kernel", KERNEL, "--f", F, "--n", "256,512,1024,2048", "--p", "2",
                       "--reps", "20", "--seed", "4", "--out", str(out), "--no-plot"], capsys)
    assert code == 0
    assert not (tmp_path / "flags.png").exists()
    assert len(out.read_text().splitlines()) == 5


def test_sweep_needs_out(capsys):
    assert _run(["sweep", "--kernel", KERNEL, "--f", F], capsys)[0] == 1


def test_verify_quick(capsys):
    code, out, _ = _run(["verify", "--quick"], capsys)
    assert code == 0
    assert "FAIL" not in out


def test_console_entry_point(tmp_path):
    env = dict(os.environ, OBMLAB_WORKERS="2")
    proc = subprocess.run([sys.executable, "-m", "obmlab.cli", "kernel", "--name", "two_state",
                           "--param", "a=0.3", "--param", "b=0.1"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["pi"] == pytest.approx([0.25, 0.75], abs=1e-14)
