import csv
import os

import pytest

from pevo.cli import (ConfigError, fmt, load_config, main, write_csv)

KB = """
[problem]
preset = schrodinger_kb
c = 1.0
T = 1.0

[grid]
L = 20
N = {N}

[norm]
s1 = 0
s2 = 2

[run]
steps = {steps}
"""


def write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def kb_config(tmp_path, N=256, steps=100, extra=""):
    return write(tmp_path, KB.format(N=N, steps=steps) + extra)


def preset_config(tmp_path, name, extra=""):
    return write(tmp_path, f"[problem]\npreset = {name}\n{extra}\n[grid]\nL = 20\nN = 256\n")


def test_fmt_is_locale_free():
    assert fmt(0.5) == "5.0000000000e-01"
    assert fmt(True) == "true" and fmt(3) == "3"
    assert fmt(float("nan")) == "nan" and fmt(float("-inf")) == "-inf"


def test_write_csv_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.csv"

    class Boom:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        write_csv(str(target), ["a"], [(Boom(),)])
    assert os.listdir(tmp_path) == []
    write_csv(str(target), ["a", "b"], [(1, 0.25)])
    assert target.read_text() == "a,b\n1,2.5000000000e-01\n"


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.ini"))
    with pytest.raises(ConfigError):
        load_config(kb_config(tmp_path, N=255))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[problem]\npreset = heat\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[problem]\npreset = cc3\nc9 = 2\n"))
    rc = load_config(kb_config(tmp_path), mode="full", out="elsewhere")
    assert rc.N == 256 and rc.s2 == 2.0 and rc.params == {"c": 1.0} and rc.out == "elsewhere"


def test_bad_config_exit_code(tmp_path):
    assert main(["run", "--config", kb_config(tmp_path, N=30), "--out", str(tmp_path)]) == 1


def test_certify_exit_codes(tmp_path):
    free = preset_config(tmp_path, "schrodinger_kb", "c = 0")
    assert main(["certify", "--config", free, "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "certify.csv")
    assert table[0] == ["level", "alpha", "beta", "seminorm", "declared_order_ok"]
    assert all(r[4] == "true" for r in table[1:])
    bad = preset_config(tmp_path, "adversarial_nodecay")
    assert main(["certify", "--config", bad, "--out", str(tmp_path / "adv")]) == 2
    ref = preset_config(tmp_path, "refined_mode")
    assert main(["certify", "--config", ref, "--out", str(tmp_path / "r"), "--mode", "refined"]) == 0
    assert main(["certify", "--config", ref, "--out", str(tmp_path / "f"), "--mode", "full"]) == 2


def test_calibrate_writes_table(tmp_path):
    assert main(["calibrate", "--config", kb_config(tmp_path), "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "calibration.csv")
    assert table[0] == ["level", "C_measured", "M_chosen", "h", "remainder_norm", "margin"]
    assert len(table) == 2 and table[1][0] == "1" and float(table[1][3]) == 4.0
    assert float(table[1][2]) == pytest.approx(0.8668947091993334, rel=1e-8)


def test_calibrate_reports_failed_h_search(tmp_path):
    assert main(["calibrate", "--config", kb_config(tmp_path, N=128), "--out", str(tmp_path)]) == 4


def test_run_outputs_and_determinism(tmp_path):
    cfg = kb_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 0
    assert main(["run", "--config", cfg, "--out", str(b)]) == 0
    for name in ("energy.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    energy = rows(a / "energy.csv")
    assert energy[0] == ["t", "norm_u_s1_s2_minus_sigma", "norm_ulambda", "rhs_functional", "running_C"]
    assert len(energy) == 102
    summary = rows(a / "summary.csv")
    assert summary[0] == ["sigma", "fitted_C", "positivity_bound", "pass"]
    assert summary[1][3] == "true"
    assert not [f for f in os.listdir(a) if f.startswith(".pevo-")]


def test_run_energy_failure_exit(tmp_path):
    cfg = kb_config(tmp_path, extra="C_cap = 0.1\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 6
    assert rows(tmp_path / "summary.csv")[1][3] == "false"


def test_run_boundary_exit_leaves_no_files(tmp_path):
    cfg = write(tmp_path, "[problem]\npreset = cc3\n[grid]\nL = 20\nN = 256\n[run]\nsteps = 100\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 5
    assert not out.exists() or os.listdir(out) == []


def test_sweep_over_resolution(tmp_path, monkeypatch):
    monkeypatch.setenv("PEVO_THREADS", "1")
    cfg = kb_config(tmp_path)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "N",
                 "--values", "128,256"]) == 0
    table = rows(tmp_path / "sweep_N.csv")
    assert table[0] == ["value", "sigma", "fitted_C", "positivity_bound", "pass", "remainder_norm",
                        "status"]
    assert len(table) == 3
    assert table[1][6] == "exit4" and table[2][6] == "ok"


def test_sweep_over_h_and_sigma(tmp_path, monkeypatch):
    monkeypatch.setenv("PEVO_THREADS", "2")
    cfg = kb_config(tmp_path, extra="[sweep]\naxis = h\nvalues = 2, 4, 8\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "sweep_h.csv")[1:]
    rn = [float(r[5]) for r in table[:2]]
    assert rn[0] > rn[1]
    # h = 8 leaves no resolved frequencies on the N/2 = 128 grid
    assert table[2][6] == "exit4"
    M = 0.8668947091993334
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "sigma",
                 "--values", f"0,{M},{2 * M}"]) == 0
    C = [float(r[2]) for r in rows(tmp_path / "sweep_sigma.csv")[1:]]
    assert C[0] >= C[1] >= C[2]


def test_sweep_rejects_bad_axis(tmp_path):
    assert main(["sweep", "--config", kb_config(tmp_path), "--out", str(tmp_path)]) == 1
