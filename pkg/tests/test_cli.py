import csv
import io

import numpy as np
import pytest

from cholupdate import DenseMat, TriFactor, UpdateMat, mat_read, mat_write
from cholupdate.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_factor_identity(tmp_path, capsys):
    mat_write(DenseMat.from_array(np.eye(3)), tmp_path / "a.cwm")
    code, _, _ = run(capsys, "factor", tmp_path / "a.cwm", "-o", tmp_path / "l.cwm")
    assert code == 0
    assert mat_read(tmp_path / "l.cwm") == TriFactor.identity(3)


def test_factor_2x2_csv(tmp_path, capsys):
    mat_write(DenseMat.from_array([[9.0, 6.0], [6.0, 13.0]]), tmp_path / "a.csv")
    assert run(capsys, "factor", tmp_path / "a.csv", "-o", tmp_path / "l.cwm")[0] == 0
    np.testing.assert_array_equal(mat_read(tmp_path / "l.cwm").data, [3, 2, 3])


def test_factor_errors(tmp_path, capsys):
    mat_write(DenseMat.from_array([[1.0, 2.0], [3.0, 9.0]]), tmp_path / "asym.cwm")
    code, _, err = run(capsys, "factor", tmp_path / "asym.cwm", "-o", tmp_path / "out.cwm")
    assert code == 3 and "symmetric" in err
    assert not (tmp_path / "out.cwm").exists()
    mat_write(DenseMat.from_array([[1.0, 2.0], [2.0, 1.0]]), tmp_path / "indef.cwm")
    assert run(capsys, "factor", tmp_path / "indef.cwm", "-o", tmp_path / "out.cwm")[0] == 3
    (tmp_path / "junk.cwm").write_bytes(b"nope")
    assert run(capsys, "factor", tmp_path / "junk.cwm", "-o", tmp_path / "out.cwm")[0] == 2
    assert run(capsys, "factor", tmp_path / "missing.cwm", "-o", tmp_path / "out.cwm")[0] == 2
    assert not (tmp_path / "out.cwm").exists()


@pytest.fixture
def factor_files(tmp_path):
    rng = np.random.default_rng(0)
    n, k = 40, 5
    b = rng.random((n, n))
    a = b.T @ b
    a = np.triu(a) + np.triu(a, 1).T + np.eye(n)
    mat_write(DenseMat.from_array(a), tmp_path / "a.cwm")
    main(["factor", str(tmp_path / "a.cwm"), "-o", str(tmp_path / "l.cwm")])
    mat_write(UpdateMat.from_array(rng.random((n, k))), tmp_path / "v.cwm")
    return tmp_path


def test_update_downdate_round_trip(factor_files, capsys):
    d = factor_files
    before = (d / "l.cwm").read_bytes(), (d / "v.cwm").read_bytes()
    assert run(capsys, "update", d / "l.cwm", d / "v.cwm", "-o", d / "lu.cwm")[0] == 0
    code, out, _ = run(capsys, "downdate", d / "lu.cwm", d / "v.cwm", "-o", d / "ld.cwm", "--check", d / "l.cwm")
    assert code == 0
    key, value = out.strip().split(",")
    assert key == "max_abs_diff" and float(value) < 1e-12
    assert ((d / "l.cwm").read_bytes(), (d / "v.cwm").read_bytes()) == before


def test_serial_and_panel_files_identical(factor_files, capsys):
    d = factor_files
    run(capsys, "update", d / "l.cwm", d / "v.cwm", "-o", d / "s.cwm", "--impl", "serial")
    run(capsys, "update", d / "l.cwm", d / "v.cwm", "-o", d / "p.cwm", "--impl", "panel",
        "--bpk", 2, "--tpb", 3, "--ept", 2, "--workers", 2)
    assert (d / "s.cwm").read_bytes() == (d / "p.cwm").read_bytes()


def test_zero_column_update_rejected(factor_files, capsys):
    d = factor_files
    header = bytearray((d / "v.cwm").read_bytes()[:24])
    header[16:24] = (0).to_bytes(8, "little")
    (d / "v0.cwm").write_bytes(bytes(header))
    assert run(capsys, "update", d / "l.cwm", d / "v0.cwm", "-o", d / "o.cwm")[0] == 2


def test_dimension_mismatch(factor_files, capsys):
    d = factor_files
    mat_write(UpdateMat.from_array(np.ones((3, 1))), d / "v3.cwm")
    assert run(capsys, "update", d / "l.cwm", d / "v3.cwm", "-o", d / "o.cwm")[0] == 2


def test_indefinite_downdate_exit_4(factor_files, capsys):
    d = factor_files
    mat_write(UpdateMat.from_array(np.full((40, 1), 100.0)), d / "big.cwm")
    before = (d / "l.cwm").read_bytes()
    for impl in ("serial", "panel"):
        code, _, err = run(capsys, "downdate", d / "l.cwm", d / "big.cwm", "-o", d / "o.cwm", "--impl", impl)
        assert code == 4 and "indefinite" in err
        assert not (d / "o.cwm").exists()
    assert (d / "l.cwm").read_bytes() == before


def test_unknown_flag_is_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["plan", "--bogus"])
    assert info.value.code == 2


def test_verify(capsys):
    code, out, _ = run(capsys, "verify", "--n", 64, "--k", 16, "--precision", "f64", "--direction", "update")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1 and float(rows[0]["error_maxabs"]) <= 1e-9


def test_verify_minimal_and_downdate(capsys):
    assert run(capsys, "verify", "--n", 1, "--k", 1, "--seed", 0)[0] == 0
    assert run(capsys, "verify", "--direction", "downdate", "--n", 64)[0] == 0
    assert run(capsys, "verify", "--n", 40, "--k", 3, "--impl", "panelled", "--bpk", 2, "--tpb", 4,
               "--precision", "f32")[0] == 0


def test_verify_bad_impl():
    with pytest.raises(SystemExit) as info:
        main(["verify", "--impl", "gpu"])
    assert info.value.code == 2


def test_plan_n24(capsys):
    code, out, _ = run(capsys, "plan", "--n", 24, "--bpk", 2, "--tpb", 4, "--ept", 16, "--k", 16)
    assert code == 0
    phases = [line.split(": ", 1)[1].split(" ")[0] for line in out.splitlines() if line.startswith("  ")]
    assert phases == ["Diag[0,8)", "Off[0,8)x[8,24)", "Diag[8,16)", "Off[8,16)x[16,24)", "Diag[16,24)"]


def test_plan_defaults(capsys):
    code, out, _ = run(capsys, "plan")
    assert code == 0
    first = out.splitlines()[0]
    assert "bpk=28" in first and "tpb=32" in first and "ept=16" in first


def test_bench_single_row(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--n-list", 64, "--impl-list", "serial")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 2
    assert run(capsys, "bench", "--n-list", 8, "--impl-list", "serial", "--out", tmp_path / "b.csv")[0] == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 2


@pytest.mark.parametrize("flag,value", [("--n-list", "64,x"), ("--n-list", ""), ("--impl-list", "gpu")])
def test_bench_bad_lists(flag, value):
    with pytest.raises(SystemExit) as info:
        main(["bench", flag, value])
    assert info.value.code == 2


def test_bench_golden_stable(capsys):
    argv = ["bench", "--n-list", "16,33", "--impl-list", "serial,panel,serial-a", "--k", "3",
            "--bpk", "2", "--tpb", "4", "--seed", "5"]
    outs = []
    for _ in range(2):
        main(argv)
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        for r in rows:
            r["median_time_s"] = "*"
        outs.append(rows)
    assert outs[0] == outs[1]
    assert len({r["error_maxabs"] for r in outs[0] if r["n"] == "33"}) == 1
