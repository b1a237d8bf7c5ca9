import json
import subprocess
import sys

import numpy as np
import pytest

from hla import read_tensor, w1_batch, write_tensor
from hla.cli import den_path, main


@pytest.fixture
def w1_files(tmp_path):
    b = w1_batch()
    paths = {}
    for part in "qkv":
        paths[part] = str(tmp_path / f"w1.{part}.hot")
        write_tensor(paths[part], getattr(b, part.upper()))
    return paths


def _run(files, out, *extra):
    return main(["run", "--q", files["q"], "--k", files["k"], "--v", files["v"], "--out", str(out), *extra])


def test_gen_writes_three_files(tmp_path):
    prefix = str(tmp_path / "t")
    assert main(["gen", "--seed", "7", "--n", "4", "--d", "2", "--dv", "3", "--out-prefix", prefix]) == 0
    q, k, v = (read_tensor(f"{prefix}.{p}.hot") for p in "qkv")
    assert q.shape == (4, 2) and k.shape == (4, 2) and v.shape == (4, 3)


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["gen", "--seed", "7", "--n", "4", "--d", "2", "--dv", "3", "--out-prefix", str(tmp_path / name)])
    for p in "qkv":
        assert (tmp_path / f"a.{p}.hot").read_bytes() == (tmp_path / f"b.{p}.hot").read_bytes()


def test_gen_default_scale(tmp_path):
    main(["gen", "--seed", "3", "--n", "5", "--d", "4", "--dv", "1", "--out-prefix", str(tmp_path / "a")])
    main(["gen", "--seed", "3", "--n", "5", "--d", "4", "--dv", "1", "--scale", "1", "--out-prefix", str(tmp_path / "b")])
    np.testing.assert_array_equal(read_tensor(tmp_path / "a.q.hot"), 0.5 * read_tensor(tmp_path / "b.q.hot"))


def test_gen_missing_n_is_usage_error(tmp_path, capsys):
    assert main(["gen", "--seed", "7", "--d", "2", "--dv", "3", "--out-prefix", str(tmp_path / "t")]) == 2
    assert "--n" in capsys.readouterr().err


def test_run_hla2_on_w1(w1_files, tmp_path, capsys):
    out = tmp_path / "o.hot"
    assert _run(w1_files, out, "--kernel", "hla2") == 0
    np.testing.assert_array_equal(read_tensor(out)[:, 0], [1, 26])
    assert not den_path(out).exists()
    line = capsys.readouterr().out
    assert "n=2 d=1 d_v=1 kernel=hla2 wall_s=" in line


def test_run_writes_den_when_normalizing(w1_files, tmp_path):
    out = tmp_path / "o.hot"
    assert _run(w1_files, out, "--kernel", "hla2", "--normalize", "--eps", "0") == 0
    np.testing.assert_allclose(read_tensor(out)[:, 0], [1, 2.6])
    np.testing.assert_array_equal(read_tensor(tmp_path / "o.den.hot")[:, 0], [1, 10])


def test_run_emit_den(w1_files, tmp_path):
    assert _run(w1_files, tmp_path / "o.hot", "--kernel", "ahla", "--emit-den") == 0
    np.testing.assert_array_equal(read_tensor(tmp_path / "o.den.hot")[:, 0], [1, 10])


def test_run_chunked_width_one_equals_serial(tmp_path):
    prefix = str(tmp_path / "r")
    main(["gen", "--seed", "5", "--n", "20", "--d", "3", "--dv", "2", "--out-prefix", prefix])
    files = {p: f"{prefix}.{p}.hot" for p in "qkv"}
    _run(files, tmp_path / "a.hot", "--kernel", "hla2", "--gamma", "0.9")
    _run(files, tmp_path / "b.hot", "--kernel", "hla2-chunked", "--chunk-width", "1", "--gamma", "0.9")
    a, b = read_tensor(tmp_path / "a.hot"), read_tensor(tmp_path / "b.hot")
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize(
    "kernel, expected",
    [("hla2-unmasked", 28), ("ahla-chunked", 18), ("hla3", 64), ("oracle-hla2", 26), ("oracle-ahla", 18),
     ("oracle-hla3", 64), ("linattn-identity", 8)],
)
def test_run_every_kernel_on_w1(w1_files, tmp_path, kernel, expected):
    out = tmp_path / "o.hot"
    assert _run(w1_files, out, "--kernel", kernel) == 0
    assert read_tensor(out)[1, 0] == expected


@pytest.mark.parametrize(
    "extra",
    [["--kernel", "oracle-hla2", "--gamma", "0.5"], ["--kernel", "oracle-hla3", "--lambda", "0.1"],
     ["--kernel", "ahla", "--lambda", "0.1"]],
)
def test_run_undefined_kernel_exit_4(w1_files, tmp_path, capsys, extra):
    assert _run(w1_files, tmp_path / "o.hot", *extra) == 4
    assert "undefined" in capsys.readouterr().err


def test_run_dimension_mismatch_exit_3(w1_files, tmp_path):
    write_tensor(tmp_path / "k3.hot", np.ones((3, 1)))
    files = dict(w1_files, k=str(tmp_path / "k3.hot"))
    assert _run(files, tmp_path / "o.hot", "--kernel", "hla2") == 3


def test_run_bad_file_exit_1(w1_files, tmp_path):
    bad = tmp_path / "bad.hot"
    bad.write_bytes(b"nope")
    assert _run(dict(w1_files, q=str(bad)), tmp_path / "o.hot", "--kernel", "hla2") == 1


def test_run_bad_flags_exit_2(w1_files, tmp_path):
    assert _run(w1_files, tmp_path / "o.hot", "--kernel", "nope") == 2
    assert _run(w1_files, tmp_path / "o.hot", "--kernel", "hla2", "--chunk-width", "0") == 2


def test_den_path():
    assert str(den_path("out/o.hot")) == "out/o.den.hot"
    assert str(den_path("o")) == "o.den.hot"


def _check(capsys, *args):
    code = main(["check", *args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_check_small_run_is_deterministic(capsys):
    code, out, _ = _check(capsys, "--trials", "1", "--seed", "42")
    assert code == 0
    report = json.loads(out)
    assert [set(r) for r in report] == [{"suite", "trials", "max_rel_err", "pass"}] * len(report)
    assert all(r["pass"] for r in report)
    assert [r["suite"] for r in report] == sorted(r["suite"] for r in report)
    again = _check(capsys, "--trials", "1", "--seed", "42")[1]
    assert again == out


@pytest.mark.parametrize(
    "target, suite",
    [("hla2", "hla2_oracle"), ("ahla_chunked", "scan_ahla"), ("hla2_backward", "grad_fd")],
)
def test_check_detects_injected_fault(capsys, target, suite):
    code, out, err = _check(capsys, "--trials", "1", "--seed", "3", "--inject-fault", target)
    assert code == 1
    failed = {r["suite"] for r in json.loads(out) if not r["pass"]}
    assert suite in failed
    assert f"FAIL suite={suite} seed=3" in err
    assert "instance=" in err


@pytest.mark.slow
def test_check_default_flags_pass(capsys):
    code, out, _ = _check(capsys)
    assert code == 0
    assert {r["suite"] for r in json.loads(out)} >= {"hla2_oracle", "scan_hla2", "grad_fd"}


def test_bench_csv(capsys):
    assert main(["bench", "--kernel", "hla2", "--n-list", "32,64", "--d", "4", "--dv", "4", "--reps", "3"]) == 0
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    assert lines[0] == "kernel,n,d,dv,gamma,chunk_width,reps,median_s,tokens_per_s"
    assert [line.split(",")[1] for line in lines[1:]] == ["32", "64"]
    assert "ratio n=32->64:" in captured.err


def test_bench_json(capsys):
    assert main(["bench", "--kernel", "oracle-hla2", "--n-list", "16,32", "--d", "2", "--dv", "2",
                 "--reps", "3", "--format", "json"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
    assert [r["n"] for r in rows] == [16, 32]
    assert all(r["reps"] == 3 and r["median_s"] > 0 for r in rows)


@pytest.mark.parametrize(
    "args",
    [["--n-list", "a,b"], ["--n-list", "0"], ["--reps", "2"], ["--format", "xml"]],
)
def test_bench_bad_flags_exit_2(args):
    base = {"--kernel": "hla2", "--n-list": "8", "--d": "2", "--dv": "2"}
    flat = [x for k, v in base.items() if k not in args for x in (k, v)]
    assert main(["bench", *flat, *args]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hla.cli", "gen", "--seed", "1", "--n", "2", "--d", "1", "--dv", "1",
         "--out-prefix", str(tmp_path / "s")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "s.v.hot").exists()


def test_no_command_is_usage_error():
    assert main([]) == 2
