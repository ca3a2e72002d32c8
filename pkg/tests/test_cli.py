import json

import numpy as np
import pytest

from vvcv.cli import main


def run_cli(args):
    return main(args)


def test_bench_writes_csvs_and_config(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["bench", "step", "--m", "10,10", "--reps", "3", "--seed", "1",
                    "--methods", "mc,cf", "--out", str(out)])
    assert code == 0
    raw = (tmp_path / "run_raw.csv").read_text()
    summary = (tmp_path / "run_summary.csv").read_text()
    cfg = json.loads((tmp_path / "run_config.json").read_text())
    assert raw.splitlines()[0] == ("problem,method,m,rep,seed,task,estimate,"
                                   "abs_err,seconds")
    assert len(raw.splitlines()) == 1 + 3 * 2 * 2  # reps x tasks x methods
    assert summary.splitlines()[0] == ("problem,method,m,task,mean_abs_err,sd,se,"
                                       "mean_seconds,reps")
    assert cfg["methods"] == ["MC", "CF-exact"]
    assert "digest" in cfg


def test_bench_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["bench", "step", "--m", "10,10", "--reps", "2", "--seed", "9",
            "--methods", "mc,vvcv-fixedb"]
    assert run_cli(args + ["--out", str(a)]) == 0
    assert run_cli(args + ["--out", str(b)]) == 0
    assert (tmp_path / "a_raw.csv").read_bytes() == (tmp_path / "b_raw.csv").read_bytes()
    assert (tmp_path / "a_summary.csv").read_bytes() == \
        (tmp_path / "b_summary.csv").read_bytes()


def test_bench_rerun_from_resolved_config(tmp_path):
    out = tmp_path / "orig"
    assert run_cli(["bench", "step", "--m", "8:8", "--reps", "2", "--seed", "3",
                    "--methods", "mc", "--out", str(out)]) == 0
    redo = tmp_path / "redo"
    assert run_cli(["bench", "--config", str(tmp_path / "orig_config.json"),
                    "--out", str(redo)]) == 0
    assert (tmp_path / "orig_raw.csv").read_bytes() == \
        (tmp_path / "redo_raw.csv").read_bytes()
    cfg1 = json.loads((tmp_path / "orig_config.json").read_text())
    cfg2 = json.loads((tmp_path / "redo_config.json").read_text())
    assert cfg1["digest"] == cfg2["digest"]


def test_bench_trace_flag(tmp_path):
    out = tmp_path / "tr"
    assert run_cli(["bench", "step", "--m", "8,8", "--reps", "2", "--seed", "1",
                    "--methods", "mc,vvcv-fixedb", "--out", str(out), "--trace",
                    "--config", str(_overrides_file(tmp_path))]) == 0
    trace = (tmp_path / "tr_trace.csv").read_text().splitlines()
    assert trace[0] == "problem,method,m,rep,seed,task,epoch,abs_err"
    assert len(trace) > 5


def _overrides_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"overrides": {"optim": {"epochs": 4}}}))
    return p


def test_bench_missing_problem_exits_2(tmp_path):
    assert run_cli(["bench", "--m", "10,10"]) == 2


def test_bench_unknown_method_exits_2():
    assert run_cli(["bench", "step", "--methods", "wat"]) == 2


def test_bench_unknown_config_key_exits_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"no_such_key": 1}))
    assert run_cli(["bench", "step", "--config", str(p)]) == 2


def test_bench_bad_m_exits_2():
    assert run_cli(["bench", "step", "--m", "abc"]) == 2


def test_bench_numerical_failure_exits_3(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"overrides": {"optim": {"epochs": 40, "lr": 1e6}}}))
    code = run_cli(["bench", "step", "--m", "8,8", "--reps", "2", "--seed", "0",
                    "--methods", "vvcv-fixedb", "--config", str(p),
                    "--out", str(tmp_path / "x")])
    assert code == 3


def _write_task_csv(path, X, f):
    lines = [",".join([f"x_{j + 1}" for j in range(X.shape[1])] + ["f"])]
    for row, val in zip(X, f):
        lines.append(",".join(str(v) for v in list(row) + [val]))
    path.write_text("\n".join(lines) + "\n")


def test_fit_two_tasks_cf(tmp_path):
    rng = np.random.default_rng(0)
    for t in range(2):
        X = rng.normal(size=(3, 1))
        _write_task_csv(tmp_path / f"task{t}.csv", X, X[:, 0] ** 2)
    cfg = {
        "dim": 1,
        "score": {"kind": "gaussian", "mean": [0.0], "variances": [1.0]},
        "tasks": [{"file": str(tmp_path / "task0.csv")},
                  {"file": str(tmp_path / "task1.csv")}],
        "method": "cf",
        "lam": 1e-3,
    }
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps(cfg))
    assert run_cli(["fit", "--config", str(cfile), "--out", str(tmp_path / "r")]) == 0
    res = json.loads((tmp_path / "r_fit.json").read_text())
    assert len(res["estimates"]) == 2
    assert res["B"] is None
    assert len(res["theta_digest"]) == 64


def test_fit_constant_column_recovers_constant(tmp_path):
    X = np.linspace(-1, 1, 5)[:, None]
    _write_task_csv(tmp_path / "t.csv", X, np.full(5, 4.2))
    cfg = {
        "dim": 1,
        "tasks": [{"file": str(tmp_path / "t.csv"),
                   "score": {"kind": "gaussian", "mean": [0.0], "variances": [1.0]}}],
        "method": "cf",
        "lam": 1e-4,
    }
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps(cfg))
    assert run_cli(["fit", "--config", str(cfile), "--out", str(tmp_path / "r")]) == 0
    res = json.loads((tmp_path / "r_fit.json").read_text())
    assert float(res["estimates"][0]) == pytest.approx(4.2, abs=1e-6)


def test_fit_learned_B_outputs_spd_matrix(tmp_path):
    rng = np.random.default_rng(1)
    for t in range(2):
        X = rng.normal(size=(12, 1))
        _write_task_csv(tmp_path / f"task{t}.csv", X, np.sin(X[:, 0]) + t)
    cfg = {
        "dim": 1,
        "score": {"kind": "product_gaussian", "marginals": [[0.0, 1.0]]},
        "tasks": [{"file": str(tmp_path / "task0.csv")},
                  {"file": str(tmp_path / "task1.csv")}],
        "method": "vvcv-estb",
        "optim": {"epochs": 10, "lr": 1e-3, "batch": 6},
        "lam": 1e-4,
    }
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps(cfg))
    assert run_cli(["fit", "--config", str(cfile), "--out", str(tmp_path / "r")]) == 0
    res = json.loads((tmp_path / "r_fit.json").read_text())
    B = np.array(res["B"])
    assert B.shape == (2, 2)
    np.linalg.cholesky(B)


def test_fit_row_length_mismatch_exits_2(tmp_path):
    (tmp_path / "bad.csv").write_text("x_1,f\n0.1,1.0\n0.2,2.0,9\n")
    cfg = {
        "dim": 1,
        "tasks": [{"file": str(tmp_path / "bad.csv"),
                   "score": {"kind": "gaussian", "mean": [0.0], "variances": [1.0]}}],
        "method": "cf",
    }
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps(cfg))
    assert run_cli(["fit", "--config", str(cfile), "--out", str(tmp_path / "r")]) == 2


def test_fit_bad_header_exits_2(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n0.1,1.0\n")
    cfg = {
        "dim": 1,
        "tasks": [{"file": str(tmp_path / "bad.csv"),
                   "score": {"kind": "gaussian", "mean": [0.0], "variances": [1.0]}}],
        "method": "cf",
    }
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps(cfg))
    assert run_cli(["fit", "--config", str(cfile), "--out", str(tmp_path / "r")]) == 2


def test_fit_unknown_key_exits_2(tmp_path):
    cfile = tmp_path / "fit.json"
    cfile.write_text(json.dumps({"dim": 1, "tasks": [], "method": "cf", "oops": 1}))
    assert run_cli(["fit", "--config", str(cfile)]) == 2


def test_usage_error_exit_code():
    assert run_cli(["bogus-subcommand"]) == 2


def test_bench_echoes_tuning_protocol_in_run_report(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"overrides": {"tune": {"batch": 5, "lr": 0.05,
                                                    "epochs": 20},
                                           "optim": {"epochs": 3}}}))
    out = tmp_path / "run"
    assert run_cli(["bench", "step", "--m", "6,6", "--reps", "1", "--seed", "0",
                    "--methods", "mc", "--config", str(p), "--out", str(out)]) == 0
    cfg = json.loads((tmp_path / "run_config.json").read_text())
    assert cfg["resolved"]["tune"]["batch"] == 5
    assert cfg["resolved"]["tune"]["lr"] == 0.05
    assert cfg["resolved"]["tune"]["epochs"] == 20


def test_threads_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("VVCV_THREADS", "2")
    out = tmp_path / "run"
    assert run_cli(["bench", "step", "--m", "6,6", "--reps", "2", "--seed", "0",
                    "--methods", "mc", "--out", str(out)]) == 0
    cfg = json.loads((tmp_path / "run_config.json").read_text())
    assert cfg["threads"] == 2
    monkeypatch.setenv("VVCV_THREADS", "zergs")
    assert run_cli(["bench", "step", "--m", "6,6", "--methods", "mc"]) == 2
