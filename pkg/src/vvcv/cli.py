"""Command-line front end: run benchmarks and fit models on user data.

Exit codes: 0 success, 2 configuration/usage error, 3 run-level numerical
failure.  All numeric CSV output uses round-trip decimal formatting so
reruns can be compared byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import benchmarks as bm
from .kernels import Polynomial, SquaredExponential, product_se
from .scores import ScoreFn, gaussian_score
from .solvers import (NumericalError, OptimConfig, fit_convex_B_ladder,
                      fit_exact_joint, fit_sgd_fixed_B, fit_sgd_learn_B)
from .stein import ScalarSteinKernel, SeparableSteinKernel, SharedSteinKernel
from .tasks import Dataset, IntegrationTask, TaskSet

__all__ = ["main", "cmd_bench", "cmd_fit"]

_BENCH_KEYS = {"problem", "problem_args", "m", "reps", "seed", "methods", "trace",
               "timings", "threads", "overrides", "digest", "resolved"}

_FIT_KEYS = {"dim", "tasks", "score", "method", "kernel", "lam", "optim",
             "fixed_b", "b0", "deltas", "shared_target", "seed", "digest"}


class ConfigError(ValueError):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _check_keys(data: dict, allowed: set, where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def _parse_m(text: str) -> list[int]:
    parts = text.replace(":", ",").split(",")
    try:
        vals = [int(p) for p in parts if p != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse --m {text!r}: {exc}") from exc
    if not vals or any(v < 1 for v in vals):
        raise ConfigError(f"--m needs positive sample counts, got {text!r}")
    return vals


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------------------------------
# bench
# ----------------------------------------------------------------------------


def cmd_bench(args: argparse.Namespace) -> int:
    cfg: dict = {}
    if args.config:
        cfg = _load_json(args.config)
        _check_keys(cfg, _BENCH_KEYS, "bench")
    problem_name = args.problem or cfg.get("problem")
    if not problem_name:
        raise ConfigError("no benchmark problem given (argument or config 'problem')")
    problem_args = cfg.get("problem_args", {}) or {}
    try:
        problem = bm.get_problem(problem_name, **problem_args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    m = _parse_m(args.m) if args.m else cfg.get("m") or [40]
    if isinstance(m, int):
        m = [m]
    m = [int(v) for v in m]
    if len(m) == 1:
        m = m * problem.T
    reps = args.reps if args.reps is not None else int(cfg.get("reps", 20))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    methods_text = args.methods or ",".join(cfg.get("methods", ["mc", "cf"]))
    try:
        methods = [bm.canonical_method(t) for t in methods_text.split(",") if t]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    trace = args.trace or bool(cfg.get("trace", False))
    timings = args.timings or bool(cfg.get("timings", False))
    threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
    if threads == 0:
        threads = os.cpu_count() or 1
    overrides = cfg.get("overrides") or {}

    resolved = {
        "problem": problem.name,
        "problem_args": problem_args,
        "m": m,
        "reps": reps,
        "seed": seed,
        "methods": methods,
        "trace": trace,
        "timings": timings,
        "threads": threads,
        "overrides": overrides,
    }
    resolved["digest"] = _digest(resolved)
    # echo the fully merged per-problem settings for the run report
    resolved["resolved"] = bm._merge_config(problem.defaults, overrides)

    records = []
    for method in methods:
        records.extend(bm.run_method(problem, method, m, reps, seed,
                                     overrides=overrides, trace=trace,
                                     threads=threads))
    out = args.out or f"{problem.name}_bench"
    bm.write_raw_csv(records, f"{out}_raw.csv", include_seconds=timings)
    bm.write_summary_csv(bm.summarize(records), f"{out}_summary.csv",
                         include_seconds=timings)
    if trace:
        bm.write_trace_csv(records, f"{out}_trace.csv")
    with open(f"{out}_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    n_fail = sum(1 for r in records if not r.ok)
    print(f"wrote {out}_raw.csv and {out}_summary.csv "
          f"({len(records)} records, {n_fail} failed, digest {resolved['digest'][:12]})")
    return 0


# ----------------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------------


def _score_from_spec(spec: dict, dim: int) -> ScoreFn:
    kind = spec.get("kind")
    if kind == "gaussian":
        mean = np.asarray(spec["mean"], dtype=float)
        var = np.asarray(spec["variances"], dtype=float)
        score = gaussian_score(mean, var)
    elif kind == "product_gaussian":
        marg = np.asarray(spec["marginals"], dtype=float)
        if marg.ndim != 2 or marg.shape[1] != 2:
            raise ConfigError("product_gaussian needs a table of [mean, variance] rows")
        score = gaussian_score(marg[:, 0], marg[:, 1])
    else:
        raise ConfigError(f"unknown score kind {kind!r}; built-ins: gaussian, product_gaussian")
    if score.dim != dim:
        raise ConfigError(f"score has dimension {score.dim}, data has {dim}")
    return score


def _kernel_from_spec(spec: dict, dim: int):
    kind = spec.get("kind", "se")
    if kind == "se":
        return SquaredExponential(lam_ls=float(spec.get("lam_ls", 1.0)))
    if kind == "product_se":
        ls = spec.get("lengthscales")
        if ls is None:
            ls = [1.0] * dim
        return product_se(np.asarray(ls, dtype=float))
    if kind == "polynomial":
        return Polynomial(c=float(spec.get("c", 1.0)), l=int(spec.get("l", 1)))
    raise ConfigError(f"unknown kernel kind {kind!r}")


def _read_task_csv(path: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
    expected = [f"x_{j + 1}" for j in range(dim)] + ["f"]
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open sample file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file (header x_1..x_{dim},f required)")
        if [h.strip() for h in header] != expected:
            raise ConfigError(
                f"{path}: header must be {','.join(expected)}, got {','.join(header)}"
            )
        X, f = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ConfigError(
                    f"{path}: line {lineno}: expected {dim + 1} columns, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
            X.append(vals[:dim])
            f.append(vals[dim])
    if not X:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(X), np.asarray(f)


def cmd_fit(args: argparse.Namespace) -> int:
    if not args.config:
        raise ConfigError("fit needs --config with the task files and score spec")
    cfg = _load_json(args.config)
    _check_keys(cfg, _FIT_KEYS, "fit")
    for key in ("dim", "tasks", "method"):
        if key not in cfg:
            raise ConfigError(f"fit config needs {key!r}")
    dim = int(cfg["dim"])
    shared_spec = cfg.get("score")
    tasks, pts, vals = [], [], []
    for entry in cfg["tasks"]:
        _check_keys(entry, {"file", "score"}, "fit task")
        spec = entry.get("score", shared_spec)
        if spec is None:
            raise ConfigError(f"task {entry.get('file')}: no score specification")
        score = _score_from_spec(spec, dim)
        X, f = _read_task_csv(entry["file"], dim)
        tasks.append(IntegrationTask(
            integrand=lambda Z: np.full(len(Z), np.nan),  # file-backed; never sampled
            score=score, sampler=lambda rng, n: np.zeros((n, dim)), m=len(f)))
        pts.append(X)
        vals.append(f)
    taskset = TaskSet(tuple(tasks))
    dataset = Dataset(taskset, pts, vals)

    method = bm.canonical_method(cfg["method"])
    lam = float(cfg.get("lam", 1e-5))
    kernel_spec = cfg.get("kernel", {"kind": "se"})
    base = _kernel_from_spec(kernel_spec, dim)
    shared = bool(cfg.get("shared_target", len({id(t.score) for t in tasks}) == 1))
    scores = [t.score for t in tasks]
    optim = cfg.get("optim", {})
    oc = OptimConfig(epochs=int(optim.get("epochs", 400)),
                     lr=float(optim.get("lr", 3e-4)),
                     batch=int(optim.get("batch", 10)),
                     lam=lam, seed=int(cfg.get("seed", 0)))
    B_out = None
    if method == "MC":
        beta = dataset.task_means()
        theta_digest = hashlib.sha256(b"").hexdigest()
    else:
        if method in ("CF-exact", "CV-sgd") and taskset.T > 1:
            betas, digests = [], hashlib.sha256()
            for t in range(taskset.T):
                ds_t = dataset.single_task(t)
                kern = ScalarSteinKernel(base, scores[t])
                if method == "CF-exact":
                    model = fit_exact_joint(kern, ds_t, lam=lam)
                else:
                    model = fit_sgd_fixed_B(kern, ds_t, oc)
                betas.append(float(model.beta[0]))
                digests.update(np.ascontiguousarray(model.theta).tobytes())
            beta = np.asarray(betas)
            theta_digest = digests.hexdigest()
        else:
            if shared:
                def vv_kernel(B):
                    return SharedSteinKernel(base, scores[0], B)
            else:
                def vv_kernel(B):
                    return SeparableSteinKernel(base, scores, B)
            T = taskset.T
            if method == "CF-exact":
                model = fit_exact_joint(ScalarSteinKernel(base, scores[0]),
                                        dataset, lam=lam)
            elif method == "vvCV-fixedB":
                B = np.asarray(cfg.get("fixed_b", np.eye(T).tolist()), dtype=float)
                model = fit_sgd_fixed_B(vv_kernel(B), dataset, oc)
            elif method == "vvCV-estB":
                B0 = np.asarray(cfg.get("b0", np.eye(T).tolist()), dtype=float)
                model, cov = fit_sgd_learn_B(vv_kernel(B0), dataset, oc)
                B_out = cov.matrix.tolist()
            elif method == "vvCV-convexB":
                model, cov = fit_convex_B_ladder(
                    base, scores[0], dataset,
                    deltas=tuple(cfg.get("deltas", (1e-1, 1e-2, 1e-3))), lam=lam)
                B_out = cov.matrix.tolist()
            else:
                model = fit_sgd_fixed_B(ScalarSteinKernel(base, scores[0]), dataset, oc)
            beta = model.beta
            theta_digest = hashlib.sha256(
                np.ascontiguousarray(model.theta).tobytes()).hexdigest()

    out = args.out or "vvcv_fit"
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    result = {
        "method": method,
        "beta": [bm.fmt_num(b) for b in beta],
        # the all-data estimator is beta itself (n = 0 convention)
        "estimates": [bm.fmt_num(b) for b in beta],
        "theta_digest": theta_digest,
        "B": B_out,
        "config_digest": _digest(cfg),
    }
    with open(f"{out}_fit.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out}_fit.json (estimates: {', '.join(result['estimates'])})")
    return 0


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vvcv",
                                description="vector-valued control variate toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a benchmark problem and write CSVs")
    b.add_argument("problem", nargs="?", help="step | south | borehole")
    b.add_argument("--m", help="sample counts, e.g. 40,40 or 60:20")
    b.add_argument("--reps", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--methods", help="comma list: mc,cv-sgd,cf,vvcv-fixedb,"
                                     "vvcv-estb,vvcv-convexb")
    b.add_argument("--out", help="output path prefix")
    b.add_argument("--config", help="JSON run configuration (or a resolved digest file)")
    b.add_argument("--trace", action="store_true",
                   help="also write per-epoch error traces")
    b.add_argument("--timings", action="store_true",
                   help="include measured wall seconds in CSVs (breaks byte "
                        "reproducibility across runs)")
    b.add_argument("--threads", type=int, default=None,
                   help="parallel repetitions; 0 = auto "
                        "(default from VVCV_THREADS, else 1)")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fit", help="fit a control variate to user-supplied samples")
    f.add_argument("--config", required=False, help="JSON fit configuration")
    f.add_argument("--out", help="output path prefix")
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if getattr(args, "threads", None) is None and args.command == "bench":
        env = os.environ.get("VVCV_THREADS")
        if env is not None:
            try:
                args.threads = int(env)
            except ValueError:
                print(f"error: VVCV_THREADS={env!r} is not an integer", file=sys.stderr)
                return 2
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, bm.BenchmarkError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
