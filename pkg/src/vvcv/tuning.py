"""Kernel hyperparameter selection via the B = I marginal likelihood.

Each task contributes f' (K + lam I)^-1 f + log det(K + lam I), with K the
scalar Stein Gram of that task's target; the summed objective is minimised
over the kernel's unconstrained parameter vector (positives as logs), by
seeded minibatch Adam with central-difference gradients, or by exhaustive
grid search when the config supplies candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
import scipy.linalg

from .kernels import BaseKernel
from .scores import ScoreFn
from .solvers import JITTER_LADDER, Adam, NumericalError
from .tasks import Dataset, TaskSet

__all__ = ["TuneConfig", "neg_log_marginal", "tune"]


@dataclass(frozen=True)
class TuneConfig:
    epochs: int = 20
    lr: float = 0.05
    batch: int = 5               # per-task minibatch size
    seed: int = 0
    lam: float = 1e-5            # defaults to the fitting ridge
    fd_step: float = 1e-4        # central-difference step on the free parameters
    grid: tuple | None = None    # optional: candidate free-parameter vectors

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0:
            raise ValueError("tuning rates/batch/epochs must be positive")


def _stein_gram(kernel: BaseKernel, score: ScoreFn, X: np.ndarray) -> np.ndarray:
    from .stein import ScalarSteinKernel

    s = score(X)
    G = ScalarSteinKernel(kernel, score).k0(X, X, s, s)
    return 0.5 * (G + G.T)


def neg_log_marginal(kernel: BaseKernel, score: ScoreFn, X, f, lam: float) -> float:
    """Per-task negative log-marginal term (sum over tasks is the caller's)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    f = np.asarray(f, dtype=float).ravel()
    if X.shape[0] != f.size or X.shape[0] < 1:
        raise ValueError("need one value per point and at least one point")
    K = _stein_gram(kernel, score, X) + lam * np.eye(X.shape[0])
    mean_diag = float(np.mean(np.diag(K)))
    scale = abs(mean_diag) if mean_diag != 0.0 else 1.0
    for j in JITTER_LADDER:
        Kj = K if j == 0.0 else K + (j * scale) * np.eye(K.shape[0])
        try:
            c, low = scipy.linalg.cho_factor(Kj, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            continue
        alpha = scipy.linalg.cho_solve((c, low), f, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        return float(f @ alpha) + logdet
    raise NumericalError("marginal-likelihood Gram factorisation failed after jitter ladder")


def _summed_nlm(kernel: BaseKernel, scores, points, values, lam: float) -> float:
    return sum(neg_log_marginal(kernel, s, X, f, lam)
               for s, X, f in zip(scores, points, values))


def tune(kernel: BaseKernel, taskset: TaskSet, dataset: Dataset,
         config: TuneConfig = TuneConfig()) -> BaseKernel:
    """Minimise the summed per-task negative log-marginal over hyperparameters.

    One parameter vector is shared across all tasks.  The gradient path runs
    Adam on minibatch objectives with central-difference gradients and
    returns the best full-data iterate seen (never worse than the start);
    a grid, when supplied, is searched exhaustively instead.
    """
    scores = [t.score for t in taskset.tasks]
    full_pts = [dataset.points_of(t) for t in range(dataset.T)]
    full_vals = [dataset.values_of(t) for t in range(dataset.T)]

    def full_objective(params) -> float:
        return _summed_nlm(kernel.with_free_params(params), scores, full_pts,
                           full_vals, config.lam)

    if config.grid is not None:
        best_p, best_v = None, math.inf
        failures = 0
        for cand in config.grid:
            p = np.atleast_1d(np.asarray(cand, dtype=float))
            try:
                v = full_objective(p)
            except (NumericalError, ValueError, FloatingPointError):
                failures += 1
                continue
            if not np.isfinite(v):
                failures += 1
                continue
            if v < best_v:
                best_p, best_v = p, v
        if best_p is None:
            raise NumericalError(f"all {failures} grid candidates failed numerically")
        return kernel.with_free_params(best_p)

    params = kernel.free_params().astype(float)
    opt = Adam(params.size, config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & (2 ** 64 - 1)]))
    best_p, best_v = params.copy(), full_objective(params)

    def minibatch_objective(p, batches) -> float:
        k = kernel.with_free_params(p)
        return sum(neg_log_marginal(k, scores[t], full_pts[t][b], full_vals[t][b],
                                    config.lam)
                   for t, b in enumerate(batches))

    iters = max(math.ceil(m / config.batch) for m in dataset.counts)
    h = config.fd_step
    for _ in range(config.epochs):
        chunks = [np.array_split(rng.permutation(m), iters) for m in dataset.counts]
        for i in range(iters):
            batches = [chunks[t][i] for t in range(dataset.T)]
            if any(b.size == 0 for b in batches):
                batches = [b if b.size else np.arange(min(config.batch, m))
                           for b, m in zip(batches, dataset.counts)]
            grad = np.empty_like(params)
            for j in range(params.size):
                e = np.zeros_like(params)
                e[j] = h
                grad[j] = (minibatch_objective(params + e, batches)
                           - minibatch_objective(params - e, batches)) / (2.0 * h)
            params = opt.step(params, grad)
        v = full_objective(params)
        if v < best_v:
            best_p, best_v = params.copy(), v
    return kernel.with_free_params(best_p)
