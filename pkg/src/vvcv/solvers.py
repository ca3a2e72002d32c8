"""Fitting vector-valued control variates.

Four routes: the exact linear-system solve with beta coordinate descent,
stochastic optimisation with a known task covariance, block-coordinate
stochastic optimisation that also learns the covariance, and a convex
relaxation ladder for the shared-target case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .models import VvcvModel, objective_iid, optimal_beta
from .stein import SteinKernel, TaskCovariance, free_to_chol, gram
from .tasks import Dataset

__all__ = [
    "NumericalError",
    "GramSystem",
    "OptimConfig",
    "Adam",
    "build_gram_system",
    "solve_exact",
    "fit_exact_coordinate",
    "fit_exact_joint",
    "fit_sgd_fixed_B",
    "fit_sgd_learn_B",
    "fit_convex_B_ladder",
    "learn_B_gradients",
]

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class GramSystem:
    """The (N T) x (N T) symmetric PSD system whose solution is theta*.

    A = sum_t (1/m_t) sum_j u_tj u_tj' + lam * G,  rhs = sum (1/m_t) u_tj y_tj,
    where u_tj is the t-column of the Gram block column at x_tj and
    y_tj = f_t(x_tj) - beta_t.
    """

    A: np.ndarray
    rhs: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        scale = np.linalg.norm(self.A)
        if scale > 0 and np.max(np.abs(self.A - self.A.T)) > 1e-8 * scale:
            raise NumericalError("assembled system lost symmetry")


def build_gram_system(kernel: SteinKernel, dataset: Dataset, beta: np.ndarray,
                      lam: float) -> GramSystem:
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    beta = np.asarray(beta, dtype=float)
    T, N = kernel.T, dataset.N
    S = dataset.score_table()
    G = gram(kernel, dataset.points, None, S)
    cols = np.arange(N) * T + dataset.task_of
    U = G[:, cols]                                   # (NT, N)
    w = 1.0 / np.array(dataset.counts, dtype=float)[dataset.task_of]
    A = (U * w) @ U.T + lam * G
    A = 0.5 * (A + A.T)
    y = dataset.values - beta[dataset.task_of]
    rhs = U @ (w * y)
    return GramSystem(A=A, rhs=rhs)


def _solve_psd(A: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve A x = rhs for symmetric PSD A with a jitter ladder, then lstsq.

    Returns (x, jitter used).  Raises NumericalError with a conditioning
    estimate when no fallback reaches a small relative residual.
    """
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0.0
    mean_diag = float(np.mean(np.diag(A)))
    scale = abs(mean_diag) if mean_diag != 0.0 else 1.0
    best = None
    for j in JITTER_LADDER:
        Aj = A if j == 0.0 else A + (j * scale) * np.eye(A.shape[0])
        try:
            c, low = scipy.linalg.cho_factor(Aj, lower=True, check_finite=False)
            x = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            continue
        rel = np.linalg.norm(A @ x - rhs) / rhs_norm
        if rel < 1e-8:
            return x, j
        if best is None or rel < best[2]:
            best = (x, j, rel)
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    rel = np.linalg.norm(A @ x - rhs) / rhs_norm
    if rel < 1e-8:
        return x, 0.0
    if best is not None and best[2] < rel:
        x, j, rel = best
        if rel < 1e-6:
            return x, j
    if rel < 1e-6:
        return x, 0.0
    cond = np.linalg.cond(A)
    raise NumericalError(
        f"could not solve the Gram system: relative residual {rel:.3e} "
        f"after jitter ladder and least-squares fallback (cond(A) ~ {cond:.3e})"
    )


def solve_exact(kernel: SteinKernel, dataset: Dataset, beta, lam: float) -> np.ndarray:
    """theta* of the convex linear system, shape (N, T)."""
    sys = build_gram_system(kernel, dataset, np.asarray(beta, dtype=float), lam)
    x, _ = _solve_psd(sys.A, sys.rhs)
    return x.reshape(dataset.N, kernel.T)


def fit_exact_coordinate(kernel: SteinKernel, dataset: Dataset, lam: float = 1e-5,
                         sweeps: int = 20, tol: float = 1e-10) -> VvcvModel:
    """Block coordinate descent: exact theta-solve alternating with optimal beta.

    Starts from beta at the plain Monte Carlo means; one sweep is the
    closed-form baseline configuration.  The objective is non-increasing
    across sweeps (asserted) and iteration stops on relative change < tol.
    """
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    beta = dataset.task_means()
    theta = np.zeros((dataset.N, kernel.T))
    prev = None
    for sweep in range(sweeps):
        theta = solve_exact(kernel, dataset, beta, lam)
        model = VvcvModel(kernel, dataset.points, theta, beta, lam)
        beta = optimal_beta(model, dataset)
        model = VvcvModel(kernel, dataset.points, theta, beta, lam)
        obj = objective_iid(model, dataset, include_ridge=True, ridge_norm="rkhs")
        if prev is not None:
            if obj > prev + 1e-10 * (1.0 + abs(prev)):
                raise NumericalError(
                    f"objective increased across sweeps: {prev:.6e} -> {obj:.6e}"
                )
            if abs(prev - obj) <= tol * (1.0 + abs(prev)):
                break
        prev = obj
    return VvcvModel(kernel, dataset.points, theta, beta, lam)


def fit_exact_joint(kernel: SteinKernel, dataset: Dataset, lam: float = 1e-5
                    ) -> VvcvModel:
    """Closed-form joint minimiser over (theta, beta) of the RKHS-ridge objective.

    Extends the theta-system with the T beta unknowns and solves once; this
    is the fixed point the beta/theta alternation contracts to, reached
    directly (the alternation's contraction factor is 1 - O(lam * m), which
    is uselessly slow for small ridges).  For T = 1 the resulting estimate
    equals the classic weighted control-functional estimator
    1'(K + lam m I)^-1 f / 1'(K + lam m I)^-1 1.
    """
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    T, N = kernel.T, dataset.N
    S = dataset.score_table()
    G = gram(kernel, dataset.points, None, S)
    cols = np.arange(N) * T + dataset.task_of
    U = G[:, cols]
    w = 1.0 / np.array(dataset.counts, dtype=float)[dataset.task_of]
    P = np.zeros((N, T))
    P[np.arange(N), dataset.task_of] = 1.0
    UW = U * w
    M = np.block([[UW @ U.T + lam * G, UW @ P],
                  [(UW @ P).T, np.eye(T)]])
    rhs = np.concatenate([UW @ dataset.values, P.T @ (w * dataset.values)])
    x, _ = _solve_psd(0.5 * (M + M.T), rhs)
    theta = x[:N * T].reshape(N, T)
    beta = x[N * T:]
    return VvcvModel(kernel, dataset.points, theta, beta, lam)


# ----------------------------------------------------------------------------
# stochastic optimisation
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    """Settings for the stochastic fits.

    ``batch`` is either the total minibatch size split across tasks in
    proportion to m_t, or an explicit per-task tuple.  The plateau early
    stop is off by default to match fixed-epoch experiment protocols.
    """

    epochs: int = 400
    lr: float = 3e-4
    batch: int | tuple[int, ...] = 10
    lam: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop: bool = False
    plateau_tol: float = 1e-9
    plateau_window: int = 20
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.beta1 <= 0 or self.beta2 <= 0 or self.eps <= 0:
            raise ValueError("all rates must be positive")
        batches = self.batch if isinstance(self.batch, tuple) else (self.batch,)
        if any(b < 1 for b in batches):
            raise ValueError("minibatch sizes must be >= 1")

    def resolve_batches(self, counts: Sequence[int]) -> tuple[int, ...]:
        """Per-task minibatch sizes, proportional to m_t by default."""
        counts = list(counts)
        if isinstance(self.batch, tuple):
            if len(self.batch) != len(counts):
                raise ValueError(
                    f"batch tuple has {len(self.batch)} entries for {len(counts)} tasks"
                )
            out = self.batch
        else:
            total = min(self.batch, sum(counts))
            raw = [total * c / sum(counts) for c in counts]
            out = [max(1, int(math.floor(r))) for r in raw]
            # largest-remainder rounding up to the requested total
            rem = sorted(range(len(counts)), key=lambda t: raw[t] - math.floor(raw[t]),
                         reverse=True)
            i = 0
            while sum(out) < total and i < len(rem):
                if out[rem[i]] < counts[rem[i]]:
                    out[rem[i]] += 1
                i += 1
            out = tuple(out)
        for t, (b, c) in enumerate(zip(out, counts)):
            if b > c:
                raise ValueError(f"task {t}: minibatch {b} exceeds sample count {c}")
        return tuple(out)


class Adam(object):
    """Plain Adam on a flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _epoch_batches(rng: np.random.Generator, dataset: Dataset,
                   batches: tuple[int, ...]) -> list[np.ndarray]:
    """Shuffled flat-index minibatches covering every point of every task once."""
    iters = max(math.ceil(c / b) for c, b in zip(dataset.counts, batches))
    chunks_per_task = []
    for t in range(dataset.T):
        perm = rng.permutation(dataset.counts[t]) + dataset.offsets[t]
        chunks_per_task.append(np.array_split(perm, iters))
    return [np.concatenate([chunks_per_task[t][i] for t in range(dataset.T)
                            if chunks_per_task[t][i].size > 0])
            for i in range(iters)]


def _minibatch_grads(K_slice: np.ndarray, theta: np.ndarray, beta: np.ndarray,
                     fvals: np.ndarray, tasks: np.ndarray, lam: float, T: int):
    """Exact gradients of the minibatch objective (Euclidean ridge).

    ``K_slice`` holds K0(batch, anchors) as (b, N, T, T).
    Returns (grad_theta (N, T), grad_beta (T,), residuals, weights).
    """
    b = K_slice.shape[0]
    gvec = np.einsum("pitu,iu->pt", K_slice, theta)
    gsel = gvec[np.arange(b), tasks]
    r = fvals - gsel - beta[tasks]
    counts = np.bincount(tasks, minlength=T).astype(float)
    w = 1.0 / counts[tasks]
    wr = w * r
    Csel = K_slice[np.arange(b), :, tasks, :]        # (b, N, T)
    grad_theta = -2.0 * np.einsum("p,pit->it", wr, Csel) + 2.0 * lam * theta
    grad_beta = np.zeros(T)
    np.add.at(grad_beta, tasks, -2.0 * wr)
    return grad_theta, grad_beta, r, w


def _full_objective(K_full: np.ndarray, theta: np.ndarray, beta: np.ndarray,
                    dataset: Dataset, lam: float) -> float:
    gvec = np.einsum("pitu,iu->pt", K_full, theta)
    r = dataset.values - gvec[np.arange(dataset.N), dataset.task_of] \
        - beta[dataset.task_of]
    w = 1.0 / np.array(dataset.counts, dtype=float)[dataset.task_of]
    return float(np.sum(w * r * r) + lam * np.sum(theta ** 2))


EpochHook = Callable[[int, np.ndarray], None]


def fit_sgd_fixed_B(kernel: SteinKernel, dataset: Dataset, config: OptimConfig,
                    on_epoch: EpochHook | None = None) -> VvcvModel:
    """Minibatch Adam on (theta, beta) with the task covariance held fixed.

    Initialises theta at zero (no control variate) and beta at the plain
    Monte Carlo means; reshuffles every epoch with a seeded generator, so
    the fit is a deterministic function of (kernel, dataset, config).
    """
    T, N = kernel.T, dataset.N
    if dataset.T != T:
        raise ValueError(f"dataset has T={dataset.T} tasks, kernel expects {T}")
    batches = config.resolve_batches(dataset.counts)
    S = dataset.score_table()
    K_full = kernel(dataset.points, dataset.points, S, S)

    theta = np.zeros((N, T))
    beta = dataset.task_means()
    opt = Adam(N * T + T, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & (2 ** 64 - 1)]))

    initial = _full_objective(K_full, theta, beta, dataset, config.lam)
    history = [initial]
    if on_epoch is not None:
        on_epoch(0, beta.copy())
    for epoch in range(1, config.epochs + 1):
        for idx in _epoch_batches(rng, dataset, batches):
            gt, gb, _, _ = _minibatch_grads(
                K_full[idx], theta, beta, dataset.values[idx],
                dataset.task_of[idx], config.lam, T)
            params = opt.step(np.concatenate([theta.ravel(), beta]),
                              np.concatenate([gt.ravel(), gb]))
            theta = params[:N * T].reshape(N, T)
            beta = params[N * T:]
        obj = _full_objective(K_full, theta, beta, dataset, config.lam)
        history.append(obj)
        if on_epoch is not None:
            on_epoch(epoch, beta.copy())
        if not np.isfinite(obj) or obj > config.divergence_factor * max(initial, 1e-300):
            raise NumericalError(
                f"stochastic fit diverged at epoch {epoch}: objective {obj:.3e} "
                f"vs initial {initial:.3e}; lower the learning rate"
            )
        if config.early_stop and len(history) > config.plateau_window:
            past = history[-config.plateau_window - 1]
            if abs(past - obj) <= config.plateau_tol * (1.0 + abs(past)):
                break
    return VvcvModel(kernel, dataset.points, theta, beta, config.lam)


def learn_B_gradients(profile_slice: np.ndarray, theta: np.ndarray, beta: np.ndarray,
                      fvals: np.ndarray, tasks: np.ndarray, L: np.ndarray,
                      T: int) -> np.ndarray:
    """Gradient of the B-penalised objective w.r.t. the free parameters of L.

    ``profile_slice`` is the B-independent kernel profile on (batch, anchors)
    as (b, N, T, T); B = L L' enters the data term linearly through
    K0 = B (.) profile and quadratically through the penalty ||B||_F^2.
    Diagonal entries of L are parameterised as logs.
    """
    b = profile_slice.shape[0]
    B = L @ L.T
    P = np.einsum("pitu,iu->ptu", profile_slice, theta)    # (b, T, T)
    gvec = np.einsum("ptu,tu->pt", P, B)
    r = fvals - gvec[np.arange(b), tasks] - beta[tasks]
    counts = np.bincount(tasks, minlength=T).astype(float)
    w = 1.0 / counts[tasks]
    GB = np.zeros((T, T))
    np.add.at(GB, tasks, -2.0 * (w * r)[:, None] * P[np.arange(b), tasks, :])
    GB += 2.0 * B
    GL = (GB + GB.T) @ L
    idx = np.arange(T)
    GL[idx, idx] *= np.diag(L)       # chain rule through L_ii = exp(rho_i)
    rows, cols = np.tril_indices(T)
    return GL[rows, cols]


def fit_sgd_learn_B(kernel: SteinKernel, dataset: Dataset, config: OptimConfig,
                    B0=None, on_epoch: EpochHook | None = None
                    ) -> tuple[VvcvModel, TaskCovariance]:
    """Block-coordinate stochastic fit that also learns the task covariance.

    Per minibatch: one Adam step on (theta, beta) holding B, then one Adam
    step on the free Cholesky parameters of B holding (theta, beta), exactly
    in that order.  B stays SPD by construction at every iteration.
    """
    T, N = kernel.T, dataset.N
    if dataset.T != T:
        raise ValueError(f"dataset has T={dataset.T} tasks, kernel expects {T}")
    batches = config.resolve_batches(dataset.counts)
    S = dataset.score_table()
    profile = kernel.profile(dataset.points, dataset.points, S, S)

    if B0 is None:
        B0 = kernel.B
    cov = B0 if isinstance(B0, TaskCovariance) else TaskCovariance(np.asarray(B0, dtype=float))
    Lfree = cov.free
    rows, cols = np.tril_indices(T)

    theta = np.zeros((N, T))
    beta = dataset.task_means()
    opt_tb = Adam(N * T + T, config.lr, config.beta1, config.beta2, config.eps)
    opt_L = Adam(Lfree.size, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & (2 ** 64 - 1)]))

    def full_obj(L):
        B = L @ L.T
        return _full_objective(B * profile, theta, beta, dataset, config.lam) \
            + float(np.sum(B ** 2))

    L = free_to_chol(Lfree, T)
    initial = full_obj(L)
    if on_epoch is not None:
        on_epoch(0, beta.copy())
    history = [initial]
    for epoch in range(1, config.epochs + 1):
        for idx in _epoch_batches(rng, dataset, batches):
            B = L @ L.T
            gt, gb, _, _ = _minibatch_grads(
                B * profile[idx], theta, beta, dataset.values[idx],
                dataset.task_of[idx], config.lam, T)
            params = opt_tb.step(np.concatenate([theta.ravel(), beta]),
                                 np.concatenate([gt.ravel(), gb]))
            theta = params[:N * T].reshape(N, T)
            beta = params[N * T:]
            gl = learn_B_gradients(profile[idx], theta, beta, dataset.values[idx],
                                   dataset.task_of[idx], L, T)
            Lfree = opt_L.step(Lfree, gl)
            L = free_to_chol(Lfree, T)
        obj = full_obj(L)
        history.append(obj)
        if on_epoch is not None:
            on_epoch(epoch, beta.copy())
        if not np.isfinite(obj) or obj > config.divergence_factor * max(initial, 1e-300):
            raise NumericalError(
                f"stochastic fit diverged at epoch {epoch}: objective {obj:.3e} "
                f"vs initial {initial:.3e}; lower the learning rate"
            )
        if config.early_stop and len(history) > config.plateau_window:
            past = history[-config.plateau_window - 1]
            if abs(past - obj) <= config.plateau_tol * (1.0 + abs(past)):
                break
    cov = TaskCovariance(L @ L.T)
    model = VvcvModel(kernel.with_B(cov.matrix), dataset.points, theta, beta, config.lam)
    return model, cov


# ----------------------------------------------------------------------------
# convex relaxation for B (shared target only)
# ----------------------------------------------------------------------------


def _spd_cbrt(C: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.cbrt(vals)) @ vecs.T


def _ladder_objective(G0, theta, beta, B, dataset, lam, delta) -> float:
    N = dataset.N
    g = G0 @ theta
    r = dataset.values - g[np.arange(N), dataset.task_of] - beta[dataset.task_of]
    w = 1.0 / np.array(dataset.counts, dtype=float)[dataset.task_of]
    C = theta.T @ G0 @ theta + (delta ** 2) * (N ** 2) * np.eye(dataset.T)
    Bdag = np.linalg.pinv(B)
    return float(np.sum(w * r * r) + lam * np.trace(Bdag @ C) + np.sum(B ** 2))


def fit_convex_B_ladder(base_kernel, score, dataset: Dataset,
                        deltas: Sequence[float] = (1e-1, 1e-2, 1e-3),
                        lam: float = 1e-5, inner_tol: float = 1e-8,
                        max_inner: int = 200) -> tuple[VvcvModel, TaskCovariance]:
    """Sequence of jointly convex problems converging to the penalised optimum.

    Shared-target (single score) configurations only.  Each rung minimises
    the delta-regularised objective by exact block descent (theta-solve,
    beta mean-residual, closed-form SPD cube-root update of B), warm-starting
    the next rung; the returned coefficients are the transformed
    theta* B*^+ paired with the kernel carrying B*.
    """
    from .stein import ScalarSteinKernel, SharedSteinKernel

    deltas = tuple(float(d) for d in deltas)
    if not deltas or any(d <= 0 for d in deltas) or any(
            deltas[i] <= deltas[i + 1] for i in range(len(deltas) - 1)):
        raise ValueError("the delta ladder must be strictly decreasing and positive")
    for t in range(dataset.T - 1):
        if dataset.taskset.tasks[t].score is not dataset.taskset.tasks[t + 1].score:
            raise ValueError(
                "the convex-B ladder needs one shared target distribution "
                "(all tasks sharing a single score function)"
            )
    T, N = dataset.T, dataset.N
    scalar = ScalarSteinKernel(base_kernel, score)
    s = score(dataset.points)
    G0 = scalar.k0(dataset.points, dataset.points, s, s)
    G0 = 0.5 * (G0 + G0.T)

    w = 1.0 / np.array(dataset.counts, dtype=float)[dataset.task_of]
    theta = np.zeros((N, T))
    beta = dataset.task_means()
    B = np.eye(T)

    # column-u data-term blocks G0 D_u G0 are delta-independent
    data_blocks = []
    for u in range(T):
        Du = np.where(dataset.task_of == u, w, 0.0)
        data_blocks.append(G0 @ (Du[:, None] * G0))

    for delta in deltas:
        prev = _ladder_objective(G0, theta, beta, B, dataset, lam, delta)
        for _ in range(max_inner):
            Bdag = np.linalg.pinv(0.5 * (B + B.T))
            A = np.kron(Bdag, G0) * lam
            for u in range(T):
                A[u * N:(u + 1) * N, u * N:(u + 1) * N] += data_blocks[u]
            rhs = np.empty(N * T)
            for u in range(T):
                mask = np.where(dataset.task_of == u, w, 0.0)
                rhs[u * N:(u + 1) * N] = G0 @ (mask * (dataset.values - beta[u]))
            v, _ = _solve_psd(0.5 * (A + A.T), rhs)
            theta = v.reshape(T, N).T                      # column-stacked unknowns
            g = G0 @ theta
            for u in range(T):
                sl = dataset.task_slice(u)
                beta[u] = np.mean(dataset.values[sl] - g[sl.start:sl.stop, u])
            C = theta.T @ G0 @ theta + (delta ** 2) * (N ** 2) * np.eye(T)
            B = _spd_cbrt(0.5 * lam * C)
            obj = _ladder_objective(G0, theta, beta, B, dataset, lam, delta)
            if abs(prev - obj) <= inner_tol * (1.0 + abs(prev)):
                break
            prev = obj
    cov = TaskCovariance(0.5 * (B + B.T))
    theta_star = theta @ np.linalg.pinv(cov.matrix)
    kernel = SharedSteinKernel(base_kernel, score, cov.matrix)
    model = VvcvModel(kernel, dataset.points, theta_star, beta, lam)
    return model, cov
