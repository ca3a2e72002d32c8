"""Fitted vector-valued control variates and the variance objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stein import SteinKernel, TaskCovariance, gram
from .tasks import Dataset

__all__ = [
    "VvcvModel",
    "objective_iid",
    "objective_mcmc",
    "objective_with_B",
    "optimal_beta",
    "estimate_split",
    "estimate_beta",
]


@dataclass
class VvcvModel:
    """Control variate g(x) = sum_i K0(x, x_i) theta_i plus the offset beta.

    ``theta`` has one T-vector per anchor, task-major rows (N, T); the map
    theta -> g is linear.  ``beta`` estimates the vector of integrals.
    """

    kernel: SteinKernel
    anchors: np.ndarray           # (N, d)
    theta: np.ndarray             # (N, T)
    beta: np.ndarray              # (T,)
    lam: float = 0.0
    _anchor_scores: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        N, T = self.anchors.shape[0], self.kernel.T
        if self.theta.shape != (N, T):
            raise ValueError(f"theta must be ({N}, {T}), got {self.theta.shape}")
        if self.beta.shape != (T,):
            raise ValueError(f"beta must be ({T},), got {self.beta.shape}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @property
    def T(self) -> int:
        return self.kernel.T

    def anchor_scores(self) -> np.ndarray:
        if self._anchor_scores is None:
            self._anchor_scores = self.kernel.scores_at(self.anchors)
        return self._anchor_scores

    def predict(self, X) -> np.ndarray:
        """g(x) for each row of X, shape (n, T); a single point gives (T,)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xv = np.atleast_2d(X)
        tens = self.kernel(Xv, self.anchors, None, self.anchor_scores())
        out = np.einsum("nitu,iu->nt", tens, self.theta)
        return out[0] if single else out


def _residuals(model: VvcvModel, dataset: Dataset) -> np.ndarray:
    """Per-point residuals f_t(x_tj) - g(x_tj)_t - beta_t on the dataset (N,)."""
    g = model.predict(dataset.points)
    gt = g[np.arange(dataset.N), dataset.task_of]
    return dataset.values - gt - model.beta[dataset.task_of]


def _ridge(model: VvcvModel, ridge_norm: str) -> float:
    if ridge_norm == "euclidean":
        return float(np.sum(model.theta ** 2))
    if ridge_norm == "rkhs":
        G = gram(model.kernel, model.anchors, None, model.anchor_scores())
        v = model.theta.reshape(-1)
        return float(v @ G @ v)
    raise ValueError(f"ridge_norm must be 'rkhs' or 'euclidean', got {ridge_norm!r}")


def objective_iid(model: VvcvModel, dataset: Dataset, include_ridge: bool = True,
                  ridge_norm: str = "rkhs") -> float:
    """Empirical sum of per-task variances plus the optional ridge term.

    sum_t (1/m_t) sum_j (f_t(x_tj) - g(x_tj)_t - beta_t)^2  [+ lam * ||g||^2]
    """
    if dataset.T != model.T:
        raise ValueError(f"dataset has T={dataset.T} tasks, model expects {model.T}")
    r = _residuals(model, dataset)
    w = 1.0 / np.array(dataset.counts, dtype=float)
    val = float(np.sum(w[dataset.task_of] * r * r))
    if include_ridge and model.lam > 0.0:
        val += model.lam * _ridge(model, ridge_norm)
    return val


def objective_mcmc(model: VvcvModel, dataset: Dataset, include_ridge: bool = True,
                   ridge_norm: str = "rkhs") -> float:
    """IID objective plus the lag-covariance correction for chain-ordered data.

    Each task's points are taken in chain order; the correction sums the
    centred lag-s residual products for every lag up to m_t - 1 (no
    windowing).  Residuals are centred by their own sample mean, so the
    untruncated sum collapses to -(1/m_t) sum_j (r_j - rbar)^2 identically;
    the lag loop below evaluates the displayed form verbatim.
    """
    val = objective_iid(model, dataset, include_ridge, ridge_norm)
    g = model.predict(dataset.points)
    for t in range(dataset.T):
        sl = dataset.task_slice(t)
        r = dataset.values[sl] - g[sl.start:sl.stop, t]
        m = r.size
        if m < 2:
            raise ValueError(f"task {t}: the MCMC objective needs m_t >= 2, got {m}")
        rc = r - r.mean()
        corr = 0.0
        for s in range(1, m):
            corr += float(rc[: m - s] @ rc[s:])
        val += 2.0 * corr / m
    return val


def objective_with_B(model: VvcvModel, dataset: Dataset, B=None,
                     ridge_norm: str = "euclidean") -> float:
    """Task-covariance-penalised objective: iid objective plus ||B||_F^2.

    The penalty weight is fixed at one (a second regularisation parameter
    would just rescale the base kernel).  Only separable kernels qualify.
    """
    kernel = model.kernel
    if B is not None:
        Bm = B.matrix if isinstance(B, TaskCovariance) else np.asarray(B, dtype=float)
        kernel = kernel.with_B(Bm)
        model = VvcvModel(kernel, model.anchors, model.theta, model.beta, model.lam)
    val = objective_iid(model, dataset, include_ridge=True, ridge_norm=ridge_norm)
    return val + float(np.sum(kernel.B ** 2))


def optimal_beta(model: VvcvModel, dataset: Dataset) -> np.ndarray:
    """Per-task mean residual: the exact minimiser of the objective over beta."""
    g = model.predict(dataset.points)
    out = np.empty(dataset.T)
    for t in range(dataset.T):
        sl = dataset.task_slice(t)
        out[t] = np.mean(dataset.values[sl] - g[sl.start:sl.stop, t])
    return out


def estimate_split(model: VvcvModel, holdout: Dataset) -> np.ndarray:
    """Holdout-mean estimator of the integrals: mean_t [f_t - (g)_t].

    Unbiased when the holdout is iid and disjoint from the training anchors
    (the caller's responsibility); beta plays no role since Pi[g] = 0.
    """
    if holdout.T != model.T:
        raise ValueError(f"holdout has T={holdout.T} tasks, model expects {model.T}")
    g = model.predict(holdout.points)
    out = np.empty(holdout.T)
    for t in range(holdout.T):
        sl = holdout.task_slice(t)
        if sl.stop == sl.start:
            raise ValueError(f"holdout task {t} is empty")
        out[t] = np.mean(holdout.values[sl] - g[sl.start:sl.stop, t])
    return out


def estimate_beta(model: VvcvModel) -> np.ndarray:
    """All-data estimator: the fitted beta itself (the n=0 convention)."""
    return model.beta.copy()
