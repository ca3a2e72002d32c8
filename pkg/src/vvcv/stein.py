"""Matrix-valued Stein reproducing kernels.

Every variant here produces a T x T kernel K0 whose t-th output has zero
mean under the t-th target, built from a scalar base kernel, per-task
scores, and a task-covariance matrix B.  All variants are separable in the
sense that K0(x, y) = B (.) Phi(x, y) entrywise, where the profile Phi does
not depend on B; this linearity underwrites the analytic B-gradient used by
the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import BaseKernel
from .scores import ScoreFn
from .tasks import Dataset

__all__ = [
    "TaskCovariance",
    "SteinKernel",
    "ScalarSteinKernel",
    "SeparableSteinKernel",
    "SharedSteinKernel",
    "SecondOrderSteinKernel",
    "PolynomialSteinKernel",
    "gram",
    "integrability_diagnostic",
]


@dataclass(frozen=True)
class TaskCovariance:
    """Symmetric positive definite task covariance B = L L'.

    The free parameterisation stores the strictly-lower entries of L raw
    and the diagonal as logs, so any real vector maps to an SPD matrix.
    """

    matrix: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.matrix, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValueError(f"B must be square, got shape {B.shape}")
        if not np.allclose(B, B.T, atol=1e-12, rtol=0.0):
            raise ValueError("B must be symmetric (to 1e-12)")
        B = 0.5 * (B + B.T)
        np.linalg.cholesky(B)  # raises LinAlgError if not SPD
        B.setflags(write=False)
        object.__setattr__(self, "matrix", B)

    @property
    def T_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.matrix)

    @property
    def free(self) -> np.ndarray:
        """Free parameters: lower triangle of L row-major, diagonal as log."""
        L = self.chol
        T = L.shape[0]
        rows, cols = np.tril_indices(T)
        v = L[rows, cols].copy()
        v[rows == cols] = np.log(np.diag(L))
        return v

    @classmethod
    def from_free(cls, v: np.ndarray, T: int) -> "TaskCovariance":
        L = free_to_chol(np.asarray(v, dtype=float), T)
        return cls(L @ L.T)

    @classmethod
    def identity(cls, T: int) -> "TaskCovariance":
        return cls(np.eye(T))


def free_to_chol(v: np.ndarray, T: int) -> np.ndarray:
    """Lower-triangular factor from a free vector (diag entries are logs)."""
    rows, cols = np.tril_indices(T)
    if v.size != rows.size:
        raise ValueError(f"expected {rows.size} free parameters for T={T}, got {v.size}")
    L = np.zeros((T, T))
    L[rows, cols] = v
    idx = np.arange(T)
    L[idx, idx] = np.exp(L[idx, idx])
    return L


def _as_B(B, T: int) -> np.ndarray:
    if isinstance(B, TaskCovariance):
        B = B.matrix
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape != (T, T):
        raise ValueError(f"B must be {T}x{T}, got {B.shape}")
    return B


class SteinKernel:
    """Common surface of all matrix-valued Stein kernels.

    ``__call__(X, Y)`` returns the (n, m, T, T) tensor of kernel blocks;
    ``profile`` returns the B-independent part (K0 = B (.) profile).
    Score tables may be passed to reuse a dataset's cache.
    """

    T: int
    B: np.ndarray
    base: BaseKernel
    score_fns: tuple[ScoreFn, ...]

    def scores_at(self, X: np.ndarray) -> np.ndarray:
        """Per-task scores at the given points, shape (T, n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((self.T, X.shape[0], X.shape[1]))
        for t, s in enumerate(self.score_fns):
            out[t] = s(X)
        return out

    def profile(self, X, Y, SX=None, SY=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X, Y, SX=None, SY=None) -> np.ndarray:
        return self.B * self.profile(X, Y, SX, SY)

    def with_B(self, B) -> "SteinKernel":
        raise NotImplementedError

    def _prep(self, X, Y, SX, SY):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if SX is None:
            SX = self.scores_at(X)
        if SY is None:
            SY = self.scores_at(Y)
        return X, Y, np.asarray(SX, dtype=float), np.asarray(SY, dtype=float)


class ScalarSteinKernel(SteinKernel):
    """Scalar first-order Stein kernel k0 (the four-term Langevin form)."""

    def __init__(self, base: BaseKernel, score: ScoreFn):
        self.base = base
        self.score_fns = (score,)
        self.T = 1
        self.B = np.ones((1, 1))

    def k0(self, X, Y, sx=None, sy=None) -> np.ndarray:
        """k0(x, y) as an (n, m) matrix; sx/sy are optional score caches (n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        sx = self.score_fns[0](X) if sx is None else np.asarray(sx, dtype=float)
        sy = self.score_fns[0](Y) if sy is None else np.asarray(sy, dtype=float)
        k = self.base.value(X, Y)
        gx = self.base.grad_x(X, Y)
        gy = self.base.grad_y(X, Y)
        div = self.base.div_xy(X, Y)
        return (
            div
            + np.einsum("nd,nmd->nm", sx, gy)
            + np.einsum("md,nmd->nm", sy, gx)
            + (sx @ sy.T) * k
        )

    def profile(self, X, Y, SX=None, SY=None):
        X, Y, SX, SY = self._prep(X, Y, SX, SY)
        return self.k0(X, Y, SX[0], SY[0])[:, :, None, None]

    def with_B(self, B):
        if not np.allclose(_as_B(B, 1), 1.0):
            raise ValueError("the scalar Stein kernel has no task covariance to set")
        return self


class SeparableSteinKernel(SteinKernel):
    """First-order matrix Stein kernel with separable base K = B k.

    Block (t, t') applies task t's score in x and task t''s score in y:
        B_tt' * [ div k + s_t'(y).grad_x k + s_t(x).grad_y k
                  + (s_t(x).s_t'(y)) k ].
    """

    def __init__(self, base: BaseKernel, scores: Sequence[ScoreFn], B):
        self.base = base
        self.score_fns = tuple(scores)
        self.T = len(self.score_fns)
        if self.T < 1:
            raise ValueError("need at least one score")
        self.B = _as_B(B, self.T)

    def profile(self, X, Y, SX=None, SY=None):
        X, Y, SX, SY = self._prep(X, Y, SX, SY)
        k = self.base.value(X, Y)
        gx = self.base.grad_x(X, Y)
        gy = self.base.grad_y(X, Y)
        div = self.base.div_xy(X, Y)
        # [t, t'] block: div + SY[t'].gx + SX[t].gy + (SX[t].SY[t']) k
        a = np.einsum("und,nmd->nmu", SX, gy)   # s_t(x) . grad_y
        b = np.einsum("vmd,nmd->nmv", SY, gx)   # s_t'(y) . grad_x
        c = np.einsum("und,vmd->nmuv", SX, SY) * k[:, :, None, None]
        return div[:, :, None, None] + a[:, :, :, None] + b[:, :, None, :] + c

    def with_B(self, B):
        return SeparableSteinKernel(self.base, self.score_fns, B)


class SharedSteinKernel(SteinKernel):
    """Separable kernel with one shared target: K0(x, y) = B k0(x, y)."""

    def __init__(self, base: BaseKernel, score: ScoreFn, B):
        self.base = base
        self.score_fns = (score,)
        self.shared_score = score
        B = np.atleast_2d(np.asarray(B.matrix if isinstance(B, TaskCovariance) else B, dtype=float))
        self.T = B.shape[0]
        self.B = _as_B(B, self.T)
        self._scalar = ScalarSteinKernel(base, score)

    def scores_at(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = self.shared_score(X)
        return np.broadcast_to(s, (self.T,) + s.shape).copy()

    def profile(self, X, Y, SX=None, SY=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        sx = SX[0] if SX is not None else None
        sy = SY[0] if SY is not None else None
        k0 = self._scalar.k0(X, Y, sx, sy)
        return np.broadcast_to(k0[:, :, None, None], k0.shape + (self.T, self.T)).copy()

    def __call__(self, X, Y, SX=None, SY=None):
        # cheaper than the generic B * profile: one scalar k0 evaluation
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        sx = SX[0] if SX is not None else None
        sy = SY[0] if SY is not None else None
        k0 = self._scalar.k0(X, Y, sx, sy)
        return k0[:, :, None, None] * self.B

    def with_B(self, B):
        return SharedSteinKernel(self.base, self.shared_score, B)


class SecondOrderSteinKernel(SteinKernel):
    """Matrix Stein kernel from the second-order Langevin operator.

    Requires a base kernel with closed-form fourth-order mixed partials
    (squared-exponential, polynomial, or products thereof).
    """

    def __init__(self, base: BaseKernel, scores: Sequence[ScoreFn], B):
        if not base.supports_second_order:
            raise ValueError(
                f"{base!r} has no second-order partials; the second-order Stein "
                "construction supports SE, polynomial, and product-of-SE bases"
            )
        self.base = base
        self.score_fns = tuple(scores)
        self.T = len(self.score_fns)
        self.B = _as_B(B, self.T)

    def profile(self, X, Y, SX=None, SY=None):
        X, Y, SX, SY = self._prep(X, Y, SX, SY)
        sp = self.base.second_partials(X, Y)
        hess = self.base.hess_xy(X, Y)
        lap_lap = np.sum(sp.dxx_dyy, axis=(2, 3))              # (n, m)
        lapx_gy = np.sum(sp.dxx_dy, axis=2)                    # (n, m, r)
        gx_lapy = np.sum(sp.dx_dyy, axis=3)                    # (n, m, s)
        a = np.einsum("vmr,nmr->nmv", SY, lapx_gy)             # l_t'r(y) sum_s dxx_dy
        b = np.einsum("uns,nms->nmu", SX, gx_lapy)             # l_ts(x) sum_r dx_dyy
        c = np.einsum("uns,nmsr,vmr->nmuv", SX, hess, SY)
        return lap_lap[:, :, None, None] + a[:, :, None, :] + b[:, :, :, None] + c

    def with_B(self, B):
        return SecondOrderSteinKernel(self.base, self.score_fns, B)


class PolynomialSteinKernel(SteinKernel):
    """Closed-form Stein kernels for the polynomial base (x'y + c)^l.

    ``order`` selects the first- or second-order Langevin construction;
    both are available for degrees l in {1, 2} and must agree with the
    generic constructions built on the polynomial base kernel.
    """

    def __init__(self, scores: Sequence[ScoreFn], B, c: float = 1.0, l: int = 1,
                 order: int = 1):
        if l not in (1, 2):
            raise ValueError(f"closed-form polynomial Stein kernels need l in {{1, 2}}, got {l}")
        if order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {order}")
        self.c = float(c)
        self.l = int(l)
        self.order = int(order)
        self.score_fns = tuple(scores)
        self.T = len(self.score_fns)
        self.B = _as_B(B, self.T)
        from .kernels import Polynomial
        self.base = Polynomial(c=self.c, l=self.l)

    def profile(self, X, Y, SX=None, SY=None):
        X, Y, SX, SY = self._prep(X, Y, SX, SY)
        n, m, d = X.shape[0], Y.shape[0], X.shape[1]
        p = X @ Y.T + self.c                                 # (n, m)
        sxx = np.einsum("und,nd->un", SX, X)                 # sum_r l_tr(x) x_r
        syy = np.einsum("vmd,md->vm", SY, Y)                 # sum_r l_t'r(y) y_r
        ss = np.einsum("und,vmd->nmuv", SX, SY)              # s_t(x) . s_t'(y)
        if self.order == 1 and self.l == 1:
            out = np.empty((n, m, self.T, self.T))
            out[:] = d
            out += sxx.T[:, None, :, None]                  # sum_r l_tr(x) x_r
            out += syy.T[None, :, None, :]                  # sum_r l_t'r(y) y_r
            out += ss * p[:, :, None, None]
            return out
        if self.order == 1 and self.l == 2:
            xy = X @ Y.T                                     # sum_r x_r y_r
            out = np.empty((n, m, self.T, self.T))
            out[:] = (2.0 * xy + 2.0 * d * p)[:, :, None, None]
            out += 2.0 * syy.T[None, :, None, :] * p[:, :, None, None]
            out += 2.0 * sxx.T[:, None, :, None] * p[:, :, None, None]
            out += ss * (p ** 2)[:, :, None, None]
            return out
        if self.order == 2 and self.l == 1:
            return ss.copy()
        # order == 2, l == 2
        sxy = np.einsum("und,vmd->nmuv", SX, SY)             # sum_r l_tr(x) l_t'r(y)
        cross = np.einsum("uns,nd,vmd,ms->nmuv", SX, X, SY, Y)  # sum_{r,s} l_ts(x) l_t'r(y) x_r y_s
        out = np.empty((n, m, self.T, self.T))
        out[:] = 4.0 * d
        out += 4.0 * syy.T[None, :, None, :]
        out += 4.0 * sxx.T[:, None, :, None]
        out += 2.0 * sxy * p[:, :, None, None]
        out += 2.0 * cross
        return out

    def with_B(self, B):
        return PolynomialSteinKernel(self.score_fns, B, c=self.c, l=self.l, order=self.order)


def gram(kernel: SteinKernel, X, Y=None, SX=None, SY=None) -> np.ndarray:
    """Block Gram matrix of K0 evaluations, shape (n*T, m*T).

    Point-major block layout (point i's T rows are contiguous), matching the
    task-major flat ordering of datasets.  With ``Y=None`` the matrix is
    evaluated on (X, X) and symmetrised exactly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    same = Y is None
    Yv = X if same else np.atleast_2d(np.asarray(Y, dtype=float))
    SYv = SX if same else SY
    tens = kernel(X, Yv, SX, SYv)
    n, m, T, _ = tens.shape
    G = tens.transpose(0, 2, 1, 3).reshape(n * T, m * T)
    if same:
        G = 0.5 * (G + G.T)
    return G


@dataclass(frozen=True)
class DiagnosticRow:
    task: int
    mean_sq_score: float
    max_abs_kernel: float
    max_grad_norm: float
    heavy_tail: bool


@dataclass(frozen=True)
class DiagnosticReport:
    rows: tuple[DiagnosticRow, ...]
    warnings: tuple[str, ...]


def integrability_diagnostic(kernel: SteinKernel, dataset: Dataset,
                             max_points: int = 256) -> DiagnosticReport:
    """Empirical check of the square-integrability conditions.

    Reports the mean squared score norm per task and the largest kernel /
    base-gradient magnitudes on (a subsample of) the dataset.  Heavy-tailed
    score second moments (top decile carrying > 90% of the sum) produce a
    warning, never a failure: the conditions are advisory.
    """
    if dataset.N == 0:
        raise ValueError("dataset is empty")
    P = dataset.points[:max_points]
    SP = kernel.scores_at(P)
    tens = kernel(P, P, SP, SP)
    gnorm = float(np.max(np.linalg.norm(kernel.base.grad_x(P, P), axis=-1)))
    rows, warns = [], []
    for t in range(kernel.T):
        sq = np.sum(kernel.score_fns[min(t, len(kernel.score_fns) - 1)](dataset.points) ** 2,
                    axis=1)
        mean_sq = float(sq.mean())
        srt = np.sort(sq)
        top = srt[int(np.floor(0.9 * sq.size)):]
        heavy = bool(sq.sum() > 0 and top.sum() > 0.9 * sq.sum())
        if heavy:
            warns.append(
                f"task {t}: top decile of ||score||^2 carries "
                f"{100.0 * top.sum() / sq.sum():.1f}% of the sum; second moment may be heavy-tailed"
            )
        rows.append(DiagnosticRow(
            task=t,
            mean_sq_score=mean_sq,
            max_abs_kernel=float(np.max(np.abs(tens[:, :, t, :]))),
            max_grad_norm=gnorm,
            heavy_tail=heavy,
        ))
    return DiagnosticReport(rows=tuple(rows), warnings=tuple(warns))
