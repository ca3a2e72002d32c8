"""Scalar base kernels and their analytic derivatives.

Four families: polynomial, squared-exponential, preconditioned
squared-exponential, and products of one-dimensional kernels.  All
derivative formulas are closed-form; finite differences appear only in
tests as oracles.

Lengthscale convention
----------------------
``SquaredExponential(lam_ls)`` is ``exp(-||x-y||^2 / (2 * lam_ls))``: the
``lam_ls`` slot is the *squared* lengthscale.  The preconditioned variant
instead uses ``exp(-||x-y||^2 / (2 * lam**2))`` with ``lam`` a plain
lengthscale.  Both are single free positive scalars to the tuner, but the
conventions differ by a square; keep this in mind when porting
hyperparameter values.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "BaseKernel",
    "SecondPartials",
    "Polynomial",
    "SquaredExponential",
    "PreconditionedSE",
    "Product",
    "product_se",
]


class SecondPartials(NamedTuple):
    """Mixed higher-order partials, each of shape (n, m, d, d) indexed [s, r].

    ``dxx_dy[s, r]``  = d^2/dx_s^2 d/dy_r k
    ``dx_dyy[s, r]``  = d/dx_s d^2/dy_r^2 k
    ``dxx_dyy[s, r]`` = d^2/dx_s^2 d^2/dy_r^2 k
    """

    dxx_dy: np.ndarray
    dx_dyy: np.ndarray
    dxx_dyy: np.ndarray


class BaseKernel:
    """Symmetric positive semi-definite kernel with analytic derivatives.

    All operations are vectorised over point batches: ``X`` is ``(n, d)``,
    ``Y`` is ``(m, d)``, values come back ``(n, m)`` and gradients
    ``(n, m, d)``.
    """

    supports_second_order: bool = True

    def _pair(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: x has d={X.shape[1]}, y has d={Y.shape[1]}")
        self._check_dim(X.shape[1])
        return X, Y

    def _check_dim(self, d: int) -> None:
        pass

    # analytic surface ------------------------------------------------------

    def value(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def grad_y(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def div_xy(self, X, Y) -> np.ndarray:
        """Sum_r d/dx_r d/dy_r k, shape (n, m)."""
        raise NotImplementedError

    def hess_xy(self, X, Y) -> np.ndarray:
        """d/dx_s d/dy_r k as (n, m, d, d), indexed [s, r]."""
        raise NotImplementedError

    def dxx_diag(self, X, Y) -> np.ndarray:
        """Pure second derivatives d^2/dx_s^2 k, shape (n, m, d)."""
        raise NotImplementedError

    def dyy_diag(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def second_partials(self, X, Y) -> SecondPartials:
        raise NotImplementedError

    # hyperparameter surface (for marginal-likelihood tuning) ---------------

    def free_params(self) -> np.ndarray:
        """Unconstrained parameter vector; positive entries are stored as logs."""
        raise NotImplementedError

    def with_free_params(self, v: np.ndarray) -> "BaseKernel":
        raise NotImplementedError


class Polynomial(BaseKernel):
    """k(x, y) = (x'y + c)^l with integer degree l >= 1.

    Degree-dependent factors like l(l-1) are short-circuited before the
    matching power is formed, so l=1 never evaluates 0^(-1).
    """

    def __init__(self, c: float = 1.0, l: int = 1):
        if int(l) != l or l < 1:
            raise ValueError(f"polynomial degree l must be an integer >= 1, got {l}")
        self.c = float(c)
        self.l = int(l)

    def __repr__(self):
        return f"Polynomial(c={self.c}, l={self.l})"

    def _p(self, X, Y):
        return X @ Y.T + self.c

    def value(self, X, Y):
        X, Y = self._pair(X, Y)
        return self._p(X, Y) ** self.l

    def grad_x(self, X, Y):
        X, Y = self._pair(X, Y)
        p = self._p(X, Y)
        return self.l * (p ** (self.l - 1))[:, :, None] * Y[None, :, :]

    def grad_y(self, X, Y):
        X, Y = self._pair(X, Y)
        p = self._p(X, Y)
        return self.l * (p ** (self.l - 1))[:, :, None] * X[:, None, :]

    def div_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        l, d = self.l, X.shape[1]
        p = self._p(X, Y)
        out = d * l * p ** (l - 1)
        if l >= 2:
            out = out + l * (l - 1) * p ** (l - 2) * (X @ Y.T)
        return out

    def hess_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        n, m, d, l = X.shape[0], Y.shape[0], X.shape[1], self.l
        p = self._p(X, Y)
        out = np.zeros((n, m, d, d))
        idx = np.arange(d)
        out[:, :, idx, idx] = (l * p ** (l - 1))[:, :, None]
        if l >= 2:
            # [s, r] += l(l-1) p^(l-2) x_r y_s
            out += (l * (l - 1) * p ** (l - 2))[:, :, None, None] \
                * Y[None, :, :, None] * X[:, None, None, :]
        return out

    def dxx_diag(self, X, Y):
        X, Y = self._pair(X, Y)
        n, m, d, l = X.shape[0], Y.shape[0], X.shape[1], self.l
        if l < 2:
            return np.zeros((n, m, d))
        p = self._p(X, Y)
        return (l * (l - 1) * p ** (l - 2))[:, :, None] * (Y ** 2)[None, :, :]

    def dyy_diag(self, X, Y):
        X, Y = self._pair(X, Y)
        n, m, d, l = X.shape[0], Y.shape[0], X.shape[1], self.l
        if l < 2:
            return np.zeros((n, m, d))
        p = self._p(X, Y)
        return (l * (l - 1) * p ** (l - 2))[:, :, None] * (X ** 2)[:, None, :]

    def second_partials(self, X, Y):
        X, Y = self._pair(X, Y)
        n, m, d, l = X.shape[0], Y.shape[0], X.shape[1], self.l
        p = self._p(X, Y)
        idx = np.arange(d)
        dxx_dy = np.zeros((n, m, d, d))
        dx_dyy = np.zeros((n, m, d, d))
        dxx_dyy = np.zeros((n, m, d, d))
        if l >= 2:
            c2 = l * (l - 1) * p ** (l - 2)  # (n, m)
            # delta_{rs} contributions
            dxx_dy[:, :, idx, idx] = 2.0 * c2[:, :, None] * Y[None, :, :]
            dx_dyy[:, :, idx, idx] = 2.0 * c2[:, :, None] * X[:, None, :]
            dxx_dyy[:, :, idx, idx] = 2.0 * c2[:, :, None]
        if l >= 3:
            c3 = l * (l - 1) * (l - 2) * p ** (l - 3)
            dxx_dy += c3[:, :, None, None] * (Y ** 2)[None, :, :, None] * X[:, None, None, :]
            dx_dyy += c3[:, :, None, None] * Y[None, :, :, None] * (X ** 2)[:, None, None, :]
            xy = X[:, None, None, :] * Y[None, :, :, None]  # [s, r] -> x_r y_s
            diag = np.zeros((n, m, d, d))
            diag[:, :, idx, idx] = xy[:, :, idx, idx]
            dxx_dyy += 4.0 * c3[:, :, None, None] * diag
        if l >= 4:
            c4 = l * (l - 1) * (l - 2) * (l - 3) * p ** (l - 4)
            dxx_dyy += c4[:, :, None, None] * (Y ** 2)[None, :, :, None] * (X ** 2)[:, None, None, :]
        return SecondPartials(dxx_dy, dx_dyy, dxx_dyy)

    def free_params(self):
        return np.array([self.c])

    def with_free_params(self, v):
        return Polynomial(c=float(v[0]), l=self.l)


class SquaredExponential(BaseKernel):
    """k(x, y) = exp(-||x-y||^2 / (2 lam_ls)); lam_ls is the squared lengthscale."""

    def __init__(self, lam_ls: float = 1.0):
        if lam_ls <= 0.0:
            raise ValueError(f"lam_ls must be positive, got {lam_ls}")
        self.lam_ls = float(lam_ls)

    def __repr__(self):
        return f"SquaredExponential(lam_ls={self.lam_ls})"

    def _uk(self, X, Y):
        u = X[:, None, :] - Y[None, :, :]
        k = np.exp(-np.sum(u * u, axis=-1) / (2.0 * self.lam_ls))
        return u, k

    def value(self, X, Y):
        X, Y = self._pair(X, Y)
        return self._uk(X, Y)[1]

    def grad_x(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        return -(u / self.lam_ls) * k[:, :, None]

    def grad_y(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        return (u / self.lam_ls) * k[:, :, None]

    def div_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        lam, d = self.lam_ls, X.shape[1]
        return (d / lam - np.sum(u * u, axis=-1) / lam ** 2) * k

    def hess_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        lam, d = self.lam_ls, X.shape[1]
        out = -(u[:, :, :, None] * u[:, :, None, :]) / lam ** 2  # [s, r] -> -u_s u_r / lam^2
        idx = np.arange(d)
        out[:, :, idx, idx] += 1.0 / lam
        return out * k[:, :, None, None]

    def dxx_diag(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        lam = self.lam_ls
        return (u * u / lam ** 2 - 1.0 / lam) * k[:, :, None]

    dyy_diag = dxx_diag  # k depends on x - y only; both pure seconds coincide

    def second_partials(self, X, Y):
        X, Y = self._pair(X, Y)
        u, k = self._uk(X, Y)
        lam, d = self.lam_ls, X.shape[1]
        idx = np.arange(d)
        us = u[:, :, :, None]  # broadcast slot [s, .]
        ur = u[:, :, None, :]  # broadcast slot [., r]
        A = u * u / lam ** 2 - 1.0 / lam  # (n, m, d): pure second-derivative factor
        dxx_dy = A[:, :, :, None] * ur / lam
        dx_dyy = -A[:, :, None, :] * us / lam
        dxx_dyy = A[:, :, :, None] * A[:, :, None, :]
        delta = np.zeros((u.shape[0], u.shape[1], d, d))
        delta[:, :, idx, idx] = 1.0
        dxx_dy = dxx_dy - 2.0 * delta * us / lam ** 2
        dx_dyy = dx_dyy + 2.0 * delta * ur / lam ** 2
        dxx_dyy = dxx_dyy + delta * (2.0 / lam ** 2) - 4.0 * delta * us * ur / lam ** 3
        kk = k[:, :, None, None]
        return SecondPartials(dxx_dy * kk, dx_dyy * kk, dxx_dyy * kk)

    def free_params(self):
        return np.array([np.log(self.lam_ls)])

    def with_free_params(self, v):
        return SquaredExponential(lam_ls=float(np.exp(v[0])))


class PreconditionedSE(BaseKernel):
    """k(x, y) = exp(-||x-y||^2/(2 lam^2)) / ((1 + a||x||^2)(1 + a||y||^2)).

    Note the plain-lengthscale convention (lam^2 in the exponent), unlike
    ``SquaredExponential``.  Second-order partials are not available: the
    second-order Stein construction rejects this base kernel.
    """

    supports_second_order = False

    def __init__(self, lam: float = 1.0, alpha: float = 0.1):
        if lam <= 0.0 or alpha <= 0.0:
            raise ValueError(f"lam and alpha must be positive, got lam={lam}, alpha={alpha}")
        self.lam = float(lam)
        self.alpha = float(alpha)

    def __repr__(self):
        return f"PreconditionedSE(lam={self.lam}, alpha={self.alpha})"

    def _parts(self, X, Y):
        a = self.alpha
        px = 1.0 / (1.0 + a * np.sum(X * X, axis=1))  # (n,)
        py = 1.0 / (1.0 + a * np.sum(Y * Y, axis=1))  # (m,)
        u = X[:, None, :] - Y[None, :, :]
        e = np.exp(-np.sum(u * u, axis=-1) / (2.0 * self.lam ** 2))
        return px, py, u, px[:, None] * py[None, :] * e

    def value(self, X, Y):
        X, Y = self._pair(X, Y)
        return self._parts(X, Y)[3]

    def _gx_fac(self, X, px, u):
        # -2 a x / (1 + a||x||^2) - (x - y)/lam^2, shape (n, m, d)
        ax = (-2.0 * self.alpha) * X * px[:, None]  # (n, d)
        return ax[:, None, :] - u / self.lam ** 2

    def _gy_fac(self, Y, py, u):
        ay = (-2.0 * self.alpha) * Y * py[:, None]  # (m, d)
        return ay[None, :, :] + u / self.lam ** 2

    def grad_x(self, X, Y):
        X, Y = self._pair(X, Y)
        px, py, u, k = self._parts(X, Y)
        return self._gx_fac(X, px, u) * k[:, :, None]

    def grad_y(self, X, Y):
        X, Y = self._pair(X, Y)
        px, py, u, k = self._parts(X, Y)
        return self._gy_fac(Y, py, u) * k[:, :, None]

    def hess_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        px, py, u, k = self._parts(X, Y)
        gx = self._gx_fac(X, px, u)
        gy = self._gy_fac(Y, py, u)
        d = X.shape[1]
        out = gx[:, :, :, None] * gy[:, :, None, :]
        idx = np.arange(d)
        out[:, :, idx, idx] += 1.0 / self.lam ** 2
        return out * k[:, :, None, None]

    def div_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        px, py, u, k = self._parts(X, Y)
        gx = self._gx_fac(X, px, u)
        gy = self._gy_fac(Y, py, u)
        d = X.shape[1]
        return (np.sum(gx * gy, axis=-1) + d / self.lam ** 2) * k

    def free_params(self):
        return np.array([np.log(self.lam), np.log(self.alpha)])

    def with_free_params(self, v):
        return PreconditionedSE(lam=float(np.exp(v[0])), alpha=float(np.exp(v[1])))


class Product(BaseKernel):
    """Product of one-dimensional kernels, one factor per input coordinate."""

    def __init__(self, factors: Sequence[BaseKernel]):
        factors = tuple(factors)
        if not factors:
            raise ValueError("need at least one factor")
        self.factors = factors
        self.supports_second_order = all(f.supports_second_order for f in factors)

    def __repr__(self):
        return f"Product({list(self.factors)!r})"

    def _check_dim(self, d: int) -> None:
        if d != len(self.factors):
            raise ValueError(
                f"product kernel has {len(self.factors)} factors but points have d={d}"
            )

    def _factor_vals(self, X, Y):
        return [f.value(X[:, [j]], Y[:, [j]]) for j, f in enumerate(self.factors)]

    @staticmethod
    def _prod_except(vals, skip: frozenset) -> np.ndarray:
        out = None
        for j, v in enumerate(vals):
            if j in skip:
                continue
            out = v if out is None else out * v
        if out is None:
            return np.ones_like(vals[0])
        return out

    def value(self, X, Y):
        X, Y = self._pair(X, Y)
        return self._prod_except(self._factor_vals(X, Y), frozenset())

    def grad_x(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        cols = []
        for j, f in enumerate(self.factors):
            gj = f.grad_x(X[:, [j]], Y[:, [j]])[:, :, 0]
            cols.append(gj * self._prod_except(vals, frozenset([j])))
        return np.stack(cols, axis=-1)

    def grad_y(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        cols = []
        for j, f in enumerate(self.factors):
            gj = f.grad_y(X[:, [j]], Y[:, [j]])[:, :, 0]
            cols.append(gj * self._prod_except(vals, frozenset([j])))
        return np.stack(cols, axis=-1)

    def div_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        out = np.zeros_like(vals[0])
        for j, f in enumerate(self.factors):
            dj = f.div_xy(X[:, [j]], Y[:, [j]])
            out += dj * self._prod_except(vals, frozenset([j]))
        return out

    def hess_xy(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        d = len(self.factors)
        n, m = vals[0].shape
        gx = [f.grad_x(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        gy = [f.grad_y(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        out = np.empty((n, m, d, d))
        for s in range(d):
            for r in range(d):
                if s == r:
                    out[:, :, s, r] = self.factors[s].div_xy(X[:, [s]], Y[:, [s]]) \
                        * self._prod_except(vals, frozenset([s]))
                else:
                    out[:, :, s, r] = gx[s] * gy[r] * self._prod_except(vals, frozenset([s, r]))
        return out

    def dxx_diag(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        cols = []
        for j, f in enumerate(self.factors):
            cj = f.dxx_diag(X[:, [j]], Y[:, [j]])[:, :, 0]
            cols.append(cj * self._prod_except(vals, frozenset([j])))
        return np.stack(cols, axis=-1)

    def dyy_diag(self, X, Y):
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        cols = []
        for j, f in enumerate(self.factors):
            cj = f.dyy_diag(X[:, [j]], Y[:, [j]])[:, :, 0]
            cols.append(cj * self._prod_except(vals, frozenset([j])))
        return np.stack(cols, axis=-1)

    def second_partials(self, X, Y):
        if not self.supports_second_order:
            raise ValueError("a factor of this product kernel has no second-order partials")
        X, Y = self._pair(X, Y)
        vals = self._factor_vals(X, Y)
        d = len(self.factors)
        n, m = vals[0].shape
        gx = [f.grad_x(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        gy = [f.grad_y(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        xx = [f.dxx_diag(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        yy = [f.dyy_diag(X[:, [j]], Y[:, [j]])[:, :, 0] for j, f in enumerate(self.factors)]
        own = [f.second_partials(X[:, [j]], Y[:, [j]]) for j, f in enumerate(self.factors)]
        dxx_dy = np.empty((n, m, d, d))
        dx_dyy = np.empty((n, m, d, d))
        dxx_dyy = np.empty((n, m, d, d))
        for s in range(d):
            for r in range(d):
                if s == r:
                    rest = self._prod_except(vals, frozenset([s]))
                    dxx_dy[:, :, s, r] = own[s].dxx_dy[:, :, 0, 0] * rest
                    dx_dyy[:, :, s, r] = own[s].dx_dyy[:, :, 0, 0] * rest
                    dxx_dyy[:, :, s, r] = own[s].dxx_dyy[:, :, 0, 0] * rest
                else:
                    rest = self._prod_except(vals, frozenset([s, r]))
                    dxx_dy[:, :, s, r] = xx[s] * gy[r] * rest
                    dx_dyy[:, :, s, r] = gx[s] * yy[r] * rest
                    dxx_dyy[:, :, s, r] = xx[s] * yy[r] * rest
        return SecondPartials(dxx_dy, dx_dyy, dxx_dyy)

    def free_params(self):
        return np.concatenate([f.free_params() for f in self.factors])

    def with_free_params(self, v):
        v = np.asarray(v, dtype=float)
        out, pos = [], 0
        for f in self.factors:
            w = f.free_params().size
            out.append(f.with_free_params(v[pos:pos + w]))
            pos += w
        if pos != v.size:
            raise ValueError(f"expected {pos} parameters, got {v.size}")
        return Product(out)


def product_se(lengthscales) -> Product:
    """Product of 1-d squared-exponential factors, one squared lengthscale each."""
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    return Product([SquaredExponential(lam_ls=float(l)) for l in ls])
