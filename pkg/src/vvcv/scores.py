"""Score functions (gradients of log densities) for integration targets.

A score only depends on the density up to its normalising constant, which is
what makes Stein-based control variates applicable to unnormalised targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ScoreFn",
    "gaussian_score",
    "lognormal_prior_score",
    "power_posterior_score",
]


@dataclass(frozen=True)
class ScoreFn:
    """A vectorised score function x -> grad log pi(x).

    ``fn`` maps an ``(n, d)`` array of points to an ``(n, d)`` array of
    scores.  Calls with a single ``(d,)`` point return a ``(d,)`` vector.
    Non-finite outputs raise, naming the offending point.
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = "score"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(
                f"{self.name}: expected points of dimension {self.dim}, got {pts.shape[1]}"
            )
        out = np.asarray(self.fn(pts), dtype=float)
        if out.shape != pts.shape:
            raise ValueError(
                f"{self.name}: score returned shape {out.shape}, expected {pts.shape}"
            )
        if not np.all(np.isfinite(out)):
            bad = np.flatnonzero(~np.isfinite(out).all(axis=1))[0]
            raise ValueError(
                f"{self.name}: non-finite score at point index {bad}: x={pts[bad]!r}"
            )
        return out[0] if single else out


def gaussian_score(mean, variances) -> ScoreFn:
    """Score of a product Gaussian with the given marginal means/variances.

    Returns x -> -(x - mean) / variances elementwise.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    variances = np.atleast_1d(np.asarray(variances, dtype=float))
    if mean.shape != variances.shape:
        if variances.size == 1:
            variances = np.full_like(mean, variances.item())
        elif mean.size == 1:
            mean = np.full_like(variances, mean.item())
        else:
            raise ValueError("mean and variances must have matching lengths")
    if np.any(variances <= 0.0):
        raise ValueError(f"variances must be strictly positive, got {variances!r}")

    def fn(pts: np.ndarray) -> np.ndarray:
        return -(pts - mean) / variances

    return ScoreFn(dim=mean.size, fn=fn, name="gaussian_score")


def lognormal_prior_score(mu: float, sigma: float) -> ScoreFn:
    """Score of a log-normal prior on (0, inf): -1/t - (log t - mu)/(t sigma^2)."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sig2 = float(sigma) ** 2

    def fn(pts: np.ndarray) -> np.ndarray:
        t = pts[:, 0]
        if np.any(t <= 0.0):
            bad = np.flatnonzero(t <= 0.0)[0]
            raise ValueError(
                f"lognormal_prior_score: evaluation point must be > 0, got {t[bad]}"
            )
        return (-1.0 / t - (np.log(t) - mu) / (t * sig2))[:, None]

    return ScoreFn(dim=1, fn=fn, name="lognormal_prior_score")


def power_posterior_score(loglik_grad: ScoreFn, prior_score: ScoreFn, t: float) -> ScoreFn:
    """Score of the tempered posterior: t * grad log p(y|x) + grad log p(x).

    ``t`` interpolates between the prior (t=0) and the posterior (t=1).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"inverse temperature t must lie in [0, 1], got {t}")
    if loglik_grad.dim != prior_score.dim:
        raise ValueError(
            f"dimension mismatch: loglik_grad has d={loglik_grad.dim}, "
            f"prior_score has d={prior_score.dim}"
        )
    if t == 0.0:
        return prior_score

    def fn(pts: np.ndarray) -> np.ndarray:
        return t * loglik_grad(pts) + prior_score(pts)

    return ScoreFn(dim=prior_score.dim, fn=fn, name=f"power_posterior_score(t={t})")
