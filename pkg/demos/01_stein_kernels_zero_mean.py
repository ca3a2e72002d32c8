"""Matrix-valued Stein kernels and the zero-mean identity.

A Stein kernel K0 is built from a scalar base kernel, the score functions
of the target distributions, and a task covariance B.  Its defining
property: for every fixed y and every pair of tasks (t, t'), the entry
(K0(x, y))_{tt'} has mean zero when x is drawn from the t-th target.  That
is what makes every function in its span a usable control variate.
"""

import numpy as np

from vvcv import (PolynomialSteinKernel, ScalarSteinKernel, SeparableSteinKernel,
                  SharedSteinKernel, SquaredExponential, gaussian_score)

rng = np.random.default_rng(0)

# Two related targets: a standard normal and a slightly wider one.
narrow = gaussian_score(0.0, 1.0)
wide = gaussian_score(0.0, 1.25)
B = np.array([[1.0, 0.1], [0.1, 1.0]])

kernels = {
    "scalar k0 (SE base)": ScalarSteinKernel(SquaredExponential(1.0), narrow),
    "matrix K0, distinct targets": SeparableSteinKernel(
        SquaredExponential(1.0), (narrow, wide), B),
    "matrix K0, one shared target": SharedSteinKernel(
        SquaredExponential(1.0), narrow, B),
    "polynomial closed form (l=2)": PolynomialSteinKernel(
        (narrow, wide), B, c=1.0, l=2, order=1),
}

n = 50_000
samples = {0: rng.standard_normal((n, 1)), 1: np.sqrt(1.25) * rng.standard_normal((n, 1))}
y = np.array([[0.7]])

print(f"Monte Carlo check of E_x~Pi_t[(K0(x, y))_tt'] with n={n}, y={y[0, 0]}")
for name, kernel in kernels.items():
    print(f"\n{name}:")
    for t in range(kernel.T):
        dist = t if kernel.T > 1 and name.find("shared") < 0 else 0
        tens = kernel(samples[dist], y)
        for u in range(kernel.T):
            vals = tens[:, 0, t, u]
            se = vals.std(ddof=1) / np.sqrt(n)
            print(f"  (t={t + 1}, t'={u + 1}): mean {vals.mean():+9.5f}"
                  f"  (4 SE = {4 * se:.5f})")

# A single kernel evaluation is a TxT block; swapping the arguments
# transposes it.
k = kernels["matrix K0, distinct targets"]
x1, x2 = np.array([[0.3]]), np.array([[-1.1]])
block = k(x1, x2)[0, 0]
print("\nK0(x1, x2) =\n", block.round(5))
print("K0(x2, x1)^T =\n", k(x2, x1)[0, 0].T.round(5))
