"""Vector-valued control variates via matrix-valued Stein reproducing kernels.

Jointly reduces the Monte Carlo variance of several related integration
tasks using only score-function evaluations of the targets.
"""

from .kernels import (BaseKernel, Polynomial, PreconditionedSE, Product,
                      SquaredExponential, product_se)
from .models import (VvcvModel, estimate_beta, estimate_split, objective_iid,
                     objective_mcmc, objective_with_B, optimal_beta)
from .scores import ScoreFn, gaussian_score, lognormal_prior_score, power_posterior_score
from .solvers import (Adam, GramSystem, NumericalError, OptimConfig,
                      build_gram_system, fit_convex_B_ladder, fit_exact_coordinate,
                      fit_exact_joint, fit_sgd_fixed_B, fit_sgd_learn_B, solve_exact)
from .stein import (PolynomialSteinKernel, ScalarSteinKernel, SecondOrderSteinKernel,
                    SeparableSteinKernel, SharedSteinKernel, SteinKernel,
                    TaskCovariance, gram, integrability_diagnostic)
from .tasks import (Dataset, IntegrationTask, TaskSet, build_dataset,
                    dataset_from_arrays, gaussian_sampler)
from .tuning import TuneConfig, neg_log_marginal, tune

__version__ = "0.1.0"

__all__ = [
    "ScoreFn", "gaussian_score", "lognormal_prior_score", "power_posterior_score",
    "IntegrationTask", "TaskSet", "Dataset", "build_dataset", "dataset_from_arrays",
    "gaussian_sampler",
    "BaseKernel", "Polynomial", "SquaredExponential", "PreconditionedSE", "Product",
    "product_se",
    "SteinKernel", "ScalarSteinKernel", "SeparableSteinKernel", "SharedSteinKernel",
    "SecondOrderSteinKernel", "PolynomialSteinKernel", "TaskCovariance", "gram",
    "integrability_diagnostic",
    "VvcvModel", "objective_iid", "objective_mcmc", "objective_with_B",
    "optimal_beta", "estimate_split", "estimate_beta",
    "GramSystem", "OptimConfig", "Adam", "NumericalError", "build_gram_system",
    "solve_exact", "fit_exact_coordinate", "fit_exact_joint", "fit_sgd_fixed_B", "fit_sgd_learn_B",
    "fit_convex_B_ladder",
    "TuneConfig", "neg_log_marginal", "tune",
]
