"""Integration tasks, task sets, and sampled datasets.

A dataset flattens the per-task samples into one task-major index (all of
task 1's points, then task 2's, ...), which fixes the block layout used by
the Gram system assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .scores import ScoreFn

__all__ = [
    "IntegrationTask",
    "TaskSet",
    "Dataset",
    "build_dataset",
    "dataset_from_arrays",
    "gaussian_sampler",
]

Sampler = Callable[[np.random.Generator, int], np.ndarray]

_MASK64 = (1 << 64) - 1


def gaussian_sampler(mean, variances) -> Sampler:
    """Sampler for an axis-aligned Gaussian with given marginal variances."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.sqrt(np.atleast_1d(np.asarray(variances, dtype=float)))
    if np.any(sd <= 0.0):
        raise ValueError("variances must be strictly positive")

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return mean + sd * rng.standard_normal((n, mean.size))

    return sample


@dataclass(frozen=True)
class IntegrationTask:
    """One integrand/target pair with its sample budget."""

    integrand: Callable[[np.ndarray], np.ndarray]  # (n, d) -> (n,)
    score: ScoreFn
    sampler: Sampler
    m: int
    name: str = ""

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"sample count m must be >= 1, got {self.m}")


@dataclass(frozen=True)
class TaskSet:
    """Ordered bundle of integration tasks sharing one input dimension."""

    tasks: tuple[IntegrationTask, ...]

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ValueError("a TaskSet needs at least one task")
        dims = {t.score.dim for t in self.tasks}
        if len(dims) != 1:
            raise ValueError(f"all tasks must share one input dimension, got {sorted(dims)}")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def dim(self) -> int:
        return self.tasks[0].score.dim

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(t.m for t in self.tasks)

    @property
    def scores(self) -> tuple[ScoreFn, ...]:
        return tuple(t.score for t in self.tasks)

    def single(self, t: int) -> "TaskSet":
        """A one-task view of task ``t`` (preserves that task's identity)."""
        return TaskSet(tasks=(self.tasks[t],))


class Dataset:
    """Sampled points and integrand values, flat-indexed task-major.

    Immutable after construction; the per-task score table is filled lazily
    and cached (each point's score is reused many times in Gram assembly).
    """

    def __init__(self, taskset: TaskSet, points_per_task: Sequence[np.ndarray],
                 values_per_task: Sequence[np.ndarray]):
        if len(points_per_task) != taskset.T:
            raise ValueError("need one point block per task")
        pts, vals, task_of = [], [], []
        for t, (X, f) in enumerate(zip(points_per_task, values_per_task)):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            f = np.asarray(f, dtype=float).ravel()
            if X.shape[0] != f.shape[0]:
                raise ValueError(f"task {t}: {X.shape[0]} points but {f.shape[0]} values")
            if X.shape[0] < 1:
                raise ValueError(f"task {t}: empty task")
            if X.shape[1] != taskset.dim:
                raise ValueError(
                    f"task {t}: points have dimension {X.shape[1]}, expected {taskset.dim}"
                )
            if not np.all(np.isfinite(X)):
                raise ValueError(f"task {t}: non-finite sample point")
            if not np.all(np.isfinite(f)):
                j = int(np.flatnonzero(~np.isfinite(f))[0])
                raise ValueError(f"non-finite integrand value at (t={t}, j={j})")
            pts.append(X)
            vals.append(f)
            task_of.append(np.full(X.shape[0], t, dtype=np.intp))
        self.taskset = taskset
        self.points: np.ndarray = np.vstack(pts)
        self.values: np.ndarray = np.concatenate(vals)
        self.task_of: np.ndarray = np.concatenate(task_of)
        counts = np.array([len(v) for v in vals], dtype=np.intp)
        self.offsets: np.ndarray = np.concatenate([[0], np.cumsum(counts)])
        self.points.setflags(write=False)
        self.values.setflags(write=False)
        self.task_of.setflags(write=False)
        self._score_table: np.ndarray | None = None

    # -- flat index bookkeeping -------------------------------------------

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def T(self) -> int:
        return self.taskset.T

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(int(self.offsets[t + 1] - self.offsets[t]) for t in range(self.T))

    def flatten(self, t: int, j: int) -> int:
        if not 0 <= t < self.T:
            raise IndexError(f"task index {t} out of range")
        if not 0 <= j < self.offsets[t + 1] - self.offsets[t]:
            raise IndexError(f"sample index {j} out of range for task {t}")
        return int(self.offsets[t] + j)

    def unflatten(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.N:
            raise IndexError(f"flat index {i} out of range")
        t = int(np.searchsorted(self.offsets, i, side="right") - 1)
        return t, int(i - self.offsets[t])

    def task_slice(self, t: int) -> slice:
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))

    def points_of(self, t: int) -> np.ndarray:
        return self.points[self.task_slice(t)]

    def values_of(self, t: int) -> np.ndarray:
        return self.values[self.task_slice(t)]

    def task_means(self) -> np.ndarray:
        """Plain per-task Monte Carlo means of the integrand values."""
        return np.array([self.values_of(t).mean() for t in range(self.T)])

    # -- score cache -------------------------------------------------------

    def score_table(self) -> np.ndarray:
        """Scores of every task's target at every dataset point, shape (T, N, d).

        Entry [t, i] = grad log pi_t(x_i); needed because the (t, t') kernel
        block evaluates task t's score at points from any task.
        """
        if self._score_table is None:
            table = np.empty((self.T, self.N, self.dim))
            for t, task in enumerate(self.taskset.tasks):
                table[t] = task.score(self.points)
            table.setflags(write=False)
            self._score_table = table
        return self._score_table

    def single_task(self, t: int) -> "Dataset":
        """One-task dataset view (copies the task's block)."""
        return Dataset(self.taskset.single(t), [self.points_of(t)], [self.values_of(t)])


def _task_rng(seed: int, t: int) -> np.random.Generator:
    # Philox is counter-based: stream t depends only on (seed, t), so adding
    # a task never perturbs the draws of existing tasks.
    ss = np.random.SeedSequence([int(seed) & _MASK64, t])
    return np.random.Generator(np.random.Philox(ss))


def build_dataset(taskset: TaskSet, seed: int) -> Dataset:
    """Draw each task's sample from its own substream and evaluate integrands.

    Deterministic given (taskset, seed).
    """
    pts, vals = [], []
    for t, task in enumerate(taskset.tasks):
        X = np.atleast_2d(np.asarray(task.sampler(_task_rng(seed, t), task.m), dtype=float))
        f = np.asarray(task.integrand(X), dtype=float).ravel()
        if f.shape[0] != task.m:
            raise ValueError(f"task {t}: integrand returned {f.shape[0]} values for {task.m} points")
        if not np.all(np.isfinite(f)):
            j = int(np.flatnonzero(~np.isfinite(f))[0])
            raise ValueError(f"non-finite integrand value at (t={t}, j={j})")
        pts.append(X)
        vals.append(f)
    return Dataset(taskset, pts, vals)


def dataset_from_arrays(taskset: TaskSet, points_per_task, values_per_task) -> Dataset:
    """Dataset over externally supplied samples (e.g. MCMC output or files)."""
    return Dataset(taskset, points_per_task, values_per_task)
