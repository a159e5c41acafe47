import numpy as np
import pytest

from asyncopt import CsrMatrix, Dataset, make_dual_svm, make_erm
from asyncopt.cli import synth_dataset


@pytest.fixture(scope="session")
def ls_problem():
    """50-dim least squares (NC quadratic), full-rank design."""
    data = synth_dataset(100, 50, 1.0, None, seed=1)
    return make_erm(data, "squared", lam=0.0), data


@pytest.fixture(scope="session")
def ridge_problem():
    """Strongly convex ridge (L2 weight in the nonsmooth part)."""
    data = synth_dataset(80, 40, 1.0, None, seed=2)
    return make_erm(data, "squared", lam=1e-2), data


@pytest.fixture(scope="session")
def logistic_problem():
    data = synth_dataset(60, 25, 1.0, None, seed=3)
    return make_erm(data, "logistic", lam=1e-2), data


@pytest.fixture(scope="session")
def svm_toy():
    """Small normalized classification set and its dual problem."""
    data = synth_dataset(36, 12, 1.0, None, seed=4, normalize=True)
    return make_dual_svm(data, lam=1.0 / 36)


def least_squares_optimum(problem, data):
    """Independent optimum for (1/2n)||Ax-b||^2 (+ lam/2 ||x||^2)."""
    A = data.features.to_dense()
    b = data.labels
    n = data.n
    lam = problem.nonsmooth.mu
    H = A.T @ A / n + lam * np.eye(A.shape[1])
    x_star = np.linalg.solve(H, A.T @ b / n)
    return x_star, problem.objective(x_star)


def tiny_dataset(rows):
    """Explicit dense dataset for hand-computed examples."""
    dense, labels = rows
    return Dataset(features=CsrMatrix.from_dense(np.asarray(dense, dtype=float)),
                   labels=np.asarray(labels, dtype=float))
