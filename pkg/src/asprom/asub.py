"""Active subspaces of the design space.

Two constructions are provided. The classical one compresses gradients
sampled by Latin Hypercube Sampling; the alternative one compresses the
starting point and the increments of an optimization trajectory on a cheap
auxiliary problem.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_vector
from .exceptions import DimensionMismatch, InvalidParameter, OptimizerFailed
from .manifolds import truncate_svd

__all__ = [
    "AsMethod",
    "AsBasis",
    "GradientSnapshotSet",
    "IncrementSnapshotSet",
    "classical_sample_count",
    "latin_hypercube",
    "build_classical_as",
    "build_alternative_as",
    "lift",
    "ActiveSubspace",
]


class AsMethod(enum.Enum):
    NONE = "none"
    CLASSICAL = "classical"
    ALTERNATIVE = "alternative"


@dataclass(frozen=True)
class AsBasis:
    """Orthonormal basis ``V_mu`` with ``mu ~ V_mu @ mu_r``."""

    V_mu: np.ndarray
    singular_values: np.ndarray
    method: AsMethod

    @property
    def n_G(self):
        return self.V_mu.shape[1]

    @property
    def dim(self):
        return self.V_mu.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.ones(dim), AsMethod.NONE)

    def lift(self, mu_r):
        return lift(self, mu_r)

    def project(self, mu):
        mu = as_vector(mu, "mu", size=self.dim)
        return self.V_mu.T @ mu

    def to_dict(self):
        return {
            "method": self.method.value,
            "V_mu": self.V_mu.tolist(),
            "singular_values": self.singular_values.tolist(),
        }


@dataclass
class GradientSnapshotSet:
    points: List[np.ndarray]
    gradients: np.ndarray


@dataclass
class IncrementSnapshotSet:
    """Start point and optimizer increments; ``complete`` is False after a failed run."""

    mu0: np.ndarray
    increments: np.ndarray
    trajectory: List[np.ndarray]
    complete: bool = True
    status: str = ""

    @property
    def matrix(self):
        return np.column_stack([self.mu0, self.increments])


def classical_sample_count(alpha, beta, dim):
    """Number of gradient samples ``ceil(alpha * beta * log10(dim))``."""
    if not (alpha > 0 and beta > 0):
        raise InvalidParameter("alpha and beta must be positive")
    if int(dim) != dim or dim < 2:
        raise InvalidParameter("dim must be an integer >= 2")
    value = alpha * beta * math.log10(dim)
    # guard against products like 16.000000000000004
    return int(math.ceil(value - 1e-9 * max(1.0, value)))


def latin_hypercube(space, n, seed):
    """``n`` seeded LHS points in the design box, one per row."""
    if not np.all(np.isfinite(space.lower)) or np.any(np.abs(space.lower) >= 1e29) \
            or np.any(np.abs(space.upper) >= 1e29):
        raise InvalidParameter("Latin Hypercube Sampling needs a bounded design box")
    unit = qmc.LatinHypercube(d=space.dim, seed=np.random.default_rng(seed)).random(n)
    return qmc.scale(unit, space.lower, space.upper)


def _basis_from(snapshots, tolerance, n_override, method):
    if n_override is not None:
        full = truncate_svd(snapshots, 0.0)
        if not 1 <= n_override <= full.kept_dim:
            raise InvalidParameter(
                f"dimension override {n_override} outside [1, {full.kept_dim}] (snapshot rank)")
        return AsBasis(full.basis[:, :n_override].copy(), full.singular_values, method)
    res = truncate_svd(snapshots, tolerance)
    return AsBasis(res.basis, res.singular_values, method)


def build_classical_as(objective, space, alpha, beta, tolerance=1e-4, seed=0, n_override=None):
    """Compress gradients at ``N_S`` LHS points.

    Parameters
    ----------
    objective : callable
        ``objective(mu) -> (value, gradient)``.

    Returns
    -------
    (AsBasis, GradientSnapshotSet)
    """
    n_s = classical_sample_count(alpha, beta, space.dim)
    points = latin_hypercube(space, n_s, seed)
    grads = np.column_stack([np.asarray(objective(p)[1], dtype=float) for p in points])
    basis = _basis_from(grads, tolerance, n_override, AsMethod.CLASSICAL)
    return basis, GradientSnapshotSet(points=[p.copy() for p in points], gradients=grads)


def build_alternative_as(solve, mu0, tolerance=1e-4, n_override=None):
    """Compress ``[mu0, dmu^0, dmu^1, ...]`` from an auxiliary optimization run.

    Parameters
    ----------
    solve : callable
        ``solve(mu0) -> RunRecord``. A failure raising ``OptimizerFailed``
        with a partial record still yields a basis, flagged incomplete.

    Returns
    -------
    (AsBasis, IncrementSnapshotSet)
    """
    mu0 = as_vector(mu0, "mu0")
    complete = True
    try:
        record = solve(mu0)
        status = record.status.value if record.status is not None else ""
    except OptimizerFailed as exc:
        if exc.record is None or not exc.record.iterates:
            raise
        record, complete, status = exc.record, False, f"FAILED: {exc}"
    snaps = IncrementSnapshotSet(
        mu0=mu0.copy(), increments=record.increments,
        trajectory=[x.copy() for x in record.iterates],
        complete=complete, status=status,
    )
    basis = _basis_from(snaps.matrix, tolerance, n_override, AsMethod.ALTERNATIVE)
    return basis, snaps


def lift(basis, mu_r):
    """Full-space point ``V_mu @ mu_r`` (no bound check)."""
    mu_r = as_vector(mu_r, "mu_r")
    if mu_r.size != basis.n_G:
        raise DimensionMismatch(f"mu_r has length {mu_r.size}, expected {basis.n_G}")
    return basis.V_mu @ mu_r


class ActiveSubspace(TransformerMixin, BaseEstimator):
    """Estimator wrapper: fit on snapshot rows, transform to AS coordinates.

    Parameters
    ----------
    tolerance : float
        Tail-energy tolerance for the dimension rule.
    n_components : int, optional
        Explicit dimension; overrides ``tolerance``.

    Attributes
    ----------
    components_ : ndarray of shape (n_features, n_components_)
    singular_values_ : ndarray
    """

    def __init__(self, tolerance=1e-4, n_components=None):
        self.tolerance = tolerance
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        basis = _basis_from(X.T, self.tolerance, self.n_components, AsMethod.CLASSICAL)
        self.components_ = basis.V_mu
        self.singular_values_ = basis.singular_values
        self.n_components_ = basis.n_G
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.components_

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        return X @ self.components_.T

    def as_basis(self):
        check_is_fitted(self, "components_")
        return AsBasis(self.components_, self.singular_values_, AsMethod.CLASSICAL)
