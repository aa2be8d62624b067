"""Interpolation of reduced operator tuples in active-subspace coordinates.

Each block is mapped to the tangent space at the reference entry with the
logarithm of its manifold, the tangent matrices are interpolated entry-wise
by radial basis functions, and the result is mapped back with the
exponential. Derivatives of the interpolant chain the RBF gradient through
the Frechet derivative of ``expm``.
"""

import enum

import numpy as np
import scipy.linalg as la
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_vector, symmetrize
from .exceptions import (
    DimensionMismatch,
    EmptyDatabase,
    InconsistentDatabase,
    SingularKernelMatrix,
)
from .manifolds import Manifold, expm_frechet_block, manifold_log, spd_sqrt
from .rom import PromTuple

__all__ = [
    "Kernel",
    "RBFInterpolator",
    "BLOCK_MANIFOLDS",
    "interpolate_block",
    "TupleInterpolator",
    "interpolate_tuple",
    "tuple_sensitivities",
]

COND_LIMIT = 1e14


class Kernel(enum.Enum):
    THIN_PLATE = "thin_plate"
    GAUSSIAN = "gaussian"


BLOCK_MANIFOLDS = {
    "A_r": Manifold.GENERAL_LINEAR,
    "H_r": Manifold.GENERAL_LINEAR,
    "R_r": Manifold.EUCLIDEAN,
    "G_r": Manifold.EUCLIDEAN,
    "P_r": Manifold.EUCLIDEAN,
    "D_r": Manifold.SPD,
    "Omega2_r": Manifold.SPD,
}


def _tps(r):
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


class RBFInterpolator(RegressorMixin, BaseEstimator):
    """Scattered-data RBF interpolant with vector values.

    The thin-plate kernel ``r^2 log r`` carries a linear polynomial tail
    written in coordinates of the affine hull of the centers, so affine data
    are reproduced exactly and collinear or coplanar centers stay solvable.
    The Gaussian kernel ``exp(-(shape r)^2)`` has no tail.

    Parameters
    ----------
    kernel : {"thin_plate", "gaussian"}
    shape : float
        Gaussian shape parameter.
    regularization : float
        Ridge added to the kernel diagonal, relative to its largest entry.
    """

    def __init__(self, kernel="thin_plate", shape=1.0, regularization=1e-12):
        self.kernel = kernel
        self.shape = shape
        self.regularization = regularization

    def _phi(self, r):
        if Kernel(self.kernel) is Kernel.THIN_PLATE:
            return _tps(r)
        return np.exp(-(self.shape * r) ** 2)

    def _dphi_over_r(self, r):
        """``phi'(r) / r``, finite at ``r = 0``."""
        if Kernel(self.kernel) is Kernel.THIN_PLATE:
            out = np.zeros_like(r)
            nz = r > 0
            out[nz] = 2.0 * np.log(r[nz]) + 1.0
            return out
        return -2.0 * self.shape**2 * np.exp(-(self.shape * r) ** 2)

    def _tail(self, x):
        if not self.tail_dim_:
            return np.zeros((x.shape[0], 0))
        z = (x - self.center_) @ self.hull_
        return np.hstack([np.ones((x.shape[0], 1)), z])

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=float)
        self.single_output_ = y.ndim == 1
        y = y.reshape(X.shape[0], -1)
        n, d = X.shape
        self.centers_ = X.copy()
        self.n_features_in_ = d
        if n == 1:
            self.weights_ = np.zeros((1, y.shape[1]))
            self.coef_ = y.copy()
            self.tail_dim_ = 1
            self.center_ = X[0].copy()
            self.hull_ = np.zeros((d, 0))
            return self

        self.center_ = X.mean(axis=0)
        if Kernel(self.kernel) is Kernel.THIN_PLATE:
            u, s, _ = la.svd((X - self.center_).T, full_matrices=False)
            rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
            self.hull_ = u[:, :rank]
            self.tail_dim_ = rank + 1
        else:
            self.hull_ = np.zeros((d, 0))
            self.tail_dim_ = 0

        dist = la.norm(X[:, None, :] - X[None, :, :], axis=2)
        phi = self._phi(dist)
        ridge = self.regularization * max(1.0, float(np.max(np.abs(phi))))
        phi = phi + ridge * np.eye(n)
        p = self._tail(X)
        k = p.shape[1]
        system = np.block([[phi, p], [p.T, np.zeros((k, k))]])
        if np.linalg.cond(system) > COND_LIMIT:
            raise SingularKernelMatrix("RBF system is singular (duplicate or degenerate centers?)")
        rhs = np.vstack([y, np.zeros((k, y.shape[1]))])
        sol = la.solve(system, rhs)
        self.weights_ = sol[:n]
        self.coef_ = sol[n:]
        return self

    def _check_query(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(np.atleast_2d(X))
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict(self, X):
        X = self._check_query(X)
        if self.centers_.shape[0] == 1:
            out = np.repeat(self.coef_, X.shape[0], axis=0)
        else:
            dist = la.norm(X[:, None, :] - self.centers_[None, :, :], axis=2)
            out = self._phi(dist) @ self.weights_ + self._tail(X) @ self.coef_
        return out[:, 0] if self.single_output_ else out

    def gradient(self, x):
        """Jacobian of the interpolant at one point, shape ``(n_features, n_outputs)``."""
        x = self._check_query(x)[0]
        n_out = self.weights_.shape[1]
        if self.centers_.shape[0] == 1:
            return np.zeros((self.n_features_in_, n_out))
        diff = x[None, :] - self.centers_
        r = la.norm(diff, axis=1)
        grad = (diff * self._dphi_over_r(r)[:, None]).T @ self.weights_
        if self.tail_dim_:
            grad = grad + self.hull_ @ self.coef_[1:]
        return grad


def _log(kind, base, x):
    g = manifold_log(kind, base, x)
    return symmetrize(g) if kind is Manifold.SPD else g


def _exp_and_derivative(kind, base, gamma, dgammas, base_sqrt=None):
    """Exponential map at ``base`` and its derivatives along ``dgammas``."""
    if kind is Manifold.EUCLIDEAN:
        return base + gamma, list(dgammas)
    if kind is Manifold.GENERAL_LINEAR:
        value = la.expm(gamma) @ base
        return value, [expm_frechet_block(gamma, dg) @ base for dg in dgammas]
    xs = spd_sqrt(base) if base_sqrt is None else base_sqrt
    gamma = symmetrize(gamma)
    value = symmetrize(xs @ la.expm(gamma) @ xs)
    derivs = [symmetrize(xs @ expm_frechet_block(gamma, symmetrize(dg)) @ xs) for dg in dgammas]
    return value, derivs


def interpolate_block(values, kind, ref_index, centers, query, kernel="thin_plate",
                      shape=1.0, regularization=1e-12):
    """Interpolate one matrix block on its manifold at ``query``.

    Parameters
    ----------
    values : sequence of ndarray
        Block values ``X_j`` at the ``centers``.
    kind : Manifold
    ref_index : int
        Entry used as the tangent-space base point.
    centers : (N, n) array_like
    query : (n,) array_like
    """
    kind = Manifold(kind)
    if len(values) == 0:
        raise EmptyDatabase("no block values to interpolate")
    if len(values) == 1:
        return np.array(values[0], dtype=float)
    base = np.asarray(values[ref_index], dtype=float)
    logs = np.stack([_log(kind, base, np.asarray(x, dtype=float)).ravel() for x in values])
    rbf = RBFInterpolator(kernel, shape, regularization).fit(np.asarray(centers, dtype=float), logs)
    gamma = rbf.predict(np.atleast_2d(query))[0].reshape(base.shape)
    return _exp_and_derivative(kind, base, gamma, [])[0]


def _db_parts(db):
    if not getattr(db, "entries", None):
        raise EmptyDatabase("database has no entries")
    if not getattr(db, "consistency_applied", False):
        raise InconsistentDatabase("consistency has not been enforced on the database")
    centers = np.vstack([e.mu_r for e in db.entries])
    return centers, [e.tuple for e in db.entries], db.ref_index


class TupleInterpolator(BaseEstimator):
    """Block-wise manifold interpolation of reduced tuples.

    ``fit`` takes the database (or centers, tuples and a reference index),
    computes all tangent-space logarithms once and solves a single RBF
    system with one right-hand side per tangent entry. ``predict`` returns
    the interpolated :class:`PromTuple`; ``sensitivities`` its derivatives
    with respect to each generalized coordinate.
    """

    def __init__(self, kernel="thin_plate", shape=1.0, regularization=1e-12, manifolds=None):
        self.kernel = kernel
        self.shape = shape
        self.regularization = regularization
        self.manifolds = manifolds

    def fit(self, db=None, centers=None, tuples=None, ref_index=0):
        if db is not None:
            centers, tuples, ref_index = _db_parts(db)
        if not tuples:
            raise EmptyDatabase("no tuples to interpolate")
        centers = check_array(np.atleast_2d(np.asarray(centers, dtype=float)))
        if centers.shape[0] != len(tuples):
            raise DimensionMismatch("one center per tuple required")
        kinds = dict(BLOCK_MANIFOLDS)
        kinds.update({k: Manifold(v) for k, v in (self.manifolds or {}).items()})
        self.kinds_ = kinds
        self.ref_index_ = int(ref_index)
        ref = tuples[self.ref_index_].blocks()
        self.base_ = {k: np.array(v) for k, v in ref.items()}
        self.base_sqrt_ = {k: spd_sqrt(v) for k, v in self.base_.items()
                           if kinds[k] is Manifold.SPD}
        self.shapes_ = {k: v.shape for k, v in ref.items()}
        self.n_features_in_ = centers.shape[1]
        self.nf_, self.ns_ = tuples[0].nf, tuples[0].ns
        cols, self.slices_ = [], {}
        start = 0
        for name in ref:
            block_logs = np.stack([_log(kinds[name], self.base_[name], t.blocks()[name]).ravel()
                                   for t in tuples])
            self.slices_[name] = slice(start, start + block_logs.shape[1])
            start += block_logs.shape[1]
            cols.append(block_logs)
        self.rbf_ = RBFInterpolator(self.kernel, self.shape, self.regularization).fit(
            centers, np.hstack(cols))
        self.constant_ = len(tuples) == 1
        self.ref_tuple_ = tuples[self.ref_index_]
        return self

    def _gamma(self, query):
        check_is_fitted(self, "rbf_")
        q = as_vector(query, "query", size=self.n_features_in_)
        return q, self.rbf_.predict(q[None, :])[0]

    def predict_blocks(self, query, with_derivatives=False):
        q, flat = self._gamma(query)
        grads = self.rbf_.gradient(q) if with_derivatives else None
        blocks, derivs = {}, {}
        for name, sl in self.slices_.items():
            shape = self.shapes_[name]
            gamma = flat[sl].reshape(shape)
            dg = [grads[j, sl].reshape(shape) for j in range(q.size)] if with_derivatives else []
            value, d = _exp_and_derivative(self.kinds_[name], self.base_[name], gamma, dg,
                                           self.base_sqrt_.get(name))
            blocks[name] = value
            derivs[name] = d
        return (blocks, derivs) if with_derivatives else blocks

    def predict(self, query):
        if self.constant_:
            check_is_fitted(self, "rbf_")
            as_vector(query, "query", size=self.n_features_in_)
            return self.ref_tuple_
        return PromTuple.from_blocks(**self.predict_blocks(query))

    def sensitivities(self, query):
        """``[(dcalA/dmu_r[j], dcalB/dmu_r[j]) for j in range(n_G)]``."""
        blocks, derivs = self.predict_blocks(query, with_derivatives=True)
        nf, ns = self.nf_, self.ns_
        out = []
        for j in range(self.n_features_in_):
            d = {name: derivs[name][j] for name in blocks}
            t = PromTuple.from_blocks(**d)
            # strip the constant identity blocks, which have zero derivative
            da = t.calA.copy()
            da[nf:, nf:] = 0.0
            db = t.calB.copy()
            db[nf + ns:, nf:nf + ns] = 0.0
            out.append((da, db))
        return out


def interpolate_tuple(db, query, **kwargs):
    """Interpolated reduced tuple at ``query`` (AS coordinates)."""
    return TupleInterpolator(**kwargs).fit(db).predict(query)


def tuple_sensitivities(db, query, **kwargs):
    """Derivatives of the interpolated tuple with respect to each coordinate."""
    return TupleInterpolator(**kwargs).fit(db).sensitivities(query)
