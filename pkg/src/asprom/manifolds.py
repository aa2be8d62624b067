"""Dense matrix kernels: SVD compression, Procrustes alignment, matrix-manifold
logarithm/exponential maps and a dense nonsymmetric eigensolver.
"""

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as la

from ._validation import (
    as_matrix,
    as_square,
    check_same_shape,
    orthonormality_error,
    symmetrize,
)
from .exceptions import (
    DimensionMismatch,
    LogarithmUndefined,
    NoConvergence,
    NonOrthonormalInput,
    NotOnManifold,
    ZeroMatrix,
)

__all__ = [
    "Manifold",
    "TruncationResult",
    "truncate_svd",
    "procrustes",
    "manifold_log",
    "manifold_exp",
    "expm_frechet_block",
    "spd_sqrt",
    "general_eig",
    "EigResult",
]

RANK_CUTOFF = 1e-14
GL_COND_LIMIT = 1e12
SYM_TOL = 1e-10


class Manifold(enum.Enum):
    """Matrix manifolds used for block-wise interpolation."""

    EUCLIDEAN = "euclidean"
    GENERAL_LINEAR = "general_linear"
    SPD = "spd"


@dataclass(frozen=True)
class TruncationResult:
    basis: np.ndarray
    kept_dim: int
    singular_values: np.ndarray


def _fix_signs(u):
    """Flip columns so that each one's largest-magnitude entry is positive."""
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def truncate_svd(snapshots, tolerance=0.0, max_dim=None):
    r"""Compress a snapshot matrix into an orthonormal basis.

    The retained dimension is the smallest :math:`n` such that the discarded
    energy :math:`\sum_{j>n}\sigma_j^2 / \sum_j \sigma_j^2` is at most
    ``tolerance``. Singular values below ``1e-14 * sigma_1`` count as rank
    deficiency and are excluded from both sums.

    Parameters
    ----------
    snapshots : (m, k) array_like
        Snapshots stored column-wise.
    tolerance : float
        Relative tail-energy tolerance in ``[0, 1]``.
    max_dim : int, optional
        Hard cap on the retained dimension, applied after the energy rule.

    Returns
    -------
    TruncationResult
    """
    s_mat = as_matrix(snapshots, "snapshots")
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    if not np.any(np.abs(s_mat) >= 1e-300):
        raise ZeroMatrix("snapshot matrix is identically zero")

    u, sigma, _ = la.svd(s_mat, full_matrices=False, lapack_driver="gesvd")
    rank = int(np.sum(sigma >= RANK_CUTOFF * sigma[0]))
    if rank == 0:
        raise ZeroMatrix("snapshot matrix has numerically zero rank")
    energy = sigma[:rank] ** 2
    total = energy.sum()
    # tail[n] is the discarded energy ratio when n vectors are kept
    tail = np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]]) / total
    kept = rank
    # slack absorbs round-off in the energy ratios at exact ties
    threshold = tolerance * (1.0 + 1e-12) + 1e-15
    for n in range(1, rank + 1):
        if tail[n] <= threshold:
            kept = n
            break
    if max_dim is not None:
        kept = max(1, min(kept, int(max_dim)))
    basis = _fix_signs(u[:, :kept])
    return TruncationResult(basis=basis, kept_dim=kept, singular_values=sigma[:rank].copy())


def procrustes(reference, other, check_tol=1e-8):
    """Orthogonal matrix ``Q`` minimizing ``||reference - other @ Q||_F``.

    Both inputs must have orthonormal columns. With ``U S Z^T`` the SVD of
    ``other.T @ reference`` the minimizer is ``Q = U Z^T``.
    """
    ref = as_matrix(reference, "reference")
    oth = as_matrix(other, "other")
    check_same_shape(ref, oth, ("reference", "other"))
    for name, m in (("reference", ref), ("other", oth)):
        if orthonormality_error(m) > check_tol:
            raise NonOrthonormalInput(f"{name} does not have orthonormal columns")
    u, _, zt = la.svd(oth.T @ ref)
    return u @ zt


# Manifold membership -------------------------------------------------------
def _check_spd(x, name):
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.max(np.abs(x - x.T)) > SYM_TOL * scale:
        raise NotOnManifold(f"{name} is not symmetric")
    w = la.eigvalsh(symmetrize(x))
    if w[0] <= 0:
        raise NotOnManifold(f"{name} is not positive definite (min eigenvalue {w[0]:.3e})")


def _check_gl(x, name):
    if np.linalg.cond(x) >= GL_COND_LIMIT:
        raise NotOnManifold(f"{name} is singular or too ill-conditioned")


def spd_sqrt(x, inverse=False):
    """Symmetric square root (or inverse square root) of an SPD matrix."""
    x = symmetrize(as_square(x))
    w, v = la.eigh(x)
    if w[0] <= 0:
        raise NotOnManifold("matrix is not positive definite")
    w = np.maximum(w, RANK_CUTOFF * w[-1])
    r = w ** (-0.5 if inverse else 0.5)
    return symmetrize((v * r) @ v.T)


def _sym_fun(x, fun):
    w, v = la.eigh(symmetrize(x))
    return symmetrize((v * fun(w)) @ v.T)


def _gl_log(m):
    w = la.eigvals(m)
    scale = max(1.0, float(np.max(np.abs(w))))
    on_neg_axis = (np.abs(w.imag) <= 1e-12 * scale) & (w.real <= 0)
    if np.any(on_neg_axis):
        raise LogarithmUndefined("matrix has an eigenvalue on the closed negative real axis")
    out = la.logm(m, disp=False)[0]
    if np.iscomplexobj(out):
        if np.max(np.abs(out.imag)) > 1e-8 * max(1.0, np.max(np.abs(out.real))):
            raise LogarithmUndefined("principal logarithm is not real")
        out = out.real
    return np.asarray(out, dtype=float)


def manifold_log(kind, base, point):
    """Logarithm map of ``point`` at ``base`` on the given manifold."""
    kind = Manifold(kind)
    x = as_matrix(base, "base")
    y = as_matrix(point, "point")
    check_same_shape(x, y, ("base", "point"))
    if kind is Manifold.EUCLIDEAN:
        return y - x
    if x.shape[0] != x.shape[1]:
        raise DimensionMismatch(f"{kind.value} requires square matrices")
    if kind is Manifold.GENERAL_LINEAR:
        _check_gl(x, "base")
        _check_gl(y, "point")
        # y @ inv(x) without forming the inverse
        return _gl_log(la.solve(x.T, y.T).T)
    _check_spd(x, "base")
    _check_spd(y, "point")
    xi = spd_sqrt(x, inverse=True)
    inner = symmetrize(xi @ y @ xi)
    return _sym_fun(inner, np.log)


def manifold_exp(kind, base, tangent):
    """Exponential map of ``tangent`` at ``base`` on the given manifold."""
    kind = Manifold(kind)
    x = as_matrix(base, "base")
    g = as_matrix(tangent, "tangent")
    check_same_shape(x, g, ("base", "tangent"))
    if kind is Manifold.EUCLIDEAN:
        return x + g
    if x.shape[0] != x.shape[1]:
        raise DimensionMismatch(f"{kind.value} requires square matrices")
    if kind is Manifold.GENERAL_LINEAR:
        _check_gl(x, "base")
        return la.expm(g) @ x
    _check_spd(x, "base")
    xs = spd_sqrt(x)
    return symmetrize(xs @ _sym_fun(g, np.exp) @ xs)


def expm_frechet_block(a, e):
    """Frechet derivative of ``expm`` at ``a`` in direction ``e``.

    Read off the upper-right block of ``expm([[a, e], [0, a]])``.
    """
    n = a.shape[0]
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = a
    big[n:, n:] = a
    big[:n, n:] = e
    return la.expm(big)[:n, n:]


class EigResult(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray
    left: Optional[np.ndarray] = None


def general_eig(matrix, left=False, residual_tol=1e-8):
    """Full spectrum of a dense real matrix.

    Backed by LAPACK ``geev`` (Hessenberg reduction followed by the shifted
    QR iteration). Right eigenvectors have unit 2-norm; complex eigenvalues of
    a real matrix come in conjugate pairs.

    Raises
    ------
    NoConvergence
        If LAPACK fails to converge or an eigenpair residual exceeds
        ``residual_tol * ||M||_F``.
    """
    m = as_square(matrix, "matrix")
    try:
        if left:
            w, vl, vr = la.eig(m, left=True, right=True)
        else:
            w, vr = la.eig(m)
            vl = None
    except la.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    vr = vr / np.linalg.norm(vr, axis=0)
    fro = np.linalg.norm(m)
    if fro > 0:
        res = np.linalg.norm(m @ vr - vr * w, axis=0) / fro
        if np.any(res > residual_tol):
            raise NoConvergence(f"eigenpair residual {res.max():.3e} exceeds tolerance")
    return EigResult(w, vr, vl)
