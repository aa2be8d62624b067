"""Modal damping of reduced tuples and the flutter-avoidance constraint.

Eigenvalues ``lam`` are those of ``N_r = calA_r^{-1} calB_r``; with
``calA_r q' + calB_r q = 0`` a mode evolves as ``exp(-lam t)``. Damping
ratios are computed from the time-domain exponent ``s = -lam`` as
``zeta = -Re(s) / |s|``, so decaying modes have ``zeta > 0``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from ._validation import as_vector
from .exceptions import DegenerateMode, SingularCalA
from .interp import TupleInterpolator
from .manifolds import general_eig

__all__ = [
    "Spectrum",
    "DampingReport",
    "prom_spectrum",
    "block_spectrum",
    "damping_ratios",
    "zeta_of",
    "tracked_modes",
    "FlutterConstraint",
    "flutter_constraint",
]

CALA_COND_LIMIT = 1e12
FD_STEP = 1e-6


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    left: Optional[np.ndarray] = None
    scale: float = 1.0

    @property
    def time_eigenvalues(self):
        return -self.eigenvalues

    @classmethod
    def from_time_domain(cls, s, scale=None):
        s = np.asarray(s, dtype=complex)
        return cls(eigenvalues=-s, scale=float(np.max(np.abs(s))) if scale is None else scale)


@dataclass(frozen=True)
class DampingReport:
    zetas: np.ndarray
    zeta_lb: float
    min_zeta: float
    margin: float
    active_index: int
    eigenvalues: np.ndarray

    def to_dict(self):
        return {
            "zetas": self.zetas.tolist(),
            "zeta_lb": self.zeta_lb,
            "min_zeta": self.min_zeta,
            "margin": self.margin,
            "active_index": self.active_index,
        }


def _system_matrix(cal_a, cal_b):
    if np.linalg.cond(cal_a) >= CALA_COND_LIMIT:
        raise SingularCalA("calA is singular or too ill-conditioned")
    return la.solve(cal_a, cal_b)


def block_spectrum(cal_a, cal_b, left=False):
    """Spectrum of ``calA^{-1} calB`` for any block pair (reduced or full)."""
    n = _system_matrix(cal_a, cal_b)
    eig = general_eig(n, left=left)
    return Spectrum(eig.values, eig.vectors, eig.left, scale=float(np.linalg.norm(n)))


def prom_spectrum(tup, left=False):
    return block_spectrum(tup.calA, tup.calB, left=left)


def zeta_of(lam):
    """Damping ratio for eigenvalues of ``N_r`` (decay ``exp(-lam t)``)."""
    lam = np.asarray(lam, dtype=complex)
    s = -lam
    return -s.real / np.abs(s)


def damping_ratios(spec, zeta_lb):
    """Sorted damping ratios and the margin to ``zeta_lb``."""
    lam = np.asarray(spec.eigenvalues, dtype=complex)
    if np.any(np.abs(lam) < 1e-14 * max(spec.scale, 1e-300)):
        raise DegenerateMode("zero eigenvalue: damping ratio undefined")
    z = np.clip(zeta_of(lam), -1.0, 1.0)
    order = np.argsort(z, kind="stable")
    return DampingReport(
        zetas=z[order], zeta_lb=float(zeta_lb), min_zeta=float(z[order[0]]),
        margin=float(z[order[0]] - zeta_lb), active_index=int(order[0]),
        eigenvalues=lam[order],
    )


def tracked_modes(eigenvalues, n_track):
    """Indices of the ``n_track`` least-damped distinct modes.

    One representative (nonnegative imaginary part) is kept per conjugate
    pair; modes are ordered by damping ratio, ties by frequency.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    rep = np.flatnonzero(lam.imag >= 0)
    z = zeta_of(lam[rep])
    order = np.lexsort((np.abs(lam[rep].imag), z))
    return rep[order[:n_track]]


def _zeta_derivative(lam, dlam):
    lr, li = lam.real, lam.imag
    mag = abs(lam)
    return (dlam.real * li * li - lr * li * dlam.imag) / mag**3


class FlutterConstraint:
    """Flutter constraint ``zeta_j(mu_r) - zeta_lb`` on an interpolated PROM.

    Parameters
    ----------
    interpolator : TupleInterpolator
        Fitted on a consistent database.
    zeta_lb : float
    n_track : int
        Number of least-damped distinct modes in the constraint vector.
    """

    def __init__(self, interpolator, zeta_lb, n_track=6):
        self.interpolator = interpolator
        self.zeta_lb = float(zeta_lb)
        self.n_track = int(n_track)
        self.last_fallback = False

    def report(self, mu_r):
        return damping_ratios(prom_spectrum(self.interpolator.predict(mu_r)), self.zeta_lb)

    def values(self, mu_r):
        spec = prom_spectrum(self.interpolator.predict(mu_r))
        damping_ratios(spec, self.zeta_lb)  # degenerate-mode check
        idx = tracked_modes(spec.eigenvalues, self.n_track)
        return zeta_of(spec.eigenvalues[idx]) - self.zeta_lb

    def values_and_jacobian(self, mu_r):
        """Constraint values and their Jacobian with respect to ``mu_r``.

        Eigenvalue derivatives use left and right eigenvectors; when a tracked
        eigenvalue is nearly defective or nearly repeated the Jacobian is
        formed by central differences instead (``last_fallback`` is set).
        """
        mu_r = as_vector(mu_r, "mu_r")
        tup = self.interpolator.predict(mu_r)
        spec = prom_spectrum(tup, left=True)
        damping_ratios(spec, self.zeta_lb)
        lam = spec.eigenvalues
        idx = tracked_modes(lam, self.n_track)
        values = zeta_of(lam[idx]) - self.zeta_lb

        n_mat = la.solve(tup.calA, tup.calB)
        scale = max(np.linalg.norm(n_mat), 1e-300)
        reliable = True
        pairs = []
        for i in idx:
            q = spec.eigenvectors[:, i]
            y = spec.left[:, i]
            y = y / np.linalg.norm(y)
            denom = np.vdot(y, q)
            others = np.delete(lam, i)
            gap = np.min(np.abs(others - lam[i])) if others.size else np.inf
            if abs(denom) < 1e-10 or gap < 1e-8 * scale:
                reliable = False
                break
            pairs.append((i, q, y, denom))

        self.last_fallback = not reliable
        if not reliable:
            return values, self._fd_jacobian(mu_r)

        sens = self.interpolator.sensitivities(mu_r)
        jac = np.zeros((idx.size, mu_r.size))
        for j, (da, db) in enumerate(sens):
            dn = la.solve(tup.calA, db - da @ n_mat)
            for k, (i, q, y, denom) in enumerate(pairs):
                dlam = np.vdot(y, dn @ q) / denom
                jac[k, j] = _zeta_derivative(lam[i], dlam)
        return values, jac

    def _fd_jacobian(self, mu_r):
        cols = []
        for j in range(mu_r.size):
            e = np.zeros(mu_r.size)
            e[j] = FD_STEP
            cols.append((self.values(mu_r + e) - self.values(mu_r - e)) / (2 * FD_STEP))
        return np.column_stack(cols)


def flutter_constraint(db, mu_r, zeta_lb, n_track=6, **interp_kwargs):
    """Constraint values ``zeta - zeta_lb`` and Jacobian at ``mu_r``."""
    interp = TupleInterpolator(**interp_kwargs).fit(db)
    return FlutterConstraint(interp, zeta_lb, n_track).values_and_jacobian(mu_r)
