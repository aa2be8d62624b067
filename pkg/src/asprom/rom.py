"""Reduced-order bases, projected FSI operators and database consistency.

A PROM tuple stores the reduced pair ``(calA_r, calB_r)``; with
mass-orthonormal structural modes the structural part of ``calA_r`` is the
identity and the stiffness block is ``diag(omega**2)``.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as la

from .exceptions import DimensionMismatch, InvalidParameter, NotSpd, SingularSystem
from .manifolds import _fix_signs, general_eig, procrustes, spd_sqrt, truncate_svd

__all__ = [
    "Projection",
    "StructRob",
    "FluidRob",
    "PromTuple",
    "PromEntry",
    "build_structural_rob",
    "build_fluid_rob",
    "stabilize_left_rob",
    "assemble_prom",
    "enforce_consistency",
    "default_frequency_band",
    "build_entry",
]


class Projection(enum.Enum):
    GALERKIN = "galerkin"
    PETROV_GALERKIN = "petrov_galerkin"


@dataclass(frozen=True)
class StructRob:
    V_u: np.ndarray
    frequencies: np.ndarray


@dataclass(frozen=True)
class FluidRob:
    V_w: np.ndarray
    W_w: np.ndarray
    projection: Projection = Projection.GALERKIN


@dataclass(frozen=True)
class PromTuple:
    """Reduced operators ``calA_r q_r' + calB_r q_r = 0``.

    Block layout, with ``q_r = (w_r, u_r', u_r)``::

        calA_r = [[A_r, 0, 0], [0, I, 0], [0, 0, I]]
        calB_r = [[H_r, R_r, G_r], [-P_r, D_r, Omega2_r], [0, -I, 0]]
    """

    calA: np.ndarray
    calB: np.ndarray
    nf: int
    ns: int

    @property
    def nq(self):
        return self.nf + 2 * self.ns

    @property
    def _f(self):
        return slice(0, self.nf)

    @property
    def _v(self):
        return slice(self.nf, self.nf + self.ns)

    @property
    def _u(self):
        return slice(self.nf + self.ns, self.nq)

    @property
    def A_r(self):
        return self.calA[self._f, self._f]

    @property
    def H_r(self):
        return self.calB[self._f, self._f]

    @property
    def R_r(self):
        return self.calB[self._f, self._v]

    @property
    def G_r(self):
        return self.calB[self._f, self._u]

    @property
    def P_r(self):
        return -self.calB[self._v, self._f]

    @property
    def D_r(self):
        return self.calB[self._v, self._v]

    @property
    def Omega2_r(self):
        return self.calB[self._v, self._u]

    def blocks(self):
        """Interpolable blocks keyed by name."""
        return {
            "A_r": self.A_r, "H_r": self.H_r, "R_r": self.R_r, "G_r": self.G_r,
            "P_r": self.P_r, "D_r": self.D_r, "Omega2_r": self.Omega2_r,
        }

    @classmethod
    def from_blocks(cls, A_r, H_r, R_r, G_r, P_r, D_r, Omega2_r):
        nf, ns = A_r.shape[0], D_r.shape[0]
        expected = {
            "A_r": (nf, nf), "H_r": (nf, nf), "R_r": (nf, ns), "G_r": (nf, ns),
            "P_r": (ns, nf), "D_r": (ns, ns), "Omega2_r": (ns, ns),
        }
        given = dict(A_r=A_r, H_r=H_r, R_r=R_r, G_r=G_r, P_r=P_r, D_r=D_r, Omega2_r=Omega2_r)
        for name, shape in expected.items():
            if np.shape(given[name]) != shape:
                raise DimensionMismatch(f"{name} has shape {np.shape(given[name])}, expected {shape}")
        nq = nf + 2 * ns
        f, v, u = slice(0, nf), slice(nf, nf + ns), slice(nf + ns, nq)
        cal_a = np.zeros((nq, nq))
        cal_a[f, f] = A_r
        cal_a[nf:, nf:] = np.eye(2 * ns)
        cal_b = np.zeros((nq, nq))
        cal_b[f, f] = H_r
        cal_b[f, v] = R_r
        cal_b[f, u] = G_r
        cal_b[v, f] = -np.asarray(P_r)
        cal_b[v, v] = D_r
        cal_b[v, u] = Omega2_r
        cal_b[u, v] = -np.eye(ns)
        return cls(cal_a, cal_b, nf, ns)

    def congruence(self, q):
        return PromTuple(q.T @ self.calA @ q, q.T @ self.calB @ q, self.nf, self.ns)

    def pattern_error(self):
        """Largest deviation from the fixed zero/identity block pattern."""
        ref = PromTuple.from_blocks(**self.blocks())
        return float(max(np.max(np.abs(ref.calA - self.calA)), np.max(np.abs(ref.calB - self.calB))))


@dataclass(frozen=True)
class PromEntry:
    """One sampled point of the database with its tuple and bases."""

    mu_r: np.ndarray
    mu: np.ndarray
    tuple: PromTuple
    V_w: np.ndarray
    W_w: np.ndarray
    V_u: np.ndarray
    frequencies: np.ndarray
    projection: Projection = Projection.GALERKIN

    @property
    def nf(self):
        return self.V_w.shape[1]

    @property
    def ns(self):
        return self.V_u.shape[1]

    def V_q(self):
        return la.block_diag(self.V_w, self.V_u, self.V_u)

    def W_q(self):
        return la.block_diag(self.W_w, self.V_u, self.V_u)


# Bases ---------------------------------------------------------------------
def _is_spd(m):
    if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
        return False
    return la.eigvalsh(m)[0] > 0


def build_structural_rob(ops, ns_keep):
    """Lowest ``ns_keep`` mass-orthonormal natural modes of ``K phi = w^2 M phi``."""
    m, k = ops.M, ops.K
    if not (_is_spd(m) and _is_spd(k)):
        raise NotSpd("structural mass and stiffness must be SPD")
    if not 1 <= ns_keep <= m.shape[0]:
        raise DimensionMismatch(f"ns_keep must lie in [1, {m.shape[0]}]")
    w2, phi = la.eigh(k, m, subset_by_index=[0, ns_keep - 1])
    phi = _fix_signs(phi)
    return StructRob(V_u=phi, frequencies=np.sqrt(w2))


def default_frequency_band(struct_rob, n_points=5):
    return np.linspace(0.0, 2.0, n_points) * float(struct_rob.frequencies.max())


def _complete_basis(v, n):
    """Extend orthonormal columns ``v`` to ``n`` orthonormal columns."""
    if v.shape[1] >= n:
        return v[:, :n]
    q, _ = la.qr(np.hstack([v, np.eye(v.shape[0])]), mode="economic")
    q = q[:, :n]
    # keep the leading columns identical to v (QR may flip their signs)
    signs = np.sign(np.sum(q[:, : v.shape[1]] * v, axis=0))
    q[:, : v.shape[1]] *= signs
    q[:, v.shape[1]:] = _fix_signs(q[:, v.shape[1]:])
    return q


def fluid_snapshots(ops, struct_rob, freqs):
    """Real and imaginary parts of the frequency-sweep fluid responses."""
    freqs = np.asarray(freqs, dtype=float).reshape(-1)
    if np.any(freqs < 0) or np.unique(freqs).size != freqs.size:
        raise ValueError("frequencies must be distinct and nonnegative")
    cols = []
    for kappa in freqs:
        lhs = 1j * kappa * ops.A + ops.H
        if np.linalg.cond(lhs) > 1e12:
            raise SingularSystem(f"frequency-domain fluid operator singular at kappa={kappa}")
        rhs = -(1j * kappa * ops.R + ops.G) @ struct_rob.V_u
        sol = la.solve(lhs, rhs)
        for m in range(sol.shape[1]):
            cols.append(sol[:, m].real)
            cols.append(sol[:, m].imag)
    return np.column_stack(cols)


def build_fluid_rob(ops, struct_rob, freqs, nf_keep, svd_tol=0.0, fixed_dim=False):
    """Right fluid basis from a frequency sweep over the structural modes.

    With ``fixed_dim`` the basis always has exactly ``nf_keep`` columns: the
    leading POD modes, completed with an orthonormal complement when the
    snapshot set has lower numerical rank.
    """
    snaps = fluid_snapshots(ops, struct_rob, freqs)
    limit = ops.A.shape[0] if fixed_dim else min(snaps.shape[1], ops.A.shape[0])
    if not 1 <= nf_keep <= limit:
        raise InvalidParameter(f"nf_keep={nf_keep} outside [1, {limit}]")
    if fixed_dim:
        trunc = truncate_svd(snaps, 0.0)
        v = _complete_basis(trunc.basis, nf_keep)
    else:
        v = truncate_svd(snaps, svd_tol, max_dim=nf_keep).basis
    return FluidRob(V_w=v, W_w=v.copy(), projection=Projection.GALERKIN)


def stabilize_left_rob(ops, rob):
    """Switch to a least-squares left basis if the Galerkin fluid block is unstable.

    The fallback ``W = H V (V^T H^T H V)^{-1/2}`` is orthonormal and gives
    ``W^T H V = (V^T H^T H V)^{1/2}``, which is SPD.
    """
    v = rob.V_w
    hv = ops.H @ v
    if general_eig(v.T @ hv).values.real.min() > 0:
        return FluidRob(V_w=v, W_w=v.copy(), projection=Projection.GALERKIN)
    gram = hv.T @ hv
    w = hv @ spd_sqrt(gram, inverse=True)
    return FluidRob(V_w=v, W_w=w, projection=Projection.PETROV_GALERKIN)


def assemble_prom(ops, fluid, struct_rob):
    """Project the block system onto the fluid and structural bases."""
    v, w, vu = fluid.V_w, fluid.W_w, struct_rob.V_u
    if v.shape != w.shape or v.shape[0] != ops.A.shape[0] or vu.shape[0] != ops.M.shape[0]:
        raise DimensionMismatch("basis dimensions do not match the operators")
    return PromTuple.from_blocks(
        A_r=w.T @ ops.A @ v,
        H_r=w.T @ ops.H @ v,
        R_r=w.T @ ops.R @ vu,
        G_r=w.T @ ops.G @ vu,
        P_r=vu.T @ ops.P @ v,
        D_r=vu.T @ ops.D @ vu,
        Omega2_r=np.diag(struct_rob.frequencies**2),
    )


def build_entry(hdm, mu, mu_r, nf_keep, ns_keep, freqs=None, n_freqs=5, stabilize=True):
    """Bases and reduced tuple at one design point."""
    ops = hdm.operators(mu)
    srob = build_structural_rob(ops, ns_keep)
    band = default_frequency_band(srob, n_freqs) if freqs is None else freqs
    frob = build_fluid_rob(ops, srob, band, nf_keep, fixed_dim=True)
    if stabilize:
        frob = stabilize_left_rob(ops, frob)
    tup = assemble_prom(ops, frob, srob)
    return PromEntry(
        mu_r=np.asarray(mu_r, dtype=float).copy(), mu=np.asarray(mu, dtype=float).copy(),
        tuple=tup, V_w=frob.V_w, W_w=frob.W_w, V_u=srob.V_u,
        frequencies=srob.frequencies, projection=frob.projection,
    )


def enforce_consistency(entries, ref_index=0):
    """Rotate every entry into the generalized coordinates of the reference.

    Alignment is block-wise: ``Q_w`` for the fluid basis and a shared ``Q_u``
    for both structural blocks, so the rotated bases keep their block form.
    """
    entries = list(entries)
    if not entries:
        return entries
    ref = entries[ref_index]
    for e in entries:
        if (e.nf, e.ns) != (ref.nf, ref.ns):
            raise DimensionMismatch("all entries must share (n_f, n_s)")
    out = []
    for i, e in enumerate(entries):
        if i == ref_index:
            out.append(e)
            continue
        q_w = procrustes(ref.V_w, e.V_w)
        q_u = procrustes(ref.V_u, e.V_u)
        q = la.block_diag(q_w, q_u, q_u)
        out.append(replace(
            e,
            tuple=e.tuple.congruence(q),
            V_w=e.V_w @ q_w,
            W_w=e.W_w @ q_w,
            V_u=e.V_u @ q_u,
        ))
    return out
