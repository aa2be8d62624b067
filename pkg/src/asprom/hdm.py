"""Synthetic parametric linearized fluid-structure model.

The fluid block is an upwind convection-diffusion operator on a 1D grid whose
length and convection speed follow the shape parameters; the structure is a
spring-mass chain with grouped stiffness parameters and Rayleigh-plus-mass
damping. Random coupling matrices tie the two together, with a coupling
magnitude calibrated so that the baseline design sits just above the flutter
damping bound.
"""

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as la

from ._validation import as_vector
from .exceptions import DimensionMismatch, InvalidConfig, OutOfBounds

__all__ = [
    "ParameterRole",
    "DesignSpace",
    "HdmConfig",
    "FsiOperators",
    "BlockOperators",
    "FsiHdm",
    "generate_hdm",
    "assemble_blocks",
    "hdm_residual",
    "coupled_damping_ratios",
]

UNBOUNDED = 1e30
DIFFUSION = 0.05
ZETA_LB_DEFAULT = 4.75e-3


class ParameterRole(enum.Enum):
    FLUID_SHAPE = "fluid_shape"
    STRUCT_STIFFNESS = "struct_stiffness"
    STRUCT_DAMPING = "struct_damping"


@dataclass(frozen=True)
class DesignSpace:
    """Box ``lower <= mu <= upper`` in the design parameter space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.clip(as_vector(self.lower, "lower"), -UNBOUNDED, UNBOUNDED)
        hi = np.clip(as_vector(self.upper, "upper", size=lo.size), -UNBOUNDED, UNBOUNDED)
        if np.any(lo >= hi):
            raise InvalidConfig("design space requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, dim, half_width):
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))

    @property
    def dim(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def violation(self, mu):
        mu = np.asarray(mu, dtype=float)
        return float(max(np.max(self.lower - mu, initial=0.0), np.max(mu - self.upper, initial=0.0)))

    def contains(self, mu, tol=1e-8):
        return self.violation(mu) <= tol

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass
class HdmConfig:
    """Settings of the synthetic model.

    ``gamma0`` fixes the coupling magnitude; when ``None`` it is calibrated so
    that the least-damped mode at ``mu = 0`` has damping ratio
    ``calibration_factor * zeta_lb``.
    """

    nf: int
    ns: int
    design_space: DesignSpace
    parameter_roles: List[ParameterRole]
    seed: int = 0
    gamma0: Optional[float] = None
    zeta_lb: float = ZETA_LB_DEFAULT
    calibration_factor: float = 1.5
    planted_rank: Optional[int] = None

    def __post_init__(self):
        self.parameter_roles = [ParameterRole(r) for r in self.parameter_roles]
        if self.ns < 1 or self.nf < 4 * self.ns:
            raise InvalidConfig("need ns >= 1 and nf >= 4 * ns")
        if len(self.parameter_roles) != self.design_space.dim:
            raise InvalidConfig("one parameter role per design parameter is required")
        for role in ParameterRole:
            if role not in self.parameter_roles:
                raise InvalidConfig(f"no design parameter has role {role.value}")
        n_stiff = self.parameter_roles.count(ParameterRole.STRUCT_STIFFNESS)
        if n_stiff > self.ns:
            raise InvalidConfig("more stiffness groups than structural springs")
        if self.planted_rank is not None and not 1 <= self.planted_rank <= self.design_space.dim:
            raise InvalidConfig("planted_rank must lie in [1, N_D]")
        if not 0 < self.calibration_factor < 2:
            raise InvalidConfig("calibration_factor must lie in (0, 2)")

    @property
    def n_params(self):
        return self.design_space.dim

    @property
    def rank(self):
        d = self.design_space.dim
        return self.planted_rank if self.planted_rank is not None else -(-d // 2)

    def to_dict(self):
        return {
            "nf": self.nf,
            "ns": self.ns,
            "design_space": self.design_space.to_dict(),
            "parameter_roles": [r.value for r in self.parameter_roles],
            "seed": int(self.seed),
            "gamma0": self.gamma0,
            "zeta_lb": self.zeta_lb,
            "calibration_factor": self.calibration_factor,
            "planted_rank": self.planted_rank,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ds = d.pop("design_space")
        return cls(design_space=DesignSpace(ds["lower"], ds["upper"]), **d)

    def digest(self):
        """64-bit content hash used to pair databases with their model."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return int(hashlib.sha256(blob).hexdigest()[:16], 16)


@dataclass(frozen=True)
class FsiOperators:
    A: np.ndarray
    H: np.ndarray
    R: np.ndarray
    G: np.ndarray
    M: np.ndarray
    D: np.ndarray
    K: np.ndarray
    P: np.ndarray

    @property
    def nf(self):
        return self.A.shape[0]

    @property
    def ns(self):
        return self.M.shape[0]


@dataclass(frozen=True)
class BlockOperators:
    calA: np.ndarray
    calB: np.ndarray
    nf: int
    ns: int

    @property
    def nq(self):
        return self.nf + 2 * self.ns


def assemble_blocks(ops):
    """First-order block form ``calA q' + calB q = 0`` with ``q = (w, u', u)``."""
    nf, ns = ops.A.shape[0], ops.M.shape[0]
    shapes = {
        "A": (nf, nf), "H": (nf, nf), "R": (nf, ns), "G": (nf, ns),
        "M": (ns, ns), "D": (ns, ns), "K": (ns, ns), "P": (ns, nf),
    }
    for name, shape in shapes.items():
        if getattr(ops, name).shape != shape:
            raise DimensionMismatch(f"{name} has shape {getattr(ops, name).shape}, expected {shape}")
    nq = nf + 2 * ns
    f, v, u = slice(0, nf), slice(nf, nf + ns), slice(nf + ns, nq)
    cal_a = np.zeros((nq, nq))
    cal_a[f, f] = ops.A
    cal_a[v, v] = ops.M
    cal_a[u, u] = ops.M
    cal_b = np.zeros((nq, nq))
    cal_b[f, f] = ops.H
    cal_b[f, v] = ops.R
    cal_b[f, u] = ops.G
    cal_b[v, f] = -ops.P
    cal_b[v, v] = ops.D
    cal_b[v, u] = ops.K
    cal_b[u, v] = -ops.M
    return BlockOperators(cal_a, cal_b, nf, ns)


def hdm_residual(blocks, lam, q):
    """Residual norm ``||(lam calA + calB) q||_2`` of a modal solution
    ``q(t) = q exp(lam t)``."""
    q = np.asarray(q, dtype=complex).reshape(-1)
    if q.size != blocks.nq:
        raise DimensionMismatch(f"q has length {q.size}, expected {blocks.nq}")
    if abs(np.linalg.norm(q) - 1.0) > 1e-12:
        raise ValueError("q must have unit 2-norm")
    return float(np.linalg.norm(lam * (blocks.calA @ q) + blocks.calB @ q))


def coupled_damping_ratios(blocks):
    """Damping ratios of every mode of the block system, ascending."""
    m = -la.solve(blocks.calA, blocks.calB)
    s = la.eigvals(m)
    mag = np.abs(s)
    mag[mag == 0] = 1.0
    return np.sort(-s.real / mag)


class FsiHdm:
    """Parametric operator generator; build with :func:`generate_hdm`."""

    def __init__(self, config):
        self.config = config
        cfg = config
        rng = np.random.default_rng(cfg.seed)
        roles = np.array([r.value for r in cfg.parameter_roles])
        self._fluid_idx = np.flatnonzero(roles == ParameterRole.FLUID_SHAPE.value)
        self._stiff_idx = np.flatnonzero(roles == ParameterRole.STRUCT_STIFFNESS.value)
        self._damp_idx = np.flatnonzero(roles == ParameterRole.STRUCT_DAMPING.value)

        ns, nf = cfg.ns, cfg.nf
        self._spring_group = np.zeros(ns, dtype=int)
        for g, chunk in enumerate(np.array_split(np.arange(ns), self._stiff_idx.size)):
            self._spring_group[chunk] = g
        self._group_stiffness = rng.uniform(0.8, 1.2, size=self._stiff_idx.size)

        scale = 1.0 / np.sqrt(nf)
        self._R0 = rng.standard_normal((nf, ns)) * scale
        self._G0 = rng.standard_normal((nf, ns)) * scale
        # mostly anti-aligned with R so that coupling feeds energy into the structure
        self._P0 = (-self._R0.T + 0.3 * rng.standard_normal((ns, nf)) * scale)

        self._init_surrogates(rng)
        self.gamma0 = cfg.gamma0 if cfg.gamma0 is not None else self._calibrate_gamma0()

    # ------------------------------------------------------------------ model
    @property
    def design_space(self):
        return self.config.design_space

    @property
    def n_params(self):
        return self.config.n_params

    def digest(self):
        return self.config.digest()

    def _check_mu(self, mu):
        return as_vector(mu, "mu", size=self.n_params)

    def shape_mean(self, mu):
        return float(np.mean(mu[self._fluid_idx]))

    def operators(self, mu, gamma0=None):
        """Linearized operators ``{A, H, R, G, M, D, K, P}`` at ``mu``."""
        mu = self._check_mu(mu)
        cfg = self.config
        nf, ns = cfg.nf, cfg.ns
        sf = self.shape_mean(mu)
        length = 1.0 + 0.2 * sf
        h = length / nf
        speed = 1.0 + 0.3 * sf
        a = np.diag(np.full(nf, h))
        diff = DIFFUSION / h
        hmat = (
            np.diag(np.full(nf, speed + 2 * diff))
            + np.diag(np.full(nf - 1, -(speed + diff)), -1)
            + np.diag(np.full(nf - 1, -diff), 1)
        )

        factors = 1.0 + mu[self._stiff_idx]
        if np.any(factors <= 0):
            raise OutOfBounds("stiffness parameters must exceed -1")
        springs = self._group_stiffness[self._spring_group] * factors[self._spring_group]
        k = np.diag(springs.copy())
        k[:-1, :-1] += np.diag(springs[1:])
        off = -springs[1:]
        k += np.diag(off, 1) + np.diag(off, -1)
        m = np.eye(ns)
        d_coef = 0.02 * (1.0 + float(np.mean(mu[self._damp_idx])))
        d = 0.01 * k + d_coef * m

        g0 = self.gamma0 if gamma0 is None else gamma0
        gamma = g0 * (1.0 + 0.5 * sf)
        return FsiOperators(
            A=a, H=hmat, R=gamma * self._R0, G=gamma * self._G0,
            M=m, D=d, K=k, P=gamma * self._P0,
        )

    def blocks(self, mu):
        return assemble_blocks(self.operators(mu))

    def _min_zeta(self, gamma0):
        ops = self.operators(np.zeros(self.n_params), gamma0=gamma0)
        return coupled_damping_ratios(assemble_blocks(ops))[0]

    def _calibrate_gamma0(self):
        target = self.config.calibration_factor * self.config.zeta_lb
        lo, hi = 0.0, 0.25
        if self._min_zeta(0.0) <= target:
            raise InvalidConfig("uncoupled structure is already below the damping target")
        while self._min_zeta(hi) > target:
            lo, hi = hi, 2 * hi
            if hi > 1e3:
                raise InvalidConfig("coupling never reaches the damping target")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self._min_zeta(mid) > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # ------------------------------------------------------------- surrogates
    def _init_surrogates(self, rng):
        d, r = self.n_params, self.config.rank
        basis, _ = np.linalg.qr(rng.standard_normal((d, r)))
        self.planted_basis = basis
        half = np.minimum(np.abs(self.design_space.lower), np.abs(self.design_space.upper))
        width = float(np.min(half))
        # scales chosen relative to the box so the optimum is interior
        self._a = basis @ (rng.uniform(0.5, 1.0, r) * rng.choice([-1, 1], r)) / max(width, 1e-3)
        self._B = basis @ np.diag(rng.uniform(2.0, 6.0, r)) @ basis.T / max(width, 1e-3) ** 2
        c_r = rng.standard_normal((r, r))
        self._C = basis @ (c_r @ c_r.T / r + 0.5 * np.eye(r)) @ basis.T / max(width, 1e-3) ** 2
        self._c = basis @ rng.standard_normal(r) * 0.3 / max(width, 1e-3)
        self._stress_cap = 1.0
        self._w = basis @ np.abs(rng.standard_normal(r)) / max(width, 1e-3)
        self._weight_cap = 0.6

    def _check_bounds(self, mu):
        if not self.design_space.contains(mu, tol=1e-8):
            raise OutOfBounds(f"mu violates the design box by {self.design_space.violation(mu):.3e}")

    def surrogate_objective(self, mu):
        """Lift-to-drag stand-in ``(1 + a.mu) / (1 + mu.B.mu)`` and its gradient."""
        mu = self._check_mu(mu)
        self._check_bounds(mu)
        num = 1.0 + self._a @ mu
        bmu = self._B @ mu
        den = 1.0 + mu @ bmu
        value = num / den
        grad = self._a / den - 2.0 * num * bmu / den**2
        return float(value), grad

    def surrogate_constraints(self, mu):
        """Stress (quadratic) and weight (linear) stand-ins, ``g(mu) <= 0``."""
        mu = self._check_mu(mu)
        self._check_bounds(mu)
        cmu = self._C @ mu
        g = np.array([
            mu @ cmu + self._c @ mu - self._stress_cap,
            self._w @ mu - self._weight_cap,
        ])
        jac = np.vstack([2.0 * cmu + self._c, self._w])
        return g, jac


def generate_hdm(config):
    """Build the parametric model described by ``config``."""
    if not isinstance(config, HdmConfig):
        raise InvalidConfig("expected an HdmConfig")
    return FsiHdm(config)
