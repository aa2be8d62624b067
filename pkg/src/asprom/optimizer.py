"""Quasi-Newton SQP with an L1 merit function, plus the design-problem drivers.

The SQP loop keeps bounds and linear inequalities exact in every QP, so
iterates never leave the box; only the nonlinear inequalities enter the merit
function.
"""

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as la
from scipy.optimize import linprog

from ._validation import as_vector
from .exceptions import (
    DimensionMismatch,
    InfeasibleStart,
    LinesearchFailure,
    OptimizerFailed,
    QpInfeasible,
)

__all__ = [
    "Status",
    "NlpSpec",
    "SqpOptions",
    "RunRecord",
    "solve_qp",
    "sqp_solve",
    "solve_auxiliary",
    "solve_mdao",
    "history_csv",
]

log = logging.getLogger(__name__)

INF_BOUND = 1e29
ARMIJO = 1e-4
MAX_BACKTRACK = 30
PENALTY_MARGIN = 1e-2


class Status(enum.Enum):
    CONVERGED = "CONVERGED"
    ITERATION_LIMIT = "ITERATION_LIMIT"
    LINESEARCH_FAILURE = "LINESEARCH_FAILURE"
    QP_INFEASIBLE = "QP_INFEASIBLE"


@dataclass
class NlpSpec:
    """Smooth problem ``min f(x)`` s.t. ``c(x) <= 0``, ``A x <= b``, ``lb <= x <= ub``.

    ``objective(x)`` returns ``(f, grad)``; ``inequalities(x)``, if given,
    returns ``(c, jac)`` with ``jac`` of shape ``(m, dim)``.
    """

    dim: int
    objective: Callable
    x0: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    inequalities: Optional[Callable] = None
    linear_A: Optional[np.ndarray] = None
    linear_b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x0 = as_vector(self.x0, "x0", size=self.dim)
        self.lower = (np.full(self.dim, -np.inf) if self.lower is None
                      else as_vector(self.lower, "lower", size=self.dim))
        self.upper = (np.full(self.dim, np.inf) if self.upper is None
                      else as_vector(self.upper, "upper", size=self.dim))
        if self.linear_A is not None:
            self.linear_A = np.atleast_2d(np.asarray(self.linear_A, dtype=float))
            self.linear_b = as_vector(self.linear_b, "linear_b", size=self.linear_A.shape[0])
            if self.linear_A.shape[1] != self.dim:
                raise DimensionMismatch("linear_A has the wrong number of columns")
        if np.any(self.x0 < self.lower - 1e-12) or np.any(self.x0 > self.upper + 1e-12):
            raise InfeasibleStart("x0 lies outside the bounds")


@dataclass
class SqpOptions:
    max_iter: int = 100
    tol_kkt: float = 1e-6
    tol_step: float = 1e-12


@dataclass
class RunRecord:
    """Trajectory and diagnostics of one optimizer run."""

    iterates: List[np.ndarray] = field(default_factory=list)
    objective_history: List[float] = field(default_factory=list)
    constraint_violation_history: List[float] = field(default_factory=list)
    step_norms: List[float] = field(default_factory=list)
    kkt_history: List[float] = field(default_factory=list)
    status: Optional[Status] = None
    multipliers: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def increments(self):
        if len(self.iterates) < 2:
            return np.zeros((self.iterates[0].size if self.iterates else 0, 0))
        return np.column_stack([b - a for a, b in zip(self.iterates[:-1], self.iterates[1:])])

    @property
    def n_iter(self):
        return max(len(self.iterates) - 1, 0)

    @property
    def x(self):
        return self.iterates[-1]

    @property
    def objective(self):
        return self.objective_history[-1]


# QP -----------------------------------------------------------------------
def _independent_rows(g, rows, tol=1e-10):
    """Greedy subset of ``rows`` whose constraint normals are independent."""
    keep = []
    for i in rows:
        cand = g[keep + [i]]
        if np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) == len(keep) + 1:
            keep.append(i)
    return keep


def solve_qp(hess, c, g, h, d0=None, max_iter=None, tol=1e-12):
    """Primal active-set solve of ``min 0.5 d'Hd + c'd`` s.t. ``g d <= h``.

    ``hess`` must be SPD. A feasible start comes from ``d0`` if given and
    feasible, else from a HiGHS feasibility LP.

    Returns
    -------
    d : ndarray
    lam : ndarray
        Multipliers, one per row of ``g`` (zero for inactive rows).

    Raises
    ------
    QpInfeasible
    """
    n = c.size
    m = h.size
    scale = 1.0 + np.abs(h)
    if d0 is None or (m and np.any(g @ d0 - h > tol * scale)):
        if m == 0:
            d0 = np.zeros(n)
        else:
            lp = linprog(np.zeros(n), A_ub=g, b_ub=h, bounds=[(None, None)] * n, method="highs")
            if lp.status != 0:
                raise QpInfeasible("linearized constraints are inconsistent")
            d0 = lp.x
    d = np.array(d0, dtype=float)
    if m == 0:
        return la.solve(hess, -c, assume_a="pos"), np.zeros(0)

    active = np.flatnonzero(np.abs(g @ d - h) <= 1e-9 * scale)
    work = _independent_rows(g, list(active))
    max_iter = max_iter or 10 * (n + m) + 50
    lam_w = np.zeros(0)
    for _ in range(max_iter):
        grad = hess @ d + c
        k = len(work)
        if k:
            gw = g[work]
            kkt = np.block([[hess, gw.T], [gw, np.zeros((k, k))]])
            sol = la.solve(kkt, np.concatenate([-grad, np.zeros(k)]))
            p, lam_w = sol[:n], sol[n:]
        else:
            p, lam_w = la.solve(hess, -grad, assume_a="pos"), np.zeros(0)
        if np.linalg.norm(p) <= 1e-13 * (1.0 + np.linalg.norm(d)):
            if k == 0 or lam_w.min() >= -1e-12 * (1.0 + np.abs(lam_w).max()):
                lam = np.zeros(m)
                lam[work] = np.maximum(lam_w, 0.0)
                return d, lam
            work.pop(int(np.argmin(lam_w)))
            continue
        gp = g @ p
        resid = h - g @ d
        alpha, block = 1.0, None
        for i in range(m):
            if i in work or gp[i] <= 1e-14 * np.linalg.norm(g[i]) * np.linalg.norm(p):
                continue
            t = max(resid[i], 0.0) / gp[i]
            if t < alpha:
                alpha, block = t, i
        d = d + alpha * p
        if block is not None:
            work.append(block)
    raise QpInfeasible("active-set iteration limit reached in QP subproblem")


# SQP ----------------------------------------------------------------------
class _Problem:
    """Evaluation wrapper stacking bounds and linear rows into the QP."""

    def __init__(self, spec):
        self.spec = spec
        n = spec.dim
        self.lin_A = spec.linear_A if spec.linear_A is not None else np.zeros((0, n))
        self.lin_b = spec.linear_b if spec.linear_b is not None else np.zeros(0)
        self.up_idx = np.flatnonzero(spec.upper < INF_BOUND)
        self.lo_idx = np.flatnonzero(spec.lower > -INF_BOUND)

    def evaluate(self, x):
        f, grad = self.spec.objective(x)
        if self.spec.inequalities is None:
            c, jac = np.zeros(0), np.zeros((0, self.spec.dim))
        else:
            c, jac = self.spec.inequalities(x)
            c = np.atleast_1d(np.asarray(c, dtype=float))
            jac = np.atleast_2d(np.asarray(jac, dtype=float)).reshape(c.size, self.spec.dim)
        return float(f), np.asarray(grad, dtype=float), c, jac

    def hard_rows(self, x):
        """Rows ``G d <= h`` for linear inequalities and bounds at ``x``."""
        n = self.spec.dim
        eye = np.eye(n)
        g = np.vstack([self.lin_A, eye[self.up_idx], -eye[self.lo_idx]])
        h = np.concatenate([
            self.lin_b - self.lin_A @ x,
            self.spec.upper[self.up_idx] - x[self.up_idx],
            x[self.lo_idx] - self.spec.lower[self.lo_idx],
        ])
        # round-off may leave x a hair outside; never ask for more than staying put
        return g, np.maximum(h, 0.0)

    def clip(self, x):
        return np.minimum(np.maximum(x, self.spec.lower), self.spec.upper)

    def split(self, lam, m_c):
        n_l = self.lin_A.shape[0]
        n_u = self.up_idx.size
        lam_c = lam[:m_c]
        lam_l = lam[m_c:m_c + n_l]
        lam_u = lam[m_c + n_l:m_c + n_l + n_u]
        lam_lo = lam[m_c + n_l + n_u:]
        return lam_c, lam_l, lam_u, lam_lo

    def lagrangian_grad(self, grad, jac, lam_c, lam_l, lam_u, lam_lo):
        out = grad + jac.T @ lam_c + self.lin_A.T @ lam_l
        out = out.copy()
        out[self.up_idx] += lam_u
        out[self.lo_idx] -= lam_lo
        return out

    def kkt_residual(self, x, grad, c, jac, lam):
        lam_c, lam_l, lam_u, lam_lo = self.split(lam, c.size)
        stat = self.lagrangian_grad(grad, jac, lam_c, lam_l, lam_u, lam_lo)
        viol = float(np.max(np.maximum(c, 0.0), initial=0.0))
        slack_c = np.abs(lam_c * c)
        slack_l = np.abs(lam_l * (self.lin_A @ x - self.lin_b))
        slack_u = np.abs(lam_u * (self.spec.upper[self.up_idx] - x[self.up_idx]))
        slack_lo = np.abs(lam_lo * (x[self.lo_idx] - self.spec.lower[self.lo_idx]))
        comp = float(np.max(np.concatenate([slack_c, slack_l, slack_u, slack_lo]), initial=0.0))
        return max(float(np.max(np.abs(stat), initial=0.0)), viol, comp)


def _violation(c):
    return float(np.sum(np.maximum(c, 0.0)))


def _restoration_step(prob, x, c, jac):
    """LP step minimizing the linearized L1 violation within the hard rows."""
    n, m = prob.spec.dim, c.size
    g_hard, h_hard = prob.hard_rows(x)
    radius = 1.0 + float(np.max(np.abs(x), initial=0.0))
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    a_ub = np.vstack([
        np.hstack([jac, -np.eye(m)]),
        np.hstack([g_hard, np.zeros((g_hard.shape[0], m))]),
    ])
    b_ub = np.concatenate([-c, h_hard])
    bounds = [(-radius, radius)] * n + [(0, None)] * m
    lp = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if lp.status != 0:
        return None
    return lp.x[:n]


def sqp_solve(spec, opts=None, callback=None):
    """Run damped-BFGS SQP on ``spec``.

    Parameters
    ----------
    spec : NlpSpec
    opts : SqpOptions, optional
    callback : callable, optional
        Called as ``callback(record, x)`` after each accepted iterate.

    Returns
    -------
    RunRecord

    Raises
    ------
    LinesearchFailure, QpInfeasible
        With the partial record attached.
    """
    opts = opts or SqpOptions()
    prob = _Problem(spec)
    n = spec.dim
    x = prob.clip(spec.x0.copy())
    f, grad, c, jac = prob.evaluate(x)
    rec = RunRecord()

    def push(x, f, c, step):
        rec.iterates.append(x.copy())
        rec.objective_history.append(f)
        rec.constraint_violation_history.append(float(np.max(np.maximum(c, 0.0), initial=0.0)))
        rec.step_norms.append(step)
        if callback is not None:
            callback(rec, x)

    push(x, f, c, 0.0)
    hess = np.eye(n)
    rho = 0.0
    restored = False
    d_prev = None

    for it in range(opts.max_iter + 1):
        g_hard, h_hard = prob.hard_rows(x)
        g_qp = np.vstack([jac, g_hard])
        h_qp = np.concatenate([-c, h_hard])
        try:
            d, lam = solve_qp(hess, grad, g_qp, h_qp, d0=np.zeros(n))
        except QpInfeasible:
            if restored:
                rec.status = Status.QP_INFEASIBLE
                raise QpInfeasible("QP infeasible after restoration", record=rec)
            d_r = _restoration_step(prob, x, c, jac)
            if d_r is None:
                rec.status = Status.QP_INFEASIBLE
                raise QpInfeasible("restoration LP failed", record=rec)
            x_new = prob.clip(x + d_r)
            f_n, grad_n, c_n, jac_n = prob.evaluate(x_new)
            if _violation(c_n) >= _violation(c) * (1.0 - 1e-8):
                rec.status = Status.QP_INFEASIBLE
                raise QpInfeasible("restoration step does not reduce the violation", record=rec)
            restored = True
            push(x_new, f_n, c_n, float(np.linalg.norm(x_new - x)))
            x, f, grad, c, jac = x_new, f_n, grad_n, c_n, jac_n
            continue
        restored = False
        lam_c = lam[:c.size]
        rec.multipliers = {"inequality": lam_c.copy(), "all": lam.copy()}
        kkt = prob.kkt_residual(x, grad, c, jac, lam)
        rec.kkt_history.append(kkt)
        step = float(np.linalg.norm(d))
        if kkt <= opts.tol_kkt or step <= opts.tol_step:
            rec.status = Status.CONVERGED
            return rec
        if it == opts.max_iter:
            break

        if lam_c.size:
            rho = max(rho, float(np.max(lam_c)) + PENALTY_MARGIN)
        phi0 = f + rho * _violation(c)
        slope = float(grad @ d) - rho * _violation(c)
        alpha = 1.0
        for _ in range(MAX_BACKTRACK):
            x_try = prob.clip(x + alpha * d)
            f_t, grad_t, c_t, jac_t = prob.evaluate(x_try)
            phi = f_t + rho * _violation(c_t)
            if phi <= phi0 + ARMIJO * alpha * slope + 1e-14 * max(1.0, abs(phi0)):
                break
            alpha *= 0.5
        else:
            rec.status = Status.LINESEARCH_FAILURE
            raise LinesearchFailure(
                f"no sufficient merit decrease after {MAX_BACKTRACK} halvings", record=rec)

        s = x_try - x
        y = (prob.lagrangian_grad(grad_t, jac_t, lam_c, *prob.split(lam, c.size)[1:])
             - prob.lagrangian_grad(grad, jac, lam_c, *prob.split(lam, c.size)[1:]))
        hess = _damped_bfgs(hess, s, y)
        x, f, grad, c, jac = x_try, f_t, grad_t, c_t, jac_t
        push(x, f, c, float(np.linalg.norm(s)))

    rec.status = Status.ITERATION_LIMIT
    return rec


def _damped_bfgs(hess, s, y):
    """Powell-damped BFGS update; skipped for negligible steps."""
    bs = hess @ s
    sbs = float(s @ bs)
    if sbs <= 1e-300 or np.linalg.norm(s) <= 1e-300:
        return hess
    sy = float(s @ y)
    if sy < 0.2 * sbs:
        theta = 0.8 * sbs / (sbs - sy)
        y = theta * y + (1.0 - theta) * bs
        sy = float(s @ y)
    out = hess - np.outer(bs, bs) / sbs + np.outer(y, y) / sy
    return 0.5 * (out + out.T)


# Drivers ------------------------------------------------------------------
def solve_auxiliary(hdm, mu0, opts=None, space=None):
    """Maximize the surrogate objective under the surrogate constraints only."""
    space = space or hdm.design_space

    def objective(mu):
        f, g = hdm.surrogate_objective(mu)
        return -f, -g

    spec = NlpSpec(
        dim=hdm.n_params, objective=objective, x0=mu0,
        lower=space.lower, upper=space.upper,
        inequalities=hdm.surrogate_constraints,
    )
    return sqp_solve(spec, opts)


def solve_mdao(hdm, db, zeta_lb, mu0, opts=None, n_track=6, interp_kwargs=None, callback=None):
    """Design problem with the interpolated-PROM flutter constraint.

    Variables are the coordinates ``mu_r`` of ``db.basis``. With an active
    subspace the design box is imposed as the ``2 N_D`` linear inequalities
    ``lb <= V mu_r <= ub``; without one (``AsMethod.NONE``) the box is a
    plain bound constraint on ``mu``. Objective and surrogate constraints
    are evaluated at the lifted point with gradients chained through ``V``.

    The record's ``extra`` holds the per-iterate least damping ratio, the
    distance of each iterate to the nearest database sample and the final
    :class:`DampingReport`.

    Raises
    ------
    InfeasibleStart
        If the lift of ``V^T mu0`` leaves the box by more than ``1e-8``.
    """
    from .asub import AsMethod
    from .flutter import FlutterConstraint
    from .interp import TupleInterpolator

    basis = db.basis
    space = hdm.design_space
    v = basis.V_mu
    mu0 = as_vector(mu0, "mu0", size=basis.dim)
    x0 = v.T @ mu0
    if space.violation(v @ x0) > 1e-8:
        raise InfeasibleStart("the lifted start point violates the design box")
    flutter = FlutterConstraint(TupleInterpolator(**(interp_kwargs or {})).fit(db), zeta_lb, n_track)
    centers = db.centers

    def lifted(x):
        # rounding in V x may leave the box by ~1e-16; the QP keeps it feasible
        return np.clip(v @ x, space.lower, space.upper)

    def objective(x):
        f, g = hdm.surrogate_objective(lifted(x))
        return -f, -(v.T @ g)

    def inequalities(x):
        g, jac = hdm.surrogate_constraints(lifted(x))
        zeta, zjac = flutter.values_and_jacobian(x)
        return np.concatenate([g, -zeta]), np.vstack([jac @ v, -zjac])

    if basis.method is AsMethod.NONE:
        spec = NlpSpec(dim=basis.n_G, objective=objective, x0=x0, lower=space.lower,
                       upper=space.upper, inequalities=inequalities)
    else:
        spec = NlpSpec(dim=basis.n_G, objective=objective, x0=x0,
                       inequalities=inequalities,
                       linear_A=np.vstack([v, -v]),
                       linear_b=np.concatenate([space.upper, -space.lower]))

    def annotate(rec):
        rec.extra["min_zeta_history"] = [flutter.report(x).min_zeta for x in rec.iterates]
        dist = [float(np.min(np.linalg.norm(centers - x, axis=1))) for x in rec.iterates]
        rec.extra["nearest_sample_distance"] = dist
        rec.extra["damping_report"] = flutter.report(rec.x)
        rec.extra["mu"] = v @ rec.x
        for k, d in enumerate(dist):
            log.info("mdao iterate %d: distance to nearest sample %.3e", k, d)
        return rec

    try:
        rec = sqp_solve(spec, opts, callback=callback)
    except OptimizerFailed as exc:
        if exc.record is not None and exc.record.iterates:
            annotate(exc.record)
        raise
    return annotate(rec)


def history_csv(record):
    """Convergence history as CSV text with a fixed header."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "objective", "max_violation", "min_zeta", "step_norm"])
    zetas = record.extra.get("min_zeta_history", [float("nan")] * len(record.iterates))
    for k in range(len(record.iterates)):
        w.writerow([
            k,
            repr(float(record.objective_history[k])),
            repr(float(record.constraint_violation_history[k])),
            repr(float(zetas[k])),
            repr(float(record.step_norms[k])),
        ])
    return buf.getvalue()
