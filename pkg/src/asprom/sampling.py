"""Candidate sets in the active subspace, the residual error indicator,
greedy database construction and database persistence.
"""

import base64
import enum
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as la
from scipy.optimize import linprog

from ._validation import as_vector
from .asub import AsBasis, AsMethod
from .exceptions import (
    DatabaseIoError,
    DigestMismatch,
    DimensionMismatch,
    EmptyCandidateSet,
    EmptyDatabase,
    FormatVersionMismatch,
    Infeasible,
    InvalidParameter,
    NoConvergence,
    SingularCalA,
)
from .flutter import prom_spectrum, tracked_modes
from .interp import TupleInterpolator
from .manifolds import truncate_svd
from .rom import (
    PromEntry,
    PromTuple,
    Projection,
    build_entry,
    build_structural_rob,
    default_frequency_band,
    enforce_consistency,
    fluid_snapshots,
)

__all__ = [
    "CandidateMode",
    "CandidateSet",
    "RomConfig",
    "PromDatabase",
    "solve_feasibility",
    "build_candidates",
    "error_indicator",
    "IndicatorEvaluator",
    "greedy_build",
    "save_database",
    "load_database",
    "FORMAT_VERSION",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
CACHE_LIMIT = 4096  # cached HDM block pairs per greedy run


class CandidateMode(enum.Enum):
    SCALED = "scaled"
    PLAIN = "plain"


@dataclass
class CandidateSet:
    xi_r: np.ndarray
    xi: np.ndarray
    c1: float
    c2: float
    n_preliminary: int = 0

    def __len__(self):
        return self.xi_r.shape[0]


@dataclass(frozen=True)
class RomConfig:
    """Reduced-basis sizes.

    ``nf_keep`` caps the fluid dimension, which is fixed for the whole
    database from the POD energy rule (``svd_tol``) at the first sampled
    point. ``freq_band`` lists the sweep frequencies as multiples of the
    highest retained structural frequency. ``exact_rank`` uses the full
    fluid space and every structural mode, which makes each PROM exact at
    its own sampling point.
    """

    nf_keep: int = 20
    ns_keep: int = 4
    freq_band: Optional[tuple] = None
    svd_tol: float = 1e-8
    exact_rank: bool = False

    def to_dict(self):
        return {
            "nf_keep": self.nf_keep, "ns_keep": self.ns_keep,
            "freq_band": None if self.freq_band is None else list(self.freq_band),
            "svd_tol": self.svd_tol, "exact_rank": self.exact_rank,
        }


@dataclass
class PromDatabase:
    entries: List[PromEntry]
    basis: AsBasis
    ref_index: int = 0
    hdm_digest: int = 0
    consistency_applied: bool = False
    history: List[float] = field(default_factory=list)
    budget_exhausted: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    @property
    def centers(self):
        return np.vstack([e.mu_r for e in self.entries])


# Feasibility ----------------------------------------------------------------
def _finite(v):
    return np.where(np.abs(v) >= 1e29, np.sign(v) * np.inf, v)


def solve_feasibility(basis, mu_r, space):
    """Minimum-norm ``mu`` with ``V^T mu = mu_r`` inside the design box.

    Feasibility is decided by a HiGHS LP with zero objective; the
    minimum-norm point is then found by a semismooth Newton iteration on
    the dual, ``mu(nu) = clip(V nu, lb, ub)``.

    Raises
    ------
    Infeasible
        If no point of the box maps to ``mu_r``.
    NoConvergence
        If the dual iteration exceeds ``50 * N_D`` steps.
    """
    v = basis.V_mu
    n, k = v.shape
    mu_r = as_vector(mu_r, "mu_r", size=k)
    lo, hi = _finite(space.lower), _finite(space.upper)
    if space.dim != n:
        raise DimensionMismatch("basis and design space dimensions differ")
    if k == n:
        # square orthonormal basis: the lift is the only preimage
        mu = v @ mu_r
        if space.violation(mu) > 1e-12:
            raise Infeasible("mu_r is not reachable within the design box")
        return np.clip(mu, lo, hi)
    bounds = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(lo, hi)]
    lp = linprog(np.zeros(n), A_eq=v.T, b_eq=mu_r, bounds=bounds, method="highs")
    if lp.status == 2:
        raise Infeasible("mu_r is not reachable within the design box")
    if lp.status != 0:
        raise NoConvergence(f"feasibility LP failed: {lp.message}")

    nu = np.linalg.lstsq(v, np.clip(lp.x, lo, hi), rcond=None)[0]
    scale = 1.0 + np.linalg.norm(mu_r)

    def residual(nu):
        mu = np.clip(v @ nu, lo, hi)
        return mu, mu_r - v.T @ mu

    mu, res = residual(nu)
    for _ in range(50 * n):
        if np.linalg.norm(res) <= 1e-13 * scale:
            return mu
        free = (v @ nu > lo) & (v @ nu < hi)
        jac = v[free].T @ v[free] + 1e-14 * np.eye(k)
        step = la.solve(jac, res, assume_a="pos")
        t = 1.0
        base = np.linalg.norm(res)
        for _ in range(60):
            mu_t, res_t = residual(nu + t * step)
            if np.linalg.norm(res_t) < (1 - 1e-4 * t) * base:
                break
            t *= 0.5
        nu = nu + t * step
        mu, res = mu_t, res_t
    if np.linalg.norm(res) <= 1e-10 * scale:
        return mu
    raise NoConvergence("dual projection iteration did not converge")


def _grid_axes(basis, n_grid, c1, c2, mode):
    mode = CandidateMode(mode)
    if mode is CandidateMode.SCALED:
        s = np.sum(np.abs(basis.V_mu), axis=0)  # diag(sign(V)^T V)
        return [np.linspace(c1 * sk, c2 * sk, n_grid) for sk in s]
    return [np.linspace(c1, c2, n_grid) for _ in range(basis.n_G)]


def build_candidates(basis, space, n_grid, c1, c2, mode=CandidateMode.PLAIN):
    """Tensor grid in AS coordinates, filtered by lift feasibility."""
    if n_grid < 2 or not c1 < c2:
        raise InvalidParameter("need n_grid >= 2 and c1 < c2")
    axes = _grid_axes(basis, n_grid, c1, c2, mode)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, basis.n_G)
    keep_r, keep = [], []
    for p in mesh:
        try:
            mu = solve_feasibility(basis, p, space)
        except Infeasible:
            continue
        keep_r.append(p)
        keep.append(mu)
    if not keep:
        raise EmptyCandidateSet("no feasible candidate in the grid")
    return CandidateSet(np.array(keep_r), np.array(keep), float(c1), float(c2), mesh.shape[0])


# Error indicator --------------------------------------------------------------
class IndicatorEvaluator:
    """Residual indicator for one database state.

    The tuple interpolator is fitted once; HDM blocks are cached per point.
    """

    def __init__(self, db, hdm, interp_kwargs=None, block_cache=None):
        if not db.entries:
            raise EmptyDatabase("database has no entries")
        self.db = db
        self.hdm = hdm
        self.interp = TupleInterpolator(**(interp_kwargs or {})).fit(db)
        self.centers = db.centers
        self.cache = {} if block_cache is None else block_cache

    def _blocks(self, mu):
        key = mu.tobytes()
        blk = self.cache.get(key)
        if blk is None:
            blk = self.hdm.blocks(mu)
            if len(self.cache) < CACHE_LIMIT:
                self.cache[key] = blk
        return blk

    def __call__(self, mu_r):
        mu_r = as_vector(mu_r, "mu_r", size=self.db.basis.n_G)
        j = int(np.argmin(np.linalg.norm(self.centers - mu_r, axis=1)))
        entry = self.db.entries[j]
        tup = self.interp.predict(mu_r)
        if not (np.all(np.isfinite(tup.calA)) and np.all(np.isfinite(tup.calB))):
            return np.inf
        try:
            spec = prom_spectrum(tup)
        except SingularCalA:
            return np.inf
        if np.min(np.abs(spec.eigenvalues)) <= 1e-14 * spec.scale:
            # interpolant unusable here: flag the point as worst approximated
            return np.inf
        i = tracked_modes(spec.eigenvalues, 1)[0]
        q = la.block_diag(entry.V_w, entry.V_u, entry.V_u) @ spec.eigenvectors[:, i]
        q = q / np.linalg.norm(q)
        s = -spec.eigenvalues[i]  # time-domain exponent
        blk = self._blocks(self.db.basis.lift(mu_r))
        bq = blk.calB @ q
        return float(np.linalg.norm(s * (blk.calA @ q) + bq) / np.linalg.norm(bq))


def error_indicator(db, hdm, mu_r, **interp_kwargs):
    """Normalized HDM residual of the reconstructed least-damped PROM mode."""
    return IndicatorEvaluator(db, hdm, interp_kwargs)(mu_r)


# Greedy -------------------------------------------------------------------
def _band(rom, hdm, mu):
    if rom.freq_band is None:
        return None
    srob = build_structural_rob(hdm.operators(mu), hdm.config.ns if rom.exact_rank else rom.ns_keep)
    return np.asarray(rom.freq_band, dtype=float) * float(srob.frequencies.max())


def _resolve_dims(hdm, rom, mu):
    """Fluid/structural dimensions for the whole database."""
    if rom.exact_rank:
        return hdm.config.nf, hdm.config.ns
    ops = hdm.operators(mu)
    srob = build_structural_rob(ops, rom.ns_keep)
    band = _band(rom, hdm, mu)
    band = default_frequency_band(srob) if band is None else band
    snaps = fluid_snapshots(ops, srob, band)
    nf = truncate_svd(snaps, rom.svd_tol, max_dim=rom.nf_keep).kept_dim
    return nf, rom.ns_keep


def greedy_build(hdm, basis, candidates, tol, max_entries, rom, tol_mode="relative",
                 subset_size=None, seed=0, interp_kwargs=None, callback=None):
    """Greedy database construction over a candidate set.

    Parameters
    ----------
    tol : float
        Stopping tolerance on the largest indicator over unsampled candidates;
        relative to the first such maximum when ``tol_mode == "relative"``.
    max_entries : int
        Budget; reaching it sets ``budget_exhausted``.
    subset_size : int, optional
        Evaluate the indicator on a seeded random subset of this size,
        re-drawn every iteration. ``None`` evaluates every candidate.
    """
    if len(candidates) == 0:
        raise EmptyCandidateSet("no candidates")
    if tol_mode not in ("relative", "absolute"):
        raise InvalidParameter("tol_mode must be 'relative' or 'absolute'")
    xi_r = candidates.xi_r
    rng = np.random.default_rng(seed)
    i0 = int(np.argmin(np.linalg.norm(xi_r - xi_r.mean(axis=0), axis=1)))
    mu0 = basis.lift(xi_r[i0])
    nf, ns = _resolve_dims(hdm, rom, mu0)

    def make(i):
        mu = basis.lift(xi_r[i])
        return build_entry(hdm, mu, xi_r[i], nf_keep=nf, ns_keep=ns, freqs=_band(rom, hdm, mu))

    db = PromDatabase(entries=[make(i0)], basis=basis, ref_index=0, hdm_digest=hdm.digest(),
                      consistency_applied=True,
                      meta={"rom": rom.to_dict(), "nf": nf, "ns": ns, "tol": tol,
                            "tol_mode": tol_mode, "sampled_indices": [i0]})
    sampled = {i0}
    cache = {}
    e0 = None
    while True:
        pool = np.array([i for i in range(len(candidates)) if i not in sampled], dtype=int)
        if pool.size == 0:
            break
        if subset_size is not None and pool.size > subset_size:
            pool = np.sort(rng.choice(pool, size=subset_size, replace=False))
        evaluator = IndicatorEvaluator(db, hdm, interp_kwargs, block_cache=cache)
        errs = np.array([evaluator(xi_r[i]) for i in pool])
        k = int(np.argmax(errs))
        top = float(errs[k])
        db.history.append(top)
        if e0 is None:
            e0 = top
        threshold = tol * e0 if tol_mode == "relative" else tol
        if callback is not None:
            callback(len(db.entries), top)
        log.info("greedy: %d entries, max indicator %.3e", len(db.entries), top)
        if top <= threshold:
            break
        if len(db.entries) >= max_entries:
            db.budget_exhausted = True
            break
        i_new = int(pool[k])
        sampled.add(i_new)
        db.meta["sampled_indices"].append(i_new)
        # earlier entries are already aligned with the reference, so only the
        # new one is rotated; re-aligning the others would be the identity up to rounding
        ref = db.entries[db.ref_index]
        db.entries.append(enforce_consistency([ref, make(i_new)], 0)[1])
    return db


# Persistence ----------------------------------------------------------------
def _enc(a):
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d, vector=False):
    raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
    a = np.frombuffer(raw, dtype="<f8").astype(float).reshape(d["rows"], d["cols"])
    return a.reshape(-1) if vector else a


def _payload(db):
    entries = []
    for e in db.entries:
        entries.append({
            "mu_r": _enc(e.mu_r), "mu": _enc(e.mu),
            "calA": _enc(e.tuple.calA), "calB": _enc(e.tuple.calB),
            "nf": e.tuple.nf, "ns": e.tuple.ns,
            "V_w": _enc(e.V_w), "W_w": _enc(e.W_w), "V_u": _enc(e.V_u),
            "frequencies": _enc(e.frequencies), "projection": e.projection.value,
        })
    return {
        "format_version": FORMAT_VERSION,
        "hdm_digest": str(db.hdm_digest),
        "basis": {"method": db.basis.method.value, "V_mu": _enc(db.basis.V_mu),
                  "singular_values": _enc(db.basis.singular_values)},
        "entries": entries,
        "history": [_enc(np.array(db.history))] if db.history else [],
        "ref_index": db.ref_index,
        "consistency_applied": db.consistency_applied,
        "budget_exhausted": db.budget_exhausted,
        "meta": db.meta,
    }


def _checksum(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def database_to_json(db):
    payload = _payload(db)
    payload["checksum"] = _checksum(payload)
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def save_database(db, path):
    """Atomically write ``db`` as a versioned JSON document."""
    text = database_to_json(db)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".db-", suffix=".tmp", dir=directory)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DatabaseIoError(f"cannot write database to {path}: {exc}") from exc


def load_database(path, expected_digest=None, verify_checksum=True):
    """Read a database written by :func:`save_database`.

    Raises
    ------
    DatabaseIoError
        Unreadable, truncated or tampered file.
    FormatVersionMismatch
    DigestMismatch
        If ``expected_digest`` differs from the stored model digest.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatabaseIoError(f"cannot read database {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"unsupported database format {payload.get('format_version') if isinstance(payload, dict) else None}")
    stored = payload.pop("checksum", None)
    if verify_checksum and stored != _checksum(payload):
        raise DatabaseIoError("database checksum mismatch (file modified or corrupted)")
    digest = int(payload["hdm_digest"])
    if expected_digest is not None and digest != int(expected_digest):
        raise DigestMismatch("database was built for a different model configuration")
    try:
        b = payload["basis"]
        basis = AsBasis(_dec(b["V_mu"]), _dec(b["singular_values"], vector=True), AsMethod(b["method"]))
        entries = []
        for e in payload["entries"]:
            tup = PromTuple(_dec(e["calA"]), _dec(e["calB"]), int(e["nf"]), int(e["ns"]))
            entries.append(PromEntry(
                mu_r=_dec(e["mu_r"], vector=True), mu=_dec(e["mu"], vector=True), tuple=tup,
                V_w=_dec(e["V_w"]), W_w=_dec(e["W_w"]), V_u=_dec(e["V_u"]),
                frequencies=_dec(e["frequencies"], vector=True),
                projection=Projection(e["projection"]),
            ))
        history = _dec(payload["history"][0], vector=True).tolist() if payload["history"] else []
    except (KeyError, TypeError, ValueError) as exc:
        raise DatabaseIoError(f"malformed database {path}: {exc}") from exc
    return PromDatabase(
        entries=entries, basis=basis, ref_index=int(payload["ref_index"]), hdm_digest=digest,
        consistency_applied=bool(payload["consistency_applied"]), history=history,
        budget_exhausted=bool(payload.get("budget_exhausted", False)), meta=payload.get("meta", {}),
    )
