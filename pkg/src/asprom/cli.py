"""Command-line pipeline: active subspace, PROM database, design optimization.

Subcommands
-----------
offline   build the active subspace and the PROM database
online    solve the flutter-constrained design problem on a database
verify    run the brute-force oracle checks and report pass/fail
report    print the offline/online reports of an output directory

Exit codes: 0 success, 2 invalid config or failed verification, 3 runtime error.
"""

import argparse
import copy
import json
import logging
import os
import sys
import time

import jsonschema
import numpy as np
import scipy.linalg as la

from .asub import AsBasis, AsMethod, build_alternative_as, build_classical_as, classical_sample_count
from .exceptions import AspromError, DatabaseIoError, InvalidConfig
from .flutter import damping_ratios, prom_spectrum
from .hdm import DesignSpace, HdmConfig, coupled_damping_ratios, generate_hdm
from .interp import TupleInterpolator
from .manifolds import procrustes
from .optimizer import SqpOptions, history_csv, solve_auxiliary, solve_mdao
from .rom import build_entry
from .sampling import (
    CandidateMode,
    RomConfig,
    build_candidates,
    greedy_build,
    load_database,
    save_database,
)

__all__ = [
    "CONFIG_SCHEMA",
    "DEFAULT_CONFIG",
    "load_config",
    "validate_config",
    "build_hdm",
    "run_offline",
    "run_online",
    "run_verify",
    "main",
]

log = logging.getLogger("asprom")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
MAX_VERIFY_NQ = 200

_num = {"type": "number"}
_int = {"type": "integer"}
_opt_num = {"type": ["number", "null"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "hdm": _obj({
        "nf": {"type": "integer", "minimum": 4},
        "ns": {"type": "integer", "minimum": 1},
        "n_params": {"type": "integer", "minimum": 3},
        "half_width": {"type": "number", "exclusiveMinimum": 0},
        "parameter_roles": {"type": "array", "items": {
            "enum": ["fluid_shape", "struct_stiffness", "struct_damping"]}},
        "seed": _int,
        "planted_rank": {"type": ["integer", "null"], "minimum": 1},
        "calibration_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "gamma0": _opt_num,
    }, required=("nf", "ns", "n_params")),
    "as_method": {"enum": ["none", "classical", "alternative"]},
    "as_tolerance": {"type": "number", "minimum": 0, "maximum": 1},
    "as_dim_override": {"type": ["integer", "null"], "minimum": 1},
    "classical": _obj({"alpha": {"type": "number", "exclusiveMinimum": 0},
                       "beta": {"type": "number", "exclusiveMinimum": 0}}),
    "sampling": _obj({
        "n_grid": {"type": "integer", "minimum": 2},
        "c1": _opt_num, "c2": _opt_num,
        "mode": {"enum": ["scaled", "plain"]},
        "greedy_tol": {"type": "number", "minimum": 0},
        "tol_mode": {"enum": ["relative", "absolute"]},
        "max_entries": {"type": "integer", "minimum": 1},
        "subset_size": {"type": ["integer", "null"], "minimum": 1},
    }),
    "rom": _obj({
        "nf_keep": {"type": "integer", "minimum": 1},
        "ns_keep": {"type": ["integer", "null"], "minimum": 1},
        "freq_band": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0},
                      "minItems": 1},
        "svd_tol": {"type": "number", "minimum": 0, "maximum": 1},
        "exact_rank": {"type": "boolean"},
    }),
    "optimizer": _obj({
        "mu0": {"type": ["array", "null"], "items": _num},
        "zeta_lb": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "max_iter": {"type": "integer", "minimum": 1},
        "tol_kkt": {"type": "number", "minimum": 0},
        "n_track": {"type": "integer", "minimum": 1},
    }),
    "interp": _obj({
        "kernel": {"enum": ["thin_plate", "gaussian"]},
        "shape": {"type": "number", "exclusiveMinimum": 0},
        "regularization": {"type": "number", "minimum": 0},
    }),
    "seed": _int,
    "output_dir": {"type": "string"},
}, required=("hdm",))

DEFAULT_CONFIG = {
    "hdm": {"half_width": 0.3, "planted_rank": 4, "calibration_factor": 1.5, "gamma0": None},
    "as_method": "alternative",
    "as_tolerance": 1e-4,
    "as_dim_override": None,
    "classical": {"alpha": 10.0, "beta": 6.0},
    "sampling": {"n_grid": 3, "c1": None, "c2": None, "mode": "scaled", "greedy_tol": 0.04,
                 "tol_mode": "relative", "max_entries": 60, "subset_size": None},
    "rom": {"nf_keep": 20, "ns_keep": None, "freq_band": None, "svd_tol": 1e-8, "exact_rank": False},
    "optimizer": {"mu0": None, "zeta_lb": 4.75e-3, "max_iter": 100, "tol_kkt": 1e-6, "n_track": 6},
    "interp": {"kernel": "thin_plate", "shape": 1.0, "regularization": 1e-12},
    "seed": 0,
    "output_dir": "out",
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw):
    """Schema-check ``raw`` and fill in defaults.

    Raises
    ------
    InvalidConfig
        Unknown keys, wrong types or inconsistent values.
    """
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidConfig(f"config error at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULT_CONFIG, raw)
    s = cfg["sampling"]
    # default candidate box: half the image of the design box (scaled mode)
    hw = cfg["hdm"]["half_width"]
    s["c1"] = -0.5 * hw if s["c1"] is None else s["c1"]
    s["c2"] = 0.5 * hw if s["c2"] is None else s["c2"]
    if not s["c1"] < s["c2"]:
        raise InvalidConfig("sampling.c1 must be smaller than sampling.c2")
    h = cfg["hdm"]
    roles = h.get("parameter_roles")
    if roles is not None and len(roles) != h["n_params"]:
        raise InvalidConfig("hdm.parameter_roles needs one entry per parameter")
    mu0 = cfg["optimizer"]["mu0"]
    if mu0 is not None and len(mu0) != h["n_params"]:
        raise InvalidConfig("optimizer.mu0 must have n_params entries")
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    return validate_config(raw)


def _default_roles(n, ns):
    n_stiff = max(1, min(ns, round(0.3 * n)))
    n_damp = max(1, round(0.3 * n))
    n_fluid = n - n_stiff - n_damp
    if n_fluid < 1:
        raise InvalidConfig("n_params too small for the three parameter roles")
    return ["fluid_shape"] * n_fluid + ["struct_stiffness"] * n_stiff + ["struct_damping"] * n_damp


def build_hdm(cfg):
    h = cfg["hdm"]
    n = h["n_params"]
    hcfg = HdmConfig(
        nf=h["nf"], ns=h["ns"], design_space=DesignSpace.symmetric(n, h["half_width"]),
        parameter_roles=h.get("parameter_roles") or _default_roles(n, h["ns"]),
        seed=h.get("seed", cfg["seed"]), gamma0=h["gamma0"],
        zeta_lb=cfg["optimizer"]["zeta_lb"], calibration_factor=h["calibration_factor"],
        planted_rank=h["planted_rank"],
    )
    return generate_hdm(hcfg)


def _mu0(cfg, hdm):
    mu0 = cfg["optimizer"]["mu0"]
    return hdm.design_space.center if mu0 is None else np.asarray(mu0, dtype=float)


def _rom(cfg):
    r = cfg["rom"]
    band = None if r["freq_band"] is None else tuple(r["freq_band"])
    ns_keep = cfg["hdm"]["ns"] if r["ns_keep"] is None else r["ns_keep"]
    return RomConfig(nf_keep=r["nf_keep"], ns_keep=ns_keep, freq_band=band,
                     svd_tol=r["svd_tol"], exact_rank=r["exact_rank"])


def _sqp_opts(cfg):
    o = cfg["optimizer"]
    return SqpOptions(max_iter=o["max_iter"], tol_kkt=o["tol_kkt"])


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _build_basis(cfg, hdm, report):
    method = AsMethod(cfg["as_method"])
    tol, override = cfg["as_tolerance"], cfg["as_dim_override"]
    if method is AsMethod.NONE:
        report["n_snapshots"] = 0
        return AsBasis.identity(hdm.n_params)
    if method is AsMethod.CLASSICAL:
        c = cfg["classical"]
        basis, snaps = build_classical_as(hdm.surrogate_objective, hdm.design_space,
                                          c["alpha"], c["beta"], tolerance=tol,
                                          seed=cfg["seed"], n_override=override)
        report["N_S"] = classical_sample_count(c["alpha"], c["beta"], hdm.n_params)
        report["n_snapshots"] = len(snaps.points)
        return basis
    opts = _sqp_opts(cfg)
    basis, snaps = build_alternative_as(lambda m: solve_auxiliary(hdm, m, opts), _mu0(cfg, hdm),
                                        tolerance=tol, n_override=override)
    report["n_snapshots"] = snaps.matrix.shape[1]
    report["auxiliary"] = {"status": snaps.status, "complete": snaps.complete,
                           "n_iter": snaps.increments.shape[1]}
    return basis


def run_offline(cfg, out_dir=None):
    """Active subspace and greedy database; writes ``db.json`` and ``offline_report.json``.

    Returns
    -------
    (AsBasis, PromDatabase, dict)
    """
    out_dir = out_dir or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    report = {"as_method": cfg["as_method"], "status": "RUNNING"}
    report_path = os.path.join(out_dir, "offline_report.json")
    try:
        hdm = build_hdm(cfg)
        report["hdm_digest"] = str(hdm.digest())
        t0 = time.perf_counter()
        basis = _build_basis(cfg, hdm, report)
        report["n_G"] = basis.n_G
        report["as_singular_values"] = basis.singular_values.tolist()
        report["wall_clock_as"] = time.perf_counter() - t0

        s = cfg["sampling"]
        t1 = time.perf_counter()
        cands = build_candidates(basis, hdm.design_space, s["n_grid"], s["c1"], s["c2"],
                                 CandidateMode(s["mode"]))
        report["candidates"] = {"preliminary": cands.n_preliminary, "feasible": len(cands)}
        db = greedy_build(hdm, basis, cands, s["greedy_tol"], s["max_entries"], _rom(cfg),
                          tol_mode=s["tol_mode"], subset_size=s["subset_size"],
                          seed=cfg["seed"], interp_kwargs=cfg["interp"])
        report["wall_clock_sampling"] = time.perf_counter() - t1
        report["N_DB"] = len(db)
        report["greedy_history"] = list(db.history)
        report["budget_exhausted"] = db.budget_exhausted
        save_database(db, os.path.join(out_dir, "db.json"))
        report["status"] = "OK"
        return basis, db, report
    except Exception as exc:
        report["status"] = "FAILED"
        report["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        _write_json(report_path, report)


def run_online(cfg, db_path, out_dir=None):
    """Design optimization on a stored database.

    Writes ``convergence.csv`` and ``summary.json``; never modifies the database.
    """
    out_dir = out_dir or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    hdm = build_hdm(cfg)
    db = load_database(db_path, expected_digest=hdm.digest())
    o = cfg["optimizer"]
    rec = solve_mdao(hdm, db, o["zeta_lb"], _mu0(cfg, hdm), _sqp_opts(cfg),
                     n_track=o["n_track"], interp_kwargs=cfg["interp"])
    mu = rec.extra["mu"]
    rep = rec.extra["damping_report"]
    summary = {
        "status": rec.status.value,
        "n_iter": rec.n_iter,
        "mu": mu.tolist(),
        "mu_r": rec.x.tolist(),
        "objective": float(-rec.objective),
        "min_zeta": rep.min_zeta,
        "zeta_lb": o["zeta_lb"],
        "max_violation": float(rec.constraint_violation_history[-1]),
        "nearest_sample_distance": rec.extra["nearest_sample_distance"][-1],
        "N_DB": len(db),
        "n_G": db.basis.n_G,
    }
    if hdm.config.nf + 2 * hdm.config.ns <= MAX_VERIFY_NQ:
        summary["hdm_min_zeta"] = float(coupled_damping_ratios(hdm.blocks(mu))[0])
    with open(os.path.join(out_dir, "convergence.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(history_csv(rec))
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return rec, summary


# Verification -----------------------------------------------------------------
def _check(name, measured, tol, detail=None):
    ok = bool(np.isfinite(measured) and measured <= tol)
    out = {"name": name, "status": "PASS" if ok else "FAIL", "measured": float(measured),
           "tolerance": tol}
    if detail:
        out["detail"] = detail
    return out


def _verify_spectra(hdm, rng):
    cfg = hdm.config
    mu = hdm.design_space.lower + rng.random(hdm.n_params) * (
        hdm.design_space.upper - hdm.design_space.lower)
    e = build_entry(hdm, mu, mu, nf_keep=cfg.nf, ns_keep=cfg.ns)
    prom = damping_ratios(prom_spectrum(e.tuple), 0.0).zetas
    full = coupled_damping_ratios(hdm.blocks(mu))
    return _check("hdm_vs_prom_damping", float(np.max(np.abs(prom - full))), 1e-8)


def _verify_procrustes(rng, n_random=2000):
    ref = la.qr(rng.standard_normal((20, 4)), mode="economic")[0]
    other = la.qr(rng.standard_normal((20, 4)), mode="economic")[0]
    q = procrustes(ref, other)
    best = np.linalg.norm(ref - other @ q)
    worst_gap = np.inf
    for _ in range(n_random):
        r = la.qr(rng.standard_normal((4, 4)))[0]
        worst_gap = min(worst_gap, np.linalg.norm(ref - other @ r) - best)
    return _check("procrustes_optimality", max(-worst_gap, 0.0), 0.0)


def _verify_as(hdm):
    basis, _ = build_classical_as(hdm.surrogate_objective, hdm.design_space, 10.0, 6.0,
                                  tolerance=1e-10, seed=0)
    if basis.n_G != hdm.planted_basis.shape[1]:
        return _check("as_subspace_recovery", np.inf, 1e-6,
                      f"n_G = {basis.n_G}, planted {hdm.planted_basis.shape[1]}")
    angle = float(np.max(la.subspace_angles(basis.V_mu, hdm.planted_basis)))
    return _check("as_subspace_recovery", angle, 1e-6)


def _verify_db(hdm, db_path):
    checks = []
    try:
        db = load_database(db_path, expected_digest=hdm.digest())
    except AspromError as exc:
        checks.append({"name": "database_consistency", "status": "FAIL",
                       "measured": None, "tolerance": None,
                       "detail": f"{type(exc).__name__}: {exc}"})
        return checks
    checks.append({"name": "database_consistency", "status": "PASS" if db.consistency_applied
                   else "FAIL", "measured": None, "tolerance": None})
    interp = TupleInterpolator(regularization=0.0).fit(db)
    worst = 0.0
    for e in db.entries:
        got = interp.predict(e.mu_r).blocks()
        for name, block in e.tuple.blocks().items():
            worst = max(worst, np.linalg.norm(got[name] - block) / max(np.linalg.norm(block), 1e-300))
    checks.append(_check("interpolation_reproduction", worst, 1e-9))
    return checks


def run_verify(cfg, db_path=None, out_dir=None):
    """Brute-force oracle suite; writes ``verify_report.json``.

    Returns
    -------
    dict
        ``{"checks": [...], "passed": bool}``.
    """
    h = cfg["hdm"]
    nq = h["nf"] + 2 * h["ns"]
    if nq > MAX_VERIFY_NQ:
        raise InvalidConfig(f"verify is limited to N_q <= {MAX_VERIFY_NQ} (got {nq})")
    out_dir = out_dir or cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    hdm = build_hdm(cfg)
    rng = np.random.default_rng(cfg["seed"])
    checks = [_verify_spectra(hdm, rng), _verify_procrustes(rng), _verify_as(hdm)]
    if db_path is not None:
        checks.extend(_verify_db(hdm, db_path))
    report = {"checks": checks, "passed": all(c["status"] == "PASS" for c in checks)}
    _write_json(os.path.join(out_dir, "verify_report.json"), report)
    return report


def _print_report(out_dir, stream):
    found = False
    for name in ("offline_report.json", "summary.json", "verify_report.json"):
        path = os.path.join(out_dir, name)
        if not os.path.exists(path):
            continue
        found = True
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        stream.write(f"== {name}\n")
        if name == "offline_report.json":
            keys = ("status", "as_method", "n_snapshots", "n_G", "N_DB", "budget_exhausted",
                    "wall_clock_as", "wall_clock_sampling")
        elif name == "summary.json":
            keys = ("status", "n_iter", "objective", "min_zeta", "hdm_min_zeta", "zeta_lb")
        else:
            for c in data["checks"]:
                stream.write(f"  {c['name']:<28} {c['status']}\n")
            continue
        for k in keys:
            if k in data:
                stream.write(f"  {k:<20} {data[k]}\n")
    if not found:
        raise DatabaseIoError(f"no reports found in {out_dir}")


def _parser():
    p = argparse.ArgumentParser(prog="asprom", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("offline", "online", "verify", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "report")
        sp.add_argument("--db", required=name == "online")
        sp.add_argument("--out")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            _print_report(args.out or "out", sys.stdout)
            return EXIT_OK
        cfg = load_config(args.config)
        out = args.out or cfg["output_dir"]
        if args.command == "offline":
            _, db, rep = run_offline(cfg, out)
            print(f"offline: n_G = {rep['n_G']}, N_DB = {rep['N_DB']}")
        elif args.command == "online":
            _, summary = run_online(cfg, args.db, out)
            print(f"online: {summary['status']}, objective = {summary['objective']:.6g}, "
                  f"min zeta = {summary['min_zeta']:.4g}")
        else:
            rep = run_verify(cfg, args.db, out)
            for c in rep["checks"]:
                print(f"{c['name']:<28} {c['status']}")
            return EXIT_OK if rep["passed"] else EXIT_INVALID
        return EXIT_OK
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AspromError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
