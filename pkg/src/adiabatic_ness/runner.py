"""Scenario configuration, presets, eta-sweep orchestration and artifacts.

A run directory holds ``manifest`` (JSON), ``ness_report.csv``,
``rate_report.csv``, ``certificates.csv`` and ``diagnostics.csv``.  Work is
split into cells that are pure functions of ``(config, cell id)``; cells run
in spawned single-threaded worker processes and are merged by id, so the CSV
files do not depend on the worker count.
"""

import copy
import csv
import hashlib
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, NessError
from .model import build_geometry, build_model, switching_from_config
from .spectral import FermiParams

SCHEMA_VERSION = 1
TOL_FLOOR = 1e-15
MONOTONE_FLOOR = 1e-12     # differences below roundoff carry no ordering

DEFAULT_TOLERANCES = {
    "tail_tol": 1e-3,          # truncation tail of omega_eta
    "route_tol": 1e-4,         # Xi_0 time vs Cook route
    "cert_rel": 1e-6,          # Cauchy certificate relative slack
    "slack": 0.1,              # monotonicity slack
    "commutator": 1e-3,        # |[rho_ad, K(1)] f| / (|f| |K(1)|)
    "hermiticity": 1e-8,
    "cross_slack": 1e-8,       # corollary cross term vs projector error
}

SMALL_GEOMETRY = {"h": 1.0, "L": 100.5, "a": 5.0, "a_tilde": 2.5}
SMALL_POTENTIAL = {"kind": "double_well", "amplitudes": [-1.0, -1.0],
                   "centers": [-1.0, 1.0], "radius": 1.25}


def _reference():
    from .ness import REFERENCE, REFERENCE_ETAS, REFERENCE_PANEL
    return copy.deepcopy(REFERENCE), list(REFERENCE_ETAS), copy.deepcopy(REFERENCE_PANEL)


def presets():
    """Named scenario configurations (plain mappings)."""
    ref, ref_etas, panel = _reference()
    synthetic = {"etas": [0.2, 0.1, 0.05, 0.025], "dt": 0.02,
                 "families": {"no-crossing": {"window": [0.8, 1.2]},
                              "crossing": {"window": [0.15, 0.4]}}}
    small_diag = {"geometry": dict(SMALL_GEOMETRY), "potential": dict(SMALL_POTENTIAL)}
    out = {}
    out["null-bias"] = {
        "schema_version": SCHEMA_VERSION, "name": "null-bias",
        "geometry": dict(SMALL_GEOMETRY), "potential": dict(SMALL_POTENTIAL),
        "bias": {"v_minus": 0.0, "v_plus": 0.0}, "fermi": dict(ref["fermi"]),
        "etas": [0.2, 0.05], "panel": copy.deepcopy(panel), "t_shift": 2.0,
        "acceptance": {"delta_max": 1e-9, "monotone": True, "t_shift_gap": 1e-9,
                       "witness": False},
        "diagnostics": {},
    }
    out["small"] = {
        "schema_version": SCHEMA_VERSION, "name": "small",
        "geometry": dict(SMALL_GEOMETRY), "potential": dict(SMALL_POTENTIAL),
        "bias": {"v_minus": 0.0, "v_plus": 0.5}, "fermi": dict(ref["fermi"]),
        "etas": [0.4, 0.2], "panel": copy.deepcopy(panel),
        "acceptance": {},
    }
    out["reference-desk"] = {
        "schema_version": SCHEMA_VERSION, "name": "reference-desk",
        **copy.deepcopy(ref), "etas": ref_etas, "panel": copy.deepcopy(panel),
        "t_shift": 2.0,
        "acceptance": {"delta_max": 5e-2, "monotone": True, "t_shift_gap": 1e-2,
                       "witness": True, "corollary": True},
        "synthetic": synthetic, "diagnostics": small_diag,
    }
    mem = copy.deepcopy(ref)
    mem["fermi"] = {"kT": 0.01, "mu": -0.32785}
    out["memory"] = {
        "schema_version": SCHEMA_VERSION, "name": "memory", **mem,
        "etas": [0.16, 0.04], "panel": copy.deepcopy(panel),
        "acceptance": {"memory_gap": 1e-2},
    }
    return out


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    raw: dict
    etas: list
    tolerances: dict
    acceptance: dict
    workers: int = 1
    out: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.raw.get("name", "run")

    def physics(self):
        """The blocks that determine the numerical results."""
        keys = ("geometry", "potential", "bias", "switching", "fermi", "panel", "t_shift",
                "n_records")
        return {k: self.raw[k] for k in keys if k in self.raw}

    def canonical(self):
        d = copy.deepcopy(self.raw)
        d["etas"] = self.etas
        d["tolerances"] = self.tolerances
        d["acceptance"] = self.acceptance
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def content_hash(self):
        """Git-style blob hash of the canonical configuration."""
        data = self.canonical().encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _number(block, key, where, positive=False, allow_zero=True):
    try:
        v = float(block[key])
    except KeyError:
        raise ConfigError(f"{where}.{key}: missing") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: not a number") from None
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: not finite")
    if positive and not (v > 0 or (allow_zero and v == 0)):
        raise ConfigError(f"{where}.{key}: must be positive, got {v}")
    return v


def validate_config(raw, tolerance_scale=1.0, workers=None, out=None) -> RunConfig:
    """Check a raw mapping against the schema and return a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    raw = copy.deepcopy(raw)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    for block in ("geometry", "fermi"):
        if not isinstance(raw.get(block), dict):
            raise ConfigError(f"{block}: missing block")
    build_geometry(raw["geometry"])
    kT = _number(raw["fermi"], "kT", "fermi", positive=True, allow_zero=False)
    _number(raw["fermi"], "mu", "fermi")
    raw["fermi"] = {"kT": kT, "mu": float(raw["fermi"]["mu"])}
    for k in ("v_minus", "v_plus"):
        if k in (raw.get("bias") or {}):
            _number(raw["bias"], k, "bias")
    try:
        switching_from_config(raw.get("switching"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"switching: {exc}") from None
    etas = raw.get("etas")
    if not isinstance(etas, (list, tuple)) or not etas:
        raise ConfigError("etas: non-empty list required")
    try:
        etas = [float(e) for e in etas]
    except (TypeError, ValueError):
        raise ConfigError("etas: entries must be numbers") from None
    if any(not (math.isfinite(e) and e > 0) for e in etas):
        raise ConfigError("etas: entries must be strictly positive")
    if len(set(etas)) != len(etas):
        raise ConfigError("etas: duplicate entries")
    etas = sorted(etas, reverse=True)
    scale = float(tolerance_scale)
    if not (math.isfinite(scale) and scale > 0):
        raise ConfigError("tolerance-scale: must be positive")
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in (raw.get("tolerances") or {}).items():
        if k not in tol:
            raise ConfigError(f"tolerances.{k}: unknown tolerance")
        tol[k] = _number(raw["tolerances"], k, "tolerances", positive=True)
    tol = {k: v * scale if k != "slack" else v for k, v in tol.items()}
    acc = dict(raw.get("acceptance") or {})
    for k in ("delta_max", "t_shift_gap", "memory_gap"):
        if k in acc:
            acc[k] = _number(acc, k, "acceptance", positive=True) * (scale if k != "memory_gap" else 1.0)
    for k, v in list(tol.items()) + [(k, acc[k]) for k in ("delta_max", "t_shift_gap") if k in acc]:
        if v < TOL_FLOOR:
            raise ConfigError(f"tolerances.{k}: {v:g} below machine-precision floor {TOL_FLOOR:g}")
    panel = raw.get("panel")
    if panel is not None:
        if not isinstance(panel, dict) or "windows" not in panel:
            raise ConfigError("panel: mapping with 'windows' required")
        _number(panel, "delta", "panel", positive=True, allow_zero=False)
    if workers is None:
        workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers: must be >= 1")
    syn = raw.get("synthetic")
    if syn is not None:
        from .adiabatic import SYNTHETIC_FAMILIES
        for name in syn.get("families", {}):
            if name not in SYNTHETIC_FAMILIES:
                raise ConfigError(f"synthetic.families: unknown family {name!r}")
        if any(not float(e) > 0 for e in syn.get("etas", [])):
            raise ConfigError("synthetic.etas: entries must be strictly positive")
    return RunConfig(raw, etas, tol, acc, workers, out if out is not None else raw.get("out"))


def load_config(path, **kw) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML: {exc}") from None
    return validate_config(raw, **kw)


def dump_config(raw) -> str:
    return yaml.safe_dump(raw, sort_keys=False)


# --------------------------------------------------------------------------
# Cells (executed in worker processes)
# --------------------------------------------------------------------------

_CACHE = {}


def _scenario(physics):
    """Model, switching, Fermi data, rho_ad and panel for a physics block (cached)."""
    key = json.dumps(physics, sort_keys=True)
    if key not in _CACHE:
        from .ness import assemble_rho_ad, branch_table, reference_panel
        hset = build_model(physics)
        chi = switching_from_config(physics.get("switching"))
        fermi = FermiParams(**physics["fermi"])
        table = branch_table(hset)
        rho = assemble_rho_ad(hset, table, fermi)
        panel = reference_panel(hset, physics.get("panel")).vectors
        _CACHE.clear()
        _CACHE[key] = (hset, chi, fermi, table, rho, panel)
    return _CACHE[key]


def ness_job(physics, tail_tol, eta, col):
    """One ``(eta, column)`` cell of the NESS sweep."""
    from .ness import ness_cell
    try:
        hset, chi, fermi, table, rho, panel = _scenario(physics)
        f = panel[:, col:col + 1]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            row = ness_cell(hset, chi, eta, f, rho, rho.apply(f), tail_tol,
                            physics.get("t_shift"), n_records=int(physics.get("n_records", 60)))
        return {"ok": True, "eta": eta, "col": col, "delta": row.delta, "delta_t": row.delta_t,
                "weights": row.pp_weights.tolist(), "s_min": row.s_min, "n_steps": row.n_steps,
                "tail_bound": row.tail_bound,
                "b_times": np.asarray(row.b_times).tolist(),
                "b_errors": np.asarray(row.b_errors).tolist(),
                "projector_errors": np.asarray(row.projector_errors).tolist(),
                "cross_term": row.cross_term,
                "certificates": [{"kind": c.kind, "pairs": c.pairs.tolist(),
                                  "increments": c.increments[:, 0].tolist(),
                                  "bounds": np.asarray(c.bounds).tolist(),
                                  "norm": float(c.input_norms[0])} for c in row.certificates],
                "warnings": sorted({str(w.message) for w in caught}),
                "runtime": row.runtime}
    except Exception as exc:                       # noqa: BLE001 - reported per cell
        return {"ok": False, "eta": eta, "col": col, "error": type(exc).__name__,
                "message": str(exc)}


def rate_job(family, eta, j, dt):
    """One ``(family, eta)`` cell of the synthetic rate sweep."""
    from .adiabatic import SYNTHETIC_FAMILIES, b_eta, family_table
    from .model import SwitchingFunction
    try:
        fam = SYNTHETIC_FAMILIES[family]()
        tr = b_eta(fam, SwitchingFunction(), eta, j, dt=dt, table=family_table(fam))
        return {"ok": True, "family": family, "eta": eta, "times": tr.times.tolist(),
                "errors": tr.errors.tolist()}
    except Exception as exc:                       # noqa: BLE001
        return {"ok": False, "family": family, "eta": eta, "error": type(exc).__name__,
                "message": str(exc)}


_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMBA_NUM_THREADS")


def run_cells(jobs, workers):
    """Run ``[(key, fn, args)]`` in a spawned pool; return ``{key: result}``."""
    saved = {k: os.environ.get(k) for k in _THREAD_VARS}
    os.environ.update({k: "1" for k in _THREAD_VARS})
    results = {}
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as ex:
            futs = {key: ex.submit(fn, *args) for key, fn, args in jobs}
            for key, fut in futs.items():
                try:
                    results[key] = fut.result()
                except BrokenProcessPool as exc:
                    results[key] = {"ok": False, "error": "BrokenProcessPool", "message": str(exc)}
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v
    return results


# --------------------------------------------------------------------------
# Merging and verdicts
# --------------------------------------------------------------------------

def _fmt(x):
    return f"{x:.12e}"


def _panel_size(physics):
    from .ness import reference_panel
    hset = build_model(physics)
    return reference_panel(hset, physics.get("panel")).vectors.shape[1]


@dataclass
class SweepResult:
    etas: list
    cells: dict
    n_cols: int
    failed: list

    def warnings(self):
        """Distinct cell warnings, keyed by eta."""
        out = {}
        for (e, _), c in sorted(self.cells.items()):
            for msg in c.get("warnings", []):
                out.setdefault(f"{e:.6g}", [])
                if msg not in out[f"{e:.6g}"]:
                    out[f"{e:.6g}"].append(msg)
        return out

    def rows(self):
        out = []
        for e in self.etas:
            cs = [self.cells.get((e, c)) for c in range(self.n_cols)]
            if any(c is None or not c["ok"] for c in cs):
                out.append({"eta": e, "failed": True})
                continue
            first = cs[0]
            b = np.asarray(first["b_errors"])
            out.append({
                "eta": e, "failed": False,
                "delta": max(c["delta"] for c in cs),
                "delta_t": max(c["delta_t"] for c in cs),
                "columns": [c["delta"] for c in cs],
                "weights": first["weights"], "s_min": first["s_min"],
                "n_steps": first["n_steps"], "tail_bound": first["tail_bound"],
                "b_sup": b.max(axis=0).tolist() if b.size else [],
                "projector_errors": first["projector_errors"],
                "cross_term": first["cross_term"],
            })
        return out


def write_ness_csv(path, rows, predicted, final):
    nj = len(predicted)
    ncol = max((len(r.get("columns", [])) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["eta", "status", "delta", "delta_t", "s_min", "n_steps", "tail_bound"]
                    + [f"column_{i}" for i in range(ncol)]
                    + [f"weight_{j}" for j in range(nj)]
                    + [f"pred_weight0_{j}" for j in range(nj)]
                    + [f"pred_weight1_{j}" for j in range(nj)]
                    + [f"b_sup_{j}" for j in range(nj)]
                    + [f"corollary_{j}" for j in range(nj)] + ["cross_term"])
        for r in rows:
            if r["failed"]:
                wr.writerow([f"{r['eta']:.6g}", "failed"])
                continue
            wr.writerow([f"{r['eta']:.6g}", "ok", _fmt(r["delta"]), _fmt(r["delta_t"]),
                         _fmt(r["s_min"]), str(r["n_steps"]), _fmt(r["tail_bound"])]
                        + [_fmt(x) for x in r["columns"]]
                        + [_fmt(x) for x in r["weights"]]
                        + [_fmt(x) for x in predicted] + [_fmt(x) for x in final]
                        + [_fmt(x) for x in r["b_sup"]]
                        + [_fmt(x) for x in r["projector_errors"]] + [_fmt(r["cross_term"])])


def write_certificates_csv(path, sweep: SweepResult, rel):
    ok = True
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["eta", "column", "kind", "s", "t", "increment", "bound", "within_bound"])
        for e in sweep.etas:
            for c in range(sweep.n_cols):
                cell = sweep.cells.get((e, c))
                if not cell or not cell["ok"]:
                    continue
                for cert in cell["certificates"]:
                    for (s, t), inc, b in zip(cert["pairs"], cert["increments"], cert["bounds"]):
                        good = inc <= b * cert["norm"] * (1 + rel) + 1e-13
                        ok &= good
                        wr.writerow([f"{e:.6g}", c, cert["kind"], f"{s:.10g}", f"{t:.10g}",
                                     _fmt(inc), _fmt(b * cert["norm"]), int(good)])
    return ok


def _fit(etas, values):
    from .adiabatic import fit_exponent
    return fit_exponent(etas, values)


def write_rate_csv(path, rate_rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label", "eta", "sup_error", "interval_0", "interval_1", "interval_2",
                     "fitted_exponent", "predicted_exponent"])
        for r in rate_rows:
            iv = list(r["intervals"]) + [None] * (3 - len(r["intervals"]))
            wr.writerow([r["label"], f"{r['eta']:.6g}", _fmt(r["sup"])]
                        + ["" if v is None else _fmt(v) for v in iv]
                        + [f"{r['fit']:.6f}", f"{r['predicted']:.6f}"])


def write_diagnostics_csv(path, entries):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["check", "value", "threshold", "status"])
        for name, value, thr, status in entries:
            v = _fmt(value) if isinstance(value, float) else str(value)
            t = _fmt(thr) if isinstance(thr, float) else ("" if thr is None else str(thr))
            wr.writerow([name, v, t, status])


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def sweep(cfg: RunConfig, workers=None):
    """Dispatch the ``(eta, column)`` cells and merge them."""
    physics = cfg.physics()
    if "panel" not in physics:
        from .ness import REFERENCE_PANEL
        physics["panel"] = copy.deepcopy(REFERENCE_PANEL)
    n_cols = _panel_size(physics)
    jobs = [((e, c), ness_job, (physics, cfg.tolerances["tail_tol"], e, c))
            for e in cfg.etas for c in range(n_cols)]
    cells = run_cells(jobs, workers or cfg.workers)
    failed = [{"cell": list(k), "error": v["error"], "message": v["message"]}
              for k, v in sorted(cells.items()) if not v["ok"]]
    return SweepResult(cfg.etas, cells, n_cols, failed)


def synthetic_rates(cfg: RunConfig, workers=None):
    from .adiabatic import CrossingPlan, SYNTHETIC_FAMILIES, family_table
    from .model import SwitchingFunction
    syn = cfg.raw.get("synthetic") or {}
    etas = sorted((float(e) for e in syn.get("etas", [])), reverse=True)
    fams = syn.get("families", {})
    dt = float(syn.get("dt", 0.02))
    jobs = [((name, e), rate_job, (name, e, int(spec.get("branch", 0)), dt))
            for name, spec in fams.items() for e in etas]
    cells = run_cells(jobs, workers or cfg.workers) if jobs else {}
    rows, verdicts, failed = [], {}, []
    chi = SwitchingFunction()
    for name, spec in fams.items():
        res = [cells[(name, e)] for e in etas]
        bad = [r for r in res if not r["ok"]]
        if bad:
            failed += [{"cell": [name, r["eta"]], "error": r["error"], "message": r["message"]}
                       for r in bad]
            continue
        plan = CrossingPlan.from_table(family_table(SYNTHETIC_FAMILIES[name]()), chi)
        sups, ivs = [], []
        for e, r in zip(etas, res):
            t, err = np.asarray(r["times"]), np.asarray(r["errors"])
            sups.append(float(err.max()))
            if plan is None:
                ivs.append([sups[-1]])
            else:
                ivs.append([float(err[(t >= lo) & (t <= hi)].max(initial=0.0))
                            for lo, hi in plan.intervals(e, float(t.min()))])
        fit = _fit(etas, sups)
        pred = plan.predicted_exponent() if plan else 1.0
        for e, s, iv in zip(etas, sups, ivs):
            rows.append({"label": name, "eta": e, "sup": s, "intervals": iv, "fit": fit,
                         "predicted": pred})
        lo, hi = spec.get("window", [-np.inf, np.inf])
        mono = bool(np.all(np.diff(sups) <= cfg.tolerances["slack"] * np.array(sups[:-1])))
        verdicts[f"rate:{name}"] = {"value": fit, "window": [lo, hi],
                                    "pass": bool(lo <= fit <= hi and mono), "monotone": mono}
    return rows, verdicts, failed


def lattice_rates(sweep_res: SweepResult):
    rows = [r for r in sweep_res.rows() if not r["failed"]]
    out = []
    if not rows or not rows[0]["b_sup"]:
        return out
    etas = [r["eta"] for r in rows]
    for j in range(len(rows[0]["b_sup"])):
        sups = [r["b_sup"][j] for r in rows]
        fit = _fit(etas, sups) if all(s > 0 for s in sups) else float("nan")
        for e, s in zip(etas, sups):
            out.append({"label": f"lattice-branch-{j}", "eta": e, "sup": s, "intervals": [s],
                        "fit": fit, "predicted": 1.0})
    return out


def structural_entries(cfg: RunConfig):
    from .ness import structural_checks
    physics = cfg.physics()
    hset, chi, fermi, table, rho, panel = _scenario({**physics, "panel": physics.get("panel")
                                                      or _reference()[2]})
    want_witness = cfg.acceptance.get("witness")
    st = structural_checks(rho, panel, witness=want_witness is not None)
    entries = [("commutator", st["commutator"], cfg.tolerances["commutator"],
                "pass" if st["commutator"] <= cfg.tolerances["commutator"] else "fail"),
               ("pp_commutator", st["pp_commutator"], 1e-8,
                "pass" if st["pp_commutator"] <= 1e-8 else "fail"),
               ("pp_ac_cross", st["pp_ac_cross"], 1e-6,
                "pass" if st["pp_ac_cross"] <= 1e-6 else "fail")]
    G = panel.conj().T @ rho.apply(panel)
    herm = float(np.max(np.abs(G - G.conj().T)))
    entries.append(("hermiticity", herm, cfg.tolerances["hermiticity"],
                    "pass" if herm <= cfg.tolerances["hermiticity"] else "fail"))
    if "witness" in st:
        found = st["witness"]["found"]
        entries.append(("witness_found", str(found).lower(), str(want_witness).lower(),
                        "pass" if found == bool(want_witness) else "fail"))
    return entries


def diagnostic_entries(cfg: RunConfig):
    from .diagnostics import run_diagnostics
    from .propagate import DENSE_LIMIT
    block = cfg.raw.get("diagnostics")
    if block is None:
        return []
    conf = {k: copy.deepcopy(cfg.raw[k]) for k in ("geometry", "potential", "bias") if k in cfg.raw}
    conf.update(copy.deepcopy({k: v for k, v in block.items() if k in conf or k in
                               ("geometry", "potential", "bias")}))
    if build_model(conf).size > DENSE_LIMIT:
        return [("diagnostics", "skipped", None, "warn")]
    rep = run_diagnostics(conf, FermiParams(**cfg.raw["fermi"]), z=float(block.get("z", -1.0)),
                          sv_tol=float(block.get("sv_tol", 1e-6)))
    return [("weighted_resolvent_L", rep.weighted_norm, None, "info"),
            ("weighted_resolvent_2L", rep.weighted_norm_doubled, None, "info"),
            ("weighted_resolvent_ratio", rep.ratio, 2.0, "pass" if rep.resolvent_ok else "warn"),
            ("singular_value_tail", rep.sv_tail, rep.sv_tol, "pass" if rep.compact_ok else "warn")]


def ness_verdicts(cfg: RunConfig, sweep_res: SweepResult, predicted, final):
    acc, rows = cfg.acceptance, [r for r in sweep_res.rows() if not r["failed"]]
    v = {}
    if not rows:
        return v
    d = np.array([r["delta"] for r in rows])
    if acc.get("monotone"):
        ok = bool(np.all(d[1:] <= (1 + cfg.tolerances["slack"]) * d[:-1] + MONOTONE_FLOOR))
        v["monotone"] = {"value": d.tolist(), "pass": ok}
    if "delta_max" in acc:
        v["delta_endpoint"] = {"value": float(d[-1]), "threshold": acc["delta_max"],
                               "pass": bool(d[-1] <= acc["delta_max"])}
    if "t_shift_gap" in acc:
        # t-independence is a statement about the limit: judge the smallest eta
        gaps = [abs(r["delta_t"] - r["delta"]) for r in rows]
        v["t_shift"] = {"value": gaps[-1], "per_eta": gaps, "threshold": acc["t_shift_gap"],
                        "pass": gaps[-1] <= acc["t_shift_gap"]}
    if "memory_gap" in acc and len(predicted):
        w = np.array(rows[-1]["weights"])
        gap = float(np.max(np.abs(np.asarray(predicted) - np.asarray(final))))
        closer = bool(np.all(np.abs(w - predicted) < np.abs(w - final)))
        v["memory"] = {"value": gap, "threshold": acc["memory_gap"],
                       "pass": bool(closer and gap >= acc["memory_gap"])}
    if acc.get("corollary"):
        pe = np.array([r["projector_errors"] for r in rows])
        dec = bool(np.all(np.diff(pe, axis=0) <= cfg.tolerances["slack"] * pe[:-1]))
        chain = all(r["cross_term"] <= float(np.sqrt(np.sum(np.square(r["projector_errors"]))))
                    + cfg.tolerances["cross_slack"] for r in rows)
        v["corollary"] = {"value": pe[:, 0].tolist(), "pass": dec and chain}
    return v


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------

def _exit_code(errors, verdicts):
    if any(e.get("config") for e in errors):
        return 2
    if errors:
        return 3
    if any(not v["pass"] for v in verdicts.values()):
        return 1
    return 0


def _write_manifest(out, cfg, verb, verdicts, errors, extra, t0):
    from . import __version__
    code = _exit_code(errors, verdicts)
    man = {
        "verb": verb, "schema_version": SCHEMA_VERSION, "package_version": __version__,
        "config": json.loads(cfg.canonical()), "config_hash": cfg.content_hash(),
        "tolerances": cfg.tolerances, "acceptance": cfg.acceptance,
        "verdicts": verdicts, "errors": errors, "exit_code": code,
        "workers": cfg.workers, "runtime_s": round(time.perf_counter() - t0, 3),
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
        **extra,
    }
    with open(out / "manifest", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return code


def _outdir(cfg, default):
    out = Path(cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_sweep(cfg: RunConfig, verb="sweep", with_rates=False, with_structure=False,
              with_diagnostics=False):
    """NESS sweep (plus optional stages); returns ``(exit_code, out_dir)``."""
    t0 = time.perf_counter()
    out = _outdir(cfg, f"runs/{cfg.name}")
    errors, verdicts = [], {}
    sw = sweep(cfg)
    errors += sw.failed
    physics = cfg.physics()
    try:
        _, _, fermi, _, rho, _ = _scenario({**physics, "panel": physics.get("panel")
                                            or _reference()[2]})
        predicted, final = rho.pp_weights.tolist(), rho.final_weights.tolist()
    except NessError as exc:
        errors.append({"stage": "assembly", "error": type(exc).__name__, "message": str(exc)})
        predicted, final = [], []
    rows = sw.rows()
    write_ness_csv(out / "ness_report.csv", rows, predicted, final)
    cert_ok = write_certificates_csv(out / "certificates.csv", sw, cfg.tolerances["cert_rel"])
    verdicts["certificates"] = {"pass": bool(cert_ok)}
    verdicts.update(ness_verdicts(cfg, sw, predicted, final))
    rate_rows = lattice_rates(sw)
    if with_rates:
        r, v, f = synthetic_rates(cfg)
        rate_rows += r
        verdicts.update(v)
        errors += f
    write_rate_csv(out / "rate_report.csv", rate_rows)
    entries = []
    if with_structure:
        try:
            entries += structural_entries(cfg)
        except NessError as exc:
            errors.append({"stage": "structure", "error": type(exc).__name__, "message": str(exc)})
    if with_diagnostics:
        entries += diagnostic_entries(cfg)
    write_diagnostics_csv(out / "diagnostics.csv", entries)
    for name, value, thr, status in entries:
        if status == "fail":
            verdicts[f"check:{name}"] = {"value": value, "threshold": thr, "pass": False}
    code = _write_manifest(out, cfg, verb, verdicts, errors,
                           {"cells": len(sw.cells), "failed_cells": len(sw.failed),
                            "warnings": sw.warnings()}, t0)
    return code, out


def run_scenario(cfg: RunConfig):
    return run_sweep(cfg, "run", with_rates=True, with_structure=True, with_diagnostics=True)


def run_diagnose(cfg: RunConfig):
    t0 = time.perf_counter()
    out = _outdir(cfg, f"runs/{cfg.name}")
    errors = []
    entries = []
    try:
        entries = diagnostic_entries(cfg) or []
        if not entries:
            block = {"diagnostics": {}}
            entries = diagnostic_entries(RunConfig({**cfg.raw, **block}, cfg.etas, cfg.tolerances,
                                                   cfg.acceptance, cfg.workers, cfg.out))
    except NessError as exc:
        errors.append({"stage": "diagnostics", "error": type(exc).__name__, "message": str(exc)})
    write_diagnostics_csv(out / "diagnostics.csv", entries)
    verdicts = {f"check:{n}": {"value": v, "pass": s != "fail"} for n, v, _, s in entries}
    code = _write_manifest(out, cfg, "diagnose", verdicts, errors, {}, t0)
    return code, out


def config_error_manifest(out, message, verb):
    """Structured error record for configs that failed validation."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest", "w") as fh:
        json.dump({"verb": verb, "exit_code": 2,
                   "errors": [{"config": True, "error": "ConfigError", "message": message}]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
