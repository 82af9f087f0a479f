"""Acceptance suite: one verdict line per criterion at its stated tolerance.

Criteria that are known to be unattainable on their stated scenario are
still evaluated at full tolerance and reported as failures; the analysis
lives with the project's decision notes.
"""

import copy
import os

import numpy as np
import pytest

from adiabatic_ness.cli import main as cli_main
from adiabatic_ness.model import SwitchingFunction, build_model
from adiabatic_ness.ness import (REFERENCE, adiabatic_params, assemble_rho_ad, branch_table,
                                 equilibrium_density, ness_cell, reference_panel, sample_panel,
                                 structural_checks)
from adiabatic_ness.propagate import EvolutionParams, propagate
from adiabatic_ness.runner import presets, sweep, synthetic_rates, validate_config
from adiabatic_ness.spectral import FermiParams
from adiabatic_ness.waveops import (fit_tail_exponent, make_vdelta_panel, xi_eta_cook,
                                    xi_eta_timelimit, xi_zero)
from adiabatic_ness.diagnostics import run_diagnostics

from conftest import record, small_config

pytestmark = [pytest.mark.acceptance, pytest.mark.filterwarnings("ignore::UserWarning")]

WORKERS = max(1, os.cpu_count() or 1)
CHI = SwitchingFunction()


def _sweep_rows(name, **patch):
    raw = copy.deepcopy(presets()[name])
    raw.update(patch)
    cfg = validate_config(raw, workers=WORKERS)
    res = sweep(cfg)
    assert not res.failed, res.failed
    return cfg, res


@pytest.fixture(scope="module")
def reference_sweep():
    return _sweep_rows("reference-desk")


@pytest.fixture(scope="module")
def reference_rho():
    hset = build_model(REFERENCE)
    fermi = FermiParams(**REFERENCE["fermi"])
    return assemble_rho_ad(hset, branch_table(hset), fermi)


# -- 1 ------------------------------------------------------------------------

def test_c1_unitarity_and_consistency():
    hset = build_model(small_config())
    f = reference_panel(hset).vectors
    dt = 0.2 / hset.norm_estimate()
    w, _ = propagate(hset, CHI, 0.16, f, 0.0, -40.0, dt)
    norm_err = float(np.max(np.abs(np.linalg.norm(w, axis=0) - np.linalg.norm(f, axis=0))))
    back, _ = propagate(hset, CHI, 0.16, w, -40.0, 0.0, dt)
    ret_err = float(np.max(np.linalg.norm(back - f, axis=0)))
    u = [propagate(hset, CHI, 0.16, f, 0.0, -10.0, d)[0] for d in (0.02, 0.01, 0.005)]
    ratio = float(np.max(np.linalg.norm(u[0] - u[1], axis=0))
                  / np.max(np.linalg.norm(u[1] - u[2], axis=0)))
    ok = norm_err <= 1e-9 and 3.0 <= ratio <= 5.0 and ret_err <= 1e-8
    record("1", ok, f"norm defect {norm_err:.2e} (<=1e-9), order ratio {ratio:.3f} (in [3,5]), "
                    f"return error {ret_err:.2e} (<=1e-8)")
    assert ok


# -- 2 ------------------------------------------------------------------------

def test_c2_null_bias_collapse():
    cfg0 = small_config(v_plus=0.0)
    hset = build_model(cfg0)
    fermi = FermiParams(**cfg0["fermi"])
    rho = assemble_rho_ad(hset, branch_table(hset), fermi)
    P = np.concatenate([reference_panel(hset).vectors, sample_panel(hset).vectors], axis=1)
    eq_err = float(np.max(np.abs(rho.apply(P) - equilibrium_density(hset, fermi).apply(P))))
    # V = 0 has no truncation tail; borrow the start time of the biased model
    biased = build_model(small_config())
    deltas = []
    for eta in (0.16, 0.08, 0.04, 0.02, 0.01):
        p = adiabatic_params(biased, CHI, eta, horizon="off")
        deltas.append(ness_cell(hset, CHI, eta, P, rho, params=p, n_records=0).delta)
    dmax = float(max(deltas))
    ok = dmax <= 1e-9 and eq_err <= 1e-8
    record("2", ok, f"max Delta {dmax:.2e} over 5 etas (<=1e-9), |rho_ad - rho_eq(H)| "
                    f"{eq_err:.2e} (<=1e-8)")
    assert ok


# -- 3 ------------------------------------------------------------------------

def test_c3_cauchy_certificates(reference_sweep):
    cfg, res = reference_sweep
    worst, n_pairs, ok = 0.0, 0, True
    for cell in res.cells.values():
        for c in cell["certificates"]:
            inc = np.asarray(c["increments"])
            bound = np.asarray(c["bounds"]) * c["norm"]
            ok &= bool(np.all(inc <= bound * (1 + 1e-6)))
            worst = max(worst, float(np.max(inc / bound)))
            n_pairs += inc.size
    record("3", ok, f"{n_pairs} recorded pairs over {len(res.etas)} etas, "
                    f"max increment/bound {worst:.4f} (<=1+1e-6)")
    assert ok


# -- 4 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic():
    cfg = validate_config(presets()["reference-desk"], workers=WORKERS)
    rows, verdicts, failed = synthetic_rates(cfg)
    assert not failed, failed
    return verdicts


def test_c4a_no_crossing_rate(synthetic):
    v = synthetic["rate:no-crossing"]
    ok = bool(0.8 <= v["value"] <= 1.2)
    record("4a", ok, f"no-crossing fitted exponent {v['value']:.3f} (in [0.8,1.2])")
    assert ok


def test_c4b_crossing_rate(synthetic):
    v = synthetic["rate:crossing"]
    ok = bool(0.15 <= v["value"] <= 0.4)
    record("4b", ok, f"crossing fitted exponent {v['value']:.3f} (in [0.15,0.4], "
                     f"predicted 0.25)")
    assert ok


# -- 5, 6 ---------------------------------------------------------------------

def test_c5_route_equivalence():
    hset = build_model(small_config())
    assert hset.size == 200
    wins = [dict(lead=1, e_lo=0.5, e_hi=3.5), dict(lead=-1, e_lo=0.5, e_hi=3.5)]
    panel = make_vdelta_panel(hset, 0.05, wins)
    p = EvolutionParams(0.5, -40.0, 5e-4, horizon="off")
    a = xi_eta_timelimit(hset, CHI, p, panel, inner_filter=False).action
    b = xi_eta_cook(hset, CHI, p, panel).action
    d_eta = float(np.max(np.linalg.norm(a - b, axis=0)))
    d_zero = xi_zero(hset, panel, -40.0).meta["route_diff"]
    ok = d_eta <= 1e-6 and d_zero <= 1e-4
    record("5", ok, f"Xi_eta time vs Cook {d_eta:.2e} (<=1e-6), Xi_0 time vs Cook "
                    f"{d_zero:.2e} (<=1e-4)")
    assert ok


def test_c6_cook_integrand_decay():
    cfg = small_config()
    cfg["geometry"]["L"] = 1000.5
    hset = build_model(cfg)
    wins = [dict(lead=1, e_lo=0.5, e_hi=3.5), dict(lead=-1, e_lo=0.5, e_hi=3.5)]
    panel = make_vdelta_panel(hset, 0.05, wins, profile="hat")
    p = EvolutionParams(0.5, -200.0, 0.04, horizon="off")
    res = xi_eta_cook(hset, CHI, p, panel, return_integrand=True)
    expo = fit_tail_exponent(res.meta["integrand_times"], res.meta["integrand_norm"], (50, 200))
    ok = 1.5 <= expo <= 2.5
    record("6", ok, f"Cook integrand tail exponent {expo:.3f} (in [1.5,2.5])")
    assert ok


# -- 7 ------------------------------------------------------------------------

def test_c7_reference_sweep(reference_sweep, reference_rho):
    cfg, res = reference_sweep
    rows = res.rows()
    d = np.array([r["delta"] for r in rows])
    mono = bool(np.all(d[1:] <= 1.1 * d[:-1]))
    end = float(d[-1])
    w = np.array(rows[-1]["weights"])
    pred, final = reference_rho.pp_weights, reference_rho.final_weights
    closer = bool(np.all(np.abs(w - pred) < np.abs(w - final)))
    ok = mono and end <= 5e-2
    record("7a", ok, f"Delta {np.array2string(d, precision=4)} monotone within 10%: {mono}; "
                     f"Delta(0.01) {end:.4f} (<=5e-2)")
    gap = float(np.max(np.abs(pred - final)))
    ok_w = closer and gap >= 1e-2
    record("7b", ok_w, f"pp weights {np.array2string(w, precision=8)} closer to rho(eps(0)) "
                       f"than rho(eps(1)): {closer}; |rho(eps(0)) - rho(eps(1))| {gap:.1e} "
                       f"(detectable >=1e-2)")
    assert ok and ok_w


def test_c7_memory_supplement():
    cfg, res = _sweep_rows("memory")
    hset = build_model(cfg.physics())
    rho = assemble_rho_ad(hset, branch_table(hset), FermiParams(**cfg.raw["fermi"]))
    w = np.array(res.rows()[-1]["weights"])
    pred, final = rho.pp_weights, rho.final_weights
    gap = float(np.max(np.abs(pred - final)))
    err0 = float(np.max(np.abs(w - pred)))
    err1 = float(np.max(np.abs(w - final)))
    ok = err0 < err1 and gap >= 1e-2
    record("7s", ok, f"memory preset: |w - rho(eps(0))| {err0:.1e}, |w - rho(eps(1))| "
                     f"{err1:.1e}, gap {gap:.3f} (>=1e-2)")
    assert ok


# -- 8 ------------------------------------------------------------------------

def test_c8_structure(reference_rho):
    hset = reference_rho.hset
    P = reference_panel(hset).vectors
    st = structural_checks(reference_rho, P)
    null_cfg = copy.deepcopy(REFERENCE)
    null_cfg["bias"] = {"v_minus": 0.0, "v_plus": 0.0}
    h0 = build_model(null_cfg)
    rho0 = assemble_rho_ad(h0, branch_table(h0), reference_rho.fermi)
    st0 = structural_checks(rho0, reference_panel(h0).vectors)
    ok = st["commutator"] <= 1e-3 and st["witness"]["found"] and not st0["witness"]["found"]
    wb, w0 = st["witness"], st0["witness"]
    record("8", ok, f"commutator {st['commutator']:.2e} (<=1e-3); witness biased "
                    f"found={wb['found']} (weights {wb['weight_left']:.3f}/{wb['weight_right']:.3f}), "
                    f"V=0 found={w0['found']}")
    assert ok


# -- 9 ------------------------------------------------------------------------

def test_c9_diagnostics():
    rep = run_diagnostics(small_config(), FermiParams(kT=0.1, mu=0.3))
    ok = rep.ratio <= 2.0 and rep.ratio >= 0.5 and rep.sv_tail <= 1e-6
    record("9", ok, f"weighted resolvent ratio 2L/L {rep.ratio:.4f} (factor <=2), "
                    f"singular value {rep.sv_index} = {rep.sv_tail:.1e} (<=1e-6)")
    assert ok


# -- 10 -----------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    outs = []
    for i, w in enumerate((1, 1, 3)):
        out = tmp_path / f"run{i}"
        assert cli_main(["sweep", "--preset", "small", "--out", str(out),
                         "--workers", str(w)]) == 0
        outs.append(out)
    names = ("ness_report.csv", "certificates.csv", "rate_report.csv", "diagnostics.csv")
    same = all((o / n).read_bytes() == (outs[0] / n).read_bytes()
               for o in outs[1:] for n in names)
    record("10", same, f"repeated sweep and workers 1 vs 3: byte-identical {len(names)} "
                       f"artifacts: {same}")
    assert same
