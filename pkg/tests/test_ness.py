import numpy as np
import pytest

from adiabatic_ness.errors import AssemblyError, DomainError
from adiabatic_ness.ness import (NessReport, NessRow, assemble_rho_ad, branch_table,
                                 commutator_defect, equilibrium_density, ness_cell, observables,
                                 reference_panel, sample_panel, structural_checks, tail_horizon)
from adiabatic_ness.spectral import FermiParams, LatticeFamily, track_branches

FERMI = FermiParams(kT=0.1, mu=0.3)


@pytest.fixture(scope="module")
def biased(small_hset):
    table = branch_table(small_hset)
    return assemble_rho_ad(small_hset, table, FERMI), reference_panel(small_hset).vectors


@pytest.fixture(scope="module")
def null(null_hset):
    return assemble_rho_ad(null_hset, branch_table(null_hset), FERMI), \
        reference_panel(null_hset).vectors


def test_null_bias_rho_ad_is_equilibrium(null, null_hset):
    rho, P = null
    assert rho.collapsed
    eq = equilibrium_density(null_hset, FERMI).apply(P)
    assert np.max(np.abs(rho.apply(P) - eq)) < 1e-8
    assert np.allclose(rho.pp_weights, rho.final_weights)


def test_null_bias_cell_is_exact(null, null_hset, chi):
    rho, P = null
    row = ness_cell(null_hset, chi, 0.2, P, rho, t_shift=2.0)
    assert row.delta < 1e-9 and abs(row.delta_t - row.delta) < 1e-9
    assert np.max(row.b_errors) < 1e-12 and row.cross_term < 1e-12


def test_biased_cell(biased, small_hset, chi):
    rho, P = biased
    assert not rho.collapsed and rho.pp_vectors.shape[1] == 2
    row = ness_cell(small_hset, chi, 0.4, P, rho, t_shift=2.0)
    assert 0 < row.delta < 1.0
    assert all(c.satisfies_bound(1e-6) for c in row.certificates)
    assert row.b_errors.shape == (row.b_times.size, 2)
    assert row.cross_term <= np.sqrt(np.sum(row.projector_errors ** 2)) + 1e-8
    # pp weights of rho_eta(0) follow the initial energies to O(eta)
    assert np.max(np.abs(row.pp_weights - rho.pp_weights)) < 0.1


def test_rho_ad_structure(biased, small_hset):
    rho, P = biased
    st = structural_checks(rho, P, witness=False)
    assert st["commutator"] < 1e-3 and st["pp_commutator"] < 1e-8 and st["pp_ac_cross"] < 1e-6
    G = P.conj().T @ rho.apply(P)
    assert np.allclose(G, G.conj().T, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(G) > -1e-8) and np.all(np.linalg.eigvalsh(G) < 1 + 1e-8)


def test_equilibrium_commutes_with_h(small_hset):
    rho = equilibrium_density(small_hset, FERMI)
    P = sample_panel(small_hset).vectors
    K = small_hset.H
    d = np.linalg.norm(rho.apply(K @ P) - K @ rho.apply(P), axis=0)
    assert np.max(d) < 1e-12
    # the same defect with K(1) is not small
    assert np.max(commutator_defect(rho.apply, small_hset, P)) > 1e-3


def test_observables_null_bias(null, null_hset):
    rho, _ = null
    obs = observables(rho.apply, null_hset)
    assert np.all((obs["density"] > 0) & (obs["density"] < 1))
    assert np.max(np.abs(obs["current"])) < 1e-10


def test_report_monotone_and_csv(tmp_path):
    rows = [NessRow(e, d, d, np.array([d]), np.zeros(0), -1.0, 1, 0.0, 0.0)
            for e, d in ((0.16, 0.1), (0.08, 0.105), (0.04, 0.05))]
    rep = NessReport(rows, np.zeros(0), np.zeros(0))
    assert rep.monotone(0.1)
    assert not rep.monotone(0.01)
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().count("\n") == 4


def test_guards(small_hset, chi):
    with pytest.raises(DomainError):
        sample_panel(small_hset, centers=(8.0,))
    half = track_branches(LatticeFamily(small_hset), np.linspace(0, 0.5, 5), 2)
    with pytest.raises(AssemblyError, match="continuation"):
        assemble_rho_ad(small_hset, half, FERMI)
    s = tail_horizon(small_hset, chi, 0.1, 1e-3)
    assert small_hset.v_norm * np.exp(0.1 * s) / 0.1 == pytest.approx(1e-3)
