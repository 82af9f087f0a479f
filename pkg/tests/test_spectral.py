import numpy as np
import pytest

from adiabatic_ness.adiabatic import crossing_family, family_table, no_crossing_family
from adiabatic_ness.errors import DomainError, HypothesisViolation
from adiabatic_ness.ness import branch_table
from adiabatic_ness.spectral import (FermiParams, LatticeFamily, bound_states, eigendecompose,
                                     fermi_dirac, gap_audit, track_branches)


def test_fermi_dirac_values():
    fp = FermiParams(kT=0.1, mu=0.3)
    assert fermi_dirac(0.3, fp) == pytest.approx(0.5)
    e = np.array([-10.0, 0.2, 0.4, 10.0])
    want = 1.0 / (1.0 + np.exp((e - 0.3) / 0.1))
    assert np.allclose(fermi_dirac(e, fp), want, rtol=1e-14, atol=0)
    # no overflow far above mu
    assert fermi_dirac(1e4, fp) == 0.0


def test_fermi_params_domain():
    with pytest.raises(DomainError, match="kT"):
        FermiParams(kT=0.0, mu=0.3)


def test_tridiagonal_matches_dense(small_hset):
    d, e, _, _ = small_hset.tridiag()
    a = eigendecompose((d, e))
    b = eigendecompose(small_hset.H.toarray())
    assert np.allclose(a.energies, b.energies, atol=1e-10)
    # deterministic sign convention: identical vectors up to roundoff
    ov = np.abs(np.sum(a.vectors * b.vectors, axis=0))
    assert np.allclose(ov[np.diff(np.r_[-np.inf, a.energies]) > 1e-8], 1.0, atol=1e-8)


def test_nonsymmetric_rejected():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DomainError):
        eigendecompose(A)


def test_bound_states_of_small_lattice(small_hset):
    split = bound_states(small_hset, 0.0)
    assert split.n_pp == 2
    assert np.all(split.pp_energies < 0.0)
    P = split.pp_vectors
    assert np.allclose(P.T @ P, np.eye(2), atol=1e-12)
    f = np.random.default_rng(0).normal(size=small_hset.size)
    assert np.allclose(split.apply_pp(f) + split.apply_ac(f), f)


def test_lattice_branches_gap(small_hset):
    table = branch_table(small_hset)
    assert table.N == 2 and not table.crossings
    assert gap_audit(table) > 0.0
    # endpoints agree with direct diagonalization
    for k, i in ((0.0, 0), (1.0, -1)):
        assert np.allclose(table.energies[i], bound_states(small_hset, k).pp_energies, atol=1e-12)
    # interpolated projector agrees with the tabulated sample at a grid point
    kap = table.kappas[3]
    assert np.allclose(table.projector_at(kap, 0), table.vectors[3][:, 0])


def test_crossing_detected_with_order_one():
    table = family_table(crossing_family())
    assert len(table.crossings) == 1
    c = table.crossings[0]
    assert c.kappa0 == pytest.approx(0.5, abs=1e-6)
    assert c.order == 1
    # continuation keeps the diabatic labels through the crossing
    assert table.energies[-1, 0] == pytest.approx(1.0, abs=1e-9)


def test_no_crossing_family_has_none():
    assert family_table(no_crossing_family()).crossings == []


def test_kappa_grid_validation(small_hset):
    with pytest.raises(DomainError):
        track_branches(LatticeFamily(small_hset), [0.0, 0.5, 0.4], 2)
    with pytest.raises(HypothesisViolation):
        track_branches(LatticeFamily(small_hset), [0.0, 1.0], 3)
