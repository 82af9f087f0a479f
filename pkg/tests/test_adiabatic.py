import numpy as np
import pytest

from adiabatic_ness.adiabatic import (ContourSpec, CrossingPlan, b_eta, chi_inverse,
                                      constant_family, contour_for, corollary_quantities,
                                      crossing_family, dense_evolution, f_eta, family_table,
                                      fit_exponent, no_crossing_family, projector_defects,
                                      validate_contour, y_dense_oracle, y_operator)
from adiabatic_ness.errors import DomainError
from adiabatic_ness.model import SwitchingFunction


@pytest.fixture(scope="module")
def nocross():
    return no_crossing_family()


def test_exact_eigenpairs(nocross):
    for kappa in (0.0, 0.37, 1.0):
        e, v = nocross.exact(kappa)
        K = nocross.matrix(kappa)
        assert np.allclose(K @ v, v * e, atol=1e-12)
        w = np.linalg.eigvalsh(K)
        assert np.allclose(w[:2], np.sort(e), atol=1e-12)


def test_constant_family_has_no_error(chi):
    fam = constant_family()
    tr = b_eta(fam, chi, 0.2, 0, s_min=-20.0, dt=0.05)
    assert tr.sup() < 1e-12


def test_b_eta_first_order(nocross, chi):
    sups = [b_eta(nocross, chi, e, 0, dt=0.02).sup() for e in (0.2, 0.1)]
    assert 1.6 < sups[0] / sups[1] < 2.4


def test_b_eta_panel_errors_and_projector(nocross, chi):
    probes = np.eye(nocross.size)[:, :3]
    tr = b_eta(nocross, chi, 0.2, 1, s_min=-20.0, dt=0.05, probes=probes, record_every=20)
    # the panel error never exceeds the operator norm
    assert np.all(tr.panel_errors <= tr.errors + 1e-12)
    times, Ws = dense_evolution(nocross, chi, 0.2, np.eye(nocross.size), -20.0, 0.05, 40)
    idem, rank = projector_defects(nocross, chi, 0.2, 1, times, Ws)
    assert idem < 1e-10 and rank < 1e-10


def test_y_matches_dense_oracle(nocross):
    kappa = 0.3
    e, V = nocross.exact(kappa)
    phi = V[:, 0]
    dphi = nocross.G @ phi
    dphi = dphi - phi * (phi @ dphi)
    X = np.outer(dphi, phi) - np.outer(phi, dphi)
    probes = np.eye(nocross.size)
    y = y_operator(nocross, kappa, 0, probes)
    Y = y_dense_oracle(nocross.matrix(kappa), 0, X)
    assert y.residual <= 1e-3
    assert np.linalg.norm(y.action - Y, 2) <= 1e-3 * np.linalg.norm(Y, 2)
    # i[K, Y] = -E'
    K = nocross.matrix(kappa)
    dE = np.outer(dphi, phi) + np.outer(phi, dphi)
    assert np.allclose(1j * (K @ Y - Y @ K), -dE, atol=1e-10)


def test_contour_validation(nocross):
    spec = contour_for(nocross, 0.5, 0)
    assert spec.radius <= spec.gap / 2
    with pytest.raises(DomainError, match="half gap"):
        validate_contour(nocross, 0.5, ContourSpec(spec.center, spec.gap, 32, spec.gap))
    fam = crossing_family()
    with pytest.raises(DomainError):
        contour_for(fam, 0.5, 0)


def test_f_eta_at_zero(nocross, chi):
    probes = np.eye(nocross.size)[:, :2]
    F, B = f_eta(nocross, chi, 0.1, 0, 0.0, np.eye(nocross.size), probes)
    y = y_operator(nocross, 1.0, 0, probes.astype(complex))
    assert np.allclose(F - B, 0.1 * y.action, atol=1e-12)


def test_crossing_plan():
    table = family_table(crossing_family())
    chi = SwitchingFunction()
    plan = CrossingPlan.from_table(table, chi)
    assert plan.M == 1 and plan.delta == pytest.approx(0.25)
    assert plan.predicted_exponent() == pytest.approx(0.25)
    assert plan.t0 == pytest.approx(np.log(0.5), abs=1e-5)
    (a0, a1), (b0, b1), (c0, c1) = plan.intervals(0.01, -2000.0)
    assert a0 == -2000.0 and a1 == b0 and b1 == c0 and c1 == 0.0
    assert b1 - b0 == pytest.approx(2 * 0.01 ** 0.25 / 0.01)
    with pytest.raises(DomainError):
        CrossingPlan(0.5, -0.7, 1, 0.6)
    assert chi_inverse(chi, 0.25) == pytest.approx(np.log(0.25))


def test_fit_exponent():
    etas = np.array([0.2, 0.1, 0.05])
    assert fit_exponent(etas, 3 * etas ** 0.7) == pytest.approx(0.7)
    assert np.isnan(fit_exponent(etas, [1.0, 0.0, 1.0]))


def test_corollary_chain(rng):
    n = 30
    phi0, _ = np.linalg.qr(rng.normal(size=(n, 2)))
    psi = phi0 + 0.01 * rng.normal(size=(n, 2))
    psi /= np.linalg.norm(psi, axis=0)
    proj, cross, combined = corollary_quantities(phi0.astype(complex), psi.astype(complex))
    assert np.all(proj > 0) and cross <= combined + 1e-14
    proj, cross, _ = corollary_quantities(phi0.astype(complex), phi0.astype(complex))
    assert np.max(proj) < 1e-15 and cross < 1e-15
