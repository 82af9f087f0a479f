import numpy as np
import pytest

from adiabatic_ness.errors import DomainError, HorizonError
from adiabatic_ness.propagate import EvolutionParams
from adiabatic_ness.waveops import (Certificate, ac_split, adjoint_defect, fit_tail_exponent,
                                    intertwining_defect, lead_modes, make_vdelta_panel,
                                    omega_eta, omega_minus, xi_eta_cook, xi_eta_timelimit,
                                    xi_zero)

WINDOWS = [dict(lead=1, e_lo=0.5, e_hi=3.5), dict(lead=-1, e_lo=0.5, e_hi=3.5)]


@pytest.fixture(scope="module")
def panel(small_hset):
    return make_vdelta_panel(small_hset, 0.05, WINDOWS)


def test_lead_modes_are_eigenvectors(small_hset):
    idx, E, k, depth = lead_modes(small_hset, 1)
    Hd = small_hset.H_dec.toarray()[np.ix_(idx, idx)]
    N = idx.size
    modes = np.sqrt(2.0 / (N + 1)) * np.sin(np.outer(depth, k))
    assert np.allclose(Hd @ modes, modes * E, atol=1e-10)
    assert np.allclose(modes.T @ modes, np.eye(N), atol=1e-10)


def test_panel_support_and_validation(small_hset, panel):
    F = panel.vectors
    reg = small_hset.region
    assert np.allclose(np.linalg.norm(F, axis=0), 1.0)
    assert np.allclose(F[reg != 1, 0], 0.0) and np.allclose(F[reg != -1, 1], 0.0)
    with pytest.raises(DomainError, match="band edge"):
        make_vdelta_panel(small_hset, 0.05, [dict(lead=1, e_lo=0.01, e_hi=1.0)])
    with pytest.raises(DomainError, match="zero or negative width"):
        make_vdelta_panel(small_hset, 0.05, [dict(lead=1, e_lo=1.0, e_hi=1.0)])


def test_certificate_ratio():
    c = Certificate(np.array([[-2.0, -1.0], [-1.0, 0.0]]), np.array([[0.1], [0.2]]),
                    np.array([0.2, 0.4]), np.array([1.0]))
    assert c.bound_ratio() == pytest.approx(0.5)
    assert c.satisfies_bound()
    c.increments[1, 0] = 0.5
    assert not c.satisfies_bound()


def test_omega_eta_certificates(small_hset, chi, panel):
    p = EvolutionParams(0.5, -16.0, 0.01, horizon="off")
    for adjoint in (False, True):
        res = omega_eta(small_hset, chi, p, panel, adjoint=adjoint, n_records=40)
        assert all(c.satisfies_bound(1e-6) for c in res.certificates)
        assert np.allclose(np.linalg.norm(res.action, axis=0), 1.0, atol=1e-9)
    with pytest.raises(HorizonError):
        omega_eta(small_hset, chi, EvolutionParams(0.5, -2.0, 0.01, horizon="off"), panel)


def test_xi_routes_agree_and_sign(small_hset, chi, panel):
    p = EvolutionParams(0.5, -16.0, 0.002, horizon="off")
    a = xi_eta_timelimit(small_hset, chi, p, panel, inner_filter=False).action
    b = xi_eta_cook(small_hset, chi, p, panel).action
    wrong = xi_eta_cook(small_hset, chi, p, panel, sign=-1.0).action
    assert np.max(np.linalg.norm(a - b, axis=0)) < 5e-4
    assert np.min(np.linalg.norm(a - wrong, axis=0)) > 0.1


def test_xi_zero_routes_and_intertwining(small_hset, panel):
    r = xi_zero(small_hset, panel, -40.0)
    assert r.meta["route_diff"] < 1e-4
    ra = xi_zero(small_hset, panel.vectors, -40.0, adjoint=True)
    assert adjoint_defect(r.action, panel.vectors, panel.vectors, ra.action) < 1e-8
    assert np.max(intertwining_defect(small_hset, panel, -40.0)) < 1e-2


def test_omega_minus_is_isometric_on_leads(small_hset, panel):
    res = omega_minus(small_hset, panel, s_min=-40.0)
    ac = ac_split(small_hset, 0.0).apply_ac(panel.vectors)
    assert np.allclose(np.linalg.norm(res.action, axis=0), np.linalg.norm(ac, axis=0), atol=1e-6)


def test_tail_fit_on_model_envelope():
    s = -np.linspace(1, 400, 20000)
    g = np.abs(np.cos(3 * s)) / (1 + s ** 2) + 1e-16
    assert fit_tail_exponent(s, g, (40, 400)) == pytest.approx(2.0, abs=0.05)
