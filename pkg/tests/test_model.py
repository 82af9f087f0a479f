import numpy as np
import pytest

from adiabatic_ness.errors import ConfigError, DomainError, HypothesisViolation
from adiabatic_ness.model import (BiasSpec, SwitchingFunction, build_geometry, build_model,
                                  bump, hamiltonian_at, switching_eval)

from conftest import small_config


def test_nodes_and_regions():
    geo = build_geometry({"h": 1.0, "L": 100.5, "a": 5.0, "a_tilde": 2.5})
    assert geo.n == 200
    assert np.isclose(geo.x[0], -99.5) and np.isclose(geo.x[-1], 99.5)
    reg = geo.region
    assert set(np.unique(reg)) == {-1, 0, 1}
    assert np.all(np.abs(geo.x[reg == 0]) <= 5.0)
    assert geo.wall_bonds().size == 2


@pytest.mark.parametrize("bad, msg", [
    ({"h": -1.0, "L": 10.5, "a": 5.0, "a_tilde": 2.5}, "h must be positive"),
    ({"h": 1.0, "L": 10.5, "a": 2.0, "a_tilde": 2.5}, "a_tilde < a"),
    ({"h": 1.0, "L": 4.5, "a": 5.0, "a_tilde": 2.5}, "wall outside"),
    ({"h": 1.0, "L": 10.5, "a": 5.0}, "missing field"),
])
def test_geometry_validation(bad, msg):
    with pytest.raises(ConfigError, match=msg):
        build_geometry(bad)


def test_bump_compact_and_smooth():
    x = np.linspace(-2, 2, 4001)
    b = bump(x, 1.25, amplitude=-1.5)
    assert np.all(b[np.abs(x) >= 1.25] == 0.0)
    assert np.isclose(b.min(), -1.5)
    # smooth: second differences stay small near the support edge
    assert np.max(np.abs(np.diff(b, 2))) < 1e-3


def test_hamiltonians_symmetric_and_severed(small_hset):
    H, Hd, V = small_hset.H.toarray(), small_hset.H_dec.toarray(), small_hset.V.toarray()
    assert np.allclose(H, H.T) and np.allclose(Hd, Hd.T)
    B = H - Hd
    rows = np.flatnonzero(np.any(B != 0, axis=1))
    assert rows.size == 4
    # H_dec has no bond across the internal walls
    reg = small_hset.region
    for i in small_hset.geometry.wall_bonds():
        assert Hd[i, i + 1] == 0.0 and reg[i] != reg[i + 1]
    assert np.allclose(np.diag(V)[reg == 1], 0.5)
    assert np.allclose(np.diag(V)[reg <= 0], 0.0)
    assert np.isclose(small_hset.v_norm, 0.5)


def test_hamiltonian_at_is_affine(small_hset):
    K0 = hamiltonian_at(small_hset, 0.0).toarray()
    K1 = hamiltonian_at(small_hset, 1.0).toarray()
    Kh = hamiltonian_at(small_hset, 0.3).toarray()
    assert np.allclose(Kh, 0.7 * K0 + 0.3 * K1)


def test_potential_support_hypothesis():
    cfg = small_config()
    cfg["potential"] = {"kind": "double_well", "amplitudes": [-1.0, -1.0],
                        "centers": [-2.0, 2.0], "radius": 1.25}
    with pytest.raises(HypothesisViolation):
        build_model(cfg)


def test_bias_norm():
    assert BiasSpec(-0.2, 0.5).norm == 0.5


def test_exponential_switching():
    chi = SwitchingFunction()
    t = np.linspace(-5, 0, 11)
    assert np.allclose(chi.value(t), np.exp(t))
    assert np.isclose(chi.phase_integral(-2.0, 0.5), (np.exp(-1.0) - 1.0) / 0.5)
    chi.check_contract()
    with pytest.raises(DomainError):
        switching_eval(chi, 0.1)


def test_tabulated_switching_matches_exponential():
    t = np.linspace(np.log(1e-6), 0.0, 400)
    chi = SwitchingFunction("tabulated-smooth", t_min=float(t[0]), table=(tuple(t), tuple(np.exp(t))))
    s = np.linspace(-10, 0, 37)
    assert np.allclose(chi.value(s), np.exp(s), rtol=1e-4)
    assert np.allclose(chi.antiderivative(s), np.exp(s), rtol=1e-3)
    chi.check_contract()


def test_tabulated_switching_rejects_nonmonotone():
    t = (-3.0, -2.0, -1.0, 0.0)
    with pytest.raises(ConfigError):
        SwitchingFunction("tabulated-smooth", t_min=-3.0, table=(t, (0.1, 0.3, 0.2, 1.0)))
