import numpy as np
import pytest
from scipy.linalg import expm

from adiabatic_ness.errors import DomainError, HorizonError, ResourceGuardError, StepSizeError
from adiabatic_ness.propagate import (EvolutionParams, FactoredDensity, check_params,
                                      coupling_path, decoupled_propagator, evolve_decoupled,
                                      evolve_density, free_propagator, propagate)


def _block(rng, n, m=3):
    f = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
    return f / np.linalg.norm(f, axis=0)


def test_norm_and_reversibility(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size)
    w, _ = propagate(tiny_hset, chi, 0.3, f, 0.0, -10.0, 0.01)
    assert np.max(np.abs(np.linalg.norm(w, axis=0) - 1.0)) < 1e-12
    back, _ = propagate(tiny_hset, chi, 0.3, w, -10.0, 0.0, 0.01)
    assert np.max(np.linalg.norm(back - f, axis=0)) < 1e-10


def test_second_order_in_dt(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size, 1)
    u = [propagate(tiny_hset, chi, 0.3, f, 0.0, -4.0, dt)[0] for dt in (0.004, 0.002, 0.001)]
    ratio = np.linalg.norm(u[0] - u[1]) / np.linalg.norm(u[1] - u[2])
    assert 3.5 < ratio < 4.5


def test_static_bias_matches_expm(tiny_hset, chi, rng):
    # for s >= 0 the coupling is frozen at 1, so the Cayley step is a Pade
    # approximant of exp(-i dt K(1)); small dt makes the two agree
    f = _block(rng, tiny_hset.size, 1)
    K1 = (tiny_hset.H + tiny_hset.V).toarray()
    w, _ = propagate(tiny_hset, chi, 0.3, f, 0.0, 1.0, 1e-4)
    assert np.linalg.norm(w - expm(-1j * K1) @ f) < 1e-5


def test_records_match_restarted_runs(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size, 2)
    _, ev = propagate(tiny_hset, chi, 0.5, f, 0.0, -2.0, 0.01, record_times=[-2.0, -0.5, 0.0])
    assert np.allclose(ev.times, [-2.0, -0.5, 0.0])
    direct, _ = propagate(tiny_hset, chi, 0.5, f, 0.0, -0.5, 0.01)
    assert np.allclose(ev.at(-0.5), direct, atol=1e-13)
    assert np.allclose(ev.at(0.0), f)
    with pytest.raises(DomainError):
        propagate(tiny_hset, chi, 0.5, f, 0.0, -1.0, 0.01, record_times=[-2.0])


def test_coupling_path_midpoints(chi):
    kap = coupling_path(chi, 0.5, 0.0, 4, 0.1, -1.0)
    assert np.allclose(kap, np.exp(0.5 * -0.1 * (np.arange(4) + 0.5)))
    assert np.all(coupling_path(chi, 0.5, 0.0, 3, 0.1, 1.0) == 1.0)


def test_decoupled_cayley_matches_stepping(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size, 2)
    dt = 0.01
    stepped, _ = propagate(tiny_hset, chi, 0.4, f, 0.0, -3.0, dt, decoupled=True)
    spec = decoupled_propagator(tiny_hset, chi, 0.4, dt, "cayley").apply(f, [-3.0])[0]
    assert np.max(np.abs(stepped - spec)) < 1e-11


def test_exact_decoupled_phases(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size, 1)
    p = EvolutionParams(0.4, -3.0, 0.01, horizon="off")
    ev = evolve_decoupled(tiny_hset, chi, p, f, [-3.0])
    Kd = tiny_hset.H_dec.toarray()
    V = tiny_hset.V.toarray()
    # H_dec commutes with V, so the exact evolution factorizes
    phase = chi.phase_integral(-3.0, 0.4)
    want = expm(-1j * (-3.0) * Kd) @ expm(-1j * phase * V) @ f
    assert np.allclose(ev.states[0], want, atol=1e-10)


def test_free_propagator_is_unbiased(tiny_hset, chi, rng):
    f = _block(rng, tiny_hset.size, 1)
    U0 = free_propagator(tiny_hset, chi, 0.4)
    got = U0.apply(f, [-2.0])[0]
    assert np.allclose(got, expm(2.0j * tiny_hset.H.toarray()) @ f, atol=1e-10)


def test_step_size_and_horizon_guards(tiny_hset):
    with pytest.raises(StepSizeError):
        check_params(tiny_hset, EvolutionParams(0.3, -1.0, 1.0))
    with pytest.raises(HorizonError):
        check_params(tiny_hset, EvolutionParams(0.3, -1e4, 0.01))
    with pytest.warns(UserWarning):
        check_params(tiny_hset, EvolutionParams(0.3, -1e4, 0.01, horizon="warn"))
    with pytest.raises(DomainError):
        EvolutionParams(-0.1, -1.0, 0.01)


def test_density_evolution(tiny_hset, chi, rng):
    q, _ = np.linalg.qr(_block(rng, tiny_hset.size, 4))
    rho0 = FactoredDensity(q, np.array([1.0, 0.5, 0.25, 0.0]))
    p = EvolutionParams(0.3, -5.0, 0.01, horizon="off")
    rho = evolve_density(tiny_hset, chi, rho0, p, -2.0, dense=True)
    assert np.allclose(rho, rho.conj().T)
    assert np.trace(rho).real == pytest.approx(1.75)
    big = FactoredDensity(np.zeros((700, 1)), np.ones(1))
    with pytest.raises(ResourceGuardError):
        big.to_dense()
