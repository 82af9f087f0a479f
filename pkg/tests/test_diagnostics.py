import numpy as np
import pytest

from adiabatic_ness.diagnostics import (channel_decay_rate, density_singular_values,
                                        run_diagnostics, weighted_resolvent_difference)
from adiabatic_ness.errors import ResourceGuardError
from adiabatic_ness.model import build_model
from adiabatic_ness.spectral import FermiParams

from conftest import small_config

FERMI = FermiParams(kT=0.1, mu=0.3)


def test_decay_rate_matches_free_kernel(small_hset):
    # the free lattice Green function decays like exp(-q |i - j| h)
    z = -1.0
    q = channel_decay_rate(small_hset, z)
    n = 400
    H = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))
    G = np.linalg.inv(H - z * np.eye(n))
    slope = np.log(abs(G[200, 230] / G[200, 220])) / -10.0
    assert slope == pytest.approx(q, rel=1e-8)


def test_weighted_difference_matches_dense(small_hset):
    z, gamma = -1.0, 0.3
    H, Hd = small_hset.H.toarray(), small_hset.H_dec.toarray()
    n = small_hset.size
    D = np.linalg.inv(H - z * np.eye(n)) - np.linalg.inv(Hd - z * np.eye(n))
    w = np.exp(gamma * np.abs(small_hset.x))
    dense = np.linalg.norm(w[:, None] * D * w[None, :], 2)
    assert weighted_resolvent_difference(small_hset, z, gamma) == pytest.approx(dense, rel=1e-6)


def test_uncoupled_model_has_no_difference():
    hset = build_model(small_config()).severed()
    assert weighted_resolvent_difference(hset) == 0.0


def test_report_on_small_lattice():
    rep = run_diagnostics(small_config(), FERMI)
    assert rep.resolvent_ok and 0.9 < rep.ratio < 1.1
    assert rep.sv_index == 4 * rep.n_sample
    assert rep.compact_ok
    assert set(rep.rows()) >= {"ratio", "sv_tail", "resolvent_ok", "compact_ok"}


def test_singular_values_and_guard(small_hset):
    sv = density_singular_values(small_hset, FERMI)
    assert np.all(np.diff(sv) <= 0)
    big = build_model({**small_config(), "geometry": {"h": 0.25, "L": 100.0, "a": 5.0,
                                                      "a_tilde": 2.5}})
    with pytest.raises(ResourceGuardError):
        density_singular_values(big, FERMI)
