"""Dense diagnostics for small lattices: weighted resolvent differences and
the singular-value tail of ``rho_eq(H) - rho_eq(H_dec)``."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import ResourceGuardError
from .model import HamiltonianSet, build_model
from .propagate import DENSE_LIMIT
from .spectral import FermiParams, fermi_dirac


def _dense_guard(hset: HamiltonianSet, limit=DENSE_LIMIT):
    if hset.size > limit:
        raise ResourceGuardError(f"dense diagnostics refused for size {hset.size} > {limit}")


def channel_decay_rate(hset: HamiltonianSet, z=-1.0) -> float:
    """Decay rate ``q`` of the free lead resolvent kernel at ``z`` below the band.

    Solves ``cosh(q h) = 1 + (lambda_0 - z) h^2 / 2`` for the lowest channel.
    """
    geo = hset.geometry
    gap = geo.lambdas[0] - z
    if gap <= 0:
        raise ValueError("z must lie below the lowest channel threshold")
    return float(np.arccosh(1.0 + 0.5 * gap * geo.h ** 2) / geo.h)


def _banded_columns(diag, off, z, cols):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off
    ab[1] = diag - z
    ab[2, :-1] = off
    rhs = np.zeros((diag.size, len(cols)))
    rhs[cols, np.arange(len(cols))] = 1.0
    return solve_banded((1, 1), ab, rhs)


def weighted_resolvent_difference(hset: HamiltonianSet, z=-1.0, gamma=None) -> float:
    """``|e^{gamma|x|} (R(z) - R_dec(z)) e^{gamma|x|}|`` in operator norm.

    Uses ``R - R_dec = -R B R_dec`` with ``B = H - H_dec`` supported on the
    wall bonds, so only a few resolvent columns are needed; the banded
    solves keep the exponentially small entries accurate, which a dense
    inverse would not once they are multiplied by the weights.
    ``gamma`` defaults to half the channel decay rate at ``z``.
    """
    if gamma is None:
        gamma = 0.5 * channel_decay_rate(hset, z)
    bonds = np.flatnonzero(hset.off != hset.off_dec)
    if bonds.size == 0:
        return 0.0
    J = np.unique(np.concatenate([bonds, bonds + 1]))
    B = (hset.H - hset.H_dec).toarray()[np.ix_(J, J)]
    w = np.exp(gamma * np.abs(hset.x))
    A = w[:, None] * _banded_columns(hset.diag, hset.off, z, J)
    C = w[:, None] * _banded_columns(hset.diag, hset.off_dec, z, J)
    _, ra = np.linalg.qr(A)
    _, rc = np.linalg.qr(C)
    return float(np.linalg.norm(ra @ B @ rc.T, 2))


def _dense_fermi(A, fermi):
    e, v = np.linalg.eigh(A)
    return (v * fermi_dirac(e, fermi)) @ v.T


def density_singular_values(hset: HamiltonianSet, fermi: FermiParams) -> np.ndarray:
    """Singular values of ``rho_eq(H) - rho_eq(H_dec)`` (descending)."""
    _dense_guard(hset)
    D = _dense_fermi(hset.H.toarray(), fermi) - _dense_fermi(hset.H_dec.toarray(), fermi)
    return np.linalg.svd(D, compute_uv=False)


@dataclass
class DiagnosticsReport:
    weighted_norm: float
    weighted_norm_doubled: float
    ratio: float
    gamma: float
    z: float
    sv_index: int
    sv_tail: float
    sv_tol: float
    n_sample: int

    @property
    def resolvent_ok(self):
        return np.isfinite(self.ratio) and 0.5 <= self.ratio <= 2.0

    @property
    def compact_ok(self):
        return self.sv_tail <= self.sv_tol

    def rows(self):
        d = asdict(self)
        d["resolvent_ok"], d["compact_ok"] = self.resolvent_ok, self.compact_ok
        return d


def run_diagnostics(config, fermi: FermiParams, z=-1.0, gamma=None, sv_tol=1e-6,
                    sv_factor=4) -> DiagnosticsReport:
    """Weighted resolvent difference at ``L`` and ``2L`` plus the compactness proxy."""
    hset = build_model(config)
    cfg2 = {k: (dict(v) if isinstance(v, dict) else v) for k, v in config.items()}
    # keep the nodes aligned with the walls: L -> L + h * round(L / h)
    L, h = float(config["geometry"]["L"]), float(config["geometry"]["h"])
    cfg2["geometry"]["L"] = L + h * round(L / h)
    hset2 = build_model(cfg2)
    if gamma is None:
        gamma = 0.5 * channel_decay_rate(hset, z)
    w1 = weighted_resolvent_difference(hset, z, gamma)
    w2 = weighted_resolvent_difference(hset2, z, gamma)
    sv = density_singular_values(hset, fermi)
    ns = hset.geometry.n_sample * hset.geometry.channels
    k = sv_factor * ns
    tail = float(sv[k]) if k < sv.size else 0.0
    ratio = w2 / w1 if w1 > 0 else (1.0 if w2 == 0 else np.inf)
    return DiagnosticsReport(w1, w2, float(ratio), float(gamma), float(z), int(k), tail,
                             float(sv_tol), int(ns))
