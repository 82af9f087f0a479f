"""Adiabatic non-equilibrium steady state and its dynamical approximants.

``rho_ad = Xi_0 rho_eq(H_dec) Xi_0^* + sum_j rho_eq(eps_j(0)) E_j(K(1))``
is compared on panels with ``rho_eta(0) = omega_eta rho_eq(H) omega_eta^*``.
The ac term is evaluated at a finite ``s0``; using the same ``s0`` for
``Xi_0`` and ``Xi_0^*`` makes the decoupled phases cancel exactly, since
``rho_eq(H_dec)`` commutes with ``K_dec(1)``.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AssemblyError, DomainError, ResourceGuardError
from .model import HamiltonianSet, SwitchingFunction, lattice_velocity
from .propagate import (DENSE_LIMIT, EvolutionParams, VectorPanel, _as_block,
                        check_params, coupled_eigensystem, decoupled_eigensystem,
                        propagate)
from .spectral import (BranchTable, FermiParams, LatticeFamily, SpectralOperator,
                       fermi_dirac, gap_audit, track_branches)
from .waveops import (_expm_apply, ac_split, adjoint_certificates, lead_mask,
                      make_vdelta_panel, xi_zero)

REFERENCE = {
    "geometry": {"h": 0.25, "L": 250.0, "a": 5.0, "a_tilde": 2.5},
    "potential": {"kind": "double_well", "amplitudes": [-1.5, -1.5],
                  "centers": [-1.25, 1.25], "radius": 1.25},
    "bias": {"v_minus": 0.0, "v_plus": 0.5},
    "fermi": {"kT": 0.1, "mu": 0.3},
}

REFERENCE_ETAS = (0.16, 0.08, 0.04, 0.02, 0.01)

# Incoming lead packets: left kinetic window [0.6, 2.0], right [0.1, 1.5],
# started 10 length units outside the sample.
REFERENCE_PANEL = {
    "delta": 0.05,
    "windows": [
        {"lead": -1, "e_lo": 0.6, "e_hi": 2.0, "offset": 10.0, "direction": "incoming"},
        {"lead": 1, "e_lo": 0.1, "e_hi": 1.5, "offset": 10.0, "direction": "incoming"},
    ],
}


# --------------------------------------------------------------------------
# Equilibrium densities and panels
# --------------------------------------------------------------------------

def equilibrium_density(hset: HamiltonianSet, fermi: FermiParams, kappa=0.0) -> SpectralOperator:
    """``rho_eq(K(kappa))`` from the full eigendecomposition."""
    return fermi_dirac(coupled_eigensystem(hset, kappa), fermi)


def lead_density(hset: HamiltonianSet, fermi: FermiParams) -> SpectralOperator:
    """``E_ac(H_dec) rho_eq(H_dec)``: Fermi weights of the lead blocks.

    Energies are those of the unbiased decoupled operator.
    """
    sd, _ = decoupled_eigensystem(hset)
    mass = np.sum(sd.vectors[lead_mask(hset)] ** 2, axis=0)
    sel = mass > 0.5
    return SpectralOperator(sd.vectors[:, sel], fermi_dirac(sd.energies[sel], fermi))


def sample_panel(hset: HamiltonianSet, centers=(-3.0, 0.0, 3.0), width=1.0,
                 bound_vectors=None) -> VectorPanel:
    """Normalized Gaussians centred in the sample, one per channel and centre,
    optionally followed by given bound-state vectors."""
    geo = hset.geometry
    cols, meta = [], []
    for c in range(geo.channels):
        for x0 in centers:
            if abs(x0) > geo.a:
                raise DomainError(f"sample_panel: centre {x0} outside the sample")
            v = np.zeros(hset.size)
            v[c * geo.n:(c + 1) * geo.n] = np.exp(-0.5 * ((geo.x - x0) / width) ** 2)
            cols.append(v / np.linalg.norm(v))
            meta.append({"kind": "gaussian", "center": x0, "width": width, "channel": c})
    if bound_vectors is not None:
        B = np.atleast_2d(np.asarray(bound_vectors).T).T
        for j in range(B.shape[1]):
            cols.append(B[:, j] / np.linalg.norm(B[:, j]))
            meta.append({"kind": "bound", "branch": j})
    return VectorPanel(np.stack(cols, axis=1), tuple(meta))


def reference_panel(hset: HamiltonianSet, spec=None) -> VectorPanel:
    """Lead wave-packet panel used by the reference sweep."""
    spec = REFERENCE_PANEL if spec is None else spec
    return make_vdelta_panel(hset, spec["delta"], spec["windows"], spec.get("m"),
                             spec.get("profile", "bump"))


def default_s0(hset: HamiltonianSet, fermi: FermiParams, n_kT=8.0) -> float:
    """Time for a lead wave at kinetic energy ``mu + n_kT kT`` to cross the lead."""
    geo = hset.geometry
    top = 4.0 / geo.h ** 2
    e = min(max(fermi.mu + n_kT * fermi.kT, 1e-3), 0.5 * top)
    return -(geo.L - geo.a) / float(lattice_velocity(geo.h, e))


# --------------------------------------------------------------------------
# rho_ad
# --------------------------------------------------------------------------

@dataclass
class RhoAd:
    """Operator-action closure for the adiabatic NESS."""

    hset: HamiltonianSet
    fermi: FermiParams
    s0: float
    pp_vectors: np.ndarray          # continued E_j(1) vectors
    pp_weights: np.ndarray          # rho_eq(eps_j(0))
    eps0: np.ndarray
    eps1: np.ndarray
    meta: dict = field(default_factory=dict)
    table: BranchTable | None = None

    @property
    def collapsed(self):
        """Equal lead biases: intertwining gives the ac term in closed form."""
        b = self.hset.bias
        return b.v_minus == b.v_plus

    def apply_ac(self, panel):
        f = _as_block(panel)
        if self.collapsed:
            # Xi_0 rho(K_dec(1) - v) Xi_0^* = rho(K(1) - v) E_ac(K(1))
            eig = coupled_eigensystem(self.hset, 1.0)
            g = ac_split(self.hset, 1.0).apply_ac(f)
            vals = fermi_dirac(eig.energies - self.hset.bias.v_plus, self.fermi)
            return SpectralOperator(eig.vectors, vals).apply(g)
        g = xi_zero(self.hset, f, self.s0, adjoint=True).action
        g = lead_density(self.hset, self.fermi).apply(g)
        return xi_zero(self.hset, g, self.s0, cook=False).action

    def apply_pp(self, panel):
        f = _as_block(panel)
        P = self.pp_vectors
        return P @ (self.pp_weights[:, None] * (P.conj().T @ f))

    def apply(self, panel):
        f = _as_block(panel)
        return self.apply_ac(f) + self.apply_pp(f)

    def to_dense(self):
        if self.hset.size > DENSE_LIMIT:
            raise ResourceGuardError(f"dense rho_ad refused for size {self.hset.size}")
        return self.apply(np.eye(self.hset.size, dtype=complex))

    @property
    def final_weights(self):
        """``rho_eq(eps_j(1))``: the weights a function of ``K(1)`` would carry."""
        return fermi_dirac(self.eps1, self.fermi)


def branch_table(hset: HamiltonianSet, n_kappa=21, theta=0.9, margin=None) -> BranchTable:
    """Track all bound states of ``H`` across ``kappa`` in [0, 1]."""
    from .waveops import ac_split as _split
    N = _split(hset, 0.0, theta, margin).n_pp
    return track_branches(LatticeFamily(hset, margin), np.linspace(0.0, 1.0, n_kappa), N, theta)


def assemble_rho_ad(hset: HamiltonianSet, table: BranchTable, fermi: FermiParams,
                    s0=None, route_panel=None, route_tol=1e-4) -> RhoAd:
    """Assemble ``rho_ad``; optionally cross-check the two ``Xi_0`` routes."""
    if table.N > 0 and not gap_audit(table) > 0:
        raise AssemblyError("gap audit failed: a branch touches the continuum")
    if table.kappas[0] != 0.0 or table.kappas[-1] != 1.0:
        raise AssemblyError("missing branch continuation: table must span [0, 1]")
    n1 = ac_split(hset, 1.0).n_pp
    if n1 != table.N:
        raise AssemblyError(f"{table.N} continued branches but {n1} bound states of K(1)")
    if s0 is None:
        s0 = default_s0(hset, fermi)
    eps0, eps1 = table.energies[0].copy(), table.energies[-1].copy()
    meta = {"s0": s0}
    if route_panel is not None:
        r = xi_zero(hset, route_panel, s0, cook=True, tol=route_tol)
        meta.update(xi0_route_diff=r.meta["route_diff"], xi0_consistent=r.meta["consistent"])
    return RhoAd(hset, fermi, float(s0), table.vectors[-1].astype(complex),
                 fermi_dirac(eps0, fermi), eps0, eps1, meta, table)


# --------------------------------------------------------------------------
# rho_eta(0)
# --------------------------------------------------------------------------

def tail_horizon(hset: HamiltonianSet, chi: SwitchingFunction, eta: float, tol: float) -> float:
    """``s`` with ``|V| int_{-inf}^s chi(eta u) du = tol``."""
    vn = hset.v_norm
    if vn == 0.0:
        return 0.0
    target = tol * eta / vn
    if chi.kind == "exponential":
        return min(0.0, float(np.log(target)) / eta)
    F = chi.antiderivative
    if float(F(0.0)) <= target:
        return 0.0
    lo = chi.t_min
    while float(F(lo)) > target:
        lo *= 2.0
    return brentq(lambda t: np.log(F(t)) - np.log(target), lo, 0.0, xtol=1e-10) / eta


def adiabatic_params(hset, chi, eta, tail_tol=1e-3, dt=None, cfl=0.2, horizon="warn"):
    """Evolution parameters whose truncation tail for ``omega_eta`` is ``tail_tol``."""
    if dt is None:
        dt = cfl / hset.norm_estimate()
    s = tail_horizon(hset, chi, eta, tail_tol)
    n = max(1, int(np.ceil(-s / dt)))
    return EvolutionParams(eta=eta, s_min=-n * dt, dt=dt, horizon=horizon, cfl=cfl)


@dataclass
class RhoEtaResult:
    action: np.ndarray
    shifted: np.ndarray | None
    t_shift: float | None
    params: EvolutionParams
    tail_bound: float
    runtime: float
    backward: np.ndarray | None = None
    records: object = None


def rho_eta_zero(hset: HamiltonianSet, chi: SwitchingFunction, eta: float, panel,
                 fermi: FermiParams, params=None, tail_tol=1e-3, t_shift=None,
                 record_times=None) -> RhoEtaResult:
    """``rho_eta(0) f = W(s)^* rho_eq(H) W(s) f`` at ``s = s_min``.

    The truncation error is at most ``2 tail |f|`` with the Cauchy tail of
    ``omega_eta``.  With ``t_shift`` the same pass also returns
    ``rho_eta(t) f = exp(-itK(1)) rho_eta(0) exp(itK(1)) f``.  States of
    the backward pass ``W(s) f`` are kept at ``s0`` and at ``record_times``.
    """
    t0 = time.perf_counter()
    f = _as_block(panel)
    if params is None:
        params = adiabatic_params(hset, chi, eta, tail_tol)
    check_params(hset, params)
    m = f.shape[1]
    block = f
    if t_shift is not None:
        eigK = coupled_eigensystem(hset, 1.0)
        block = np.concatenate([f, _expm_apply(eigK.vectors, eigK.energies, f, -t_shift)], axis=1)
    s0, dt = params.s_start, params.dt
    if record_times is not None:
        record_times = np.clip(np.asarray(record_times, dtype=float), s0, 0.0)
    w, rec = propagate(hset, chi, eta, block, 0.0, s0, dt, record_times)
    backward = w[:, :m].copy()
    w = equilibrium_density(hset, fermi, 0.0).apply(w)
    out, _ = propagate(hset, chi, eta, w, s0, 0.0, dt, check=False)
    tail = 2.0 * hset.v_norm * float(chi.antiderivative(eta * s0)) / eta
    shifted = None
    if t_shift is not None:
        shifted = _expm_apply(eigK.vectors, eigK.energies, out[:, m:], t_shift)
        out = out[:, :m]
    if record_times is not None:
        rec.states = rec.states[:, :, :m]
    else:
        rec = None
    return RhoEtaResult(out, shifted, t_shift, params, tail, time.perf_counter() - t0,
                        backward, rec)


# --------------------------------------------------------------------------
# Convergence report
# --------------------------------------------------------------------------

@dataclass
class NessRow:
    eta: float
    delta: float
    delta_t: float
    column_errors: np.ndarray
    pp_weights: np.ndarray
    s_min: float
    n_steps: int
    tail_bound: float
    runtime: float
    b_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b_errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))   # (T, N)
    projector_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cross_term: float = 0.0
    certificates: list = field(default_factory=list)


@dataclass
class NessReport:
    """Per-``eta`` discrepancies ``Delta(eta) = max_i |(rho_eta(0) - rho_ad) f_i|``."""

    rows: list
    predicted_weights: np.ndarray      # rho_eq(eps_j(0))
    final_weights: np.ndarray          # rho_eq(eps_j(1))
    t_shift: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r.eta)

    @property
    def etas(self):
        return np.array([r.eta for r in self.rows])

    @property
    def deltas(self):
        return np.array([r.delta for r in self.rows])

    def monotone(self, slack=0.1, floor=1e-12):
        d = self.deltas
        return bool(np.all(d[1:] <= (1 + slack) * d[:-1] + floor))

    def t_shift_gap(self):
        return float(max((abs(r.delta_t - r.delta) for r in self.rows), default=0.0))

    def weight_errors(self):
        """Max over eta-rows of ``|measured - rho(eps(0))|`` and ``|measured - rho(eps(1))|``
        at the smallest eta."""
        if not self.rows or self.predicted_weights.size == 0:
            return 0.0, 0.0
        w = self.rows[-1].pp_weights
        return (float(np.max(np.abs(w - self.predicted_weights))),
                float(np.max(np.abs(w - self.final_weights))))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            nj = self.predicted_weights.size
            wr.writerow(["eta", "delta", "delta_t", "s_min", "n_steps", "tail_bound"]
                        + [f"weight_{j}" for j in range(nj)]
                        + [f"pred_weight0_{j}" for j in range(nj)]
                        + [f"pred_weight1_{j}" for j in range(nj)])
            for r in self.rows:
                wr.writerow([f"{r.eta:.6g}", f"{r.delta:.12e}", f"{r.delta_t:.12e}",
                             f"{r.s_min:.12e}", str(r.n_steps), f"{r.tail_bound:.12e}"]
                            + [f"{x:.12e}" for x in r.pp_weights]
                            + [f"{x:.12e}" for x in self.predicted_weights]
                            + [f"{x:.12e}" for x in self.final_weights])


def ness_cell(hset, chi, eta, panel, rho_ad: RhoAd, rho_ad_f=None, tail_tol=1e-3,
              t_shift=None, params=None, n_records=60) -> NessRow:
    """One ``eta`` cell of the convergence report.

    The continued vectors ``phi_j(1)`` ride along with the panel, which gives
    the pp weights of ``rho_eta(0)``, the trace of ``|B_eta(s) - E_j(1)|`` and
    the corollary quantities at ``s_min`` from the same pass.  The recorded
    backward states also yield the Cauchy certificates of ``omega_eta^*``.
    """
    from .adiabatic import b_eta_errors, corollary_quantities
    f = _as_block(panel)
    if rho_ad_f is None:
        rho_ad_f = rho_ad.apply(f)
    nj = rho_ad.pp_vectors.shape[1]
    m = f.shape[1]
    block = np.concatenate([f, rho_ad.pp_vectors], axis=1) if nj else f
    if params is None:
        params = adiabatic_params(hset, chi, eta, tail_tol)
    rec_t = None
    if n_records:
        rec_t = params.s_start + (np.arange(n_records + 1) / n_records) * (0.0 - params.s_start)
        rec_t = np.round(rec_t / params.dt) * params.dt
    res = rho_eta_zero(hset, chi, eta, block, rho_ad.fermi, params, tail_tol, t_shift, rec_t)
    act = res.action[:, :m]
    err = np.linalg.norm(act - rho_ad_f, axis=0)
    delta_t = float("nan")
    if t_shift is not None:
        delta_t = float(np.max(np.linalg.norm(res.shifted[:, :m] - rho_ad_f, axis=0)))
    weights = np.real(np.einsum("ij,ij->j", rho_ad.pp_vectors.conj(), res.action[:, m:])) \
        if nj else np.zeros(0)
    row = NessRow(eta, float(np.max(err)), delta_t, err, weights, res.params.s_start,
                  res.params.n_steps, res.tail_bound, res.runtime)
    if rec_t is not None:
        _, row.certificates = adjoint_certificates(hset, chi, eta, params.dt, res.records.times,
                                                   res.records.states[:, :, :m], res.tail_bound / 2)
    if rec_t is not None and nj and rho_ad.table is not None:
        table = rho_ad.table
        times = res.records.times
        row.b_times = times
        row.b_errors = np.stack([b_eta_errors(table.family, table, chi, eta, j, times,
                                              res.records.states[:, :, m + j])
                                 for j in range(nj)], axis=1)
        proj, cross, _ = corollary_quantities(table.vectors[0].astype(complex),
                                              res.backward[:, m:])
        row.projector_errors, row.cross_term = proj, cross
    return row


def convergence_report(hset, chi, etas, panel, rho_ad: RhoAd, tail_tol=1e-3,
                       t_shift=None, cell_runner=None) -> NessReport:
    """Sweep ``eta`` and tabulate ``Delta(eta)``.

    ``cell_runner`` (optional) maps a list of etas to rows, e.g. a process
    pool; rows are merged by eta so the report is order independent.
    """
    etas = sorted((float(e) for e in etas), reverse=True)
    if any(not e > 0 for e in etas):
        raise DomainError("eta list must be strictly positive")
    f = _as_block(panel)
    rho_f = rho_ad.apply(f)
    if cell_runner is None:
        rows = [ness_cell(hset, chi, e, f, rho_ad, rho_f, tail_tol, t_shift) for e in etas]
    else:
        rows = cell_runner(etas)
    return NessReport(rows, rho_ad.pp_weights, rho_ad.final_weights, t_shift)


# --------------------------------------------------------------------------
# Structural checks and observables
# --------------------------------------------------------------------------

def commutator_defect(rho_apply, hset: HamiltonianSet, panel):
    """``|[rho, K(1)] f| / (|f| |K(1)|)`` per column."""
    f = _as_block(panel)
    K = hset.H + hset.V
    a = rho_apply(K @ f)
    b = K @ rho_apply(f)
    return np.linalg.norm(a - b, axis=0) / (np.linalg.norm(f, axis=0) * hset.norm_estimate())


def _energy(hset, psi):
    K = hset.H + hset.V
    return float(np.real(np.vdot(psi, K @ psi)) / np.real(np.vdot(psi, psi)))


def witness_search(rho_ad: RhoAd, center=None, half_width=0.05, delta=0.02,
                   energy_tol=1e-3, weight_gap=1e-2, max_iter=30):
    """Look for a left/right scattering pair with equal ``K(1)`` energy and
    different ``rho_ad`` expectation.

    Both states are ``Xi_0 g`` for narrow lead packets ``g``; the right
    window centre is adjusted by secant steps until the two energies agree.
    """
    hset = rho_ad.hset
    geo = hset.geometry
    vm, vp = hset.bias.v_minus, hset.bias.v_plus
    if center is None:
        center = rho_ad.fermi.mu + max(vm, vp) + 0.1
    lam = geo.lambdas[0]

    def state(lead, c):
        lo, hi = c - half_width, c + half_width
        g = make_vdelta_panel(hset, delta, [dict(lead=lead, e_lo=lo, e_hi=hi)]).vectors
        return xi_zero(hset, g, rho_ad.s0, cook=False).action[:, 0]

    c_left = center - vm
    c_right = center - vp
    for c in (c_left, c_right):
        if c - half_width < lam + delta:
            raise DomainError("witness window too close to the band bottom")
    psi_l = state(-1, c_left)
    e_l = _energy(hset, psi_l)

    def mismatch(c):
        psi = state(1, c)
        return _energy(hset, psi) - e_l, psi

    c0, c1 = c_right, c_right + 1e-2
    d0, psi = mismatch(c0)
    d1, psi1 = mismatch(c1)
    it = 0
    while abs(d1) > 0.1 * energy_tol and it < max_iter:
        if d1 == d0:
            break
        c0, c1, d0 = c1, c1 - d1 * (c1 - c0) / (d1 - d0), d1
        d1, psi1 = mismatch(c1)
        it += 1
    psi_r = psi1
    e_r = _energy(hset, psi_r)

    def expect(psi):
        return float(np.real(np.vdot(psi, rho_ad.apply(psi[:, None])[:, 0])) / np.real(np.vdot(psi, psi)))

    w_l, w_r = expect(psi_l), expect(psi_r)
    found = abs(e_l - e_r) <= energy_tol and abs(w_l - w_r) > weight_gap
    return {"found": bool(found), "energy_left": e_l, "energy_right": e_r,
            "weight_left": w_l, "weight_right": w_r, "iterations": it}


def structural_checks(rho_ad: RhoAd, panel, witness=True):
    """Commutator with ``K(1)``, pp-sector commutator and the witness search."""
    hset = rho_ad.hset
    out = {"commutator": float(np.max(commutator_defect(rho_ad.apply, hset, panel)))}
    if rho_ad.pp_vectors.shape[1]:
        P = rho_ad.pp_vectors
        K = hset.H + hset.V
        c = rho_ad.apply_pp(K @ P) - K @ rho_ad.apply_pp(P)
        out["pp_commutator"] = float(np.max(np.linalg.norm(c, axis=0)))
        # the pp and ac terms act on orthogonal subspaces
        ac = rho_ad.apply_ac(_as_block(panel))
        out["pp_ac_cross"] = float(np.max(np.abs(P.conj().T @ ac)))
    else:
        out["pp_commutator"] = 0.0
        out["pp_ac_cross"] = 0.0
    if witness:
        out["witness"] = witness_search(rho_ad)
    return out


def observables(rho_apply, hset: HamiltonianSet, sites=None, channel=0):
    """Density ``<i|rho|i>`` and bond current ``-2 Im(K_{i,i+1} <i+1|rho|i>)``.

    ``sites`` are node indices within one channel (default: the sample);
    the local observables are evaluated on the site-indicator panel, so
    the compression is exact on those sites.
    """
    geo = hset.geometry
    if sites is None:
        sites = np.flatnonzero(geo.region == 0)
    sites = np.asarray(sites)
    if sites.size and (sites.min() < 0 or sites.max() >= geo.n - 1):
        raise DomainError("observables: sites must leave room for the right bond")
    idx = channel * geo.n + sites
    E = np.zeros((hset.size, sites.size), dtype=complex)
    E[idx, np.arange(sites.size)] = 1.0
    cols = rho_apply(E)
    density = np.real(cols[idx, np.arange(sites.size)])
    hop = hset.off[idx]
    current = -2.0 * np.imag(hop * cols[idx + 1, np.arange(sites.size)])
    return {"x": geo.x[sites], "density": density, "current": current}
