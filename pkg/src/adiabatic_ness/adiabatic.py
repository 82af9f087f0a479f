"""Adiabatic evolution of isolated eigenprojectors.

``B_eta(s) = W(s)^* E_j(chi(eta s)) W(s)`` is compared with ``E_j(1)``.  For a
rank-one branch ``|B_eta(s) - E_j(1)|`` is the sine of the angle between
``phi_j(kappa_s)`` and ``W(s) phi_j(1)`` (unitary invariance), so a single
backward sweep of ``phi_j(1)`` yields the operator-norm error at every
recorded ``s``.

The corrector ``Y = -(1/2 pi) oint R X R dz`` with ``X = [E_j', E_j]`` solves
``i[K, Y] = -E_j'``; it is evaluated by trapezoid quadrature on a circle.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_banded

from .errors import ContourQuadratureError, DomainError, RegressionFailure
from .model import SwitchingFunction
from .propagate import coupling_path
from .spectral import BranchTable, SpectralData, track_branches


# --------------------------------------------------------------------------
# Synthetic operator families with exact eigen-oracles
# --------------------------------------------------------------------------

class SyntheticFamily:
    """``K(kappa) = U(kappa) D(kappa) U(kappa)^T`` with ``U = expm(kappa G)``.

    ``levels`` are callables ``kappa -> eps_j(kappa)`` for the tracked
    branches; ``continuum`` are fixed eigenvalues above every branch standing
    in for the continuous spectrum.  ``G`` is a fixed antisymmetric matrix.
    Eigenpairs are known exactly: ``eps_j(kappa)`` and ``U(kappa) e_j``.
    """

    def __init__(self, levels, continuum, coupling=0.5, pair_coupling=None, seed=0,
                 name="synthetic"):
        self.levels = tuple(levels)
        self.continuum = np.sort(np.asarray(continuum, dtype=float))
        self.size = len(self.levels) + self.continuum.size
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((self.size, self.size))
        G = A - A.T
        self.G = coupling * G / np.linalg.norm(G, 2)
        if pair_coupling is not None and len(self.levels) > 1:
            self.G[0, 1], self.G[1, 0] = pair_coupling, -pair_coupling
        self.local_mask = np.ones(self.size, dtype=bool)
        self.name = name

    def diagonal(self, kappa):
        return np.concatenate([[float(f(kappa)) for f in self.levels], self.continuum])

    def U(self, kappa):
        return expm(kappa * self.G)

    def matrix(self, kappa):
        U = self.U(kappa)
        K = (U * self.diagonal(kappa)) @ U.T
        return 0.5 * (K + K.T)

    def floor(self, kappa):
        return float(self.continuum[0]) if self.continuum.size else np.inf

    def exact(self, kappa):
        """Exact branch energies and vectors (columns), in branch order."""
        n = len(self.levels)
        return self.diagonal(kappa)[:n], self.U(kappa)[:, :n]

    def lowest(self, kappa, count):
        w, v = np.linalg.eigh(self.matrix(kappa))
        v = v * np.where(v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])] < 0, -1.0, 1.0)
        count = min(count, self.size)
        return SpectralData(w[:count], v[:, :count], np.ones(count), float(np.max(np.abs(w))))

    def derivative(self):
        raise NotImplementedError("synthetic families have no fixed bias operator")


def no_crossing_family(seed=0):
    """Two isolated levels with a uniform gap and a continuum above 0.5."""
    return SyntheticFamily([lambda k: -2.0 + 0.2 * k, lambda k: -0.8 - 0.2 * k],
                           np.linspace(0.5, 3.0, 22), seed=seed, name="no-crossing")


def crossing_family(seed=0):
    """Two levels crossing linearly (contact order 1) at ``kappa = 1/2``."""
    return SyntheticFamily([lambda k: k, lambda k: 1.0 - k],
                           np.linspace(2.0, 4.0, 22), coupling=0.2, pair_coupling=0.5,
                           seed=seed, name="crossing")


def constant_family(seed=0):
    """Fixed operator (no coupling path): ``B_eta(s) = E_j(1)`` for every ``s``."""
    return SyntheticFamily([lambda k: -1.0, lambda k: -0.5], np.linspace(0.5, 3.0, 22),
                           coupling=0.0, seed=seed, name="constant")


SYNTHETIC_FAMILIES = {"no-crossing": no_crossing_family, "crossing": crossing_family,
                      "constant": constant_family}


def family_table(family, n_kappa=41, N=None, **kw) -> BranchTable:
    """Branch table of a family on a uniform kappa grid."""
    if N is None:
        N = len(family.levels) if isinstance(family, SyntheticFamily) else None
    if N is None:
        raise DomainError("number of branches required")
    return track_branches(family, np.linspace(0.0, 1.0, n_kappa), N, **kw)


# --------------------------------------------------------------------------
# Dense / tridiagonal helpers shared by both kinds of family
# --------------------------------------------------------------------------

def _is_lattice(family):
    return hasattr(family, "tridiagonal")


def _apply(family, kappa, f):
    if _is_lattice(family):
        return family.matrix(kappa) @ f
    return family.matrix(kappa) @ f


def _shifted_solve(family, kappa, z, rhs):
    """``(K(kappa) - z)^{-1} rhs`` with partial pivoting."""
    if _is_lattice(family):
        d, e = family.tridiagonal(kappa)
        ab = np.zeros((3, d.size), dtype=complex)
        ab[0, 1:] = e
        ab[1] = d - z
        ab[2, :-1] = e
        return solve_banded((1, 1), ab, rhs)
    K = family.matrix(kappa).astype(complex)
    return np.linalg.solve(K - z * np.eye(K.shape[0]), rhs)


def _branch(family, table, kappa, j):
    """Energy and unit vector of branch ``j`` at ``kappa``."""
    if isinstance(family, SyntheticFamily):
        e, v = family.exact(kappa)
        return float(e[j]), v[:, j]
    return table.energy_at(kappa, j), table.projector_at(kappa, j)


def _branch_derivative(family, table, kappa, j, dk=1e-3):
    """``phi_j'`` (exact for synthetic families, Richardson differences otherwise)."""
    if isinstance(family, SyntheticFamily):
        return family.G @ family.U(kappa)[:, j], 0.0
    return table.derivative_vector(kappa, j, dk)


# --------------------------------------------------------------------------
# Propagation for synthetic families
# --------------------------------------------------------------------------

def dense_evolution(family, chi, eta, vectors, s_min, dt, record_every=1):
    """Backward midpoint-exponential evolution ``W(s) f`` for a dense family.

    Returns ``(times, states)`` with ``times`` descending from 0 and
    ``states[k] = W(times[k]) f``.
    """
    n = int(np.ceil(-s_min / dt))
    kap = coupling_path(chi, eta, 0.0, n, dt, -1.0)
    psi = np.array(vectors, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    times, states = [0.0], [psi.copy()]
    for k in range(n):
        w, v = np.linalg.eigh(family.matrix(kap[k]))
        # one step backward in time: exp(+i dt K)
        psi = v @ (np.exp(1j * dt * w)[:, None] * (v.conj().T @ psi))
        if (k + 1) % record_every == 0 or k == n - 1:
            times.append(-(k + 1) * dt)
            states.append(psi.copy())
    return np.array(times), np.array(states)


# --------------------------------------------------------------------------
# B_eta
# --------------------------------------------------------------------------

@dataclass
class BTrace:
    """``|B_eta(s) - E_j(1)|`` along the recorded times (descending from 0)."""

    eta: float
    j: int
    times: np.ndarray
    errors: np.ndarray
    panel_errors: np.ndarray | None = None

    def sup(self, lo=-np.inf, hi=0.0):
        sel = (self.times >= lo) & (self.times <= hi)
        return float(np.max(self.errors[sel])) if np.any(sel) else 0.0


def _sine(phi, psi):
    """``|P_phi - P_psi|`` for unit vectors, as the norm of the rejection."""
    return float(np.linalg.norm(psi - phi * np.vdot(phi, psi)))


def b_eta_errors(family, table, chi, eta, j, times, states):
    """Rank-one operator-norm errors from ``states[k] = W(times[k]) phi_j(1)``."""
    errs = np.empty(len(times))
    for k, (s, psi) in enumerate(zip(times, states)):
        kappa = float(chi.value(eta * s)) if s < 0 else 1.0
        _, phi = _branch(family, table, kappa, j)
        psi = np.ravel(psi)
        errs[k] = _sine(phi, psi)
    return errs


def b_eta(family, chi, eta, j, s_min=None, dt=0.02, table=None, probes=None,
          record_every=5):
    """Trace of ``B_eta(s)`` against ``E_j(1)`` for a synthetic family.

    With ``probes`` the panel errors ``max_i |(B_eta(s) - E_j(1)) f_i|`` are
    recorded as well (dense; ``W(s)`` is rebuilt from the evolved identity).
    """
    if s_min is None:
        s_min = chi.t_min / eta
    _, phi1 = _branch(family, table, 1.0, j)
    if probes is None:
        times, states = dense_evolution(family, chi, eta, phi1, s_min, dt, record_every)
        errs = b_eta_errors(family, table, chi, eta, j, times, states[:, :, 0])
        return BTrace(eta, j, times, errs)
    n = family.size
    times, Ws = dense_evolution(family, chi, eta, np.eye(n), s_min, dt, record_every)
    P1 = np.outer(phi1, phi1.conj())
    f = np.asarray(probes, dtype=complex)
    errs = b_eta_errors(family, table, chi, eta, j, times, Ws @ phi1)
    perr = np.empty(times.size)
    for k, (s, W) in enumerate(zip(times, Ws)):
        kappa = float(chi.value(eta * s)) if s < 0 else 1.0
        _, phi = _branch(family, table, kappa, j)
        B = W.conj().T @ np.outer(phi, phi.conj()) @ W
        perr[k] = float(np.max(np.linalg.norm((B - P1) @ f, axis=0)))
    return BTrace(eta, j, times, errs, perr)


def projector_defects(family, chi, eta, j, times, Ws, table=None):
    """``|B^2 - B|`` and ``|tr B - 1|`` along dense propagators ``Ws``."""
    idem, rank = [], []
    for s, W in zip(times, Ws):
        kappa = float(chi.value(eta * s)) if s < 0 else 1.0
        _, phi = _branch(family, table, kappa, j)
        B = W.conj().T @ np.outer(phi, phi.conj()) @ W
        idem.append(np.linalg.norm(B @ B - B, 2))
        rank.append(abs(np.trace(B) - 1.0))
    return float(max(idem)), float(max(rank))


# --------------------------------------------------------------------------
# Contour corrector Y
# --------------------------------------------------------------------------

@dataclass
class ContourSpec:
    center: float
    radius: float
    n_theta: int = 32
    gap: float = np.nan

    def nodes(self):
        th = 2 * np.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta
        return self.center + self.radius * np.exp(1j * th), th

    def doubled(self):
        return ContourSpec(self.center, self.radius, 2 * self.n_theta, self.gap)


def _spectrum_near(family, kappa, center, width):
    """Eigenvalues of ``K(kappa)`` within ``width`` of ``center``."""
    if _is_lattice(family):
        from scipy.linalg import eigvalsh_tridiagonal
        d, e = family.tridiagonal(kappa)
        return eigvalsh_tridiagonal(d, e, select="v", select_range=(center - width, center + width))
    w = np.linalg.eigvalsh(family.matrix(kappa))
    return w[np.abs(w - center) <= width]


def contour_for(family, kappa, j, table=None, gap_cap=0.5, n_theta=32) -> ContourSpec:
    """Circle around ``eps_j(kappa)`` with radius ``min(gap/2, gap_cap)``."""
    e, _ = _branch(family, table, kappa, j)
    width = 2.0 * max(gap_cap, 1.0)
    near = _spectrum_near(family, kappa, e, width)
    others = near[np.abs(near - e) > 1e-12 * max(1.0, abs(e))]
    gap = float(np.min(np.abs(others - e))) if others.size else width
    gap = min(gap, abs(family.floor(kappa) - e)) if np.isfinite(family.floor(kappa)) else gap
    spec = ContourSpec(e, min(gap / 2.0, gap_cap), n_theta, gap)
    validate_contour(family, kappa, spec)
    return spec


def validate_contour(family, kappa, spec: ContourSpec):
    if not spec.radius <= spec.gap / 2 * (1 + 1e-12):
        raise DomainError(f"contour radius {spec.radius:.3g} exceeds half gap {spec.gap / 2:.3g}")
    if not spec.radius >= 1e-3 * spec.gap:
        raise DomainError(f"contour radius {spec.radius:.3g} below 1e-3 gap")
    inside = _spectrum_near(family, kappa, spec.center, spec.radius)
    if inside.size != 1:
        raise DomainError(f"contour encloses {inside.size} eigenvalues, expected 1")


@dataclass
class YResult:
    action: np.ndarray
    residual: float
    contour: ContourSpec
    derivative_norm: float


def _x_apply(phi, dphi, f):
    """``X f`` with ``X = phi' phi^T - phi phi'^T`` (rank-one ``[E', E]``)."""
    return np.outer(dphi, phi.conj() @ f) - np.outer(phi, dphi.conj() @ f)


def y_apply(family, kappa, phi, dphi, f, spec: ContourSpec):
    """Trapezoid approximation of ``Y f`` on the contour."""
    z, th = spec.nodes()
    f = np.asarray(f, dtype=complex)
    out = np.zeros_like(f)
    for zk, tk in zip(z, th):
        g = _shifted_solve(family, kappa, zk, f)
        g = _shifted_solve(family, kappa, zk, _x_apply(phi, dphi, g))
        out += np.exp(1j * tk) * g
    return -(1j * spec.radius / spec.n_theta) * out


def y_operator(family, kappa, j, probes, table=None, spec=None, rel_tol=1e-3,
               max_doublings=4, dk=1e-3) -> YResult:
    """Corrector ``Y`` on probes, with the commutator residual
    ``|i[K, Y] f + E_j' f|`` relative to ``|E_j' f|``."""
    f = np.asarray(probes, dtype=complex)
    if f.ndim == 1:
        f = f[:, None]
    _, phi = _branch(family, table, kappa, j)
    dphi, _ = _branch_derivative(family, table, kappa, j, dk)
    dphi = dphi - phi * (phi.conj() @ dphi)
    if spec is None:
        spec = contour_for(family, kappa, j, table)
    dEf = np.outer(dphi, phi.conj() @ f) + np.outer(phi, dphi.conj() @ f)
    dnorm = float(np.max(np.linalg.norm(dEf, axis=0)))
    for _ in range(max_doublings + 1):
        Yf = y_apply(family, kappa, phi, dphi, f, spec)
        KYf = _apply(family, kappa, Yf)
        YKf = y_apply(family, kappa, phi, dphi, _apply(family, kappa, f), spec)
        res = float(np.max(np.linalg.norm(1j * (KYf - YKf) + dEf, axis=0)))
        if res <= rel_tol * max(dnorm, 1e-300):
            return YResult(Yf, res / max(dnorm, 1e-300), spec, dnorm)
        spec = spec.doubled()
    raise ContourQuadratureError(
        f"Y commutator residual {res / max(dnorm, 1e-300):.3g} > {rel_tol:g} "
        f"after {max_doublings} doublings (N_theta={spec.n_theta // 2})")


def y_dense_oracle(K, j_index, X):
    """Dense solution ``Y_{mn} = -i X_{mn} / (E_m - E_n)`` for pairs with
    exactly one index equal to the enclosed level (eigenbasis of ``K``)."""
    E, V = np.linalg.eigh(K)
    Xe = V.conj().T @ X @ V
    Y = np.zeros_like(Xe, dtype=complex)
    for n in range(E.size):
        if n == j_index:
            continue
        Y[j_index, n] = -1j * Xe[j_index, n] / (E[j_index] - E[n])
        Y[n, j_index] = -1j * Xe[n, j_index] / (E[j_index] - E[n])
    return V @ Y @ V.conj().T


# --------------------------------------------------------------------------
# F_eta
# --------------------------------------------------------------------------

def f_eta(family, chi, eta, j, s, W, probes, table=None, y=None):
    """``F_eta(s) f = W^*[E_j(kappa_s) + eta chi'(eta s) Y(kappa_s)] W f``
    for a dense propagator ``W = W(s)``.  Returns ``(F f, B f)``."""
    kappa = float(chi.value(eta * s))
    _, phi = _branch(family, table, kappa, j)
    f = np.asarray(probes, dtype=complex)
    g = W @ f
    Bg = np.outer(phi, phi.conj() @ g)
    if y is None:
        y = y_operator(family, kappa, j, g, table)
    corr = eta * float(chi.derivative(eta * s)) * y.action
    Wh = W.conj().T
    return Wh @ (Bg + corr), Wh @ Bg


# --------------------------------------------------------------------------
# Crossing plan and rate verification
# --------------------------------------------------------------------------

@dataclass
class CrossingPlan:
    """Splitting of ``[s_min, 0]`` around a crossing at ``t0 = chi^{-1}(kappa0)``."""

    kappa0: float
    t0: float
    M: int
    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1.0 / (2 * self.M):
            raise DomainError(f"delta={self.delta} outside (0, 1/(2M)) for M={self.M}")
        if not self.t0 < 0:
            raise DomainError("crossing time t0 must be negative")

    @classmethod
    def from_table(cls, table: BranchTable, chi: SwitchingFunction, M=None, delta=None):
        if not table.crossings:
            return None
        c = table.crossings[0]
        M = c.order if M is None else M
        delta = 1.0 / (4 * M) if delta is None else delta
        return cls(c.kappa0, chi_inverse(chi, c.kappa0), M, delta)

    def intervals(self, eta, s_min):
        """``[(s_min, a), (a, b), (b, 0)]`` with the crossing window
        ``|eta s - t0| <= eta^delta`` in the middle."""
        w = eta ** self.delta
        a = max(s_min, (self.t0 - w) / eta)
        b = min(0.0, (self.t0 + w) / eta)
        return [(s_min, a), (a, b), (b, 0.0)]

    def predicted_exponent(self):
        return min(self.delta, 1.0 - 2 * self.M * self.delta)


def chi_inverse(chi: SwitchingFunction, kappa):
    if not 0 < kappa < 1:
        raise DomainError("kappa must lie in (0, 1)")
    if chi.kind == "exponential":
        return float(np.log(kappa))
    from scipy.optimize import brentq
    return brentq(lambda t: float(chi.value(t)) - kappa, chi.t_min, 0.0, xtol=1e-13)


def fit_exponent(etas, values):
    """Least-squares slope of ``log value`` against ``log eta``."""
    etas, values = np.asarray(etas, float), np.asarray(values, float)
    if etas.size < 2 or np.any(values <= 0):
        return float("nan")
    return float(np.polyfit(np.log(etas), np.log(values), 1)[0])


@dataclass
class RateReport:
    etas: np.ndarray
    sup_errors: np.ndarray
    interval_errors: np.ndarray         # (len(etas), 3) or (len(etas), 1)
    exponent: float
    predicted: float
    monotone: bool
    label: str = ""
    meta: dict = field(default_factory=dict)

    def to_rows(self):
        rows = []
        for i, e in enumerate(self.etas):
            rows.append([self.label, f"{e:.6g}", f"{self.sup_errors[i]:.12e}"]
                        + [f"{x:.12e}" for x in self.interval_errors[i]]
                        + [f"{self.exponent:.6f}", f"{self.predicted:.6f}"])
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            k = self.interval_errors.shape[1]
            wr.writerow(["label", "eta", "sup_error"] + [f"interval_{i}" for i in range(k)]
                        + ["fitted_exponent", "predicted_exponent"])
            wr.writerows(self.to_rows())


def rate_report(traces, plan=None, s_min_of=None, label="", slack=0.1, strict=False,
                predicted=1.0) -> RateReport:
    """Aggregate :class:`BTrace` objects into a fitted rate."""
    traces = sorted(traces, key=lambda t: -t.eta)
    etas = np.array([t.eta for t in traces])
    sup = np.array([t.sup(lo=-np.inf) for t in traces])
    if plan is not None:
        parts = []
        for t in traces:
            smin = float(t.times.min())
            parts.append([t.sup(lo, hi) for lo, hi in plan.intervals(t.eta, smin)])
        inter = np.array(parts)
        predicted = plan.predicted_exponent()
    else:
        inter = sup[:, None]
    mono = bool(np.all(sup[1:] <= (1 + slack) * sup[:-1]))
    rep = RateReport(etas, sup, inter, fit_exponent(etas, sup), predicted, mono, label)
    if strict and not mono:
        raise RegressionFailure(f"{label}: sup error not monotone in eta: {sup}")
    return rep


def verify_discrete_rate(family, chi, etas, j=0, plan=None, dt=0.02, table=None,
                         strict=False, label=None) -> RateReport:
    """Sweep ``eta`` on a synthetic family and fit ``sup_s |B_eta(s) - E_j(1)|``."""
    if plan is None and table is not None:
        plan = CrossingPlan.from_table(table, chi)
    traces = [b_eta(family, chi, e, j, dt=dt, table=table) for e in etas]
    return rate_report(traces, plan, label=label or getattr(family, "name", ""), strict=strict)


# --------------------------------------------------------------------------
# Corollary checks
# --------------------------------------------------------------------------

def corollary_quantities(phi0, psi):
    """Projector error and cross term from ``phi0`` (bound states of ``H``,
    columns) and ``psi = W(s_min) phi_j(1)`` (columns).

    ``|omega E_j(0) omega^* - E_j(1)|`` is the sine of the angle between
    ``phi_j(0)`` and ``psi_j``;
    the cross term is ``|E_ac(H) W(s) E_pp(K(1))|``, bounded by the
    root-sum-square of the projector errors.
    """
    G = phi0.conj().T @ psi
    proj = np.array([_sine(phi0[:, j], psi[:, j]) for j in range(psi.shape[1])])
    resid = psi - phi0 @ G
    cross = float(np.linalg.norm(resid, 2)) if resid.size else 0.0
    return proj, cross, float(np.sqrt(np.sum(proj ** 2)))
