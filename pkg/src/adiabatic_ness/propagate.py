"""Unitary time evolution for the switched Hamiltonian ``K(chi(eta s))``.

The coupled propagator ``W(s)`` solves ``i d/ds W = K(chi(eta s)) W`` with
``W(0) = 1``; we only need ``s <= 0``.  It is discretized with Cayley
(Crank-Nicolson) steps on a uniform grid ``s_k = -k dt`` using the coupling at
the step midpoint.  Each step is exactly unitary and the backward step is the
exact inverse of the forward step.

Decoupled and free evolutions (``H_dec`` commutes with ``V``) are diagonal in
the eigenbasis of ``H_dec`` (resp. ``H``) and need no time stepping.  Two
flavours are available: the exact exponential and the "cayley" flavour, which
reproduces the phases the Cayley scheme would accumulate.  Comparing a stepped
coupled evolution against a Cayley-flavoured free evolution removes the
time-discretization error of the free motion from wave-operator limits.
"""

import csv
from dataclasses import dataclass
import warnings

import numpy as np
from numba import njit

from ._kernels import cayley_sweep, tridiag_apply
from .errors import (DomainError, HorizonError, NumericalError,
                     ResourceGuardError, StepSizeError)
from .model import HamiltonianSet, SwitchingFunction, lattice_velocity
from .spectral import SpectralData, eigendecompose

DENSE_LIMIT = 600


# --------------------------------------------------------------------------
# Parameters and grids
# --------------------------------------------------------------------------

def max_horizon(hset: HamiltonianSet, velocity=None) -> float:
    """Largest ``|s|`` allowed by ``|s| v <= 1.5 (L - a)`` (default ``v = 2/h``)."""
    geo = hset.geometry
    v = lattice_velocity(geo.h) if velocity is None else velocity
    return 1.5 * (geo.L - geo.a) / v


@dataclass(frozen=True)
class EvolutionParams:
    """Adiabatic parameter, start time, step and horizon policy.

    ``horizon`` is ``"strict"`` (refuse runs beyond the ballistic horizon),
    ``"warn"`` (run but flag) or ``"off"``.  ``horizon_velocity`` overrides
    the lattice maximum ``2/h`` used by the rule.
    """

    eta: float
    s_min: float
    dt: float
    integrator: str = "cayley-midpoint"
    horizon: str = "strict"
    horizon_velocity: float | None = None
    cfl: float = 0.2

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta}")
        if self.s_min > 0:
            raise DomainError("s_min must be <= 0")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.integrator != "cayley-midpoint":
            raise DomainError(f"unknown integrator {self.integrator!r}")
        if self.horizon not in ("strict", "warn", "off"):
            raise DomainError(f"unknown horizon policy {self.horizon!r}")

    @property
    def n_steps(self) -> int:
        return int(round(-self.s_min / self.dt))

    @property
    def s_start(self) -> float:
        """``s_min`` snapped to the grid."""
        return -self.n_steps * self.dt

    def grid(self):
        return -self.dt * np.arange(self.n_steps + 1)

    def snap(self, s):
        return -self.dt * np.round(-np.asarray(s, dtype=float) / self.dt)


def default_params(hset: HamiltonianSet, chi: SwitchingFunction, eta: float,
                   dt=None, chi_floor=1e-6, horizon="strict", cfl=0.2,
                   horizon_velocity=None) -> EvolutionParams:
    """Params with ``chi(eta s_min) = chi_floor`` and ``dt = cfl / |K|``."""
    if dt is None:
        dt = cfl / hset.norm_estimate()
    t_floor = max(float(np.log(chi_floor)), chi.t_min) if chi.kind == "exponential" else chi.t_min
    s_min = t_floor / eta
    n = int(np.ceil(-s_min / dt))
    return EvolutionParams(eta=eta, s_min=-n * dt, dt=dt, horizon=horizon, cfl=cfl,
                           horizon_velocity=horizon_velocity)


def check_params(hset: HamiltonianSet, params: EvolutionParams) -> dict:
    """Validate step size and ballistic horizon; return diagnostics."""
    knorm = hset.norm_estimate()
    if params.dt * knorm > params.cfl * (1 + 1e-12):
        raise StepSizeError(
            f"dt*|K| = {params.dt * knorm:.3g} exceeds {params.cfl}; use dt <= {params.cfl / knorm:.4g}")
    smax = max_horizon(hset, params.horizon_velocity)
    ok = -params.s_start <= smax * (1 + 1e-12)
    if not ok and params.horizon == "strict":
        raise HorizonError(
            f"|s_min| = {-params.s_start:.4g} exceeds ballistic horizon {smax:.4g}",
            max_abs_s=smax)
    if not ok and params.horizon == "warn":
        warnings.warn(f"|s_min| = {-params.s_start:.4g} beyond ballistic horizon {smax:.4g}",
                      stacklevel=3)
    return {"dt_norm": params.dt * knorm, "horizon_limit": smax, "horizon_ok": bool(ok)}


# --------------------------------------------------------------------------
# Panels
# --------------------------------------------------------------------------

@dataclass
class VectorPanel:
    """Column vectors with per-column metadata."""

    vectors: np.ndarray
    meta: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v)):
            from .errors import InputError
            raise InputError("panel: non-finite entries")
        self.vectors = v.astype(complex)
        if not self.meta:
            self.meta = tuple({} for _ in range(v.shape[1]))

    @property
    def m(self):
        return self.vectors.shape[1]

    def normalized(self):
        nrm = np.linalg.norm(self.vectors, axis=0)
        nrm[nrm == 0] = 1.0
        return VectorPanel(self.vectors / nrm, self.meta)


def _as_block(panel):
    if isinstance(panel, VectorPanel):
        return panel.vectors
    v = np.asarray(panel, dtype=complex)
    return v[:, None] if v.ndim == 1 else v


@dataclass
class EvolvedPanel:
    times: np.ndarray
    states: np.ndarray       # (T, size, m)

    def at(self, s):
        i = int(np.argmin(np.abs(self.times - s)))
        return self.states[i]

    def dump_csv(self, path, initial=None):
        """Write ``(s, column_id, norm, overlap_with_initial)`` rows."""
        init = self.states[np.argmin(np.abs(self.times))] if initial is None else initial
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "column_id", "norm", "overlap_with_initial"])
            for t, st in zip(self.times, self.states):
                nrm = np.linalg.norm(st, axis=0)
                ov = np.abs(np.sum(init.conj() * st, axis=0))
                for j in range(st.shape[1]):
                    wr.writerow([f"{t:.10g}", j, f"{nrm[j]:.15e}", f"{ov[j]:.15e}"])


# --------------------------------------------------------------------------
# Coupled evolution
# --------------------------------------------------------------------------

def coupling_path(chi, eta, t_from, n_steps, dt, direction):
    """Midpoint couplings for ``n_steps`` steps from ``t_from``.

    Positive times use ``chi = 1`` (the bias stays on after ``s = 0``).
    """
    mids = t_from + direction * dt * (np.arange(n_steps) + 0.5)
    kap = np.ones(n_steps)
    neg = mids < 0
    kap[neg] = chi.value(eta * mids[neg])
    return kap


def step_states(hset, kappas, dt, direction, psi, record_at=None, decoupled=False):
    """Run the Cayley kernel on ``psi`` (copied); return final state and records."""
    diag, off, vdiag, seg = hset.tridiag(decoupled)
    psi = np.array(psi, dtype=complex, order="C", copy=True)
    if record_at is None:
        record_at = np.zeros(0, dtype=np.int64)
    record_at = np.asarray(record_at, dtype=np.int64)
    out = np.empty((record_at.size,) + psi.shape, dtype=complex)
    kappas = np.ascontiguousarray(kappas, dtype=float)
    if kappas.size:
        cayley_sweep(diag, off, vdiag, seg, kappas, direction * 0.5 * dt, psi, record_at, out)
    elif record_at.size:
        out[:] = psi
    return psi, out


def _check_step(hset, kappa, dt, direction, psi, decoupled=False, tol=1e-10):
    # One extra step with an independent residual evaluation.
    diag, off, vdiag, _ = hset.tridiag(decoupled)
    new, _ = step_states(hset, np.array([kappa]), dt, direction, psi, decoupled=decoupled)
    tau = direction * 0.5 * dt
    lhs = new + 1j * tau * tridiag_apply(diag, off, vdiag, kappa, 0j, new)
    rhs = psi - 1j * tau * tridiag_apply(diag, off, vdiag, kappa, 0j, psi)
    res = np.linalg.norm(lhs - rhs) / max(np.linalg.norm(psi), 1e-300)
    if res > tol:
        raise NumericalError(f"Cayley step residual {res:.3e} exceeds {tol:g}")
    return res


def propagate(hset, chi, eta, psi, t_from, t_to, dt, record_times=None,
              decoupled=False, check=True):
    """Evolve ``psi`` from ``t_from`` to ``t_to`` (grid multiples of ``dt``).

    Returns ``(final_state, EvolvedPanel of records)``.
    """
    psi = _as_block(psi)
    n_steps = int(round(abs(t_to - t_from) / dt))
    direction = 1.0 if t_to >= t_from else -1.0
    kap = coupling_path(chi, eta, t_from, n_steps, dt, direction)
    if record_times is None:
        record_times = np.zeros(0)
    record_times = np.asarray(record_times, dtype=float)
    idx = np.round(np.abs(record_times - t_from) / dt).astype(np.int64)
    if np.any(idx > n_steps):
        raise DomainError("record time outside the propagation interval")
    order = np.argsort(idx, kind="stable")
    final, out = step_states(hset, kap, dt, direction, psi, idx[order], decoupled)
    states = np.empty_like(out)
    states[order] = out
    times = t_from + direction * dt * idx
    if check and n_steps:
        _check_step(hset, kap[-1], dt, direction, final, decoupled)
    return final, EvolvedPanel(times, states)


def evolve_coupled(hset, chi, params: EvolutionParams, panel, sample_times=None,
                   adjoint=False):
    """Apply ``W(s)`` (or ``W(s)^*`` with ``adjoint``) for ``s`` in ``sample_times``.

    ``W(s) f`` is obtained by stepping backward from 0; ``W(s)^* f`` by
    stepping forward from ``s`` to 0, once per requested time.
    """
    check_params(hset, params)
    if sample_times is None:
        sample_times = np.array([0.0, params.s_start])
    times = params.snap(np.clip(sample_times, params.s_start, 0.0))
    f = _as_block(panel)
    if not adjoint:
        _, ev = propagate(hset, chi, params.eta, f, 0.0, params.s_start, params.dt, times)
        return ev
    states = np.empty((times.size,) + f.shape, dtype=complex)
    for i, s in enumerate(times):
        states[i], _ = propagate(hset, chi, params.eta, f, s, 0.0, params.dt)
    return EvolvedPanel(times, states)


# --------------------------------------------------------------------------
# Spectral (non-stepped) propagators
# --------------------------------------------------------------------------

@njit(cache=True)
def _cayley_phases(energies, vb, kappas, tau, record_at, out):
    # out[r, i] = sum_{k < record_at[r]} 2 arctan(tau (E_i + kappa_k vb_i))
    acc = np.zeros(energies.size)
    r = 0
    while r < record_at.size and record_at[r] == 0:
        out[r] = acc
        r += 1
    for k in range(kappas.size):
        for i in range(energies.size):
            acc[i] += 2.0 * np.arctan(tau * (energies[i] + kappas[k] * vb[i]))
        while r < record_at.size and record_at[r] == k + 1:
            out[r] = acc
            r += 1


class SpectralPropagator:
    """Time evolution of an operator with a block-constant bias, without stepping.

    ``eig`` is the eigendecomposition of the unbiased operator (``H_dec`` for
    the decoupled evolution, ``H`` for the free one) and ``vb`` the bias
    value carried by each eigenvector (zero for the free evolution).  The
    instantaneous generator is ``E + kappa(s) vb`` on each eigenvector.
    """

    def __init__(self, eig: SpectralData, vb, chi, eta, dt=None, scheme="exact"):
        if scheme not in ("exact", "cayley"):
            raise DomainError(f"unknown scheme {scheme!r}")
        if scheme == "cayley" and dt is None:
            raise DomainError("cayley scheme needs dt")
        self.eig = eig
        self.vb = np.asarray(vb, dtype=float)
        self.chi, self.eta, self.dt, self.scheme = chi, eta, dt, scheme

    def phases(self, times, t_ref=0.0):
        """Accumulated phases ``phi`` with ``U(t, t_ref) v_i = exp(-i phi) v_i``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        E = self.eig.energies
        if self.scheme == "exact":
            def integral(t):
                t = np.asarray(t, dtype=float)
                neg = np.minimum(t, 0.0)
                pos = np.maximum(t, 0.0)
                return self.chi.phase_integral(neg, self.eta) + pos
            dphi = integral(times) - integral(t_ref)
            return (times - t_ref)[:, None] * E[None, :] + dphi[:, None] * self.vb[None, :]
        out = np.empty((times.size, E.size))
        for sign in (-1.0, 1.0):
            sel = np.flatnonzero(np.sign(times - t_ref) == sign)
            if sel.size == 0:
                continue
            idx = np.round(np.abs(times[sel] - t_ref) / self.dt).astype(np.int64)
            order = np.argsort(idx, kind="stable")
            n_steps = int(idx.max())
            kap = coupling_path(self.chi, self.eta, t_ref, n_steps, self.dt, sign)
            rec = np.empty((idx.size, E.size))
            _cayley_phases(E, self.vb, kap, sign * 0.5 * self.dt, idx[order], rec)
            out[sel[order]] = rec
        out[np.sign(times - t_ref) == 0] = 0.0
        return out

    def apply(self, panel, times, t_ref=0.0, adjoint=False):
        """States ``U(t, t_ref) f`` (or ``U(t, t_ref)^* f``) for each ``t``."""
        f = _as_block(panel)
        V = self.eig.vectors
        coef = V.T @ f
        ph = self.phases(times, t_ref)
        sgn = 1.0 if adjoint else -1.0
        return np.stack([V @ (np.exp(sgn * 1j * p)[:, None] * coef) for p in ph])


def block_eigensystem(diag, off, check=True):
    """Eigendecomposition of a tridiagonal matrix block by block.

    Blocks are separated by zero off-diagonal entries; each eigenvector is
    supported in exactly one block even when blocks share eigenvalues.
    """
    n = diag.size
    cuts = np.concatenate(([0], np.flatnonzero(off == 0.0) + 1, [n]))
    E = np.empty(n)
    V = np.zeros((n, n))
    k = 0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sd = eigendecompose((diag[lo:hi], off[lo:hi - 1]), check=check)
        m = hi - lo
        E[k:k + m] = sd.energies
        V[lo:hi, k:k + m] = sd.vectors
        k += m
    order = np.argsort(E, kind="stable")
    return SpectralData(E[order], V[:, order], np.ones(n), float(np.max(np.abs(diag)) + 2 * np.max(np.abs(off), initial=0)))


def decoupled_eigensystem(hset: HamiltonianSet):
    """Eigendecomposition of ``H_dec`` with the bias value of each eigenvector."""
    key = "eig_dec"
    if key not in hset._cache:
        diag, off, vdiag, _ = hset.tridiag(decoupled=True)
        sd = block_eigensystem(diag, off)
        vb = np.sum(np.abs(sd.vectors) ** 2 * vdiag[:, None], axis=0)
        hset._cache[key] = (sd, vb)
    return hset._cache[key]


def coupled_eigensystem(hset: HamiltonianSet, kappa=0.0, decoupled=False):
    key = ("eig", float(kappa), bool(decoupled))
    if key not in hset._cache:
        diag, off, vdiag, _ = hset.tridiag(decoupled)
        hset._cache[key] = eigendecompose((diag + kappa * vdiag, off), check=hset.size <= 4000)
    return hset._cache[key]


def decoupled_propagator(hset, chi, eta, dt=None, scheme="exact"):
    sd, vb = decoupled_eigensystem(hset)
    return SpectralPropagator(sd, vb, chi, eta, dt, scheme)


def free_propagator(hset, chi, eta, dt=None, scheme="exact"):
    """Propagator of ``H`` alone (``e^{-isH}`` or its Cayley counterpart)."""
    sd = coupled_eigensystem(hset, 0.0)
    return SpectralPropagator(sd, np.zeros(sd.energies.size), chi, eta, dt, scheme)


def evolve_decoupled(hset, chi, params: EvolutionParams, panel, sample_times=None,
                     scheme="exact"):
    """``W_dec(s) f`` for ``s`` in ``sample_times`` without time stepping.

    ``scheme="exact"`` is ``exp(-i s H_dec)`` times the bias phases
    ``exp(-i v int_0^s chi(eta u) du)``; ``scheme="cayley"`` reproduces the
    phases of the Cayley scheme on the same grid.
    """
    if sample_times is None:
        sample_times = np.array([0.0, params.s_start])
    times = params.snap(sample_times)
    prop = decoupled_propagator(hset, chi, params.eta, params.dt, scheme)
    return EvolvedPanel(times, prop.apply(panel, times))


# --------------------------------------------------------------------------
# Density matrices
# --------------------------------------------------------------------------

@dataclass
class FactoredDensity:
    """``rho = sum_i w_i |c_i><c_i|`` with orthonormal columns ``c_i``."""

    columns: np.ndarray
    weights: np.ndarray

    def apply(self, F):
        F = _as_block(F)
        return self.columns @ (self.weights[:, None] * (self.columns.conj().T @ F))

    __call__ = apply

    def to_dense(self):
        n = self.columns.shape[0]
        if n > DENSE_LIMIT:
            raise ResourceGuardError(f"dense density requested for n={n} > {DENSE_LIMIT}")
        return (self.columns * self.weights) @ self.columns.conj().T


def evolve_density(hset, chi, rho0: FactoredDensity, params: EvolutionParams, t: float,
                   dense=False):
    """``rho(t) = W(t) rho0 W(t)^*`` in factored form (dense on request)."""
    if dense and hset.size > DENSE_LIMIT:
        raise ResourceGuardError(f"dense mode requested for n={hset.size} > {DENSE_LIMIT}")
    t = float(params.snap(t)) if t <= 0 else float(np.round(t / params.dt) * params.dt)
    if t == 0.0:
        cols = np.array(rho0.columns, dtype=complex)
    else:
        cols, _ = propagate(hset, chi, params.eta, rho0.columns, 0.0, t, params.dt)
    out = FactoredDensity(cols, np.asarray(rho0.weights))
    return out.to_dense() if dense else out
